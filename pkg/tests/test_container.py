import io

import numpy as np
import pytest

from simseg import container


def test_tensor_round_trip(tmp_path, rng):
    x = rng.normal(size=(3, 5, 7))
    container.save_tensor(tmp_path / "x.simt", x)
    y = container.load_tensor(tmp_path / "x.simt")
    assert y.dtype == np.float64 and np.array_equal(x, y)


def test_header_layout():
    buf = io.BytesIO()
    container.write_record(buf, np.zeros((2, 3)))
    raw = buf.getvalue()
    assert raw[:4] == b"SIMT"
    assert raw[4] == 1 and raw[5] == 2
    assert raw[6:14] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert len(raw) == 14 + 6 * 8


def test_label_variant(tmp_path):
    lab = np.arange(12, dtype=np.uint8).reshape(3, 4)
    container.save_tensor(tmp_path / "l.simt", lab)
    raw = (tmp_path / "l.simt").read_bytes()
    assert raw[4] == 2 and len(raw) == 6 + 8 + 12
    assert np.array_equal(container.load_tensor(tmp_path / "l.simt"), lab)


def test_corrupt_files_raise(tmp_path):
    p = tmp_path / "x.simt"
    container.save_tensor(p, np.ones((4, 4)))
    raw = p.read_bytes()
    p.write_bytes(raw[:-3])
    with pytest.raises(container.ContainerError):
        container.load_tensor(p)
    p.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(container.ContainerError):
        container.load_tensor(p)


def test_archive_round_trip(tmp_path):
    entries = {"a": np.arange(3.0), "b/c": np.zeros((2, 2), dtype=np.uint8)}
    container.save_archive(tmp_path / "a.simt", entries)
    back = container.load_archive(tmp_path / "a.simt")
    assert list(back) == ["a", "b/c"]
    assert all(np.array_equal(entries[k], back[k]) for k in entries)
