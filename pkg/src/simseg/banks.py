"""Per-class ring buffers of pooled source-domain features."""

import io
import struct

import numpy as np

from .container import MAGIC, ContainerError, _read_exact
from .labels import connected_regions
from .numerics import l1_to_rows
from .pooling import instance_repr

BANK_VERSION = 4
_KINDS = {"stuff": 0, "instance": 1}


class SampleBank:
    """Fixed-capacity ring buffer per class.

    Slot ``counter % capacity`` is overwritten on every insert, so after
    ``n`` inserts the valid slots are exactly the first ``min(n, capacity)``
    and hold the most recent ``min(n, capacity)`` vectors.
    """

    kind = None

    def __init__(self, class_ids, capacity, channels):
        if capacity < 1 or channels < 1:
            raise ValueError("capacity and channels must be >= 1")
        self.class_ids = tuple(int(k) for k in class_ids)
        self.capacity = int(capacity)
        self.channels = int(channels)
        self._row = {k: i for i, k in enumerate(self.class_ids)}
        self.slots = np.zeros((len(self.class_ids), self.capacity, self.channels))
        self.counters = np.zeros(len(self.class_ids), dtype=np.uint64)

    def _index(self, k):
        try:
            return self._row[int(k)]
        except KeyError:
            raise ValueError(f"class {k} has no bank in this {self.kind} bank") from None

    def counter(self, k):
        return int(self.counters[self._index(k)])

    def valid_count(self, k):
        return min(self.counter(k), self.capacity)

    def valid(self, k):
        """View of the valid slots of class ``k`` in slot order."""
        i = self._index(k)
        return self.slots[i, : self.valid_count(k)]

    def _write(self, k, vector):
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.channels,):
            raise ValueError(f"expected vector of length {self.channels}")
        i = self._index(k)
        j = int(self.counters[i]) % self.capacity
        # detached snapshot: callers may keep mutating their array
        self.slots[i, j] = vector
        self.counters[i] += 1
        return j

    def nearest(self, k, query):
        """(slot, L1 distance) of the closest valid slot, or None if empty."""
        query = np.asarray(query, dtype=np.float64)
        if query.shape != (self.channels,):
            raise ValueError(f"query length {query.shape} != {self.channels}")
        rows = self.valid(k)
        if len(rows) == 0:
            return None
        d = l1_to_rows(query, rows)
        j = int(np.argmin(d))
        return j, float(d[j])

    def copy(self):
        other = type(self).__new__(type(self))
        other.__dict__.update(self.__dict__)
        other.slots = self.slots.copy()
        other.counters = self.counters.copy()
        return other

    def __eq__(self, other):
        return (
            type(self) is type(other)
            and self.class_ids == other.class_ids
            and self.capacity == other.capacity
            and np.array_equal(self.counters, other.counters)
            and all(np.array_equal(self.valid(k), other.valid(k)) for k in self.class_ids)
        )

    # serialization

    def to_bytes(self):
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<BB", BANK_VERSION, _KINDS[self.kind]))
        z = getattr(self, "z", 1)
        buf.write(struct.pack("<IIII", self.capacity, self.channels, len(self.class_ids), z))
        for k in self.class_ids:
            rows = self.valid(k)
            buf.write(struct.pack("<IIQ", k, len(rows), self.counter(k)))
            buf.write(np.ascontiguousarray(rows, dtype="<f8").tobytes())
        return buf.getvalue()

    @staticmethod
    def from_bytes(raw):
        f = io.BytesIO(bytes(raw))
        if _read_exact(f, 4) != MAGIC:
            raise ContainerError("bad magic")
        version, kind = struct.unpack("<BB", _read_exact(f, 2))
        if version != BANK_VERSION:
            raise ContainerError(f"expected bank record, got version {version}")
        cls = {0: StuffBank, 1: InstanceBank}.get(kind)
        if cls is None:
            raise ContainerError(f"unknown bank kind {kind}")
        capacity, channels, n, z = struct.unpack("<IIII", _read_exact(f, 16))
        if z < 1 or capacity % z:
            raise ContainerError("bank capacity is not a multiple of z")
        entries = []
        for _ in range(n):
            k, valid, counter = struct.unpack("<IIQ", _read_exact(f, 16))
            if valid != min(counter, capacity):
                raise ContainerError("bank valid-count disagrees with counter")
            rows = np.frombuffer(_read_exact(f, valid * channels * 8), dtype="<f8")
            entries.append((k, counter, rows.reshape(valid, channels)))
        if f.read(1):
            raise ContainerError("trailing bytes after bank")
        bank = cls._empty([e[0] for e in entries], capacity, channels, z)
        for i, (_, counter, rows) in enumerate(entries):
            bank.slots[i, : len(rows)] = rows
            bank.counters[i] = counter
        return bank

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @staticmethod
    def load(path):
        with open(path, "rb") as f:
            return SampleBank.from_bytes(f.read())


class StuffBank(SampleBank):
    """``w`` slots per stuff class."""

    kind = "stuff"

    def __init__(self, stuff_classes, w, channels):
        super().__init__(stuff_classes, w, channels)
        self.w = int(w)

    @classmethod
    def _empty(cls, class_ids, capacity, channels, z):
        return cls(class_ids, capacity, channels)

    def insert(self, b, vector):
        return self._write(b, vector)


class InstanceBank(SampleBank):
    """``z * w`` slots per thing class; at most ``z`` regions per image."""

    kind = "instance"

    def __init__(self, thing_classes, w, channels, z=10):
        super().__init__(thing_classes, z * w, channels)
        self.w = int(w)
        self.z = int(z)

    @classmethod
    def _empty(cls, class_ids, capacity, channels, z):
        return cls(class_ids, capacity // z, channels, z=z)

    def harvest(self, correct_labels, features):
        """Store the ``z`` largest correctly-classified regions per class."""
        written = {}
        for k in self.class_ids:
            regions = connected_regions(correct_labels, k)
            for region in regions[: self.z]:
                self._write(k, instance_repr(region, features, k).vector)
            if regions:
                written[k] = min(self.z, len(regions))
        return written


def stuff_insert(bank, b, v):
    return bank.insert(b, v)


def instance_harvest(bank, correct_labels, features):
    return bank.harvest(correct_labels, features)


def nearest(bank, k, query):
    return bank.nearest(k, query)
