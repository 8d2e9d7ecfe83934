"""Training configuration and its flat ``key = value`` file format."""

import dataclasses
import hashlib
from dataclasses import dataclass

from .losses import LossWeights


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    lambda_seg: float = 1.0
    lambda_adv: float = 0.001
    lambda_ci: float = 0.01
    lambda_d: float = 1.0
    w: int = 50
    z: int = 10
    instance_cap: int = 10
    iterations: int = 1500
    seed: int = 0
    aa: bool = True
    sim: bool = True
    ssl: bool = False
    # 2.5e-4 suits a pretrained backbone; the toy extractor trains from
    # scratch and needs a larger step
    lr_g: float = 2.5e-2
    lr_d: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 5e-4
    power: float = 0.9
    channels: int = 16
    num_classes: int = 6
    stuff_classes: str = "0,1,2"
    thing_classes: str = "3,4,5"
    eval_points: int = 10
    data_dir: str = "data"
    out_dir: str = "runs"

    def __post_init__(self):
        self.validate()

    @property
    def weights(self):
        return LossWeights(self.lambda_seg, self.lambda_adv, self.lambda_ci, self.lambda_d)

    @property
    def stuff(self):
        return _ids(self.stuff_classes)

    @property
    def things(self):
        return _ids(self.thing_classes)

    def validate(self):
        for name in ("w", "z", "instance_cap", "iterations", "channels", "eval_points"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        for name in ("lambda_seg", "lambda_adv", "lambda_ci", "lambda_d", "lr_g", "lr_d"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.sim and not self.aa:
            raise ConfigError("sim requires aa")
        if self.ssl and not (self.sim and self.aa):
            raise ConfigError("ssl requires sim and aa")
        ids = self.stuff + self.things
        if len(set(ids)) != len(ids) or any(not 0 <= k < self.num_classes for k in ids):
            raise ConfigError("stuff/thing class ids must be distinct and < num_classes")

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def dumps(self):
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def fingerprint(self):
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]


def _ids(text):
    return tuple(int(s) for s in text.split(",") if s.strip())


def _parse_value(name, raw, kind):
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_config(text, base=None):
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys raise."""
    types = {f.name: type(f.default) for f in dataclasses.fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, raw, types[key])
    base = base or TrainConfig()
    return base.replace(**values)


def load_config(path, **overrides):
    with open(path) as f:
        cfg = parse_config(f.read())
    return cfg.replace(**overrides) if overrides else cfg
