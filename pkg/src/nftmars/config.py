import dataclasses
from dataclasses import dataclass
from pathlib import Path

MODALITIES = ("image", "text", "price", "transaction")

# Hyperparameter search ranges.
SEARCH_SPACE = {
    "dim": [128, 512],
    "alpha": [0.1, 0.2],
    "batch_size": [1024, 4096],
    "hops": [1, 2, 3],
    "reg": [0.1, 0.001],
}

# Best published settings per collection.
BEST_CONFIGS = {
    "bayc": dict(seed=2023, dim=128, alpha=0.2, batch_size=1024, hops=2, reg=0.1),
    "coolcats": dict(seed=2024, dim=512, alpha=0.2, batch_size=1024, hops=1, reg=0.1),
    "doodles": dict(seed=2022, dim=512, alpha=0.1, batch_size=1024, hops=3, reg=0.001),
    "meebits": dict(seed=2022, dim=512, alpha=0.1, batch_size=1024, hops=1, reg=0.001),
}


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 50
    batch_size: int = 1024
    dim: int = 128
    alpha: float = 0.2
    hops: int = 2
    reg: float = 0.1
    seed: int = 2023
    d_k: int = 64
    num_negatives: int = 5
    clip_norm: float = 5.0  # 0 disables
    eval_k: int = 50

    def __post_init__(self):
        for name in ("learning_rate", "epochs", "batch_size", "dim", "hops", "d_k", "num_negatives", "eval_k"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.reg < 0 or self.clip_norm < 0:
            raise ValueError("reg and clip_norm must be non-negative")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: _coerce(known[k], v) for k, v in d.items()})


def _coerce(field, value):
    if isinstance(value, str):
        kind = type(field.default)
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
    return value


def parse_config_text(text):
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def load_config(path, **overrides):
    values = parse_config_text(Path(path).read_text()) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(values)


def dump_config(cfg):
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_dict().items())
