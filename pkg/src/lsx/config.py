"""Run configuration: a flat key=value text format plus profile defaults.

Two profiles exist.  `full` preserves the reference hyperparameters
(2,048-point clouds, 64-dim sub-codes, 400/600/80 epochs, translator
learning rate 0.002 halved after every 100 epochs down to 5e-4).  `desk`
shrinks every width and count 4x (points 16x) and scales the schedules so
the whole pipeline trains on a laptop; the halving structure is kept at
one third and two thirds of the (shorter) translator run.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from . import networks as nets


class ConfigError(ValueError):
    pass


_FULL_TR_LR = ((1, 2e-3), (101, 1e-3), (201, 5e-4))
_DESK_TR_LR = ((1, 2e-3), (34, 1e-3), (67, 5e-4))


@dataclass(frozen=True)
class TrainConfig:
    profile: str = "desk"
    seed: int = 0
    precision: str = "f32"
    dim: int = 2
    lambda1: float = 0.1
    alpha: float = 20.0
    lambda2: float = 10.0
    beta: float = 20.0
    ae_epochs: int = 200
    ae_batch: int = 32
    ae_lr: float = 5e-4
    tr_epochs: int = 200
    tr_batch: int = 128
    d_iters: int = 2
    tr_lr: tuple = _DESK_TR_LR
    up_epochs: int = 40
    up_batch: int = 32
    up_lr: float = 5e-4
    up_domains: str = "both"  # both | x | y
    emd_eps_min: float = 5e-4  # training-time auction slack
    dense_factor: int = 8

    def dims(self) -> nets.NetDims:
        if self.profile == "desk":
            return nets.desk_dims(self.dim)
        return nets.full_dims(self.dim)

    def dtype(self):
        import numpy as np

        return np.float32 if self.precision == "f32" else np.float64

    def validate(self) -> "TrainConfig":
        if self.profile not in ("desk", "full"):
            raise ConfigError(f"unknown profile {self.profile!r}")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"unknown precision {self.precision!r}")
        if self.dim not in (2, 3):
            raise ConfigError(f"dim must be 2 or 3, got {self.dim}")
        for name in ("lambda1", "alpha", "lambda2", "beta"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for name in ("ae_batch", "tr_batch", "up_batch", "ae_epochs", "tr_epochs", "up_epochs", "d_iters", "dense_factor"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.up_domains not in ("both", "x", "y"):
            raise ConfigError(f"up_domains must be both|x|y, got {self.up_domains!r}")
        sched = tuple(self.tr_lr)
        if not sched or sched[0][0] != 1:
            raise ConfigError("tr_lr schedule must start at epoch 1")
        starts = [int(e) for e, _ in sched]
        rates = [float(r) for _, r in sched]
        if starts != sorted(set(starts)):
            raise ConfigError("tr_lr schedule epochs must strictly increase")
        if any(r2 > r1 for r1, r2 in zip(rates, rates[1:])) or any(r <= 0 for r in rates):
            raise ConfigError("tr_lr rates must be positive and non-increasing")
        if self.ae_lr <= 0 or self.up_lr <= 0:
            raise ConfigError("learning rates must be positive")
        return self


def for_profile(profile: str, **overrides) -> TrainConfig:
    if profile == "full":
        base = TrainConfig(
            profile="full",
            dim=3,
            ae_epochs=400,
            tr_epochs=600,
            tr_lr=_FULL_TR_LR,
            up_epochs=80,
            emd_eps_min=5e-4,
        )
    elif profile == "desk":
        base = TrainConfig()
    else:
        raise ConfigError(f"unknown profile {profile!r}")
    return replace(base, **overrides).validate()


def lr_at(schedule, epoch: int) -> float:
    """Piecewise-constant lookup; `epoch` is 1-based."""
    rate = schedule[0][1]
    for start, r in schedule:
        if epoch >= start:
            rate = r
    return float(rate)


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ",".join(f"{int(e)}:{r!r}" for e, r in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(name: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw
        if kind is tuple:
            out = []
            for part in raw.split(","):
                e, r = part.split(":")
                out.append((int(e), float(r)))
            return tuple(out)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    raise ConfigError(f"unhandled field type for {name}")


_FIELD_TYPES = {f.name: (tuple if f.name == "tr_lr" else f.type) for f in fields(TrainConfig)}
_KINDS = {"int": int, "float": float, "str": str, "tuple": tuple}


def _kind(name: str):
    t = _FIELD_TYPES[name]
    if isinstance(t, str):
        return _KINDS.get(t, str)
    return t


def save_config(cfg: TrainConfig, path) -> None:
    lines = [f"{f.name} = {_format_value(getattr(cfg, f.name))}" for f in fields(TrainConfig)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_config(path) -> TrainConfig:
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, raw = line.split("=", 1)
            key = key.strip()
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _parse_value(key, raw, _kind(key))
    profile = values.pop("profile", "desk")
    return for_profile(profile, **values)


def apply_overrides(cfg: TrainConfig, overrides: dict[str, str]) -> TrainConfig:
    """Flag overrides (strings) win over file values.  Switching profile
    resets to that profile's defaults before the remaining keys apply."""
    profile = overrides.get("profile", cfg.profile)
    if profile != cfg.profile:
        cfg = for_profile(profile)
    parsed = {}
    for key, raw in overrides.items():
        if key == "profile":
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        parsed[key] = _parse_value(key, raw, _kind(key))
    return replace(cfg, **parsed).validate()
