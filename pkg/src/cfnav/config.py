"""Run configuration: built-in defaults, then a ``key = value`` file, then command-line flags."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from .geometry import DT
from .objectives import ObjectiveWeights, PS_VARIANTS


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    dt: float = DT
    n_s: int = 8
    n_p: int = 5
    w_c: float = 10.0
    w_r: float = 5.0
    w_cp: float = 10.0
    w_ps: float = 100.0
    w_i: float = 1.5
    r_h: float = 0.45
    r_r: float = 0.25
    batch: int = 80
    lr: float = 1e-3
    epochs: int = 20
    pred_epochs: int = 3
    corpus: str = "corpus.csv"
    checkpoints: str = "checkpoints"
    reports: str = "reports"
    ps_variant: str = "literal_min"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.ps_variant not in PS_VARIANTS:
            raise ConfigError(f"ps_variant must be one of {PS_VARIANTS}, got {self.ps_variant!r}")
        for k in ("dt", "lr"):
            if getattr(self, k) <= 0:
                raise ConfigError(f"{k} must be positive")
        for k in ("n_s", "n_p", "batch", "epochs", "pred_epochs"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be at least 1")
        for k in ("w_c", "w_r", "w_cp", "w_ps", "w_i", "r_h", "r_r"):
            if getattr(self, k) < 0:
                raise ConfigError(f"{k} must be non-negative")

    @property
    def weights(self) -> ObjectiveWeights:
        return ObjectiveWeights(self.w_c, self.w_r, self.w_cp, self.w_ps, self.w_i, self.r_h, self.r_r)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


def _convert(name: str, raw: str, typ):
    try:
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    types = {f.name: f.type for f in fields(RunConfig)}
    out = {}
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{no}: expected 'key = value'")
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{source}:{no}: unknown key {key!r}")
        out[key] = _convert(key, val, types[key])
    return out


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults < file at ``path`` < non-None ``overrides``."""
    values = {}
    if path is not None:
        with open(path) as fh:
            values.update(parse_config_text(fh.read(), str(path)))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(**values)
