"""Segmentation settings and the ``key=value`` config file format."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .appearance import MAX_SAMPLES
from .attention import DEFAULT_Q_VAR, DEFAULT_R_VAR, DEFAULT_SAMPLES
from .prior import CONVENTIONS, UpdateParams

# file/flag key -> attribute, where they differ
_ALIASES = {"lambda": "lam"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SegConfig:
    lam: float = 10.0
    sigma_c: float = 0.1
    kappa: float = 0.05
    neighborhood: int = 8
    M: int = 3
    sigma1: float = 0.03
    sigma2: float = 0.035
    smoothing_radius: int = 8
    edge_band: int = 8
    efdm_samples: int = DEFAULT_SAMPLES
    em_samples: int = 4096
    seed: int = 0
    q_var: float = DEFAULT_Q_VAR
    r_var: float = DEFAULT_R_VAR
    components: int = 3
    prior_scale_max: float = 0.95
    kalman_convention: str = "paper"
    focus_spread: float = 0.06

    def __post_init__(self):
        for key, msg in _violations(self):
            raise ConfigError(f"{key}: {msg}")

    def update_params(self) -> UpdateParams:
        return UpdateParams(self.sigma1, self.sigma2, self.smoothing_radius,
                            self.edge_band, self.prior_scale_max, self.kalman_convention,
                            self.focus_spread)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    def with_overrides(self, **kw) -> "SegConfig":
        return replace(self, **{_ALIASES.get(k, k): v for k, v in kw.items() if v is not None})


def _violations(c: SegConfig):
    checks = [
        ("lambda", c.lam >= 0, "must be >= 0"),
        ("sigma_c", c.sigma_c > 0, "must be > 0"),
        ("kappa", c.kappa >= 0, "must be >= 0"),
        ("neighborhood", c.neighborhood in (4, 8), "must be one of {4, 8}"),
        ("M", c.M >= 1, "must be >= 1"),
        ("sigma1", c.sigma1 > 0, "must be > 0"),
        ("sigma2", c.sigma2 > 0, "must be > 0"),
        ("smoothing_radius", c.smoothing_radius >= 0, "must be >= 0"),
        ("edge_band", c.edge_band >= 0, "must be >= 0"),
        ("efdm_samples", c.efdm_samples >= 1, "must be >= 1"),
        ("em_samples", 1 <= c.em_samples <= MAX_SAMPLES, f"must lie in [1, {MAX_SAMPLES}]"),
        ("q_var", c.q_var > 0, "must be > 0"),
        ("r_var", c.r_var > 0, "must be > 0"),
        ("components", c.components >= 1, "must be >= 1"),
        ("prior_scale_max", 0 < c.prior_scale_max < 1, "must lie in (0, 1)"),
        ("focus_spread", c.focus_spread > 0, "must be > 0"),
        ("kalman_convention", c.kalman_convention in CONVENTIONS,
         f"must be one of {set(CONVENTIONS)}"),
    ]
    return [(k, m) for k, ok, m in checks if not ok]


_TYPES = {f.name: f.type for f in fields(SegConfig)}


def _convert(key: str, text: str):
    kind = _TYPES[key]
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    return text


def parse_config(text: str, source: str = "<config>") -> SegConfig:
    values = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key=value, got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        attr = _ALIASES.get(key, key)
        if attr not in _TYPES or key == "lam":
            raise ConfigError(f"{source}:{n}: unknown key {key!r}")
        try:
            values[attr] = _convert(attr, val)
        except ValueError:
            raise ConfigError(f"{source}:{n}: bad value for {key}: {val!r}") from None
    return SegConfig(**values)


def load_config(path) -> SegConfig:
    p = Path(path)
    return parse_config(p.read_text(encoding="utf-8"), str(p))
