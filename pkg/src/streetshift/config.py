"""Run configuration: key-value text files merged with command-line flags."""
from __future__ import annotations

from dataclasses import dataclass, field, fields

from .unit.model import DEFAULT_LAMBDAS, SIZES


class ConfigError(ValueError):
    pass


def parse_kv(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; later keys win."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def format_kv(d: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in d.items())


@dataclass
class RunConfig:
    out: str | None = None
    seed: int = 0
    image_size: int = 32
    steps: int = 10000
    lambda0: float = DEFAULT_LAMBDAS[0]
    lambda1: float = DEFAULT_LAMBDAS[1]
    lambda2: float = DEFAULT_LAMBDAS[2]
    lambda3: float = DEFAULT_LAMBDAS[3]
    lambda4: float = DEFAULT_LAMBDAS[4]
    fuzz: float = 0.05
    fraction: float = 0.10
    radius_m: float = 50.0
    per_domain: int = 200
    format: str = "markdown"
    triptych: bool = False
    resume: bool = False
    base_width: int = 16
    dis_width: int = 4
    latent_channels: int = 32
    lr: float = 1e-4
    batch_size: int = 1
    checkpoint_every: int = 1000
    min_byte_size: int = 0
    gain: float = 4.0
    direction: str = "A2B"
    label: str = ""
    domain_a: str | None = None
    domain_b: str | None = None
    domain_a_config: str | None = None
    domain_b_config: str | None = None
    records: str | None = None
    index: str | None = None
    checkpoint: str | None = None
    input: str | None = None
    original: str | None = None
    translated: str | None = None
    extra: dict = field(default_factory=dict, repr=False)

    @property
    def lambdas(self):
        return (self.lambda0, self.lambda1, self.lambda2, self.lambda3, self.lambda4)

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls) if f.name != "extra"]

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls) if f.name != "extra"}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        kwargs = {}
        for k, v in values.items():
            if v is None:
                continue
            default = known[k].default
            try:
                if isinstance(default, bool):
                    kwargs[k] = v if isinstance(v, bool) else str(v).lower() in ("1", "true", "yes", "on")
                elif isinstance(default, int):
                    kwargs[k] = int(v)
                elif isinstance(default, float):
                    kwargs[k] = float(v)
                else:
                    kwargs[k] = str(v)
            except ValueError:
                raise ConfigError(f"{k}: cannot parse {v!r}") from None
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def validate(self):
        checks = [
            (self.image_size in SIZES, f"image_size must be one of {SIZES}"),
            (self.steps >= 1, "steps must be >= 1"),
            (all(v >= 0 for v in self.lambdas), "lambdas must be >= 0"),
            (0 <= self.fuzz <= 1, "fuzz must be in [0, 1]"),
            (0 < self.fraction <= 0.5, "fraction must be in (0, 0.5]"),
            (self.radius_m >= 0, "radius_m must be >= 0"),
            (self.per_domain >= 1, "per_domain must be >= 1"),
            (self.format in ("csv", "markdown"), "format must be csv or markdown"),
            (self.base_width >= 1 and self.latent_channels >= 1, "widths must be >= 1"),
            (self.lr > 0, "lr must be > 0"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.checkpoint_every >= 1, "checkpoint_every must be >= 1"),
            (self.min_byte_size >= 0, "min_byte_size must be >= 0"),
            (self.gain > 0, "gain must be > 0"),
            (self.direction.upper() in ("A2B", "B2A"), "direction must be A2B or B2A"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
