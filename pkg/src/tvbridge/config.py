"""Flat ``key = value`` run configuration.

Lines starting with ``#`` are comments. Unknown keys and constraint
violations are rejected when the file is parsed, not when a value is used.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .training import BundleConfig, WarmupConfig


@dataclass(frozen=True)
class RunConfig:
    seed: int = 42
    N: int = 16
    D: int = 16
    M: int = 4
    K: int = 16
    f: int = 4
    l: int = 4
    depth: int = 2
    E: int = 16
    learning_rate: float = 1e-2
    momentum: float = 0.9
    steps: int = 2000
    batch_size: int = 16
    context_length: int = 64
    horizon: int = 128
    w_obs: int = 16
    w_out: int = 48
    mode: str = "strict"

    def __post_init__(self):
        self.validate()

    @classmethod
    def full_scale(cls, **overrides) -> "RunConfig":
        """Cluster-scale geometry: 256x256 images, f=16, 4096 codes, 256 -> 768 px outpainting."""
        values = dict(N=256, D=256, M=4, K=4096, f=16, l=16, context_length=4096,
                      horizon=8192, w_obs=256, w_out=768)
        values.update(overrides)
        return cls(**values)

    def validate(self):
        ints = {f.name for f in dataclasses.fields(self) if f.type in (int, "int")}
        for name in ints:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        side = int(round(self.N ** 0.5))
        if side * side != self.N:
            raise ConfigError(f"N={self.N} must be a perfect square")
        if self.D % self.M:
            raise ConfigError(f"D={self.D} must be divisible by M={self.M}")
        if self.K < 2:
            raise ConfigError("K must be at least 2")
        if self.mode not in ("strict", "lenient"):
            raise ConfigError(f"mode must be strict or lenient, got {self.mode!r}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.context_length != self.N * self.l:
            raise ConfigError(f"context_length must equal N*l = {self.N * self.l}")
        if self.w_obs != self.f * side:
            raise ConfigError(f"w_obs must equal the bundle image width {self.f * side}")
        if self.w_out <= self.w_obs or (self.w_out - self.w_obs) % self.w_obs:
            raise ConfigError("w_out must exceed w_obs by a whole number of image widths")
        max_h = self.context_length * (self.w_out - self.w_obs) // self.w_obs
        if self.horizon > max_h:
            raise ConfigError(f"horizon {self.horizon} exceeds what {self.w_out} columns hold ({max_h})")

    def bundle_config(self) -> BundleConfig:
        return BundleConfig(n=self.N, d=self.D, heads=self.M, codes=self.K, f=self.f, l=self.l,
                            depth=self.depth, mode=self.mode)

    def warmup_config(self) -> WarmupConfig:
        return WarmupConfig(learning_rate=self.learning_rate, steps=self.steps,
                            batch_size=self.batch_size, seed=self.seed,
                            momentum=self.momentum)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def dumps(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in dataclasses.fields(self))


def parse_config(text: str) -> RunConfig:
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        kind = fields[key].type
        try:
            if kind in (int, "int"):
                values[key] = int(value)
            elif kind in (float, "float"):
                values[key] = float(value)
            else:
                values[key] = value
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value {value!r} for {key}") from None
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())
