"""Architecture hyperparameters and their flat ``key = value`` text form."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path


@dataclass(frozen=True)
class ModelConfig:
    """Widths, depths and exit placement of the separator.

    ``K`` is the kernel of the wide encoder/decoder convolutions,
    ``conv_kernel`` the depthwise kernel of the long-convolution layer and
    ``gcfn_kernel`` the depthwise kernel inside the feed-forward layer.
    """

    D: int = 16
    P: int = 4
    D_enc: int = 32
    K: int = 16
    N_enc: int = 2
    N_dec: int = 4
    exit_every: int = 2
    S: int = 2
    conv_kernel: int = 65
    ffn_expand: int = 4
    gcfn_kernel: int = 3

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, int) or value <= 0:
                if not (f.name == "N_enc" and value == 0):
                    raise ValueError(f"{f.name} must be a positive integer, got {value!r}")
        if self.N_dec % self.exit_every:
            raise ValueError(f"N_dec={self.N_dec} is not divisible by exit_every={self.exit_every}")

    @property
    def n_exits(self) -> int:
        return self.N_dec // self.exit_every

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise ValueError(f"unknown model keys: {sorted(unknown)}")
        return cls(**{k: int(v) for k, v in mapping.items()})

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        return cls.from_mapping(parse_key_values(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls.from_text(Path(path).read_text())


def parse_key_values(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        out[key] = value
    return out


def press4_small() -> ModelConfig:
    return ModelConfig(D=64, P=4, D_enc=256, N_enc=8, N_dec=12, exit_every=3, S=2)


def press12_medium() -> ModelConfig:
    return ModelConfig(D=128, P=4, D_enc=256, N_enc=4, N_dec=24, exit_every=2, S=2)


def desk() -> ModelConfig:
    return ModelConfig(D=16, P=4, D_enc=32, N_enc=2, N_dec=4, exit_every=2, S=2)
