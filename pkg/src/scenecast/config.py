"""Model and run configuration.

Defaults follow the reference training recipe: loss weights
lambda1=100 / lambda2=1e-3, latent dimension 8, appearance dimension 32,
Adam at learning rate 1e-4. Everything else (widths, patch sizes, canvas)
is scaled for small experiments and can be overridden via a config file or
CLI flags.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

FUSION_LEVELS = ("late", "mid", "early", "pixel")
LATENT_SCHEMES = ("ours", "no_z", "fp", "lp")
BASELINES = ("ours", "no_factor", "no_edge")
GRAPH_TYPES = ("full", "self")


@dataclasses.dataclass
class ModelConfig:
    # loss weights / optimization
    lambda1: float = 100.0
    lambda2: float = 1e-3
    learning_rate: float = 1e-4
    batch_size: int = 4
    steps: int = 500
    seed: int = 0
    threads: int = 1            # 0 = leave torch's default thread pool alone

    # representation sizes
    latent_dim: int = 8
    appearance_dim: int = 32
    crop_extent: int = 20       # pixels, square crop side around each entity
    canvas: int = 64
    horizon: int = 16

    # architecture knobs
    hidden_dim: int = 64        # per-node width inside the interaction blocks
    n_blocks_mp: int = 4        # stacked interaction blocks
    feature_channels: int = 32  # composed feature-map channels (feature fusion)
    patch_size: int = 16        # entity patch side before warping
    refine_width: int = 16      # channels inside the refinement units

    # variants
    fusion: str = "late"
    latent_scheme: str = "ours"
    graph: str = "full"
    baseline: str = "ours"

    # training plumbing
    start_jitter: int = 0       # max random start-frame offset (data augmentation)
    checkpoint_every: int = 200

    def validate(self) -> None:
        if self.fusion not in FUSION_LEVELS:
            raise ValueError(f"unknown fusion level {self.fusion!r}, expected one of {FUSION_LEVELS}")
        if self.latent_scheme not in LATENT_SCHEMES:
            raise ValueError(f"unknown latent scheme {self.latent_scheme!r}, expected one of {LATENT_SCHEMES}")
        if self.baseline not in BASELINES:
            raise ValueError(f"unknown baseline {self.baseline!r}, expected one of {BASELINES}")
        if self.graph not in GRAPH_TYPES:
            raise ValueError(f"unknown graph type {self.graph!r}, expected one of {GRAPH_TYPES}")
        if self.latent_dim < 1 or self.appearance_dim < 1:
            raise ValueError("latent_dim and appearance_dim must be positive")
        if self.patch_size < 4 or self.patch_size & (self.patch_size - 1):
            raise ValueError("patch_size must be a power of two >= 4")
        if self.canvas < 32:
            raise ValueError("canvas must be at least 32")

    @property
    def fusion_resolution(self) -> int:
        """Spatial side of the map where entity and background features fuse."""
        if self.fusion in ("late", "pixel"):
            return self.canvas
        if self.fusion == "mid":
            return self.canvas // 2
        return self.canvas // 4  # early

    @property
    def fusion_channels(self) -> int:
        return 3 if self.fusion == "pixel" else self.feature_channels


def config_to_text(cfg: ModelConfig, extra: dict | None = None) -> str:
    """Serialize a config as flat ``key = value`` lines."""
    lines = []
    for f in dataclasses.fields(cfg):
        lines.append(f"{f.name} = {getattr(cfg, f.name)}")
    for key, value in (extra or {}).items():
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def _coerce(raw: str, typ: type):
    if typ is bool:
        low = raw.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"cannot parse boolean from {raw!r}")
    return typ(raw)


def parse_config_text(text: str, base: ModelConfig | None = None) -> ModelConfig:
    """Parse ``key = value`` lines into a ModelConfig, starting from ``base``.

    Unknown keys raise so typos in config files fail loudly.
    """
    cfg = dataclasses.replace(base) if base is not None else ModelConfig()
    known = {f.name: f.type for f in dataclasses.fields(cfg)}
    types = {f.name: type(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in known:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        setattr(cfg, key, _coerce(raw.strip(), types[key]))
    cfg.validate()
    return cfg


def load_config_file(path: str | Path, base: ModelConfig | None = None) -> ModelConfig:
    return parse_config_text(Path(path).read_text(), base=base)
