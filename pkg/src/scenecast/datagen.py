"""Synthetic toppling-tower videos: generation, container files, manifests.

Each sequence is a stack of colored blocks on a flat ground line. A stack is
unstable when some block's horizontal offset from the one below exceeds half
a block side; the sub-stack above the lowest such joint then rotates rigidly
about the support corner at a constant angular rate until it lies flat (or
would push a center out of frame, at which point it freezes). Whether an
unstable stack falls left or right is drawn from the low bits of the seed and
is NOT visible in the first frame, so the future is ambiguous given pixels
but deterministic given the seed.
"""

from __future__ import annotations

import dataclasses
import io
import math
import zipfile
from pathlib import Path

import numpy as np

__all__ = [
    "VideoSequence",
    "DatasetManifest",
    "GeneratorParams",
    "SequenceFormatError",
    "generate_sequence",
    "generate_dataset",
    "load_sequence",
    "write_sequence",
    "load_manifest",
]

# Fixed 8-color palette; blocks in one scene never share a color (n_blocks <= 8).
PALETTE = np.array(
    [
        [0.85, 0.16, 0.16],  # red
        [0.16, 0.38, 0.80],  # blue
        [0.98, 0.72, 0.10],  # yellow
        [0.16, 0.62, 0.26],  # green
        [0.55, 0.20, 0.70],  # purple
        [0.95, 0.45, 0.10],  # orange
        [0.10, 0.65, 0.65],  # teal
        [0.45, 0.28, 0.12],  # brown
    ]
)

BG_VALUE = 0.94
GROUND_VALUE = 0.86
GROUND_Y = 0.82  # tower base line in normalized coordinates (y grows downward)
FALL_FRAMES = 10  # frames a full quarter-turn topple takes
CENTER_MARGIN = 0.03  # rotation freezes before any center leaves [m, 1-m]^2

# Seeds that differ only in the low AMBIGUITY_BITS render the same first frame;
# those bits feed only the hidden fall-direction draw.
AMBIGUITY_BITS = 8

MAX_BLOCKS = 8


class SequenceFormatError(ValueError):
    """A sequence container file is malformed; the message names the field."""


@dataclasses.dataclass
class VideoSequence:
    """T+1 frames plus per-frame 2D entity centers in normalized [0,1] coords."""

    frames: np.ndarray  # (T+1, H, W, 3) float32 in [0, 1]
    centers: np.ndarray  # (T+1, N, 2) float32 in [0, 1], (x, y)
    meta: dict[str, str]

    @property
    def horizon(self) -> int:
        return self.frames.shape[0] - 1

    @property
    def n_entities(self) -> int:
        return self.centers.shape[1]

    def validate(self) -> None:
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise SequenceFormatError(f"frames: expected (T+1, H, W, 3), got {self.frames.shape}")
        if self.centers.ndim != 3 or self.centers.shape[-1] != 2:
            raise SequenceFormatError(f"centers: expected (T+1, N, 2), got {self.centers.shape}")
        if self.frames.shape[0] != self.centers.shape[0]:
            raise SequenceFormatError(
                f"centers: time dimension {self.centers.shape[0]} != frames {self.frames.shape[0]}"
            )
        if not np.all(np.isfinite(self.centers)):
            raise SequenceFormatError("centers: non-finite values")
        if self.centers.min() < 0.0 or self.centers.max() > 1.0:
            raise SequenceFormatError("centers: coordinates outside [0, 1]")
        if self.frames.min() < 0.0 or self.frames.max() > 1.0:
            raise SequenceFormatError("frames: pixel values outside [0, 1]")

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, VideoSequence)
            and np.array_equal(self.frames, other.frames)
            and np.array_equal(self.centers, other.centers)
            and self.meta == other.meta
        )


# ---------------------------------------------------------------------------
# tower construction and kinematics


@dataclasses.dataclass
class _TowerConfig:
    n_blocks: int
    side: float
    base_x: float
    offsets: np.ndarray  # (n_blocks - 1,) horizontal offset of block i vs block i-1
    colors: np.ndarray  # (n_blocks, 3)
    shapes: list[str]  # "square" | "circle"

    @property
    def unstable_level(self) -> int | None:
        """Lowest block index whose offset from the block below exceeds side/2."""
        bad = np.nonzero(np.abs(self.offsets) > self.side / 2)[0]
        return int(bad[0]) + 1 if bad.size else None


def _draw_config(rng: np.random.Generator, n_blocks: int) -> _TowerConfig:
    side = min(0.16, 0.64 / n_blocks)
    base_x = 0.42 + 0.16 * rng.random()
    offsets = np.empty(max(n_blocks - 1, 0))
    for i in range(n_blocks - 1):
        if rng.random() < 0.35:
            offsets[i] = 0.0
        else:
            offsets[i] = rng.uniform(-0.85, 0.85) * side
    color_idx = rng.choice(len(PALETTE), size=n_blocks, replace=False)
    shapes = ["square" if rng.random() < 0.75 else "circle" for _ in range(n_blocks)]
    return _TowerConfig(n_blocks, side, base_x, offsets, PALETTE[color_idx].copy(), shapes)


def _rest_centers(cfg: _TowerConfig) -> np.ndarray:
    xs = cfg.base_x + np.concatenate([[0.0], np.cumsum(cfg.offsets)])
    ys = GROUND_Y - (np.arange(cfg.n_blocks) + 0.5) * cfg.side
    return np.stack([xs, ys], axis=1)


def _rotate_about(points: np.ndarray, pivot: np.ndarray, angle: float) -> np.ndarray:
    """Rotate points about pivot; positive angle tips toward +x (y grows down)."""
    c, s = math.cos(angle), math.sin(angle)
    rel = points - pivot
    rot = np.stack([c * rel[:, 0] - s * rel[:, 1], s * rel[:, 0] + c * rel[:, 1]], axis=1)
    return pivot + rot


def _simulate(cfg: _TowerConfig, direction: int, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame centers (T+1, N, 2) and per-frame block rotation angles (T+1, N)."""
    rest = _rest_centers(cfg)
    centers = np.tile(rest[None], (horizon + 1, 1, 1))
    angles = np.zeros((horizon + 1, cfg.n_blocks))
    level = cfg.unstable_level
    if level is None:
        return centers, angles

    pivot = np.array(
        [rest[level - 1, 0] + direction * cfg.side / 2, GROUND_Y - level * cfg.side]
    )
    omega = (math.pi / 2) / FALL_FRAMES
    theta = 0.0
    lo, hi = CENTER_MARGIN, 1.0 - CENTER_MARGIN
    for t in range(1, horizon + 1):
        cand = min(theta + omega, math.pi / 2)
        if cand > theta:
            moved = _rotate_about(rest[level:], pivot, direction * cand)
            if moved.min() >= lo and moved.max() <= hi:
                theta = cand
        centers[t, level:] = _rotate_about(rest[level:], pivot, direction * theta)
        angles[t, level:] = direction * theta
    return centers, angles


# ---------------------------------------------------------------------------
# rendering

_SUBSAMPLES = 3  # anti-aliasing grid per pixel axis


def _pixel_sample_grid(canvas: int) -> np.ndarray:
    """Normalized (canvas, canvas, S*S, 2) sample coordinates, cached per size."""
    key = canvas
    cached = _pixel_sample_grid._cache.get(key)
    if cached is not None:
        return cached
    sub = (np.arange(_SUBSAMPLES) + 0.5) / _SUBSAMPLES
    px = np.arange(canvas)
    xs = (px[:, None] + sub[None, :]) / canvas  # (canvas, S)
    grid_x = np.broadcast_to(xs[None, :, :, None], (canvas, canvas, _SUBSAMPLES, _SUBSAMPLES))
    grid_y = np.broadcast_to(xs[:, None, None, :], (canvas, canvas, _SUBSAMPLES, _SUBSAMPLES))
    pts = np.stack([grid_x, grid_y], axis=-1).reshape(canvas, canvas, _SUBSAMPLES**2, 2)
    _pixel_sample_grid._cache[key] = pts
    return pts


_pixel_sample_grid._cache = {}


def _render_frame(cfg: _TowerConfig, centers: np.ndarray, angles: np.ndarray, canvas: int) -> np.ndarray:
    img = np.full((canvas, canvas, 3), BG_VALUE)
    row_y = (np.arange(canvas) + 0.5) / canvas
    img[row_y > GROUND_Y] = GROUND_VALUE

    pts = _pixel_sample_grid(canvas)
    half = cfg.side / 2
    for i in range(cfg.n_blocks):  # bottom-up, so falling blocks paint on top
        rel = pts - centers[i]
        if cfg.shapes[i] == "circle":
            inside = (rel**2).sum(-1) <= half**2
        else:
            c, s = math.cos(angles[i]), math.sin(angles[i])
            local_x = c * rel[..., 0] + s * rel[..., 1]
            local_y = -s * rel[..., 0] + c * rel[..., 1]
            inside = (np.abs(local_x) <= half) & (np.abs(local_y) <= half)
        cov = inside.mean(-1)[..., None]
        img = img * (1 - cov) + cfg.colors[i] * cov
    return img


# ---------------------------------------------------------------------------
# public generation API


def generate_sequence(seed: int, n_blocks: int, horizon: int, canvas: int = 64) -> VideoSequence:
    """Deterministically generate one toppling-tower video.

    Seeds differing only in the low AMBIGUITY_BITS bits share the visible
    scene (first frame) but draw independent hidden fall directions.
    """
    if not 1 <= n_blocks <= MAX_BLOCKS:
        raise ValueError(f"n_blocks must be in [1, {MAX_BLOCKS}], got {n_blocks}")
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if canvas < 32:
        raise ValueError(f"canvas must be >= 32, got {canvas}")
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")

    cfg_rng = np.random.default_rng(np.random.PCG64(seed >> AMBIGUITY_BITS))
    dir_rng = np.random.default_rng(np.random.PCG64(seed))
    cfg = _draw_config(cfg_rng, n_blocks)
    direction = -1 if dir_rng.random() < 0.5 else 1

    centers, angles = _simulate(cfg, direction, horizon)
    frames_u8 = np.empty((horizon + 1, canvas, canvas, 3), dtype=np.uint8)
    for t in range(horizon + 1):
        frames_u8[t] = np.round(_render_frame(cfg, centers[t], angles[t], canvas) * 255.0)

    level = cfg.unstable_level
    fall = "none" if level is None else ("right" if direction > 0 else "left")
    meta = {
        "seed": str(seed),
        "n_entities": str(n_blocks),
        "fall": fall,
        "unstable_level": "" if level is None else str(level),
        "canvas": str(canvas),
        "horizon": str(horizon),
    }
    seq = VideoSequence(
        frames=(frames_u8.astype(np.float32) / 255.0),
        centers=centers.astype(np.float32),
        meta=meta,
    )
    seq.validate()
    return seq


def tower_is_unstable(seed: int, n_blocks: int) -> bool:
    """Cheap instability probe (no rendering); same draw order as generation."""
    cfg_rng = np.random.default_rng(np.random.PCG64(seed >> AMBIGUITY_BITS))
    return _draw_config(cfg_rng, n_blocks).unstable_level is not None


# ---------------------------------------------------------------------------
# container format: one npz per sequence
#   frames  -- uint8  (T+1, H, W, 3)
#   centers -- float32 (T+1, N, 2)
#   meta    -- one "key=value" string per line


def write_sequence(seq: VideoSequence, path: str | Path) -> None:
    seq.validate()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frames_u8 = np.round(seq.frames * 255.0).astype(np.uint8)
    meta_text = "\n".join(f"{k}={v}" for k, v in sorted(seq.meta.items()))
    np.savez(path, frames=frames_u8, centers=seq.centers.astype(np.float32), meta=np.array(meta_text))


def load_sequence(path: str | Path) -> VideoSequence:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        with np.load(path, allow_pickle=False) as archive:
            missing = {"frames", "centers", "meta"} - set(archive.files)
            if missing:
                raise SequenceFormatError(f"missing field(s): {', '.join(sorted(missing))}")
            frames_u8 = archive["frames"]
            centers = archive["centers"]
            meta_arr = archive["meta"]
    except (zipfile.BadZipFile, OSError, ValueError) as exc:
        if isinstance(exc, SequenceFormatError):
            raise
        raise SequenceFormatError(f"unreadable container {path.name}: {exc}") from exc

    if frames_u8.dtype != np.uint8:
        raise SequenceFormatError(f"frames: expected uint8, got {frames_u8.dtype}")
    if centers.dtype != np.float32:
        raise SequenceFormatError(f"centers: expected float32, got {centers.dtype}")
    meta: dict[str, str] = {}
    for line in str(meta_arr).splitlines():
        if line:
            key, _, value = line.partition("=")
            meta[key] = value
    seq = VideoSequence(frames=frames_u8.astype(np.float32) / 255.0, centers=centers, meta=meta)
    seq.validate()
    return seq


# ---------------------------------------------------------------------------
# dataset generation and manifest

_SPLIT_BASES = {"train": 0, "val": 1 << 20, "test": 2 << 20}
_MAX_SPLIT = 1 << 20


@dataclasses.dataclass
class GeneratorParams:
    canvas: int = 64
    horizon: int = 16
    train_blocks: tuple[int, ...] = (3,)
    val_blocks: tuple[int, ...] = (3,)
    test_blocks: tuple[int, ...] = (3,)
    base_seed: int = 0
    ambiguous_only: bool = False

    def blocks_for(self, split: str) -> tuple[int, ...]:
        return {"train": self.train_blocks, "val": self.val_blocks, "test": self.test_blocks}[split]

    def to_dict(self) -> dict[str, str]:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            out[f.name] = str(value)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, str]) -> "GeneratorParams":
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name not in data:
                continue
            raw = data[f.name]
            if f.name.endswith("_blocks"):
                kwargs[f.name] = tuple(int(v) for v in raw.split(",") if v)
            elif f.name == "ambiguous_only":
                kwargs[f.name] = raw.lower() == "true"
            else:
                kwargs[f.name] = int(raw)
        return cls(**kwargs)


@dataclasses.dataclass
class DatasetManifest:
    root: Path
    splits: dict[str, list[str]]  # split -> relative paths
    params: dict[str, str]
    counts: dict[str, dict[int, int]]  # split -> n_entities -> count

    def sequence_paths(self, split: str) -> list[Path]:
        return [self.root / rel for rel in self.splits[split]]

    def load_split(self, split: str) -> list[VideoSequence]:
        return [load_sequence(p) for p in self.sequence_paths(split)]


def _sequence_seed(params: GeneratorParams, split: str, candidate: int) -> int:
    cfg_index = (params.base_seed << 22) + _SPLIT_BASES[split] + candidate
    return cfg_index << AMBIGUITY_BITS


def generate_dataset(
    out_dir: str | Path,
    n_train: int,
    n_val: int,
    n_test: int,
    params: GeneratorParams | None = None,
) -> DatasetManifest:
    """Generate disjoint train/val/test splits and write a manifest.

    Seed ranges never overlap across splits. With ``ambiguous_only`` the
    generator walks candidate seeds in order and keeps only unstable towers.
    """
    params = params or GeneratorParams()
    out_dir = Path(out_dir)
    seq_dir = out_dir / "sequences"
    seq_dir.mkdir(parents=True, exist_ok=True)

    splits: dict[str, list[str]] = {}
    counts: dict[str, dict[int, int]] = {}
    for split, n_wanted in (("train", n_train), ("val", n_val), ("test", n_test)):
        if n_wanted >= _MAX_SPLIT:
            raise ValueError(f"{split}: at most {_MAX_SPLIT - 1} sequences per split")
        blocks = params.blocks_for(split)
        rel_paths: list[str] = []
        split_counts: dict[int, int] = {}
        candidate = 0
        while len(rel_paths) < n_wanted:
            if candidate >= _MAX_SPLIT:
                raise RuntimeError(f"{split}: exhausted seed range looking for sequences")
            n_blocks = blocks[len(rel_paths) % len(blocks)]
            seed = _sequence_seed(params, split, candidate)
            candidate += 1
            if params.ambiguous_only and not tower_is_unstable(seed, n_blocks):
                continue
            seq = generate_sequence(seed, n_blocks, params.horizon, params.canvas)
            rel = f"sequences/{split}_{len(rel_paths):05d}.npz"
            write_sequence(seq, out_dir / rel)
            rel_paths.append(rel)
            split_counts[n_blocks] = split_counts.get(n_blocks, 0) + 1
        splits[split] = rel_paths
        counts[split] = split_counts

    manifest = DatasetManifest(root=out_dir, splits=splits, params=params.to_dict(), counts=counts)
    _write_manifest(manifest)
    return manifest


def _write_manifest(manifest: DatasetManifest) -> None:
    buf = io.StringIO()
    buf.write("[params]\n")
    for key, value in sorted(manifest.params.items()):
        buf.write(f"{key} = {value}\n")
    buf.write("[counts]\n")
    for split in ("train", "val", "test"):
        for n_ent, count in sorted(manifest.counts.get(split, {}).items()):
            buf.write(f"{split} {n_ent} {count}\n")
    for split in ("train", "val", "test"):
        buf.write(f"[split {split}]\n")
        for rel in manifest.splits.get(split, []):
            buf.write(rel + "\n")
    (manifest.root / "manifest.txt").write_text(buf.getvalue())


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load a manifest; every listed sequence file must exist."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.txt"
    if not path.exists():
        raise FileNotFoundError(path)
    root = path.parent
    params: dict[str, str] = {}
    counts: dict[str, dict[int, int]] = {}
    splits: dict[str, list[str]] = {}
    section = None
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1]
            if section.startswith("split "):
                splits.setdefault(section.split(" ", 1)[1], [])
            continue
        if section == "params":
            key, _, value = stripped.partition("=")
            params[key.strip()] = value.strip()
        elif section == "counts":
            split, n_ent, count = stripped.split()
            counts.setdefault(split, {})[int(n_ent)] = int(count)
        elif section and section.startswith("split "):
            split = section.split(" ", 1)[1]
            if not (root / stripped).exists():
                raise SequenceFormatError(f"manifest line {lineno}: missing sequence file {stripped}")
            splits[split].append(stripped)
        else:
            raise SequenceFormatError(f"manifest line {lineno}: content outside any section")
    return DatasetManifest(root=root, splits=splits, params=params, counts=counts)
