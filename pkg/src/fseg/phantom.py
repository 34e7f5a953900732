"""Synthetic tubular phantoms (volume + label), volume file I/O, intensity
augmentation, and dataset splitting.

Volumes are stored as a JSON sidecar header plus a raw little-endian blob:
`<name>.json` {"dims":[D,H,W], "dtype":"f32le", "spacing":[...], "kind":...}
and `<name>.raw` with W fastest-varying.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSpecError, TooFewItemsError, VolumeFormatError

log = logging.getLogger(__name__)


@dataclass
class Volume:
    data: np.ndarray  # [D,H,W] float32
    spacing: tuple = (1.0, 1.0, 1.0)
    kind: str = "image"

    def __post_init__(self):
        if not np.all(np.isfinite(self.data)):
            raise VolumeFormatError("volume contains non-finite values")
        if any(s <= 0 for s in self.spacing):
            raise VolumeFormatError(f"non-positive spacing {self.spacing}")


@dataclass
class PhantomSpec:
    size: int = 32
    n_tubes: int = 3
    radius_range: tuple = (1.5, 3.0)
    curvature: float = 1.5  # control-point jitter scale, voxels
    fg_intensity: float = 350.0
    bg_intensity: float = 40.0
    noise_sigma: float = 25.0
    seed: int = 0

    def __post_init__(self):
        if self.radius_range[0] < 1:
            raise DegenerateSpecError(f"minimum radius {self.radius_range[0]} < 1")
        if self.radius_range[1] > self.size / 2:
            raise DegenerateSpecError(
                f"radius {self.radius_range[1]} exceeds half the volume size {self.size}"
            )
        if self.fg_intensity <= self.bg_intensity:
            raise DegenerateSpecError("fg_intensity must exceed bg_intensity")


def _catmull_rom(points: np.ndarray, samples_per_seg: int) -> np.ndarray:
    """C1 spline through the control points (end points duplicated)."""
    pts = np.concatenate([points[:1], points, points[-1:]], axis=0)
    out = []
    for i in range(len(pts) - 3):
        p0, p1, p2, p3 = pts[i], pts[i + 1], pts[i + 2], pts[i + 3]
        t = np.linspace(0.0, 1.0, samples_per_seg, endpoint=False)[:, None]
        out.append(
            0.5
            * (
                2 * p1
                + (-p0 + p2) * t
                + (2 * p0 - 5 * p1 + 4 * p2 - p3) * t**2
                + (-p0 + 3 * p1 - 3 * p2 + p3) * t**3
            )
        )
    out.append(points[-1:])
    return np.concatenate(out, axis=0)


def _rasterize_tube(label: np.ndarray, centers: np.ndarray, radii: np.ndarray):
    n = label.shape[0]
    grid = np.arange(n)
    for c, r in zip(centers, radii):
        lo = np.maximum(np.floor(c - r).astype(int), 0)
        hi = np.minimum(np.ceil(c + r).astype(int) + 1, n)
        if np.any(lo >= hi):
            continue
        zz = grid[lo[0]:hi[0]][:, None, None]
        yy = grid[lo[1]:hi[1]][None, :, None]
        xx = grid[lo[2]:hi[2]][None, None, :]
        d2 = (zz - c[0]) ** 2 + (yy - c[1]) ** 2 + (xx - c[2]) ** 2
        block = label[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
        block[d2 <= r * r] = 1


def generate_phantom(spec: PhantomSpec):
    """Jittered-spline tubes swept with per-point radii; label 1 inside any
    tube; intensities fg/bg means plus Gaussian noise. Deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    n = spec.size
    label = np.zeros((n, n, n), dtype=np.uint8)
    n_ctrl = 6
    for _ in range(spec.n_tubes):
        axis = int(rng.integers(0, 3))
        along = np.linspace(0, n - 1, n_ctrl)
        perp = rng.uniform(0.25 * n, 0.75 * n, size=(2,))
        ctrl = np.zeros((n_ctrl, 3))
        ctrl[:, axis] = along
        other = [a for a in range(3) if a != axis]
        for j, a in enumerate(other):
            ctrl[:, a] = perp[j] + rng.normal(0.0, spec.curvature, size=n_ctrl)
        ctrl_r = rng.uniform(spec.radius_range[0], spec.radius_range[1], size=n_ctrl)
        pts = _catmull_rom(ctrl, samples_per_seg=max(2, 2 * (n // n_ctrl)))
        # radii interpolated along the same parameterization
        u = np.linspace(0, 1, len(pts))
        radii = np.interp(u, np.linspace(0, 1, n_ctrl), ctrl_r)
        _rasterize_tube(label, pts, radii)

    image = np.full((n, n, n), spec.bg_intensity, dtype=np.float32)
    image[label == 1] = spec.fg_intensity
    if spec.noise_sigma > 0:
        image = image + rng.normal(0.0, spec.noise_sigma, image.shape).astype(np.float32)
    return Volume(image.astype(np.float32), kind="image"), label


# ---------------------------------------------------------------------------
# Volume file I/O
# ---------------------------------------------------------------------------

_DTYPES = {"f32le": "<f4", "u8le": "u1", "f64le": "<f8"}


def save_volume(path: str, vol: Volume):
    dtype = "u8le" if vol.kind == "label" else "f32le"
    header = {
        "dims": list(vol.data.shape),
        "dtype": dtype,
        "spacing": list(vol.spacing),
        "kind": vol.kind,
    }
    with open(path + ".json", "w") as f:
        json.dump(header, f, sort_keys=True)
    vol.data.astype(_DTYPES[dtype]).tofile(path + ".raw")


def load_volume(path: str) -> Volume:
    try:
        with open(path + ".json") as f:
            header = json.load(f)
        dims = tuple(header["dims"])
        dtype = header["dtype"]
        spacing = tuple(header.get("spacing", (1.0, 1.0, 1.0)))
        kind = header.get("kind", "image")
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise VolumeFormatError(f"corrupt header {path}.json: {e}") from e
    if dtype not in _DTYPES:
        raise VolumeFormatError(f"unsupported dtype {dtype!r} in {path}.json")
    raw = np.fromfile(path + ".raw", dtype=_DTYPES[dtype])
    expected = int(np.prod(dims))
    if raw.size != expected:
        raise VolumeFormatError(
            f"{path}.raw holds {raw.size * raw.itemsize} bytes, header expects "
            f"{expected * raw.itemsize} ({expected} values of {dtype})"
        )
    data = raw.reshape(dims)
    if dtype == "f64le":
        log.info("%s: converting f64le volume to f32", path)
        data = data.astype(np.float32)
    elif dtype == "f32le":
        data = data.astype(np.float32)
    return Volume(data, spacing, kind)


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------


@dataclass
class AugmentConfig:
    clip_lo: float = -200.0
    clip_hi: float = 1000.0
    flip_rot_prob: float = 0.5
    intensity_scale_prob: float = 0.1
    scale_range: tuple = (0.9, 1.1)
    intensity_shift_prob: float = 0.1
    shift_range: tuple = (-0.1, 0.1)

    def __post_init__(self):
        for p in (self.flip_rot_prob, self.intensity_scale_prob, self.intensity_shift_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0,1]")
        if self.clip_lo >= self.clip_hi or self.scale_range[0] > self.scale_range[1] or (
            self.shift_range[0] > self.shift_range[1]
        ):
            raise ValueError("augmentation ranges must be ordered")


def clip_and_map(data: np.ndarray, cfg: AugmentConfig) -> np.ndarray:
    clipped = np.clip(data, cfg.clip_lo, cfg.clip_hi)
    return ((clipped - cfg.clip_lo) / (cfg.clip_hi - cfg.clip_lo)).astype(np.float32)


def augment(image: np.ndarray, label: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator):
    """Clip-and-map, shared geometric flips/rotations, then image-only
    intensity scale/shift.  Values are NOT re-clipped after intensity ops."""
    img = clip_and_map(image, cfg)
    lab = label.copy()
    for axis in range(3):
        if rng.random() < cfg.flip_rot_prob:
            img = np.flip(img, axis=axis)
            lab = np.flip(lab, axis=axis)
    if rng.random() < cfg.flip_rot_prob:
        k = int(rng.integers(1, 4))
        planes = ((0, 1), (0, 2), (1, 2))
        plane = planes[int(rng.integers(0, 3))]
        img = np.rot90(img, k, axes=plane)
        lab = np.rot90(lab, k, axes=plane)
    img = np.ascontiguousarray(img)
    lab = np.ascontiguousarray(lab)
    if rng.random() < cfg.intensity_scale_prob:
        img = img * np.float32(rng.uniform(*cfg.scale_range))
    if rng.random() < cfg.intensity_shift_prob:
        img = img + np.float32(rng.uniform(*cfg.shift_range))
    return img, lab


def sample_rng(base_seed: int, index: int) -> np.random.Generator:
    """Per-sample stream so concurrent pipelines stay deterministic."""
    return np.random.default_rng(np.random.SeedSequence(entropy=base_seed, spawn_key=(index,)))


# ---------------------------------------------------------------------------
# Dataset split
# ---------------------------------------------------------------------------


def split(ids: list, ratio=(8, 1, 1), seed: int = 0) -> dict:
    """Disjoint, exhaustive train/val/test split with largest-remainder
    rounding; remainder ties resolve toward the earlier bucket (train first)."""
    n = len(ids)
    if n < 10:
        raise TooFewItemsError(f"need at least 10 items to split 8:1:1, got {n}")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(n)]
    total = sum(ratio)
    exact = [n * r / total for r in ratio]
    sizes = [int(e) for e in exact]
    leftovers = n - sum(sizes)
    remainders = sorted(
        range(3), key=lambda i: (-(exact[i] - sizes[i]), i)
    )
    for i in range(leftovers):
        sizes[remainders[i]] += 1
    out = {}
    start = 0
    for name, s in zip(("train", "val", "test"), sizes):
        out[name] = order[start : start + s]
        start += s
    return out
