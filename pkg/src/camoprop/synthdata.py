"""Synthetic camouflage sequences, dataset layout, and training augmentation.

A sequence is a moving elliptical blob whose texture is drawn from the
same procedural-noise family as the background and blended toward a flat
tint by ``1 - contrast``: at contrast 1 the object is statistically
identical to the background and only motion (plus the seam) betrays it;
at contrast 0 it is a plainly tinted blob. Masks are the exact blob
support.

Dataset layout on disk:

    <root>/index.txt                     one sequence id per line
    <root>/<id>/frames/%05d.ppm
    <root>/<id>/masks/%05d.pgm
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import netpbm
from .nn import interp_matrix

AUGMENT_OPS = ("affine", "hflip", "color_jitter", "grayscale", "gaussian_blur")


@dataclass
class TextureSpec:
    seed: int = 0
    octaves: int = 4
    amplitude: float = 0.6  # texture swing around mid-gray, in (0, 1]


@dataclass
class SynthConfig:
    image_size: int = 64
    texture: TextureSpec = field(default_factory=TextureSpec)
    radius_range: tuple[float, float] = (7.0, 12.0)
    motion: tuple[float, float] = (1.5, 1.0)   # (dx, dy) pixels per frame
    jitter_std: float = 0.4
    sequence_length: int = 8
    contrast: float = 0.9
    tint: tuple[float, float, float] = (1.0, 0.1, 0.1)
    decoy: bool = False  # add a static look-alike blob outside the target mask

    def __post_init__(self):
        if not 0.0 <= self.contrast <= 1.0:
            raise ValueError(f"contrast must be in [0, 1], got {self.contrast}")
        if self.radius_range[0] > self.radius_range[1] or self.radius_range[0] <= 0:
            raise ValueError(f"bad radius_range {self.radius_range}")


@dataclass
class SequenceSample:
    frames: list[np.ndarray]   # each 3 x H x W in [0, 1]
    masks: list[np.ndarray]    # each H x W binary
    id: str

    def __post_init__(self):
        if len(self.frames) != len(self.masks):
            raise ValueError(f"{len(self.frames)} frames vs {len(self.masks)} masks")


def _mix_seed(cfg: SynthConfig, seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.PCG64([cfg.texture.seed, seed]))


def value_noise(rng: np.random.Generator, size: int, octaves: int) -> np.ndarray:
    """Multi-octave bilinear value noise in [0, 1], size x size."""
    total = np.zeros((size, size))
    amp_sum = 0.0
    for o in range(octaves):
        grid = min(size, 4 * (2 ** o))
        amp = 0.5 ** o
        coarse = rng.uniform(-1.0, 1.0, size=(grid, grid))
        up = interp_matrix(grid, size)
        total += amp * (up @ coarse @ up.T)
        amp_sum += amp
    return (total / amp_sum + 1.0) / 2.0


def _texture_rgb(rng: np.random.Generator, spec: TextureSpec,
                 size: int) -> np.ndarray:
    """Colour texture: shared structure plus per-channel variation, with
    the overall swing damped toward mid-gray by ``spec.amplitude``."""
    base = value_noise(rng, size, spec.octaves)
    chans = [0.65 * base + 0.35 * value_noise(rng, size, spec.octaves)
             for _ in range(3)]
    tex = np.stack(chans)
    return np.clip(0.5 + spec.amplitude * (tex - 0.5), 0.0, 1.0)


def _ellipse_mask(size: int, cx: float, cy: float, rx: float, ry: float,
                  theta: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    ct, st = np.cos(theta), np.sin(theta)
    u = (dx * ct + dy * st) / rx
    v = (-dx * st + dy * ct) / ry
    return (u * u + v * v <= 1.0).astype(np.float64)


def generate_sequence(cfg: SynthConfig, seed: int,
                      seq_id: str | None = None) -> SequenceSample:
    """Deterministic for (cfg, seed); raises if the blob cannot stay
    in-frame over the whole trajectory."""
    rng = _mix_seed(cfg, seed)
    size, t = cfg.image_size, cfg.sequence_length

    background = _texture_rgb(rng, cfg.texture, size)
    object_tex = _texture_rgb(rng, cfg.texture, size)
    tint = np.asarray(cfg.tint).reshape(3, 1, 1)
    object_tex = cfg.contrast * object_tex + (1.0 - cfg.contrast) * tint

    rx = rng.uniform(*cfg.radius_range)
    ry = rng.uniform(*cfg.radius_range)
    theta = rng.uniform(0.0, np.pi)
    margin = max(rx, ry) + 1.0
    dx, dy = cfg.motion
    span_x = dx * (t - 1)
    span_y = dy * (t - 1)

    lo_x = margin + max(0.0, -span_x)
    hi_x = size - 1 - margin - max(0.0, span_x)
    lo_y = margin + max(0.0, -span_y)
    hi_y = size - 1 - margin - max(0.0, span_y)
    if lo_x > hi_x or lo_y > hi_y:
        raise ValueError(
            f"blob radius {max(rx, ry):.1f} with motion {cfg.motion} over "
            f"{t} frames would exit a {size}x{size} frame")
    cx0 = rng.uniform(lo_x, hi_x)
    cy0 = rng.uniform(lo_y, hi_y)

    decoy_mask = None
    if cfg.decoy:
        # a second blob that looks like the target (same texture family and
        # tint) but never moves and never overlaps the target's corridor;
        # only the first-frame mask identifies which blob is the target
        decoy_tex = _texture_rgb(rng, cfg.texture, size)
        decoy_tex = cfg.contrast * decoy_tex + (1.0 - cfg.contrast) * tint
        drx = rng.uniform(*cfg.radius_range)
        dry = rng.uniform(*cfg.radius_range)
        dth = rng.uniform(0.0, np.pi)
        dmargin = max(drx, dry) + 1.0
        clearance = margin + dmargin + 3.0 * max(cfg.jitter_std, 1.0)
        for _ in range(64):
            dcx = rng.uniform(dmargin, size - 1 - dmargin)
            dcy = rng.uniform(dmargin, size - 1 - dmargin)
            # distance from the decoy to the whole target trajectory segment
            t_grid = np.linspace(0.0, 1.0, 32)
            px = cx0 + span_x * t_grid
            py = cy0 + span_y * t_grid
            if np.min(np.hypot(px - dcx, py - dcy)) >= clearance:
                decoy_mask = _ellipse_mask(size, dcx, dcy, drx, dry, dth)
                break

    frames, masks = [], []
    for i in range(t):
        jx, jy = rng.normal(0.0, cfg.jitter_std, size=2) if cfg.jitter_std > 0 \
            else (0.0, 0.0)
        cx = np.clip(cx0 + dx * i + jx, margin, size - 1 - margin)
        cy = np.clip(cy0 + dy * i + jy, margin, size - 1 - margin)
        mask = _ellipse_mask(size, cx, cy, rx, ry, theta)
        # the object carries its texture: shift the texture field along with
        # the blob (whole-pixel shift; sources stay in-bounds by the margin)
        shift = (int(round(cy - cy0)), int(round(cx - cx0)))
        moved_tex = np.roll(object_tex, shift, axis=(1, 2))
        frame = background
        if decoy_mask is not None:
            frame = np.where(decoy_mask[None, :, :] > 0, decoy_tex, frame)
        frame = np.where(mask[None, :, :] > 0, moved_tex, frame)
        frames.append(frame)
        masks.append(mask)
    return SequenceSample(frames=frames, masks=masks,
                          id=seq_id or f"seq{seed:04d}")


def generate_static_set(cfg: SynthConfig, count: int,
                        seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Independent single (frame, mask) pairs for static pre-training."""
    still = replace(cfg, sequence_length=1, motion=(0.0, 0.0), jitter_std=0.0)
    out = []
    for i in range(count):
        s = generate_sequence(still, seed * 100003 + i)
        out.append((s.frames[0], s.masks[0]))
    return out


# --------------------------------------------------------------------------
# Augmentation (one random draw per sequence, applied to every frame)


def _affine_grid(size: int, angle: float, scl: float,
                 tx: float, ty: float) -> tuple[np.ndarray, np.ndarray]:
    """Source coordinates for each output pixel of an inverse-mapped
    rotate/scale/translate about the image center."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    c = (size - 1) / 2.0
    x = xx - c - tx
    y = yy - c - ty
    ct, st = np.cos(-angle), np.sin(-angle)
    sx = (x * ct - y * st) / scl + c
    sy = (x * st + y * ct) / scl + c
    return sx, sy


def _sample_bilinear(img: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    h, w = img.shape[-2:]
    sx = np.clip(sx, 0, w - 1)
    sy = np.clip(sy, 0, h - 1)
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0
    out = (img[..., y0, x0] * (1 - fy) * (1 - fx)
           + img[..., y0, x1] * (1 - fy) * fx
           + img[..., y1, x0] * fy * (1 - fx)
           + img[..., y1, x1] * fy * fx)
    return out


def _sample_nearest(img: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    h, w = img.shape[-2:]
    x = np.clip(np.rint(sx), 0, w - 1).astype(int)
    y = np.clip(np.rint(sy), 0, h - 1).astype(int)
    return img[..., y, x]


def _gauss_blur(frame: np.ndarray, sigma: float) -> np.ndarray:
    radius = max(1, int(np.ceil(2 * sigma)))
    ax = np.arange(-radius, radius + 1)
    k = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    k /= k.sum()
    pad = np.pad(frame, ((0, 0), (radius, radius), (radius, radius)), mode="edge")
    out = np.apply_along_axis(lambda r: np.convolve(r, k, mode="valid"), 1, pad)
    out = np.apply_along_axis(lambda r: np.convolve(r, k, mode="valid"), 2, out)
    return out


def augment(sample: SequenceSample, ops: tuple[str, ...],
            seed: int) -> SequenceSample:
    """Apply the listed augmentations with one parameter draw shared by all
    frames of the sequence; masks see only the spatial ops (nearest
    resampled, so they stay binary)."""
    for op in ops:
        if op not in AUGMENT_OPS:
            raise ValueError(f"unknown augmentation {op!r}; valid: {AUGMENT_OPS}")
    rng = np.random.default_rng(np.random.PCG64([seed, 0x5EED]))
    size = sample.frames[0].shape[-1]

    do_flip = "hflip" in ops and rng.random() < 0.5
    if "affine" in ops:
        angle = rng.uniform(-np.radians(10), np.radians(10))
        scl = rng.uniform(0.92, 1.08)
        tx, ty = rng.uniform(-0.05, 0.05, size=2) * size
        sx, sy = _affine_grid(size, angle, scl, tx, ty)
    else:
        sx = sy = None
    if "color_jitter" in ops:
        gains = rng.uniform(0.85, 1.15, size=3).reshape(3, 1, 1)
        offsets = rng.uniform(-0.08, 0.08, size=3).reshape(3, 1, 1)
    do_gray = "grayscale" in ops and rng.random() < 0.2
    blur_sigma = rng.uniform(0.2, 0.9) if "gaussian_blur" in ops else 0.0

    frames, masks = [], []
    for frame, mask in zip(sample.frames, sample.masks):
        f, m = frame, mask
        if do_flip:
            f = f[..., ::-1].copy()
            m = m[..., ::-1].copy()
        if sx is not None:
            f = _sample_bilinear(f, sx, sy)
            m = _sample_nearest(m, sx, sy)
        if "color_jitter" in ops:
            f = np.clip(f * gains + offsets, 0.0, 1.0)
        if do_gray:
            f = np.repeat(f.mean(axis=0, keepdims=True), 3, axis=0)
        if blur_sigma > 0:
            f = _gauss_blur(f, blur_sigma)
        frames.append(np.clip(f, 0.0, 1.0))
        masks.append(m)
    return SequenceSample(frames=frames, masks=masks, id=sample.id)


def jitter_pair(frame: np.ndarray, mask: np.ndarray, rng: np.random.Generator,
                max_shift: float = 0.05,
                max_angle_deg: float = 3.0) -> tuple[np.ndarray, np.ndarray]:
    """Small random affine (shift up to ``max_shift`` of the image side,
    slight rotation) applied identically to a frame and its mask; used to
    fake motion from a single still image."""
    size = frame.shape[-1]
    angle = rng.uniform(-np.radians(max_angle_deg), np.radians(max_angle_deg))
    tx, ty = rng.uniform(-max_shift, max_shift, size=2) * size
    sx, sy = _affine_grid(size, angle, 1.0, tx, ty)
    return (np.clip(_sample_bilinear(frame, sx, sy), 0.0, 1.0),
            _sample_nearest(mask, sx, sy))


def jitter_mask(mask: np.ndarray, rng: np.random.Generator,
                max_shift: float = 0.05) -> np.ndarray:
    """Shifted copy of a mask (nearest resampling, stays binary); used as a
    noisy prompt during warm-up so the decoder learns to refine priors."""
    size = mask.shape[-1]
    tx, ty = rng.uniform(-max_shift, max_shift, size=2) * size
    sx, sy = _affine_grid(size, 0.0, 1.0, tx, ty)
    return _sample_nearest(mask, sx, sy)


# --------------------------------------------------------------------------
# Dataset directory layout


def write_dataset(root: str | Path, samples: list[SequenceSample]) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for s in samples:
        fdir = root / s.id / "frames"
        mdir = root / s.id / "masks"
        fdir.mkdir(parents=True, exist_ok=True)
        mdir.mkdir(parents=True, exist_ok=True)
        for i, (frame, mask) in enumerate(zip(s.frames, s.masks), start=1):
            netpbm.write_frame(fdir / f"{i:05d}.ppm", frame)
            netpbm.write_mask(mdir / f"{i:05d}.pgm", mask)
    (root / "index.txt").write_text(
        "".join(s.id + "\n" for s in samples), encoding="utf-8")


def read_dataset(root: str | Path) -> list[SequenceSample]:
    root = Path(root)
    ids = [line.strip()
           for line in (root / "index.txt").read_text(encoding="utf-8").splitlines()
           if line.strip()]
    out = []
    for sid in ids:
        fdir = root / sid / "frames"
        mdir = root / sid / "masks"
        frames = [netpbm.read_frame(p) for p in sorted(fdir.glob("*.ppm"))]
        masks = [netpbm.read_mask(p) for p in sorted(mdir.glob("*.pgm"))]
        out.append(SequenceSample(frames=frames, masks=masks, id=sid))
    return out
