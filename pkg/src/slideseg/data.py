"""Tiling, stitching, fold splitting, augmentation, and synthetic data.

Images are (H, W, 3) float arrays in [0, 1]; masks are (H, W) uint8 {0, 1}.
Grid positions are (row, col) top-left offsets in row-major order.
"""

import json
from dataclasses import dataclass

import numpy as np
from PIL import Image


# -- tiling -----------------------------------------------------------------------


@dataclass(frozen=True)
class TileGrid:
    image_size: tuple
    patch_size: int
    overlap: int
    positions: tuple

    @property
    def stride(self):
        return self.patch_size - self.overlap


def _axis_positions(dim, patch, stride):
    pos = list(range(0, dim - patch + 1, stride))
    if pos[-1] + patch < dim:
        pos.append(dim - patch)  # clamp the final patch to the edge
    return pos


def make_grid(image_size, patch_size, overlap):
    """Overlapping patch grid covering every pixel of the image."""
    h, w = image_size
    if patch_size > min(h, w):
        raise ValueError(f"patch {patch_size} larger than image {h}x{w}")
    if not 0 <= overlap < patch_size:
        raise ValueError(f"overlap {overlap} must be in [0, patch_size)")
    stride = patch_size - overlap
    positions = tuple(
        (r, c) for r in _axis_positions(h, patch_size, stride) for c in _axis_positions(w, patch_size, stride)
    )
    return TileGrid(image_size=(h, w), patch_size=patch_size, overlap=overlap, positions=positions)


def extract(image, grid):
    """Cut the grid's patches out of an array whose first two axes are spatial."""
    arr = np.asarray(image)
    if arr.shape[:2] != tuple(grid.image_size):
        raise ValueError(f"image {arr.shape[:2]} does not match grid {grid.image_size}")
    k = grid.patch_size
    return [arr[r : r + k, c : c + k] for r, c in grid.positions]


def stitch(patch_maps, grid):
    """Average per-patch maps back into a full map (sum / coverage count).

    Patches are (k, k) or (k, k, C); trailing channel axes stitch per channel.
    """
    if len(patch_maps) != len(grid.positions):
        raise ValueError(f"{len(patch_maps)} patches for {len(grid.positions)} grid positions")
    h, w = grid.image_size
    k = grid.patch_size
    first = np.asarray(patch_maps[0])
    channels = first.shape[2:]
    total = np.zeros((h, w) + channels, dtype=np.float64)
    coverage = np.zeros((h, w), dtype=np.float64)
    for (r, c), patch in zip(grid.positions, patch_maps):
        patch = np.asarray(patch)
        if patch.shape != (k, k) + channels:
            raise ValueError(f"patch shape {patch.shape} != {(k, k) + channels}")
        total[r : r + k, c : c + k] += patch
        coverage[r : r + k, c : c + k] += 1.0
    if channels:
        coverage = coverage[..., None]
    return total / coverage


def grid_to_json(grid):
    return json.dumps(
        {
            "image_size": list(grid.image_size),
            "patch_size": grid.patch_size,
            "overlap": grid.overlap,
            "positions": [list(p) for p in grid.positions],
        },
        indent=2,
        sort_keys=True,
    )


def grid_from_json(text):
    raw = json.loads(text)
    return TileGrid(
        image_size=tuple(raw["image_size"]),
        patch_size=raw["patch_size"],
        overlap=raw["overlap"],
        positions=tuple(tuple(p) for p in raw["positions"]),
    )


# -- fold assignment ------------------------------------------------------------------


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    wsi_to_fold: dict

    def members(self, fold):
        return sorted(w for w, f in self.wsi_to_fold.items() if f == fold)


def kfold_split(wsi_ids, k=5, seed=0):
    """Seeded shuffle then round-robin; fold sizes differ by at most one."""
    ids = list(wsi_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate slide ids")
    if len(ids) < k:
        raise ValueError(f"cannot split {len(ids)} slides into {k} folds")
    order = np.random.default_rng(seed).permutation(len(ids))
    return FoldAssignment(k=k, wsi_to_fold={ids[int(i)]: pos % k for pos, i in enumerate(order)})


# -- augmentation ----------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentConfig:
    p: float = 0.5
    brightness: float = 0.25
    contrast: float = 0.25
    saturation: float = 0.25
    hue: float = 0.04

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must be in [0, 1]")
        for d in (self.brightness, self.contrast, self.saturation, self.hue):
            if d < 0:
                raise ValueError("jitter ranges must be non-negative")


def rgb_to_hsv(rgb):
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    v = maxc
    delta = maxc - minc
    safe = np.maximum(delta, 1e-12)
    s = np.where(maxc > 0, delta / np.maximum(maxc, 1e-12), 0.0)
    hr = ((g - b) / safe) % 6.0
    hg = (b - r) / safe + 2.0
    hb = (r - g) / safe + 4.0
    h = np.where(maxc == r, hr, np.where(maxc == g, hg, hb)) / 6.0
    h = np.where(delta == 0, 0.0, h)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv):
    h, s, v = hsv[..., 0] % 1.0, hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(int) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)


def color_jitter(image, cfg, rng):
    """Brightness/contrast/saturation scales and a hue shift, image only."""
    img = image.astype(np.float64, copy=True)
    if cfg.brightness > 0:
        img *= rng.uniform(1.0 - cfg.brightness, 1.0 + cfg.brightness)
    if cfg.contrast > 0:
        factor = rng.uniform(1.0 - cfg.contrast, 1.0 + cfg.contrast)
        mean = img.mean()
        img = (img - mean) * factor + mean
    if cfg.saturation > 0:
        factor = rng.uniform(1.0 - cfg.saturation, 1.0 + cfg.saturation)
        gray = img @ np.array([0.299, 0.587, 0.114])
        img = gray[..., None] * (1.0 - factor) + img * factor
    if cfg.hue > 0:
        shift = rng.uniform(-cfg.hue, cfg.hue)
        hsv = rgb_to_hsv(np.clip(img, 0.0, 1.0))
        hsv[..., 0] = (hsv[..., 0] + shift) % 1.0
        img = hsv_to_rgb(hsv)
    return np.clip(img, 0.0, 1.0).astype(image.dtype)


def rotate90(image, mask, quarter_turns):
    k = quarter_turns % 4
    return np.ascontiguousarray(np.rot90(image, k)), np.ascontiguousarray(np.rot90(mask, k))


def flip_h(image, mask):
    return np.ascontiguousarray(image[:, ::-1]), np.ascontiguousarray(mask[:, ::-1])


def flip_v(image, mask):
    return np.ascontiguousarray(image[::-1]), np.ascontiguousarray(mask[::-1])


def augment(image, mask, cfg, rng):
    """Apply each transform with probability ``cfg.p``; geometry moves the
    mask identically, color touches the image only."""
    if image.shape[:2] != mask.shape:
        raise ValueError(f"image {image.shape[:2]} and mask {mask.shape} misaligned")
    if rng.random() < cfg.p:
        image = color_jitter(image, cfg, rng)
    if rng.random() < cfg.p:
        image, mask = rotate90(image, mask, int(rng.integers(0, 4)))
    if rng.random() < cfg.p:
        image, mask = flip_h(image, mask)
    if rng.random() < cfg.p:
        image, mask = flip_v(image, mask)
    return image, mask


# -- synthetic data ----------------------------------------------------------------------


def _smooth_noise(rng, size, cells, amplitude):
    """Low-resolution noise scaled up with bilinear-ish smoothing."""
    coarse = rng.normal(0.0, 1.0, size=(cells, cells))
    reps = int(np.ceil(size / cells))
    fine = np.kron(coarse, np.ones((reps, reps)))[:size, :size]
    # box blur twice to soften the cell edges
    for _ in range(2):
        fine = (
            fine
            + np.roll(fine, 1, axis=0)
            + np.roll(fine, -1, axis=0)
            + np.roll(fine, 1, axis=1)
            + np.roll(fine, -1, axis=1)
        ) / 5.0
    return amplitude * fine


def _ellipse_mask(size, rng, center_lo=0.2, center_hi=0.8, ax_lo=0.05, ax_hi=0.30):
    yy, xx = np.mgrid[0:size, 0:size]
    cy = rng.uniform(center_lo, center_hi) * size
    cx = rng.uniform(center_lo, center_hi) * size
    a = rng.uniform(ax_lo, ax_hi) * size
    b = rng.uniform(ax_lo, ax_hi) * size
    theta = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def synth_sample(size, rng):
    """One textured image with elliptical tumour blobs and distractors.

    The true blobs carry a distinct mean color plus high-frequency speckle;
    distractors reuse the tumour color with the smooth background texture, so
    texture is the separating cue. Each image draws all its blobs near one
    characteristic size, and that size varies widely between images: in
    small-blob images only fine texture separates tumours from distractors,
    while large-blob images reward coarse shape context. Returns
    (image float32, mask uint8).
    """
    base = np.array(
        [rng.uniform(0.78, 0.9), rng.uniform(0.6, 0.72), rng.uniform(0.68, 0.8)]
    )  # pale tissue pink
    tumour_color = np.array(
        [rng.uniform(0.45, 0.58), rng.uniform(0.2, 0.32), rng.uniform(0.42, 0.55)]
    )  # darker purple

    image = np.empty((size, size, 3))
    background_field = _smooth_noise(rng, size, max(4, size // 16), amplitude=0.05)
    for ch in range(3):
        image[..., ch] = base[ch] + background_field
    image += rng.normal(0.0, 0.012, size=image.shape)

    mask = np.zeros((size, size), dtype=bool)
    scale = rng.uniform(0.06, 0.26)  # per-image blob size regime
    for _ in range(int(rng.integers(1, 5))):
        mask |= _ellipse_mask(
            size, rng, ax_lo=max(0.04, scale * 0.8), ax_hi=min(0.32, scale * 1.2)
        )

    speckle = rng.normal(0.0, 1.0, size=(size, size))
    tumour_tex = 0.10 * np.sign(speckle) + 0.05 * speckle  # harsh high-frequency grain
    for ch in range(3):
        image[..., ch] = np.where(mask, tumour_color[ch] + tumour_tex, image[..., ch])

    # distractors: tumour-colored but background-textured, never overlapping blobs
    for _ in range(int(rng.integers(1, 4))):
        for _ in range(8):
            blob = _ellipse_mask(size, rng, center_lo=0.1, center_hi=0.9, ax_lo=0.03, ax_hi=0.06)
            if not (blob & mask).any():
                shade = rng.uniform(-0.03, 0.03)
                for ch in range(3):
                    image[..., ch] = np.where(
                        blob, tumour_color[ch] + shade + background_field, image[..., ch]
                    )
                break

    return np.clip(image, 0.0, 1.0).astype(np.float32), mask.astype(np.uint8)


def synth_generate(n, size, seed):
    """Deterministic dataset of n (image, mask) pairs."""
    if size < 32:
        raise ValueError("size must be >= 32")
    rng = np.random.default_rng(seed)
    return [synth_sample(size, rng) for _ in range(n)]


# -- dataset directory layout ----------------------------------------------------------


def save_image(path, image):
    """8-bit RGB PNG from a float [0,1] (H, W, 3) array."""
    arr = np.clip(np.asarray(image) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def save_mask(path, mask):
    Image.fromarray((np.asarray(mask) * 255).astype(np.uint8), mode="L").save(path, format="PNG")


def load_image(path):
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0


def load_mask(path):
    with Image.open(path) as img:
        return (np.asarray(img.convert("L")) >= 128).astype(np.uint8)


def save_dataset(root, pairs, seed, folds_k=5):
    """Write images/, masks/, and manifest.json; every image is its own slide."""
    root.mkdir(parents=True, exist_ok=True)
    (root / "images").mkdir(exist_ok=True)
    (root / "masks").mkdir(exist_ok=True)
    ids = [f"sample{i:04d}" for i in range(len(pairs))]
    for sid, (image, mask) in zip(ids, pairs):
        save_image(root / "images" / f"{sid}.png", image)
        save_mask(root / "masks" / f"{sid}.png", mask)
    wsi = {sid: sid for sid in ids}
    if len(ids) >= folds_k:
        assignment = kfold_split(ids, k=folds_k, seed=seed)
        fold = {sid: assignment.wsi_to_fold[sid] for sid in ids}
    else:
        fold = {sid: None for sid in ids}
    manifest = {"ids": ids, "wsi": wsi, "fold": fold, "folds_k": folds_k, "seed": seed}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def load_manifest(root):
    return json.loads((root / "manifest.json").read_text())


def load_pair(root, sid):
    return load_image(root / "images" / f"{sid}.png"), load_mask(root / "masks" / f"{sid}.png")
