"""Training objectives: cross-entropy, windowed structural similarity, soft IoU.

All losses take a predicted probability map and a binary reference of the
same shape, return scalar Tensors, and are differentiable in the prediction.
Maps may be (H, W) or batched (B, 1, H, W); batched inputs are averaged over
the batch.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

CE_EPS = 1e-7


@dataclass(frozen=True)
class SsimConfig:
    """Window and scale settings for the structural-similarity losses.

    ``window`` is "uniform" or "gaussian" (with ``sigma``); statistics are
    population-style (window weights sum to 1). ``ms_weights`` defaults to
    uniform across ``ms_scales``.
    """

    K: int = 11
    C1: float = 0.01**2
    C2: float = 0.03**2
    window: str = "uniform"
    sigma: float = 1.5
    ms_scales: int = 1
    ms_weights: tuple = None

    def __post_init__(self):
        if self.K < 3 or self.K % 2 == 0:
            raise ValueError("K must be odd and >= 3")
        if self.C1 <= 0 or self.C2 <= 0:
            raise ValueError("C1 and C2 must be positive")
        if self.window not in ("uniform", "gaussian"):
            raise ValueError(f"unknown window {self.window!r}")
        if self.ms_scales < 1:
            raise ValueError("ms_scales must be >= 1")
        if self.ms_weights is not None:
            if len(self.ms_weights) != self.ms_scales:
                raise ValueError("need one weight per scale")
            if abs(sum(self.ms_weights) - 1.0) > 1e-9:
                raise ValueError("scale weights must sum to 1")

    def scale_weights(self):
        if self.ms_weights is not None:
            return tuple(float(w) for w in self.ms_weights)
        return (1.0 / self.ms_scales,) * self.ms_scales


@dataclass(frozen=True)
class LossSpec:
    """Which loss terms to combine, with per-term positive weights."""

    terms: tuple = ("ce",)
    weights: tuple = None

    VALID = ("ce", "ssim", "iou")

    def __post_init__(self):
        if not self.terms:
            raise ValueError("at least one loss term is required")
        for t in self.terms:
            if t not in self.VALID:
                raise ValueError(f"unknown loss term {t!r}")
        if len(set(self.terms)) != len(self.terms):
            raise ValueError("duplicate loss terms")
        if self.weights is not None:
            if len(self.weights) != len(self.terms):
                raise ValueError("need one weight per term")
            if any(w <= 0 for w in self.weights):
                raise ValueError("weights must be positive")

    def term_weights(self):
        if self.weights is None:
            return {t: 1.0 for t in self.terms}
        return dict(zip(self.terms, (float(w) for w in self.weights)))

    @staticmethod
    def parse(text):
        """Parse forms like "ce+ssim+iou" or "ce:1,ssim:0.5"."""
        terms, weights = [], []
        for piece in text.replace("+", ",").split(","):
            piece = piece.strip()
            if not piece:
                continue
            if ":" in piece:
                name, w = piece.split(":", 1)
                terms.append(name.strip())
                weights.append(float(w))
            else:
                terms.append(piece)
                weights.append(1.0)
        return LossSpec(terms=tuple(terms), weights=tuple(weights))


def _check_pair(mp, mg):
    if mp.shape != mg.shape:
        raise ShapeError(f"prediction {mp.shape} vs reference {mg.shape}")


def _as_batched(t):
    """View a map as (B, 1, H, W); returns the tensor and the batch size."""
    if t.data.ndim == 2:
        return t.reshape((1, 1) + t.shape), 1
    if t.data.ndim == 3:
        return t.reshape((t.shape[0], 1) + t.shape[1:]), t.shape[0]
    if t.data.ndim == 4:
        if t.shape[1] != 1:
            raise ShapeError(f"expected single-channel maps, got {t.shape}")
        return t, t.shape[0]
    raise ShapeError(f"expected 2-d to 4-d map, got {t.shape}")


def ce_loss(mp, mg):
    """Mean binary cross-entropy; predictions are clamped to [eps, 1-eps]."""
    _check_pair(mp, mg)
    p = ad.clip(mp, CE_EPS, 1.0 - CE_EPS)
    g = mg if isinstance(mg, Tensor) else Tensor(np.asarray(mg, dtype=p.dtype))
    return -(g * ad.log(p) + (1.0 - g) * ad.log(1.0 - p)).mean()


def _window_kernel(cfg, dtype):
    """Normalized window weights as a (1, 1, K, K) conv kernel."""
    k = cfg.K
    if cfg.window == "uniform":
        w = np.full((k, k), 1.0 / (k * k))
    else:
        half = (k - 1) / 2.0
        ax = np.arange(k) - half
        g = np.exp(-(ax**2) / (2.0 * cfg.sigma**2))
        w = np.outer(g, g)
        w /= w.sum()
    return Tensor(w.reshape(1, 1, k, k).astype(dtype))


def _ssim_maps(x, y, cfg, kernel):
    """Per-window luminance and contrast-structure terms over valid positions."""
    mu_x = ad.conv2d(x, kernel)
    mu_y = ad.conv2d(y, kernel)
    var_x = ad.conv2d(x * x, kernel) - mu_x * mu_x
    var_y = ad.conv2d(y * y, kernel) - mu_y * mu_y
    cov = ad.conv2d(x * y, kernel) - mu_x * mu_y
    lum = (2.0 * mu_x * mu_y + cfg.C1) / (mu_x * mu_x + mu_y * mu_y + cfg.C1)
    cs = (2.0 * cov + cfg.C2) / (var_x + var_y + cfg.C2)
    return lum, cs


def ssim_index(x, y, cfg=SsimConfig()):
    """Structural similarity of one aligned window pair (scalar in [-1, 1])."""
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=np.float64))
    if not isinstance(y, Tensor):
        y = Tensor(np.asarray(y, dtype=x.dtype))
    _check_pair(x, y)
    if x.data.ndim != 2 or x.shape[0] != cfg.K or x.shape[1] != cfg.K:
        raise ShapeError(f"expected a {cfg.K}x{cfg.K} window, got {x.shape}")
    kernel = _window_kernel(cfg, x.dtype)
    xb = x.reshape(1, 1, cfg.K, cfg.K)
    yb = y.reshape(1, 1, cfg.K, cfg.K)
    lum, cs = _ssim_maps(xb, yb, cfg, kernel)
    return (lum * cs).reshape(())


def ssim_loss(mp, mg, cfg=SsimConfig()):
    """Mean over all stride-1 windows of (1 - ssim_index)."""
    _check_pair(mp, mg)
    x, _ = _as_batched(mp)
    y, _ = _as_batched(mg if isinstance(mg, Tensor) else Tensor(np.asarray(mg, dtype=x.dtype)))
    if x.shape[2] < cfg.K or x.shape[3] < cfg.K:
        raise ShapeError(f"image {x.shape[2]}x{x.shape[3]} smaller than window {cfg.K}")
    kernel = _window_kernel(cfg, x.dtype)
    lum, cs = _ssim_maps(x, y, cfg, kernel)
    return (1.0 - lum * cs).mean()


def ms_ssim_loss(mp, mg, cfg=SsimConfig()):
    """Multi-scale variant: contrast-structure at fine scales, full index at
    the coarsest, combined as a weighted product. One scale reduces exactly
    to ``ssim_loss``.
    """
    if cfg.ms_scales == 1:
        return ssim_loss(mp, mg, cfg)
    _check_pair(mp, mg)
    x, _ = _as_batched(mp)
    y, _ = _as_batched(mg if isinstance(mg, Tensor) else Tensor(np.asarray(mg, dtype=x.dtype)))
    h, w = x.shape[2], x.shape[3]
    need = cfg.K * 2 ** (cfg.ms_scales - 1)
    if h < need or w < need:
        raise ShapeError(f"image {h}x{w} too small for {cfg.ms_scales} scales of window {cfg.K}")
    kernel = _window_kernel(cfg, x.dtype)
    weights = cfg.scale_weights()

    combined = None
    for j in range(cfg.ms_scales):
        lum, cs = _ssim_maps(x, y, cfg, kernel)
        term = (lum * cs).mean() if j == cfg.ms_scales - 1 else cs.mean()
        # clamp before the fractional power so the base is never negative
        factor = ad.relu(term) ** weights[j]
        combined = factor if combined is None else combined * factor
        if j < cfg.ms_scales - 1:
            if x.shape[2] % 2 or x.shape[3] % 2:
                raise ShapeError(f"dims {x.shape[2]}x{x.shape[3]} not even at scale {j}")
            x = ad.avg_pool2(x)
            y = ad.avg_pool2(y)
    return 1.0 - combined


def iou_loss(mp, mg):
    """Soft intersection-over-union loss, per sample, averaged over the batch.

    A sample whose prediction and reference are both identically zero
    contributes 0 (empty-vs-empty is a perfect match).
    """
    _check_pair(mp, mg)
    p, batch = _as_batched(mp)
    g, _ = _as_batched(mg if isinstance(mg, Tensor) else Tensor(np.asarray(mg, dtype=p.dtype)))
    per_sample = []
    for i in range(batch):
        pi, gi = p[i], g[i]
        union = (gi + pi - gi * pi).sum()
        if union.data == 0.0:
            per_sample.append(Tensor(np.zeros((), dtype=p.data.dtype)))
            continue
        inter = (gi * pi).sum()
        per_sample.append(1.0 - inter / union)
    if batch == 1:
        return per_sample[0]
    return ad.stack(per_sample, axis=0).mean()


_TERM_FNS = {
    "ce": lambda mp, mg, cfg: ce_loss(mp, mg),
    "ssim": lambda mp, mg, cfg: ms_ssim_loss(mp, mg, cfg),
    "iou": lambda mp, mg, cfg: iou_loss(mp, mg),
}


def combined_loss(mp, mg, spec=LossSpec(), cfg=SsimConfig()):
    """Weighted sum of the selected terms; also returns each term's value."""
    total = None
    parts = {}
    for term, weight in spec.term_weights().items():
        value = _TERM_FNS[term](mp, mg, cfg)
        parts[term] = float(value.data)
        piece = value if weight == 1.0 else value * weight
        total = piece if total is None else total + piece
    return total, parts
