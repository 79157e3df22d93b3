"""Encoder-decoder segmentation network with configurable multi-scale fusion.

Depth D counts resolution levels: the encoder applies D-1 block+pool stages
(level i holds min(C*2^i, 16C) channels), a bottleneck block sits at level
D-1, and the decoder mirrors the encoder with bilinear upsampling. Input
dims must be divisible by 2^(D-1). Skip connections concatenate encoder
features into the decoder stage at the same level; multi-scale fusion draws
from the shallowest n_scales levels, where level D-1 means the bottleneck.
"""

from dataclasses import dataclass

from . import autodiff as ad
from .blocks import BasicBlock, ScaleAdaptiveFusion, SEBlock, ShortcutBlock, avg_fuse
from .layers import BatchNorm2d, Conv2d, Module, ModuleList, initialize

SKIP_FRACTIONS = ("1/1", "1/2", "1/4", "1/8")
_FRACTION_LEVEL = {"1/1": 0, "1/2": 1, "1/4": 2, "1/8": 3}
CHANNEL_CAP_FACTOR = 16


@dataclass(frozen=True)
class NetworkConfig:
    input_size: tuple = (64, 64)
    depth: int = 3
    width: int = 8
    skip_set: tuple = SKIP_FRACTIONS
    block_kind: str = "basic"
    attention: str = "none"
    fusion: str = "single"
    n_scales: int = 1

    def __post_init__(self):
        h, w = self.input_size
        if self.depth < 2:
            raise ValueError("depth must be >= 2")
        if self.width < 1:
            raise ValueError("width must be >= 1")
        factor = 2 ** (self.depth - 1)
        if h % factor or w % factor or h < factor or w < factor:
            raise ValueError(f"input {h}x{w} must be divisible by {factor} (depth {self.depth})")
        for f in self.skip_set:
            if f not in SKIP_FRACTIONS:
                raise ValueError(f"unknown skip fraction {f!r}")
        if len(set(self.skip_set)) != len(self.skip_set):
            raise ValueError("duplicate skip fractions")
        if self.block_kind not in ("basic", "shortcut"):
            raise ValueError(f"unknown block kind {self.block_kind!r}")
        if self.attention not in ("none", "se"):
            raise ValueError(f"unknown attention {self.attention!r}")
        if self.fusion not in ("single", "average", "adaptive"):
            raise ValueError(f"unknown fusion {self.fusion!r}")
        if not 1 <= self.n_scales <= 4:
            raise ValueError("n_scales must be in 1..4")
        if self.n_scales > self.depth:
            raise ValueError(f"n_scales {self.n_scales} exceeds depth {self.depth}")
        if self.fusion == "single" and self.n_scales != 1:
            raise ValueError("fusion=single implies n_scales=1")

    def channels(self, level):
        return min(self.width * 2**level, CHANNEL_CAP_FACTOR * self.width)

    def skip_levels(self):
        return {_FRACTION_LEVEL[f] for f in self.skip_set if _FRACTION_LEVEL[f] <= self.depth - 2}

    CANONICAL_FIELDS = (
        "input_h",
        "input_w",
        "depth",
        "width",
        "skip_set",
        "block_kind",
        "attention",
        "fusion",
        "n_scales",
    )

    def canonical_items(self):
        skips = ",".join(sorted(self.skip_set, key=lambda f: _FRACTION_LEVEL[f]))
        values = {
            "input_h": self.input_size[0],
            "input_w": self.input_size[1],
            "depth": self.depth,
            "width": self.width,
            "skip_set": skips,
            "block_kind": self.block_kind,
            "attention": self.attention,
            "fusion": self.fusion,
            "n_scales": self.n_scales,
        }
        return [(k, str(values[k])) for k in self.CANONICAL_FIELDS]

    @staticmethod
    def from_items(items):
        raw = dict(items)
        skips = tuple(s for s in raw["skip_set"].split(",") if s)
        return NetworkConfig(
            input_size=(int(raw["input_h"]), int(raw["input_w"])),
            depth=int(raw["depth"]),
            width=int(raw["width"]),
            skip_set=skips,
            block_kind=raw["block_kind"],
            attention=raw["attention"],
            fusion=raw["fusion"],
            n_scales=int(raw["n_scales"]),
        )


def _make_block(kind, in_ch, out_ch):
    return BasicBlock(in_ch, out_ch) if kind == "basic" else ShortcutBlock(in_ch, out_ch)


class DecoderStage(Module):
    """Bilinear x2, a 3x3 conv to this level's width, then a block over the
    optionally concatenated skip features."""

    def __init__(self, in_ch, out_ch, has_skip, block_kind):
        super().__init__()
        self.up = Conv2d(in_ch, out_ch, 3, pad=1)
        self.up_bn = BatchNorm2d(out_ch)
        self.block = _make_block(block_kind, out_ch * 2 if has_skip else out_ch, out_ch)

    def forward(self, x, skip):
        h = ad.relu(self.up_bn(self.up(ad.upsample_bilinear2(x))))
        if skip is not None:
            h = ad.concat([h, skip], axis=1)
        return self.block(h)


class SegNet(Module):
    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        d, kind = cfg.depth, cfg.block_kind
        skip_levels = cfg.skip_levels()

        self.enc = ModuleList(item_prefix="stage")
        in_ch = 3
        for level in range(d - 1):
            self.enc.append(_make_block(kind, in_ch, cfg.channels(level)))
            in_ch = cfg.channels(level)
        self.bottleneck = _make_block(kind, in_ch, cfg.channels(d - 1))
        if cfg.attention == "se":
            self.se = SEBlock(cfg.channels(d - 1))
        else:
            self.se = None

        dec = Module()
        for level in range(d - 1):
            stage = DecoderStage(
                cfg.channels(level + 1), cfg.channels(level), level in skip_levels, kind
            )
            setattr(dec, f"stage{level}", stage)
        self.dec = dec

        # fusion scale i reads the level-i map; level 0 is already C channels
        # at full resolution so only deeper scales need alignment convs
        if cfg.fusion != "single" and cfg.n_scales > 1:
            fuse = Module()
            for i in range(1, cfg.n_scales):
                setattr(fuse, f"align{i}", Conv2d(cfg.channels(i), cfg.width, 1))
            self.fuse = fuse
        else:
            self.fuse = None
        if cfg.fusion == "adaptive":
            self.safs = ScaleAdaptiveFusion(cfg.n_scales, cfg.width)
        else:
            self.safs = None

        self.head = Conv2d(cfg.width, 1, 1)

    def forward(self, x):
        """Image batch (B, 3, H, W) to probability maps (B, 1, H, W).

        Also stashes the most recent fusion weights on ``self.last_weights``
        (None unless fusion is adaptive).
        """
        cfg = self.cfg
        if x.data.ndim != 4 or x.shape[1] != 3 or tuple(x.shape[2:]) != tuple(cfg.input_size):
            raise ad.ShapeError(f"expected (B, 3, {cfg.input_size[0]}, {cfg.input_size[1]}), got {x.shape}")
        skip_levels = cfg.skip_levels()

        skips = {}
        h = x
        for level, stage in enumerate(self.enc):
            h = stage(h)
            if level in skip_levels:
                skips[level] = h
            h = ad.max_pool2(h)
        h = self.bottleneck(h)
        if self.se is not None:
            h = self.se(h)

        level_maps = {cfg.depth - 1: h}
        for level in range(cfg.depth - 2, -1, -1):
            stage = getattr(self.dec, f"stage{level}")
            h = stage(h, skips.get(level))
            level_maps[level] = h

        self.last_weights = None
        if cfg.fusion == "single" or cfg.n_scales == 1:
            fused = level_maps[0] if cfg.fusion != "adaptive" else None
            if cfg.fusion == "adaptive":
                fused, weights = self.safs([level_maps[0]])
                self.last_weights = weights.data
        else:
            aligned = [level_maps[0]]
            for i in range(1, cfg.n_scales):
                m = getattr(self.fuse, f"align{i}")(level_maps[i])
                for _ in range(i):
                    m = ad.upsample_bilinear2(m)
                aligned.append(m)
            if cfg.fusion == "average":
                fused = avg_fuse(aligned)
            else:
                fused, weights = self.safs(aligned)
                self.last_weights = weights.data

        return ad.sigmoid(self.head(fused))


def build(cfg, seed):
    """Deterministically initialized network for the given configuration."""
    return initialize(SegNet(cfg), seed)


def param_count(model):
    return sum(p.data.size for _, p in model.named_parameters() if p.trainable)
