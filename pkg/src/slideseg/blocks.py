"""Convolutional building blocks, channel attention, and multi-scale fusion."""

import math

import numpy as np

from . import autodiff as ad
from .layers import BatchNorm2d, Conv2d, Linear, Module


def _reduced_dim(channels, rate):
    return max(1, math.ceil(channels / rate))


class BasicBlock(Module):
    """Two (conv -> BN -> ReLU) stages; spatial size preserved."""

    def __init__(self, in_channels, out_channels, kernel=3):
        super().__init__()
        if kernel % 2 == 0:
            raise ValueError("kernel must be odd to preserve spatial size")
        pad = (kernel - 1) // 2
        self.conv1 = Conv2d(in_channels, out_channels, kernel, pad=pad)
        self.bn1 = BatchNorm2d(out_channels)
        self.conv2 = Conv2d(out_channels, out_channels, kernel, pad=pad)
        self.bn2 = BatchNorm2d(out_channels)

    def forward(self, x):
        h = ad.relu(self.bn1(self.conv1(x)))
        return ad.relu(self.bn2(self.conv2(h)))


class ShortcutBlock(Module):
    """BasicBlock body plus a residual path, joined before the final ReLU.

    The shortcut is the identity when channel counts match, otherwise a 1x1
    projection conv with its own BN.
    """

    def __init__(self, in_channels, out_channels, kernel=3):
        super().__init__()
        if kernel % 2 == 0:
            raise ValueError("kernel must be odd to preserve spatial size")
        pad = (kernel - 1) // 2
        self.conv1 = Conv2d(in_channels, out_channels, kernel, pad=pad)
        self.bn1 = BatchNorm2d(out_channels)
        self.conv2 = Conv2d(out_channels, out_channels, kernel, pad=pad)
        self.bn2 = BatchNorm2d(out_channels)
        if in_channels != out_channels:
            self.proj = Conv2d(in_channels, out_channels, 1)
            self.proj_bn = BatchNorm2d(out_channels)
        else:
            self.proj = None

    def forward(self, x):
        h = ad.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        shortcut = x if self.proj is None else self.proj_bn(self.proj(x))
        return ad.relu(h + shortcut)


class SEBlock(Module):
    """Squeeze-and-excitation: global pooling drives a per-channel gate."""

    def __init__(self, channels, rate=8):
        super().__init__()
        hidden = _reduced_dim(channels, rate)
        self.fc1 = Linear(channels, hidden)
        self.fc2 = Linear(hidden, channels)

    def forward(self, x):
        squeeze = x.data.ndim == 3
        if squeeze:
            x = x.reshape((1,) + x.shape)
        scale = ad.sigmoid(self.fc2(ad.relu(self.fc1(ad.global_avg_pool(x)))))
        out = x * scale.reshape(scale.shape + (1, 1))
        return out.reshape(out.shape[1:]) if squeeze else out


def avg_fuse(maps):
    """Elementwise mean of equally shaped feature maps."""
    if not maps:
        raise ValueError("avg_fuse needs at least one map")
    for m in maps[1:]:
        if m.shape != maps[0].shape:
            raise ad.ShapeError(f"avg_fuse shape mismatch: {m.shape} vs {maps[0].shape}")
    total = maps[0]
    for m in maps[1:]:
        total = total + m
    return total / float(len(maps))


class ScaleAdaptiveFusion(Module):
    """Select per-channel convex combinations of same-shape feature maps.

    The summed map's channel statistics pass through a shared reduction FC
    and ReLU; each branch then projects the reduced code back to one logit
    per channel, and a softmax across branches turns the stacked logits into
    the selection weights q.
    """

    def __init__(self, n_branches, channels, rate=8):
        super().__init__()
        if n_branches < 1:
            raise ValueError("need at least one branch")
        self.n_branches = n_branches
        self.channels = channels
        self.reduce = Linear(channels, _reduced_dim(channels, rate))
        for i in range(n_branches):
            setattr(self, f"branch{i}", Linear(_reduced_dim(channels, rate), channels))

    @property
    def branches(self):
        return [getattr(self, f"branch{i}") for i in range(self.n_branches)]

    def forward(self, maps):
        """Fuse ``maps`` (each C×H×W or B×C×H×W); returns (fused, weights).

        Weights have shape (n, C) unbatched or (n, B, C) batched; they are
        non-negative and sum to 1 across branches for every channel.
        """
        if len(maps) != self.n_branches:
            raise ValueError(f"expected {self.n_branches} maps, got {len(maps)}")
        squeeze = maps[0].data.ndim == 3
        if squeeze:
            maps = [m.reshape((1,) + m.shape) for m in maps]
        for m in maps[1:]:
            if m.shape != maps[0].shape:
                raise ad.ShapeError(f"fusion shape mismatch: {m.shape} vs {maps[0].shape}")
        if maps[0].shape[1] != self.channels:
            raise ad.ShapeError(f"expected {self.channels} channels, got {maps[0].shape[1]}")

        total = maps[0]
        for m in maps[1:]:
            total = total + m
        pooled = ad.global_avg_pool(total)
        code = ad.relu(self.reduce(pooled))
        logits = ad.stack([branch(code) for branch in self.branches], axis=0)
        weights = ad.softmax(logits, axis=0)  # (n, B, C)

        fused = None
        for i, m in enumerate(maps):
            term = m * weights[i].reshape(weights.shape[1:] + (1, 1))
            fused = term if fused is None else fused + term
        if squeeze:
            fused = fused.reshape(fused.shape[1:])
            weights = weights.reshape((self.n_branches, self.channels))
        return fused, weights
