"""Parameter-free style/content cross normalization.

Style features are standardized with the *content* features' own per-token
statistics and added back as a scaled perturbation::

    mu_c, var_c = mean / biased variance of F_c over the feature axis
    F_s~        = (F_s - mu_c) / sqrt(var_c + eta)
    out         = F_c + gamma * F_s~

Nothing here is learned; gradients pass through to the style features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .nn import Tensor


@dataclass
class FusionConfig:
    gamma: float = 0.6
    eta: float = 1e-5
    hook_block: int = 2

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.eta <= 0:
            raise ValueError("eta must be > 0")
        if self.hook_block < 1:
            raise ValueError("hook_block must be >= 1")


@dataclass
class ContentStats:
    mu_c: Tensor       # (..., n, 1)
    sigma2_c: Tensor   # (..., n, 1)


def content_stats(content: Tensor) -> ContentStats:
    mu = nn.mean(content, axis=-1, keepdims=True)
    centered = content - mu
    return ContentStats(mu, nn.mean(centered * centered, axis=-1, keepdims=True))


def cross_normalize(style: Tensor, stats: ContentStats, eta: float = 1e-5) -> Tensor:
    return (style - stats.mu_c) / nn.sqrt(stats.sigma2_c + eta)


def fuse(content: Tensor, style: Tensor, cfg: FusionConfig | None = None, gamma=None) -> Tensor:
    """``content + gamma * cross_normalize(style)``.

    ``gamma`` overrides ``cfg.gamma``; an array broadcasting against the
    features gives per-row scales (a zero row returns the content row exactly).
    """
    cfg = cfg or FusionConfig()
    gamma = cfg.gamma if gamma is None else gamma
    return content + cross_normalize(style, content_stats(content), cfg.eta) * gamma


def width_index(style_dim: int, width: int) -> np.ndarray:
    """Feature j of a ``width``-wide block reads style element floor(j * d / width)."""
    return (np.arange(width) * style_dim) // width


def match_width(style: Tensor, width: int) -> Tensor:
    """Index-match the last axis of style features to the block width."""
    d = style.shape[-1]
    if d == width:
        return style
    return style[..., width_index(d, width)]


def tile_pooled(pooled: Tensor, tokens: int) -> Tensor:
    """(B, d) pooled features -> (B, tokens, d) by repeating each row."""
    b, d = pooled.shape
    return nn.broadcast_to(pooled.reshape(b, 1, d), (b, tokens, d))


class CrossFusion(nn.Module):
    """Module wrapper so parameter accounting sees the fusion step (it owns none)."""

    def __init__(self, cfg: FusionConfig | None = None):
        self.config = cfg or FusionConfig()

    def forward(self, content: Tensor, style: Tensor) -> Tensor:
        return fuse(content, match_width(style, content.shape[-1]), self.config)
