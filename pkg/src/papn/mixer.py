"""Node-axis aggregation of the local embedding and mixing with global context."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import ConfigError, LayerNorm, Module

AGGREGATIONS = ("sum", "mean", "max", "min")
MIXINGS = ("sum", "random_select")


def aggregate(local, method: str = "sum", node_mask=None, mean_denominator: str = "nodes") -> Tensor:
    """Reduce ``[..., N, D]`` over the node axis to ``[..., D]``.

    Padded nodes (``node_mask == 0``) are ignored by every method. ``mean``
    divides by the real node count, or by the hidden size when
    ``mean_denominator == "hidden"``.
    """
    local = ad.as_tensor(local)
    if method not in AGGREGATIONS:
        raise ConfigError(f"aggregation must be one of {AGGREGATIONS}, got {method!r}")
    if local.ndim < 2 or local.shape[-2] == 0:
        raise ValueError(f"aggregate needs at least one node, got shape {local.shape}")
    mask = None if node_mask is None else np.asarray(node_mask, dtype=np.float64)[..., None]
    if method in ("sum", "mean"):
        total = ad.tsum(local if mask is None else local * mask, axis=-2)
        if method == "sum":
            return total
        if mean_denominator == "hidden":
            return total * (1.0 / local.shape[-1])
        if mean_denominator != "nodes":
            raise ConfigError(f"mean_denominator must be 'nodes' or 'hidden', got {mean_denominator!r}")
        count = local.shape[-2] if mask is None else mask.sum(axis=-2)
        return total / count
    fill = -np.inf if method == "max" else np.inf
    x = local if mask is None else ad.masked_fill(local, mask, fill)
    return ad.tmax(x, axis=-2) if method == "max" else ad.tmin(x, axis=-2)


class Mixer(Module):
    """Broadcasts a per-step aggregate against per-node global context, then normalises."""

    def __init__(self, hidden: int, method: str = "sum", seed: int = 0):
        if method not in MIXINGS:
            raise ConfigError(f"mixing must be one of {MIXINGS}, got {method!r}")
        self.method = method
        self.seed = seed
        self.agg_norm = LayerNorm(hidden)
        self.norm = LayerNorm(hidden)

    def __call__(self, local_agg, global_ctx, rng: np.random.Generator | None = None) -> Tensor:
        """``local_agg`` is ``[..., T, D]``, ``global_ctx`` ``[..., N, D]``; returns ``[..., T, N, D]``."""
        local_agg, global_ctx = ad.as_tensor(local_agg), ad.as_tensor(global_ctx)
        if local_agg.shape[-1] != global_ctx.shape[-1]:
            raise ConfigError(
                f"hidden size mismatch: local {local_agg.shape} vs global {global_ctx.shape}")
        loc = ad.expand_dims(local_agg, -2)     # [..., T, 1, D]
        glob = ad.expand_dims(global_ctx, -3)   # [..., 1, N, D]
        if self.method == "sum":
            return self.norm(loc + glob)
        shape = np.broadcast_shapes(loc.shape, glob.shape)
        if rng is None:
            rng = np.random.default_rng(self.seed)
        pick_global = rng.random(shape) < 0.5
        return self.norm(ad.where(pick_global, glob, loc))
