"""The full encoder-decoder: embeddings, proximity attention, transformer, mixer, pointer decoder."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TrainConfig
from .decoder import PointerDecoder, RoutePrediction
from .encoder import Embedding, ProximityAttention, TransformerEncoder
from .instance import Batch, Instance, pad_batch
from .layers import Module
from .mixer import Mixer, aggregate


@dataclass
class Encoded:
    ctx: Tensor              # B x T x N x D, decoder node context per timestep row
    mask_attention: Tensor   # B x T x N x D
    local: Tensor            # B x T x N x D
    global_ctx: Tensor | None
    prev_feats: Tensor | None = None  # B x T x N x N x (H + D): log-attention heads, edge embedding


@dataclass
class FeatureScaler:
    """Per-channel standardisation fitted on the training set.

    Edge channels that are non-negative on the training set are first mapped
    through ``log1p(x / edge_shift)`` so that ratios between candidate edges,
    not their absolute scale, drive the embedding. ``edge_shift == 0`` marks a
    channel left linear.
    """

    node_mean: np.ndarray
    node_std: np.ndarray
    edge_mean: np.ndarray
    edge_std: np.ndarray
    edge_shift: np.ndarray

    LOG_SHIFT = 0.05   # fraction of the channel mean

    @classmethod
    def fit(cls, instances: Sequence[Instance]) -> FeatureScaler:
        nodes = np.concatenate([i.node_features.reshape(-1, i.nf) for i in instances])
        edges = np.concatenate([i.edge_features.reshape(-1, i.ef) for i in instances])
        mean = edges.mean(axis=0)
        shift = np.where((edges.min(axis=0) >= 0) & (mean > 0), cls.LOG_SHIFT * mean, 0.0)
        edges = _log_edges(edges, shift)

        def std(x):
            s = x.std(axis=0)
            return np.where(s > 1e-8, s, 1.0)

        return cls(nodes.mean(axis=0), std(nodes), edges.mean(axis=0), std(edges), shift)

    @classmethod
    def identity(cls, nf: int, ef: int) -> FeatureScaler:
        return cls(np.zeros(nf), np.ones(nf), np.zeros(ef), np.ones(ef), np.zeros(ef))

    def arrays(self) -> dict[str, np.ndarray]:
        return {"node_mean": self.node_mean, "node_std": self.node_std,
                "edge_mean": self.edge_mean, "edge_std": self.edge_std,
                "edge_shift": self.edge_shift}

    def apply(self, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
        nodef = (batch.node_features - self.node_mean) / self.node_std
        edgef = (_log_edges(batch.edge_features, self.edge_shift) - self.edge_mean) / self.edge_std
        nodef = nodef * batch.pad_mask[:, None, :, None]
        pair = batch.pad_mask[:, :, None] * batch.pad_mask[:, None, :]
        edgef = edgef * pair[:, None, :, :, None]
        return nodef, edgef


def _log_edges(edges: np.ndarray, shift: np.ndarray) -> np.ndarray:
    if not shift.any():
        return edges
    safe = np.where(shift > 0, shift, 1.0)
    return np.where(shift > 0, np.log1p(np.maximum(edges, 0.0) / safe), edges)


class PapnModel(Module):
    def __init__(self, config: TrainConfig, nf: int, ef: int, rng: np.random.Generator):
        D, H = config.hidden, config.heads
        self.config = config
        self.nf, self.ef = nf, ef
        self.embed = Embedding(rng, nf, ef, D)
        self.proximity = [ProximityAttention(rng, D, H, config.topk, config.leaky_slope)
                          for _ in range(config.proximity_layers)]
        self.transformer = TransformerEncoder(rng, D, H, config.encoder_layers, config.ffn_mult,
                                              config.norm_axis)
        self.mixer = Mixer(D, config.mixing, config.mixer_seed)
        self.decoder = PointerDecoder(rng, D, config.glimpses, H + D if config.prev_skew else None)
        self.scaler = FeatureScaler.identity(nf, ef)

    def encode(self, batch: Batch, rng: np.random.Generator | None = None) -> Encoded:
        cfg = self.config
        nodef, edgef = self.scaler.apply(batch)
        pad = batch.pad_mask[:, None, :]                       # B x 1 x N
        X, E, M = self.embed(nodef, edgef, batch.masks)
        for layer in self.proximity:
            out = layer(X, E, M, node_mask=pad)
            X, M = out.nodes, out.mask_attention
        local = X
        prev_feats = ad.concat([out.log_alpha, E], axis=-1) if cfg.prev_skew else None
        agg = aggregate(local, cfg.aggregation, pad, cfg.mean_denominator)   # B x T x D
        agg = self.mixer.agg_norm(agg)
        if cfg.ablation == "opapn":
            ctx = self.mixer.norm(local + ad.expand_dims(agg, -2))
            return Encoded(ctx, M, local, None, prev_feats)
        tw = batch.time_mask / batch.time_mask.sum(axis=1, keepdims=True)
        pooled = ad.tsum(local * tw[:, :, None, None], axis=1)              # B x N x D
        glob = self.transformer(pooled, node_mask=batch.pad_mask)
        ctx = self.mixer(agg, glob, rng)
        return Encoded(ctx, M, local, glob, prev_feats)

    def route_nll(self, batch: Batch, rng: np.random.Generator | None = None) -> Tensor:
        """Per-instance teacher-forced NLL, shape ``[B]``."""
        enc = self.encode(batch, rng)
        return self.decoder.route_nll(enc.ctx, enc.mask_attention, batch.masks,
                                      batch.labels, batch.label_len, enc.prev_feats)

    def loss(self, batch: Batch, rng: np.random.Generator | None = None) -> Tensor:
        return ad.mean(self.route_nll(batch, rng))

    def predict_batch(self, batch: Batch) -> list[RoutePrediction]:
        with ad.no_grad():
            enc = self.encode(batch)
            preds = self.decoder.greedy(enc.ctx, enc.mask_attention, batch.masks, batch.label_len,
                                        enc.prev_feats)
        for p, inst in zip(preds, batch.instances):
            p.stepwise_probs = [row[:inst.n] for row in p.stepwise_probs]
        return preds

    def predict(self, instances: Sequence[Instance], batch_size: int = 64) -> list[RoutePrediction]:
        out: list[RoutePrediction] = []
        for i in range(0, len(instances), batch_size):
            out.extend(self.predict_batch(pad_batch(instances[i:i + batch_size])))
        return out
