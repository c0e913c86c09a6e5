"""Autoregressive pointer decoder with LSTM state, glimpses and mask-attention skew.

Decoding runs on batches in lockstep. ``node_ctx`` is ``[B, T, N, D]``: the
mixed node embeddings for every timestep row. Step ``s`` reads row
``min(s, T - 1)``; batches repeat each instance's final row, so that matches
the per-instance ``min(s, t - 1)`` rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NEG_INF, Tensor
from .layers import Linear, Module, xavier_uniform, zeros


class DecodeExhaustedError(RuntimeError):
    """No node is both available and unvisited at a decode step."""


class InfeasibleLabelError(ValueError):
    """A label node is masked out at the step where the label visits it."""


@dataclass
class DecoderState:
    h: Tensor
    c: Tensor
    visited: np.ndarray          # B x N bool
    step: int = 0
    prev: np.ndarray | None = None   # B, node chosen at the previous step


@dataclass
class StepOutput:
    log_probs: Tensor            # B x N; -inf where excluded
    probs: np.ndarray            # B x N


@dataclass
class RoutePrediction:
    route: list[int]
    stepwise_probs: list[list[float]] = field(default_factory=list)


class LSTMCell(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, hidden: int):
        self.hidden = hidden
        self.W_ih = Linear(rng, d_in, 4 * hidden)
        self.W_hh = Linear(rng, hidden, 4 * hidden, bias=False)

    def __call__(self, z, h, c):
        gates = self.W_ih(z) + self.W_hh(h)
        H = self.hidden
        i = ad.sigmoid(gates[..., :H])
        f = ad.sigmoid(gates[..., H:2 * H])
        g = ad.tanh(gates[..., 2 * H:3 * H])
        o = ad.sigmoid(gates[..., 3 * H:])
        c = f * c + i * g
        return o * ad.tanh(c), c


class Glimpse(Module):
    """Additive attention read ``v^T tanh(W [q; V_j])`` that returns a new query."""

    def __init__(self, rng: np.random.Generator, hidden: int):
        self.W_q = Linear(rng, hidden, hidden, bias=False)
        self.W_ref = Linear(rng, hidden, hidden, bias=False)
        self.v = xavier_uniform(rng, hidden, 1)

    def scores(self, q, ref_proj) -> Tensor:
        hidden = ad.tanh(ref_proj + ad.expand_dims(self.W_q(q), -2))
        return ad.matmul(hidden, self.v).reshape(ref_proj.shape[:-1])


class PointerDecoder(Module):
    def __init__(self, rng: np.random.Generator, hidden: int, glimpses: int = 1,
                 prev_width: int | None = None):
        self.hidden = hidden
        self.start = xavier_uniform(rng, hidden, 1, (hidden,))
        self.lstm = LSTMCell(rng, hidden, hidden)
        self.glimpses = [Glimpse(rng, hidden) for _ in range(glimpses)]
        self.pointer = Glimpse(rng, hidden)
        self.skew = Linear(rng, hidden, 1, bias=False)
        # weights on the previous node's pairwise row (proximity log-attention heads, edge embedding)
        self.prev_skew = xavier_uniform(rng, prev_width, 1) if prev_width else None

    # -- pieces -----------------------------------------------------------
    def init_state(self, batch: int, n: int) -> DecoderState:
        h = Tensor(np.zeros((batch, self.hidden)))
        return DecoderState(h, h, np.zeros((batch, n), dtype=bool))

    def mask_skew(self, mask_attention) -> Tensor:
        """Scalar per node from the ``D``-wide mask attention."""
        m = ad.as_tensor(mask_attention)
        return self.skew(m).reshape(m.shape[:-1])

    def precompute(self, node_ctx):
        """Per-row projections of the node context reused by every step."""
        node_ctx = ad.as_tensor(node_ctx)
        return {
            "ctx": node_ctx,
            "glimpse": [g.W_ref(node_ctx) for g in self.glimpses],
            "pointer": self.pointer.W_ref(node_ctx),
        }

    def decode_step(self, state: DecoderState, cache: dict, row: int, skew: Tensor | None,
                    avail: np.ndarray, prev_feats: Tensor | None = None) -> tuple[StepOutput, DecoderState]:
        """Advance one step. ``avail`` (B x N) marks nodes open at this step.

        ``prev_feats`` (B x T x N x N x F), when given together with learned
        weights, adds a linear read of the previous node's pairwise row to the logits.
        """
        ctx = cache["ctx"]
        B = ctx.shape[0]
        allowed = np.asarray(avail, dtype=bool) & ~state.visited
        if not allowed.any(axis=1).all():
            bad = int(np.flatnonzero(~allowed.any(axis=1))[0])
            raise DecodeExhaustedError(f"batch item {bad}: no available unvisited node at step {state.step}")
        if state.prev is None:
            z = ad.broadcast_to(self.start, (B, self.hidden))
        else:
            prev_row = min(state.step - 1, ctx.shape[1] - 1)
            z = ctx[np.arange(B), prev_row, state.prev]
        h, c = self.lstm(z, state.h, state.c)

        V = ctx[:, row]
        q = h
        for glimpse, ref in zip(self.glimpses, cache["glimpse"]):
            e = ad.masked_fill(glimpse.scores(q, ref[:, row]), allowed, NEG_INF)
            a = ad.softmax(e, axis=-1)
            q = ad.matmul(ad.expand_dims(a, -2), V).reshape((B, self.hidden))
        logits = self.pointer.scores(q, cache["pointer"][:, row])
        if skew is not None:
            logits = logits + skew
        if prev_feats is not None and self.prev_skew is not None and state.prev is not None:
            rowwise = prev_feats[np.arange(B), row, state.prev]         # B x N x F
            rowwise = ad.masked_fill(rowwise, allowed[..., None], 0.0)
            logits = logits + ad.matmul(rowwise, self.prev_skew).reshape((B, -1))
        log_probs = ad.log_softmax(ad.masked_fill(logits, allowed, NEG_INF), axis=-1)
        probs = np.exp(log_probs.data)
        new_state = DecoderState(h, c, state.visited.copy(), state.step + 1, None)
        return StepOutput(log_probs, probs), new_state

    @staticmethod
    def _advance(state: DecoderState, chosen: np.ndarray) -> DecoderState:
        state.visited[np.arange(len(chosen)), chosen] = True
        state.prev = chosen
        return state

    # -- full passes ------------------------------------------------------
    def _rows(self, T: int, S: int):
        return [min(s, T - 1) for s in range(S)]

    def route_nll(self, node_ctx, mask_attention, masks, labels, label_len,
                  prev_feats: Tensor | None = None) -> Tensor:
        """Teacher-forced negative log-likelihood of each label route, shape ``[B]``."""
        labels = np.asarray(labels)
        label_len = np.asarray(label_len)
        cache = self.precompute(node_ctx)
        skew = None if mask_attention is None else self.mask_skew(mask_attention)
        B, T, N = cache["ctx"].shape[:3]
        S = labels.shape[1]
        state = self.init_state(B, N)
        total = Tensor(np.zeros(B))
        idx = np.arange(B)
        for s, row in enumerate(self._rows(T, S)):
            live = s < label_len
            target = np.where(live, labels[:, s], 0)
            avail = np.asarray(masks)[:, row] > 0
            if np.any(live & ~avail[idx, target]):
                bad = int(np.flatnonzero(live & ~avail[idx, target])[0])
                raise InfeasibleLabelError(
                    f"batch item {bad}: label node {int(labels[bad, s])} is masked at step {s}")
            # finished items get a forced dummy choice with zero weight
            avail = np.where(live[:, None], avail, False)
            avail[~live, 0] = True
            state.visited[~live] = False
            out, state = self.decode_step(state, cache, row, None if skew is None else skew[:, row],
                                          avail, prev_feats)
            picked = out.log_probs[idx, target]
            total = total - picked * live.astype(np.float64)
            state = self._advance(state, target)
        return total

    def greedy(self, node_ctx, mask_attention, masks, lengths,
               prev_feats: Tensor | None = None) -> list[RoutePrediction]:
        """Argmax decoding; each item stops after ``lengths[b]`` picks."""
        lengths = np.asarray(lengths)
        with ad.no_grad():
            cache = self.precompute(node_ctx)
            skew = None if mask_attention is None else self.mask_skew(mask_attention)
            B, T, N = cache["ctx"].shape[:3]
            S = int(lengths.max())
            state = self.init_state(B, N)
            preds = [RoutePrediction([]) for _ in range(B)]
            for s, row in enumerate(self._rows(T, S)):
                live = s < lengths
                avail = np.asarray(masks)[:, row] > 0
                avail = np.where(live[:, None], avail, False)
                avail[~live, 0] = True
                state.visited[~live] = False
                out, state = self.decode_step(state, cache, row, None if skew is None else skew[:, row],
                                              avail, prev_feats)
                chosen = np.argmax(out.probs, axis=1)
                for b in np.flatnonzero(live):
                    preds[b].route.append(int(chosen[b]))
                    preds[b].stepwise_probs.append(out.probs[b].tolist())
                state = self._advance(state, chosen)
        return preds
