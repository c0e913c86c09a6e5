"""Pickup episodes: data model, NDJSON I/O, synthetic generator and batching.

An :class:`Instance` is one courier episode with ``n`` pickup nodes observed
over ``t`` timesteps. Timestep ``s`` is the moment the courier makes choice
``s`` of the route, so ``masks[s]`` lists the parcels accepted by then.

Node feature channels written by :func:`generate` (``nf = 9``):

    0 accept time (min)        3 distance to start (km)   6 AOI id
    1 longitude (deg)          4 distance / daily average 7 AOI type
    2 latitude (deg)           5 promised - accept (min)  8 distance to AOI centre (km)

Edge feature channels (``ef = 2``): 0 haversine distance (km), 1 travel time
(min) with an asymmetric perturbation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _kernels

MAX_NODES = 25
NODE_FEATURES = 9
EDGE_FEATURES = 2
DIST_TO_START = 3
PROMISED_GAP = 5
DISTANCE_CHANNEL = 0

BOX_ORIGIN = (120.10, 30.20)
BOX_SIZE = 0.1
STEP_MINUTES = 20.0
URGENT_GAP = (15.0, 30.0)
NORMAL_GAP = (60.0, 240.0)

REQUIRED_KEYS = ("n", "t", "nf", "ef", "coords", "node_features", "edge_features",
                 "masks", "label_route")


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = f"line {line}: " if line is not None else ""
        what = f"field {field!r}: " if field else ""
        super().__init__(f"{where}{what}{message}")


class ValidationError(ValueError):
    pass


@dataclass(eq=False)
class Instance:
    node_features: np.ndarray    # t x n x nf
    edge_features: np.ndarray    # t x n x n x ef
    masks: np.ndarray            # t x n, 0/1
    label_route: np.ndarray      # route length
    coords: np.ndarray           # n x 2 (lon, lat)
    accept_times: np.ndarray | None = None
    promised_times: np.ndarray | None = None
    start: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.node_features.shape[1]

    @property
    def t(self) -> int:
        return self.node_features.shape[0]

    @property
    def nf(self) -> int:
        return self.node_features.shape[2]

    @property
    def ef(self) -> int:
        return self.edge_features.shape[3]

    def mask_row(self, step: int) -> np.ndarray:
        return self.masks[min(step, self.t - 1)]

    def start_distances(self) -> np.ndarray:
        if self.start is not None:
            pts = np.vstack([np.asarray(self.start, dtype=np.float64)[None, :], self.coords])
            return _kernels.haversine_matrix(pts)[0, 1:]
        if self.nf > DIST_TO_START:
            return self.node_features[0, :, DIST_TO_START]
        return np.zeros(self.n)

    def promised(self) -> np.ndarray:
        if self.promised_times is not None:
            return self.promised_times
        if self.nf > PROMISED_GAP:
            return self.node_features[0, :, 0] + self.node_features[0, :, PROMISED_GAP]
        return np.zeros(self.n)

    def to_dict(self) -> dict:
        d = {
            "n": self.n, "t": self.t, "nf": self.nf, "ef": self.ef,
            "coords": self.coords.tolist(),
            "node_features": self.node_features.tolist(),
            "edge_features": self.edge_features.tolist(),
            "masks": self.masks.astype(int).tolist(),
            "label_route": [int(v) for v in self.label_route],
        }
        for key in ("accept_times", "promised_times", "start"):
            val = getattr(self, key)
            if val is not None:
                d[key] = np.asarray(val).tolist()
        return d

    def same_as(self, other: Instance) -> bool:
        a, b = self.to_dict(), other.to_dict()
        return a == b


def validate(inst: Instance, max_nodes: int = MAX_NODES) -> None:
    """Raise :class:`ValidationError` if ``inst`` breaks a data-model invariant."""
    n, t = inst.n, inst.t
    if not 1 <= n <= max_nodes:
        raise ValidationError(f"node count {n} outside [1, {max_nodes}]")
    if t < 1:
        raise ValidationError("need at least one timestep")
    if inst.edge_features.shape[:3] != (t, n, n):
        raise ValidationError(f"edge_features shape {inst.edge_features.shape} != ({t}, {n}, {n}, ef)")
    if inst.masks.shape != (t, n):
        raise ValidationError(f"masks shape {inst.masks.shape} != ({t}, {n})")
    if inst.coords.shape != (n, 2):
        raise ValidationError(f"coords shape {inst.coords.shape} != ({n}, 2)")
    route = np.asarray(inst.label_route)
    if route.size == 0:
        raise ValidationError("label_route is empty")
    if route.min() < 0 or route.max() >= n:
        raise ValidationError("label_route holds an index outside [0, n)")
    if len(set(route.tolist())) != len(route):
        raise ValidationError("label_route repeats a node")
    for s, node in enumerate(route):
        if not inst.mask_row(s)[node]:
            raise ValidationError(f"label node {int(node)} unavailable at step {s}")


# -- NDJSON -------------------------------------------------------------------
def _array(obj: dict, key: str, shape: tuple[int, ...], line: int, dtype=np.float64) -> np.ndarray:
    try:
        arr = np.array(obj[key], dtype=dtype)
    except (ValueError, TypeError):
        raise ParseError("ragged or non-numeric array", line, key) from None
    if arr.shape != shape:
        raise ParseError(f"shape {arr.shape} != declared {shape}", line, key)
    return arr


def instance_from_dict(obj: dict, line: int | None = None) -> Instance:
    if not isinstance(obj, dict):
        raise ParseError("expected a JSON object", line)
    for key in REQUIRED_KEYS:
        if key not in obj:
            raise ParseError("missing", line, key)
    dims = {}
    for key in ("n", "t", "nf", "ef"):
        val = obj[key]
        if not isinstance(val, int) or isinstance(val, bool) or val < 1:
            raise ParseError("must be a positive integer", line, key)
        dims[key] = val
    n, t, nf, ef = dims["n"], dims["t"], dims["nf"], dims["ef"]
    masks = _array(obj, "masks", (t, n), line)
    if not np.isin(masks, (0, 1)).all():
        raise ParseError("entries must be 0 or 1", line, "masks")
    route = obj["label_route"]
    if not isinstance(route, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in route):
        raise ParseError("must be a list of integers", line, "label_route")
    optional = {}
    for key, shape in (("accept_times", (n,)), ("promised_times", (n,)), ("start", (2,))):
        if obj.get(key) is not None:
            optional[key] = _array(obj, key, shape, line)
    inst = Instance(
        node_features=_array(obj, "node_features", (t, n, nf), line),
        edge_features=_array(obj, "edge_features", (t, n, n, ef), line),
        masks=masks.astype(np.int8),
        label_route=np.array(route, dtype=np.int64),
        coords=_array(obj, "coords", (n, 2), line),
        **optional,
    )
    try:
        validate(inst)
    except ValidationError as exc:
        where = f"line {line}: " if line is not None else ""
        raise ValidationError(f"{where}{exc}") from None
    return inst


def load_ndjson(path: str | Path) -> list[Instance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
            out.append(instance_from_dict(obj, lineno))
    return out


def dumps(inst: Instance) -> str:
    return json.dumps(inst.to_dict(), separators=(",", ":"))


def save_ndjson(instances: Iterable[Instance], path: str | Path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(dumps(inst))
            fh.write("\n")
            count += 1
    return count


# -- generator ----------------------------------------------------------------
def _accept_steps(rng: np.random.Generator, n: int) -> np.ndarray:
    # Sorted step k is capped at k, so at least s + 1 parcels are open at step s.
    steps = np.where(rng.random(n) < 0.5, 0, rng.integers(0, n, size=n))
    order = np.argsort(steps, kind="stable")
    capped = np.minimum(steps[order], np.arange(n))
    out = np.empty(n, dtype=np.int64)
    out[order] = capped
    return out


def distance_greedy_route(inst: Instance, length: int | None = None) -> np.ndarray:
    """Nearest-available-first route from the start point (shared with baselines)."""
    length = len(inst.label_route) if length is None else length
    dist = np.ascontiguousarray(inst.edge_features[0, :, :, DISTANCE_CHANNEL])
    return _kernels.greedy_route(np.zeros(inst.n), np.ascontiguousarray(inst.start_distances()),
                                 dist, np.ascontiguousarray(inst.masks), length)


def urgent_first_route(inst: Instance, urgent: np.ndarray, length: int | None = None) -> np.ndarray:
    """Distance-greedy route that takes an open urgent node whenever one exists.

    With no urgent nodes this is exactly :func:`distance_greedy_route`.
    """
    length = len(inst.label_route) if length is None else length
    dist = np.ascontiguousarray(inst.edge_features[0, :, :, DISTANCE_CHANNEL])
    priority = np.where(np.asarray(urgent, dtype=bool), 0.0, 1.0)
    return _kernels.greedy_route(priority, np.ascontiguousarray(inst.start_distances()),
                                 dist, np.ascontiguousarray(inst.masks), length)


def _one(rng: np.random.Generator, n: int, t_rule, p_noise: float) -> Instance:
    lon0, lat0 = BOX_ORIGIN
    coords = np.column_stack([lon0 + BOX_SIZE * rng.random(n), lat0 + BOX_SIZE * rng.random(n)])
    start = np.array([lon0 + BOX_SIZE * rng.random(), lat0 + BOX_SIZE * rng.random()])
    dist = _kernels.haversine_matrix(np.ascontiguousarray(coords))
    travel = dist * (60.0 / 25.0) * (1.0 + 0.3 * rng.random((n, n)))
    np.fill_diagonal(travel, 0.0)

    accept_steps = _accept_steps(rng, n)
    accept = np.where(accept_steps > 0, (accept_steps - rng.random(n)) * STEP_MINUTES, 0.0)
    urgent = rng.random(n) < p_noise
    gap = np.where(urgent, rng.uniform(*URGENT_GAP, size=n), rng.uniform(*NORMAL_GAP, size=n))
    promised = accept + gap

    n_aoi = int(rng.integers(1, 4))
    aoi_centres = np.column_stack([lon0 + BOX_SIZE * rng.random(n_aoi), lat0 + BOX_SIZE * rng.random(n_aoi)])
    aoi_types = rng.integers(0, 5, size=n_aoi)
    to_aoi = _kernels.haversine_matrix(np.vstack([coords, aoi_centres]))[:n, n:]
    aoi_id = np.argmin(to_aoi, axis=1)
    daily_avg = rng.uniform(20.0, 60.0)

    start_dist = _kernels.haversine_matrix(np.vstack([start[None, :], coords]))[0, 1:]
    feats = np.column_stack([
        accept, coords[:, 0], coords[:, 1], start_dist, start_dist / daily_avg, gap,
        aoi_id.astype(np.float64), aoi_types[aoi_id].astype(np.float64),
        to_aoi[np.arange(n), aoi_id],
    ])
    t = n if t_rule == "route" else int(t_rule)
    step_times = np.arange(t) * STEP_MINUTES
    masks = (accept[None, :] <= step_times[:, None]).astype(np.int8)
    edges = np.stack([dist, travel], axis=-1)

    inst = Instance(
        node_features=np.broadcast_to(feats, (t, n, NODE_FEATURES)).copy(),
        edge_features=np.broadcast_to(edges, (t, n, n, EDGE_FEATURES)).copy(),
        masks=masks,
        label_route=np.zeros(0, dtype=np.int64),
        coords=coords,
        accept_times=accept,
        promised_times=promised,
        start=start,
    )
    inst.label_route = urgent_first_route(inst, urgent, n)
    return inst


def generate(seed: int, count: int, n_range: Sequence[int] = (2, 10), t_rule="route",
             p_noise: float = 0.0, max_nodes: int = MAX_NODES) -> list[Instance]:
    """Seeded synthetic episodes; identical arguments give identical output.

    Labels are the distance-greedy route; with ``p_noise > 0`` each node is
    urgent with that probability (short promised-time gap) and urgent nodes are
    promoted ahead by adjacent swaps, so the deviation from greedy is visible
    in the features.
    """
    lo, hi = int(n_range[0]), int(n_range[-1])
    if lo > hi:
        raise ValueError(f"empty n_range {tuple(n_range)}")
    if lo < 2 or hi > max_nodes:
        raise ValueError(f"n_range {tuple(n_range)} must lie within [2, {max_nodes}]")
    if t_rule != "route" and int(t_rule) < 1:
        raise ValueError("t_rule must be 'route' or a positive integer")
    children = np.random.SeedSequence(seed).spawn(count)
    out = []
    for child in children:
        rng = np.random.default_rng(child)
        n = int(rng.integers(lo, hi + 1))
        out.append(_one(rng, n, t_rule, p_noise))
    return out


# -- batching -----------------------------------------------------------------
@dataclass
class Batch:
    node_features: np.ndarray   # B x T x N x nf
    edge_features: np.ndarray   # B x T x N x N x ef
    masks: np.ndarray           # B x T x N
    pad_mask: np.ndarray        # B x N, 1 for real nodes
    time_mask: np.ndarray       # B x T, 1 for real timesteps
    labels: np.ndarray          # B x S, padded with 0
    label_len: np.ndarray       # B
    instances: list = field(default_factory=list, repr=False)

    @property
    def size(self) -> int:
        return self.node_features.shape[0]


def pad_batch(instances: Sequence[Instance]) -> Batch:
    """Stack instances, padding nodes with unavailable zeros and timesteps by
    repeating each instance's final row (so row ``min(s, t - 1)`` still holds)."""
    if not instances:
        raise ValueError("pad_batch needs at least one instance")
    B = len(instances)
    N = max(i.n for i in instances)
    T = max(i.t for i in instances)
    S = max(len(i.label_route) for i in instances)
    nf, ef = instances[0].nf, instances[0].ef
    nodef = np.zeros((B, T, N, nf))
    edgef = np.zeros((B, T, N, N, ef))
    masks = np.zeros((B, T, N))
    pad = np.zeros((B, N))
    tmask = np.zeros((B, T))
    labels = np.zeros((B, S), dtype=np.int64)
    lens = np.zeros(B, dtype=np.int64)
    for b, inst in enumerate(instances):
        if inst.nf != nf or inst.ef != ef:
            raise ValueError("instances in a batch must share nf and ef")
        n, t = inst.n, inst.t
        rows = np.minimum(np.arange(T), t - 1)
        nodef[b, :, :n] = inst.node_features[rows]
        edgef[b, :, :n, :n] = inst.edge_features[rows]
        masks[b, :, :n] = inst.masks[rows]
        pad[b, :n] = 1.0
        tmask[b, :t] = 1.0
        labels[b, :len(inst.label_route)] = inst.label_route
        lens[b] = len(inst.label_route)
    return Batch(nodef, edgef, masks, pad, tmask, labels, lens, list(instances))
