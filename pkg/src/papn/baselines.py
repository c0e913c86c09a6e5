"""Non-learned greedy route predictors."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import _kernels
from .decoder import RoutePrediction
from .instance import DISTANCE_CHANNEL, Instance, distance_greedy_route

KINDS = ("distance", "time")


def distance_greedy(inst: Instance) -> RoutePrediction:
    """Nearest available unvisited node, from the start point then the last stop."""
    return RoutePrediction(distance_greedy_route(inst).tolist())


def time_greedy(inst: Instance) -> RoutePrediction:
    """Earliest promised pickup first; ties by distance, then by index."""
    dist = np.ascontiguousarray(inst.edge_features[0, :, :, DISTANCE_CHANNEL])
    route = _kernels.greedy_route(np.ascontiguousarray(inst.promised(), dtype=np.float64),
                                  np.ascontiguousarray(inst.start_distances()), dist,
                                  np.ascontiguousarray(inst.masks), len(inst.label_route))
    return RoutePrediction(route.tolist())


class BaselinePredictor:
    def __init__(self, kind: str):
        if kind not in KINDS:
            raise ValueError(f"baseline kind must be one of {KINDS}, got {kind!r}")
        self.kind = kind

    def predict(self, instances: Sequence[Instance]) -> list[RoutePrediction]:
        fn = distance_greedy if self.kind == "distance" else time_greedy
        return [fn(inst) for inst in instances]


class LabelOracle:
    """Predicts each instance's own label; a perfect-model stand-in."""

    kind = "oracle"

    def predict(self, instances: Sequence[Instance]) -> list[RoutePrediction]:
        out = []
        for inst in instances:
            route = [int(v) for v in inst.label_route]
            probs = [np.eye(inst.n)[v].tolist() for v in route]
            out.append(RoutePrediction(route, probs))
        return out
