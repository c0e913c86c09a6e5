"""Initialisation, Adam, the training loop, evaluation, sweeps and checkpoints."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor
from .baselines import BaselinePredictor, LabelOracle
from .config import TrainConfig, from_dict
from .instance import Instance, pad_batch
from .metrics import MetricReport, evaluate_routes
from .mixer import AGGREGATIONS, MIXINGS
from .model import FeatureScaler, PapnModel

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class FingerprintMismatch(RuntimeError):
    def __init__(self, expected: str, found: str):
        self.expected = expected
        self.found = found
        super().__init__(f"config fingerprint mismatch: expected {expected}, checkpoint has {found}")


def init_params(config: TrainConfig, seed: int | None = None, nf: int = 9, ef: int = 2) -> PapnModel:
    """Xavier-uniform weights, zero biases, unit norm gains; deterministic per seed."""
    seed = config.seed if seed is None else seed
    return PapnModel(config, nf, ef, np.random.default_rng(seed))


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            p.data -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads:
            g *= scale
    return norm


# -- evaluation ---------------------------------------------------------------
def evaluate(predictor, dataset: Sequence[Instance], ks: Sequence[int] = (3,), name: str = "") -> MetricReport:
    """Greedy-decode every instance and aggregate metrics against its label."""
    if not dataset:
        raise ValueError("evaluate needs a non-empty dataset")
    preds = predictor.predict(dataset)
    return evaluate_routes((p.route for p in preds), (i.label_route for i in dataset), ks, name)


# -- training -----------------------------------------------------------------
@dataclass
class History:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_krc: float = float("-inf")
    fingerprint: str = ""

    def to_dict(self) -> dict:
        return {"fingerprint": self.fingerprint, "best_epoch": self.best_epoch,
                "best_krc": self.best_krc, "epochs": self.epochs}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def _state(model: PapnModel) -> dict[str, np.ndarray]:
    return {k: p.data.copy() for k, p in model.named_parameters().items()}


def _load_state(model: PapnModel, state: dict[str, np.ndarray]) -> None:
    for k, p in model.named_parameters().items():
        p.data[...] = state[k]


def train(config: TrainConfig, train_set: Sequence[Instance], val_set: Sequence[Instance] | None = None,
          eval_every: int = 1, callback: Callable[[dict], None] | None = None,
          keep_best: bool = True) -> tuple[PapnModel, History]:
    """Adam on mean teacher-forced NLL; returns the best-validation-KRC parameters.

    ``val_set`` defaults to ``train_set``. The returned model also carries the
    fitted feature scaler and a ``optimizer`` attribute for checkpointing.
    """
    if not train_set:
        raise ValueError("train needs a non-empty training set")
    val_set = train_set if val_set is None else val_set
    if not val_set:
        raise ValueError("train needs a non-empty validation set")
    first = train_set[0]
    model = init_params(config, config.seed, first.nf, first.ef)
    model.scaler = FeatureScaler.fit(train_set)
    params = model.named_parameters()
    opt = Adam(params, config.lr, config.beta1, config.beta2, config.adam_eps)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    mix_rng = np.random.default_rng([config.mixer_seed, 2])
    history = History(fingerprint=config.fingerprint())
    best_state = None
    n = len(train_set)

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = pad_batch([train_set[i] for i in idx])
            opt.zero_grad()
            loss = model.loss(batch, mix_rng)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite loss {value} at epoch {epoch}, batch starting at position "
                    f"{start} (instance indices {idx.tolist()})")
            loss.backward()
            if config.clip_norm > 0:
                clip_grad_norm(list(params.values()), config.clip_norm)
            opt.step()
            total += value * len(idx)
            seen += len(idx)
        record = {"epoch": epoch, "train_loss": total / seen}
        if epoch % eval_every == 0 or epoch == config.epochs:
            report = evaluate(model, val_set, name="val")
            record["val"] = report.to_dict()
            if report.krc[0] > history.best_krc or best_state is None:
                history.best_krc = report.krc[0]
                history.best_epoch = epoch
                best_state = _state(model) if keep_best else None
        history.epochs.append(record)
        log.info("epoch %d loss %.6f%s", epoch, record["train_loss"],
                 f" val krc {record['val']['krc']['mean']:.4f}" if "val" in record else "")
        if callback is not None:
            callback(record)

    if keep_best and best_state is not None:
        _load_state(model, best_state)
    model.optimizer = opt
    model.epoch = config.epochs
    return model, history


def lr_sweep(config: TrainConfig, grid: Sequence[float], train_set, val_set, **kw) -> list[dict]:
    """One independent run per learning rate; rows sorted by validation KRC."""
    if not grid:
        raise ValueError("lr grid is empty")
    rows = []
    for lr in grid:
        cfg = config.replace(lr=float(lr))
        model, _ = train(cfg, train_set, val_set, **kw)
        rows.append({"lr": float(lr), "report": evaluate(model, val_set, name=f"lr={lr:g}")})
    return sorted(rows, key=lambda r: -r["report"].krc[0])


def mix_sweep(config: TrainConfig, train_set, val_set, **kw) -> list[dict]:
    """Every aggregation x mixing combination; rows sorted by validation KRC."""
    rows = []
    for agg in AGGREGATIONS:
        for mixing in MIXINGS:
            cfg = config.replace(aggregation=agg, mixing=mixing)
            model, _ = train(cfg, train_set, val_set, **kw)
            name = f"{agg}/{mixing}"
            rows.append({"aggregation": agg, "mixing": mixing,
                         "report": evaluate(model, val_set, name=name)})
    return sorted(rows, key=lambda r: -r["report"].krc[0])


def ablation_study(config: TrainConfig, train_set, val_set, seeds: Sequence[int], **kw) -> list[MetricReport]:
    """OPAPN vs full model over several seeds; spread is across seeds."""
    out = []
    for label, ablation in (("OPAPN", "opapn"), ("PAPN-Mixed", "none")):
        per_seed = []
        for seed in seeds:
            model, _ = train(config.replace(ablation=ablation, seed=seed), train_set, val_set, **kw)
            per_seed.append(evaluate(model, val_set))
        out.append(_across_seeds(per_seed, label))
    return out


def _across_seeds(reports: Sequence[MetricReport], name: str) -> MetricReport:
    def spread(values):
        arr = np.asarray(values)
        return float(arr.mean()), float(arr.std())

    ks = reports[0].hr.keys()
    return MetricReport(
        {k: spread([r.hr[k][0] for r in reports]) for k in ks},
        spread([r.krc[0] for r in reports]), spread([r.lsd[0] for r in reports]),
        spread([r.ed[0] for r in reports]), len(reports), 0, name)


# -- checkpoints --------------------------------------------------------------
def save_checkpoint(path: str | Path, model: PapnModel, optimizer: Adam | None = None,
                    epoch: int = 0, rng_state: dict | None = None) -> None:
    arrays = {f"param/{k}": v for k, v in _state(model).items()}
    arrays.update({f"scaler/{k}": v for k, v in model.scaler.arrays().items()})
    if optimizer is not None:
        arrays.update({f"adam_m/{k}": v for k, v in optimizer.m.items()})
        arrays.update({f"adam_v/{k}": v for k, v in optimizer.v.items()})
    meta = {
        "version": CHECKPOINT_VERSION, "predictor": "papn", "config": model.config.to_dict(),
        "fingerprint": model.config.fingerprint(), "nf": model.nf, "ef": model.ef,
        "epoch": epoch, "adam_t": optimizer.t if optimizer is not None else 0,
        "rng_state": rng_state,
    }
    _write(path, meta, arrays)


def save_oracle_checkpoint(path: str | Path, config: TrainConfig | None = None) -> None:
    """A parameter-free checkpoint that decodes every instance to its label."""
    config = config or TrainConfig()
    meta = {"version": CHECKPOINT_VERSION, "predictor": "oracle", "config": config.to_dict(),
            "fingerprint": config.fingerprint()}
    _write(path, meta, {})


def _write(path, meta: dict, arrays: dict) -> None:
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path: str | Path, expected: TrainConfig | None = None):
    """Return ``(predictor, meta)``; refuse when ``expected`` has another fingerprint."""
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
    config = from_dict(meta["config"])
    if config.fingerprint() != meta["fingerprint"]:
        raise FingerprintMismatch(config.fingerprint(), meta["fingerprint"])
    if expected is not None and expected.fingerprint() != meta["fingerprint"]:
        raise FingerprintMismatch(expected.fingerprint(), meta["fingerprint"])
    if meta["predictor"] == "oracle":
        return LabelOracle(), meta
    if meta["predictor"] in ("distance", "time"):
        return BaselinePredictor(meta["predictor"]), meta
    model = PapnModel(config, meta["nf"], meta["ef"], np.random.default_rng(0))
    _load_state(model, {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")})
    model.scaler = FeatureScaler(**{k[len("scaler/"):]: v for k, v in arrays.items()
                                    if k.startswith("scaler/")})
    opt = Adam(model.named_parameters(), config.lr, config.beta1, config.beta2, config.adam_eps)
    opt.t = meta.get("adam_t", 0)
    for k in opt.m:
        if f"adam_m/{k}" in arrays:
            opt.m[k] = arrays[f"adam_m/{k}"].copy()
            opt.v[k] = arrays[f"adam_v/{k}"].copy()
    model.optimizer = opt
    model.epoch = meta.get("epoch", 0)
    return model, meta
