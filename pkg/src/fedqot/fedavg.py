"""Federated averaging: local SGD on each ECN, sample-weighted averaging on the TCN."""
from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import AggregationError, RoundFailure, SchemaError, TrainingDivergence, UsageError
from .nn import ModelSpec, ParameterVector, SGDTrainer, evaluate_accuracy, init_params

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Hyperparams:
    eta: float = 0.01
    local_epochs: int = 2
    batch_size: int = 64
    rounds: int = 30
    shuffle_seed: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.eta) and self.eta >= 0):
            raise UsageError(f"eta must be a finite non-negative number, got {self.eta}")
        if self.local_epochs < 0:
            raise UsageError(f"local_epochs must be >= 0, got {self.local_epochs}")
        if self.batch_size < 1:
            raise UsageError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.rounds < 1:
            raise UsageError(f"rounds must be >= 1, got {self.rounds}")

    def to_dict(self) -> dict:
        return {"eta": self.eta, "local_epochs": self.local_epochs, "batch_size": self.batch_size,
                "rounds": self.rounds, "shuffle_seed": self.shuffle_seed}

    @classmethod
    def from_dict(cls, d: dict) -> Hyperparams:
        return cls(float(d["eta"]), int(d["local_epochs"]), int(d["batch_size"]),
                   int(d["rounds"]), int(d["shuffle_seed"]))


@dataclass(frozen=True)
class EcnDescriptor:
    ecn_id: str
    n_samples: int
    schema_hash: int


@dataclass(frozen=True)
class RoundRecord:
    round: int
    mean_local_loss: float | None
    eval_accuracy: float | None


@dataclass
class RoundState:
    """Coordinator bookkeeping for one round; closes when all expected ECNs reported or the deadline passed."""

    round_index: int
    global_params: ParameterVector
    expected: frozenset
    deadline: float = math.inf
    received: dict = field(default_factory=dict)

    def add(self, ecn_id: str, params: ParameterVector, n_samples: int) -> None:
        if ecn_id not in self.expected:
            raise AggregationError(f"unexpected update from {ecn_id!r} in round {self.round_index}")
        if params.spec != self.global_params.spec:
            raise SchemaError(f"update from {ecn_id!r} has spec {params.spec}, expected {self.global_params.spec}")
        self.received[ecn_id] = (params, int(n_samples))

    @property
    def complete(self) -> bool:
        return set(self.received) == set(self.expected)

    def expired(self, now: float | None = None) -> bool:
        return (time.monotonic() if now is None else now) >= self.deadline

    @property
    def missing(self) -> list[str]:
        return sorted(set(self.expected) - set(self.received))


def aggregate(updates) -> ParameterVector:
    """Weighted average ``sum_k (n_k / n) * w_k`` with ``n = sum_k n_k``.

    ``updates`` is either a mapping ``ecn_id -> (params, n_k)`` or a sequence
    of ``(params, n_k)``. Mapping entries are summed in ascending ``ecn_id``
    order so the result does not depend on arrival order.
    """
    if isinstance(updates, dict):
        items = [updates[k] for k in sorted(updates)]
    else:
        items = list(updates)
    if not items:
        raise AggregationError("cannot aggregate an empty list of updates")
    spec = items[0][0].spec
    for params, n in items:
        if params.spec != spec:
            raise SchemaError(f"update spec {params.spec} differs from {spec}")
        if n < 1:
            raise AggregationError(f"sample counts must be positive, got {n}")
    total = sum(int(n) for _, n in items)
    acc = np.zeros(spec.n_params)
    for params, n in items:
        acc += (int(n) / total) * params.values
    return ParameterVector(spec, acc)


def close_round(state: RoundState, weighting: str = "renormalize_received") -> ParameterVector:
    """Aggregate whatever arrived; weights renormalize over the received ECNs only."""
    if weighting != "renormalize_received":
        raise UsageError(f"unknown weighting policy {weighting!r}")
    if not state.received:
        raise RoundFailure(f"round {state.round_index}: no updates received before the deadline")
    dropped = state.missing
    if dropped:
        log.warning("round %d closed without updates from %s", state.round_index, ", ".join(dropped))
    return aggregate(state.received)


def _check_dataset(data, spec=None):
    if data is None or len(data.labels) == 0:
        raise UsageError("local dataset must be non-empty")
    if spec is not None and data.features.shape[1] != spec.input_dim:
        raise SchemaError(f"dataset width {data.features.shape[1]} does not match input_dim={spec.input_dim}")


def _run_epoch(trainer, x, y, hp, round_index, epoch):
    n = y.shape[0]
    perm = kernels.permutation(n, kernels.epoch_seed(hp.shuffle_seed, round_index, epoch))
    total = 0.0
    batches = 0
    # overflow shows up as a non-finite loss, reported below
    with np.errstate(over="ignore", invalid="ignore"):
        for start in range(0, n, hp.batch_size):
            idx = perm[start:start + hp.batch_size]
            loss = trainer.step(x[idx], y[idx], hp.eta)
            if not math.isfinite(loss):
                raise TrainingDivergence(f"non-finite loss in round {round_index}, epoch {epoch}")
            total += loss
            batches += 1
    return total, batches


def local_train(local_data, global_params: ParameterVector, hp: Hyperparams, round_index: int):
    """``ecn_update`` plus the mean mini-batch loss seen while training (None if E = 0)."""
    _check_dataset(local_data, global_params.spec)
    trainer = SGDTrainer(global_params)
    x, y = local_data.features, local_data.labels
    total, batches = 0.0, 0
    for epoch in range(1, hp.local_epochs + 1):
        t, b = _run_epoch(trainer, x, y, hp, round_index, epoch)
        total += t
        batches += b
    return trainer.params(), (total / batches if batches else None)


def ecn_update(local_data, global_params: ParameterVector, hp: Hyperparams, round_index: int) -> ParameterVector:
    """E epochs of shuffled mini-batch SGD starting from the global parameters."""
    return local_train(local_data, global_params, hp, round_index)[0]


def run_training(partitions, spec: ModelSpec, hp: Hyperparams, init_seed: int, eval_data=None,
                 ecn_ids=None, workers: int = 1, on_round=None):
    """In-process FedAvg over ``partitions``; returns ``(final_params, history)``.

    ECN updates of one round only depend on the round's global parameters and
    local data, so ``workers > 1`` gives the same result as sequential runs.
    """
    partitions = list(partitions)
    if not partitions:
        raise UsageError("need at least one partition")
    for p in partitions:
        _check_dataset(p, spec)
    ecn_ids = list(ecn_ids) if ecn_ids is not None else [f"ecn-{k}" for k in range(len(partitions))]
    if len(ecn_ids) != len(partitions) or len(set(ecn_ids)) != len(ecn_ids):
        raise UsageError("ecn_ids must be unique and match the partitions one to one")

    params = init_params(spec, init_seed)
    history = []
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for t in range(1, hp.rounds + 1):
            state = RoundState(t, params, frozenset(ecn_ids))
            if pool is None:
                results = [local_train(p, params, hp, t) for p in partitions]
            else:
                results = list(pool.map(lambda p: local_train(p, params, hp, t), partitions))
            losses = []
            for ecn_id, part, (update, loss) in zip(ecn_ids, partitions, results):
                state.add(ecn_id, update, len(part))
                if loss is not None:
                    losses.append((loss, len(part)))
            params = close_round(state)
            mean_loss = None
            if losses:
                n = sum(w for _, w in losses)
                mean_loss = sum(l * w / n for l, w in losses)
            acc = evaluate_accuracy(params, eval_data) if eval_data is not None else None
            record = RoundRecord(t, mean_loss, acc)
            history.append(record)
            log.debug("round %d: loss=%s acc=%s", t, mean_loss, acc)
            if on_round is not None:
                on_round(record)
    finally:
        if pool is not None:
            pool.shutdown()
    return params, history


def centralized_train(pooled, spec: ModelSpec, hp: Hyperparams, init_seed: int) -> ParameterVector:
    """Plain mini-batch SGD over pooled data for ``rounds * local_epochs`` epochs.

    Epoch ``e`` of pseudo-round ``r`` uses the same shuffle seed as the
    federated schedule, so one partition reproduces ``run_training`` exactly.
    """
    _check_dataset(pooled, spec)
    trainer = SGDTrainer(init_params(spec, init_seed))
    for r in range(1, hp.rounds + 1):
        for epoch in range(1, hp.local_epochs + 1):
            _run_epoch(trainer, pooled.features, pooled.labels, hp, r, epoch)
    return trainer.params()


def write_history_csv(history, path) -> None:
    def fmt(v):
        return "" if v is None else repr(float(v))

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "mean_local_loss", "eval_accuracy"])
        for rec in history:
            w.writerow([rec.round, fmt(rec.mean_local_loss), fmt(rec.eval_accuracy)])
