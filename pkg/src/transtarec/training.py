"""Margin-ranking training with negative sampling and plain SGD.

The per-example objective is

    sum_k [f(p_i, p_j) + margin - f(p_i, p_k)]_+
        + C * [ (w . v)^2 / |v|^2 - epsilon^2 ]_+

over sampled negatives ``p_k``, where ``f`` is the squared translation
residual of :mod:`transtarec.model`. Gradients are derived by hand and
flow through both fusion layers, the normalisation of the normal vector and
the hyperplane projection. Embedding-table gradients are kept row-sparse.
"""
from __future__ import annotations

import logging
import math
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Collection, Sequence

import numpy as np

from .data import Corpus, make_transitions
from .errors import EmptyTrainingSet, ExhaustedCandidates, InvalidArgument, NonFiniteGradient
from .model import (
    N_HOURS,
    N_MONTHS,
    N_WEEKDAYS,
    Batch,
    HyperParams,
    ModelParams,
    Triplet,
    context,
    residuals,
)

log = logging.getLogger(__name__)

TABLES = ("user_emb", "poi_emb", "month_emb", "weekday_emb", "hour_emb")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 50
    neg_samples: int = 1
    batch_size: int = 64
    seed: int = 42
    clamp_entities: bool = True
    init_scale: float = 0.01

    def __post_init__(self):
        for name in ("learning_rate", "epochs", "neg_samples", "batch_size"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be > 0, got {getattr(self, name)}")
        if not self.init_scale >= 0:
            raise InvalidArgument(f"init_scale must be >= 0, got {self.init_scale}")


@dataclass(frozen=True)
class TrainingExample:
    positive: Triplet
    negatives: tuple[int, ...]


@dataclass(frozen=True)
class LossBreakdown:
    hinge: float
    soft_constraint: float
    total: float


@dataclass
class RowGrad:
    """Gradient of an embedding table restricted to the rows it touches."""

    rows: np.ndarray
    values: np.ndarray

    def dense(self, n_rows: int) -> np.ndarray:
        out = np.zeros((n_rows, self.values.shape[1]))
        out[self.rows] = self.values
        return out


def _row_grad(index_parts: Sequence[np.ndarray], value_parts: Sequence[np.ndarray]) -> RowGrad:
    rows = np.concatenate([np.ravel(i) for i in index_parts])
    d = value_parts[0].shape[-1]
    vals = np.concatenate([v.reshape(-1, d) for v in value_parts])
    uniq, inv = np.unique(rows, return_inverse=True)
    buf = np.zeros((len(uniq), d))
    np.add.at(buf, inv, vals)
    return RowGrad(uniq, buf)


def init_params(
    n_users: int, n_pois: int, hyper: HyperParams, config: TrainConfig = TrainConfig()
) -> ModelParams:
    """Seeded random initialisation.

    Embedding entries are uniform in ``[-6/sqrt(d), 6/sqrt(d)]``; with
    ``clamp_entities`` user and POI rows are then rescaled into the unit
    ball. The translation layer starts at ``[0 | I | 0]`` (plain user
    translation) plus uniform noise of width ``init_scale``, so 0 gives an
    exact warm start; the normal layer gets small uniform weights and a
    constant bias of unit norm.
    """
    if n_users < 1 or n_pois < 1:
        raise InvalidArgument(f"vocabulary sizes must be >= 1, got users={n_users}, pois={n_pois}")
    d = hyper.dim
    rng = np.random.default_rng(config.seed)
    bound = 6.0 / math.sqrt(d)

    def table(rows: int) -> np.ndarray:
        return rng.uniform(-bound, bound, size=(rows, d))

    user_emb = table(n_users)
    poi_emb = table(n_pois)
    month_emb = table(N_MONTHS)
    weekday_emb = table(N_WEEKDAYS)
    hour_emb = table(N_HOURS)
    s = config.init_scale
    g_weight = np.hstack([np.zeros((d, d)), np.eye(d), np.zeros((d, d))])
    g_weight += rng.uniform(-s, s, size=(d, 3 * d))
    h_weight = rng.uniform(-s, s, size=(d, 3 * d))
    params = ModelParams(
        user_emb=user_emb,
        poi_emb=poi_emb,
        month_emb=month_emb,
        weekday_emb=weekday_emb,
        hour_emb=hour_emb,
        g_weight=g_weight,
        g_bias=np.zeros(d),
        h_weight=h_weight,
        h_bias=np.full(d, 1.0 / math.sqrt(d)),
    )
    if config.clamp_entities:
        _clamp_rows(params.user_emb, np.arange(n_users))
        _clamp_rows(params.poi_emb, np.arange(n_pois))
    return params


def _clamp_rows(table: np.ndarray, rows: np.ndarray) -> None:
    norms = np.linalg.norm(table[rows], axis=1)
    over = norms > 1.0
    if np.any(over):
        table[rows[over]] /= norms[over][:, None]


def sample_negatives(
    rng: np.random.Generator,
    positive: Triplet,
    n_pois: int,
    n: int,
    excluded: Collection[int] = (),
) -> list[int]:
    """Draw ``n`` distinct negative POIs uniformly.

    Never returns ``positive.next_poi`` or anything in ``excluded`` (the
    POIs the user checked in to at the positive's next timestamp).
    """
    banned = set(excluded)
    banned.add(positive.next_poi)
    eligible_count = n_pois - sum(1 for p in banned if 0 <= p < n_pois)
    if n > eligible_count:
        raise ExhaustedCandidates(f"need {n} negatives but only {eligible_count} POIs are eligible")
    if 2 * n > eligible_count:
        eligible = np.array([p for p in range(n_pois) if p not in banned])
        return [int(p) for p in rng.choice(eligible, size=n, replace=False)]
    out: list[int] = []
    while len(out) < n:
        p = int(rng.integers(n_pois))
        if p not in banned:
            banned.add(p)
            out.append(p)
    return out


@dataclass
class _Arrays:
    batch: Batch
    next_poi: np.ndarray
    negatives: np.ndarray  # (n, k)

    @classmethod
    def from_examples(cls, examples: Sequence[TrainingExample]) -> "_Arrays":
        if not examples:
            raise InvalidArgument("empty batch")
        k = len(examples[0].negatives)
        if k == 0 or any(len(e.negatives) != k for e in examples):
            raise InvalidArgument("every example in a batch needs the same, non-zero number of negatives")
        return cls(
            Batch.from_triplets([e.positive for e in examples]),
            np.array([e.positive.next_poi for e in examples], dtype=np.int64),
            np.array([e.negatives for e in examples], dtype=np.int64),
        )


def _loss_and_grad(
    params: ModelParams, arr: _Arrays, hyper: HyperParams, want_grad: bool = True
) -> tuple[LossBreakdown, dict[str, np.ndarray | RowGrad] | None]:
    """Batch-mean loss and, optionally, its exact gradient."""
    batch = arr.batch
    n = len(batch)
    baseline = hyper.baseline_mode
    ctx = context(params, batch, baseline)
    targets = np.concatenate([arr.next_poi[:, None], arr.negatives], axis=1)
    res = residuals(params, ctx, batch.prev_poi, targets)  # (n, 1+k, d)
    f = np.sum(res * res, axis=2)
    margins = f[:, :1] + hyper.margin - f[:, 1:]
    active = margins > 0
    hinge = float(np.sum(np.where(active, margins, 0.0))) / n

    soft = 0.0
    if not baseline:
        v, w = ctx.v, ctx.w
        vv = np.sum(v * v, axis=1)
        cos_vw = np.sum(w * v, axis=1)
        usable = vv > 1e-24
        ratio = np.where(usable, cos_vw**2 / np.where(usable, vv, 1.0), 0.0)
        excess = ratio - hyper.epsilon**2
        soft_active = usable & (excess > 0)
        soft = float(np.sum(np.where(soft_active, excess, 0.0))) / n
    total = hinge + hyper.soft_c * soft
    breakdown = LossBreakdown(hinge, soft, total)
    if not want_grad:
        return breakdown, None

    coef = np.empty_like(f)
    coef[:, 0] = active.sum(axis=1)
    coef[:, 1:] = -active.astype(float)
    g = (2.0 / n) * coef[..., None] * res  # dL/dres
    grad_v = g.sum(axis=1)
    if baseline:
        grad_delta = g
    else:
        gw = np.einsum("nmd,nd->nm", g, w)
        grad_delta = g - gw[..., None] * w[:, None, :]
    grads: dict[str, np.ndarray | RowGrad] = {}
    poi_grad = _row_grad([batch.prev_poi, targets], [grad_delta.sum(axis=1), -grad_delta])

    if baseline:
        grads["user_emb"] = _row_grad([batch.user], [grad_v])
        grads["poi_emb"] = poi_grad
        return breakdown, grads

    # d res / d w for res = delta - (w.delta) w + v
    delta = params.poi_emb[batch.prev_poi][:, None, :] - params.poi_emb[targets]
    wd = np.einsum("nmd,nd->nm", delta, w)
    grad_w = -np.einsum("nm,nmd->nd", gw, delta) - np.einsum("nm,nmd->nd", wd, g)

    c = hyper.soft_c / n
    sa = soft_active.astype(float)
    safe_vv = np.where(usable, vv, 1.0)
    grad_w += (c * sa * 2.0 * cos_vw / safe_vv)[:, None] * v
    grad_v += (c * sa * 2.0 * cos_vw / safe_vv)[:, None] * w
    grad_v -= (c * sa * 2.0 * cos_vw**2 / safe_vv**2)[:, None] * v

    # w = raw / |raw|
    grad_raw = (grad_w - np.sum(grad_w * w, axis=1, keepdims=True) * w) / ctx.raw_norm[:, None]

    x = ctx.x
    grads["g_weight"] = grad_v.T @ x
    grads["g_bias"] = grad_v.sum(axis=0)
    grads["h_weight"] = grad_raw.T @ x
    grads["h_bias"] = grad_raw.sum(axis=0)
    grad_x = grad_v @ params.g_weight + grad_raw @ params.h_weight
    d = params.dim
    g_ti, g_u, g_tj = grad_x[:, :d], grad_x[:, d : 2 * d], grad_x[:, 2 * d :]
    pt, nt = batch.prev_time, batch.next_time
    grads["user_emb"] = _row_grad([batch.user], [g_u])
    grads["poi_emb"] = poi_grad
    grads["month_emb"] = _row_grad([pt[:, 0] - 1, nt[:, 0] - 1], [g_ti, g_tj])
    grads["weekday_emb"] = _row_grad([pt[:, 1], nt[:, 1]], [g_ti, g_tj])
    grads["hour_emb"] = _row_grad([pt[:, 2], nt[:, 2]], [g_ti, g_tj])
    return breakdown, grads


def loss(params: ModelParams, example: TrainingExample, hyper: HyperParams) -> LossBreakdown:
    return _loss_and_grad(params, _Arrays.from_examples([example]), hyper, want_grad=False)[0]


def batch_loss(params: ModelParams, batch: Sequence[TrainingExample], hyper: HyperParams) -> LossBreakdown:
    return _loss_and_grad(params, _Arrays.from_examples(batch), hyper, want_grad=False)[0]


def gradients(
    params: ModelParams, batch: Sequence[TrainingExample], hyper: HyperParams
) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Batch-mean loss and dense gradients for every tensor (zeros where untouched)."""
    breakdown, grads = _loss_and_grad(params, _Arrays.from_examples(batch), hyper)
    dense = {}
    for name, arr in params.tensors().items():
        gr = grads.get(name)
        if gr is None:
            dense[name] = np.zeros_like(arr)
        elif isinstance(gr, RowGrad):
            dense[name] = gr.dense(arr.shape[0])
        else:
            dense[name] = gr
    return breakdown, dense


def _apply(params: ModelParams, grads: dict, lr: float, clamp: bool) -> None:
    for name, gr in grads.items():
        if isinstance(gr, RowGrad):
            if not np.all(np.isfinite(gr.values)):
                raise NonFiniteGradient(f"non-finite gradient in {name}")
        elif not np.all(np.isfinite(gr)):
            raise NonFiniteGradient(f"non-finite gradient in {name}")
    for name, gr in grads.items():
        table = getattr(params, name)
        if isinstance(gr, RowGrad):
            table[gr.rows] -= lr * gr.values
        else:
            table -= lr * gr
    if clamp:
        for name in ("user_emb", "poi_emb"):
            gr = grads.get(name)
            if gr is not None:
                touched = gr.rows[np.any(gr.values != 0.0, axis=1)]
                _clamp_rows(getattr(params, name), touched)


def grad_step(
    params: ModelParams,
    batch: Sequence[TrainingExample],
    hyper: HyperParams,
    config: TrainConfig,
) -> tuple[ModelParams, LossBreakdown]:
    """One SGD step on the batch-mean loss. Updates ``params`` in place and returns it."""
    breakdown, grads = _loss_and_grad(params, _Arrays.from_examples(batch), hyper)
    _apply(params, grads, config.learning_rate, config.clamp_entities)
    return params, breakdown


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    hinge: float
    soft_constraint: float
    total: float
    seconds: float

    def __str__(self) -> str:
        return (
            f"epoch {self.epoch:4d}  hinge {self.hinge:.6f}  soft {self.soft_constraint:.6f}"
            f"  total {self.total:.6f}  {self.seconds:.2f}s"
        )


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochStats] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.history[-1].total if self.history else float("nan")


def build_positives(corpus: Corpus) -> tuple[list[Triplet], list[frozenset[int]]]:
    """Consecutive-visit triplets of ``corpus`` plus, for each, the POIs the
    user visited at exactly the target timestamp (never used as negatives)."""
    positives: list[Triplet] = []
    exclusions: list[frozenset[int]] = []
    for u, seq in enumerate(corpus.sequences):
        at_time: dict[int, set[int]] = defaultdict(set)
        for v in seq:
            at_time[v.timestamp].add(v.poi)
        for i, j in make_transitions(seq, "next"):
            a, b = seq[i], seq[j]
            positives.append(Triplet(u, a.poi, a.time, b.poi, b.time))
            exclusions.append(frozenset(at_time[b.timestamp]))
    return positives, exclusions


def train(
    corpus: Corpus,
    hyper: HyperParams,
    config: TrainConfig = TrainConfig(),
    progress: Callable[[EpochStats], None] | None = None,
    params: ModelParams | None = None,
) -> TrainResult:
    """Train on every consecutive-visit transition of ``corpus``.

    ``corpus`` is the training view (e.g. ``split.train.compact()``); its
    vocabularies become the model's. Single-threaded and fully determined by
    ``config.seed``.
    """
    positives, exclusions = build_positives(corpus)
    if not positives:
        raise EmptyTrainingSet("no training transitions: every user has fewer than two visits")
    if params is None:
        params = init_params(corpus.n_users, corpus.n_pois, hyper, config)
    rng = np.random.default_rng([config.seed, 1])
    n = len(positives)
    result = TrainResult(params)
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(n)
        sums = np.zeros(3)
        for step, lo in enumerate(range(0, n, config.batch_size)):
            idx = order[lo : lo + config.batch_size]
            batch = [
                TrainingExample(
                    positives[k],
                    tuple(sample_negatives(rng, positives[k], corpus.n_pois, config.neg_samples, exclusions[k])),
                )
                for k in idx
            ]
            try:
                _, b = grad_step(params, batch, hyper, config)
            except NonFiniteGradient as exc:
                raise NonFiniteGradient(f"epoch {epoch}, step {step}: {exc}") from exc
            sums += len(idx) * np.array([b.hinge, b.soft_constraint, b.total])
        hinge, soft, total = sums / n
        stats = EpochStats(epoch, hinge, soft, total, time.perf_counter() - start)
        result.history.append(stats)
        log.debug("%s", stats)
        if progress is not None:
            progress(stats)
    return result
