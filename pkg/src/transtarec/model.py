"""Forward computation of the time-adaptive translation model.

A transition ``(p_i, t_i) -> (p_j, t_j)`` of user ``u`` is scored by

* a translation vector ``v = W_g [e(t_i); e_u; e(t_j)] + b_g``,
* a unit normal ``w = n / |n|`` with ``n = W_h [e(t_i); e_u; e(t_j)] + b_h``,
* POI embeddings projected onto the hyperplane orthogonal to ``w``,

and the squared distance ``|proj(e_pi) + v - proj(e_pj)|^2`` (low is good).
``e(t)`` is the sum of the month, weekday and hour embeddings.

In ``baseline_mode`` the fusion and projection are bypassed: ``v = e_u`` and
the score is ``|e_pi + e_u - e_pj|^2`` (time-blind translation).
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from .data import TimeKey
from .errors import DegenerateNormal, EmptyCandidates, InvalidArgument, NonUnitNormal

N_MONTHS, N_WEEKDAYS, N_HOURS = 12, 7, 24
RANK_MODES = ("inner", "neg_l2")
DEGENERATE_NORM = 1e-12


@dataclass(frozen=True)
class HyperParams:
    dim: int = 100
    margin: float = 1.0
    soft_c: float = 1.0
    epsilon: float = 0.001
    rank_mode: str = "inner"
    baseline_mode: bool = False

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidArgument(f"dim must be >= 1, got {self.dim}")
        if not self.epsilon > 0:
            raise InvalidArgument(f"epsilon must be > 0, got {self.epsilon}")
        if self.margin < 0:
            raise InvalidArgument(f"margin must be >= 0, got {self.margin}")
        if self.soft_c < 0:
            raise InvalidArgument(f"soft_c must be >= 0, got {self.soft_c}")
        if self.rank_mode not in RANK_MODES:
            raise InvalidArgument(f"rank_mode must be one of {RANK_MODES}, got {self.rank_mode!r}")


def param_shapes(n_users: int, n_pois: int, d: int) -> dict[str, tuple[int, ...]]:
    """Shape of every tensor in :class:`ModelParams`, in field order."""
    return {
        "user_emb": (n_users, d),
        "poi_emb": (n_pois, d),
        "month_emb": (N_MONTHS, d),
        "weekday_emb": (N_WEEKDAYS, d),
        "hour_emb": (N_HOURS, d),
        "g_weight": (d, 3 * d),
        "g_bias": (d,),
        "h_weight": (d, 3 * d),
        "h_bias": (d,),
    }


@dataclass
class ModelParams:
    """All learnable tensors. Fusion weights are ``d x 3d`` acting on
    ``[time(t_i); user; time(t_j)]``."""

    user_emb: np.ndarray
    poi_emb: np.ndarray
    month_emb: np.ndarray
    weekday_emb: np.ndarray
    hour_emb: np.ndarray
    g_weight: np.ndarray
    g_bias: np.ndarray
    h_weight: np.ndarray
    h_bias: np.ndarray

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.names()}

    @property
    def dim(self) -> int:
        return self.poi_emb.shape[1]

    @property
    def n_users(self) -> int:
        return self.user_emb.shape[0]

    @property
    def n_pois(self) -> int:
        return self.poi_emb.shape[0]

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.tensors().items()})

    def expected_shapes(self) -> dict[str, tuple[int, ...]]:
        return param_shapes(self.n_users, self.n_pois, self.dim)

    def validate(self) -> None:
        for name, shape in self.expected_shapes().items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise InvalidArgument(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise InvalidArgument(f"{name} has non-finite entries")


@dataclass(frozen=True)
class Triplet:
    user: int
    prev_poi: int
    prev_time: TimeKey
    next_poi: int
    next_time: TimeKey


def time_embedding(params: ModelParams, t: TimeKey) -> np.ndarray:
    return params.month_emb[t.month - 1] + params.weekday_emb[t.weekday] + params.hour_emb[t.hour]


def _time_rows(params: ModelParams, times: np.ndarray) -> np.ndarray:
    """Batched time embedding; ``times`` is an (n, 3) array of (month, weekday, hour)."""
    return params.month_emb[times[:, 0] - 1] + params.weekday_emb[times[:, 1]] + params.hour_emb[times[:, 2]]


def fusion_input(params: ModelParams, t_i: TimeKey, user: int, t_j: TimeKey) -> np.ndarray:
    return np.concatenate([time_embedding(params, t_i), params.user_emb[user], time_embedding(params, t_j)])


def fuse_translation(
    params: ModelParams, t_i: TimeKey, user: int, t_j: TimeKey, baseline_mode: bool = False
) -> np.ndarray:
    if baseline_mode:
        return params.user_emb[user].copy()
    return params.g_weight @ fusion_input(params, t_i, user, t_j) + params.g_bias


def normalize(raw: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(raw))
    if norm <= DEGENERATE_NORM:
        raise DegenerateNormal(f"normal-vector fusion output has norm {norm:.3g}")
    return raw / norm


def fuse_normal(params: ModelParams, t_i: TimeKey, user: int, t_j: TimeKey) -> np.ndarray:
    return normalize(params.h_weight @ fusion_input(params, t_i, user, t_j) + params.h_bias)


def project_to_hyperplane(v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Remove the component of ``v`` along the unit normal ``w``."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    if abs(float(np.linalg.norm(w)) - 1.0) > 1e-6:
        raise NonUnitNormal(f"normal has norm {np.linalg.norm(w):.9g}")
    return v - (w @ v) * w


@dataclass
class Batch:
    """Index arrays for a batch of transitions; times are (n, 3) int arrays."""

    user: np.ndarray
    prev_poi: np.ndarray
    prev_time: np.ndarray
    next_time: np.ndarray

    def __len__(self) -> int:
        return len(self.user)

    @classmethod
    def from_triplets(cls, trips: Sequence[Triplet]) -> "Batch":
        return cls(
            np.array([t.user for t in trips], dtype=np.int64),
            np.array([t.prev_poi for t in trips], dtype=np.int64),
            np.array([tuple(t.prev_time) for t in trips], dtype=np.int64).reshape(-1, 3),
            np.array([tuple(t.next_time) for t in trips], dtype=np.int64).reshape(-1, 3),
        )


@dataclass
class Context:
    """Per-transition quantities that do not depend on the candidate POI."""

    x: np.ndarray | None  # fusion input (n, 3d); None in baseline mode
    v: np.ndarray  # translation (n, d)
    w: np.ndarray | None  # unit normal (n, d); None in baseline mode
    raw_norm: np.ndarray | None  # |W_h x + b_h| (n,)


def context(params: ModelParams, batch: Batch, baseline_mode: bool = False) -> Context:
    if baseline_mode:
        return Context(None, params.user_emb[batch.user], None, None)
    x = np.concatenate(
        [_time_rows(params, batch.prev_time), params.user_emb[batch.user], _time_rows(params, batch.next_time)],
        axis=1,
    )
    v = x @ params.g_weight.T + params.g_bias
    raw = x @ params.h_weight.T + params.h_bias
    norm = np.linalg.norm(raw, axis=1)
    if np.any(norm <= DEGENERATE_NORM):
        raise DegenerateNormal(f"normal-vector fusion output has norm {norm.min():.3g}")
    return Context(x, v, raw / norm[:, None], norm)


def residuals(params: ModelParams, ctx: Context, prev_poi: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """``proj(e_pi) + v - proj(e_q)`` for targets of shape (n, m); returns (n, m, d)."""
    delta = params.poi_emb[prev_poi][:, None, :] - params.poi_emb[targets]
    if ctx.w is not None:
        delta = delta - np.einsum("nmd,nd->nm", delta, ctx.w)[..., None] * ctx.w[:, None, :]
    return delta + ctx.v[:, None, :]


def score_triplet(params: ModelParams, trip: Triplet, baseline_mode: bool = False) -> float:
    """Squared translation residual of one transition; 0 for a perfect fit."""
    batch = Batch.from_triplets([trip])
    ctx = context(params, batch, baseline_mode)
    res = residuals(params, ctx, batch.prev_poi, np.array([[trip.next_poi]]))
    return float(np.sum(res * res))


def candidate_scores(
    params: ModelParams,
    ctx: Context,
    prev_poi: np.ndarray,
    rank_mode: str,
    candidates: np.ndarray | None = None,
) -> np.ndarray:
    """Scores of candidate POIs for every transition, larger is better.

    ``inner`` is ``(proj(e_pi) + v) . proj(e_p)``; ``neg_l2`` is minus the
    squared residual. Returns an (n, |candidates|) array.
    """
    emb = params.poi_emb if candidates is None else params.poi_emb[candidates]
    head = params.poi_emb[prev_poi]
    w = ctx.w
    if w is not None:
        head = head - np.sum(head * w, axis=1, keepdims=True) * w
    query = head + ctx.v
    dots = query @ emb.T
    if rank_mode == "inner":
        if w is None:
            return dots
        return dots - np.sum(query * w, axis=1, keepdims=True) * (w @ emb.T)
    if rank_mode != "neg_l2":
        raise InvalidArgument(f"rank_mode must be one of {RANK_MODES}, got {rank_mode!r}")
    sq = np.sum(emb * emb, axis=1)[None, :]
    if w is not None:
        # query lies in the hyperplane only approximately, so expand |query - proj(e)|^2 fully
        we = w @ emb.T
        sq = sq - we * we
        dots = dots - np.sum(query * w, axis=1, keepdims=True) * we
    return -(np.sum(query * query, axis=1, keepdims=True) - 2.0 * dots + sq)


def ranks_of(scores: np.ndarray, target_cols: np.ndarray) -> np.ndarray:
    """1-based rank of ``target_cols`` per row; ties go to the lower column index."""
    rows = np.arange(scores.shape[0])
    target = scores[rows, target_cols][:, None]
    cols = np.arange(scores.shape[1])[None, :]
    better = (scores > target) | ((scores == target) & (cols < target_cols[:, None]))
    return better.sum(axis=1) + 1


def order_best_first(scores: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Positions of ``scores`` sorted best first, ties by ascending id."""
    return np.lexsort((ids, -scores))


def rank_candidates(
    params: ModelParams,
    user: int,
    t_i: TimeKey,
    p_i: int,
    t_j: TimeKey,
    candidates: Iterable[int] | None = None,
    rank_mode: str = "inner",
    baseline_mode: bool = False,
) -> list[tuple[int, float]]:
    """Rank candidate POIs (all POIs by default) for the next visit at ``t_j``.

    Returns ``(poi, score)`` best first. Scores are the inner-product
    preference for ``inner`` and the squared residual for ``neg_l2``.
    """
    if candidates is None:
        cand = np.arange(params.n_pois)
    else:
        cand = np.array(sorted(set(int(c) for c in candidates)), dtype=np.int64)
    if cand.size == 0:
        raise EmptyCandidates("no candidate POIs to rank")
    batch = Batch.from_triplets([Triplet(user, p_i, t_i, p_i, t_j)])
    ctx = context(params, batch, baseline_mode)
    scores = candidate_scores(params, ctx, batch.prev_poi, rank_mode, cand)[0]
    order = order_best_first(scores, cand)
    sign = 1.0 if rank_mode == "inner" else -1.0
    return [(int(cand[k]), float(sign * scores[k])) for k in order]
