"""Retrieval evaluation: distance matrices, CMC curves and mAP.

Protocol: per query, gallery items are sorted by ascending distance with
ties broken toward the lower gallery index; items sharing BOTH identity
and camera with the query are dropped; CMC@k is the fraction of queries
with a correct match in the top k and AP is the mean over the query's
correct matches, at kept-ranks r_1 < r_2 < ..., of j / r_j. Queries with
no valid match after filtering are excluded and reported, never counted.

``evaluate`` is the production (vectorized) path; the brute-force oracle
re-derives everything with explicit scalar loops for testing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateVectorError, ShapeError

EUCLIDEAN = "euclidean"
COSINE = "cosine"

REPORT_RANKS = (1, 5, 10, 20, 50)


@dataclass(frozen=True)
class RetrievalProtocol:
    metric: str = COSINE
    same_camera_filter: bool = True

    def __post_init__(self):
        if self.metric not in (EUCLIDEAN, COSINE):
            raise ValueError(f"metric must be euclidean or cosine, got {self.metric!r}")


@dataclass
class EvalReport:
    map: float
    cmc: np.ndarray  # full curve, cmc[k-1] = CMC@k
    aps: np.ndarray  # per-query AP, NaN for excluded queries
    excluded: list = field(default_factory=list)

    def cmc_at(self, k: int) -> float:
        k = min(k, len(self.cmc))
        return float(self.cmc[k - 1])

    def to_json_dict(self, ranks=REPORT_RANKS):
        return {
            "map": self.map,
            "cmc": [self.cmc_at(k) for k in ranks],
            "cmc_ranks": list(ranks),
            "excluded_queries": list(self.excluded),
        }


def distance_matrix(q, g, metric: str) -> np.ndarray:
    """(Nq, Ng) distances; cosine is 1 - a.b/(|a||b|), domain [0, 2]."""
    q = np.asarray(q, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if q.ndim != 2 or g.ndim != 2 or q.shape[1] != g.shape[1]:
        raise ShapeError(f"embedding dims differ: {q.shape} vs {g.shape}")
    if metric == EUCLIDEAN:
        diff = q[:, None, :] - g[None, :, :]
        return np.sqrt((diff * diff).sum(axis=2))
    if metric == COSINE:
        qn = np.linalg.norm(q, axis=1)
        gn = np.linalg.norm(g, axis=1)
        if (qn == 0).any() or (gn == 0).any():
            raise DegenerateVectorError("zero-norm embedding under cosine metric")
        return 1.0 - (q @ g.T) / np.outer(qn, gn)
    raise ValueError(f"unknown metric {metric!r}")


def _validate_eval_inputs(dist, q_ids, g_ids, q_cams, g_cams):
    dist = np.asarray(dist, dtype=np.float64)
    nq, ng = dist.shape
    arrs = [np.asarray(a) for a in (q_ids, g_ids, q_cams, g_cams)]
    if len(arrs[0]) != nq or len(arrs[2]) != nq or len(arrs[1]) != ng or len(arrs[3]) != ng:
        raise ShapeError("label/camera lengths do not match the distance matrix")
    return dist, arrs[0], arrs[1], arrs[2], arrs[3]


def evaluate(dist, q_ids, g_ids, q_cams, g_cams, proto: RetrievalProtocol) -> EvalReport:
    dist, q_ids, g_ids, q_cams, g_cams = _validate_eval_inputs(
        dist, q_ids, g_ids, q_cams, g_cams
    )
    nq, ng = dist.shape
    aps = np.full(nq, np.nan)
    excluded = []
    curves = []
    for i in range(nq):
        order = np.argsort(dist[i], kind="stable")  # ties -> lower index
        if proto.same_camera_filter:
            drop = (g_ids[order] == q_ids[i]) & (g_cams[order] == q_cams[i])
            order = order[~drop]
        correct = (g_ids[order] == q_ids[i]).astype(np.float64)
        if correct.sum() == 0:
            excluded.append(i)
            curves.append(None)
            continue
        hits = correct.cumsum()
        ranks = np.arange(1, len(order) + 1)
        aps[i] = float(((hits / ranks) * correct).sum() / correct.sum())
        curve = (hits >= 1).astype(np.float64)
        curves.append(curve)
    kept = [c for c in curves if c is not None]
    if not kept:
        return EvalReport(map=0.0, cmc=np.zeros(ng), aps=aps, excluded=excluded)
    max_len = max(len(c) for c in kept)
    cmc = np.zeros(max_len)
    for c in kept:
        padded = np.pad(c, (0, max_len - len(c)), constant_values=c[-1])
        cmc += padded
    cmc /= len(kept)
    return EvalReport(
        map=float(np.nanmean(aps[np.isfinite(aps)])),
        cmc=cmc,
        aps=aps,
        excluded=excluded,
    )


def evaluate_bruteforce_oracle(
    dist, q_ids, g_ids, q_cams, g_cams, proto: RetrievalProtocol
) -> EvalReport:
    """Independent scalar re-derivation of ``evaluate`` (tests only)."""
    dist, q_ids, g_ids, q_cams, g_cams = _validate_eval_inputs(
        dist, q_ids, g_ids, q_cams, g_cams
    )
    nq, ng = dist.shape
    aps = np.full(nq, np.nan)
    excluded = []
    per_query_flags = []
    for i in range(nq):
        entries = []
        for j in range(ng):
            if proto.same_camera_filter and g_ids[j] == q_ids[i] and g_cams[j] == q_cams[i]:
                continue
            entries.append((float(dist[i, j]), j))
        entries.sort()  # distance, then gallery index
        flags = [1.0 if g_ids[j] == q_ids[i] else 0.0 for _, j in entries]
        if sum(flags) == 0:
            excluded.append(i)
            per_query_flags.append(None)
            continue
        ap_terms = []
        seen = 0
        for rank, flag in enumerate(flags, start=1):
            if flag:
                seen += 1
                ap_terms.append(seen / rank)
        aps[i] = sum(ap_terms) / len(ap_terms)
        per_query_flags.append(flags)
    kept = [f for f in per_query_flags if f is not None]
    if not kept:
        return EvalReport(map=0.0, cmc=np.zeros(ng), aps=aps, excluded=excluded)
    max_len = max(len(f) for f in kept)
    cmc = np.zeros(max_len)
    for flags in kept:
        matched = 0.0
        for k in range(max_len):
            if k < len(flags) and flags[k]:
                matched = 1.0
            cmc[k] += matched
    cmc /= len(kept)
    valid = [a for a in aps if np.isfinite(a)]
    return EvalReport(map=float(sum(valid) / len(valid)), cmc=cmc, aps=aps, excluded=excluded)
