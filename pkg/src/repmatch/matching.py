"""Counterfactual imputation by matching in representation space.

Builds pairwise distances (Euclidean, Mahalanobis, or propensity score),
solves the exact min-cost one-to-one assignment between treated and
control units, and imputes a counterfactual outcome for every unit:
members of an optimal pair borrow their partner's factual outcome,
everyone else borrows from their nearest opposite-group unit (with
replacement).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ._backend import solve_assignment
from .datagen import Dataset

METRICS = ("euclidean", "mahalanobis", "propensity")

# aliases accepted on the command line
METRIC_ALIASES = {"euclid": "euclidean", "mahal": "mahalanobis", "propensity": "propensity"}


@dataclass
class MatchResult:
    """Matched pairs and per-unit imputed counterfactuals.

    pairs holds (treated dataset index, control dataset index) from the
    optimal assignment; its size is min(n_t, n_c) and its total cost is
    globally minimal.  cf_outcome / cf_source cover all n units; the
    donor always belongs to the opposite treatment group.
    """

    metric: str
    pairs: list[tuple[int, int]]
    pair_cost: float
    cf_outcome: np.ndarray
    cf_source: np.ndarray
    paired: np.ndarray
    pair_partner: np.ndarray  # -1 for unpaired units
    distance: np.ndarray  # distance to the donor


def _mahalanobis_transform(sample: np.ndarray) -> np.ndarray:
    """Whitening factor L^-1 with Sigma + ridge = L L^T from a pooled sample."""
    sample = np.atleast_2d(sample)
    dim = sample.shape[1]
    if sample.shape[0] < 2:
        raise np.linalg.LinAlgError("mahalanobis needs >= 2 pooled sample rows")
    centered = sample - sample.mean(axis=0)
    sigma = centered.T @ centered / (sample.shape[0] - 1)
    sigma = sigma + 1e-6 * np.trace(sigma) / dim * np.eye(dim)
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"pooled covariance singular after ridge (dim={dim}, n={sample.shape[0]})"
        ) from exc
    return np.linalg.solve(chol, np.eye(dim))


def pairwise_cost(rep_a: np.ndarray, rep_b: np.ndarray, metric: str, aux=None) -> np.ndarray:
    """(n_a, n_b) distance matrix under the requested metric.

    euclidean: L2 in representation space.
    mahalanobis: sqrt((u-v)^T Sigma^-1 (u-v)), Sigma the ridged sample
      covariance of `aux` (the pooled representation sample).
    propensity: |p_u - p_v| with aux = (p_a, p_b) per-unit treatment
      probabilities.
    """
    rep_a = np.atleast_2d(np.asarray(rep_a, dtype=float))
    rep_b = np.atleast_2d(np.asarray(rep_b, dtype=float))
    if rep_a.shape[1] != rep_b.shape[1]:
        raise ValueError("representation dimensions differ")
    if metric == "euclidean":
        return _euclidean(rep_a, rep_b)
    if metric == "mahalanobis":
        if aux is None:
            aux = np.vstack([rep_a, rep_b])
        w = _mahalanobis_transform(np.asarray(aux, dtype=float))
        return _euclidean(rep_a @ w.T, rep_b @ w.T)
    if metric == "propensity":
        if aux is None:
            raise ValueError("propensity metric needs aux=(p_a, p_b)")
        p_a, p_b = (np.asarray(p, dtype=float).ravel() for p in aux)
        return np.abs(p_a[:, None] - p_b[None, :])
    raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")


def _euclidean(a, b):
    sq = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
    np.maximum(sq, 0.0, out=sq)
    return np.sqrt(sq)


def optimal_assignment(cost: np.ndarray) -> list[tuple[int, int]]:
    """Exact min-cost one-to-one matching of size min(rows, cols)."""
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.size == 0:
        raise ValueError("cost must be a nonempty 2-d matrix")
    if not np.isfinite(cost).all():
        raise ValueError("cost entries must be finite")
    if (cost < 0).any():
        raise ValueError("cost entries must be nonnegative")
    if cost.shape[0] <= cost.shape[1]:
        col4row = solve_assignment(cost)
        pairs = [(r, int(c)) for r, c in enumerate(col4row)]
    else:
        col4row = solve_assignment(np.ascontiguousarray(cost.T))
        pairs = sorted((int(c), r) for r, c in enumerate(col4row))
    return pairs


def impute_counterfactuals(
    ds: Dataset, representation: np.ndarray, metric: str, aux=None
) -> MatchResult:
    """Optimal pairing plus nearest-neighbor imputation for every unit.

    Units inside an optimal pair take their partner as donor; all other
    units take their nearest opposite-group unit (with replacement, ties
    to the lowest donor index).
    """
    representation = np.atleast_2d(np.asarray(representation, dtype=float))
    t_idx = np.flatnonzero(ds.t == 1)
    c_idx = np.flatnonzero(ds.t == 0)
    if len(t_idx) == 0 or len(c_idx) == 0:
        raise ValueError("both treatment groups must be nonempty")

    rep_t = representation[t_idx]
    rep_c = representation[c_idx]
    if metric == "mahalanobis" and aux is None:
        aux = representation
    if metric == "propensity":
        p = np.asarray(aux, dtype=float).ravel()
        cost = pairwise_cost(rep_t, rep_c, metric, (p[t_idx], p[c_idx]))
    else:
        cost = pairwise_cost(rep_t, rep_c, metric, aux)

    local_pairs = optimal_assignment(cost)
    pairs = [(int(t_idx[a]), int(c_idx[b])) for a, b in local_pairs]
    pair_cost = float(np.mean([cost[a, b] for a, b in local_pairs]))

    n = ds.n
    cf_outcome = np.empty(n)
    cf_source = np.full(n, -1, dtype=np.int64)
    paired = np.zeros(n, dtype=bool)
    pair_partner = np.full(n, -1, dtype=np.int64)
    distance = np.empty(n)

    for a, b in local_pairs:
        gi, gj = int(t_idx[a]), int(c_idx[b])
        for unit, donor in ((gi, gj), (gj, gi)):
            paired[unit] = True
            pair_partner[unit] = donor
            cf_source[unit] = donor
            cf_outcome[unit] = ds.y_f[donor]
            distance[unit] = cost[a, b]

    # nearest opposite-group donor for everyone left over
    nn_for_t = cost.argmin(axis=1)
    nn_for_c = cost.argmin(axis=0)
    for a, gi in enumerate(t_idx):
        if not paired[gi]:
            b = int(nn_for_t[a])
            cf_source[gi] = int(c_idx[b])
            cf_outcome[gi] = ds.y_f[c_idx[b]]
            distance[gi] = cost[a, b]
    for b, gj in enumerate(c_idx):
        if not paired[gj]:
            a = int(nn_for_c[b])
            cf_source[gj] = int(t_idx[a])
            cf_outcome[gj] = ds.y_f[t_idx[a]]
            distance[gj] = cost[a, b]

    return MatchResult(
        metric=metric,
        pairs=pairs,
        pair_cost=pair_cost,
        cf_outcome=cf_outcome,
        cf_source=cf_source,
        paired=paired,
        pair_partner=pair_partner,
        distance=distance,
    )


def write_match_report(path, ds: Dataset, result: MatchResult) -> None:
    """CSV report: one row per unit with its donor and pairing status."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["unit_id", "t", "yf", "cf_outcome", "cf_source", "paired", "pair_partner", "distance"]
        )
        for i in range(ds.n):
            writer.writerow(
                [
                    i,
                    int(ds.t[i]),
                    repr(float(ds.y_f[i])),
                    repr(float(result.cf_outcome[i])),
                    int(result.cf_source[i]),
                    int(result.paired[i]),
                    int(result.pair_partner[i]),
                    repr(float(result.distance[i])),
                ]
            )


def read_match_report(path) -> dict[str, np.ndarray]:
    """Read back a match report as column arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"empty match report: {path}")
    out = {
        "unit_id": np.array([int(r["unit_id"]) for r in rows]),
        "t": np.array([int(r["t"]) for r in rows]),
        "yf": np.array([float(r["yf"]) for r in rows]),
        "cf_outcome": np.array([float(r["cf_outcome"]) for r in rows]),
        "cf_source": np.array([int(r["cf_source"]) for r in rows]),
        "paired": np.array([int(r["paired"]) for r in rows]),
        "pair_partner": np.array([int(r["pair_partner"]) for r in rows]),
        "distance": np.array([float(r["distance"]) for r in rows]),
    }
    return out
