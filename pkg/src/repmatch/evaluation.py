"""Effect estimands, error metrics, and selection-layer importances."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .datagen import Dataset
from .matching import MatchResult
from .network import NetworkParams


@dataclass
class EffectEstimates:
    """Per-unit and average effect estimates, with truth when known."""

    ite_hat: np.ndarray
    ate_hat: float
    ite_true: Optional[np.ndarray] = None
    ate_true: Optional[float] = None


@dataclass
class MetricReport:
    eps_ate: float
    pehe: float
    sqrt_pehe: float
    n_units: int


def estimate_effects(ds: Dataset, mr: MatchResult) -> EffectEstimates:
    """Unit-level effects from imputed counterfactuals.

    Treated units: factual minus imputed control outcome; control units:
    imputed treated outcome minus factual.
    """
    cf = np.asarray(mr.cf_outcome, dtype=float)
    if len(cf) != ds.n or not np.isfinite(cf).all():
        raise ValueError("match result must provide a counterfactual for every unit")
    sign = 2.0 * ds.t - 1.0
    ite_hat = sign * (ds.y_f - cf)
    ite_true = ds.ite_true
    return EffectEstimates(
        ite_hat=ite_hat,
        ate_hat=float(ite_hat.mean()),
        ite_true=ite_true,
        ate_true=None if ite_true is None else float(ite_true.mean()),
    )


def metrics(est: EffectEstimates) -> MetricReport:
    """Absolute ATE error and mean squared per-unit effect error."""
    if est.ite_true is None or est.ate_true is None:
        raise ValueError("metrics require ground-truth effects (mu0/mu1)")
    eps_ate = abs(est.ate_true - est.ate_hat)
    pehe = float(np.mean((est.ite_true - est.ite_hat) ** 2))
    return MetricReport(
        eps_ate=float(eps_ate),
        pehe=pehe,
        sqrt_pehe=float(np.sqrt(pehe)),
        n_units=len(est.ite_hat),
    )


def feature_importance(params: NetworkParams) -> np.ndarray:
    """Normalized |weight| of the one-to-one selection layer, in [0, 1]."""
    if params.select_diag is None:
        raise ValueError("feature importance needs the one-to-one selection layer")
    mag = np.abs(params.select_diag)
    top = mag.max()
    if top == 0.0:
        return np.zeros_like(mag)
    return mag / top
