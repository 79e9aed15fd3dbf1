"""Synthetic benchmark generator, bias-controlled resampling, and CSV I/O.

The generator produces covariates in four correlated blocks — confounders
C, instruments Z, irrelevant variables I, and adjustment variables A,
laid out in that column order — and a continuous outcome from a partially
linear model:

    tau = sin^2((C,A) . b_tau)        unit-level treatment effect
    g   = cos^2((C,A) . b_g)          baseline outcome
    a   = sin((C,Z) . b_a)            propensity index
    e0  = Phi((a - mean(a)) / std(a)) true propensity
    T ~ Bernoulli(e0),   Y = tau*T + g + noise

A pool with fixed group sizes is filled first; benchmark datasets are
then drawn from it, either uniformly or with extra selection bias
controlled by q (greedy picks of the most extreme |e0 - 0.5| units).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .numcore import RandomStream, mvn_sample, random_correlation_covariance, std_normal_cdf

BLOCK_TAGS = ("confounder", "adjustment", "instrument", "irrelevant", "unknown")


class GenerationError(RuntimeError):
    """Raised when the generator hits a degenerate configuration."""


class ParseError(ValueError):
    """Raised for malformed dataset CSV files."""


@dataclass
class SyntheticSpec:
    """All generator parameters.

    The weight vectors may be left as None, in which case each generation
    draws them uniform(0,1) from the stream (`resolved` pins them).
    noise_std defaults to 0.1; see the benchmark notes in the README for
    how the reference results scale with it.
    """

    n_confounders: int = 15
    n_adjustment: int = 15
    n_instruments: int = 10
    n_irrelevant: int = 20
    b_tau: Optional[np.ndarray] = None  # over (C, A)
    b_g: Optional[np.ndarray] = None  # over (C, A)
    b_a: Optional[np.ndarray] = None  # over (C, Z)
    noise_std: float = 0.1
    pool_treated: int = 1000
    pool_control: int = 1000
    draw_treated: int = 250
    draw_control: int = 750

    def __post_init__(self):
        for name in (
            "n_confounders",
            "n_adjustment",
            "n_instruments",
            "n_irrelevant",
            "pool_treated",
            "pool_control",
            "draw_treated",
            "draw_control",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        n_outcome = self.n_confounders + self.n_adjustment
        n_assign = self.n_confounders + self.n_instruments
        for name, vec, want in (
            ("b_tau", self.b_tau, n_outcome),
            ("b_g", self.b_g, n_outcome),
            ("b_a", self.b_a, n_assign),
        ):
            if vec is not None and len(np.asarray(vec).ravel()) != want:
                raise ValueError(f"{name} must have length {want}")

    @property
    def n_columns(self) -> int:
        return self.n_confounders + self.n_instruments + self.n_irrelevant + self.n_adjustment

    def resolved(self, stream: RandomStream) -> "SyntheticSpec":
        """Copy with any unset weight vectors drawn uniform(0,1)."""
        n_outcome = self.n_confounders + self.n_adjustment
        n_assign = self.n_confounders + self.n_instruments
        return replace(
            self,
            b_tau=self.b_tau if self.b_tau is not None else stream.uniform(n_outcome),
            b_g=self.b_g if self.b_g is not None else stream.uniform(n_outcome),
            b_a=self.b_a if self.b_a is not None else stream.uniform(n_assign),
        )


@dataclass
class Dataset:
    """Covariates plus per-unit treatment, outcomes, and optional truth."""

    x: np.ndarray  # (n, d)
    t: np.ndarray  # (n,) in {0, 1}
    y_f: np.ndarray  # (n,)
    y_cf: Optional[np.ndarray] = None
    mu0: Optional[np.ndarray] = None
    mu1: Optional[np.ndarray] = None
    e0: Optional[np.ndarray] = None
    block_labels: Optional[list[str]] = None

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.t = np.asarray(self.t, dtype=np.int64).ravel()
        self.y_f = np.asarray(self.y_f, dtype=float).ravel()
        n = self.x.shape[0]
        if len(self.t) != n or len(self.y_f) != n:
            raise ValueError("x, t, y_f must agree on the number of units")
        if not np.isin(self.t, (0, 1)).all():
            raise ValueError("t must be 0/1")
        for name in ("y_cf", "mu0", "mu1", "e0"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float).ravel()
                if len(v) != n:
                    raise ValueError(f"{name} must have length {n}")
                setattr(self, name, v)
        if self.e0 is not None and not ((self.e0 > 0) & (self.e0 < 1)).all():
            raise ValueError("e0 must lie strictly inside (0, 1)")
        if self.block_labels is not None:
            if len(self.block_labels) != self.x.shape[1]:
                raise ValueError("block_labels must have one tag per column")
            bad = set(self.block_labels) - set(BLOCK_TAGS)
            if bad:
                raise ValueError(f"unknown block tags: {sorted(bad)}")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def ite_true(self) -> Optional[np.ndarray]:
        if self.mu0 is None or self.mu1 is None:
            return None
        return self.mu1 - self.mu0

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        pick = lambda v: None if v is None else v[idx]
        return Dataset(
            x=self.x[idx],
            t=self.t[idx],
            y_f=self.y_f[idx],
            y_cf=pick(self.y_cf),
            mu0=pick(self.mu0),
            mu1=pick(self.mu1),
            e0=pick(self.e0),
            block_labels=list(self.block_labels) if self.block_labels is not None else None,
        )


def _default_labels(spec: SyntheticSpec) -> list[str]:
    return (
        ["confounder"] * spec.n_confounders
        + ["instrument"] * spec.n_instruments
        + ["irrelevant"] * spec.n_irrelevant
        + ["adjustment"] * spec.n_adjustment
    )


def _draw_units(spec, covs, n, stream):
    """Draw n units of raw covariate blocks; returns (x, c, z, a_block)."""
    cov_c, cov_z, cov_i, cov_a = covs
    c = mvn_sample(n, cov_c, stream) if spec.n_confounders else np.empty((n, 0))
    z = mvn_sample(n, cov_z, stream) if spec.n_instruments else np.empty((n, 0))
    i = mvn_sample(n, cov_i, stream) if spec.n_irrelevant else np.empty((n, 0))
    a = mvn_sample(n, cov_a, stream) if spec.n_adjustment else np.empty((n, 0))
    return np.hstack([c, z, i, a]), c, z, a


def generate_pool(spec: SyntheticSpec, stream: RandomStream) -> Dataset:
    """Fill a pool with exactly pool_treated treated and pool_control controls.

    Candidate units are drawn in batches, assigned T ~ Bernoulli(e0), and
    kept in encounter order until both quotas fill; overflow is discarded.
    The propensity index is standardized with the mean/std of the first
    candidate batch (the pool-level population) so e0 is consistent across
    batches.
    """
    spec = spec.resolved(stream)
    covs = tuple(
        random_correlation_covariance(k, stream) if k else np.empty((0, 0))
        for k in (spec.n_confounders, spec.n_instruments, spec.n_irrelevant, spec.n_adjustment)
    )

    want_t, want_c = spec.pool_treated, spec.pool_control
    kept = {1: [], 0: []}
    mu_a = sd_a = None
    batch_n = max(want_t + want_c, 2)
    guard = 0
    while len(kept[1]) < want_t or len(kept[0]) < want_c:
        guard += 1
        if guard > 200:
            raise GenerationError(
                "pool quotas not reached after 200 batches; propensity too extreme"
            )
        x, c, z, a_block = _draw_units(spec, covs, batch_n, stream)
        index = np.sin(np.hstack([c, z]) @ np.asarray(spec.b_a, dtype=float))
        if mu_a is None:
            mu_a, sd_a = float(index.mean()), float(index.std())
            if sd_a == 0.0:
                raise GenerationError("singular propensity index: std(a) = 0 over the pool")
        e0 = np.array([std_normal_cdf(v) for v in (index - mu_a) / sd_a])
        np.clip(e0, 1e-12, 1.0 - 1e-12, out=e0)
        t = stream.bernoulli(e0)

        ca = np.hstack([c, a_block])
        tau = np.sin(ca @ np.asarray(spec.b_tau, dtype=float)) ** 2
        g = np.cos(ca @ np.asarray(spec.b_g, dtype=float)) ** 2
        noise = spec.noise_std * stream.standard_normal(batch_n)
        y = tau * t + g + noise

        for j in range(batch_n):
            group = int(t[j])
            quota = want_t if group == 1 else want_c
            if len(kept[group]) < quota:
                kept[group].append(
                    (x[j], group, y[j], g[j], g[j] + tau[j], e0[j], y[j] + tau[j] * (1 - 2 * group))
                )
        batch_n = max(512, 2 * (want_t - len(kept[1])) + 2 * (want_c - len(kept[0])))

    rows = kept[1] + kept[0]
    return Dataset(
        x=np.vstack([r[0] for r in rows]),
        t=np.array([r[1] for r in rows]),
        y_f=np.array([r[2] for r in rows]),
        mu0=np.array([r[3] for r in rows]),
        mu1=np.array([r[4] for r in rows]),
        e0=np.array([r[5] for r in rows]),
        y_cf=np.array([r[6] for r in rows]),
        block_labels=_default_labels(spec),
    )


def generate_synthetic(spec: SyntheticSpec, stream: RandomStream) -> Dataset:
    """Pool generation followed by an unbiased draw of the benchmark dataset."""
    spec = spec.resolved(stream)
    pool = generate_pool(spec, stream)
    return biased_resample(pool, 0.0, spec.draw_treated, spec.draw_control, stream)


def biased_resample(
    pool: Dataset, q: float, draw_treated: int, draw_control: int, stream: RandomStream
) -> Dataset:
    """Draw units per group, mixing uniform picks with greedy extreme picks.

    Each drawn unit is, with probability 1-q, uniform over the not-yet-drawn
    units of its group; with probability q it is the remaining unit with the
    largest |e0 - 0.5| (ties to the lowest index).  q=0 is plain subsampling
    without replacement; q=1 takes exactly the top-k most extreme units.
    """
    if pool.e0 is None:
        raise ValueError("biased_resample requires a pool with true propensities e0")
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    extremeness = np.abs(pool.e0 - 0.5)
    chosen: list[int] = []
    for group, want in ((1, draw_treated), (0, draw_control)):
        members = np.flatnonzero(pool.t == group)
        if want > len(members):
            raise ValueError(
                f"cannot draw {want} units from group {group} of size {len(members)}"
            )
        # greedy order: most extreme first, stable on ties
        order = members[np.lexsort((members, -extremeness[members]))]
        in_order = list(order)
        taken = np.zeros(len(order), dtype=bool)
        remaining = list(range(len(order)))
        greedy_ptr = 0
        for _ in range(want):
            if q > 0 and stream.uniform() < q:
                while taken[greedy_ptr]:
                    greedy_ptr += 1
                pick = greedy_ptr
            else:
                pick = remaining[stream.integers(0, len(remaining))]
            taken[pick] = True
            remaining.remove(pick)
            chosen.append(int(in_order[pick]))
    return pool.subset(np.array(chosen, dtype=np.int64))


def augment_irrelevant(ds: Dataset, k: int, stream: RandomStream) -> Dataset:
    """Append k pure-noise columns drawn as one correlated normal block."""
    if k < 1:
        raise ValueError("k must be >= 1")
    cov = random_correlation_covariance(k, stream)
    block = mvn_sample(ds.n, cov, stream)
    labels = list(ds.block_labels) if ds.block_labels is not None else ["unknown"] * ds.d
    return Dataset(
        x=np.hstack([ds.x, block]),
        t=ds.t.copy(),
        y_f=ds.y_f.copy(),
        y_cf=None if ds.y_cf is None else ds.y_cf.copy(),
        mu0=None if ds.mu0 is None else ds.mu0.copy(),
        mu1=None if ds.mu1 is None else ds.mu1.copy(),
        e0=None if ds.e0 is None else ds.e0.copy(),
        block_labels=labels + ["irrelevant"] * k,
    )


_OPTIONAL_COLS = ("ycf", "mu0", "mu1", "e0")


def write_dataset(ds: Dataset, path) -> None:
    """Write the documented CSV schema (x0..x{d-1}, t, yf, optional extras)."""
    header = [f"x{j}" for j in range(ds.d)] + ["t", "yf"]
    extras = []
    for name, col in zip(_OPTIONAL_COLS, (ds.y_cf, ds.mu0, ds.mu1, ds.e0)):
        if col is not None:
            header.append(name)
            extras.append(col)
    with open(path, "w", newline="") as fh:
        if ds.block_labels is not None:
            fh.write("# blocks: " + ",".join(ds.block_labels) + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.x[i]]
            row.append(str(int(ds.t[i])))
            row.append(repr(float(ds.y_f[i])))
            row.extend(repr(float(col[i])) for col in extras)
            writer.writerow(row)


def read_dataset(path) -> Dataset:
    """Read the documented CSV schema; errors name the offending row/column."""
    block_labels = None
    with open(path, newline="") as fh:
        first = fh.readline()
        if first.startswith("#"):
            body = first.lstrip("#").strip()
            if body.startswith("blocks:"):
                body = body[len("blocks:") :].strip()
            block_labels = [s.strip() for s in body.split(",")] if body else None
            header_line = fh.readline()
        else:
            header_line = first
        if not header_line:
            raise ParseError(f"{path}: empty file")
        reader = csv.reader([header_line.rstrip("\n")])
        header = next(reader)
        rows = list(csv.reader(fh))

    col_of = {name: i for i, name in enumerate(header)}
    d = sum(1 for name in header if name.startswith("x"))
    for j in range(d):
        if f"x{j}" not in col_of:
            raise ParseError(f"{path}: covariate columns not contiguous, missing 'x{j}'")
    for required in ("t", "yf"):
        if required not in col_of:
            raise ParseError(f"{path}: missing required column '{required}'")
    if d == 0:
        raise ParseError(f"{path}: no covariate columns x0..")
    known = {f"x{j}" for j in range(d)} | {"t", "yf"} | set(_OPTIONAL_COLS)
    unknown = [name for name in header if name not in known]
    if unknown:
        raise ParseError(f"{path}: unknown columns {unknown}")

    n = len(rows)
    x = np.empty((n, d))
    t = np.empty(n, dtype=np.int64)
    yf = np.empty(n)
    opt = {name: np.empty(n) for name in _OPTIONAL_COLS if name in col_of}
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ParseError(
                f"{path}: row {i + 2} has {len(row)} fields, expected {len(header)}"
            )
        try:
            for j in range(d):
                x[i, j] = float(row[col_of[f"x{j}"]])
            yf[i] = float(row[col_of["yf"]])
            for name, arr in opt.items():
                arr[i] = float(row[col_of[name]])
        except ValueError as exc:
            raise ParseError(f"{path}: row {i + 2}: {exc}") from None
        t_raw = row[col_of["t"]].strip()
        if t_raw not in ("0", "1"):
            raise ParseError(f"{path}: row {i + 2}: t must be 0 or 1, got {t_raw!r}")
        t[i] = int(t_raw)

    if block_labels is not None and len(block_labels) != d:
        raise ParseError(f"{path}: block label count {len(block_labels)} != {d} columns")
    return Dataset(
        x=x,
        t=t,
        y_f=yf,
        y_cf=opt.get("ycf"),
        mu0=opt.get("mu0"),
        mu1=opt.get("mu1"),
        e0=opt.get("e0"),
        block_labels=block_labels,
    )
