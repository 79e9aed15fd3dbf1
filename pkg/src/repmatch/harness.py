"""Experiment orchestration: replication sweeps, bias sweeps, grid search.

Each realization derives its own random stream from (master seed, index),
so results are reproducible bit-for-bit and independent of worker count;
realization i of a 10-run experiment is identical to realization i of a
100-run experiment with the same seed.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import multiprocessing
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .datagen import Dataset, SyntheticSpec, biased_resample, generate_pool, read_dataset
from .evaluation import estimate_effects, feature_importance, metrics
from .matching import METRIC_ALIASES, impute_counterfactuals
from .network import NetworkParams, TrainConfig, eval_forward, train
from .numcore import RandomStream

MAX_FAILURE_FRACTION = 0.1


@dataclass
class ExperimentConfig:
    """One experiment: data source, training recipe, matching metric."""

    train: TrainConfig = field(default_factory=TrainConfig)
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    dataset_path: Optional[str] = None
    metric: str = "euclidean"
    n_realizations: int = 100
    seed: int = 0
    q: float = 0.0
    disable_fsl: bool = False
    disable_ipm: bool = False
    outdir: str = "results"
    workers: int = 1

    def __post_init__(self):
        self.metric = METRIC_ALIASES.get(self.metric, self.metric)
        if self.metric not in ("euclidean", "mahalanobis", "propensity"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.n_realizations < 1:
            raise ValueError("n_realizations must be >= 1")
        if not 0.0 <= self.q <= 1.0:
            raise ValueError("q must lie in [0, 1]")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def effective_train_config(self) -> TrainConfig:
        """Training config with the ablation flags applied."""
        tc = self.train
        if self.disable_fsl:
            tc = replace(tc, use_feature_selection=False, lambda_l2=0.0, alpha_l1=0.0)
        if self.disable_ipm:
            tc = replace(tc, gamma=0.0)
        return tc


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def realization_dataset(cfg: ExperimentConfig, index: int) -> Dataset:
    """Build the dataset for realization `index` (generate or ingest)."""
    s = RandomStream(cfg.seed).split(index)
    s_gen, s_draw = s.split(0), s.split(1)
    if cfg.dataset_path is None:
        spec = cfg.synthetic.resolved(s_gen)
        pool = generate_pool(spec, s_gen)
        return biased_resample(pool, cfg.q, spec.draw_treated, spec.draw_control, s_draw)
    ds = read_dataset(cfg.dataset_path)
    if cfg.q > 0.0:
        return biased_resample(
            ds, cfg.q, cfg.synthetic.draw_treated, cfg.synthetic.draw_control, s_draw
        )
    return ds


def _matching_aux(fr, metric):
    if metric == "mahalanobis":
        return fr.representation
    if metric == "propensity":
        return fr.p_treated
    return None


REALIZATION_FIELDS = [
    "realization",
    "seed",
    "metric",
    "sqrt_pehe",
    "pehe",
    "eps_ate",
    "ate_hat",
    "ate_true",
    "pair_cost",
    "train_loss",
    "val_loss",
    "epochs",
    "n_treated",
    "n_control",
    "importance_confounder",
    "importance_irrelevant",
]


def run_realization(cfg: ExperimentConfig, index: int) -> dict:
    """Full pipeline for one realization; returns one metrics row."""
    ds = realization_dataset(cfg, index)
    s_train = RandomStream(cfg.seed).split(index).split(2)
    tc = cfg.effective_train_config()
    params, history = train(tc, ds, s_train)
    fr = eval_forward(params, ds)
    mr = impute_counterfactuals(ds, fr.representation, cfg.metric, _matching_aux(fr, cfg.metric))
    estimates = estimate_effects(ds, mr)
    report = metrics(estimates)

    imp_conf = imp_irr = float("nan")
    if params.select_diag is not None and ds.block_labels is not None:
        imp = feature_importance(params)
        labels = np.array(ds.block_labels)
        if (labels == "confounder").any():
            imp_conf = float(imp[labels == "confounder"].mean())
        if (labels == "irrelevant").any():
            imp_irr = float(imp[labels == "irrelevant"].mean())

    return {
        "realization": index,
        "seed": cfg.seed,
        "metric": cfg.metric,
        "sqrt_pehe": report.sqrt_pehe,
        "pehe": report.pehe,
        "eps_ate": report.eps_ate,
        "ate_hat": estimates.ate_hat,
        "ate_true": estimates.ate_true,
        "pair_cost": mr.pair_cost,
        "train_loss": history[-1]["train_total"] if history else float("nan"),
        "val_loss": history[-1]["best_val"] if history else float("nan"),
        "epochs": len(history),
        "n_treated": int((ds.t == 1).sum()),
        "n_control": int((ds.t == 0).sum()),
        "importance_confounder": imp_conf,
        "importance_irrelevant": imp_irr,
    }


def _worker(payload):
    cfg, index = payload
    try:
        return index, run_realization(cfg, index), None
    except Exception as exc:  # noqa: BLE001 - failures are counted, not fatal
        return index, None, f"{type(exc).__name__}: {exc}"


AGGREGATE_STATS = ("sqrt_pehe", "pehe", "eps_ate", "pair_cost")


def aggregate_rows(rows: list[dict]) -> dict:
    """Mean and sample standard deviation of the headline metrics."""
    out = {}
    for name in AGGREGATE_STATS:
        vals = np.array([r[name] for r in rows], dtype=float)
        out[f"mean_{name}"] = float(vals.mean())
        out[f"std_{name}"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    return out


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Replicated pipeline; writes realizations.csv and aggregate.csv.

    Failed realizations are logged and counted; more than
    MAX_FAILURE_FRACTION of them aborts the experiment.
    """
    os.makedirs(cfg.outdir, exist_ok=True)
    payloads = [(cfg, i) for i in range(cfg.n_realizations)]
    if cfg.workers > 1:
        with multiprocessing.Pool(cfg.workers) as pool:
            results = pool.map(_worker, payloads, chunksize=1)
    else:
        results = [_worker(p) for p in payloads]

    results.sort(key=lambda r: r[0])
    rows = [row for _, row, err in results if err is None]
    errors = [(i, err) for i, _, err in results if err is not None]
    if errors:
        with open(os.path.join(cfg.outdir, "errors.log"), "w") as fh:
            for i, err in errors:
                fh.write(f"realization {i}: {err}\n")
    if len(errors) > MAX_FAILURE_FRACTION * cfg.n_realizations:
        raise RuntimeError(
            f"{len(errors)}/{cfg.n_realizations} realizations failed; see errors.log"
        )

    _write_rows(
        os.path.join(cfg.outdir, "realizations.csv"),
        REALIZATION_FIELDS,
        [[row[k] for k in REALIZATION_FIELDS] for row in rows],
    )
    summary = {
        "n_realizations": cfg.n_realizations,
        "n_failed": len(errors),
        "metric": cfg.metric,
        "q": cfg.q,
    }
    summary.update(aggregate_rows(rows))
    _write_rows(
        os.path.join(cfg.outdir, "aggregate.csv"),
        ["stat", "value"],
        [[k, v] for k, v in summary.items()],
    )
    summary["rows"] = rows
    return summary


def bias_sweep(cfg: ExperimentConfig, q_grid: list[float]) -> list[dict]:
    """run_experiment once per q; emits a plot-ready sweep.csv."""
    if not q_grid:
        raise ValueError("q_grid must be nonempty")
    out = []
    for q in q_grid:
        sub = replace(cfg, q=float(q), outdir=os.path.join(cfg.outdir, f"q_{q:g}"))
        summary = run_experiment(sub)
        out.append(
            {
                "q": float(q),
                "mean_sqrt_pehe": summary["mean_sqrt_pehe"],
                "std_sqrt_pehe": summary["std_sqrt_pehe"],
                "mean_eps_ate": summary["mean_eps_ate"],
                "std_eps_ate": summary["std_eps_ate"],
            }
        )
    header = ["q", "mean_sqrt_pehe", "std_sqrt_pehe", "mean_eps_ate", "std_eps_ate"]
    _write_rows(
        os.path.join(cfg.outdir, "sweep.csv"), header, [[r[k] for k in header] for r in out]
    )
    return out


# -- hyperparameter search ---------------------------------------------------

SEARCH_BUDGET = 24
_SEARCH_STREAM_CHILD = 999  # reserved split index for candidate sampling


def _candidates(grid: dict[str, list], budget: int, stream: RandomStream) -> list[dict]:
    keys = sorted(grid)
    combos = 1
    for k in keys:
        if not grid[k]:
            raise ValueError(f"grid entry {k!r} is empty")
        combos *= len(grid[k])
    if combos <= budget:
        return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]
    picks = []
    for _ in range(budget):
        picks.append({k: grid[k][stream.integers(0, len(grid[k]))] for k in keys})
    return picks


def _score_worker(payload):
    cfg, overrides = payload
    tc = replace(cfg.effective_train_config(), **overrides)
    ds = realization_dataset(cfg, 0)
    s_train = RandomStream(cfg.seed).split(0).split(2)
    try:
        _, history = train(tc, ds, s_train)
        best = [row for row in history if row["is_best"]]
        if not best:
            return overrides, float("inf")
        row = best[-1]
        # model-selection score independent of the candidate's own penalty
        # weights: factual prediction quality on held-out validation units
        return overrides, float(row["val_treatment"] + row["val_outcome_mse"])
    except Exception:  # noqa: BLE001 - diverging candidates rank last
        return overrides, float("inf")


def hyper_search(
    cfg: ExperimentConfig, grid: dict[str, list], budget: int = SEARCH_BUDGET
) -> tuple[TrainConfig, list[tuple[dict, float]]]:
    """Rank grid candidates by validation score on realization 0.

    Returns the winning TrainConfig and the full (overrides, score)
    ranking, best first.  Every candidate sees identical data and an
    identical initialization stream, so the comparison is paired.
    """
    if not grid:
        raise ValueError("grid must be nonempty")
    valid = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(grid) - valid
    if unknown:
        raise ValueError(f"unknown hyperparameters in grid: {sorted(unknown)}")
    stream = RandomStream(cfg.seed).split(_SEARCH_STREAM_CHILD)
    cands = _candidates(grid, budget, stream)
    payloads = [(cfg, c) for c in cands]
    if cfg.workers > 1:
        with multiprocessing.Pool(cfg.workers) as pool:
            scored = pool.map(_score_worker, payloads, chunksize=1)
    else:
        scored = [_score_worker(p) for p in payloads]
    order = sorted(range(len(scored)), key=lambda i: (scored[i][1], i))
    ranking = [scored[i] for i in order]
    best = replace(cfg.effective_train_config(), **ranking[0][0])
    return best, ranking


def write_ranking(path, ranking) -> None:
    keys = sorted(ranking[0][0]) if ranking else []
    header = ["rank", "score"] + keys
    rows = []
    for rank, (overrides, score) in enumerate(ranking):
        rows.append([rank, score] + [_csv_value(overrides[k]) for k in keys])
    _write_rows(path, header, rows)


def _csv_value(v):
    if isinstance(v, (tuple, list)):
        return " ".join(str(x) for x in v)
    return v


# -- config files -------------------------------------------------------------

_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}
_SPEC_FIELDS = {
    f.name: f
    for f in dataclasses.fields(SyntheticSpec)
    if f.name not in ("b_tau", "b_g", "b_a")
}
_HARNESS_FIELDS = {
    "dataset": str,
    "metric": str,
    "n_realizations": int,
    "seed": int,
    "q": float,
    "disable_fsl": bool,
    "disable_ipm": bool,
    "outdir": str,
    "workers": int,
}


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _parse_scalar(raw: str, typ):
    if typ is bool:
        return _parse_bool(raw)
    if typ is int:
        return int(raw)
    if typ is float:
        return float(raw)
    return raw.strip()


def parse_value(key: str, raw: str):
    """Parse one config value according to the field it targets."""
    raw = raw.strip()
    if key == "layer_dims":
        dims = tuple(int(v) for v in raw.replace(",", " ").split())
        return dims
    if key in _TRAIN_FIELDS:
        typ = _TRAIN_FIELDS[key].type
        base = {"float": float, "int": int, "bool": bool, "str": str}.get(
            str(typ).replace("builtins.", ""), None
        )
        if base is None:
            base = type(getattr(TrainConfig(), key))
        return _parse_scalar(raw, base)
    if key in _SPEC_FIELDS:
        base = type(getattr(SyntheticSpec(), key))
        return _parse_scalar(raw, base)
    if key in _HARNESS_FIELDS:
        return _parse_scalar(raw, _HARNESS_FIELDS[key])
    raise ValueError(f"unknown config key {key!r}")


def read_key_values(path) -> dict[str, str]:
    """Flat `key = value` file with '#' comments; later keys override."""
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line.rstrip()!r}")
            key, raw = body.split("=", 1)
            out[key.strip()] = raw.strip()
    return out


def load_experiment_config(path=None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Build an ExperimentConfig from a config file plus CLI overrides."""
    raw = read_key_values(path) if path else {}
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    train_kwargs, spec_kwargs, harness_kwargs = {}, {}, {}
    for key, value in raw.items():
        parsed = value if not isinstance(value, str) else parse_value(key, value)
        if key in _TRAIN_FIELDS:
            train_kwargs[key] = parsed
        elif key in _SPEC_FIELDS:
            spec_kwargs[key] = parsed
        elif key in _HARNESS_FIELDS:
            if key == "dataset":
                harness_kwargs["dataset_path"] = parsed or None
            else:
                harness_kwargs[key] = parsed
        else:
            raise ValueError(f"unknown config key {key!r}")
    return ExperimentConfig(
        train=TrainConfig(**train_kwargs),
        synthetic=SyntheticSpec(**spec_kwargs),
        **harness_kwargs,
    )


def read_grid_file(path) -> dict[str, list]:
    """Grid file: `key = v1; v2; ...` with ';' separating candidates."""
    grid: dict[str, list] = {}
    for key, raw in read_key_values(path).items():
        grid[key] = [parse_value(key, part) for part in raw.split(";") if part.strip()]
    return grid
