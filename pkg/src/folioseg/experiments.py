"""Experiment harness: Monte Carlo cross-validation and training-size sweeps.

Folds are independent random train/test partitions (not a disjoint k-fold
cover).  Every fold's partition and weight initialization derive from the
master seed through a counter-based scheme, so folds can run in a process
pool yet reproduce bit-exactly in any order or worker count.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .metrics import MetricsReport, evaluate, mean_std, pool
from .model import FcnConfig, predict_labels
from .postprocess import apply_bitmask, connected_components, mode_relabel
from .preprocess import NetInputSpec
from .training import PageSample, TrainConfig, train_on_samples

ABSOLUTE_GRID = (1, 2, 3, 4, 5, 7, 10, 15, 20, 30, 50)
RELATIVE_GRID = tuple(round(0.05 * k, 2) for k in range(1, 17))  # 0.05 .. 0.80


@dataclass
class ExperimentConfig:
    fcn: FcnConfig
    train: TrainConfig
    master_seed: int
    folds: int = 10
    train_fraction: float = 0.5
    postproc: str = "both"  # "on" | "off" | "both"
    connectivity: int = 8
    net_spec: NetInputSpec = field(default_factory=NetInputSpec)
    jobs: int = 1

    def __post_init__(self):
        if self.folds < 1:
            raise DataError("folds must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise DataError("train fraction must be in (0, 1)")
        if self.postproc not in ("on", "off", "both"):
            raise DataError(f"postproc must be on/off/both, got {self.postproc!r}")

    def variants(self) -> tuple:
        if self.postproc == "on":
            return ("postproc",)
        if self.postproc == "off":
            return ("raw",)
        return ("raw", "postproc")


@dataclass
class FoldOutcome:
    point_kind: str  # "absolute" | "relative" | "cv" | "fixed"
    point_value: float
    fold: int
    seed: int
    n_train: int
    n_test: int
    reports: dict  # variant -> pooled MetricsReport


@dataclass
class SweepPoint:
    point_value: float
    n_train: int
    outcomes: list

    def fgpe_stats(self, variant: str):
        """(min, avg, max) FgPE across folds for one variant."""
        vals = [o.reports[variant].fgpe for o in self.outcomes if o.reports[variant].fgpe is not None]
        if not vals:
            return None, None, None
        return min(vals), sum(vals) / len(vals), max(vals)


@dataclass
class SweepResult:
    point_kind: str
    points: list  # of SweepPoint
    skipped: list  # of (point_value, reason)


def fold_seeds(master_seed: int, point_index: int, fold: int) -> tuple[int, int]:
    """(partition_seed, init_seed) for one fold, counter-derived."""
    ss = np.random.SeedSequence([master_seed, point_index, fold])
    part, init = ss.generate_state(2)
    return int(part), int(init)


def evaluate_fold(params, test_samples: list[PageSample], cfg: ExperimentConfig) -> dict:
    """Predict and score every test page; returns variant -> pooled report."""
    per_variant = {v: [] for v in cfg.variants()}
    c = cfg.fcn.num_classes
    for s in test_samples:
        pred = predict_labels(params, s.page, cfg.net_spec)
        if "raw" in per_variant:
            per_variant["raw"].append(evaluate(s.gt_full, pred, s.bin_full, c))
        if "postproc" in per_variant:
            masked = apply_bitmask(pred, s.bin_full)
            comps = connected_components(s.bin_full, cfg.connectivity)
            relabeled = mode_relabel(masked, comps)
            per_variant["postproc"].append(evaluate(s.gt_full, relabeled, s.bin_full, c))
    return {v: pool(reports) for v, reports in per_variant.items()}


def _run_fold(samples: list[PageSample], cfg: ExperimentConfig, point_kind: str,
              point_value: float, point_index: int, n_train: int, fold: int) -> FoldOutcome:
    part_seed, init_seed = fold_seeds(cfg.master_seed, point_index, fold)
    perm = np.random.default_rng(part_seed).permutation(len(samples))
    train_idx = sorted(perm[:n_train].tolist())
    test_idx = sorted(perm[n_train:].tolist())
    tcfg = TrainConfig(
        iterations=cfg.train.iterations,
        seed=init_seed,
        learning_rate=cfg.train.learning_rate,
        optimizer=cfg.train.optimizer,
        beta1=cfg.train.beta1,
        beta2=cfg.train.beta2,
        eps=cfg.train.eps,
        momentum=cfg.train.momentum,
        batch_size=cfg.train.batch_size,
    )
    params, _ = train_on_samples([samples[i] for i in train_idx], cfg.fcn, tcfg, cfg.net_spec)
    reports = evaluate_fold(params, [samples[i] for i in test_idx], cfg)
    return FoldOutcome(point_kind, point_value, fold, init_seed, n_train, len(test_idx), reports)


def _run_fold_star(args):
    return _run_fold(*args)


def _run_jobs(jobs_args: list, workers: int) -> list[FoldOutcome]:
    if workers <= 1 or len(jobs_args) <= 1:
        return [_run_fold_star(a) for a in jobs_args]
    with ProcessPoolExecutor(max_workers=workers) as pool_:
        results = list(pool_.map(_run_fold_star, jobs_args))
    # merge is order-independent: re-key by (point, fold)
    results.sort(key=lambda o: (o.point_kind, o.point_value, o.fold))
    return results


def monte_carlo_cv(samples: list[PageSample], cfg: ExperimentConfig):
    """Repeated random-split evaluation; returns (outcomes, variant -> agg).

    Each fold draws a fresh train/test partition and weight init; the
    aggregate is mean +- sample std of the fold-level pooled metrics.
    """
    d = len(samples)
    if d < 2:
        raise DataError("Monte Carlo CV needs at least 2 pages")
    n_train = round(cfg.train_fraction * d)
    if n_train < 1 or n_train > d - 1:
        raise DataError(
            f"train fraction {cfg.train_fraction} gives an empty train or test set on {d} pages"
        )
    args = [(samples, cfg, "cv", cfg.train_fraction, 0, n_train, f) for f in range(cfg.folds)]
    outcomes = _run_jobs(args, cfg.jobs)
    agg = {}
    for v in cfg.variants():
        agg[v] = {
            "tpa": mean_std([o.reports[v].tpa for o in outcomes]),
            "fgpa": mean_std([o.reports[v].fgpa for o in outcomes if o.reports[v].fgpa is not None]),
            "fgpe": mean_std([o.reports[v].fgpe for o in outcomes if o.reports[v].fgpe is not None]),
        }
    return outcomes, agg


def size_sweep(samples: list[PageSample], cfg: ExperimentConfig, kind: str,
               grid=None) -> SweepResult:
    """Training-size sweep over an absolute page-count or relative grid.

    Unsatisfiable points (train set empty, or no page left for testing) are
    skipped and recorded, not errors, unless every point is unsatisfiable.
    """
    if kind not in ("absolute", "relative"):
        raise DataError(f"sweep kind must be absolute or relative, got {kind!r}")
    if grid is None:
        grid = ABSOLUTE_GRID if kind == "absolute" else RELATIVE_GRID
    d = len(samples)
    points = []
    skipped = []
    jobs_args = []
    plan = []
    for pi, pv in enumerate(grid):
        n_train = int(pv) if kind == "absolute" else round(pv * d)
        if n_train < 1:
            skipped.append((pv, f"train size {n_train} < 1"))
            continue
        if n_train > d - 1:
            skipped.append((pv, f"train size {n_train} leaves no test page (dataset has {d})"))
            continue
        plan.append((pv, n_train))
        for f in range(cfg.folds):
            jobs_args.append((samples, cfg, kind, pv, pi, n_train, f))
    if not plan:
        raise DataError("every sweep point is unsatisfiable for this dataset")
    outcomes = _run_jobs(jobs_args, cfg.jobs)
    by_point = {}
    for o in outcomes:
        by_point.setdefault(o.point_value, []).append(o)
    for pv, n_train in plan:
        points.append(SweepPoint(pv, n_train, sorted(by_point[pv], key=lambda o: o.fold)))
    return SweepResult(kind, points, skipped)


def fixed_split_eval(samples: list[PageSample], cfg: ExperimentConfig):
    """Train on records tagged `train`, evaluate on those tagged `test`."""
    train_samples = [s for s in samples if s.split == "train"]
    test_samples = [s for s in samples if s.split == "test"]
    if not train_samples or not test_samples:
        raise DataError(
            "fixed-split evaluation needs records tagged train and test; "
            "use monte-carlo mode for untagged manifests"
        )
    _, init_seed = fold_seeds(cfg.master_seed, 0, 0)
    tcfg = TrainConfig(
        iterations=cfg.train.iterations,
        seed=init_seed,
        learning_rate=cfg.train.learning_rate,
        optimizer=cfg.train.optimizer,
        batch_size=cfg.train.batch_size,
    )
    params, curve = train_on_samples(train_samples, cfg.fcn, tcfg, cfg.net_spec)
    reports = evaluate_fold(params, test_samples, cfg)
    outcome = FoldOutcome("fixed", 0.0, 0, init_seed, len(train_samples), len(test_samples), reports)
    return params, curve, outcome


# ---------------------------------------------------------------------------
# CSV emission


RESULT_COLUMNS = ["point_kind", "point_value", "fold", "seed", "postproc",
                  "tpa", "fgpa", "fgpe", "pages_train", "pages_test"]


def _fmt(v):
    return "" if v is None else f"{v:.10g}"


def write_results_csv(path, outcomes: list[FoldOutcome]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(RESULT_COLUMNS)
        for o in outcomes:
            for variant, rep in o.reports.items():
                w.writerow([
                    o.point_kind, _fmt(o.point_value), o.fold, o.seed,
                    "1" if variant == "postproc" else "0",
                    _fmt(rep.tpa), _fmt(rep.fgpa), _fmt(rep.fgpe),
                    o.n_train, o.n_test,
                ])


def write_summary_csv(path, sweep: SweepResult, variant: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["point_value", "fgpe_min", "fgpe_avg", "fgpe_max"])
        for p in sweep.points:
            lo, avg, hi = p.fgpe_stats(variant)
            w.writerow([_fmt(p.point_value), _fmt(lo), _fmt(avg), _fmt(hi)])
