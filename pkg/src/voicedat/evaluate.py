"""Cross-validation planning, recall metrics, significance, experiments.

The experiment harness reproduces the comparison-table protocol: repeated
stratified 5-fold cross-validation over the clean source corpus, one model
per (repeat, fold, variant) cell, head-segment evaluation on the clean test
fold and on its noise-corrupted twin, and Welch t-tests of every variant
against the adversarial one on the per-fold UAR lists.

Significance uses a self-contained Student-t tail probability built on the
regularized incomplete beta function (continued fraction, evaluated with the
modified Lentz scheme), so the statistics stack has no dependency beyond the
math module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .datasets import SampleSet, build_desk_dataset, corrupt_test_fold
from .training import DataBundle, TrainConfig, VARIANTS, predict_labels, train

__all__ = [
    "FoldPlan", "make_folds", "confusion_matrix", "uar",
    "TTestResult", "t_test_independent", "regularized_incomplete_beta",
    "MetricsReport", "ExperimentReport", "run_experiment",
    "box_stats", "lambda_sweep",
    "write_table1", "write_significance", "write_lambda_box",
]

DOMAIN_CONDITIONS = ("source", "target")


# ---------------------------------------------------------------------------
# fold planning


@dataclass(frozen=True)
class FoldPlan:
    """One (repeat, fold) evaluation cell of a repeated k-fold CV."""

    repeat: int  # 1-based
    fold: int  # 1-based
    train_ids: tuple
    test_ids: tuple
    seed: int


def make_folds(ids, folds: int = 5, repeats: int = 10, seed: int = 0,
               labels=None) -> list[FoldPlan]:
    """Seeded repeated k-fold plans over sample ids.

    ids may be a sequence of identifiers or an integer count (then the ids
    are 0..n-1). Each repeat shuffles independently; fold f collects the
    shuffled positions congruent to f-1 modulo folds, which makes fold sizes
    as equal as possible, the larger folds first. With labels given, the
    shuffle is reordered class by class before dealing, so every fold also
    gets an equal share (within one) of each class.
    """
    if isinstance(ids, (int, np.integer)):
        ids = tuple(range(int(ids)))
    else:
        ids = tuple(ids)
    n = len(ids)
    if n < folds:
        raise ValueError(f"cannot split {n} samples into {folds} folds")
    if not 2 <= folds <= 5:
        raise ValueError("folds must be in 2..5")
    if not 1 <= repeats <= 10:
        raise ValueError("repeats must be in 1..10")
    if len(set(ids)) != n:
        raise ValueError("sample ids must be unique")
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (n,):
            raise ValueError("labels must align with ids")

    plans = []
    for repeat in range(1, repeats + 1):
        rng = np.random.default_rng([seed, repeat])
        order = rng.permutation(n)
        if labels is not None:
            # stable regrouping of the shuffled order by class: random within
            # class, then dealt round-robin like the plain case
            order = np.concatenate(
                [order[labels[order] == c] for c in np.unique(labels)])
        for fold in range(1, folds + 1):
            test = order[fold - 1::folds]
            mask = np.zeros(n, dtype=bool)
            mask[test] = True
            plans.append(FoldPlan(
                repeat, fold,
                tuple(ids[i] for i in range(n) if not mask[i]),
                tuple(ids[i] for i in range(n) if mask[i]),
                seed))
    return plans


# ---------------------------------------------------------------------------
# recall metrics


def confusion_matrix(y_true, y_pred, n_classes: int = 3) -> np.ndarray:
    """Row = true class, column = predicted class."""
    y_true = np.asarray(y_true, dtype=np.int64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.int64).ravel()
    if y_true.shape != y_pred.shape:
        raise ValueError("label arrays differ in length")
    for name, arr in (("true", y_true), ("predicted", y_pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValueError(f"{name} labels outside 0..{n_classes - 1}")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def uar(confusion) -> tuple[float, np.ndarray]:
    """Unweighted average recall and the per-class recalls."""
    cm = np.asarray(confusion, dtype=np.float64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError("confusion matrix must be square")
    if (cm < 0).any():
        raise ValueError("confusion counts must be nonnegative")
    totals = cm.sum(axis=1)
    if (totals == 0).any():
        empty = int(np.flatnonzero(totals == 0)[0])
        raise ValueError(f"recall undefined: class {empty} has no test examples")
    recalls = np.diag(cm) / totals
    return float(recalls.mean()), recalls


# ---------------------------------------------------------------------------
# Welch's t-test


def _beta_cont_fraction(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta, modified Lentz scheme."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        # even step
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        # odd step
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 3e-16:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0.0 or b <= 0.0:
        raise ValueError("shape parameters must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return float(x)
    front = math.exp(math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                     + a * math.log(x) + b * math.log1p(-x))
    # evaluate on the side where the continued fraction converges fast
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cont_fraction(a, b, x) / a
    return 1.0 - front * _beta_cont_fraction(b, a, 1.0 - x) / b


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    df: float
    degenerate: bool = False


def t_test_independent(a, b) -> TTestResult:
    """Welch's two-sample t-test, two-sided.

    Unequal variances are assumed; degrees of freedom follow the
    Welch-Satterthwaite approximation and the two-sided p-value is
    I_x(df/2, 1/2) with x = df / (df + t^2). When both samples have zero
    variance the statistic is undefined: equal means report t=0, p=1 and
    unequal means report an infinite statistic with p=0, both flagged
    degenerate.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise ValueError("each sample needs at least 2 values")
    ma, mb = float(a.mean()), float(b.mean())
    va, vb = float(a.var(ddof=1)), float(b.var(ddof=1))
    if va == 0.0 and vb == 0.0:
        if ma == mb:
            return TTestResult(0.0, 1.0, float(na + nb - 2), degenerate=True)
        return TTestResult(math.copysign(math.inf, ma - mb), 0.0,
                           float(na + nb - 2), degenerate=True)
    sa, sb = va / na, vb / nb
    se2 = sa + sb
    t = (ma - mb) / math.sqrt(se2)
    df = se2 ** 2 / (sa ** 2 / (na - 1) + sb ** 2 / (nb - 1))
    p = regularized_incomplete_beta(0.5 * df, 0.5, df / (df + t * t))
    return TTestResult(t, min(max(p, 0.0), 1.0), df)


# ---------------------------------------------------------------------------
# the experiment harness


@dataclass
class MetricsReport:
    """Aggregated scores for one variant, keyed by domain condition.

    confusion sums the per-fold matrices; recalls and uar come from that
    pooled matrix (so the table row is internally consistent); fold_uars
    keeps the per-fold scores the significance tests consume.
    """

    variant: str
    confusion: dict
    recalls: dict
    uar: dict
    fold_uars: dict


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    reports: dict
    significance: dict  # variant -> {"source": p, "target": p} vs the dat rows
    plans: list


def _cell_seed(base: int, repeat: int, fold: int) -> int:
    # transparent composition; repeats <= 10 and folds <= 5 keep the offset
    # under 100, and the sweep's trial seeds use the 500+ range
    return base * 1000 + (repeat - 1) * 10 + (fold - 1)


def _train_config(config: ExperimentConfig, variant: str, seed: int) -> TrainConfig:
    return TrainConfig(variant, seed=seed, epochs=config.epochs,
                       batch_source=config.batch_source,
                       batch_target=config.batch_target, lr=config.lr,
                       grl_lambda=config.grl_lambda,
                       mmd_weight=config.mmd_weight)


def _bundle(variant: str, train_split: SampleSet, data) -> DataBundle:
    if variant in ("stdconv", "sepconv"):
        return DataBundle(source=train_split)
    if variant in ("tgt", "ft"):
        return DataBundle(target=data.target)
    if variant == "jnt":
        return DataBundle(source=train_split, target=data.target)
    return DataBundle(source=train_split, target=data.target_unlabeled())


def _score(model, fold_set: SampleSet) -> np.ndarray:
    return confusion_matrix(fold_set.labels, predict_labels(model, fold_set))


def run_experiment(config: ExperimentConfig, out_dir=None,
                   log=None) -> ExperimentReport:
    """Train and score every (repeat, fold, variant) cell, then aggregate.

    Cells run sequentially in (repeat, fold, variant) order with the variant
    list sorted canonically, which places sepconv before ft so fine-tuning
    reuses the cell's sepconv model instead of retraining it. All variants
    within a cell share one derived seed (paired initializations) and one
    corrupted test fold. Returns the aggregated report; out_dir additionally
    receives table1.csv and significance.csv.
    """
    data = build_desk_dataset(config.seed, config.per_class_source,
                              config.per_class_target, config.duration)
    plans = make_folds(data.source.ids, folds=config.folds,
                       repeats=config.repeats, seed=config.seed,
                       labels=data.source.labels)
    variants = sorted(config.variants, key=VARIANTS.index)
    pooled = {v: {d: np.zeros((3, 3), dtype=np.int64) for d in DOMAIN_CONDITIONS}
              for v in variants}
    fold_uars = {v: {d: [] for d in DOMAIN_CONDITIONS} for v in variants}

    for plan in plans:
        train_split = data.source.by_ids(plan.train_ids)
        test_clean = data.source.by_ids(plan.test_ids)
        seed = _cell_seed(config.seed, plan.repeat, plan.fold)
        test_noisy = corrupt_test_fold(test_clean, data.bank, seed)
        sep_model = None
        for variant in variants:
            tc = _train_config(config, variant, seed)
            if variant == "ft":
                if sep_model is None:
                    sep_model = train(_train_config(config, "sepconv", seed),
                                      DataBundle(source=train_split)).model
                result = train(tc, _bundle(variant, train_split, data),
                               base=sep_model)
            else:
                result = train(tc, _bundle(variant, train_split, data))
                if variant == "sepconv":
                    sep_model = result.model
            for domain, fold_set in (("source", test_clean),
                                     ("target", test_noisy)):
                cm = _score(result.model, fold_set)
                pooled[variant][domain] += cm
                fold_uars[variant][domain].append(uar(cm)[0])
            if log is not None:
                log(f"repeat {plan.repeat} fold {plan.fold} {variant}: "
                    f"source {fold_uars[variant]['source'][-1]:.3f} "
                    f"target {fold_uars[variant]['target'][-1]:.3f}")

    reports = {}
    for v in variants:
        scores = {d: uar(pooled[v][d]) for d in DOMAIN_CONDITIONS}
        reports[v] = MetricsReport(
            variant=v,
            confusion={d: pooled[v][d] for d in DOMAIN_CONDITIONS},
            recalls={d: scores[d][1] for d in DOMAIN_CONDITIONS},
            uar={d: scores[d][0] for d in DOMAIN_CONDITIONS},
            fold_uars={d: np.array(fold_uars[v][d]) for d in DOMAIN_CONDITIONS})

    significance = {}
    if "dat" in variants:
        for v in variants:
            if v == "dat":
                continue
            significance[v] = {
                d: t_test_independent(reports["dat"].fold_uars[d],
                                      reports[v].fold_uars[d]).p
                for d in DOMAIN_CONDITIONS}

    out = ExperimentReport(config, reports, significance, plans)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_table1(out_dir / "table1.csv", reports)
        write_significance(out_dir / "significance.csv", significance)
    return out


# ---------------------------------------------------------------------------
# the lambda ablation


def box_stats(values) -> tuple[float, float, float, float, float]:
    """(min, q1, median, q3, max) with linearly interpolated percentiles."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("no values to summarize")
    return tuple(float(x) for x in np.percentile(v, [0.0, 25.0, 50.0, 75.0, 100.0]))


def lambda_sweep(config: ExperimentConfig, values, trials: int,
                 out_dir=None, log=None) -> dict:
    """Adversarial-weight ablation: score distributions over random inits.

    The data and the (repeat 1, fold 1) split stay fixed; each trial retrains
    the dat variant from a different seed, so the spread per lambda reflects
    initialization and batch-order randomness alone, and trial seeds are
    shared across lambda values (paired draws). Returns
    {lambda: {domain: trial UAR array}}; out_dir additionally receives
    lambda_box.csv.
    """
    values = [float(v) for v in values]
    if not values:
        raise ValueError("no lambda values given")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    data = build_desk_dataset(config.seed, config.per_class_source,
                              config.per_class_target, config.duration)
    plan = make_folds(data.source.ids, folds=config.folds, repeats=1,
                      seed=config.seed, labels=data.source.labels)[0]
    train_split = data.source.by_ids(plan.train_ids)
    test_clean = data.source.by_ids(plan.test_ids)
    cell = _cell_seed(config.seed, plan.repeat, plan.fold)
    test_noisy = corrupt_test_fold(test_clean, data.bank, cell)
    bundle = DataBundle(source=train_split, target=data.target_unlabeled())

    sweep = {}
    for lam in values:
        scores = {d: [] for d in DOMAIN_CONDITIONS}
        for trial in range(trials):
            tc = TrainConfig("dat", seed=config.seed * 1000 + 500 + trial,
                             epochs=config.epochs,
                             batch_source=config.batch_source,
                             batch_target=config.batch_target, lr=config.lr,
                             grl_lambda=lam, mmd_weight=config.mmd_weight)
            model = train(tc, bundle).model
            for domain, fold_set in (("source", test_clean),
                                     ("target", test_noisy)):
                scores[domain].append(uar(_score(model, fold_set))[0])
            if log is not None:
                log(f"lambda {lam:g} trial {trial}: "
                    f"source {scores['source'][-1]:.3f} "
                    f"target {scores['target'][-1]:.3f}")
        sweep[lam] = {d: np.array(scores[d]) for d in DOMAIN_CONDITIONS}

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_lambda_box(out_dir / "lambda_box.csv", sweep)
    return sweep


# ---------------------------------------------------------------------------
# CSV emission


def write_table1(path, reports: dict) -> None:
    with open(path, "w") as f:
        f.write("variant,domain,health,neoplasm,structural,uar\n")
        for v in sorted(reports, key=VARIANTS.index):
            r = reports[v]
            for d in DOMAIN_CONDITIONS:
                rec = r.recalls[d]
                f.write(f"{v},{d},{rec[0]:.6f},{rec[1]:.6f},{rec[2]:.6f},"
                        f"{r.uar[d]:.6f}\n")


def write_significance(path, significance: dict) -> None:
    with open(path, "w") as f:
        f.write("variant,p_source,p_target\n")
        for v in sorted(significance, key=VARIANTS.index):
            f.write(f"{v},{significance[v]['source']:.6g},"
                    f"{significance[v]['target']:.6g}\n")


def write_lambda_box(path, sweep: dict) -> None:
    with open(path, "w") as f:
        f.write("lambda,domain,min,q1,median,q3,max\n")
        for lam in sorted(sweep):
            for d in DOMAIN_CONDITIONS:
                lo, q1, med, q3, hi = box_stats(sweep[lam][d])
                f.write(f"{lam:g},{d},{lo:.6f},{q1:.6f},{med:.6f},"
                        f"{q3:.6f},{hi:.6f}\n")
