"""Feature export, 2-D embeddings, and plot-ready CSV emission.

Nothing here renders: every figure-shaped result leaves as a CSV with a
header row, and downstream plotting is external. The t-SNE is the exact
O(N^2) variant — the corpora this package embeds are a few hundred points,
where simplicity and testability beat tree approximations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datasets import CLASS_NAMES, DOMAIN_NAMES, SampleSet
from .evaluate import confusion_matrix, uar, write_lambda_box
from .training import embed, write_training_log

__all__ = [
    "FeatureDump", "export_features", "read_feature_csv",
    "pca2d", "tsne2d", "emit_plot_data",
    "domain_probe_uar", "paired_embedding_distance", "sign_test",
]

FEATURE_DIM = 256


# ---------------------------------------------------------------------------
# feature export


@dataclass
class FeatureDump:
    """Rows of (sample id, domain name, disease name, 256 features)."""

    ids: tuple
    domains: tuple
    diseases: tuple
    features: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


def export_features(model, sets, path=None) -> FeatureDump:
    """Eval-mode head-segment features of every sample in the given sets.

    sets is an iterable of SampleSet — typically a clean evaluation set and
    its corrupted twin, giving one row per (sample, domain condition) with
    paired rows sharing the sample id. Rows are sorted by (sample id, domain
    index); features come from the same eval-mode forward that prediction
    exposes. With path given, also writes the CSV (17 significant digits, so
    parsing it back is lossless).
    """
    if isinstance(sets, SampleSet):
        sets = (sets,)
    rows = []
    for sample_set in sets:
        feats = embed(model, sample_set)
        if feats.shape[1] != FEATURE_DIM:
            raise ValueError(f"expected {FEATURE_DIM}-dim features, "
                             f"got {feats.shape[1]}")
        for sample, vec in zip(sample_set, feats):
            rows.append((sample.sample_id, sample.domain, sample.disease, vec))
    rows.sort(key=lambda r: (r[0], r[1]))
    dump = FeatureDump(
        ids=tuple(r[0] for r in rows),
        domains=tuple(DOMAIN_NAMES[r[1]] for r in rows),
        diseases=tuple(CLASS_NAMES[r[2]] for r in rows),
        features=np.stack([r[3] for r in rows]))
    if path is not None:
        _write_feature_csv(path, dump)
    return dump


def _write_feature_csv(path, dump: FeatureDump) -> None:
    header = "id,domain,disease," + ",".join(f"f{i:03d}" for i in range(FEATURE_DIM))
    with open(path, "w") as f:
        f.write(header + "\n")
        for i in range(len(dump)):
            values = ",".join(f"{float(v):.17g}" for v in dump.features[i])
            f.write(f"{dump.ids[i]},{dump.domains[i]},{dump.diseases[i]},{values}\n")


def read_feature_csv(path) -> FeatureDump:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("id,domain,disease,f000"):
        raise ValueError("not a feature CSV")
    ids, domains, diseases, feats = [], [], [], []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != 3 + FEATURE_DIM:
            raise ValueError(f"bad feature row width {len(parts)}")
        ids.append(parts[0])
        domains.append(parts[1])
        diseases.append(parts[2])
        feats.append([float(v) for v in parts[3:]])
    return FeatureDump(tuple(ids), tuple(domains), tuple(diseases),
                       np.array(feats))


# ---------------------------------------------------------------------------
# 2-D embeddings


def pca2d(features) -> np.ndarray:
    """Projection onto the top-2 principal directions of the centered data.

    Uses the singular value decomposition of the centered matrix; component
    variances are non-increasing, and each direction's sign is fixed by its
    largest-magnitude coefficient so the output is deterministic.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise ValueError("need at least 3 feature rows")
    xc = x - x.mean(axis=0)
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    if s[0] <= 0.0 or not np.isfinite(s[0]):
        raise ValueError("degenerate features: zero variance in every direction")
    axes = vt[:2]
    for k in range(axes.shape[0]):
        lead = axes[k, np.argmax(np.abs(axes[k]))]
        if lead < 0:
            axes[k] = -axes[k]
    return xc @ axes.T


def _pairwise_sq(x: np.ndarray) -> np.ndarray:
    s = np.einsum("ij,ij->i", x, x)
    d = s[:, None] + s[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def _conditional_affinities(d: np.ndarray, perplexity: float,
                            tol: float = 1e-5) -> np.ndarray:
    """Row-stochastic affinities whose per-row perplexity hits the target.

    Binary search on the per-point precision beta; the kernel is shifted by
    the row's smallest distance before exponentiation (the shift cancels in
    the normalization) so large beta never underflows every entry at once.
    """
    n = d.shape[0]
    p = np.zeros((n, n))
    for i in range(n):
        di = d[i].copy()
        di[i] = np.inf
        shift = di.min()
        lo, hi = 0.0, math.inf
        beta = 1.0
        for _ in range(200):
            ex = np.exp(-(di - shift) * beta)
            ex[i] = 0.0
            total = ex.sum()
            pi = ex / total
            nz = pi > 0.0
            entropy = -float(np.sum(pi[nz] * np.log(pi[nz])))
            perp = math.exp(entropy)
            if abs(perp - perplexity) < tol:
                break
            if perp > perplexity:  # too flat: sharpen the kernel
                lo = beta
                beta = beta * 2.0 if hi == math.inf else 0.5 * (lo + hi)
            else:
                hi = beta
                beta = 0.5 * (lo + hi)
        p[i] = pi
    return p


def tsne2d(features, perplexity: float = 30.0, iterations: int = 500,
           seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Exact t-SNE to 2-D: (coordinates, per-iteration KL trace).

    Standard recipe: per-point bandwidths matched to the target perplexity,
    symmetrized affinities, Student-t low-dimensional kernel, gradient
    descent at learning rate 200 with per-coordinate adaptive gains,
    momentum 0.5 (0.8 after iteration 250), and x12 early exaggeration for
    the first 250 iterations. The KL trace is always measured against the
    un-exaggerated affinities. Duplicate points are jittered by 1e-10 so
    bandwidth search stays defined.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be a 2-D matrix")
    n = x.shape[0]
    if n > 2000:
        raise ValueError("exact t-SNE is quadratic; limit is 2000 points")
    if not perplexity < n / 3.0:
        raise ValueError(f"perplexity {perplexity} needs more than "
                         f"{3 * perplexity:.0f} points")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    rng = np.random.default_rng(seed)

    d = _pairwise_sq(x)
    off_diag = ~np.eye(n, dtype=bool)
    if np.any(d[off_diag] == 0.0):
        x = x + rng.normal(0.0, 1e-10, x.shape)
        d = _pairwise_sq(x)
    cond = _conditional_affinities(d, perplexity)
    p = (cond + cond.T) / (2.0 * n)
    p = np.maximum(p, 1e-300)

    y = rng.normal(0.0, 1e-4, (n, 2))
    vel = np.zeros_like(y)
    gains = np.ones_like(y)
    lr = 200.0
    trace = np.empty(iterations)
    for it in range(iterations):
        num = 1.0 / (1.0 + _pairwise_sq(y))
        np.fill_diagonal(num, 0.0)
        q = np.maximum(num / num.sum(), 1e-300)
        pe = p * 12.0 if it < 250 else p
        gw = (pe - q) * num
        grad = 4.0 * ((np.diag(gw.sum(axis=1)) - gw) @ y)
        # per-coordinate gains keep a fixed learning rate stable across N
        same_dir = np.sign(grad) == np.sign(vel)
        gains[same_dir] *= 0.8
        gains[~same_dir] += 0.2
        np.maximum(gains, 0.01, out=gains)
        momentum = 0.5 if it < 250 else 0.8
        vel = momentum * vel - lr * gains * grad
        y = y + vel
        y = y - y.mean(axis=0)
        trace[it] = float(np.sum(p[off_diag]
                                 * (np.log(p[off_diag]) - np.log(q[off_diag]))))
    return y, trace


# ---------------------------------------------------------------------------
# plot-data emission


def emit_plot_data(kind: str, inputs: dict, path) -> Path:
    """Figure-shaped CSVs: kind selects the layout.

    * "tsne": inputs {"dump": FeatureDump, "coords": (N, 2)} ->
      id,x,y,domain,disease rows, one per embedded point.
    * "lambda_box": inputs {"sweep": {lambda: {domain: scores}}} ->
      the ablation box-plot table.
    * "training_curves": inputs {"history": [EpochStats]} ->
      the per-epoch training log.
    """
    path = Path(path)
    if kind == "tsne":
        dump, coords = inputs["dump"], np.asarray(inputs["coords"])
        if coords.shape != (len(dump), 2):
            raise ValueError("coordinate rows must match the feature dump")
        with open(path, "w") as f:
            f.write("id,x,y,domain,disease\n")
            for i in range(len(dump)):
                f.write(f"{dump.ids[i]},{coords[i, 0]:.17g},{coords[i, 1]:.17g},"
                        f"{dump.domains[i]},{dump.diseases[i]}\n")
    elif kind == "lambda_box":
        write_lambda_box(path, inputs["sweep"])
    elif kind == "training_curves":
        write_training_log(path, inputs["history"])
    else:
        raise ValueError(f"unknown plot-data kind {kind!r}")
    return path


# ---------------------------------------------------------------------------
# domain-invariance analyses


def domain_probe_uar(features, domains, alpha: float = 1.0,
                     seed: int = 0) -> float:
    """Held-out domain UAR of a ridge probe on frozen features.

    A one-vs-rest ridge classifier is fit on a seeded stratified half of the
    rows (features standardized by the training half) and scored on the
    other half. Chance is 1/3 regardless of the clean/ac/street imbalance
    because the score is mean per-domain recall.
    """
    x = np.asarray(features, dtype=np.float64)
    d = np.asarray(domains, dtype=np.int64)
    if x.shape[0] != d.shape[0]:
        raise ValueError("features and domains must align")
    classes = np.unique(d)
    if classes.size < 2:
        raise ValueError("need at least two domains to probe")
    rng = np.random.default_rng([seed, 77])
    train_mask = np.zeros(d.size, dtype=bool)
    for c in classes:
        members = np.flatnonzero(d == c)
        if members.size < 2:
            raise ValueError(f"domain {c} needs at least 2 rows")
        members = rng.permutation(members)
        train_mask[members[:members.size // 2 + members.size % 2]] = True

    xt = x[train_mask]
    mu, sd = xt.mean(axis=0), xt.std(axis=0) + 1e-8
    xt = np.c_[(xt - mu) / sd, np.ones(xt.shape[0])]
    onehot = (d[train_mask][:, None] == classes[None, :]).astype(np.float64)
    w = np.linalg.solve(xt.T @ xt + alpha * np.eye(xt.shape[1]), xt.T @ onehot)
    xe = np.c_[(x[~train_mask] - mu) / sd, np.ones((~train_mask).sum())]
    pred = classes[np.argmax(xe @ w, axis=1)]
    # map domain values onto 0..k-1 for the confusion matrix
    index = {c: i for i, c in enumerate(classes)}
    cm = confusion_matrix([index[v] for v in d[~train_mask]],
                          [index[v] for v in pred], n_classes=classes.size)
    return uar(cm)[0]


def paired_embedding_distance(coords, ids) -> float:
    """Mean 2-D distance between same-id row pairs, scale-normalized.

    Every id must appear exactly twice (its clean and corrupted rows). The
    mean paired distance is divided by the mean all-pairs distance of the
    same embedding, because embeddings of different feature spaces carry
    arbitrary scale.
    """
    y = np.asarray(coords, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] != 2:
        raise ValueError("coords must be (n, 2)")
    groups = {}
    for row, id_ in enumerate(ids):
        groups.setdefault(id_, []).append(row)
    bad = {k: len(v) for k, v in groups.items() if len(v) != 2}
    if bad:
        raise ValueError(f"ids without exactly two rows: {sorted(bad)[:4]}")
    pair_d = np.array([np.hypot(*(y[a] - y[b]))
                       for a, b in groups.values()])
    all_d = np.sqrt(_pairwise_sq(y))
    n = y.shape[0]
    scale = all_d.sum() / (n * (n - 1))
    if scale == 0.0:
        raise ValueError("all embedded points coincide")
    return float(pair_d.mean() / scale)


def sign_test(a, b) -> float:
    """One-sided paired sign test: p-value for "a is smaller than b".

    Ties are dropped; with w wins among n untied pairs the p-value is the
    fair-coin tail P(X >= w). All pairs tied reports p = 1.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError("paired samples must align")
    if a.size == 0:
        raise ValueError("no pairs given")
    untied = a != b
    n = int(untied.sum())
    if n == 0:
        return 1.0
    wins = int(np.sum(a[untied] < b[untied]))
    return float(sum(math.comb(n, k) for k in range(wins, n + 1)) / 2.0 ** n)
