"""Clustering metrics and feature-space diagnostics.

Accuracy goes through optimal label matching (assignment problem), NMI uses
arithmetic-mean normalization, ARI the standard adjusted formula. The z-sim
statistics summarize absolute cosine similarity between feature pairs drawn
across true clusters, across found clusters, and within found clusters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

ZSIM_MAX_PAIRS = 10_000


def _as_labels(x, name: str) -> np.ndarray:
    a = np.asarray(x)
    if a.ndim != 1 or a.shape[0] < 1:
        raise ValueError(f"{name} must be a nonempty 1-D label vector")
    return a


def contingency_table(pred, true) -> np.ndarray:
    """Counts C[i, j] = #{pred cluster i and true cluster j}, padded square."""
    pred = _as_labels(pred, "pred")
    true = _as_labels(true, "true")
    if pred.shape[0] != true.shape[0]:
        raise ValueError(f"length mismatch: pred {pred.shape[0]} vs true {true.shape[0]}")
    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(true, return_inverse=True)
    n = max(pi.max(), ti.max()) + 1
    table = np.zeros((n, n), dtype=np.int64)
    np.add.at(table, (pi, ti), 1)
    return table


def _optimal_mass(counts: np.ndarray) -> float:
    if counts.size == 0:
        return 0.0
    rows, cols = linear_sum_assignment(counts, maximize=True)
    return float(counts[rows, cols].sum())


def hungarian_match(confusion) -> np.ndarray:
    """Permutation (row -> column) maximizing the matched mass.

    Among all optimal assignments, rows are fixed in index order and each
    takes the smallest column still consistent with optimality, so the
    result is deterministic.
    """
    c = np.asarray(confusion, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"confusion matrix must be square, got shape {c.shape}")
    if c.size and (np.any(c < 0) or not np.isfinite(c).all()):
        raise ValueError("confusion matrix must be nonnegative and finite")
    n = c.shape[0]
    best = _optimal_mass(c)
    tol = 1e-9 * (1.0 + abs(best))
    perm = np.empty(n, dtype=np.int64)
    cols_left = list(range(n))
    acc = 0.0
    for i in range(n):
        rest_rows = np.arange(i + 1, n)
        for col in cols_left:
            rest_cols = [cc for cc in cols_left if cc != col]
            tail = _optimal_mass(c[np.ix_(rest_rows, rest_cols)]) if rest_rows.size else 0.0
            if acc + c[i, col] + tail >= best - tol:
                perm[i] = col
                cols_left.remove(col)
                acc += c[i, col]
                break
    return perm


def clustering_accuracy(pred, true) -> float:
    """Fraction of points matched under the optimal cluster-label permutation."""
    table = contingency_table(pred, true)
    return _optimal_mass(table) / float(table.sum())


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(pred, true) -> float:
    """Normalized mutual information with arithmetic-mean normalization."""
    table = contingency_table(pred, true).astype(np.float64)
    n = table.sum()
    a = table.sum(axis=1)
    b = table.sum(axis=0)
    h_pred = _entropy(a)
    h_true = _entropy(b)
    if h_pred == 0.0 and h_true == 0.0:
        return 1.0
    nz = table > 0
    outer = np.outer(a, b)
    mi = float((table[nz] / n * np.log(table[nz] * n / outer[nz])).sum())
    return max(0.0, mi / ((h_pred + h_true) / 2.0))


def ari(pred, true) -> float:
    """Adjusted Rand index; 1 for identical partitions, ~0 at chance."""
    table = contingency_table(pred, true).astype(np.float64)
    n = table.sum()

    def comb2(x):
        return x * (x - 1.0) / 2.0

    sum_cells = comb2(table).sum()
    sum_rows = comb2(table.sum(axis=1)).sum()
    sum_cols = comb2(table.sum(axis=0)).sum()
    expected = sum_rows * sum_cols / comb2(n)
    max_index = (sum_rows + sum_cols) / 2.0
    if max_index == expected:
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))


def _unit_rows(z: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if norms.min() <= 0:
        raise ValueError("zero feature row in z-sim computation")
    return z / norms


def _mean_abs_cos(z: np.ndarray, pairs_i: np.ndarray, pairs_j: np.ndarray) -> float:
    return float(np.abs((z[pairs_i] * z[pairs_j]).sum(axis=1)).mean())


def _cross_pairs(labels: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n = labels.shape[0]
    counts = np.bincount(labels)
    total = (n * (n - 1) - int((counts * (counts - 1)).sum())) // 2
    if total == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    if total <= ZSIM_MAX_PAIRS:
        ii, jj = np.triu_indices(n, k=1)
        keep = labels[ii] != labels[jj]
        return ii[keep], jj[keep]
    out_i = np.empty(ZSIM_MAX_PAIRS, dtype=np.int64)
    out_j = np.empty(ZSIM_MAX_PAIRS, dtype=np.int64)
    got = 0
    while got < ZSIM_MAX_PAIRS:
        cand_i = rng.integers(0, n, size=2 * ZSIM_MAX_PAIRS)
        cand_j = rng.integers(0, n, size=2 * ZSIM_MAX_PAIRS)
        keep = labels[cand_i] != labels[cand_j]
        take = min(int(keep.sum()), ZSIM_MAX_PAIRS - got)
        out_i[got : got + take] = cand_i[keep][:take]
        out_j[got : got + take] = cand_j[keep][:take]
        got += take
    return out_i, out_j


def _within_pairs(members: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    k = members.shape[0]
    total = k * (k - 1) // 2
    if total <= ZSIM_MAX_PAIRS:
        ii, jj = np.triu_indices(k, k=1)
        return members[ii], members[jj]
    out_i = np.empty(ZSIM_MAX_PAIRS, dtype=np.int64)
    out_j = np.empty(ZSIM_MAX_PAIRS, dtype=np.int64)
    got = 0
    while got < ZSIM_MAX_PAIRS:
        cand_i = rng.integers(0, k, size=2 * ZSIM_MAX_PAIRS)
        cand_j = rng.integers(0, k, size=2 * ZSIM_MAX_PAIRS)
        keep = cand_i != cand_j
        take = min(int(keep.sum()), ZSIM_MAX_PAIRS - got)
        out_i[got : got + take] = members[cand_i[keep][:take]]
        out_j[got : got + take] = members[cand_j[keep][:take]]
        got += take
    return out_i, out_j


def zsim_stats(
    z: np.ndarray, pred, true=None, seed: int = 0
) -> tuple[float | None, float, float]:
    """Mean |cosine| between feature pairs: (across true clusters, across
    found clusters, within found clusters averaged over clusters).

    Exhaustive when a category has at most 10^4 qualifying pairs, otherwise
    a seeded sample of 10^4 pairs. Found clusters with < 2 members do not
    contribute to the within statistic; returns None for a statistic with no
    qualifying pairs (and for the true-cluster statistic when ``true`` is
    omitted).
    """
    z = _unit_rows(np.asarray(z, dtype=np.float64))
    pred = _as_labels(pred, "pred")
    if pred.shape[0] != z.shape[0]:
        raise ValueError("pred length must match feature rows")
    rng = np.random.default_rng(seed)

    def cross_stat(labels) -> float | None:
        _, inv = np.unique(labels, return_inverse=True)
        ii, jj = _cross_pairs(inv, rng)
        return _mean_abs_cos(z, ii, jj) if ii.size else None

    zsim_true = None
    if true is not None:
        true = _as_labels(true, "true")
        if true.shape[0] != z.shape[0]:
            raise ValueError("true length must match feature rows")
        zsim_true = cross_stat(true)
    zsim_found = cross_stat(pred)

    per_cluster = []
    for label in np.unique(pred):
        members = np.flatnonzero(pred == label)
        if members.shape[0] < 2:
            continue
        ii, jj = _within_pairs(members, rng)
        per_cluster.append(_mean_abs_cos(z, ii, jj))
    zsim_within = float(np.mean(per_cluster)) if per_cluster else None
    return zsim_true, zsim_found, zsim_within


def covariance_diagonality(z: np.ndarray) -> float:
    """Off-diagonal vs diagonal Frobenius mass of the uncentered second moment."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValueError(f"need at least 2 rows, got shape {z.shape}")
    cov = z.T @ z / z.shape[0]
    diag = np.diag(np.diag(cov))
    off = cov - diag
    denom = np.linalg.norm(diag)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(off) / denom)


def squared_singular_value_cv(z: np.ndarray) -> float:
    """Coefficient of variation (std/mean) of the squared singular values."""
    s2 = np.linalg.svd(np.asarray(z, dtype=np.float64), compute_uv=False) ** 2
    mean = s2.mean()
    if mean == 0.0:
        return 0.0
    return float(s2.std() / mean)


def singular_spectrum(z: np.ndarray, labels=None) -> dict:
    """Descending singular values, overall (key 'all') or per cluster label."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 1:
        raise ValueError(f"need a nonempty 2-D matrix, got shape {z.shape}")
    if labels is None:
        return {"all": np.linalg.svd(z, compute_uv=False)}
    labels = _as_labels(labels, "labels")
    if labels.shape[0] != z.shape[0]:
        raise ValueError("labels length must match feature rows")
    out = {}
    for label in np.unique(labels):
        rows = z[labels == label]
        if rows.shape[0] == 0:
            continue
        out[int(label)] = np.linalg.svd(rows, compute_uv=False)
    return out


@dataclass
class ClusterComponents:
    """Top principal directions of one cluster's features plus the sample
    indices whose features point most along each direction."""

    cluster: int
    directions: np.ndarray  # (k_eff, d)
    singular_values: np.ndarray  # (k_eff,)
    retrieved: list[np.ndarray]  # per direction, dataset indices
    truncated: bool


def pca_component_retrieval(
    z: np.ndarray, labels, k: int, top: int = 10
) -> list[ClusterComponents]:
    """Per cluster: top-k singular directions of the (uncentered) feature
    block and, for each, the member samples with highest |cosine|.

    Ordering is deterministic: components by descending singular value,
    retrieved indices by descending |cosine| then ascending index. Clusters
    with fewer than k members yield fewer components and are flagged.
    """
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    z = _unit_rows(np.asarray(z, dtype=np.float64))
    labels = _as_labels(labels, "labels")
    if labels.shape[0] != z.shape[0]:
        raise ValueError("labels length must match feature rows")
    results = []
    for label in np.unique(labels):
        members = np.flatnonzero(labels == label)
        block = z[members]
        k_eff = min(k, block.shape[0], block.shape[1])
        _, s, vt = np.linalg.svd(block, full_matrices=False)
        retrieved = []
        for comp in range(k_eff):
            cos = np.abs(block @ vt[comp])
            order = np.lexsort((members, -cos))[:top]
            retrieved.append(members[order])
        results.append(
            ClusterComponents(
                cluster=int(label),
                directions=vt[:k_eff].copy(),
                singular_values=s[:k_eff].copy(),
                retrieved=retrieved,
                truncated=k_eff < k,
            )
        )
    return results


@dataclass
class MetricReport:
    """Clustering quality plus feature-geometry statistics for one run."""

    acc: float | None = None
    nmi: float | None = None
    ari: float | None = None
    permutation: np.ndarray | None = None
    zsim_true: float | None = None
    zsim_found: float | None = None
    zsim_within: float | None = None

    def to_text(self) -> str:
        """Flat key: value document; omits statistics that are undefined."""
        lines = []
        for key in ("acc", "nmi", "ari"):
            value = getattr(self, key)
            if value is not None:
                lines.append(f"{key}: {value:.6f}")
        if self.permutation is not None:
            lines.append("permutation: " + ",".join(str(int(p)) for p in self.permutation))
        for key in ("zsim_true", "zsim_found", "zsim_within"):
            value = getattr(self, key)
            if value is not None:
                lines.append(f"{key}: {value:.6f}")
        return "\n".join(lines) + "\n"


def evaluate_clustering(z: np.ndarray, pred, true=None, seed: int = 0) -> MetricReport:
    """Assemble the full report; label-based metrics are skipped without truth."""
    report = MetricReport()
    if true is not None:
        report.acc = clustering_accuracy(pred, true)
        report.nmi = nmi(pred, true)
        report.ari = ari(pred, true)
        report.permutation = hungarian_match(contingency_table(pred, true))
    report.zsim_true, report.zsim_found, report.zsim_within = zsim_stats(
        z, pred, true, seed=seed
    )
    return report


def spectra_to_csv(spectra: dict, path) -> None:
    """Write `cluster,rank,sigma` rows for the output of singular_spectrum."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("cluster,rank,sigma\n")
        for cluster in spectra:
            for rank, sigma in enumerate(spectra[cluster]):
                fh.write(f"{cluster},{rank},{sigma:.17g}\n")
