"""Statistical comparison of historical and synthetic regional profiles."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging

import numpy as np
from scipy.spatial import cKDTree

from .errors import ValidationError
from .grid_model import RegionalSeries

log = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class PearsonMatrix:
    matrix: np.ndarray  # (R, R); NaN where undefined
    regions: tuple[str, ...]
    undefined: tuple[str, ...]  # regions with zero variance in the window


def pearson_matrix(series: RegionalSeries | np.ndarray, window: slice | None = None,
                   regions=None) -> PearsonMatrix:
    """Pairwise Pearson correlation of regional series over ``window`` periods."""
    if isinstance(series, RegionalSeries):
        values, regions = series.values, series.regions
    else:
        values = np.asarray(series, dtype=float)
        regions = tuple(regions) if regions is not None else tuple(str(k) for k in range(values.shape[0]))
    X = values[:, window] if window is not None else values
    if X.shape[1] < 3:
        raise ValidationError(f"window must span at least 3 periods, got {X.shape[1]}")
    Xc = X - X.mean(axis=1, keepdims=True)
    norm = np.sqrt(np.einsum("ij,ij->i", Xc, Xc))
    flat = norm <= 1e-12 * np.maximum(1.0, np.abs(X).max(axis=1))
    safe = np.where(flat, 1.0, norm)
    Z = Xc / safe[:, None]
    C = np.clip(Z @ Z.T, -1.0, 1.0)
    C[flat, :] = np.nan
    C[:, flat] = np.nan
    np.fill_diagonal(C, np.where(flat, np.nan, 1.0))
    undefined = tuple(r for r, f in zip(regions, flat) if f)
    if undefined:
        log.warning("zero variance for regions %s", undefined)
    return PearsonMatrix(C, tuple(regions), undefined)


def cluster_contrast(C: np.ndarray, labels) -> tuple[float, float]:
    """Mean off-diagonal correlation within clusters and across clusters."""
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    off = ~np.eye(len(labels), dtype=bool)
    return float(np.nanmean(C[same & off])), float(np.nanmean(C[~same]))


@dataclasses.dataclass(frozen=True)
class ProjectionReport:
    components: np.ndarray  # (2, R) orthonormal rows
    explained_variance: np.ndarray  # fractions, all components, non-increasing
    mean: np.ndarray  # (R,)
    historical: np.ndarray  # (M, 2)
    synthetic: np.ndarray  # (M', 2)
    overlap: float | None = None
    rank_deficient: bool = False

    @property
    def explained_top2(self) -> float:
        return float(self.explained_variance[:2].sum())


def pca_project(historical: np.ndarray, synthetic: np.ndarray, n_components: int = 2) -> ProjectionReport:
    """Fit principal axes on the pooled, column-centered data and project both clouds.

    Covariance form on the raw (MW) values.
    """
    H = np.asarray(historical, dtype=float)
    S = np.asarray(synthetic, dtype=float)
    if H.ndim != 2 or S.ndim != 2 or H.shape[1] != S.shape[1]:
        raise ValidationError("historical and synthetic must be 2-D with matching columns")
    R = H.shape[1]
    if not H.shape[0] >= R >= 2:
        raise ValidationError(f"need M >= R >= 2, got M={H.shape[0]}, R={R}")
    pooled = np.vstack([H, S])
    mean = pooled.mean(axis=0)
    _, sv, Vt = np.linalg.svd(pooled - mean, full_matrices=False)
    var = sv ** 2
    total = var.sum()
    frac = var / total if total > 0 else np.zeros_like(var)
    rank = int(np.sum(sv > sv.max(initial=0) * max(pooled.shape) * np.finfo(float).eps))
    if rank < R:
        log.info("pooled data has rank %d < %d", rank, R)
    # deterministic sign: largest-magnitude loading positive
    W = Vt[:n_components].copy()
    flip = np.sign(W[np.arange(W.shape[0]), np.argmax(np.abs(W), axis=1)])
    W *= flip[:, None]
    return ProjectionReport(W, frac, mean, (H - mean) @ W.T, (S - mean) @ W.T, None, rank < R)


def _kth_radius(points: np.ndarray, k: int) -> np.ndarray:
    """Distance from each point to its k-th nearest other point of the same cloud."""
    k_eff = min(k, len(points) - 1)
    if k_eff < 1:
        return np.zeros(len(points))
    d, _ = cKDTree(points).query(points, k=k_eff + 1)
    return d[:, -1]


def coverage(reference: np.ndarray, query: np.ndarray, k: int) -> float:
    """Fraction of ``query`` points inside the union of k-NN balls of ``reference``."""
    ref = np.asarray(reference, dtype=float)
    q = np.asarray(query, dtype=float)
    radius = _kth_radius(ref, k)
    tree = cKDTree(ref)
    # only reference points within the largest radius can cover q
    rmax = radius.max(initial=0.0)
    hits = 0
    for i, neigh in enumerate(tree.query_ball_point(q, rmax + 1e-12)):
        if neigh:
            neigh = np.asarray(neigh)
            d = np.linalg.norm(ref[neigh] - q[i], axis=1)
            hits += bool(np.any(d <= radius[neigh] + 1e-12))
    return hits / len(q)


def overlap_score(historical: np.ndarray, synthetic: np.ndarray, k: int = 5) -> float:
    """Symmetric k-NN coverage of two point clouds, in [0, 1].

    Harmonic mean of the share of synthetic points covered by historical
    k-NN balls and the share of historical points covered by synthetic
    k-NN balls. Identical clouds score 1; disjoint clouds score 0.
    """
    if len(historical) == 0 or len(synthetic) == 0:
        raise ValidationError("both point clouds must be nonempty")
    if k < 1:
        raise ValidationError("k must be at least 1")
    precision = coverage(historical, synthetic, k)
    recall = coverage(synthetic, historical, k)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def compare(historical: np.ndarray, synthetic: np.ndarray, k: int = 5) -> ProjectionReport:
    """PCA projection plus overlap score of the projected clouds."""
    rep = pca_project(historical, synthetic)
    return dataclasses.replace(rep, overlap=overlap_score(rep.historical, rep.synthetic, k))


def write_pearson_csv(pm: PearsonMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id", *pm.regions])
        for r, row in zip(pm.regions, pm.matrix):
            w.writerow([r, *("" if np.isnan(v) else repr(float(v)) for v in row)])


def write_projection_csv(rep: ProjectionReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "pc1", "pc2"])
        for name, pts in (("historical", rep.historical), ("synthetic", rep.synthetic)):
            for a, b in pts[:, :2]:
                w.writerow([name, repr(float(a)), repr(float(b))])


def report_dict(rep: ProjectionReport, **extra) -> dict:
    out = {
        "pca_form": "covariance",
        "pca_fit": "pooled",
        "explained_variance": [float(v) for v in rep.explained_variance],
        "explained_top2": rep.explained_top2,
        "rank_deficient": rep.rank_deficient,
        "overlap_score": rep.overlap,
    }
    out.update(extra)
    return out


def write_report_json(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
