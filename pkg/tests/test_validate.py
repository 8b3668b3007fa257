import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gridseries.errors import ValidationError
from gridseries.validate import (
    cluster_contrast,
    compare,
    coverage,
    overlap_score,
    pca_project,
    pearson_matrix,
    report_dict,
    write_pearson_csv,
    write_projection_csv,
    write_report_json,
)


def test_pearson_hand_values():
    pm = pearson_matrix(np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 4.0], [-1.0, -2.0, -3.0]]))
    assert pm.matrix[0, 1] == pytest.approx(0.98198, abs=1e-5)
    assert pm.matrix[0, 1] == pytest.approx(3 / np.sqrt(2 * 42 / 9), rel=1e-12)
    assert pm.matrix[0, 0] == 1.0
    assert pm.matrix[0, 2] == pytest.approx(-1.0, abs=1e-15)


def test_pearson_window_and_short_window():
    X = np.array([[1.0, 2, 3, 10, 0], [3.0, 2, 1, 10, 0]])
    assert pearson_matrix(X, window=slice(0, 3)).matrix[0, 1] == pytest.approx(-1.0)
    with pytest.raises(ValidationError):
        pearson_matrix(X, window=slice(0, 2))


def test_pearson_constant_region_is_flagged():
    pm = pearson_matrix(np.array([[1.0, 2, 3], [5.0, 5, 5]]), regions=["a", "b"])
    assert pm.undefined == ("b",)
    assert np.isnan(pm.matrix[0, 1]) and np.isnan(pm.matrix[1, 1])
    assert pm.matrix[0, 0] == 1.0


@settings(max_examples=50, deadline=None)
@given(arrays(float, (3, 8), elements=st.floats(-100, 100)), st.floats(0.01, 100), st.floats(-1e3, 1e3))
def test_pearson_affine_invariance(X, a, b):
    X = X + np.linspace(0, 1, 8) * np.arange(1, 4)[:, None]  # keep rows non-constant
    Y = X.copy()
    Y[1] = a * Y[1] + b
    np.testing.assert_allclose(pearson_matrix(X).matrix, pearson_matrix(Y).matrix, atol=1e-7)


def test_pearson_against_numpy(rng):
    X = rng.normal(size=(6, 40))
    np.testing.assert_allclose(pearson_matrix(X).matrix, np.corrcoef(X), atol=1e-12)


def test_cluster_contrast():
    C = np.array([[1, 0.9, 0.1], [0.9, 1, 0.2], [0.1, 0.2, 1]])
    intra, inter = cluster_contrast(C, [0, 0, 1])
    assert intra == pytest.approx(0.9) and inter == pytest.approx(0.15)


def test_pca_exact_rank_two(rng):
    basis = rng.normal(size=(2, 5))
    H = rng.normal(size=(50, 2)) @ basis
    S = rng.normal(size=(30, 2)) @ basis
    rep = pca_project(H, S)
    assert rep.explained_top2 == pytest.approx(1.0, abs=1e-12)
    assert rep.rank_deficient


def test_pca_isotropic(rng):
    H = rng.normal(size=(20_000, 4))
    S = rng.normal(size=(20_000, 4))
    rep = pca_project(H, S)
    assert rep.explained_variance[0] == pytest.approx(0.25, abs=0.01)
    assert rep.explained_variance[1] == pytest.approx(0.25, abs=0.01)


def test_pca_orthonormal_and_reconstruction(rng):
    H = rng.normal(size=(80, 6)) @ rng.normal(size=(6, 6))
    S = rng.normal(size=(60, 6)) @ rng.normal(size=(6, 6))
    rep = pca_project(H, S)
    W = rep.components
    np.testing.assert_allclose(W @ W.T, np.eye(2), atol=1e-9)
    pooled = np.vstack([H, S]) - rep.mean
    total = (pooled ** 2).sum()
    resid = ((pooled - pooled @ W.T @ W) ** 2).sum()
    assert resid / total == pytest.approx(1 - rep.explained_top2, rel=1e-6)
    # deterministic sign convention
    assert np.all(W[np.arange(2), np.argmax(np.abs(W), axis=1)] > 0)


def test_pca_input_checks(rng):
    with pytest.raises(ValidationError):
        pca_project(rng.normal(size=(3, 5)), rng.normal(size=(3, 5)))
    with pytest.raises(ValidationError):
        pca_project(rng.normal(size=(10, 3)), rng.normal(size=(10, 4)))


def test_overlap_identical_and_disjoint(rng):
    H = rng.normal(size=(300, 2))
    assert overlap_score(H, H.copy()) == 1.0
    far = H + 100.0 * (np.ptp(H, axis=0).max())
    assert overlap_score(H, far) == 0.0


def test_overlap_two_unit_gaussians_band(rng):
    H = rng.normal(size=(1000, 2))
    S = rng.normal(size=(1000, 2))
    assert 0.8 <= overlap_score(H, S, k=5) <= 1.0


def test_overlap_detects_collapse(rng):
    H = rng.normal(size=(500, 2))
    S = 0.05 * rng.normal(size=(500, 2))  # synthetic cloud much too narrow
    assert overlap_score(H, S) < 0.5
    assert coverage(H, S, 5) > 0.9  # narrow cloud sits inside, but misses the spread


def test_overlap_input_checks(rng):
    with pytest.raises(ValidationError):
        overlap_score(np.zeros((0, 2)), rng.normal(size=(3, 2)))
    with pytest.raises(ValidationError):
        overlap_score(rng.normal(size=(3, 2)), rng.normal(size=(3, 2)), k=0)


def test_writers(tmp_path, rng):
    H = rng.normal(size=(40, 3))
    rep = compare(H, H + 0.01 * rng.normal(size=(40, 3)))
    write_projection_csv(rep, tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "source,pc1,pc2" and len(lines) == 81
    write_pearson_csv(pearson_matrix(np.array([[1.0, 2, 3], [5.0, 5, 5]]), regions=["a", "b"]), tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[2] == "b,,"
    write_report_json(report_dict(rep, note="x"), tmp_path / "r.json")
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["pca_fit"] == "pooled" and data["note"] == "x" and 0 <= data["overlap_score"] <= 1
