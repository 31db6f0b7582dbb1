import math

import numpy as np
import pytest

from followme.exceptions import EmptySplit, NumericalError, ShapeError
from followme.metrics import (GMM_EPS, MetricReport, PredictionSet, ade, amd, amv,
                              best_of_n, evaluate, fde, fit_gmm, fit_gmm_summary,
                              largest_eigenvalue, mahalanobis)
from conftest import make_straight_scene
from followme.dataio import build_window_set


def test_ade_hand_cases():
    gt = np.array([[0.0, 1.0], [0.0, 0.0]])
    assert ade(gt, gt) == 0.0
    offset = gt + np.array([[3.0], [4.0]])
    assert ade(offset, gt) == pytest.approx(5.0, abs=1e-12)
    pred = np.array([[0.0, 1.0], [1.0, 2.0]])
    assert ade(pred, gt) == pytest.approx(1.5, abs=1e-12)


def test_fde_hand_cases():
    gt = np.array([[0.0, 1.0], [0.0, 0.0]])
    assert fde(gt, gt) == 0.0
    pred = gt.copy()
    pred[1, -1] += 2.0
    assert fde(pred, gt) == pytest.approx(2.0, abs=1e-12)
    pred2 = np.array([[0.0, 1.0], [1.0, 2.0]])
    assert fde(pred2, gt) == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(ShapeError):
        fde(np.zeros((2, 3)), np.zeros((2, 4)))


def test_displacement_metrics_rigid_motion_invariant(rng):
    pred = rng.standard_normal((2, 12))
    gt = rng.standard_normal((2, 12))
    theta = 0.7
    rot = np.array([[math.cos(theta), -math.sin(theta)],
                    [math.sin(theta), math.cos(theta)]])
    shift = np.array([[4.0], [-2.0]])
    assert ade(rot @ pred + shift, rot @ gt + shift) == pytest.approx(ade(pred, gt), rel=1e-12)
    assert fde(rot @ pred + shift, rot @ gt + shift) == pytest.approx(fde(pred, gt), rel=1e-12)


def test_best_of_n_rules(rng):
    gt = rng.standard_normal((2, 6))
    lone = PredictionSet(samples=gt[None] + 1.0)
    a, f, idx = best_of_n(lone, gt)
    assert idx == 0 and a == pytest.approx(math.sqrt(2.0)) and f == pytest.approx(math.sqrt(2.0))
    good = gt + 0.1
    pset = PredictionSet(samples=np.stack([good, good, gt + 3.0]))
    _, _, idx = best_of_n(pset, gt)
    assert idx == 0
    samples = rng.standard_normal((9, 2, 6))
    pset = PredictionSet(samples=samples)
    bon_ade, _, _ = best_of_n(pset, gt)
    per = [ade(s, gt) for s in samples]
    assert bon_ade <= np.mean(per) + 1e-12
    assert bon_ade == pytest.approx(min(per), rel=1e-12)


def test_fit_gmm_selects_one_component_for_tight_cluster(rng):
    samples = rng.standard_normal((20, 2)) * 0.05 + np.array([2.0, -1.0])
    entry = fit_gmm(samples, rng_seed=0)
    assert entry.k == 1
    np.testing.assert_allclose(entry.mean, samples.mean(axis=0), atol=1e-9)


def test_fit_gmm_degenerate_identical_samples():
    samples = np.tile([1.0, 1.0], (20, 1))
    entry = fit_gmm(samples, rng_seed=0)
    np.testing.assert_allclose(entry.mean, [1.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(entry.total_covariance, GMM_EPS * np.eye(2), atol=1e-15)


def test_fit_gmm_k1_matches_mle_oracle(rng):
    samples = rng.standard_normal((20, 2)) * np.array([2.0, 0.5]) + 3.0
    entry = fit_gmm(samples, k_candidates=(1,), rng_seed=0)
    mu = samples.mean(axis=0)
    dev = samples - mu
    cov = dev.T @ dev / len(samples) + GMM_EPS * np.eye(2)
    np.testing.assert_allclose(entry.mean, mu, atol=1e-9)
    np.testing.assert_allclose(entry.total_covariance, cov, atol=1e-9)
    np.testing.assert_allclose(entry.weights, [1.0], atol=1e-12)


def test_fit_gmm_total_covariance_vs_monte_carlo(rng):
    # two well-separated clusters; oracle = covariance of a large resample
    # from the fitted mixture
    a = rng.standard_normal((10, 2)) * 0.3 + np.array([-3.0, 0.0])
    b = rng.standard_normal((10, 2)) * 0.3 + np.array([3.0, 1.0])
    entry = fit_gmm(np.vstack([a, b]), rng_seed=1)
    n = 200_000
    comp = rng.choice(entry.k, size=n, p=entry.weights)
    draws = np.empty((n, 2))
    for k in range(entry.k):
        sel = comp == k
        chol = np.linalg.cholesky(entry.covariances[k])
        draws[sel] = entry.means[k] + rng.standard_normal((sel.sum(), 2)) @ chol.T
    mc_cov = np.cov(draws.T, bias=True)
    assert np.abs(mc_cov - entry.total_covariance).max() / np.abs(entry.total_covariance).max() < 0.02


def test_fit_gmm_summary_covers_horizon(rng):
    pset = PredictionSet(samples=rng.standard_normal((20, 2, 7)))
    summary = fit_gmm_summary(pset, rng_seed=0)
    assert len(summary) == 7


def test_mahalanobis_hand_and_affine_invariance(rng):
    assert mahalanobis([1.0, 0.0], [0.0, 0.0], np.eye(2)) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(NumericalError):
        mahalanobis([1.0, 0.0], [0.0, 0.0], np.zeros((2, 2)))
    for _ in range(20):
        p = rng.standard_normal(2)
        mu = rng.standard_normal(2)
        m = rng.standard_normal((2, 2))
        cov = m @ m.T + 0.2 * np.eye(2)
        a = rng.standard_normal((2, 2)) + 2.0 * np.eye(2)
        b = rng.standard_normal(2)
        d0 = mahalanobis(p, mu, cov)
        d1 = mahalanobis(a @ p + b, a @ mu + b, a @ cov @ a.T)
        assert d1 == pytest.approx(d0, rel=1e-6)


def test_amd_examples(rng):
    # mean exactly at gt -> 0
    sym = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]])
    sets = [PredictionSet(samples=sym.T[None].transpose(2, 1, 0))]
    assert sets[0].samples.shape == (4, 2, 1)
    gt = np.array([[1.0], [1.0]])
    val = amd(sets, [gt], k_candidates=(1,), rng_seed=0)
    assert val == pytest.approx(0.0, abs=1e-12)
    # single-Gaussian oracle with explicit inverse, 50 random instances
    for i in range(50):
        samples = rng.standard_normal((20, 2)) @ rng.standard_normal((2, 2)) + rng.standard_normal(2) * 3
        point = rng.standard_normal(2)
        got = amd([PredictionSet(samples=samples[:, :, None])],
                  [point[:, None]], k_candidates=(1,), rng_seed=0)
        mu = samples.mean(axis=0)
        dev = samples - mu
        g = dev.T @ dev / 20 + GMM_EPS * np.eye(2)
        det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
        inv = np.array([[g[1, 1], -g[0, 1]], [-g[1, 0], g[0, 0]]]) / det
        expect = math.sqrt((point - mu) @ inv @ (point - mu))
        assert got == pytest.approx(expect, abs=1e-8)


def test_amd_affine_invariance_joint_transform(rng):
    samples = rng.standard_normal((20, 2, 5))
    gt = rng.standard_normal((2, 5))
    base = amd([PredictionSet(samples=samples)], [gt], k_candidates=(1,), rng_seed=0)
    a = np.array([[1.3, -0.4], [0.2, 0.8]])
    b = np.array([2.0, -1.0])
    s2 = np.einsum("ij,mjt->mit", a, samples) + b[None, :, None]
    g2 = a @ gt + b[:, None]
    moved = amd([PredictionSet(samples=s2)], [g2], k_candidates=(1,), rng_seed=0)
    assert moved == pytest.approx(base, rel=1e-6)


def test_amv_examples(rng):
    assert largest_eigenvalue(np.eye(2)) == pytest.approx(1.0)
    assert largest_eigenvalue(np.diag([4.0, 1.0])) == pytest.approx(4.0)
    big = rng.standard_normal((2000, 2)) * np.array([2.0, 1.0])  # variances 4, 1
    sets = [PredictionSet(samples=big[:, :, None])]
    val = amv(sets, k_candidates=(1,), rng_seed=0)
    assert abs(val - 4.0) / 4.0 < 0.05
    ident = [PredictionSet(samples=np.zeros((20, 2, 1)))]
    assert amv(ident, rng_seed=0) == pytest.approx(GMM_EPS, abs=1e-12)


class _PointMassPredictor:
    """Sampled predictor that always returns the ground truth."""

    def __init__(self, targets):
        self.targets = targets

    def sample_batch(self, features, masks, m, rng):
        idx = self._index
        b = features.shape[0]
        out = np.repeat(self.targets[idx: idx + b][:, None], m, axis=1)
        self._index += b
        return out


def _toy_window_set():
    scene = make_straight_scene(n_frames=140)
    return build_window_set([scene], horizon_s=3, stride_frames=10)


def test_evaluate_point_mass_predictor():
    ws = _toy_window_set()
    pred = _PointMassPredictor(ws.targets)
    pred._index = 0
    report = evaluate(pred, ws, m=20, seed=0)
    assert report.ade == pytest.approx(0.0, abs=1e-12)
    assert report.fde == pytest.approx(0.0, abs=1e-12)
    assert report.amd == pytest.approx(0.0, abs=1e-9)
    assert report.amv == pytest.approx(GMM_EPS, abs=1e-12)
    assert set(report.per_window) == {"ade", "fde", "amd", "amv"}
    assert report.n_windows == len(ws)


def test_evaluate_empty_split_and_report_format(tmp_path):
    ws = _toy_window_set()
    with pytest.raises(EmptySplit):
        evaluate(_PointMassPredictor(ws.targets), ws.subset([]), m=5, seed=0)
    pred = _PointMassPredictor(ws.targets)
    pred._index = 0
    report = evaluate(pred, ws, m=5, seed=0)
    text = report.to_text()
    for key in ("h3.ade=", "h3.fde=", "h3.amd=", "h3.amv="):
        assert key in text
    path = tmp_path / "report.txt"
    report.save(path)
    assert path.read_text() == text


def test_prediction_set_validation(rng):
    with pytest.raises(ShapeError):
        PredictionSet(samples=rng.standard_normal((0, 2, 5)))
    with pytest.raises(ShapeError):
        PredictionSet(samples=np.full((3, 2, 5), np.nan))
