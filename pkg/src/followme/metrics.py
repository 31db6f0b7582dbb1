"""Displacement and distribution metrics for generated trajectory samples.

ADE/FDE use Best-of-N over the sample set. The distribution metrics fit a
small Gaussian mixture (EM, BIC model selection over k in {1,2,3}) to the M
samples at every predicted timestep, then report the Mahalanobis distance of
the ground truth from the mixture (AMD) and the largest eigenvalue of the
mixture's total covariance (AMV), averaged over windows and timesteps.

Covariances carry a 1e-6 diagonal regularization, so identical samples yield
a degenerate-but-valid fit with covariance eps*I.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import EgoTarget, ObservationWindow
from .exceptions import EmptySplit, NumericalError, ShapeError

GMM_EPS = 1e-6
GMM_K_CANDIDATES = (1, 2, 3)
_EM_ITERS = 40
_EVAL_CHUNK_SAMPLES = 512


@dataclass(frozen=True)
class PredictionSet:
    """M generated ego trajectories [M, 2, T_p] for one window."""

    samples: np.ndarray
    window: ObservationWindow | None = None

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 3 or s.shape[1] != 2 or s.shape[0] < 1:
            raise ShapeError(f"samples must be [M>=1, 2, T_p], got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ShapeError("samples contain non-finite values")
        object.__setattr__(self, "samples", s)

    @property
    def m(self) -> int:
        return self.samples.shape[0]

    @property
    def horizon_frames(self) -> int:
        return self.samples.shape[2]


@dataclass(frozen=True)
class GmmEntry:
    """Mixture fit at one timestep plus its total mean/covariance."""

    weights: np.ndarray        # [k]
    means: np.ndarray          # [k, 2]
    covariances: np.ndarray    # [k, 2, 2]
    mean: np.ndarray           # [2]   total mean
    total_covariance: np.ndarray  # [2, 2]  law of total covariance

    @property
    def k(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class GmmSummary:
    """Per-timestep mixture fits for one window's sample set."""

    entries: tuple[GmmEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[0] != 2:
        raise ShapeError(f"expected matching [2, T_p] arrays, got {pred.shape} and {gt.shape}")
    return pred, gt


def ade(pred, gt) -> float:
    """Mean pointwise Euclidean distance over the horizon."""
    pred, gt = _check_pair(pred, gt)
    return float(np.mean(np.hypot(*(pred - gt))))


def fde(pred, gt) -> float:
    """Euclidean distance at the final timestep."""
    pred, gt = _check_pair(pred, gt)
    d = pred[:, -1] - gt[:, -1]
    return float(np.hypot(d[0], d[1]))


def best_of_n(pset: PredictionSet, gt) -> tuple[float, float, int]:
    """(ADE, FDE, index) of the sample with the lowest ADE; ties -> lowest index."""
    gt = np.asarray(gt, dtype=np.float64)
    if gt.shape != pset.samples.shape[1:]:
        raise ShapeError(f"ground truth {gt.shape} does not match samples {pset.samples.shape}")
    dists = np.hypot(*(pset.samples - gt[None]).transpose(1, 0, 2))  # [M, T_p]
    per_sample_ade = dists.mean(axis=1)
    best = int(np.argmin(per_sample_ade))
    return float(per_sample_ade[best]), fde(pset.samples[best], gt), best


def mahalanobis(point, mean, cov) -> float:
    """sqrt((p - mu)^T cov^-1 (p - mu)) with an explicit 2x2 inverse."""
    p = np.asarray(point, dtype=np.float64)
    mu = np.asarray(mean, dtype=np.float64)
    c = np.asarray(cov, dtype=np.float64)
    det = c[0, 0] * c[1, 1] - c[0, 1] * c[1, 0]
    if not np.isfinite(det) or det <= 0:
        raise NumericalError(f"covariance is singular (det={det})")
    dx, dy = p[0] - mu[0], p[1] - mu[1]
    q = (c[1, 1] * dx * dx - 2.0 * c[0, 1] * dx * dy + c[0, 0] * dy * dy) / det
    return float(math.sqrt(max(q, 0.0)))


def largest_eigenvalue(cov) -> float:
    """Largest eigenvalue of a symmetric 2x2 matrix, closed form."""
    c = np.asarray(cov, dtype=np.float64)
    half_tr = 0.5 * (c[0, 0] + c[1, 1])
    disc = math.sqrt(max((0.5 * (c[0, 0] - c[1, 1])) ** 2 + c[0, 1] * c[1, 0], 0.0))
    return float(half_tr + disc)


# --------------------------------------------------------------------- EM fit

def _gauss_logpdf(xs, mu, sig):
    """xs [C,M,2], mu [C,k,2], sig [C,k,2,2] -> log density [C,M,k]."""
    a = sig[..., 0, 0]
    b = sig[..., 0, 1]
    d = sig[..., 1, 1]
    det = a * d - b * b
    dx = xs[:, :, None, 0] - mu[:, None, :, 0]
    dy = xs[:, :, None, 1] - mu[:, None, :, 1]
    q = (d[:, None] * dx * dx - 2.0 * b[:, None] * dx * dy + a[:, None] * dy * dy) / det[:, None]
    return -0.5 * (q + np.log(det)[:, None]) - math.log(2.0 * math.pi)


def _m_step(xs, resp, eps):
    m = xs.shape[1]
    nk = resp.sum(axis=1)                                    # [C,k]
    pi = nk / m
    safe = np.maximum(nk, 1e-12)
    mu = np.einsum("cmk,cmd->ckd", resp, xs) / safe[..., None]
    dxk = xs[:, :, None, :] - mu[:, None, :, :]              # [C,M,k,2]
    sig = np.einsum("cmk,cmkd,cmke->ckde", resp, dxk, dxk) / safe[..., None, None]
    sig[..., 0, 0] += eps
    sig[..., 1, 1] += eps
    return pi, mu, sig


def _kmeanspp_init(xs, k, rng):
    c, m, _ = xs.shape
    rows = np.arange(c)
    centers = xs[rows, rng.integers(0, m, size=c)][:, None, :]
    for _ in range(1, k):
        diff = xs[:, :, None, :] - centers[:, None, :, :]
        d2 = np.min((diff ** 2).sum(axis=-1), axis=2)        # [C,M]
        tot = d2.sum(axis=1, keepdims=True)
        probs = np.where(tot > 0, d2 / np.maximum(tot, 1e-300), 1.0 / m)
        cum = np.cumsum(probs, axis=1)
        u = rng.random((c, 1)) * cum[:, -1:]
        nxt = np.minimum((cum < u).sum(axis=1), m - 1)
        centers = np.concatenate([centers, xs[rows, nxt][:, None, :]], axis=1)
    diff = xs[:, :, None, :] - centers[:, None, :, :]
    assign = np.argmin((diff ** 2).sum(axis=-1), axis=2)     # [C,M]
    resp = np.zeros((c, m, k))
    np.put_along_axis(resp, assign[..., None], 1.0, axis=2)
    return resp


def _em_fit_k(xs, k, eps, rng, n_iter=_EM_ITERS):
    """Fixed-iteration EM per cell. Returns (pi, mu, sig, loglik)."""
    resp = _kmeanspp_init(xs, k, rng)
    pi = mu = sig = None
    norm = None
    for _ in range(n_iter):
        pi, mu, sig = _m_step(xs, resp, eps)
        logw = _gauss_logpdf(xs, mu, sig) + np.log(np.maximum(pi, 1e-300))[:, None, :]
        top = logw.max(axis=2, keepdims=True)
        norm = top[..., 0] + np.log(np.exp(logw - top).sum(axis=2))
        resp = np.exp(logw - norm[..., None])
    return pi, mu, sig, norm.sum(axis=1)


def _fit_cells(xs, k_candidates=GMM_K_CANDIDATES, eps=GMM_EPS, rng=None):
    """Fit every cell of xs [C, M, 2]; BIC-select k (ties -> smaller k).

    Returns (mu_hat [C,2], g_hat [C,2,2], per_k) where per_k maps k to its
    (pi, mu, sig) fit arrays and the selected k index array.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    c, m, _ = xs.shape
    ks = sorted(k_candidates)
    if any(k < 1 for k in ks) or not ks:
        raise NumericalError(f"invalid k candidates {k_candidates}")
    bics, mu_hats, g_hats, fits = [], [], [], {}
    for k in ks:
        pi, mu, sig, ll = _em_fit_k(xs, k, eps, rng)
        bic = -2.0 * ll + (6 * k - 1) * math.log(m)
        mu_hat = np.einsum("ck,ckd->cd", pi, mu)
        dev = mu - mu_hat[:, None, :]
        g_hat = np.einsum("ck,ckde->cde", pi, sig) \
            + np.einsum("ck,ckd,cke->cde", pi, dev, dev)
        bics.append(bic)
        mu_hats.append(mu_hat)
        g_hats.append(g_hat)
        fits[k] = (pi, mu, sig)
    bics = np.stack(bics, axis=1)                 # [C, n_k]
    choice = np.argmin(bics, axis=1)              # first minimum -> smallest k
    mu_sel = np.take_along_axis(np.stack(mu_hats, 1), choice[:, None, None], 1)[:, 0]
    g_sel = np.take_along_axis(np.stack(g_hats, 1), choice[:, None, None, None], 1)[:, 0]
    return mu_sel, g_sel, fits, np.array(ks)[choice]


def fit_gmm(samples, k_candidates=GMM_K_CANDIDATES, eps=GMM_EPS, rng_seed=0) -> GmmEntry:
    """Fit one timestep's samples [M, 2]; deterministic given rng_seed."""
    xs = np.asarray(samples, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != 2 or xs.shape[0] < 2:
        raise ShapeError(f"samples must be [M>=2, 2], got {xs.shape}")
    mu_hat, g_hat, fits, k_sel = _fit_cells(
        xs[None], k_candidates, eps, np.random.default_rng(rng_seed))
    k = int(k_sel[0])
    pi, mu, sig = (a[0] for a in fits[k])
    return GmmEntry(weights=pi, means=mu, covariances=sig,
                    mean=mu_hat[0], total_covariance=g_hat[0])


def fit_gmm_summary(pset: PredictionSet, k_candidates=GMM_K_CANDIDATES,
                    eps=GMM_EPS, rng_seed=0) -> GmmSummary:
    """Per-timestep fits for one sample set."""
    return GmmSummary(entries=tuple(
        fit_gmm(pset.samples[:, :, t].copy(), k_candidates, eps, rng_seed)
        for t in range(pset.horizon_frames)))


def _mahalanobis_cells(points, mu, g):
    """points/mu [C,2], g [C,2,2] -> distances [C]."""
    det = g[:, 0, 0] * g[:, 1, 1] - g[:, 0, 1] * g[:, 1, 0]
    if not np.all(np.isfinite(det)) or np.any(det <= 0):
        raise NumericalError("singular total covariance in AMD")
    dx = points[:, 0] - mu[:, 0]
    dy = points[:, 1] - mu[:, 1]
    q = (g[:, 1, 1] * dx * dx - 2.0 * g[:, 0, 1] * dx * dy + g[:, 0, 0] * dy * dy) / det
    return np.sqrt(np.maximum(q, 0.0))


def _stack_cells(sets: list[PredictionSet]):
    arr = np.stack([ps.samples for ps in sets])        # [W, M, 2, T]
    w, m, _, t = arr.shape
    return arr.transpose(0, 3, 1, 2).reshape(w * t, m, 2)


def _targets_cells(gts) -> np.ndarray:
    pts = [g.positions if isinstance(g, EgoTarget) else np.asarray(g, dtype=np.float64)
           for g in gts]
    arr = np.stack(pts)                                # [W, 2, T]
    return arr.transpose(0, 2, 1).reshape(-1, 2)


def amd(sets: list[PredictionSet], gts, k_candidates=GMM_K_CANDIDATES,
        eps=GMM_EPS, rng_seed=0) -> float:
    """Mean Mahalanobis distance of ground truth from the per-timestep fits."""
    if not sets:
        raise EmptySplit("amd needs at least one window")
    mu, g, _, _ = _fit_cells(_stack_cells(sets), k_candidates, eps,
                             np.random.default_rng(rng_seed))
    return float(np.mean(_mahalanobis_cells(_targets_cells(gts), mu, g)))


def amv(sets: list[PredictionSet], k_candidates=GMM_K_CANDIDATES,
        eps=GMM_EPS, rng_seed=0) -> float:
    """Mean largest eigenvalue of the fitted total covariances."""
    if not sets:
        raise EmptySplit("amv needs at least one window")
    _, g, _, _ = _fit_cells(_stack_cells(sets), k_candidates, eps,
                            np.random.default_rng(rng_seed))
    return float(np.mean(_eigmax_cells(g)))


def _eigmax_cells(g):
    half_tr = 0.5 * (g[:, 0, 0] + g[:, 1, 1])
    disc = np.sqrt(np.maximum((0.5 * (g[:, 0, 0] - g[:, 1, 1])) ** 2
                              + g[:, 0, 1] * g[:, 1, 0], 0.0))
    return half_tr + disc


# ------------------------------------------------------------------ reporting

@dataclass
class MetricReport:
    """Aggregate metrics for one horizon plus per-window breakdowns."""

    horizon_s: int
    n_windows: int
    m: int
    ade: float
    fde: float
    amd: float
    amv: float
    per_window: dict[str, np.ndarray] = field(default_factory=dict)

    def to_text(self) -> str:
        h = f"h{self.horizon_s}"
        lines = [
            f"{h}.ade={self.ade:.9f}",
            f"{h}.amd={self.amd:.9f}",
            f"{h}.amv={self.amv:.9f}",
            f"{h}.fde={self.fde:.9f}",
            f"{h}.m={self.m}",
            f"{h}.n_windows={self.n_windows}",
        ]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())


def evaluate(predictor, windows, m: int = 20, seed: int = 0) -> MetricReport:
    """Run a predictor over a WindowSet and compute all four metrics.

    Two predictor kinds are supported:
      - sampled: exposes sample_batch(features, masks, m, rng) -> [B,m,2,T_p];
        ADE/FDE are Best-of-m, AMD/AMV come from per-timestep GMM fits.
      - Gaussian: exposes predict_gaussian(features, masks, t_pred) ->
        (means, covs); ADE/FDE use the mean forecast, AMD/AMV use the
        covariances directly.
    """
    if len(windows) == 0:
        raise EmptySplit("evaluate needs a non-empty window set")
    rng = np.random.default_rng(seed)
    t_pred = windows.t_pred
    ades, fdes, amds, amvs = [], [], [], []

    chunk = max(1, _EVAL_CHUNK_SAMPLES // m)
    for lo in range(0, len(windows), chunk):
        hi = min(lo + chunk, len(windows))
        feats = windows.features[lo:hi]
        masks = windows.masks[lo:hi]
        gts = windows.targets[lo:hi]
        b = hi - lo
        if hasattr(predictor, "sample_batch"):
            samples = predictor.sample_batch(feats, masks, m, rng)    # [B,m,2,T]
            err = np.sqrt(((samples - gts[:, None]) ** 2).sum(axis=2))  # [B,m,T]
            per_ade = err.mean(axis=2)
            best = per_ade.argmin(axis=1)
            rows = np.arange(b)
            ades.append(per_ade[rows, best])
            fdes.append(err[rows, best, -1])
            cells = samples.transpose(0, 3, 1, 2).reshape(b * t_pred, m, 2)
            mu, g, _, _ = _fit_cells(cells, rng=np.random.default_rng(seed + 1))
            pts = gts.transpose(0, 2, 1).reshape(-1, 2)
            dists = _mahalanobis_cells(pts, mu, g).reshape(b, t_pred)
            amds.append(dists.mean(axis=1))
            amvs.append(_eigmax_cells(g).reshape(b, t_pred).mean(axis=1))
        elif hasattr(predictor, "predict_gaussian"):
            means, covs = predictor.predict_gaussian(feats, masks, t_pred)
            err = np.sqrt(((means - gts) ** 2).sum(axis=1))           # [B,T]
            ades.append(err.mean(axis=1))
            fdes.append(err[:, -1])
            g = covs.reshape(b * t_pred, 2, 2)
            pts = gts.transpose(0, 2, 1).reshape(-1, 2)
            mu = means.transpose(0, 2, 1).reshape(-1, 2)
            dists = _mahalanobis_cells(pts, mu, g).reshape(b, t_pred)
            amds.append(dists.mean(axis=1))
            amvs.append(_eigmax_cells(g).reshape(b, t_pred).mean(axis=1))
        else:
            raise ShapeError("predictor exposes neither sample_batch nor predict_gaussian")

    per_window = {"ade": np.concatenate(ades), "fde": np.concatenate(fdes),
                  "amd": np.concatenate(amds), "amv": np.concatenate(amvs)}
    return MetricReport(
        horizon_s=windows.horizon_s, n_windows=len(windows), m=m,
        ade=float(per_window["ade"].mean()), fde=float(per_window["fde"].mean()),
        amd=float(per_window["amd"].mean()), amv=float(per_window["amv"].mean()),
        per_window=per_window)
