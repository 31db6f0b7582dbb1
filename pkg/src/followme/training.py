"""Lead-conditioned IMLE training with the best-sample + triplet objective.

Per batch: draw M noise vectors per window, generate M samples, rank them by
squared L2 distance to the ground truth, and backpropagate the loss

    L = ||s_1 - gt||^2 + alpha * (||s_1 - s_2||^2 - ||s_1 - s_last||^2)

where s_1 / s_2 / s_last are the closest / second-closest / furthest samples.
Only those three samples receive gradient. The schedule multiplies the
learning rate by 0.1 after every 40 completed epochs (120 epochs default).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataio import WindowSet
from .exceptions import ConfigError, EmptySplit, TrainingDiverged
from .metrics import MetricReport, PredictionSet, evaluate
from .model import StgcnnPredictor

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8
_VAL_SEED_TAG = 9090


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 120
    lr: float = 1e-3
    lr_decay: float = 0.1
    lr_decay_every: int = 40
    m_samples: int = 20
    alpha: float = 1e-4
    batch_size: int = 16
    grad_clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.m_samples < 3:
            raise ConfigError("the triplet objective needs m_samples >= 3")
        if self.lr <= 0 or self.batch_size < 1:
            raise ConfigError("lr must be positive and batch_size >= 1")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 1-based epoch number."""
        return self.lr * self.lr_decay ** ((epoch - 1) // self.lr_decay_every)


@dataclass(frozen=True)
class SampleRanking:
    """Sample indices ordered by distance to ground truth (closest first)."""

    order: np.ndarray
    best: int

    def __post_init__(self):
        if sorted(self.order.tolist()) != list(range(len(self.order))):
            raise ConfigError("ranking must be a permutation of 0..M-1")


def _as_samples(samples) -> np.ndarray:
    if isinstance(samples, PredictionSet):
        return samples.samples
    return np.asarray(samples, dtype=np.float64)


def _as_target(target) -> np.ndarray:
    pos = getattr(target, "positions", target)
    return np.asarray(pos, dtype=np.float64)


def imle_loss(samples, target, alpha: float) -> tuple[float, SampleRanking]:
    """Best-sample squared error plus the triplet term (may be negative).

    Ranking uses the squared L2 distance of each sample to the target, summed
    over all [2, T_p] entries; ties resolve to the lowest sample index.
    """
    s = _as_samples(samples)
    gt = _as_target(target)
    if s.shape[0] < 3:
        raise ConfigError(f"need at least 3 samples for the triplet term, got {s.shape[0]}")
    d = ((s - gt[None]) ** 2).sum(axis=(1, 2))
    order = np.argsort(d, kind="stable")
    i1, i2, il = int(order[0]), int(order[1]), int(order[-1])
    loss = d[i1] + alpha * (((s[i1] - s[i2]) ** 2).sum() - ((s[i1] - s[il]) ** 2).sum())
    return float(loss), SampleRanking(order=order, best=i1)


def imle_loss_gradients(samples, target, alpha: float) -> np.ndarray:
    """d loss / d samples, [M, 2, T_p]; zero except the three ranked samples."""
    s = _as_samples(samples)
    gt = _as_target(target)
    _, ranking = imle_loss(s, gt, alpha)
    i1, i2, il = int(ranking.order[0]), int(ranking.order[1]), int(ranking.order[-1])
    grads = np.zeros_like(s)
    grads[i1] = 2.0 * (s[i1] - gt) + 2.0 * alpha * (s[il] - s[i2])
    grads[i2] = -2.0 * alpha * (s[i1] - s[i2])
    grads[il] = 2.0 * alpha * (s[i1] - s[il])
    return grads


class _Adam:
    def __init__(self, params: dict[str, np.ndarray]):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        c1 = 1.0 - _ADAM_BETA1 ** self.t
        c2 = 1.0 - _ADAM_BETA2 ** self.t
        for k, g in grads.items():
            self.m[k] = _ADAM_BETA1 * self.m[k] + (1.0 - _ADAM_BETA1) * g
            self.v[k] = _ADAM_BETA2 * self.v[k] + (1.0 - _ADAM_BETA2) * g * g
            params[k] = params[k] - lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + _ADAM_EPS)


def _clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = math.sqrt(sum(float((g ** 2).sum()) for g in grads.values()))
    if total > max_norm > 0:
        scale = max_norm / total
        for k in grads:
            grads[k] = grads[k] * scale


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_bon_ade: float

    def line(self) -> str:
        return f"{self.epoch},{self.lr:.10g},{self.train_loss:.10g},{self.val_bon_ade:.10g}"


def write_history(history: list[EpochRecord], path) -> None:
    with open(path, "w") as fh:
        fh.write("# epoch,lr,train_loss,val_bon_ade\n")
        for rec in history:
            fh.write(rec.line() + "\n")


def validation_bon_ade(model: StgcnnPredictor, windows: WindowSet, m: int, seed: int) -> float:
    """Mean Best-of-m ADE over a window set with a fixed noise seed."""
    if len(windows) == 0:
        raise EmptySplit("validation window set is empty")
    rng = np.random.default_rng(np.random.SeedSequence([seed, _VAL_SEED_TAG]))
    total = 0.0
    chunk = max(1, 512 // m)  # keep the effective forward batch small
    for lo in range(0, len(windows), chunk):
        hi = min(lo + chunk, len(windows))
        samples = model.sample_batch(windows.features[lo:hi], windows.masks[lo:hi], m, rng)
        err = np.sqrt(((samples - windows.targets[lo:hi, None]) ** 2).sum(axis=2))
        total += err.mean(axis=2).min(axis=1).sum()
    return float(total / len(windows))


def train(windows: WindowSet, model: StgcnnPredictor, cfg: TrainConfig,
          val_windows: WindowSet | None = None
          ) -> tuple[StgcnnPredictor, list[EpochRecord]]:
    """Optimize the model in place; returns (model, per-epoch history).

    The checkpoint with the best validation Best-of-N ADE is restored at the
    end when a validation set is given. Deterministic for a fixed seed on a
    single worker.
    """
    if len(windows) == 0:
        raise EmptySplit("training window set is empty")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    alpha = cfg.alpha if model.config.use_triplet else 0.0
    m = cfg.m_samples
    t_obs = model.config.t_obs
    opt = _Adam(model.params)
    history: list[EpochRecord] = []
    best_val = math.inf
    best_params = None
    n = len(windows)

    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr_at(epoch)
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo: lo + cfg.batch_size]
            b = len(idx)
            feats = windows.features[idx]
            masks = windows.masks[idx]
            gts = windows.targets[idx]
            noise = rng.standard_normal((b, m, 2, t_obs))

            preds, _, cache = model.forward_batch(
                np.repeat(feats, m, axis=0), np.repeat(masks, m, axis=0),
                noise.reshape(b * m, 2, t_obs), need_cache=True)
            preds = preds.reshape(b, m, 2, -1)

            d = ((preds - gts[:, None]) ** 2).sum(axis=(2, 3))       # [B, M]
            order = np.argsort(d, axis=1, kind="stable")
            i1, i2, il = order[:, 0], order[:, 1], order[:, -1]
            rows = np.arange(b)
            s1, s2, sl = preds[rows, i1], preds[rows, i2], preds[rows, il]
            loss = d[rows, i1] + alpha * (((s1 - s2) ** 2).sum(axis=(1, 2))
                                          - ((s1 - sl) ** 2).sum(axis=(1, 2)))
            batch_loss = float(loss.mean())
            if not math.isfinite(batch_loss):
                raise TrainingDiverged(f"non-finite loss {batch_loss} at epoch {epoch}")
            epoch_loss += batch_loss * b

            # gradient reaches only the three ranked samples of each window
            dp1 = (2.0 * (s1 - gts) + 2.0 * alpha * (sl - s2)) / b
            dp2 = (-2.0 * alpha * (s1 - s2)) / b
            dpl = (2.0 * alpha * (s1 - sl)) / b
            sub_rows = np.repeat(rows, 3)
            sub_cols = np.stack([i1, i2, il], axis=1).reshape(-1)
            dpred = np.stack([dp1, dp2, dpl], axis=1).reshape(-1, dp1.shape[1], dp1.shape[2])
            sub_cache = model.slice_cache(cache, sub_rows * m + sub_cols)
            grads = model.backward_batch(sub_cache, dpred)
            _clip_grads(grads, cfg.grad_clip_norm)
            opt.step(model.params, grads, lr)

        val = math.nan
        if val_windows is not None and len(val_windows) > 0:
            val = validation_bon_ade(model, val_windows, m, cfg.seed)
            if val < best_val:
                best_val = val
                best_params = {k: v.copy() for k, v in model.params.items()}
        history.append(EpochRecord(epoch=epoch, lr=lr,
                                   train_loss=epoch_loss / n, val_bon_ade=val))

    if best_params is not None:
        model.params = best_params
    return model, history


def evaluate_checkpoint(model: StgcnnPredictor, windows: WindowSet,
                        cfg: TrainConfig, seed: int = 0) -> MetricReport:
    """Metrics of a trained model on a split; no parameter updates."""
    if len(windows) == 0:
        raise EmptySplit("evaluation window set is empty")
    return evaluate(model, windows, m=cfg.m_samples, seed=seed)
