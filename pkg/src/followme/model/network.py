"""The ego-trajectory prediction network.

Pipeline per window (shapes in channel-first convention, P = 2):
  1. per-node processor: shared-weight CNN over each agent's [5, T_o] slice
     (spatial convs 5 -> hidden -> 2 over time, then a temporal conv that
     treats the T_o frames as channels and maps them to T_p) -> [2, T_p, N].
  2. spatial-class processor: CNN over the full [5, T_o, N] stack -> [2, T_o, N].
  3. temporal concatenation of both embeddings -> [T_o + T_p, 2, N].
  4. fusion CNN + sigmoid -> gate weights in (0, 1) for the N-1 non-ego
     agents ([2, T_p, N-1]); padded agents are zeroed after the sigmoid.
  5. attention: gate-weighted sum of non-ego embeddings -> [2, T_p].
  6. output = attention + ego embedding (residual in position space).

Gradients are computed by hand (see backward_batch); training needs only
parameter gradients of scalar losses of the prediction.

All forward passes are read-only on parameters, so concurrent inference is
safe; training mutates parameters from a single writer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..core import ObservationWindow
from ..exceptions import ShapeError
from .config import ModelConfig


def _prelu(x, alpha):
    return np.where(x > 0, x, alpha * x)


def _prelu_dx(x, alpha):
    return np.where(x > 0, 1.0, alpha)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class FusionTrace:
    """Diagnostics captured during one forward pass.

    weights: fusion gate tensor [2, T_p, N-1] (ego slot removed).
    attn_norm / ego_embed_norm: per-timestep L2 norms of the two operands
    of the final residual add.
    agent_labels: class of each non-ego slot ("lead", "other" or "padded").
    """

    weights: np.ndarray
    attn_norm: np.ndarray
    ego_embed_norm: np.ndarray
    agent_labels: tuple[str, ...]


class StgcnnPredictor:
    """Spatio-temporal graph CNN predicting the ego vehicle's future track."""

    def __init__(self, config: ModelConfig, rng_seed: int = 0):
        self.config = config
        self.params: dict[str, np.ndarray] = {}
        self._init_params(np.random.default_rng(rng_seed))

    # ------------------------------------------------------------------ setup

    def _init_params(self, rng):
        cfg = self.config
        h, f = cfg.hidden_channels, cfg.feature_channels
        kt = cfg.per_node_spatial_kernel
        kp = cfg.per_node_temporal_kernel
        p = self.params

        def he(shape):
            fan_in = shape[1] * shape[2] * shape[3]
            return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)

        def small(shape):
            return rng.standard_normal(shape) * 0.01

        p["pn_space1_w"] = he((h, f, kt, 1))
        p["pn_space1_b"] = np.zeros(h)
        p["pn_act"] = np.array(0.25)
        p["pn_space2_w"] = he((2, h, kt, 1))
        p["pn_space2_b"] = np.zeros(2)
        p["pn_time_w"] = small((cfg.t_pred, cfg.t_obs, kp, 1))
        p["pn_time_b"] = np.zeros(cfg.t_pred)
        if cfg.use_fusion:
            skt, skn = cfg.spatial_class_kernel
            fkp, fkn = cfg.fusion_kernel
            p["sc1_w"] = he((h, f, skt, skn))
            p["sc1_b"] = np.zeros(h)
            p["sc_act"] = np.array(0.25)
            p["sc2_w"] = he((2, h, skt, skn))
            p["sc2_b"] = np.zeros(2)
            p["fuse_w"] = small((cfg.t_pred, cfg.t_obs + cfg.t_pred, fkp, fkn))
            p["fuse_b"] = np.zeros(cfg.t_pred)
        p["noise_scale"] = np.full(2, cfg.noise_init)

    def clone_params_from(self, other: "StgcnnPredictor") -> None:
        """Copy every parameter present in both models (ablation comparisons)."""
        for name, value in other.params.items():
            if name in self.params:
                self.params[name] = value.copy()

    # ---------------------------------------------------------------- batched

    def _check_batch(self, features, masks):
        cfg = self.config
        if features.ndim != 4 or features.shape[1:] != (cfg.feature_channels, cfg.t_obs, cfg.n_max):
            raise ShapeError(f"features must be [B, {cfg.feature_channels}, {cfg.t_obs}, "
                             f"{cfg.n_max}], got {features.shape}")
        if masks.shape != (features.shape[0], cfg.n_max):
            raise ShapeError(f"masks must be [B, {cfg.n_max}], got {masks.shape}")

    def forward_batch(self, features, masks, noise=None, ego_index: int = 0,
                      lead_index: int = 1, need_cache: bool = False,
                      force_zero_fusion: bool = False):
        """Run the full pipeline on [B, 5, T_o, N] inputs.

        Returns (pred [B, 2, T_p], trace dict, cache). The trace dict holds
        'weights' [B, 2, T_p, N-1], 'attn_norm' and 'ego_embed_norm'
        [B, T_p]. cache is None unless need_cache.
        """
        cfg = self.config
        features = np.asarray(features, dtype=np.float64)
        masks = np.asarray(masks, dtype=bool)
        self._check_batch(features, masks)
        p = self.params
        b = features.shape[0]

        x = features
        if noise is not None:
            noise = np.asarray(noise, dtype=np.float64)
            if noise.shape != (b, 2, cfg.t_obs):
                raise ShapeError(f"noise must be [B, 2, {cfg.t_obs}], got {noise.shape}")
            x = features.copy()
            x[:, 0:2, :, lead_index] += p["noise_scale"][None, :, None] * noise

        z1 = kernels.conv2d_forward(x, p["pn_space1_w"], p["pn_space1_b"])
        a1 = _prelu(z1, p["pn_act"])
        y2 = kernels.conv2d_forward(a1, p["pn_space2_w"], p["pn_space2_b"])
        u = np.ascontiguousarray(y2.transpose(0, 2, 1, 3))          # [B, T_o, 2, N]
        v = kernels.conv2d_forward(u, p["pn_time_w"], p["pn_time_b"])  # [B, T_p, 2, N]
        emb_n = v.transpose(0, 2, 1, 3)                              # [B, 2, T_p, N]
        emb_ego = emb_n[:, :, :, ego_index]

        non_ego = [i for i in range(cfg.n_max) if i != ego_index]
        labels = tuple("lead" if i == lead_index else "other" for i in non_ego)

        if cfg.use_fusion:
            s1 = kernels.conv2d_forward(x, p["sc1_w"], p["sc1_b"])
            t1 = _prelu(s1, p["sc_act"])
            emb_sc = kernels.conv2d_forward(t1, p["sc2_w"], p["sc2_b"])  # [B, 2, T_o, N]
            cat = np.concatenate([emb_sc.transpose(0, 2, 1, 3), v], axis=1)
            cat = np.ascontiguousarray(cat)                          # [B, T_o+T_p, 2, N]
            fu = kernels.conv2d_forward(cat, p["fuse_w"], p["fuse_b"])
            logits = fu.transpose(0, 2, 1, 3)[:, :, :, non_ego]      # [B, 2, T_p, N-1]
            sig = _sigmoid(logits)
            maskf = masks[:, non_ego].astype(np.float64)[:, None, None, :]
            weights = np.zeros_like(sig) if force_zero_fusion else sig * maskf
            e_non = emb_n[:, :, :, non_ego]
            attn = np.einsum("bptn,bptn->bpt", weights, e_non)
            pred = emb_ego + attn
        else:
            s1 = t1 = emb_sc = cat = sig = maskf = e_non = None
            weights = np.zeros((b, 2, cfg.t_pred, cfg.n_max - 1))
            attn = np.zeros((b, 2, cfg.t_pred))
            pred = emb_ego.copy()

        trace = {
            "weights": weights,
            "attn_norm": np.sqrt((attn ** 2).sum(axis=1)),
            "ego_embed_norm": np.sqrt((emb_ego ** 2).sum(axis=1)),
            "agent_labels": labels,
        }
        cache = None
        if need_cache:
            cache = {"x": x, "z1": z1, "a1": a1, "u": u, "v": v, "emb_n": emb_n,
                     "s1": s1, "t1": t1, "cat": cat, "sig": sig, "maskf": maskf,
                     "weights": weights, "e_non": e_non, "noise": noise,
                     "non_ego": non_ego, "ego_index": ego_index,
                     "lead_index": lead_index,
                     "force_zero_fusion": force_zero_fusion}
        return pred, trace, cache

    @staticmethod
    def slice_cache(cache, indices) -> dict:
        """Restrict a forward cache to a subset of batch entries."""
        idx = np.asarray(indices, dtype=int)
        out = {}
        for key, val in cache.items():
            if isinstance(val, np.ndarray) and val.ndim >= 1 and key != "non_ego":
                out[key] = np.ascontiguousarray(val[idx])
            else:
                out[key] = val
        return out

    def backward_batch(self, cache, dpred):
        """Parameter gradients of sum(dpred * pred); dpred is [B, 2, T_p]."""
        cfg = self.config
        p = self.params
        non_ego = cache["non_ego"]
        ego_index = cache["ego_index"]
        x = cache["x"]
        grads = {}

        d_emb_n = np.zeros_like(cache["emb_n"])
        d_emb_n[:, :, :, ego_index] += dpred
        if cfg.use_fusion:
            weights, e_non, sig, maskf = (cache["weights"], cache["e_non"],
                                          cache["sig"], cache["maskf"])
            d_weights = dpred[:, :, :, None] * e_non
            d_e_non = dpred[:, :, :, None] * weights
            d_emb_n[:, :, :, non_ego] += d_e_non
            if cache["force_zero_fusion"]:
                d_logits_non = np.zeros_like(sig)
            else:
                d_logits_non = d_weights * maskf * sig * (1.0 - sig)
            d_logits = np.zeros_like(cache["emb_n"])
            d_logits[:, :, :, non_ego] = d_logits_non
            dfu = np.ascontiguousarray(d_logits.transpose(0, 2, 1, 3))
            dcat, grads["fuse_w"], grads["fuse_b"] = kernels.conv2d_backward(
                cache["cat"], p["fuse_w"], dfu)
            d_emb_sc = np.ascontiguousarray(dcat[:, : cfg.t_obs].transpose(0, 2, 1, 3))
            dv = np.ascontiguousarray(dcat[:, cfg.t_obs:])
            dt1, grads["sc2_w"], grads["sc2_b"] = kernels.conv2d_backward(
                cache["t1"], p["sc2_w"], d_emb_sc)
            s1 = cache["s1"]
            ds1 = dt1 * _prelu_dx(s1, p["sc_act"])
            grads["sc_act"] = np.array(np.sum(dt1 * np.where(s1 > 0, 0.0, s1)))
            dx_sc, grads["sc1_w"], grads["sc1_b"] = kernels.conv2d_backward(
                x, p["sc1_w"], ds1)
        else:
            dv = np.zeros_like(cache["v"])
            dx_sc = 0.0

        dv += d_emb_n.transpose(0, 2, 1, 3)
        du, grads["pn_time_w"], grads["pn_time_b"] = kernels.conv2d_backward(
            cache["u"], p["pn_time_w"], np.ascontiguousarray(dv))
        dy2 = np.ascontiguousarray(du.transpose(0, 2, 1, 3))
        da1, grads["pn_space2_w"], grads["pn_space2_b"] = kernels.conv2d_backward(
            cache["a1"], p["pn_space2_w"], dy2)
        z1 = cache["z1"]
        dz1 = da1 * _prelu_dx(z1, p["pn_act"])
        grads["pn_act"] = np.array(np.sum(da1 * np.where(z1 > 0, 0.0, z1)))
        dx_pn, grads["pn_space1_w"], grads["pn_space1_b"] = kernels.conv2d_backward(
            x, p["pn_space1_w"], dz1)

        noise = cache["noise"]
        if noise is not None:
            dx = dx_pn + dx_sc
            grads["noise_scale"] = np.einsum(
                "bpt,bpt->p", dx[:, 0:2, :, cache["lead_index"]], noise)
        else:
            grads["noise_scale"] = np.zeros(2)
        return grads

    def sample_batch(self, features, masks, m: int, rng) -> np.ndarray:
        """Draw m noise-conditioned predictions per window: [B, m, 2, T_p]."""
        b = features.shape[0]
        cfg = self.config
        noise = rng.standard_normal((b, m, 2, cfg.t_obs))
        rep_f = np.repeat(features, m, axis=0)
        rep_m = np.repeat(masks, m, axis=0)
        pred, _, _ = self.forward_batch(rep_f, rep_m, noise.reshape(b * m, 2, cfg.t_obs))
        return pred.reshape(b, m, 2, cfg.t_pred)

    # ----------------------------------------------------------- window-level

    def _window_batch(self, window: ObservationWindow):
        if window.t_obs != self.config.t_obs or window.n_agents != self.config.n_max:
            raise ShapeError(f"window [{window.t_obs} x {window.n_agents}] does not match "
                             f"config [{self.config.t_obs} x {self.config.n_max}]")
        return window.features[None], window.mask[None]

    def per_node_process(self, window: ObservationWindow) -> np.ndarray:
        """Per-agent embedding stack [2, T_p, N] (identical weights per agent)."""
        f, m = self._window_batch(window)
        p = self.params
        z1 = kernels.conv2d_forward(f, p["pn_space1_w"], p["pn_space1_b"])
        y2 = kernels.conv2d_forward(_prelu(z1, p["pn_act"]), p["pn_space2_w"], p["pn_space2_b"])
        u = np.ascontiguousarray(y2.transpose(0, 2, 1, 3))
        v = kernels.conv2d_forward(u, p["pn_time_w"], p["pn_time_b"])
        return v.transpose(0, 2, 1, 3)[0]

    def spatial_class_process(self, window: ObservationWindow) -> np.ndarray:
        """Joint trajectory-and-class embedding [2, T_o, N]."""
        if not self.config.use_fusion:
            raise ShapeError("model built with use_fusion=False has no spatial-class stage")
        f, m = self._window_batch(window)
        p = self.params
        s1 = kernels.conv2d_forward(f, p["sc1_w"], p["sc1_b"])
        return kernels.conv2d_forward(_prelu(s1, p["sc_act"]), p["sc2_w"], p["sc2_b"])[0]

    @staticmethod
    def fuse_concat(sc: np.ndarray, nodes: np.ndarray) -> np.ndarray:
        """Concatenate embeddings over time, time-first: [T_o + T_p, 2, N]."""
        if sc.ndim != 3 or nodes.ndim != 3 or sc.shape[0] != 2 or nodes.shape[0] != 2 \
                or sc.shape[2] != nodes.shape[2]:
            raise ShapeError(f"expected [2, T_o, N] and [2, T_p, N], got {sc.shape}, {nodes.shape}")
        return np.concatenate([sc, nodes], axis=1).transpose(1, 0, 2)

    def fusion_weighting(self, cat: np.ndarray, ego_index: int, mask=None) -> np.ndarray:
        """Sigmoid gate weights [2, T_p, N-1]; masked-off agents forced to 0."""
        cfg = self.config
        if cat.ndim != 3 or cat.shape[0] != cfg.t_obs + cfg.t_pred or cat.shape[1] != 2:
            raise ShapeError(f"expected [{cfg.t_obs + cfg.t_pred}, 2, N], got {cat.shape}")
        n = cat.shape[2]
        if not 0 <= ego_index < n:
            raise ShapeError(f"ego_index {ego_index} out of range for {n} agents")
        p = self.params
        fu = kernels.conv2d_forward(np.ascontiguousarray(cat[None]), p["fuse_w"], p["fuse_b"])
        non_ego = [i for i in range(n) if i != ego_index]
        sig = _sigmoid(fu.transpose(0, 2, 1, 3)[0][:, :, non_ego])
        if mask is not None:
            sig = sig * np.asarray(mask, dtype=np.float64)[non_ego][None, None, :]
        return sig

    @staticmethod
    def attention(weights: np.ndarray, nodes: np.ndarray, ego_index: int) -> np.ndarray:
        """Weighted sum of non-ego embeddings: [2, T_p]."""
        if weights.ndim != 3 or nodes.ndim != 3 or weights.shape[2] != nodes.shape[2] - 1 \
                or weights.shape[:2] != nodes.shape[:2]:
            raise ShapeError(f"weights {weights.shape} inconsistent with nodes {nodes.shape}")
        non_ego = [i for i in range(nodes.shape[2]) if i != ego_index]
        return np.einsum("ptn,ptn->pt", weights, nodes[:, :, non_ego])

    def predict(self, window: ObservationWindow, noise=None,
                force_zero_fusion: bool = False) -> tuple[np.ndarray, FusionTrace]:
        """Predict the ego future [2, T_p] from one window.

        noise, when given, is a [2, T_o] array added (scaled by the learned
        noise weights) to the lead vehicle's position channels before any
        processing. force_zero_fusion clamps the fusion gate to 0, which
        reduces the output to the bare ego embedding.
        """
        f, m = self._window_batch(window)
        n = None if noise is None else np.asarray(noise, dtype=np.float64)[None]
        pred, trace, _ = self.forward_batch(
            f, m, n, ego_index=window.ego_index, lead_index=window.lead_index,
            force_zero_fusion=force_zero_fusion)
        non_ego = [i for i in range(window.n_agents) if i != window.ego_index]
        labels = tuple(
            "padded" if not window.mask[i] else ("lead" if i == window.lead_index else "other")
            for i in non_ego)
        return pred[0], FusionTrace(weights=trace["weights"][0],
                                    attn_norm=trace["attn_norm"][0],
                                    ego_embed_norm=trace["ego_embed_norm"][0],
                                    agent_labels=labels)

    def sample(self, window: ObservationWindow, m: int = 20, rng_seed=0):
        """Draw m noise-conditioned trajectory samples (deterministic in seed)."""
        from ..metrics import PredictionSet

        if m < 1:
            raise ShapeError(f"need at least one sample, got m={m}")
        rng = np.random.default_rng(rng_seed)
        f, msk = self._window_batch(window)
        samples = self.sample_batch(f, msk, m, rng)[0]
        return PredictionSet(samples=samples, window=window)
