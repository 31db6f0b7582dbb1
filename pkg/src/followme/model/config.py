"""Model hyperparameters."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from ..exceptions import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    """Network structure knobs.

    Kernel extents must be odd so same-padding preserves lengths. The
    embedding width is pinned to 2 (the spatial dimensionality): every stage
    emits (x, y)-like channel pairs so the final residual add lands in
    position space.
    """

    t_obs: int = 10
    t_pred: int = 30
    n_max: int = 8
    feature_channels: int = 5
    embed_channels: int = 2
    per_node_spatial_kernel: int = 3
    per_node_temporal_kernel: int = 3
    spatial_class_kernel: tuple[int, int] = (3, 1)
    fusion_kernel: tuple[int, int] = (3, 3)
    hidden_channels: int = 32
    activation: str = "prelu"
    noise_channels: int = 2
    noise_init: float = 0.05
    use_fusion: bool = True
    use_triplet: bool = True

    def __post_init__(self):
        kernels = [self.per_node_spatial_kernel, self.per_node_temporal_kernel,
                   *self.spatial_class_kernel, *self.fusion_kernel]
        if any(k < 1 or k % 2 == 0 for k in kernels):
            raise ConfigError(f"all kernel extents must be odd and positive, got {kernels}")
        if self.embed_channels != 2:
            raise ConfigError("embed_channels is pinned to 2 (spatial dimensionality)")
        if self.noise_channels != 2:
            raise ConfigError("noise_channels is pinned to 2 (lead position channels)")
        if self.t_obs < 1 or self.t_pred < 1 or self.n_max < 2 or self.hidden_channels < 1:
            raise ConfigError("t_obs, t_pred, hidden_channels must be >= 1 and n_max >= 2")
        if self.activation != "prelu":
            raise ConfigError(f"unsupported activation {self.activation!r}")

    def to_json(self) -> str:
        d = asdict(self)
        d["spatial_class_kernel"] = list(self.spatial_class_kernel)
        d["fusion_kernel"] = list(self.fusion_kernel)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        d = json.loads(text)
        d["spatial_class_kernel"] = tuple(d["spatial_class_kernel"])
        d["fusion_kernel"] = tuple(d["fusion_kernel"])
        return cls(**d)
