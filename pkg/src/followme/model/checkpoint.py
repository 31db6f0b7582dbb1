"""Checkpoint persistence.

Format: a numpy .npz archive with
  __format_version__ : int array, currently 1
  __config__         : JSON-encoded ModelConfig (sorted keys)
  <param name>       : one float64 array per parameter
Any implementation that can read .npz (a zip of .npy files) can reload it.
"""

from __future__ import annotations

import numpy as np

from ..exceptions import ConfigError
from .config import ModelConfig
from .network import StgcnnPredictor

FORMAT_VERSION = 1


def save_checkpoint(model: StgcnnPredictor, path) -> None:
    payload = {"__format_version__": np.array(FORMAT_VERSION),
               "__config__": np.array(model.config.to_json())}
    payload.update(model.params)
    np.savez(path, **payload)


def load_checkpoint(path) -> StgcnnPredictor:
    with np.load(path, allow_pickle=False) as z:
        version = int(z["__format_version__"])
        if version != FORMAT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {version}")
        config = ModelConfig.from_json(str(z["__config__"]))
        model = StgcnnPredictor(config)
        for name in model.params:
            if name not in z:
                raise ConfigError(f"checkpoint missing parameter {name!r}")
            model.params[name] = z[name].copy()
    return model
