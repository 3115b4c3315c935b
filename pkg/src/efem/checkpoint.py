"""Versioned checkpoint container for RecurrentForecaster.

Layout (numpy ``.npz``, no pickling):

``meta``
    0-d unicode array holding JSON with keys ``format`` ("efem-checkpoint"),
    ``version`` (1), ``config`` (NetworkConfig fields), ``step`` (Adam step
    counter), ``names`` (parameter order), ``rng_state`` (bit generator state
    or null) and ``extra`` (free-form JSON, e.g. normalization or score info).
``value/<name>``, ``m/<name>``, ``v/<name>``
    float64 row-major arrays for each parameter and its Adam moments.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .network import NetworkConfig, RecurrentForecaster

FORMAT = "efem-checkpoint"
VERSION = 1


def save_checkpoint(path, model: RecurrentForecaster, rng: np.random.Generator | None = None,
                    extra: dict | None = None) -> Path:
    path = Path(path)
    names = list(model.params)
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "config": model.config.to_dict(),
        "step": model.params.t,
        "names": names,
        "rng_state": None if rng is None else rng.bit_generator.state,
        "extra": extra or {},
    }
    arrays = {"meta": np.array(json.dumps(meta, sort_keys=True))}
    for name, p in model.params.items():
        arrays[f"value/{name}"] = np.ascontiguousarray(p.value, dtype=np.float64)
        arrays[f"m/{name}"] = np.ascontiguousarray(p.m, dtype=np.float64)
        arrays[f"v/{name}"] = np.ascontiguousarray(p.v, dtype=np.float64)
    with path.open("wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path):
    """Returns ``(model, rng or None, extra)``."""
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != FORMAT:
            raise ConfigurationError(f"{path} is not an efem checkpoint")
        if meta.get("version") != VERSION:
            raise ConfigurationError(f"unsupported checkpoint version {meta.get('version')}")
        model = RecurrentForecaster(NetworkConfig(**meta["config"]))
        if list(model.params) != meta["names"]:
            raise ConfigurationError("checkpoint parameter names do not match the config")
        for name, p in model.params.items():
            p.value[...] = data[f"value/{name}"]
            p.m[...] = data[f"m/{name}"]
            p.v[...] = data[f"v/{name}"]
        model.params.t = int(meta["step"])
    rng = None
    if meta["rng_state"] is not None:
        rng = np.random.default_rng()
        rng.bit_generator.state = meta["rng_state"]
    return model, rng, meta["extra"]
