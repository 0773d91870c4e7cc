"""Model checkpoints stored in the tensor container."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dogpain.container import FORMAT_VERSION, MAGIC, load_tensors, save_tensors
from dogpain.errors import (
    CheckpointError,
    CheckpointFormatError,
    CheckpointShapeError,
    ConfigurationError,
)
from dogpain.model import TwoStreamConfig, TwoStreamParams, parameter_shapes
from dogpain.numerics import BatchNormState, Tensor

__all__ = ["FORMAT_VERSION", "MAGIC", "Checkpoint", "load_checkpoint", "load_tensors", "save_checkpoint", "save_tensors"]


@dataclass
class Checkpoint:
    """Model parameters plus everything needed to resume or audit a run."""

    params: TwoStreamParams
    train_config: dict = field(default_factory=dict)
    optimizer: str = "adam"
    optimizer_state: dict[str, np.ndarray] = field(default_factory=dict)
    optimizer_steps: int = 0
    epoch: int = 0
    rng: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    tensors: dict[str, np.ndarray] = {f"param/{k}": t.data for k, t in ckpt.params.tensors.items()}
    for k, s in ckpt.params.bn.items():
        tensors[f"bn/{k}/running_mean"] = s.running_mean
        tensors[f"bn/{k}/running_var"] = s.running_var
    tensors.update({f"optim/{k}": v for k, v in ckpt.optimizer_state.items()})
    meta = {
        "model_config": ckpt.params.config.to_dict(),
        "init_seed": ckpt.params.seed,
        "train_config": ckpt.train_config,
        "optimizer": ckpt.optimizer,
        "optimizer_steps": ckpt.optimizer_steps,
        "epoch": ckpt.epoch,
        "rng": ckpt.rng,
        "meta": ckpt.meta,
    }
    save_tensors(path, tensors, kind="checkpoint", meta=meta)


def load_checkpoint(path, expect_config: TwoStreamConfig | None = None) -> Checkpoint:
    """Load and validate a checkpoint.

    Args:
        expect_config: when given, every parameter shape is checked against
            this configuration instead of the one stored in the file.
    """
    tensors, meta = load_tensors(path, kind="checkpoint")
    try:
        cfg = expect_config or TwoStreamConfig.from_dict(meta["model_config"])
    except (KeyError, TypeError, ConfigurationError) as exc:
        raise CheckpointFormatError(f"{path}: bad model configuration ({exc})") from exc
    params: dict[str, Tensor] = {}
    for name, (shape, _) in parameter_shapes(cfg).items():
        arr = tensors.get(f"param/{name}")
        if arr is None:
            raise CheckpointShapeError(f"{path}: tensor {name!r} is missing")
        if arr.shape != shape:
            raise CheckpointShapeError(f"{path}: tensor {name!r} has shape {arr.shape}, config needs {shape}")
        params[name] = Tensor(arr, requires_grad=True)
    bn = {}
    for i, c in enumerate(cfg.channels):
        key = f"rgb.bn{i}"
        mean, var = tensors.get(f"bn/{key}/running_mean"), tensors.get(f"bn/{key}/running_var")
        if mean is None or var is None or mean.shape != (c,) or var.shape != (c,):
            raise CheckpointShapeError(f"{path}: batch-norm statistics {key!r} missing or not of shape ({c},)")
        bn[key] = BatchNormState(c, mean, var)
    extra = set(k for k in tensors if k.startswith("param/")) - {f"param/{k}" for k in params}
    if extra:
        raise CheckpointShapeError(f"{path}: tensors {sorted(extra)} do not belong to the configuration")
    try:
        return Checkpoint(
            params=TwoStreamParams(cfg, params, bn, int(meta.get("init_seed", 0))),
            train_config=dict(meta.get("train_config", {})),
            optimizer=str(meta.get("optimizer", "adam")),
            optimizer_state={k[len("optim/") :]: v for k, v in tensors.items() if k.startswith("optim/")},
            optimizer_steps=int(meta.get("optimizer_steps", 0)),
            epoch=int(meta.get("epoch", 0)),
            rng=dict(meta.get("rng", {})),
            meta=dict(meta.get("meta", {})),
        )
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad checkpoint metadata ({exc})") from exc
