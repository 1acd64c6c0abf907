"""MSE training loop with AdamW, per-epoch logging and versioned checkpoints."""

from __future__ import annotations

import copy
import hashlib
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
from torch import nn

from ecgrecon import PIPELINE_VERSION
from ecgrecon.dataio import SegmentWindow, select_leads
from ecgrecon.errors import (
    CheckpointCorruptError,
    CheckpointIncompatibleError,
    ConfigError,
    ShapeError,
    TrainingDivergedError,
)
from ecgrecon.model import Standardized, UNetConfig, build_model

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1


@dataclass
class TrainConfig:
    epochs: int = 100
    optimizer: str = "adamw"
    learning_rate: float = 3e-4
    batch_size: int = 32
    weight_decay: float = 1e-2
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_dir: str | None = None
    standardize: bool = False

    def __post_init__(self):
        if self.optimizer.lower() != "adamw":
            raise ConfigError(f"only AdamW is supported, got {self.optimizer!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        self.betas = tuple(self.betas)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown training option(s): {', '.join(unknown)}")
        return cls(**d)


@dataclass
class Checkpoint:
    model_state: dict
    optimizer_state: dict
    epoch: int
    history: list[dict]
    model_config: dict
    train_config: dict
    experiment_id: str = ""
    pipeline_version: str = PIPELINE_VERSION
    extra: dict = field(default_factory=dict)

    @property
    def standardized(self) -> bool:
        return bool(self.train_config.get("standardize", False))

    def build(self) -> nn.Module:
        """Rebuild the model and load the stored weights (inference mode)."""
        model = build_model(UNetConfig(**self.model_config), standardize=self.standardized)
        model.load_state_dict(self.model_state)
        model.eval()
        return model


@dataclass
class TrainResult:
    final: Checkpoint
    best: Checkpoint
    history: list[dict]


def mse_loss(pred, target) -> torch.Tensor:
    """Mean of squared differences over every element (mV^2)."""
    pred = torch.as_tensor(pred)
    target = torch.as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return torch.mean((pred - target.to(pred.dtype)) ** 2)


def _as_window_array(windows) -> np.ndarray:
    if isinstance(windows, np.ndarray):
        return windows
    windows = list(windows)
    if windows and isinstance(windows[0], SegmentWindow):
        return np.stack([w.signals for w in windows])
    return np.asarray(windows)


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def _model_dtype(model: nn.Module) -> torch.dtype:
    return next(model.parameters()).dtype


@torch.no_grad()
def evaluate_loss(model: nn.Module, x: np.ndarray, y: np.ndarray, batch_size: int = 64) -> float:
    """Inference-mode MSE over a whole set, element-weighted."""
    if x.shape[0] == 0:
        return float("nan")
    was_training = model.training
    model.eval()
    dtype = _model_dtype(model)
    total = 0.0
    for start in range(0, x.shape[0], batch_size):
        xb = torch.as_tensor(np.ascontiguousarray(x[start:start + batch_size]), dtype=dtype)
        yb = torch.as_tensor(np.ascontiguousarray(y[start:start + batch_size]), dtype=dtype)
        total += float(torch.sum((model(xb) - yb) ** 2, dtype=torch.float64))
    model.train(was_training)
    return total / y.size


def _snapshot(model, optimizer, epoch, history, spec, config) -> Checkpoint:
    return Checkpoint(
        model_state=copy.deepcopy(model.state_dict()),
        optimizer_state=copy.deepcopy(optimizer.state_dict()),
        epoch=epoch,
        history=[dict(h) for h in history],
        model_config=model.config.to_dict(),
        train_config=config.to_dict(),
        experiment_id=spec.experiment_id,
    )


def train(
    model: nn.Module,
    train_windows,
    val_windows,
    spec,
    config: TrainConfig,
    log_path=None,
) -> TrainResult:
    """Fit ``model`` to map ``spec.input_leads`` onto ``spec.output_leads``.

    Windows are (n, 12, L) arrays in mV (or SegmentWindow lists). Runs exactly
    ``config.epochs`` epochs; each epoch shuffles with a seed derived from
    (config.seed, epoch) and keeps the last partial batch. Per-epoch metrics
    are appended to ``log_path`` as JSON lines when given.
    """
    spec.validate()
    train_arr = _as_window_array(train_windows)
    val_arr = _as_window_array(val_windows)
    if train_arr.shape[0] == 0:
        raise ValueError("training set is empty")
    cfg = model.config
    if cfg.ch_in != len(spec.input_leads) or cfg.ch_out != len(spec.output_leads):
        raise ShapeError(
            f"model is {cfg.ch_in}->{cfg.ch_out} but {spec.experiment_id} needs "
            f"{len(spec.input_leads)}->{len(spec.output_leads)}"
        )
    if config.standardize != isinstance(model, Standardized):
        raise ConfigError("standardize flag does not match the model wrapper")

    x_tr = select_leads(train_arr, spec.input_leads)
    y_tr = select_leads(train_arr, spec.output_leads)
    x_va = select_leads(val_arr, spec.input_leads) if val_arr.shape[0] else val_arr[:, :0]
    y_va = select_leads(val_arr, spec.output_leads) if val_arr.shape[0] else val_arr[:, :0]
    if isinstance(model, Standardized):
        model.set_stats(np.asarray(x_tr), np.asarray(y_tr))

    torch.manual_seed(config.seed)
    dtype = _model_dtype(model)
    optimizer = torch.optim.AdamW(
        model.parameters(),
        lr=config.learning_rate,
        betas=config.betas,
        eps=config.adam_eps,
        weight_decay=config.weight_decay,
    )
    n = x_tr.shape[0]
    history: list[dict] = []
    best: Checkpoint | None = None
    best_val = math.inf
    log_file = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_file = open(log_path, "a")
    try:
        for epoch in range(1, config.epochs + 1):
            t0 = time.perf_counter()
            model.train()
            order = epoch_permutation(n, config.seed, epoch)
            sq_sum = 0.0
            for b, start in enumerate(range(0, n, config.batch_size)):
                idx = order[start:start + config.batch_size]
                xb = torch.as_tensor(np.asarray(x_tr[idx]), dtype=dtype)
                yb = torch.as_tensor(np.asarray(y_tr[idx]), dtype=dtype)
                loss = mse_loss(model(xb), yb)
                if not torch.isfinite(loss):
                    raise TrainingDivergedError(epoch, b, loss.item())
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
                sq_sum += loss.item() * yb.numel()
            train_mse = sq_sum / (n * y_tr.shape[1] * y_tr.shape[2])
            val_mse = evaluate_loss(model, x_va, y_va) if x_va.shape[0] else float("nan")
            row = {
                "epoch": epoch,
                "train_mse": train_mse,
                "val_mse": val_mse,
                "wall_time": round(time.perf_counter() - t0, 4),
            }
            history.append(row)
            log.info("%s epoch %d train %.6g val %.6g", spec.experiment_id, epoch, train_mse, val_mse)
            if log_file is not None:
                log_file.write(json.dumps(row) + "\n")
                log_file.flush()
            if best is None or val_mse < best_val:
                best_val = val_mse
                best = _snapshot(model, optimizer, epoch, history, spec, config)
    finally:
        if log_file is not None:
            log_file.close()

    final = _snapshot(model, optimizer, config.epochs, history, spec, config)
    return TrainResult(final=final, best=best, history=history)


# ---------------------------------------------------------------------------
# checkpoint persistence
# ---------------------------------------------------------------------------

def _sidecar(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".json")


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    """Write ``path`` (torch payload) and ``path.json`` (readable manifest)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "pipeline_version": ckpt.pipeline_version,
        "model_state": ckpt.model_state,
        "optimizer_state": ckpt.optimizer_state,
        "epoch": ckpt.epoch,
        "history": ckpt.history,
        "model_config": ckpt.model_config,
        "train_config": ckpt.train_config,
        "experiment_id": ckpt.experiment_id,
        "extra": ckpt.extra,
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    blob = buf.getvalue()
    path.write_bytes(blob)
    sidecar = {
        "format": CHECKPOINT_FORMAT,
        "pipeline_version": ckpt.pipeline_version,
        "sha256": hashlib.sha256(blob).hexdigest(),
        "size_bytes": len(blob),
        "experiment_id": ckpt.experiment_id,
        "epoch": ckpt.epoch,
        "model_config": ckpt.model_config,
        "train_config": ckpt.train_config,
        "final_val_mse": ckpt.history[-1]["val_mse"] if ckpt.history else None,
    }
    _sidecar(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    side_path = _sidecar(path)
    if not path.is_file() or not side_path.is_file():
        raise CheckpointCorruptError(f"checkpoint {path} or its sidecar is missing")
    try:
        side = json.loads(side_path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointCorruptError(f"unreadable sidecar {side_path}: {exc}") from exc
    if side.get("pipeline_version") != PIPELINE_VERSION or side.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointIncompatibleError(
            f"{path} was written by pipeline {side.get('pipeline_version')!r} "
            f"(format {side.get('format')!r}); this is {PIPELINE_VERSION!r} "
            f"(format {CHECKPOINT_FORMAT})"
        )
    blob = path.read_bytes()
    if len(blob) != side.get("size_bytes") or hashlib.sha256(blob).hexdigest() != side.get("sha256"):
        raise CheckpointCorruptError(f"{path} does not match its recorded size/hash")
    try:
        payload = torch.load(io.BytesIO(blob), map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointCorruptError(f"cannot decode {path}: {exc}") from exc
    if payload.get("pipeline_version") != PIPELINE_VERSION:
        raise CheckpointIncompatibleError(f"{path}: payload version mismatch")
    return Checkpoint(
        model_state=payload["model_state"],
        optimizer_state=payload["optimizer_state"],
        epoch=payload["epoch"],
        history=payload["history"],
        model_config=payload["model_config"],
        train_config=payload["train_config"],
        experiment_id=payload["experiment_id"],
        pipeline_version=payload["pipeline_version"],
        extra=payload.get("extra", {}),
    )
