"""Joint encoder/decoder optimisation on coordinate-sampled L1 loss."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .errors import NumericalError, ShapeError
from .field import CoordinateBatch, sample_coordinates, trilinear_interpolate
from .networks import ModelConfig, SRModel, init_model
from .simulation import PatchPair
from .volume_io import _atomic_write

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "best.ckpt"
HISTORY_NAME = "history.json"


@dataclass
class TrainConfig:
    n_pairs_per_step: int = 15
    k_coords: int = 8000
    lr_init: float = 1e-4
    decay_factor: float = 0.5
    decay_every_epochs: int = 200
    total_epochs: int = 2500
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        for name in ("n_pairs_per_step", "k_coords", "decay_every_epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.total_epochs < 0 or self.lr_init < 0:
            raise ValueError("total_epochs and lr_init must be non-negative")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must lie in (0, 1]")


def l1_loss(pred, target) -> torch.Tensor:
    """Mean absolute error over every sampled voxel of every pair."""
    pred, target = torch.as_tensor(pred), torch.as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {tuple(pred.shape)} vs target {tuple(target.shape)}")
    if pred.numel() == 0:
        raise ShapeError("l1_loss needs at least one element")
    return (target.to(pred.dtype) - pred).abs().mean()


def lr_for_epoch(config: TrainConfig, epoch_index: int) -> float:
    """Step decay; ``epoch_index`` counts from 0."""
    return config.lr_init * config.decay_factor ** (epoch_index // config.decay_every_epochs)


def make_optimizer(model: SRModel, config: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=config.lr_init,
                            betas=(config.beta1, config.beta2), eps=config.eps)


def batch_loss(model: SRModel, pairs: list[PatchPair], samples: list[CoordinateBatch]) -> torch.Tensor:
    """Encode each LR patch, interpolate features at the sampled HR coordinates, decode, L1."""
    dtype = model.dtype
    shapes = {p.lr.shape for p in pairs}
    if len(shapes) == 1:
        lr = torch.from_numpy(np.stack([p.lr.data for p in pairs])).to(dtype)
        grids = list(model.encode(lr))
    else:
        grids = [model.encode(torch.from_numpy(p.lr.data).to(dtype).unsqueeze(0))[0] for p in pairs]
    feats = torch.cat([trilinear_interpolate(g, s) for g, s in zip(grids, samples)])
    coords = torch.cat([s.coords for s in samples])
    targets = torch.cat([s.targets for s in samples]).to(dtype)
    return l1_loss(model.decode(coords, feats), targets)


def draw_samples(pairs: list[PatchPair], k: int, rng: np.random.Generator) -> list[CoordinateBatch]:
    return [sample_coordinates(p.hr, k, rng) for p in pairs]


def train_step(model: SRModel, batch: list[PatchPair], optimizer: torch.optim.Optimizer,
               config: TrainConfig, rng: np.random.Generator) -> float:
    """One Adam update on a batch of pairs; mutates ``model`` and ``optimizer`` in place."""
    if len(batch) != config.n_pairs_per_step:
        raise ShapeError(f"step expects {config.n_pairs_per_step} pairs, got {len(batch)}")
    for p in batch:
        if p.hr.data.size < config.k_coords:
            raise ShapeError(f"HR patch {p.hr.shape} has fewer than {config.k_coords} voxels")
    model.train()
    loss = batch_loss(model, batch, draw_samples(batch, config.k_coords, rng))
    if not torch.isfinite(loss):
        raise NumericalError(f"non-finite training loss {loss.item()}")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    return float(loss.item())


@dataclass
class TrainResult:
    checkpoint: Path
    history: list[dict]
    best_val_l1: float | None
    model: SRModel


def _write_history(path: Path, history: list[dict]) -> None:
    _atomic_write(path, json.dumps(history, indent=2).encode())


def train(config: TrainConfig, train_pairs: list[PatchPair], val_pairs: list[PatchPair], out_dir,
          model_config: ModelConfig | None = None, model: SRModel | None = None) -> TrainResult:
    """Run ``config.total_epochs`` epochs, keeping the checkpoint with the lowest validation L1.

    An epoch is one shuffled pass over ``train_pairs`` in steps of
    ``n_pairs_per_step``; a trailing partial step is dropped. Validation
    coordinates are drawn once so the curve is comparable across epochs.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / CHECKPOINT_NAME
    hist_path = out_dir / HISTORY_NAME

    if model is None:
        model = init_model(model_config or ModelConfig(), config.seed)
    if config.total_epochs > 0 and len(train_pairs) < config.n_pairs_per_step:
        raise ShapeError(f"{len(train_pairs)} training pairs cannot fill a step of {config.n_pairs_per_step}")
    if not val_pairs:
        val_pairs = train_pairs

    rng = np.random.default_rng(config.seed)
    val_rng = np.random.default_rng([config.seed, 1])
    val_samples = [sample_coordinates(p.hr, min(config.k_coords, p.hr.data.size), val_rng) for p in val_pairs]
    optimizer = make_optimizer(model, config)

    history: list[dict] = []
    best = math.inf
    if config.total_epochs == 0:
        save_checkpoint(model, ckpt_path, extra={"epoch": 0})
        _write_history(hist_path, history)
        return TrainResult(ckpt_path, history, None, model)

    n_steps = len(train_pairs) // config.n_pairs_per_step
    try:
        for epoch in range(config.total_epochs):
            lr = lr_for_epoch(config, epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr
            order = rng.permutation(len(train_pairs))
            losses = []
            for s in range(n_steps):
                idx = order[s * config.n_pairs_per_step:(s + 1) * config.n_pairs_per_step]
                losses.append(train_step(model, [train_pairs[i] for i in idx], optimizer, config, rng))
            val = evaluate_loss(model, val_pairs, val_samples)
            if not math.isfinite(val):
                raise NumericalError(f"non-finite validation loss at epoch {epoch + 1}")
            record = {"epoch": epoch + 1, "train_l1": float(np.mean(losses)), "val_l1": val, "lr": lr}
            history.append(record)
            log.info("epoch %d train_l1 %.6f val_l1 %.6f lr %.3g", epoch + 1, record["train_l1"], val, lr)
            if val < best:
                best = val
                save_checkpoint(model, ckpt_path, extra={"epoch": epoch + 1, "val_l1": val})
            _write_history(hist_path, history)
    except NumericalError:
        _write_history(hist_path, history)
        raise
    return TrainResult(ckpt_path, history, best, model)


def evaluate_loss(model: SRModel, pairs: list[PatchPair], samples: list[CoordinateBatch]) -> float:
    model.eval()
    with torch.no_grad():
        return float(batch_loss(model, pairs, samples).item())


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
