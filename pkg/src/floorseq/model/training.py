"""Teacher-forced minibatch training loop with Adam and augmentation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..dataset import DatasetRecord, Quantizer, STOP, ablate_opcodes, augment, encode
from ..nncore import AdamState, ParamStore, adam_step, backward, save_checkpoint
from ..raster import GridSpec, rasterize
from ..seeds import substream
from .config import ModelConfig
from .decoder import DropoutPlan, LOG2E, forward_batch, init_params, masked_loss
from .mlp import init_mlp_params, mlp_forward_batch


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


@dataclass
class TrainSettings:
    steps: int = 1000
    batch_size: int = 8
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    augment: bool = True
    log_every: int = 50
    checkpoint_every: int = 0  # 0 = final checkpoint only
    stop_below_bits: float | None = None


def model_stream(tokens: Sequence[int], cfg: ModelConfig) -> list[int]:
    """The token stream the model actually sees (opcodes dropped if ablated)."""
    return ablate_opcodes(tokens) if not cfg.use_opcode_tokens else list(tokens)


def conditioning_image(record_segments, cfg: ModelConfig) -> np.ndarray:
    spec = GridSpec(cfg.image_size, cfg.image_size, cfg.raster_extent)
    n = cfg.n_raster if cfg.n_raster > 0 else None
    return rasterize(list(record_segments), spec, n).cells.astype(np.float64)


def make_batch(
    records: Sequence[DatasetRecord],
    indices: np.ndarray,
    cfg: ModelConfig,
    q: Quantizer,
    aug_rng: np.random.Generator | None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """(padded token rows, validity mask, images) for one training step."""
    streams = []
    images = [] if cfg.context != "none" else None
    for i in indices:
        segs = list(records[i].local_segments)
        if aug_rng is not None:
            segs = augment(segs, int(aug_rng.integers(8)))
            tokens = encode(segs, q)
        else:
            tokens = list(records[i].tokens)
        streams.append(model_stream(tokens, cfg))
        if images is not None:
            images.append(conditioning_image(segs, cfg))
    width = max(len(s) for s in streams)
    padded = np.full((len(streams), width), STOP, dtype=int)
    mask = np.zeros((len(streams), width))
    for r, s in enumerate(streams):
        padded[r, : len(s)] = s
        mask[r, : len(s)] = 1.0
    return padded, mask, np.stack(images) if images is not None else None


def init_model_params(cfg: ModelConfig, seed: int) -> ParamStore:
    return init_mlp_params(cfg, seed) if cfg.arch == "mlp" else init_params(cfg, seed)


def train(
    records: Sequence[DatasetRecord],
    cfg: ModelConfig,
    settings: TrainSettings,
    q: Quantizer,
    out_dir: str | Path | None = None,
    params: ParamStore | None = None,
) -> tuple[ParamStore, list[dict]]:
    """Minimize teacher-forced NLL; returns the trained store and metric rows.

    With out_dir set, writes checkpoint.fsq and metrics.jsonl there (plus
    step-numbered checkpoints when checkpoint_every > 0).
    """
    if not records:
        raise ValueError("empty training set")
    if params is None:
        params = init_model_params(cfg, settings.seed)
    state = AdamState(lr=settings.lr, beta1=settings.beta1,
                      beta2=settings.beta2, eps=settings.eps)
    batch_rng = substream(settings.seed, "batches")
    aug_master = substream(settings.seed, "augment") if settings.augment else None
    metrics: list[dict] = []
    out_path = Path(out_dir) if out_dir is not None else None
    metrics_fh = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out_path / "metrics.jsonl", "w", encoding="utf-8")
    try:
        for step in range(settings.steps):
            idx = batch_rng.integers(len(records), size=settings.batch_size)
            padded, mask, images = make_batch(records, idx, cfg, q, aug_master)
            plan = DropoutPlan(settings.seed, step)
            if cfg.arch == "mlp":
                logits = mlp_forward_batch(padded, cfg, params, training=True, plan=plan)
            else:
                logits = forward_batch(padded, images, cfg, params, training=True, plan=plan)
            loss = masked_loss(logits, padded, mask)
            nats = loss.item()
            if not math.isfinite(nats):
                raise DivergenceError(f"non-finite loss at step {step + 1}")
            params.zero_grads()
            backward(loss, params)
            adam_step(params, state)
            bits = nats * LOG2E
            if (step + 1) % settings.log_every == 0 or step + 1 == settings.steps:
                row = {"step": step + 1, "nll_bits_per_token": bits}
                metrics.append(row)
                if metrics_fh is not None:
                    metrics_fh.write(json.dumps(row, sort_keys=True) + "\n")
            if (
                settings.checkpoint_every
                and out_path is not None
                and (step + 1) % settings.checkpoint_every == 0
            ):
                _save(out_path / f"checkpoint-{step + 1:06d}.fsq", params, cfg, q, step + 1)
            if settings.stop_below_bits is not None and bits < settings.stop_below_bits:
                break
        if out_path is not None:
            _save(out_path / "checkpoint.fsq", params, cfg, q, state.step)
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    return params, metrics


def _save(path: Path, params: ParamStore, cfg: ModelConfig, q: Quantizer, step: int) -> None:
    manifest = {
        "model": cfg.to_manifest(),
        "quantizer": {"lo": q.lo, "hi": q.hi, "n_q": q.n_q},
        "step": step,
    }
    save_checkpoint(path, {name: t.data for name, t in params.items()}, manifest)
