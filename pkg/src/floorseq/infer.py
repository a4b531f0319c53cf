"""Autoregressive sampling, baselines, and evaluation metrics.

Sampling applies nucleus (top-p) filtering on top of a grammar mask so that
every sampled sequence decodes without structural errors.  Evaluation is
never masked: NLL and top-k accuracy see the model's unconstrained next-token
distribution at every position, stop included.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import (
    DatasetRecord,
    LINE,
    MOVE,
    Quantizer,
    STOP,
    TokenSequence,
    Vocab,
    ablate_opcodes,
    restore_opcodes,
)
from .model import ModelConfig, forward, mlp_forward, model_stream
from .model.session import DecoderSession, MlpSession, _TensorView
from .nncore import load_checkpoint, no_grad
from .seeds import substream

SLOT_NAMES = ("c_mu", "x_mu", "y_mu", "c_lambda", "x_lambda", "y_lambda")


@dataclass(frozen=True)
class SamplerConfig:
    top_p: float = 0.9
    max_tokens: int | None = None  # full-stream token cap; None = model max
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")


@dataclass
class EvalReport:
    nll_bits_per_token: float | None
    top1_accuracy: float
    top5_accuracy: float
    token_count: int
    sequence_count: int

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


@dataclass
class DyadStats:
    """Per (triplet-pair index, slot) ground-truth probability and accuracy.

    Slot is the flat position mod 6, pair index the flat position div 6; the
    c_mu column runs one pair longer because the final stop sits in a move
    opcode slot.
    """

    prob_sum: dict = field(default_factory=dict)
    hit_sum: dict = field(default_factory=dict)
    count: dict = field(default_factory=dict)

    def add(self, pair: int, slot: int, prob: float, hit: float) -> None:
        key = (pair, slot)
        self.prob_sum[key] = self.prob_sum.get(key, 0.0) + prob
        self.hit_sum[key] = self.hit_sum.get(key, 0.0) + hit
        self.count[key] = self.count.get(key, 0) + 1

    def rows(self) -> list[dict]:
        out = []
        for pair, slot in sorted(self.count):
            n = self.count[(pair, slot)]
            out.append(
                {
                    "pair_index": pair,
                    "slot": SLOT_NAMES[slot],
                    "mean_prob": self.prob_sum[(pair, slot)] / n,
                    "accuracy": self.hit_sum[(pair, slot)] / n,
                    "count": n,
                }
            )
        return out

    def total_count(self) -> int:
        return sum(self.count.values())

    def to_json(self) -> str:
        return json.dumps(self.rows(), sort_keys=True)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["pair_index", "slot", "mean_prob", "accuracy", "count"]
            )
            writer.writeheader()
            writer.writerows(self.rows())


# ---------------------------------------------------------------------------
# model handle


class Decoder:
    """Inference-side bundle of a config and trained parameter values."""

    def __init__(self, cfg: ModelConfig, values: dict[str, np.ndarray]):
        self.cfg = cfg
        self.values = values

    @classmethod
    def from_params(cls, cfg: ModelConfig, params) -> "Decoder":
        return cls(cfg, {name: t.data for name, t in params.items()})

    @classmethod
    def from_checkpoint(cls, path: str | Path) -> tuple["Decoder", Quantizer]:
        values, manifest = load_checkpoint(path)
        cfg = ModelConfig.from_manifest(manifest["model"])
        q = Quantizer(**manifest["quantizer"])
        return cls(cfg, values), q

    def logits(self, stream: Sequence[int], image: np.ndarray | None = None) -> np.ndarray:
        """[n+1, vocab] logits for a model-stream token sequence (no gradients)."""
        view = _TensorView(self.values)
        with no_grad():
            if self.cfg.arch == "mlp":
                return mlp_forward(stream, self.cfg, view).data
            return forward(stream, image, self.cfg, view).data

    def session(self, image: np.ndarray | None = None):
        if self.cfg.arch == "mlp":
            return MlpSession(self.cfg, self.values)
        return DecoderSession(self.cfg, self.values, image)


# ---------------------------------------------------------------------------
# nucleus sampling


def nucleus_filter(p: np.ndarray, top_p: float) -> np.ndarray:
    """Zero the tail outside the smallest prefix with cumulative mass >= top_p.

    Tokens are taken in descending probability, ties by ascending id; the kept
    mass is renormalized.  top_p = 1 keeps everything unchanged.
    """
    p = np.asarray(p, dtype=np.float64)
    order = np.lexsort((np.arange(p.size), -p))
    csum = np.cumsum(p[order])
    k = int(np.searchsorted(csum, top_p, side="left")) + 1
    if k >= p.size:
        return p.copy()
    keep = order[:k]
    out = np.zeros_like(p)
    out[keep] = p[keep] / p[keep].sum()
    return out


def legal_token_mask(position: int, cfg: ModelConfig, vocab: Vocab) -> np.ndarray:
    """Grammar mask over the vocabulary for a model-stream position."""
    mask = np.zeros(vocab.size, dtype=bool)
    if cfg.use_opcode_tokens:
        slot = position % 6
        if slot == 0:
            mask[STOP] = True
            mask[MOVE] = True
        elif slot == 3:
            mask[LINE] = True
        else:
            mask[3:] = True
    else:
        mask[3:] = True
        if position % 4 == 0:
            mask[STOP] = True
    return mask


def _stream_cap(cfg: ModelConfig, full_cap: int) -> int:
    """Translate a full-sequence token cap into model-stream units."""
    max_segments = max((full_cap - 1) // 6, 0)
    return 4 * max_segments + 1 if not cfg.use_opcode_tokens else 6 * max_segments + 1


def sample_sequence(
    decoder: Decoder,
    prefix: Sequence[int],
    image: np.ndarray | None = None,
    scfg: SamplerConfig = SamplerConfig(),
    rng: np.random.Generator | None = None,
) -> TokenSequence:
    """Extend a (possibly empty) full-form prefix until stop or the length cap.

    Returns the full sequence including the prefix; for opcode-ablated models
    the opcodes are reinserted, so the output always decodes.
    """
    cfg = decoder.cfg
    vocab = Vocab(cfg.n_q)
    if rng is None:
        rng = substream(scfg.rng_seed, "sample")
    full_cap = scfg.max_tokens if scfg.max_tokens is not None else cfg.max_tokens
    cap = _stream_cap(cfg, full_cap)
    session = decoder.session(image)
    stream = list(model_stream(list(prefix), cfg))
    if stream and stream[-1] == STOP:
        stream = stream[:-1]
    for t in stream:
        session.append(t)
    stopped = False
    while len(session.tokens) < cap:
        logits = session.logits()
        shifted = logits - logits.max()
        p = np.exp(shifted)
        p /= p.sum()
        p = p * legal_token_mask(len(session.tokens), cfg, vocab)
        p /= p.sum()
        p = nucleus_filter(p, scfg.top_p)
        token = int(rng.choice(p.size, p=p))
        session.append(token)
        if token == STOP:
            stopped = True
            break
    out = list(session.tokens)
    if not stopped:
        group = 4 if not cfg.use_opcode_tokens else 6
        out = out[: (len(out) // group) * group] + [STOP]
    return restore_opcodes(out) if not cfg.use_opcode_tokens else out


# ---------------------------------------------------------------------------
# predictors


class UniformPredictor:
    """Assigns probability 1/|vocab| everywhere."""

    def __init__(self, vocab: Vocab):
        self.vocab = vocab

    def token_probs(self, record: DatasetRecord) -> np.ndarray:
        n = len(record.tokens)
        return np.full((n, self.vocab.size), 1.0 / self.vocab.size)


class ModelPredictor:
    """Teacher-forced next-token probabilities from a trained decoder.

    For opcode-ablated models the removed opcode positions get probability 1
    on the ground truth: triplet-index parity determines them exactly.
    """

    def __init__(self, decoder: Decoder, with_images: bool = True):
        self.decoder = decoder
        self.with_images = with_images and decoder.cfg.context != "none"

    def _image(self, record: DatasetRecord) -> np.ndarray | None:
        if not self.with_images:
            return None
        from .model import conditioning_image

        return conditioning_image(record.local_segments, self.decoder.cfg)

    def token_probs(self, record: DatasetRecord) -> np.ndarray:
        cfg = self.decoder.cfg
        full = list(record.tokens)
        stream = model_stream(full, cfg)
        logits = self.decoder.logits(stream, self._image(record))
        shifted = logits - logits.max(axis=-1, keepdims=True)
        probs = np.exp(shifted)
        probs /= probs.sum(axis=-1, keepdims=True)
        if cfg.use_opcode_tokens:
            return probs[: len(full)]
        out = np.zeros((len(full), cfg.vocab_size))
        kept = [i for i, t in enumerate(full) if t not in (MOVE, LINE)]
        out[kept] = probs[: len(kept)]
        removed = [i for i, t in enumerate(full) if t in (MOVE, LINE)]
        out[removed, [full[i] for i in removed]] = 1.0
        return out


class NearestNeighborPredictor:
    """Most common successor among the N_k nearest training windows.

    Window similarity is Hamming distance over the last N_w tokens; ties are
    broken by earliest training occurrence.  Deterministic, so it reports
    top-k rankings but no likelihood.
    """

    PAD = -1

    def __init__(self, train_records: Sequence[DatasetRecord], n_w: int = 10, n_k: int = 32):
        if not train_records:
            raise ValueError("empty training set")
        self.n_w = n_w
        self.n_k = n_k
        windows = []
        successors = []
        for r in train_records:
            tokens = list(r.tokens)
            padded = [self.PAD] * n_w + tokens
            for j in range(len(tokens)):
                windows.append(padded[j : j + n_w])
                successors.append(tokens[j])
        self.windows = np.asarray(windows, dtype=np.int64)
        self.successors = np.asarray(successors, dtype=np.int64)

    def _queries(self, tokens: Sequence[int]) -> np.ndarray:
        padded = [self.PAD] * self.n_w + list(tokens)
        return np.asarray(
            [padded[j : j + self.n_w] for j in range(len(tokens))], dtype=np.int64
        )

    def token_topk(self, record: DatasetRecord, k: int = 5) -> np.ndarray:
        """[n, k] predicted token ids per position, best first, -1 padding."""
        queries = self._queries(record.tokens)
        out = np.full((len(queries), k), -1, dtype=np.int64)
        for j, qwin in enumerate(queries):
            dists = (self.windows != qwin).sum(axis=1)
            neighbors = np.argsort(dists, kind="stable")[: self.n_k]
            succ = self.successors[neighbors]
            counts = np.bincount(succ)
            ranked = np.lexsort((np.arange(counts.size), -counts))
            ranked = ranked[counts[ranked] > 0][:k]
            out[j, : ranked.size] = ranked
        return out


# ---------------------------------------------------------------------------
# metrics


def uniform_metrics(vocab: Vocab) -> EvalReport:
    """Analytic worst-case row: NLL log2 |vocab|, top-k accuracy k/|vocab|."""
    return EvalReport(
        nll_bits_per_token=math.log2(vocab.size),
        top1_accuracy=1.0 / vocab.size,
        top5_accuracy=5.0 / vocab.size,
        token_count=0,
        sequence_count=0,
    )


def _topk_credit(row: np.ndarray, target: int, k: int) -> float:
    """Expected top-k hit under random tie ordering.

    Tokens strictly more probable than the target always outrank it; tokens
    tied with it share the boundary uniformly, which makes the uniform
    baseline land exactly on k/|vocab|.
    """
    pt = row[target]
    better = int((row > pt).sum())
    if better >= k:
        return 0.0
    tied = int((row == pt).sum())  # includes the target
    if better + tied <= k:
        return 1.0
    return (k - better) / tied


def evaluate(predictor, records: Sequence[DatasetRecord]) -> EvalReport:
    """Teacher-forced metrics over all token positions, stop included."""
    if not records:
        raise ValueError("empty evaluation set")
    nll = 0.0
    top1 = 0.0
    top5 = 0.0
    tokens = 0
    deterministic = not hasattr(predictor, "token_probs")
    for record in records:
        targets = list(record.tokens)
        tokens += len(targets)
        if deterministic:
            ranks = predictor.token_topk(record, k=5)
            for j, t in enumerate(targets):
                top1 += float(ranks[j, 0] == t)
                top5 += float(t in ranks[j])
            continue
        probs = predictor.token_probs(record)
        for j, t in enumerate(targets):
            nll += -math.log2(probs[j, t])
            top1 += _topk_credit(probs[j], t, 1)
            top5 += _topk_credit(probs[j], t, 5)
    return EvalReport(
        nll_bits_per_token=None if deterministic else nll / tokens,
        top1_accuracy=top1 / tokens,
        top5_accuracy=top5 / tokens,
        token_count=tokens,
        sequence_count=len(records),
    )


def dyad_stats(predictor, records: Sequence[DatasetRecord]) -> DyadStats:
    """Bucket ground-truth probability and accuracy by (pair, slot)."""
    stats = DyadStats()
    for record in records:
        probs = predictor.token_probs(record)
        for j, t in enumerate(record.tokens):
            stats.add(j // 6, j % 6, float(probs[j, t]), _topk_credit(probs[j], t, 1))
    return stats
