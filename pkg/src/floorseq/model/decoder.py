"""The autoregressive decoder: embeddings, ReZero attention layers, loss.

Layer structure, with LN() denoting pre-layernorm and D() dropout:

    x1 = x0 + a1 * D(SelfAttention(LN(x0)))          causal
    x2 = x1 + a2 * D(CrossAttention(LN(x1), ctx))    image models only
    y  = x2 + a3 * D(Dense_E(ReLU(Dense_Nfc(LN(x2)))))

All ReZero scalars a_i start at zero, so a fresh stack is the identity and
the initial logits are exactly the projected raw sequence embedding.
Output row j is the distribution over token j given tokens < j; there are
n + 1 rows for n input tokens because a learned start embedding is
prepended (it is not part of the vocabulary).
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from ..dataset import STOP
from ..nncore import ParamStore, Tensor, dense, dropout, layernorm, log_softmax, mha, relu
from ..nncore.tensor import concat, constant, mul, take_rows, tsum
from ..seeds import substream
from .config import ModelConfig
from .context import encode_context, init_context_params

TYPE_OP, TYPE_X, TYPE_Y = 0, 1, 2


class DropoutPlan:
    """Per-call dropout streams derived from (seed, step, layer, slot)."""

    def __init__(self, seed: int, step: int):
        self.seed = seed
        self.step = step

    def rng(self, layer: int, slot: int) -> np.random.Generator:
        return substream(self.seed, "dropout", self.step, layer, slot)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    return rng.normal(0.0, math.sqrt(2.0 / (fan_in + fan_out)), shape)


def init_params(cfg: ModelConfig, seed: int = 0) -> ParamStore:
    """Fresh parameter store for the attention decoder."""
    rng = substream(seed, "init")
    ps = ParamStore()
    e, v = cfg.embed_dim, cfg.vocab_size
    ps.add("embed.start", rng.normal(0.0, 0.02, (1, e)))
    ps.add("embed.value", rng.normal(0.0, 0.02, (v, e)))
    ps.add("embed.index", rng.normal(0.0, 0.02, (cfg.i_max, e)))
    ps.add("embed.type", rng.normal(0.0, 0.02, (3, e)))
    for i in range(cfg.layers):
        p = f"layers.{i}"
        _add_layernorm(ps, f"{p}.ln1", e)
        _add_attention(ps, f"{p}.attn", e, rng)
        ps.add(f"{p}.alpha1", np.zeros(()))
        if cfg.context != "none":
            _add_layernorm(ps, f"{p}.ln2", e)
            _add_attention(ps, f"{p}.cross", e, rng)
            ps.add(f"{p}.alpha2", np.zeros(()))
        _add_layernorm(ps, f"{p}.ln3", e)
        ps.add(f"{p}.ffn.w1", _glorot(rng, e, cfg.n_fc, (e, cfg.n_fc)))
        ps.add(f"{p}.ffn.b1", np.zeros(cfg.n_fc))
        ps.add(f"{p}.ffn.w2", _glorot(rng, cfg.n_fc, e, (cfg.n_fc, e)))
        ps.add(f"{p}.ffn.b2", np.zeros(e))
        ps.add(f"{p}.alpha3", np.zeros(()))
    _add_layernorm(ps, "final_ln", e)
    ps.add("proj.w", _glorot(rng, e, v, (e, v)))
    ps.add("proj.b", np.zeros(v))
    if cfg.context != "none":
        init_context_params(ps, cfg, rng)
    return ps


def _add_layernorm(ps: ParamStore, name: str, width: int) -> None:
    ps.add(f"{name}.gain", np.ones(width))
    ps.add(f"{name}.bias", np.zeros(width))


def _add_attention(ps: ParamStore, name: str, e: int, rng: np.random.Generator) -> None:
    for w in ("wq", "wk", "wv", "wo"):
        ps.add(f"{name}.{w}", _glorot(rng, e, e, (e, e)))
    for b in ("bq", "bk", "bv", "bo"):
        ps.add(f"{name}.{b}", np.zeros(e))


def position_ids(tokens: Sequence[int], cfg: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """(triplet index, token type) per token position.

    With opcode tokens present these are j // 3 and j mod 3.  In the
    opcode-ablated variant each coordinate keeps the slot it would have had
    in the full stream, recoverable from the coordinate count alone.
    """
    if cfg.use_opcode_tokens:
        n = len(tokens)
        flat = np.arange(n)
        return flat // 3, flat % 3
    idx, typ = [], []
    coords = 0
    for t in tokens:
        if t == STOP:
            idx.append(coords // 2)
            typ.append(TYPE_OP)
        else:
            idx.append(coords // 2)
            typ.append(TYPE_X + coords % 2)
            coords += 1
    return np.asarray(idx, dtype=int), np.asarray(typ, dtype=int)


def embed_sequence(tokens: Sequence[int], cfg: ModelConfig, params: ParamStore) -> Tensor:
    """[n+1, E]: learned start row, then one embedded row per token."""
    return embed_batch(np.asarray([list(tokens)], dtype=object), cfg, params)[0]


def embed_batch(token_batch, cfg: ModelConfig, params: ParamStore) -> Tensor:
    """[B, S+1, E] for equally long (padded) token rows."""
    rows = [list(t) for t in token_batch]
    n = len(rows[0])
    if any(len(r) != n for r in rows):
        raise ValueError("embed_batch requires equal-length rows")
    if n > cfg.max_tokens:
        raise ValueError(f"sequence length {n} exceeds max_tokens {cfg.max_tokens}")
    b = len(rows)
    start = take_rows(params["embed.start"], np.zeros((b, 1), dtype=int))
    if n == 0:
        return start
    ids = np.asarray(rows, dtype=int)
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ValueError("token id out of vocabulary range")
    emb = take_rows(params["embed.value"], ids)
    if cfg.use_position_embeddings:
        pos_idx = np.empty_like(ids)
        pos_typ = np.empty_like(ids)
        for r, row in enumerate(rows):
            pos_idx[r], pos_typ[r] = position_ids(row, cfg)
        emb = emb + take_rows(params["embed.index"], pos_idx)
        emb = emb + take_rows(params["embed.type"], pos_typ)
    return concat([start, emb], axis=1)


def attn_layer(
    x: Tensor,
    ctx: Tensor | None,
    cfg: ModelConfig,
    params: ParamStore,
    layer: int,
    training: bool = False,
    plan: DropoutPlan | None = None,
) -> Tensor:
    p = f"layers.{layer}"
    if cfg.context == "none" and ctx is not None:
        raise ValueError("context supplied to a non-image model")
    if cfg.context != "none" and ctx is None:
        raise ValueError("image model requires a context embedding")

    def drop(t: Tensor, slot: int) -> Tensor:
        rng = plan.rng(layer, slot) if plan is not None else None
        return dropout(t, cfg.dropout, training, rng)

    h = layernorm(x, params[f"{p}.ln1.gain"], params[f"{p}.ln1.bias"])
    attn = mha(
        h, h, cfg.heads,
        params[f"{p}.attn.wq"], params[f"{p}.attn.bq"],
        params[f"{p}.attn.wk"], params[f"{p}.attn.bk"],
        params[f"{p}.attn.wv"], params[f"{p}.attn.bv"],
        params[f"{p}.attn.wo"], params[f"{p}.attn.bo"],
        causal=True,
    )
    x = x + mul(params[f"{p}.alpha1"], drop(attn, 0))
    if ctx is not None:
        h = layernorm(x, params[f"{p}.ln2.gain"], params[f"{p}.ln2.bias"])
        cross = mha(
            h, ctx, cfg.heads,
            params[f"{p}.cross.wq"], params[f"{p}.cross.bq"],
            params[f"{p}.cross.wk"], params[f"{p}.cross.bk"],
            params[f"{p}.cross.wv"], params[f"{p}.cross.bv"],
            params[f"{p}.cross.wo"], params[f"{p}.cross.bo"],
        )
        x = x + mul(params[f"{p}.alpha2"], drop(cross, 1))
    h = layernorm(x, params[f"{p}.ln3.gain"], params[f"{p}.ln3.bias"])
    z = dense(relu(dense(h, params[f"{p}.ffn.w1"], params[f"{p}.ffn.b1"])),
              params[f"{p}.ffn.w2"], params[f"{p}.ffn.b2"])
    return x + mul(params[f"{p}.alpha3"], drop(z, 2))


def forward_batch(
    token_batch,
    images: np.ndarray | None,
    cfg: ModelConfig,
    params: ParamStore,
    training: bool = False,
    plan: DropoutPlan | None = None,
) -> Tensor:
    """Logits [B, S+1, vocab] for equal-length token rows."""
    if cfg.context != "none" and images is None:
        raise ValueError("image model requires conditioning images")
    if cfg.context == "none" and images is not None:
        raise ValueError("context image supplied to a non-image model")
    x = embed_batch(token_batch, cfg, params)
    ctx = None
    if images is not None:
        ctx = encode_context(images, cfg, params)
    for i in range(cfg.layers):
        x = attn_layer(x, ctx, cfg, params, i, training=training, plan=plan)
    y = layernorm(x, params["final_ln.gain"], params["final_ln.bias"])
    return dense(y, params["proj.w"], params["proj.b"])


def forward(
    tokens: Sequence[int],
    image: np.ndarray | None,
    cfg: ModelConfig,
    params: ParamStore,
    training: bool = False,
    plan: DropoutPlan | None = None,
) -> Tensor:
    """Logits [n+1, vocab] for one sequence; row j conditions on tokens < j."""
    images = image[None] if image is not None else None
    return forward_batch([list(tokens)], images, cfg, params, training, plan)[0]


LOG2E = math.log2(math.e)


def nats_to_bits(x: float) -> float:
    return x * LOG2E


def sequence_loss(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean negative log likelihood (nats/token) of targets under the logits.

    Row j of the logits scores target j; the extra final row (the
    continuation after the last token) carries no loss.
    """
    from ..nncore.tensor import reshape

    n = len(targets)
    if logits.shape[0] < n:
        raise ValueError("fewer logit rows than targets")
    tpad = np.zeros((1, logits.shape[0]), dtype=int)
    tpad[0, :n] = list(targets)
    mask = np.zeros((1, logits.shape[0]))
    mask[0, :n] = 1.0
    return masked_loss(reshape(logits, (1,) + logits.shape), tpad, mask)


def masked_loss(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean nats/token over masked positions of a batch.

    logits [B, S+1, V]; targets and mask [B, S'] with S' <= S+1; positions
    with mask 0 contribute nothing.
    """
    b, s = targets.shape
    lp = log_softmax(logits[:, :s, :])
    onehot = np.zeros((b, s, lp.shape[-1]))
    rows, cols = np.meshgrid(np.arange(b), np.arange(s), indexing="ij")
    onehot[rows, cols, targets] = 1.0
    picked = tsum(mul(lp, constant(onehot)), axis=-1)
    total = tsum(mul(picked, constant(mask)))
    return mul(total, constant(-1.0 / mask.sum()))
