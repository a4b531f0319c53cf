"""Attention-free variant: per-position MLPs over sliding embedding windows.

Each output position sees the concatenation of its own and the previous
N_w - 1 embedding rows (short windows are padded by repeating the start
embedding), so causality holds by construction.  A layer widens the joined
window to N_w * N_fc, applies ReLU, projects each window slot back to E,
re-joins, and adds the result through a ReZero-scaled residual:

    x1 = Dense(LN(x0); N_w * N_fc)
    x2 = Split(x1)                  # [., N_w, N_fc]
    x3 = Dense(ReLU(x2); E)         # per window slot
    x4 = Join(x3)                   # [., N_w * E]
    y  = x0 + a * D(x4)
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from ..nncore import ParamStore, Tensor, dense, dropout, layernorm, relu
from ..nncore.tensor import constant, mul, reshape
from ..seeds import substream
from .config import ModelConfig
from .decoder import DropoutPlan, _add_layernorm, _glorot, embed_batch


def init_mlp_params(cfg: ModelConfig, seed: int = 0) -> ParamStore:
    rng = substream(seed, "init-mlp")
    ps = ParamStore()
    e, v, nw, nfc = cfg.embed_dim, cfg.vocab_size, cfg.mlp_window, cfg.n_fc
    width = nw * e
    ps.add("embed.start", rng.normal(0.0, 0.02, (1, e)))
    ps.add("embed.value", rng.normal(0.0, 0.02, (v, e)))
    ps.add("embed.index", rng.normal(0.0, 0.02, (cfg.i_max, e)))
    ps.add("embed.type", rng.normal(0.0, 0.02, (3, e)))
    for i in range(cfg.layers):
        p = f"mlp.{i}"
        _add_layernorm(ps, f"{p}.ln", width)
        ps.add(f"{p}.w1", _glorot(rng, width, nw * nfc, (width, nw * nfc)))
        ps.add(f"{p}.b1", np.zeros(nw * nfc))
        ps.add(f"{p}.w2", _glorot(rng, nfc, e, (nfc, e)))
        ps.add(f"{p}.b2", np.zeros(e))
        ps.add(f"{p}.alpha", np.zeros(()))
    _add_layernorm(ps, "final_ln", width)
    ps.add("proj.w", _glorot(rng, width, v, (width, v)))
    ps.add("proj.b", np.zeros(v))
    return ps


def window_indices(n_rows: int, window: int) -> np.ndarray:
    """[n_rows, window] gather indices into the embedding rows; row j draws
    positions j-window+1..j clamped at 0, which repeats the start row."""
    j = np.arange(n_rows)[:, None]
    k = np.arange(window)[None, :]
    return np.maximum(j - window + 1 + k, 0)


def mlp_layer(
    x: Tensor,
    cfg: ModelConfig,
    params: ParamStore,
    layer: int,
    training: bool = False,
    plan: DropoutPlan | None = None,
) -> Tensor:
    p = f"mlp.{layer}"
    nw, nfc, e = cfg.mlp_window, cfg.n_fc, cfg.embed_dim
    h = layernorm(x, params[f"{p}.ln.gain"], params[f"{p}.ln.bias"])
    h = dense(h, params[f"{p}.w1"], params[f"{p}.b1"])
    h = reshape(h, h.shape[:-1] + (nw, nfc))
    h = dense(relu(h), params[f"{p}.w2"], params[f"{p}.b2"])
    h = reshape(h, h.shape[:-2] + (nw * e,))
    rng = plan.rng(layer, 0) if plan is not None else None
    return x + mul(params[f"{p}.alpha"], dropout(h, cfg.dropout, training, rng))


def mlp_forward_batch(
    token_batch,
    cfg: ModelConfig,
    params: ParamStore,
    training: bool = False,
    plan: DropoutPlan | None = None,
) -> Tensor:
    """Logits [B, S+1, vocab] for equal-length token rows."""
    emb = embed_batch(token_batch, cfg, params)  # [B, S+1, E]
    b, n_rows = emb.shape[0], emb.shape[1]
    wins = window_indices(n_rows, cfg.mlp_window)
    bidx = np.arange(b)[:, None, None]
    x = emb[bidx, wins[None, :, :]]  # [B, S+1, N_w, E]
    x = reshape(x, (b, n_rows, cfg.mlp_window * cfg.embed_dim))
    for i in range(cfg.layers):
        x = mlp_layer(x, cfg, params, i, training=training, plan=plan)
    y = layernorm(x, params["final_ln.gain"], params["final_ln.bias"])
    return dense(y, params["proj.w"], params["proj.b"])


def mlp_forward(
    tokens: Sequence[int],
    cfg: ModelConfig,
    params: ParamStore,
    training: bool = False,
    plan: DropoutPlan | None = None,
) -> Tensor:
    """Logits [n+1, vocab] for one sequence."""
    return mlp_forward_batch([list(tokens)], cfg, params, training, plan)[0]
