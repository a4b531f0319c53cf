"""Incremental token-by-token inference at plain numpy speed.

Sampling recomputes nothing: each appended token runs once through the
layers while per-layer key/value rows are cached, so drawing a sequence of
length n costs O(n^2) instead of the O(n^3) of repeated full passes.  The
math mirrors the recorded-graph forward exactly (dropout is inactive at
inference); agreement between the two paths is covered by tests.
"""

from __future__ import annotations

import numpy as np

from ..dataset import STOP
from ..nncore import no_grad
from ..nncore.ops import LAYERNORM_EPS
from .config import ModelConfig
from .context import encode_context
from .decoder import TYPE_OP, TYPE_X


def _ln(x: np.ndarray, gain: np.ndarray, bias: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc * (var + LAYERNORM_EPS) ** -0.5 * gain + bias


class DecoderSession:
    """Grow-only decoding state for the attention model."""

    def __init__(self, cfg: ModelConfig, values: dict[str, np.ndarray],
                 image: np.ndarray | None = None):
        if cfg.arch != "attention":
            raise ValueError("DecoderSession requires an attention config")
        if (image is not None) != (cfg.context != "none"):
            raise ValueError("image must be given exactly for image models")
        self.cfg = cfg
        self.v = values
        self.heads = cfg.heads
        self.d = cfg.embed_dim // cfg.heads
        cap = cfg.max_tokens + 1
        self._k = [np.empty((cap, cfg.embed_dim)) for _ in range(cfg.layers)]
        self._v = [np.empty((cap, cfg.embed_dim)) for _ in range(cfg.layers)]
        self._n = 0  # cached rows per layer
        self._coords = 0  # coordinate tokens seen (ablated position tracking)
        self.tokens: list[int] = []
        self._cross = None
        if image is not None:
            with no_grad():
                ctx = encode_context(image[None], cfg, _TensorView(values)).data[0]
            self._cross = []
            for i in range(cfg.layers):
                p = f"layers.{i}.cross"
                self._cross.append((
                    ctx @ values[f"{p}.wk"] + values[f"{p}.bk"],
                    ctx @ values[f"{p}.wv"] + values[f"{p}.bv"],
                ))
        self._logits = self._advance(self.v["embed.start"][0])

    def _embed_token(self, token: int) -> np.ndarray:
        cfg = self.cfg
        row = self.v["embed.value"][token]
        if cfg.use_position_embeddings:
            if cfg.use_opcode_tokens:
                j = len(self.tokens)
                idx, typ = j // 3, j % 3
            elif token == STOP:
                idx, typ = self._coords // 2, TYPE_OP
            else:
                idx, typ = self._coords // 2, TYPE_X + self._coords % 2
            row = row + self.v["embed.index"][idx] + self.v["embed.type"][typ]
        return row

    def _attend(self, q: np.ndarray, keys: np.ndarray, vals: np.ndarray) -> np.ndarray:
        h, d = self.heads, self.d
        qh = q.reshape(h, d)
        kh = keys.reshape(-1, h, d)
        vh = vals.reshape(-1, h, d)
        scores = np.einsum("hd,nhd->hn", qh, kh) / np.sqrt(d)
        scores -= scores.max(axis=-1, keepdims=True)
        w = np.exp(scores)
        w /= w.sum(axis=-1, keepdims=True)
        out = np.einsum("hn,nhd->hd", w, vh)
        return out.reshape(h * d)

    def _advance(self, row: np.ndarray) -> np.ndarray:
        """Push one embedding row through the stack; returns its logits row."""
        v, cfg = self.v, self.cfg
        x = row
        for i in range(cfg.layers):
            p = f"layers.{i}"
            h = _ln(x, v[f"{p}.ln1.gain"], v[f"{p}.ln1.bias"])
            self._k[i][self._n] = h @ v[f"{p}.attn.wk"] + v[f"{p}.attn.bk"]
            self._v[i][self._n] = h @ v[f"{p}.attn.wv"] + v[f"{p}.attn.bv"]
            q = h @ v[f"{p}.attn.wq"] + v[f"{p}.attn.bq"]
            att = self._attend(q, self._k[i][: self._n + 1], self._v[i][: self._n + 1])
            x = x + v[f"{p}.alpha1"] * (att @ v[f"{p}.attn.wo"] + v[f"{p}.attn.bo"])
            if self._cross is not None:
                h = _ln(x, v[f"{p}.ln2.gain"], v[f"{p}.ln2.bias"])
                q = h @ v[f"{p}.cross.wq"] + v[f"{p}.cross.bq"]
                ck, cv = self._cross[i]
                att = self._attend(q, ck, cv)
                x = x + v[f"{p}.alpha2"] * (att @ v[f"{p}.cross.wo"] + v[f"{p}.cross.bo"])
            h = _ln(x, v[f"{p}.ln3.gain"], v[f"{p}.ln3.bias"])
            z = np.maximum(h @ v[f"{p}.ffn.w1"] + v[f"{p}.ffn.b1"], 0.0)
            x = x + v[f"{p}.alpha3"] * (z @ v[f"{p}.ffn.w2"] + v[f"{p}.ffn.b2"])
        self._n += 1
        y = _ln(x, v["final_ln.gain"], v["final_ln.bias"])
        return y @ v["proj.w"] + v["proj.b"]

    def logits(self) -> np.ndarray:
        """Distribution logits for the next token after the current prefix."""
        return self._logits

    def append(self, token: int) -> None:
        if len(self.tokens) >= self.cfg.max_tokens:
            raise ValueError("sequence exceeds max_tokens")
        row = self._embed_token(token)
        self.tokens.append(token)
        if token != STOP and not self.cfg.use_opcode_tokens:
            self._coords += 1
        self._logits = self._advance(row)


class MlpSession:
    """Grow-only decoding state for the sliding-window MLP variant."""

    def __init__(self, cfg: ModelConfig, values: dict[str, np.ndarray]):
        self.cfg = cfg
        self.v = values
        self.tokens: list[int] = []
        self._coords = 0
        self._rows = [values["embed.start"][0]]
        self._logits = self._compute()

    _embed_token = DecoderSession._embed_token

    def _compute(self) -> np.ndarray:
        cfg, v = self.cfg, self.v
        nw, e, nfc = cfg.mlp_window, cfg.embed_dim, cfg.n_fc
        rows = self._rows
        win = [rows[max(0, len(rows) - nw + k)] if len(rows) - nw + k >= 0 else rows[0]
               for k in range(nw)]
        x = np.concatenate(win)
        for i in range(cfg.layers):
            p = f"mlp.{i}"
            h = _ln(x, v[f"{p}.ln.gain"], v[f"{p}.ln.bias"])
            h = (h @ v[f"{p}.w1"] + v[f"{p}.b1"]).reshape(nw, nfc)
            h = np.maximum(h, 0.0) @ v[f"{p}.w2"] + v[f"{p}.b2"]
            x = x + v[f"{p}.alpha"] * h.reshape(nw * e)
        y = _ln(x, v["final_ln.gain"], v["final_ln.bias"])
        return y @ v["proj.w"] + v["proj.b"]

    def logits(self) -> np.ndarray:
        return self._logits

    def append(self, token: int) -> None:
        if len(self.tokens) >= self.cfg.max_tokens:
            raise ValueError("sequence exceeds max_tokens")
        row = self._embed_token(token)
        self.tokens.append(token)
        if token != STOP and not self.cfg.use_opcode_tokens:
            self._coords += 1
        self._rows.append(row)
        self._logits = self._compute()


class _TensorView:
    """Adapts a raw value dict to the ParamStore lookup interface."""

    def __init__(self, values: dict[str, np.ndarray]):
        from ..nncore.tensor import Tensor

        self._values = values
        self._tensor = Tensor

    def __getitem__(self, name: str):
        return self._tensor(self._values[name])
