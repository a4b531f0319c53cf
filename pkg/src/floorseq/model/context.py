"""Image context encoders for the cross-attention branch.

Both encoders turn a binary birds-eye image into a sequence of embedding
vectors, one per coarse cell, and add a learned linear embedding of each
cell's (row, col) center coordinates normalized to [-1, 1].  Without the
coordinate term the attention layers would have no way to tell where in the
image a feature sits.
"""

from __future__ import annotations

import math

import numpy as np

from ..nncore import ParamStore, Tensor, conv2d, dense, layernorm, relu
from ..nncore.tensor import constant, matmul, reshape, swapaxes

_RESNET_STAGES = 3  # stride-2 stages: image side shrinks 8x


def context_grid_side(cfg) -> int:
    if cfg.context == "resnet":
        if cfg.image_size % (2**_RESNET_STAGES):
            raise ValueError("image_size must be divisible by 8 for the resnet encoder")
        return cfg.image_size // (2**_RESNET_STAGES)
    if cfg.context == "mixer":
        return cfg.image_size // cfg.mixer_patch
    raise ValueError(f"no context grid for {cfg.context!r}")


def context_length(cfg) -> int:
    return context_grid_side(cfg) ** 2


def _coord_grid(side: int) -> np.ndarray:
    """(side*side, 2) cell-center coordinates in [-1, 1], row-major."""
    centers = (np.arange(side) + 0.5) / side * 2.0 - 1.0
    rr, cc = np.meshgrid(centers, centers, indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=1)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    return rng.normal(0.0, math.sqrt(2.0 / (fan_in + fan_out)), shape)


def init_context_params(ps: ParamStore, cfg, rng: np.random.Generator) -> None:
    e = cfg.embed_dim
    if cfg.context == "resnet":
        chans = (1,) + tuple(cfg.resnet_channels) + (e,)
        for s in range(_RESNET_STAGES):
            cin, cout = chans[s], chans[s + 1]
            ps.add(f"ctx.down{s}.w", _glorot(rng, 9 * cin, cout, (3, 3, cin, cout)))
            ps.add(f"ctx.down{s}.b", np.zeros(cout))
            for blk in range(cfg.resnet_blocks):
                p = f"ctx.stage{s}.block{blk}"
                for half in (1, 2):
                    ps.add(f"{p}.ln{half}.gain", np.ones(cout))
                    ps.add(f"{p}.ln{half}.bias", np.zeros(cout))
                    ps.add(f"{p}.conv{half}.w", _glorot(rng, 9 * cout, cout, (3, 3, cout, cout)))
                    ps.add(f"{p}.conv{half}.b", np.zeros(cout))
        ps.add("ctx.proj.w", _glorot(rng, e, e, (e, e)))
        ps.add("ctx.proj.b", np.zeros(e))
    elif cfg.context == "mixer":
        patch_dim = cfg.mixer_patch**2
        n_patches = context_length(cfg)
        ps.add("ctx.patch.w", _glorot(rng, patch_dim, e, (patch_dim, e)))
        ps.add("ctx.patch.b", np.zeros(e))
        for blk in range(cfg.mixer_blocks):
            p = f"ctx.mix{blk}"
            ps.add(f"{p}.ln_tok.gain", np.ones(e))
            ps.add(f"{p}.ln_tok.bias", np.zeros(e))
            ps.add(f"{p}.tok.w1", _glorot(rng, n_patches, cfg.mixer_token_hidden,
                                          (n_patches, cfg.mixer_token_hidden)))
            ps.add(f"{p}.tok.b1", np.zeros(cfg.mixer_token_hidden))
            ps.add(f"{p}.tok.w2", _glorot(rng, cfg.mixer_token_hidden, n_patches,
                                          (cfg.mixer_token_hidden, n_patches)))
            ps.add(f"{p}.tok.b2", np.zeros(n_patches))
            ps.add(f"{p}.ln_ch.gain", np.ones(e))
            ps.add(f"{p}.ln_ch.bias", np.zeros(e))
            ps.add(f"{p}.ch.w1", _glorot(rng, e, cfg.mixer_hidden_c, (e, cfg.mixer_hidden_c)))
            ps.add(f"{p}.ch.b1", np.zeros(cfg.mixer_hidden_c))
            ps.add(f"{p}.ch.w2", _glorot(rng, cfg.mixer_hidden_c, e, (cfg.mixer_hidden_c, e)))
            ps.add(f"{p}.ch.b2", np.zeros(e))
    ps.add("ctx.coord.w", _glorot(rng, 2, e, (2, e)))
    ps.add("ctx.coord.b", np.zeros(e))


def _check_image(images: np.ndarray, cfg) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3 or images.shape[1] != cfg.image_size or images.shape[2] != cfg.image_size:
        raise ValueError(
            f"expected images [B, {cfg.image_size}, {cfg.image_size}], got {images.shape}"
        )
    return images


def resnet_encode(images: np.ndarray, cfg, params: ParamStore) -> Tensor:
    """Pre-activation residual stages, stride 2 each, then flatten to vectors."""
    images = _check_image(images, cfg)
    x = constant(images[..., None])  # [B, H, W, 1]
    for s in range(_RESNET_STAGES):
        x = conv2d(x, params[f"ctx.down{s}.w"], params[f"ctx.down{s}.b"], stride=2, padding=1)
        for blk in range(cfg.resnet_blocks):
            p = f"ctx.stage{s}.block{blk}"
            h = relu(layernorm(x, params[f"{p}.ln1.gain"], params[f"{p}.ln1.bias"]))
            h = conv2d(h, params[f"{p}.conv1.w"], params[f"{p}.conv1.b"], stride=1, padding=1)
            h = relu(layernorm(h, params[f"{p}.ln2.gain"], params[f"{p}.ln2.bias"]))
            h = conv2d(h, params[f"{p}.conv2.w"], params[f"{p}.conv2.b"], stride=1, padding=1)
            x = x + h
    side = context_grid_side(cfg)
    x = reshape(x, (x.shape[0], side * side, cfg.embed_dim))
    x = dense(x, params["ctx.proj.w"], params["ctx.proj.b"])
    return x + _coord_embedding(side, params)


def mixer_encode(images: np.ndarray, cfg, params: ParamStore) -> Tensor:
    """Non-overlapping patches through alternating token/channel-mixing blocks."""
    images = _check_image(images, cfg)
    b = images.shape[0]
    side = context_grid_side(cfg)
    p = cfg.mixer_patch
    patches = images.reshape(b, side, p, side, p).transpose(0, 1, 3, 2, 4)
    patches = patches.reshape(b, side * side, p * p)
    x = dense(constant(patches), params["ctx.patch.w"], params["ctx.patch.b"])
    for blk in range(cfg.mixer_blocks):
        pre = f"ctx.mix{blk}"
        h = layernorm(x, params[f"{pre}.ln_tok.gain"], params[f"{pre}.ln_tok.bias"])
        h = swapaxes(h, -1, -2)  # [B, E, P]
        h = dense(relu(dense(h, params[f"{pre}.tok.w1"], params[f"{pre}.tok.b1"])),
                  params[f"{pre}.tok.w2"], params[f"{pre}.tok.b2"])
        x = x + swapaxes(h, -1, -2)
        h = layernorm(x, params[f"{pre}.ln_ch.gain"], params[f"{pre}.ln_ch.bias"])
        h = dense(relu(dense(h, params[f"{pre}.ch.w1"], params[f"{pre}.ch.b1"])),
                  params[f"{pre}.ch.w2"], params[f"{pre}.ch.b2"])
        x = x + h
    return x + _coord_embedding(side, params)


def _coord_embedding(side: int, params: ParamStore) -> Tensor:
    coords = constant(_coord_grid(side))
    return matmul(coords, params["ctx.coord.w"]) + params["ctx.coord.b"]


def encode_context(images: np.ndarray, cfg, params: ParamStore) -> Tensor:
    if cfg.context == "resnet":
        return resnet_encode(images, cfg, params)
    if cfg.context == "mixer":
        return mixer_encode(images, cfg, params)
    raise ValueError(f"no context encoder named {cfg.context!r}")
