"""Decoder configuration shared by the attention model and the MLP variant."""

from __future__ import annotations

from dataclasses import dataclass, field, fields


@dataclass(frozen=True)
class ModelConfig:
    n_q: int = 256
    n_segs: int = 100
    embed_dim: int = 512
    layers: int = 6
    heads: int = 8
    ffn_dim: int | None = None  # defaults to 4 * embed_dim
    dropout: float = 0.6
    use_opcode_tokens: bool = True
    use_position_embeddings: bool = True
    context: str = "none"  # none | resnet | mixer
    arch: str = "attention"  # attention | mlp

    # context branch
    image_size: int = 128
    raster_extent: float = 10.0
    n_raster: int = 25  # segments drawn into the conditioning image; 0 = all
    resnet_channels: tuple[int, int] = (32, 64)  # third stage uses embed_dim
    resnet_blocks: int = 2
    mixer_blocks: int = 4
    mixer_patch: int = 8
    mixer_token_hidden: int = 256
    mixer_channel_hidden: int | None = None  # defaults to 2 * embed_dim

    # MLP variant
    mlp_window: int = 10

    def __post_init__(self) -> None:
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")
        if self.context not in ("none", "resnet", "mixer"):
            raise ValueError(f"unknown context encoder {self.context!r}")
        if self.arch not in ("attention", "mlp"):
            raise ValueError(f"unknown architecture {self.arch!r}")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.context == "mixer" and self.image_size % self.mixer_patch:
            raise ValueError("image_size must be divisible by mixer_patch")

    @property
    def vocab_size(self) -> int:
        return self.n_q + 3

    @property
    def i_max(self) -> int:
        """Triplet-index table size: 2 triplets per segment plus the stop slot."""
        return 2 * self.n_segs + 1

    @property
    def max_tokens(self) -> int:
        return 6 * self.n_segs + 1

    @property
    def n_fc(self) -> int:
        return self.ffn_dim if self.ffn_dim is not None else 4 * self.embed_dim

    @property
    def mixer_hidden_c(self) -> int:
        return (
            self.mixer_channel_hidden
            if self.mixer_channel_hidden is not None
            else 2 * self.embed_dim
        )

    def to_manifest(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_manifest(cls, manifest: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(manifest) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        kwargs = dict(manifest)
        if "resnet_channels" in kwargs:
            kwargs["resnet_channels"] = tuple(kwargs["resnet_channels"])
        return cls(**kwargs)
