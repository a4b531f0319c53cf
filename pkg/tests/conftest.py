import numpy as np
import pytest

from floorseq.dataset import Quantizer, SampleParams, ViewParams, build_records, synth_plan
from floorseq.geometry import CanonParams
from floorseq.model import ModelConfig, init_mlp_params, init_params


def tiny_config(**overrides) -> ModelConfig:
    base = dict(n_q=12, n_segs=4, embed_dim=8, layers=2, heads=2, dropout=0.0)
    base.update(overrides)
    return ModelConfig(**base)


def warm_rezero(params, rng: np.random.Generator) -> None:
    """Randomize the ReZero scalars so layers contribute to the output."""
    for name, t in params.items():
        if "alpha" in name:
            t.data = np.asarray(rng.uniform(0.3, 0.9))


def warmed_params(cfg: ModelConfig, seed: int = 1):
    init = init_mlp_params if cfg.arch == "mlp" else init_params
    params = init(cfg, seed=seed)
    warm_rezero(params, np.random.default_rng(seed + 100))
    return params


@pytest.fixture(scope="session")
def quantizer() -> Quantizer:
    return Quantizer()


@pytest.fixture(scope="session")
def synth_records(quantizer):
    """A small mixed-building record set used across modules."""
    records = []
    for seed in range(4):
        plan = synth_plan(seed, 1 + seed % 2, 1, room_size=4.5, door_width=1.0)
        records.extend(
            build_records(
                plan,
                CanonParams(),
                ViewParams(n_segs=12),
                SampleParams(n_p=60, d_pmin=1.2, rng_seed=seed),
                quantizer,
            )
        )
    return records
