"""Command-line pipeline: ingest, dataset, train, eval, sample, distmap, render.

Every command is deterministic under a fixed --seed: all randomness flows
from the single top-level seed through named substreams per stage.  Exit
codes: 0 success, 1 usage error, 2 data error, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .dataset import (
    Quantizer,
    SampleParams,
    SplitError,
    TokenError,
    ViewParams,
    ViewpointError,
    build_records,
    read_records,
    record_to_json,
    split_by_building,
)
from .distmap import (
    DistmapParams,
    ErrorStats,
    aggregate_stats,
    error_stats,
    scene_grids,
    stats_to_json,
)
from .geometry import CanonParams, GeometryError, plan_from_json, plan_to_json
from .infer import (
    Decoder,
    ModelPredictor,
    NearestNeighborPredictor,
    SamplerConfig,
    UniformPredictor,
    dyad_stats,
    evaluate,
    sample_sequence,
)
from .model import DivergenceError, ModelConfig, TrainSettings, conditioning_image, train
from .render import sequence_svg
from .seeds import substream

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGENCE = 0, 1, 2, 3

_SECTIONS = {
    "canon": CanonParams,
    "view": ViewParams,
    "sample": SampleParams,
    "quantizer": Quantizer,
    "model": ModelConfig,
    "sampler": SamplerConfig,
    "train": TrainSettings,
    "distmap": DistmapParams,
}
_TOP_KEYS = {"rng_seed", "test_fraction"} | set(_SECTIONS)

# sections carrying their own stage seed, fed from the top-level seed unless
# the config sets one explicitly
_SEEDED = {"sample": "rng_seed", "sampler": "rng_seed", "train": "seed"}


class ConfigError(ValueError):
    pass


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); usage errors are 1
        raise UsageError(message)


@dataclasses.dataclass
class RunConfig:
    rng_seed: int
    test_fraction: float
    canon: CanonParams
    view: ViewParams
    sample: SampleParams
    quantizer: Quantizer
    model: ModelConfig
    sampler: SamplerConfig
    train: TrainSettings
    distmap: DistmapParams


def _build_section(cls, data: dict, section: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in config section {section!r}: {sorted(unknown)}")
    if "resnet_channels" in data:
        data = dict(data, resnet_channels=tuple(data["resnet_channels"]))
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config section {section!r}: {exc}") from exc


def load_run_config(path: str | None, seed_override: int | None = None) -> RunConfig:
    raw = {}
    if path is not None:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise ConfigError("run config must be a JSON object")
        unknown = set(raw) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    seed = int(raw.get("rng_seed", 0))
    if seed_override is not None:
        seed = seed_override
    sections = {}
    for name, cls in _SECTIONS.items():
        data = dict(raw.get(name, {}))
        if name in _SEEDED and _SEEDED[name] not in data:
            data[_SEEDED[name]] = seed
        sections[name] = _build_section(cls, data, name)
    return RunConfig(
        rng_seed=seed,
        test_fraction=float(raw.get("test_fraction", 0.1)),
        **sections,
    )


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(args) -> int:
    plans = []
    seen = {}
    for path in args.paths:
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
            plan = plan_from_json(obj)
        except (KeyError, ValueError) as exc:
            raise GeometryError(f"{path}: {exc}") from exc
        key = (plan.building_id, plan.floor_id)
        if key in seen:
            raise GeometryError(
                f"{path}: duplicate building+floor id {key} (first seen in {seen[key]})"
            )
        seen[key] = path
        n_segs = sum(len(s.boundary) for s in plan.spaces)
        print(f"{path}: {plan.building_id}/{plan.floor_id} "
              f"{len(plan.spaces)} spaces, {n_segs} boundary segments")
        plans.append(plan)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, {"plans": [plan_to_json(p) for p in plans]})
    print(f"wrote {len(plans)} plans to {out}")
    return EXIT_OK


def _load_archive(path: str):
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    plans = [plan_from_json(p) for p in obj["plans"]]
    if not plans:
        raise GeometryError(f"{path}: archive contains no plans")
    return plans


def cmd_dataset(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    plans = _load_archive(args.archive)
    records = []
    for plan in plans:
        records.extend(build_records(plan, cfg.canon, cfg.view, cfg.sample, cfg.quantizer))
    train_recs, test_recs, test_buildings = split_by_building(records, cfg.test_fraction)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, recs in (("train", train_recs), ("test", test_recs)):
        with open(out / f"{name}.jsonl", "w", encoding="utf-8") as fh:
            for r in recs:
                fh.write(record_to_json(r) + "\n")
    manifest = {
        "seed": cfg.rng_seed,
        "test_fraction": cfg.test_fraction,
        "train_records": len(train_recs),
        "test_records": len(test_recs),
        "test_buildings": test_buildings,
        "train_buildings": sorted({r.building_id for r in train_recs}),
    }
    _write_json(out / "manifest.json", manifest)
    print(f"dataset: {len(train_recs)} train / {len(test_recs)} test records -> {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    model_cfg = cfg.model if args.context is None else dataclasses.replace(
        cfg.model, context=args.context
    )
    records = read_records(args.dataset, cfg.quantizer)
    settings = cfg.train if args.steps is None else dataclasses.replace(
        cfg.train, steps=args.steps
    )
    _, metrics = train(records, model_cfg, settings, cfg.quantizer, out_dir=args.out)
    last = metrics[-1] if metrics else {}
    print(f"trained {settings.steps} steps; final {json.dumps(last, sort_keys=True)}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.baseline is None and args.checkpoint is None:
        raise UsageError("eval requires --checkpoint or --baseline")
    if args.baseline == "nn" and args.train_dataset is None:
        raise UsageError("--baseline nn requires --train-dataset")
    cfg = load_run_config(args.config, args.seed)
    if args.baseline == "uniform":
        records = read_records(args.dataset, cfg.quantizer)
        predictor = UniformPredictor(cfg.quantizer.vocab)
    elif args.baseline == "nn":
        records = read_records(args.dataset, cfg.quantizer)
        train_recs = read_records(args.train_dataset, cfg.quantizer)
        predictor = NearestNeighborPredictor(train_recs)
    else:
        decoder, q = Decoder.from_checkpoint(args.checkpoint)
        records = read_records(args.dataset, q)
        predictor = ModelPredictor(decoder)
    report = evaluate(predictor, records)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json() + "\n", encoding="utf-8")
    print(report.to_json())
    if args.dyads is not None:
        if not hasattr(predictor, "token_probs"):
            raise UsageError("dyad statistics need a probabilistic predictor")
        stats = dyad_stats(predictor, records)
        Path(str(args.dyads) + ".json").write_text(stats.to_json() + "\n", encoding="utf-8")
        stats.write_csv(str(args.dyads) + ".csv")
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    decoder, q = Decoder.from_checkpoint(args.checkpoint)
    scfg = dataclasses.replace(
        cfg.sampler, top_p=args.top_p if args.top_p is not None else cfg.sampler.top_p
    )
    records = read_records(args.dataset, q) if args.dataset else []
    if args.prefix_segments > 0 and not records:
        raise UsageError("--prefix-segments needs --dataset for source sequences")
    if decoder.cfg.context != "none" and not records:
        raise UsageError("image-conditioned sampling needs --dataset for source images")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for i in range(args.num):
        prefix: list[int] = []
        image = None
        if records:
            record = records[i % len(records)]
            if args.prefix_segments > 0:
                prefix = list(record.tokens[: 6 * args.prefix_segments])
            if decoder.cfg.context != "none":
                image = conditioning_image(record.local_segments, decoder.cfg)
        rng = substream(scfg.rng_seed, "cli-sample", i)
        tokens = sample_sequence(decoder, prefix, image=image, scfg=scfg, rng=rng)
        lines.append({"index": i, "prefix_tokens": len(prefix), "tokens": tokens})
        svg = sequence_svg(tokens, q, prefix_segments=args.prefix_segments)
        (out / f"sample-{i:03d}.svg").write_text(svg, encoding="utf-8")
    with open(out / "samples.jsonl", "w", encoding="utf-8") as fh:
        for row in lines:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    print(f"wrote {args.num} samples to {out}")
    return EXIT_OK


def cmd_distmap(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    decoder, q = Decoder.from_checkpoint(args.checkpoint)
    records = read_records(args.dataset, q)
    params = cfg.distmap if args.k_completions is None else dataclasses.replace(
        cfg.distmap, k_completions=args.k_completions
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    per_scene: list[dict[str, ErrorStats]] = []
    for i, record in enumerate(records[: args.scenes]):
        scfg = dataclasses.replace(cfg.sampler, rng_seed=cfg.rng_seed + i)
        d_p, d_0, d_hat = scene_grids(decoder, record, q, params, scfg)
        stats = error_stats(d_p, d_0, d_hat)
        per_scene.append(stats)
        (out / f"scene-{i:03d}-stats.json").write_text(
            stats_to_json(stats) + "\n", encoding="utf-8"
        )
        if i == 0:
            for name, grid in (("d_p", d_p), ("d_0", d_0), ("d_hat", d_hat)):
                grid.to_csv(out / f"{name}.csv")
                (out / f"{name}.pgm").write_text(grid.to_pgm(), encoding="ascii")
    merged = {
        key: aggregate_stats([s[key] for s in per_scene])
        for key in ("predicted", "observed_only")
    }
    (out / "stats.json").write_text(stats_to_json(merged) + "\n", encoding="utf-8")
    print(stats_to_json(merged))
    return EXIT_OK


def cmd_render(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(args.input, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            obj = json.loads(line)
            tokens = [int(t) for t in obj["tokens"]]
            prefix = int(obj.get("prefix_tokens", 0)) // 6
            svg = sequence_svg(tokens, cfg.quantizer, prefix_segments=prefix)
            (out / f"render-{i:03d}.svg").write_text(svg, encoding="utf-8")
            count += 1
    print(f"rendered {count} sequences to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="floorseq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="run config JSON")
        p.add_argument("--seed", type=int, default=None, help="top-level rng seed")

    p = sub.add_parser("ingest", help="validate plan JSON files into an archive")
    p.add_argument("paths", nargs="+")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("dataset", help="build train/test token datasets")
    p.add_argument("--archive", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train the decoder")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--context", choices=["none", "resnet", "mixer"], default=None)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="teacher-forced evaluation")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--baseline", choices=["uniform", "nn"], default=None)
    p.add_argument("--train-dataset", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--dyads", default=None, help="path prefix for dyad stats")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="draw nucleus samples")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--num", type=int, default=8)
    p.add_argument("--prefix-segments", type=int, default=0)
    p.add_argument("--top-p", type=float, default=None)
    p.add_argument("--dataset", default=None)
    common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("distmap", help="shortest-path prediction experiment")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k-completions", type=int, default=None)
    p.add_argument("--scenes", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_distmap)

    p = sub.add_parser("render", help="render token sequences to SVG")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (
        ConfigError,
        GeometryError,
        SplitError,
        TokenError,
        ViewpointError,
        FileNotFoundError,
        KeyError,
        ValueError,
    ) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
