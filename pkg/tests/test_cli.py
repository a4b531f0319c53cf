import json
from pathlib import Path

import numpy as np
import pytest

from floorseq.cli import main
from floorseq.dataset import synth_plan
from floorseq.geometry import plan_to_json
from floorseq.render import render_svg, sequence_svg
from floorseq.dataset import Quantizer, decode
from floorseq.geometry import Point, Segment


TINY_RUN_CONFIG = {
    "rng_seed": 5,
    "test_fraction": 0.3,
    "view": {"n_segs": 6},
    "sample": {"n_p": 40, "d_pmin": 1.5},
    "model": {
        "n_q": 256,
        "n_segs": 6,
        "embed_dim": 8,
        "layers": 1,
        "heads": 2,
        "dropout": 0.0,
    },
    "sampler": {"top_p": 0.9},
    "train": {"steps": 4, "batch_size": 2, "log_every": 2, "augment": False},
    "distmap": {"k_completions": 2, "inflate_cells": 1, "observe_segments": 3},
}


def write_plans(tmp_path: Path, n=3) -> list[str]:
    paths = []
    for i in range(n):
        plan = synth_plan(i, 2, 1, 4.0, 1.0, building_id=f"bld{i}")
        p = tmp_path / f"plan{i}.json"
        p.write_text(json.dumps(plan_to_json(plan)), encoding="utf-8")
        paths.append(str(p))
    return paths


def write_config(tmp_path: Path) -> str:
    p = tmp_path / "config.json"
    p.write_text(json.dumps(TINY_RUN_CONFIG), encoding="utf-8")
    return str(p)


@pytest.fixture()
def pipeline(tmp_path):
    """ingest + dataset, shared by the command tests."""
    plans = write_plans(tmp_path)
    config = write_config(tmp_path)
    archive = str(tmp_path / "archive.json")
    assert main(["ingest", *plans, "--out", archive]) == 0
    data_dir = str(tmp_path / "data")
    assert main(["dataset", "--archive", archive, "--config", config, "--out", data_dir]) == 0
    return tmp_path, config, archive, data_dir


def test_ingest_valid_plans(tmp_path, capsys):
    plans = write_plans(tmp_path)
    archive = tmp_path / "archive.json"
    assert main(["ingest", *plans, "--out", str(archive)]) == 0
    obj = json.loads(archive.read_text())
    assert len(obj["plans"]) == 3
    out = capsys.readouterr().out
    assert "spaces" in out


def test_ingest_rejects_zero_space_plan(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"building": "b", "floor": "f", "spaces": []}))
    assert main(["ingest", str(bad), "--out", str(tmp_path / "a.json")]) == 2


def test_ingest_rejects_duplicate_ids(tmp_path):
    plan = synth_plan(0, 1, 1, 4.0, 1.0, building_id="dup")
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    a.write_text(json.dumps(plan_to_json(plan)))
    b.write_text(json.dumps(plan_to_json(plan)))
    code = main(["ingest", str(a), str(b), "--out", str(tmp_path / "out.json")])
    assert code == 2


def test_ingest_reports_broken_space_index(tmp_path, capsys):
    obj = {
        "building": "b", "floor": "f",
        "spaces": [{"boundary": [
            {"type": "wall", "x0": 0, "y0": 0, "x1": 1, "y1": 0},
            {"type": "wall", "x0": 1, "y0": 0, "x1": 1, "y1": 1},
            {"type": "wall", "x0": 5, "y0": 5, "x1": 6, "y1": 6},
        ]}],
    }
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(obj))
    assert main(["ingest", str(bad), "--out", str(tmp_path / "a.json")]) == 2
    assert "space 0" in capsys.readouterr().err


def test_dataset_manifest_disjoint_buildings(pipeline):
    tmp_path, config, archive, data_dir = pipeline
    manifest = json.loads((Path(data_dir) / "manifest.json").read_text())
    assert set(manifest["test_buildings"]).isdisjoint(manifest["train_buildings"])
    assert manifest["train_records"] > 0 and manifest["test_records"] > 0


def test_dataset_deterministic(pipeline, tmp_path):
    _, config, archive, data_dir = pipeline
    second = str(tmp_path / "data2")
    assert main(["dataset", "--archive", archive, "--config", config, "--out", second]) == 0
    for name in ("train.jsonl", "test.jsonl", "manifest.json"):
        assert (Path(data_dir) / name).read_bytes() == (Path(second) / name).read_bytes()


def test_dataset_empty_archive_errors(tmp_path):
    config = write_config(tmp_path)
    empty = tmp_path / "empty.json"
    empty.write_text(json.dumps({"plans": []}))
    assert main(["dataset", "--archive", str(empty), "--config", config,
                 "--out", str(tmp_path / "d")]) == 2


def test_train_eval_sample_distmap_render(pipeline, tmp_path):
    _, config, archive, data_dir = pipeline
    run = tmp_path / "run"
    code = main(["train", "--dataset", f"{data_dir}/train.jsonl", "--config", config,
                 "--out", str(run)])
    assert code == 0
    ckpt = run / "checkpoint.fsq"
    assert ckpt.exists() and (run / "metrics.jsonl").exists()

    report = tmp_path / "report.json"
    assert main(["eval", "--dataset", f"{data_dir}/test.jsonl", "--checkpoint", str(ckpt),
                 "--config", config, "--out", str(report),
                 "--dyads", str(tmp_path / "dyads")]) == 0
    obj = json.loads(report.read_text())
    assert obj["token_count"] > 0 and obj["nll_bits_per_token"] > 0
    assert (tmp_path / "dyads.csv").exists()

    samples = tmp_path / "samples"
    assert main(["sample", "--checkpoint", str(ckpt), "--config", config,
                 "--out", str(samples), "--num", "2",
                 "--dataset", f"{data_dir}/test.jsonl", "--prefix-segments", "2"]) == 0
    lines = (samples / "samples.jsonl").read_text().strip().splitlines()
    assert len(lines) == 2
    q = Quantizer()
    for line in lines:
        row = json.loads(line)
        decode(row["tokens"], q)
        assert row["prefix_tokens"] == 12
    assert (samples / "sample-000.svg").exists()

    dist = tmp_path / "dist"
    assert main(["distmap", "--checkpoint", str(ckpt), "--config", config,
                 "--dataset", f"{data_dir}/test.jsonl", "--out", str(dist),
                 "--scenes", "1", "--k-completions", "2"]) == 0
    stats = json.loads((dist / "stats.json").read_text())
    assert set(stats) == {"predicted", "observed_only"}
    assert (dist / "d_hat.pgm").exists()

    render_dir = tmp_path / "rendered"
    assert main(["render", "--input", str(samples / "samples.jsonl"), "--config", config,
                 "--out", str(render_dir)]) == 0
    assert (render_dir / "render-000.svg").exists()


def test_eval_uniform_baseline_matches_table(pipeline, tmp_path, capsys):
    _, config, archive, data_dir = pipeline
    report = tmp_path / "uniform.json"
    assert main(["eval", "--dataset", f"{data_dir}/test.jsonl", "--baseline", "uniform",
                 "--config", config, "--out", str(report)]) == 0
    obj = json.loads(report.read_text())
    assert round(obj["nll_bits_per_token"], 2) == 8.02
    assert round(obj["top1_accuracy"] * 100, 1) == 0.4
    assert round(obj["top5_accuracy"] * 100, 1) == 1.9


def test_eval_nn_baseline(pipeline, tmp_path):
    _, config, archive, data_dir = pipeline
    report = tmp_path / "nn.json"
    assert main(["eval", "--dataset", f"{data_dir}/test.jsonl", "--baseline", "nn",
                 "--train-dataset", f"{data_dir}/train.jsonl",
                 "--config", config, "--out", str(report)]) == 0
    obj = json.loads(report.read_text())
    assert obj["nll_bits_per_token"] is None


def test_usage_errors_exit_one(tmp_path):
    assert main(["no-such-command"]) == 1
    assert main(["eval", "--dataset", "x.jsonl", "--out", "r.json"]) == 1


def test_missing_file_is_data_error(tmp_path):
    config = write_config(tmp_path)
    assert main(["dataset", "--archive", str(tmp_path / "none.json"),
                 "--config", config, "--out", str(tmp_path / "d")]) == 2


def test_unknown_config_keys_rejected(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"rng_seed": 1, "nonsense": {}}))
    assert main(["dataset", "--archive", "a", "--config", str(bad),
                 "--out", str(tmp_path / "d")]) == 2
    bad.write_text(json.dumps({"model": {"embed_dim": 8, "bogus_key": 1}}))
    assert main(["dataset", "--archive", "a", "--config", str(bad),
                 "--out", str(tmp_path / "d")]) == 2


# -- SVG rendering -------------------------------------------------------------


def test_render_svg_empty_is_valid():
    svg = render_svg([("observed", []), ("generated", [])])
    assert svg.startswith("<?xml") and "</svg>" in svg
    assert "polyline" not in svg


def test_render_svg_one_segment_one_polyline():
    svg = render_svg([("generated", [Segment(Point(0, 0), Point(1, 1))])])
    assert svg.count("<polyline") == 1
    assert "#1f77b4" in svg


def test_render_svg_deterministic():
    segs = [Segment(Point(0, 0), Point(1, 1)), Segment(Point(1, 1), Point(2, 0))]
    a = render_svg([("observed", segs)])
    b = render_svg([("observed", segs)])
    assert a == b


def test_sequence_svg_rejects_undecodable():
    from floorseq.dataset import TokenError

    with pytest.raises(TokenError) as err:
        sequence_svg([1, 1, 1, 1, 1, 1, 0], Quantizer())
    assert err.value.index == 1
