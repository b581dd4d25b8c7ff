import json
import os

import numpy as np
import pytest

from fedcil.cli import main
from fedcil.dataset import load_flow_csv
from fedcil.flows import FEATURE_NAMES, PacketRecord, write_packet_csv


def toy_config(tmp_path, out_dir, **overrides):
    doc = {
        "seed": 7,
        "synthetic": {"enabled": True, "classes": 3, "per_class": 80, "dim": 8,
                      "separation": 4.0},
        "model": {"hidden_dims": [12]},
        "train": {"lr": 0.1, "batch_size": 16, "iterations": 30},
        "clear": {"enabled": True, "buffer_capacity": 50, "replay_fraction": 0.5,
                  "kl_weight": 1.0},
        "federation": {"clients": 3, "rounds": 2, "local_iterations": 4,
                       "batch_size": 16},
        "output": {"dir": str(out_dir)},
    }
    for key, value in overrides.items():
        doc[key] = value
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return str(path)


# ---------------------------------------------------------------- synth

def test_synth_writes_expected_row_count(tmp_path):
    out = tmp_path / "toy.csv"
    code = main(["synth", "--classes", "4", "--per-class", "500", "--dim", "12",
                 "--seed", "7", "-o", str(out)])
    assert code == 0
    ds = load_flow_csv(out, drop_constant=False)
    assert len(ds) == 2000
    assert len(ds.class_names) == 4


def test_synth_byte_identical_for_same_seed(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["synth", "--seed", "3", "-o", str(a)]) == 0
    assert main(["synth", "--seed", "3", "-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_synth_zero_per_class_is_usage_error(tmp_path):
    assert main(["synth", "--per-class", "0", "-o", str(tmp_path / "x.csv")]) == 2


# ---------------------------------------------------------------- preprocess

def packet_fixture(tmp_path):
    packets = [
        PacketRecord(0.0, "10.0.0.1", "10.0.0.9", 1000, 80, "TCP", 40, 0x02),
        PacketRecord(0.2, "10.0.0.9", "10.0.0.1", 80, 1000, "TCP", 44, 0x12),
        PacketRecord(0.5, "10.0.0.2", "10.0.0.9", 53, 53, "UDP", 120, 0),
        PacketRecord(0.9, "10.0.0.2", "10.0.0.9", 53, 53, "UDP", 80, 0),
    ]
    path = tmp_path / "packets.csv"
    write_packet_csv(packets, path)
    return path


def test_preprocess_packets_to_feature_csv(tmp_path):
    src = packet_fixture(tmp_path)
    out = tmp_path / "flows.csv"
    code = main(["preprocess", "--input", str(src), "--kind", "packet",
                 "--normalize", "none", "--label", "Benign", "-o", str(out)])
    assert code == 0
    header = out.read_text().splitlines()[0].split(",")
    assert header == FEATURE_NAMES + ["label"]
    ds = load_flow_csv(out, drop_constant=False)
    assert len(ds) == 2  # two flows
    assert ds.class_names == ["Benign"]


def test_preprocess_stats_application_idempotent(tmp_path):
    src = tmp_path / "raw.csv"
    assert main(["synth", "--seed", "5", "--classes", "2", "--per-class", "30",
                 "--dim", "4", "-o", str(src)]) == 0
    once = tmp_path / "once.csv"
    assert main(["preprocess", "--input", str(src), "--normalize", "minmax",
                 "-o", str(once)]) == 0
    stats = str(once) + ".norm.json"
    assert os.path.exists(stats)
    # re-applying fresh stats to the already-normalized output changes nothing
    twice = tmp_path / "twice.csv"
    assert main(["preprocess", "--input", str(once), "--normalize", "minmax",
                 "-o", str(twice)]) == 0
    a = load_flow_csv(once, drop_constant=False)
    b = load_flow_csv(twice, drop_constant=False)
    assert np.allclose(a.features, b.features, atol=1e-12)


def test_preprocess_bad_label_column_exits_2(tmp_path):
    src = tmp_path / "raw.csv"
    assert main(["synth", "--seed", "5", "-o", str(src)]) == 0
    assert main(["preprocess", "--input", str(src), "--label-column", "nope",
                 "-o", str(tmp_path / "x.csv")]) == 2


# ---------------------------------------------------------------- central / fed

def test_central_run_emits_all_artifacts(tmp_path):
    out_dir = tmp_path / "run"
    cfg = toy_config(tmp_path, out_dir)
    assert main(["central", "--config", cfg]) == 0
    report = json.loads((out_dir / "report.json").read_text())
    assert len(report["tasks"]) == 2  # 3 classes -> 2 tasks
    assert report["config"]["seed"] == 7
    csv_lines = (out_dir / "report.csv").read_text().splitlines()
    assert csv_lines[0].startswith("task_index,Multiclass Acc.")
    assert len(csv_lines) == 3
    assert (out_dir / "report_metrics_over_tasks.png").exists()
    assert (out_dir / "report_per_class_recall.png").exists()
    assert (out_dir / "model.bin").exists()


def test_central_missing_dataset_exits_2(tmp_path):
    cfg = toy_config(tmp_path, tmp_path / "run",
                     synthetic={"enabled": False},
                     dataset={"flow_csv": str(tmp_path / "missing.csv")})
    assert main(["central", "--config", cfg]) == 2


def test_unknown_config_key_exits_2(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"seeds": 1}))
    assert main(["central", "--config", str(path)]) == 2


def test_fed_sim_deterministic_and_reports(tmp_path):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    cfg1 = toy_config(tmp_path, out1)
    assert main(["fed", "--config", cfg1, "--mode", "sim", "--no-figures"]) == 0
    cfg2_path = tmp_path / "config2.json"
    cfg2_doc = json.loads(open(cfg1).read())
    cfg2_doc["output"]["dir"] = str(out2)
    cfg2_path.write_text(json.dumps(cfg2_doc))
    assert main(["fed", "--config", str(cfg2_path), "--mode", "sim", "--no-figures"]) == 0
    assert (out1 / "model.bin").read_bytes() == (out2 / "model.bin").read_bytes()
    r1 = json.loads((out1 / "report.json").read_text())
    assert len(r1["tasks"]) == 2


def test_fed_export_shards(tmp_path):
    out_dir = tmp_path / "run"
    shards_dir = tmp_path / "shards"
    cfg = toy_config(tmp_path, out_dir)
    assert main(["fed", "--config", cfg, "--mode", "sim", "--no-figures",
                 "--export-shards", str(shards_dir)]) == 0
    files = sorted(os.listdir(shards_dir))
    assert files == ["shard_000.csv", "shard_001.csv", "shard_002.csv"]
    total = sum(len(load_flow_csv(shards_dir / f, drop_constant=False)) for f in files)
    assert total == 3 * round(0.7 * 80)  # per-class stratified rounding


# ---------------------------------------------------------------- report / client

def test_report_rerenders_from_json(tmp_path):
    out_dir = tmp_path / "run"
    cfg = toy_config(tmp_path, out_dir)
    assert main(["central", "--config", cfg, "--no-figures"]) == 0
    render_dir = tmp_path / "render"
    assert main(["report", "--input", str(out_dir / "report.json"),
                 "--out-dir", str(render_dir)]) == 0
    assert (render_dir / "report.csv").exists()
    assert (render_dir / "report_metrics_over_tasks.png").exists()
    first = (out_dir / "report.csv").read_text()
    second = (render_dir / "report.csv").read_text()
    assert first == second


def test_client_dead_address_exits_3(tmp_path):
    shard = tmp_path / "shard.csv"
    assert main(["synth", "--seed", "2", "--classes", "2", "--per-class", "20",
                 "--dim", "4", "-o", str(shard)]) == 0
    cfg = toy_config(tmp_path, tmp_path / "run",
                     synthetic={"enabled": True, "classes": 2, "per_class": 20,
                                "dim": 4, "separation": 4.0})
    code = main(["client", "--config", cfg, "--connect", "127.0.0.1:1",
                 "--client-id", "0", "--shard", str(shard)])
    assert code == 3


def test_no_subcommand_prints_help_and_exits_2():
    assert main([]) == 2
