import json

import numpy as np
import pytest

from fedcil import nn
from fedcil.cil import (CentralizedTrainer, CilReport, FederatedTrainer, build_schedule,
                        evaluate_task, generate_synthetic, run_cil)
from fedcil.dataset import stratified_split
from fedcil.errors import ConfigError
from fedcil.fed import FedConfig
from fedcil.replay import ClearConfig


def small_synth(seed=0, classes=4, per_class=120, dim=8, separation=4.0):
    return generate_synthetic(classes, per_class, dim, separation, seed)


# ---------------------------------------------------------------- schedule

def test_nine_classes_give_eight_tasks():
    names = ["Benign"] + [f"A{i}" for i in range(1, 9)]
    sched = build_schedule(names, seed=3)
    assert len(sched) == 8
    assert len(sched.tasks[0]) == 2 and sched.tasks[0][0] == 0
    assert all(len(t) == 1 for t in sched.tasks[1:])
    flat = [c for t in sched.tasks for c in t]
    assert sorted(flat) == list(range(9))


def test_two_classes_single_task():
    sched = build_schedule(["Benign", "Scan"])
    assert len(sched) == 1 and sched.tasks == [[0, 1]]


def test_schedule_deterministic_per_seed():
    names = ["Benign", "A", "B", "C", "D"]
    assert build_schedule(names, seed=5).tasks == build_schedule(names, seed=5).tasks
    assert build_schedule(names, seed=5).tasks != build_schedule(names, seed=6).tasks


def test_explicit_order_respected_and_validated():
    names = ["Benign", "Flood", "Scan"]
    sched = build_schedule(names, explicit=["Scan", "Flood"])
    assert sched.tasks == [[0, 2], [1]]
    with pytest.raises(ConfigError):
        build_schedule(names, explicit=["Scan"])  # missing Flood
    with pytest.raises(ConfigError):
        build_schedule(names, explicit=["Scan", "Flood", "Ghost"])


def test_schedule_requires_benign():
    with pytest.raises(ConfigError):
        build_schedule(["Flood", "Scan"])
    with pytest.raises(ConfigError):
        build_schedule(["Benign"])


# ---------------------------------------------------------------- synthetic

def test_synthetic_deterministic_per_seed():
    a = small_synth(seed=9)
    b = small_synth(seed=9)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.labels, b.labels)
    c = small_synth(seed=10)
    assert not np.array_equal(a.features, c.features)


def test_synthetic_zero_count_class_is_absent_and_schedule_rejects_it():
    ds = generate_synthetic(4, [100, 100, 0, 100], 8, 4.0, seed=1)
    assert len(ds.class_names) == 3
    assert "Attack02" not in ds.class_names
    with pytest.raises(ConfigError):
        build_schedule(ds.class_names, explicit=["Attack01", "Attack02", "Attack03"])


def test_synthetic_large_separation_linear_probe():
    ds = generate_synthetic(3, 200, 8, 8.0, seed=4)
    train, test = stratified_split(ds, (0.7, 0.3), seed=4)
    model = nn.mlp_init([8, 3], seed=0)  # linear probe
    rng = np.random.default_rng(0)
    for _ in range(300):
        idx = rng.integers(0, len(train), size=32)
        batch = nn.Batch(train.features[idx], train.labels[idx])
        model = nn.sgd_step(model, nn.backward(model, batch), 0.5)
    acc = float(np.mean(nn.predict(model, test.features) == test.labels))
    assert acc >= 0.99


def test_synthetic_shapes_and_guards():
    ds = generate_synthetic(2, 50, 6, 3.0, seed=0, clusters_per_class=2)
    assert len(ds) == 100 and ds.feature_width == 6
    with pytest.raises(ConfigError):
        generate_synthetic(4, 10, 2, 3.0, seed=0)  # dim too small
    with pytest.raises(ConfigError):
        generate_synthetic(2, [5], 4, 3.0, seed=0)


# ---------------------------------------------------------------- run_cil

def split_synth(seed=0, **kw):
    full = small_synth(seed=seed, **kw)
    return stratified_split(full, (0.7, 0.3), seed=seed)


def test_single_task_schedule_equals_plain_training_plus_eval():
    train, test = split_synth(seed=2, classes=2, per_class=150)
    sched = build_schedule(train.class_names)
    trainer = CentralizedTrainer(None, lr=0.1, batch_size=16, iterations=80, seed=7)
    report, model = run_cil(sched, trainer, train, test, hidden_dims=(16,))
    assert len(report.tasks) == 1
    row = report.tasks[0].metrics
    assert row.multiclass_accuracy > 0.9
    again = evaluate_task(model, test, sched, 0)
    assert again.metrics.as_dict() == report.tasks[0].metrics.as_dict()


def test_cumulative_evaluation_covers_exactly_introduced_classes():
    train, test = split_synth(seed=3)
    sched = build_schedule(train.class_names, seed=1)
    trainer = CentralizedTrainer(ClearConfig(), lr=0.1, batch_size=16,
                                 iterations=40, seed=3)
    report, _ = run_cil(sched, trainer, train, test, hidden_dims=(16,))
    assert len(report.tasks) == 3
    for ti, task in enumerate(report.tasks):
        expected = {sched.class_names[j] for j in sched.cumulative(ti)}
        assert set(task.classes_so_far) == expected
        assert set(task.per_class_recall) <= expected


def test_rerun_is_bit_identical():
    train, test = split_synth(seed=4)
    sched = build_schedule(train.class_names, seed=2)
    trainer = CentralizedTrainer(ClearConfig(), lr=0.1, batch_size=16,
                                 iterations=30, seed=5)
    r1, m1 = run_cil(sched, trainer, train, test, hidden_dims=(12,))
    r2, m2 = run_cil(sched, trainer, train, test, hidden_dims=(12,))
    assert nn.serialize_model(m1) == nn.serialize_model(m2)
    d1, d2 = r1.to_dict(), r2.to_dict()
    for d in (d1, d2):
        d.pop("wall_times")
        for t in d["tasks"]:
            t.pop("wall_time")
    assert json.dumps(d1, sort_keys=True) == json.dumps(d2, sort_keys=True)


def test_schedule_dataset_mismatch_rejected():
    train, test = split_synth(seed=5)
    sched = build_schedule(["Benign", "Other"])
    trainer = CentralizedTrainer(None, iterations=5, seed=0)
    with pytest.raises(ConfigError):
        run_cil(sched, trainer, train, test, hidden_dims=(8,))


def test_federated_trainer_runs_and_reports():
    train, test = split_synth(seed=6, per_class=100)
    sched = build_schedule(train.class_names, seed=3)
    fed_cfg = FedConfig(num_clients=3, rounds=2, batch_size=16, local_iterations=5,
                        lr=0.1, seed=11)
    trainer = FederatedTrainer(fed_cfg, "clear", ClearConfig())
    report, model = run_cil(sched, trainer, train, test, hidden_dims=(12,))
    assert len(report.tasks) == 3
    assert model.layer_dims == [train.feature_width, 12, 4]
    for row in (t.metrics for t in report.tasks):
        for v in row.as_dict().values():
            assert 0.0 <= v <= 1.0


def test_replay_beats_no_replay_on_first_task_recall():
    train, test = split_synth(seed=12, classes=4, per_class=150, separation=3.5)
    sched = build_schedule(train.class_names, seed=0)
    base = dict(lr=0.1, batch_size=20, iterations=150, seed=4)
    with_replay = CentralizedTrainer(
        ClearConfig(replay_fraction=0.5, kl_weight=1.0, buffer_capacity=100), **base)
    no_replay = CentralizedTrainer(None, **base)
    rep_replay, _ = run_cil(sched, with_replay, train, test, hidden_dims=(24,))
    rep_plain, _ = run_cil(sched, no_replay, train, test, hidden_dims=(24,))

    first_classes = [sched.class_names[j] for j in sched.tasks[0]]

    def first_task_recall(report):
        final = report.tasks[-1].per_class_recall
        return np.mean([final[c] for c in first_classes])

    assert first_task_recall(rep_replay) >= first_task_recall(rep_plain) + 0.10


def test_report_json_roundtrip():
    train, test = split_synth(seed=8)
    sched = build_schedule(train.class_names, seed=1)
    trainer = CentralizedTrainer(ClearConfig(), lr=0.1, batch_size=16,
                                 iterations=20, seed=2)
    report, _ = run_cil(sched, trainer, train, test, hidden_dims=(8,),
                        config_echo={"note": "test"})
    back = CilReport.from_dict(json.loads(json.dumps(report.to_dict())))
    assert back.config == {"note": "test"}
    assert back.schedule == report.schedule
    assert [t.metrics.as_dict() for t in back.tasks] == \
           [t.metrics.as_dict() for t in report.tasks]
    assert back.forgetting == report.forgetting
