"""Class-incremental experiment driver.

Attacks are introduced one task at a time (task 0 pairs Benign with the first
attack). The classifier head is sized for every eventual class from the
start; logits of classes not yet introduced take part in the softmax but see
no positive labels until their task arrives. After each task the model is
evaluated on the cumulative test set of all classes seen so far.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .dataset import Dataset, partition
from .errors import ConfigError, DataError
from .fed import FedConfig, make_client_state, run_federation
from .metrics import MetricsRow, confusion_matrix, derive_metrics, forgetting
from .replay import ClearConfig, ReplayBuffer, clear_train_step
from .rng import generator

TAG_CENTRAL = 3
TAG_SCHEDULE = 4
TAG_SYNTH = 5

BENIGN = "Benign"


@dataclass
class TaskSchedule:
    """Ordered class-introduction plan; tasks hold class indices."""

    tasks: list[list[int]]
    class_names: list[str]
    seed: int | None = None

    def __len__(self) -> int:
        return len(self.tasks)

    def introduced_class(self, task_index: int) -> str:
        # the new attack of the task (task 0 also brings Benign along)
        return self.class_names[self.tasks[task_index][-1]]

    def cumulative(self, task_index: int) -> list[int]:
        out: list[int] = []
        for t in self.tasks[: task_index + 1]:
            out.extend(t)
        return out

    def task_names(self) -> list[list[str]]:
        return [[self.class_names[i] for i in t] for t in self.tasks]


def build_schedule(class_names: list[str], order: str = "random", seed: int = 0,
                   explicit: list[str] | None = None) -> TaskSchedule:
    """Task 0 = Benign plus the first attack; every later task adds one attack."""
    if len(class_names) < 2:
        raise ConfigError("need at least Benign and one attack class")
    benign_idx = next((i for i, n in enumerate(class_names) if n.lower() == BENIGN.lower()), None)
    if benign_idx is None:
        raise ConfigError(f"class names must include {BENIGN!r}: {class_names}")
    attack_idx = [i for i in range(len(class_names)) if i != benign_idx]

    if explicit is not None:
        index_of = {class_names[i]: i for i in attack_idx}
        if sorted(explicit) != sorted(index_of):
            raise ConfigError(
                f"explicit order {explicit} must list every attack exactly once "
                f"(attacks: {sorted(index_of)})"
            )
        ordered = [index_of[name] for name in explicit]
    elif order == "random":
        rng = generator(seed, TAG_SCHEDULE)
        ordered = [attack_idx[i] for i in rng.permutation(len(attack_idx))]
    else:
        raise ConfigError(f"unknown schedule order {order!r}")

    tasks = [[benign_idx, ordered[0]]] + [[a] for a in ordered[1:]]
    return TaskSchedule(tasks, list(class_names), seed)


@dataclass
class CentralizedTrainer:
    """Sequential mini-batch training on one node, optionally with replay."""

    clear_cfg: ClearConfig | None = None
    lr: float = 0.01
    batch_size: int = 32
    iterations: int = 1000
    seed: int = 0


@dataclass
class FederatedTrainer:
    """Per task: fed_cfg.rounds of federated averaging over persistent clients."""

    fed_cfg: FedConfig
    mode: str = "clear"
    clear_cfg: ClearConfig | None = None
    partition_scheme: str = "iid"
    dirichlet_alpha: float = 0.5
    f32_boundary: bool = False

    @property
    def seed(self) -> int:
        return self.fed_cfg.seed


@dataclass
class TaskResult:
    task_index: int
    introduced_class: str
    classes_so_far: list[str]
    metrics: MetricsRow
    per_class_recall: dict[str, float]
    wall_time: float = 0.0


@dataclass
class CilReport:
    config: dict
    schedule: list[list[str]]
    class_names: list[str]
    tasks: list[TaskResult] = field(default_factory=list)
    forgetting: dict = field(default_factory=dict)
    wall_time_total: float = 0.0
    trace: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "schedule": self.schedule,
            "class_names": self.class_names,
            "tasks": [
                {
                    "task_index": t.task_index,
                    "introduced_class": t.introduced_class,
                    "classes_so_far": t.classes_so_far,
                    "metrics": t.metrics.as_dict(),
                    "per_class_recall": t.per_class_recall,
                    "wall_time": t.wall_time,
                }
                for t in self.tasks
            ],
            "forgetting": self.forgetting,
            "wall_times": {"total": self.wall_time_total},
            "trace": self.trace,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CilReport":
        rep = cls(doc.get("config", {}), doc["schedule"], doc["class_names"])
        for t in doc["tasks"]:
            rep.tasks.append(
                TaskResult(t["task_index"], t["introduced_class"], t["classes_so_far"],
                           MetricsRow(**t["metrics"]), t["per_class_recall"],
                           t.get("wall_time", 0.0))
            )
        rep.forgetting = doc.get("forgetting", {})
        rep.wall_time_total = doc.get("wall_times", {}).get("total", 0.0)
        rep.trace = doc.get("trace", [])
        return rep


def evaluate_task(model: nn.MlpModel, test_ds: Dataset, schedule: TaskSchedule,
                  task_index: int) -> TaskResult:
    """Metrics on the cumulative test set of every class introduced so far."""
    cum = schedule.cumulative(task_index)
    sub = test_ds.filter_classes(cum)
    if len(sub) == 0:
        raise DataError(f"no test samples for classes of tasks 0..{task_index}")
    preds = nn.predict(model, sub.features)
    cm = confusion_matrix(preds, sub.labels, len(schedule.class_names), schedule.class_names)
    derived = derive_metrics(cm)
    recalls = {
        schedule.class_names[j]: float(derived.per_class_recall[j])
        for j in cum
        if derived.per_class_support[j] > 0
    }
    return TaskResult(task_index, schedule.introduced_class(task_index),
                      [schedule.class_names[j] for j in cum], derived.row, recalls)


def _check_schedule(schedule: TaskSchedule, train_ds: Dataset) -> None:
    if schedule.class_names != train_ds.class_names:
        raise ConfigError("schedule and dataset class names differ")
    counts = train_ds.class_counts()
    for t in schedule.tasks:
        for j in t:
            if counts[j] == 0:
                raise ConfigError(
                    f"scheduled class {train_ds.class_names[j]!r} has no training samples"
                )


def run_cil(schedule: TaskSchedule, trainer, train_ds: Dataset, test_ds: Dataset,
            hidden_dims=(300, 300, 300), value_head: bool = False,
            eval_cadence: int = 0,
            config_echo: dict | None = None) -> tuple[CilReport, nn.MlpModel]:
    """Run the sequential-introduction protocol; returns the report and model."""
    _check_schedule(schedule, train_ds)
    num_classes = len(schedule.class_names)
    model = nn.mlp_init([train_ds.feature_width, *hidden_dims, num_classes],
                        trainer.seed, value_head)
    report = CilReport(config_echo or {}, schedule.task_names(), schedule.class_names)
    started = time.perf_counter()
    recall_history: list[dict[str, float]] = []

    if isinstance(trainer, CentralizedTrainer):
        buffer = ReplayBuffer(trainer.clear_cfg.buffer_capacity) if trainer.clear_cfg else None
        for ti, task in enumerate(schedule.tasks):
            t0 = time.perf_counter()
            task_train = train_ds.filter_classes(task)
            rng = generator(trainer.seed, TAG_CENTRAL, ti)
            model = _train_sequential(model, task_train, trainer, buffer, rng,
                                      report, schedule, test_ds, ti, eval_cadence)
            result = evaluate_task(model, test_ds, schedule, ti)
            result.wall_time = time.perf_counter() - t0
            report.tasks.append(result)
            recall_history.append(result.per_class_recall)
    elif isinstance(trainer, FederatedTrainer):
        cfg = trainer.fed_cfg
        shards = partition(train_ds, cfg.num_clients, trainer.partition_scheme,
                           trainer.dirichlet_alpha, cfg.seed)
        clients = [make_client_state(i, shards[i], cfg, trainer.clear_cfg)
                   for i in range(cfg.num_clients)]
        for ti, task in enumerate(schedule.tasks):
            t0 = time.perf_counter()
            task_classes = list(task)

            def only_task(shard: Dataset, _round: int, _classes=task_classes) -> Dataset:
                return shard.filter_classes(_classes)

            hook = None
            if eval_cadence > 0:
                def hook(r, m, _ti=ti):
                    if (r + 1) % eval_cadence == 0:
                        res = evaluate_task(m, test_ds, schedule, _ti)
                        report.trace.append({"task": _ti, "round": r,
                                             "metrics": res.metrics.as_dict()})
                    return None
            model, _ = run_federation(cfg, None, model, trainer.mode, trainer.clear_cfg,
                                      eval_hook=hook, f32_boundary=trainer.f32_boundary,
                                      round_offset=ti * cfg.rounds, clients=clients,
                                      shard_filter=only_task)
            result = evaluate_task(model, test_ds, schedule, ti)
            result.wall_time = time.perf_counter() - t0
            report.tasks.append(result)
            recall_history.append(result.per_class_recall)
    else:
        raise ConfigError(f"unknown trainer type {type(trainer).__name__}")

    report.forgetting = forgetting(recall_history)
    report.wall_time_total = time.perf_counter() - started
    return report, model


def _train_sequential(model, task_train, trainer: CentralizedTrainer, buffer, rng,
                      report, schedule, test_ds, task_index, eval_cadence):
    n = len(task_train)
    if n == 0:
        raise DataError("task training set is empty")
    batch_size = min(trainer.batch_size, n)
    step = 0
    while step < trainer.iterations:
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            if step >= trainer.iterations:
                break
            idx = perm[start : start + batch_size]
            batch = nn.Batch(task_train.features[idx], task_train.labels[idx])
            if trainer.clear_cfg is not None:
                model, _ = clear_train_step(model, batch, buffer, trainer.clear_cfg,
                                            trainer.lr, rng, step)
            else:
                grads = nn.backward(model, batch)
                model = nn.sgd_step(model, grads, trainer.lr)
            step += 1
            if eval_cadence > 0 and step % eval_cadence == 0:
                res = evaluate_task(model, test_ds, schedule, task_index)
                report.trace.append({"task": task_index, "step": step,
                                     "metrics": res.metrics.as_dict()})
    return model


def generate_synthetic(num_classes: int, per_class, dim: int, separation: float,
                       seed: int = 0, clusters_per_class: int = 1,
                       class_names: list[str] | None = None) -> Dataset:
    """Gaussian-cluster dataset: unit-variance blobs on orthogonal directions.

    per_class is an int or a per-class list; classes with a zero count are
    omitted entirely. Larger separation lowers the Bayes error.
    """
    if num_classes < 1 or dim < 1 or clusters_per_class < 1:
        raise ConfigError("num_classes, dim and clusters_per_class must be >= 1")
    counts = ([int(per_class)] * num_classes if np.isscalar(per_class)
              else [int(c) for c in per_class])
    if len(counts) != num_classes or any(c < 0 for c in counts):
        raise ConfigError("per_class must be a nonnegative count per class")
    names = class_names or [BENIGN] + [f"Attack{i:02d}" for i in range(1, num_classes)]
    if len(names) != num_classes:
        raise ConfigError("class_names length must equal num_classes")

    keep = [i for i in range(num_classes) if counts[i] > 0]
    names = [names[i] for i in keep]
    counts = [counts[i] for i in keep]
    total_clusters = len(keep) * clusters_per_class
    if dim < total_clusters:
        raise ConfigError(f"dim {dim} too small for {total_clusters} orthogonal clusters")

    rng = generator(seed, TAG_SYNTH)
    q, _ = np.linalg.qr(rng.normal(size=(dim, total_clusters)))
    directions = q.T * separation

    feats, labels = [], []
    for c, count in enumerate(counts):
        base = [count // clusters_per_class] * clusters_per_class
        base[0] += count % clusters_per_class
        for j, n_c in enumerate(base):
            mean = directions[c * clusters_per_class + j]
            feats.append(mean + rng.normal(size=(n_c, dim)))
            labels.extend([c] * n_c)
    features = np.vstack(feats)
    labels = np.asarray(labels, dtype=np.int64)
    perm = rng.permutation(len(labels))
    return Dataset(features[perm], labels[perm], names,
                   feature_names=[f"f{i}" for i in range(dim)])
