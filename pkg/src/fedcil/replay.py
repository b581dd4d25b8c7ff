"""Experience replay for the supervised continual-learning trainer.

The buffer keeps a uniform reservoir sample of the stream of training
examples, each stored with the class distribution the model emitted when the
example was seen. clear_train_step mixes fresh and replayed samples and adds
distribution-cloning penalties on the replayed ones, so the network keeps
matching its own historical outputs while it learns new classes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, DimensionError, EmptyBufferError
from . import nn


@dataclass
class ReplayEntry:
    features: np.ndarray
    label: int
    stored_probs: np.ndarray
    stored_value: float = 0.0
    insert_step: int = 0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.stored_probs = np.asarray(self.stored_probs, dtype=np.float64)
        if abs(self.stored_probs.sum() - 1.0) > 1e-6:
            raise DataError("stored_probs must be normalized")


class ReplayBuffer:
    """Capacity-bounded reservoir over the sample stream (default 100 slots)."""

    def __init__(self, capacity: int = 100):
        if capacity < 1:
            raise ConfigError("buffer capacity must be >= 1")
        self.capacity = capacity
        self.entries: list[ReplayEntry] = []
        self.seen_count = 0

    def __len__(self) -> int:
        return len(self.entries)

    def insert(self, entry: ReplayEntry, rng: np.random.Generator) -> None:
        """Reservoir insert: item n survives with probability capacity/n."""
        if self.entries and entry.features.shape != self.entries[0].features.shape:
            raise DimensionError("entry feature width differs from buffer contents")
        self.seen_count += 1
        if len(self.entries) < self.capacity:
            self.entries.append(entry)
        else:
            slot = int(rng.integers(0, self.seen_count))
            if slot < self.capacity:
                self.entries[slot] = entry

    def sample(self, k: int, rng: np.random.Generator) -> list[ReplayEntry]:
        """k entries uniformly with replacement."""
        if not self.entries:
            raise EmptyBufferError("cannot sample from an empty replay buffer")
        if k == 0:
            return []
        idx = rng.integers(0, len(self.entries), size=k)
        return [self.entries[i] for i in idx]

    def to_json(self) -> str:
        return json.dumps(
            {
                "capacity": self.capacity,
                "seen_count": self.seen_count,
                "entries": [
                    {
                        "features": e.features.tolist(),
                        "label": int(e.label),
                        "stored_probs": e.stored_probs.tolist(),
                        "stored_value": float(e.stored_value),
                        "insert_step": int(e.insert_step),
                    }
                    for e in self.entries
                ],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "ReplayBuffer":
        doc = json.loads(text)
        buf = cls(doc["capacity"])
        buf.seen_count = doc["seen_count"]
        for e in doc["entries"]:
            buf.entries.append(
                ReplayEntry(
                    np.asarray(e["features"]),
                    e["label"],
                    np.asarray(e["stored_probs"]),
                    e["stored_value"],
                    e["insert_step"],
                )
            )
        return buf


@dataclass
class ClearConfig:
    """Replay mixing and cloning-penalty weights for clear_train_step."""

    replay_fraction: float = 0.5
    kl_weight: float = 1.0
    value_weight: float = 0.0
    buffer_capacity: int = 100

    def __post_init__(self):
        if not (0.0 <= self.replay_fraction <= 1.0):
            raise ConfigError("replay_fraction must lie in [0, 1]")
        if self.kl_weight < 0 or self.value_weight < 0:
            raise ConfigError("cloning weights must be >= 0")
        if self.buffer_capacity < 1:
            raise ConfigError("buffer capacity must be >= 1")


@dataclass
class StepStats:
    loss: float
    n_new: int
    n_replay: int
    replay_skipped: bool


def clear_train_step(
    model: nn.MlpModel,
    new_batch: nn.Batch,
    buffer: ReplayBuffer,
    cfg: ClearConfig,
    lr: float,
    rng: np.random.Generator,
    step: int = 0,
) -> tuple[nn.MlpModel, StepStats]:
    """One SGD step on a mixed new/replay mini-batch, then buffer insertion.

    The mixed batch keeps the size of new_batch: replay_fraction of the rows
    are drawn from the buffer, the rest from new_batch. Cross-entropy applies
    to every row; KL cloning to the stored distribution and (optionally)
    value cloning apply to the replayed rows only. Afterwards every new_batch
    sample is reservoir-inserted with the pre-step model's output as its
    stored distribution. With replay_fraction 0 and zero cloning weights the
    step is bit-identical to a plain supervised step on new_batch.
    """
    if len(new_batch) == 0:
        raise DataError("clear_train_step requires a non-empty new batch")
    total = len(new_batch)
    replay_skipped = len(buffer) == 0 or cfg.replay_fraction == 0.0
    n_replay = 0 if replay_skipped else int(round(cfg.replay_fraction * total))
    n_replay = min(n_replay, total)
    n_new = total - n_replay

    if n_new == total:
        new_feats = new_batch.features
        new_labels = new_batch.labels
    else:
        keep = np.sort(rng.choice(total, size=n_new, replace=False))
        new_feats = new_batch.features[keep]
        new_labels = new_batch.labels[keep]

    if n_replay > 0:
        replayed = buffer.sample(n_replay, rng)
        feats = np.vstack([new_feats, [e.features for e in replayed]]) if n_new else np.asarray(
            [e.features for e in replayed]
        )
        labels = np.concatenate([new_labels, [e.label for e in replayed]])
        spec = nn.LossSpec(
            kl_weight=cfg.kl_weight,
            value_weight=cfg.value_weight if model.has_value_head else 0.0,
            stored_probs=np.asarray([e.stored_probs for e in replayed]),
            stored_values=np.asarray([e.stored_value for e in replayed]),
            replay_rows=np.arange(n_new, n_new + n_replay),
        )
        if spec.kl_weight == 0 and spec.value_weight == 0:
            spec = nn.LossSpec()
        mixed = nn.Batch(feats, labels)
    else:
        mixed = nn.Batch(new_feats, new_labels)
        spec = nn.LossSpec()

    loss = nn.loss_value(model, mixed, spec)
    grads = nn.backward(model, mixed, spec)
    updated = nn.sgd_step(model, grads, lr)

    # store distributions from the pre-step model: they describe the policy
    # that actually processed these samples
    probs = nn.predict_probs(model, new_batch.features)
    values = (
        nn.value_forward(model, new_batch.features)
        if model.has_value_head
        else np.zeros(total)
    )
    for i in range(total):
        buffer.insert(
            ReplayEntry(
                new_batch.features[i].copy(),
                int(new_batch.labels[i]),
                probs[i].copy(),
                float(values[i]),
                step,
            ),
            rng,
        )
    return updated, StepStats(loss, n_new, n_replay, replay_skipped)
