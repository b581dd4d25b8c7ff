"""Synchronous federated averaging: sampling, local SGD, weighted aggregation.

Simulation mode runs every client in-process. Each round draws a client
subset, broadcasts the global weights, runs local training, and replaces the
global model with the sample-count-weighted mean of the returned weights.
Every random stream is derived from (seed, tag, round, client), so the
networked mode in wire.py reproduces simulation bit-for-bit once weights are
rounded through the float32 wire boundary.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .dataset import Dataset
from .errors import AggregationError, ConfigError, DataError
from .replay import ClearConfig, ReplayBuffer, clear_train_step
from .rng import generator

TAG_SELECT = 1
TAG_CLIENT = 2
TAG_VALUE_HEAD = 6


@dataclass
class FedConfig:
    """Federation hyperparameters.

    num_clients is the total population, participation the per-round fraction
    (at least one client always runs), batch_size the local mini-batch size.
    Local work is either local_epochs full passes or local_iterations
    mini-batch steps; exactly one of the two must be set.
    """

    num_clients: int
    rounds: int
    batch_size: int = 32
    local_epochs: int | None = None
    local_iterations: int | None = None
    participation: float = 1.0
    lr: float = 0.01
    seed: int = 0
    timeout: float = 30.0

    def __post_init__(self):
        if self.num_clients < 1:
            raise ConfigError("num_clients must be >= 1")
        if not (0.0 < self.participation <= 1.0):
            raise ConfigError("participation must lie in (0, 1]")
        if (self.local_epochs is None) == (self.local_iterations is None):
            raise ConfigError("set exactly one of local_epochs / local_iterations")
        if self.batch_size < 1 or self.rounds < 0 or self.lr <= 0:
            raise ConfigError("invalid batch_size/rounds/lr")

    @property
    def clients_per_round(self) -> int:
        return max(int(self.participation * self.num_clients), 1)


@dataclass
class ClientState:
    """One client's durable state: its shard, replay buffer, and model.

    The trunk is replaced by every broadcast; a value head (used only when
    value cloning is on) never crosses the wire, so it is attached locally on
    first adoption and survives later rounds.
    """

    client_id: int
    shard: Dataset
    buffer: ReplayBuffer
    model: nn.MlpModel | None = None
    value_head_seed: int | None = None

    def adopt_global(self, global_model: nn.MlpModel) -> None:
        if self.model is None or self.model.layer_dims != global_model.layer_dims:
            self.model = global_model.copy()
            if self.value_head_seed is not None and not self.model.has_value_head:
                self.model = nn.attach_value_head(self.model, self.value_head_seed)
        else:
            self.model.weights = [w.copy() for w in global_model.weights]
            self.model.biases = [b.copy() for b in global_model.biases]


@dataclass
class ClientUpdate:
    client_id: int
    model: nn.MlpModel
    n_samples: int
    round_index: int
    losses: list[float] = field(default_factory=list)
    batch_clipped: bool = False


@dataclass
class RoundRecord:
    round_index: int
    selected: list[int]
    dropped: list[int]
    mean_loss: float | None
    metrics: dict | None = None


RoundHistory = list[RoundRecord]


def make_client_state(client_id: int, shard: Dataset, cfg: FedConfig,
                      clear_cfg: ClearConfig | None) -> ClientState:
    """Fresh client state; value-head seed derived so all modes agree."""
    cap = clear_cfg.buffer_capacity if clear_cfg else 100
    head_seed = None
    if clear_cfg is not None and clear_cfg.value_weight > 0:
        from .rng import derive_seed
        head_seed = derive_seed(cfg.seed, TAG_VALUE_HEAD, client_id)
    return ClientState(client_id, shard, ReplayBuffer(cap), value_head_seed=head_seed)


def sample_clients(num_clients: int, participation: float, rng: np.random.Generator) -> list[int]:
    """Uniform m-subset without replacement, m = max(floor(C*K), 1)."""
    m = max(int(participation * num_clients), 1)
    picked = rng.choice(num_clients, size=m, replace=False)
    return sorted(int(c) for c in picked)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def local_update(global_model: nn.MlpModel, client: ClientState, cfg: FedConfig,
                 mode: str = "plain", clear_cfg: ClearConfig | None = None,
                 round_index: int = 0, shard: Dataset | None = None) -> ClientUpdate:
    """Local training from the broadcast weights; returns weights and n_k.

    `shard` overrides the client's stored shard (used when a schedule
    restricts training to the current task's classes).
    """
    data = shard if shard is not None else client.shard
    if len(data) == 0:
        raise DataError(f"client {client.client_id} has no local data")
    if mode not in ("plain", "clear"):
        raise ConfigError(f"unknown local training mode {mode!r}")
    if mode == "clear" and clear_cfg is None:
        raise ConfigError("mode 'clear' requires a ClearConfig")

    client.adopt_global(global_model)
    rng = generator(cfg.seed, TAG_CLIENT, round_index, client.client_id)
    batch_size = min(cfg.batch_size, len(data))
    clipped = batch_size < cfg.batch_size

    losses: list[float] = []
    model = client.model
    step = 0

    def run_step(idx: np.ndarray) -> None:
        nonlocal model, step
        batch = nn.Batch(data.features[idx], data.labels[idx])
        if mode == "clear":
            model, stats = clear_train_step(model, batch, client.buffer, clear_cfg,
                                            cfg.lr, rng, step)
            losses.append(stats.loss)
        else:
            loss = nn.loss_value(model, batch)
            grads = nn.backward(model, batch)
            model = nn.sgd_step(model, grads, cfg.lr)
            losses.append(loss)
        step += 1

    if cfg.local_epochs is not None:
        for _ in range(cfg.local_epochs):
            for idx in _batches(len(data), batch_size, rng):
                run_step(idx)
    else:
        remaining = cfg.local_iterations
        while remaining > 0:
            for idx in _batches(len(data), batch_size, rng):
                run_step(idx)
                remaining -= 1
                if remaining == 0:
                    break

    client.model = model
    return ClientUpdate(client.client_id, model.copy(), len(data), round_index,
                        losses, clipped)


def aggregate(updates: list[ClientUpdate]) -> nn.MlpModel:
    """Sample-count-weighted mean of client weights, summed in client-id order."""
    if not updates:
        raise AggregationError("aggregate requires at least one update")
    ordered = sorted(updates, key=lambda u: u.client_id)
    ref = ordered[0].model
    for u in ordered[1:]:
        if u.model.layer_dims != ref.layer_dims:
            raise AggregationError(
                f"client {u.client_id} weights shaped {u.model.layer_dims}, "
                f"expected {ref.layer_dims}"
            )
    if len(ordered) == 1:
        return ref.copy()
    n_total = sum(u.n_samples for u in ordered)
    if n_total <= 0:
        raise AggregationError("total sample count must be positive")
    # anchored form of the weighted mean: exact when every update is equal
    out = ref.copy()
    for u in ordered[1:]:
        alpha = u.n_samples / n_total
        for i in range(len(out.weights)):
            out.weights[i] += alpha * (u.model.weights[i] - ref.weights[i])
            out.biases[i] += alpha * (u.model.biases[i] - ref.biases[i])
    return out


def run_federation(cfg: FedConfig, shards: list[Dataset] | None,
                   model_init: nn.MlpModel, mode: str = "plain",
                   clear_cfg: ClearConfig | None = None,
                   eval_hook=None, f32_boundary: bool = False,
                   round_offset: int = 0,
                   clients: list[ClientState] | None = None,
                   shard_filter=None) -> tuple[nn.MlpModel, RoundHistory]:
    """Run cfg.rounds synchronous rounds in-process.

    Pass `clients` to keep buffers/models alive across calls (the incremental
    protocol reuses them between tasks). shard_filter(client_shard, round)
    may restrict what a client trains on for a given round; a client left
    with no data abstains from that round's aggregate. With f32_boundary the
    broadcast and the returned client weights are rounded through float32,
    matching what the wire protocol transmits.
    """
    if clients is None:
        if shards is None or len(shards) != cfg.num_clients:
            raise ConfigError("need one shard per client")
        clients = [make_client_state(i, shards[i], cfg, clear_cfg)
                   for i in range(cfg.num_clients)]
    elif len(clients) != cfg.num_clients:
        raise ConfigError("client state count must equal num_clients")

    global_model = model_init.copy()
    history: RoundHistory = []
    for r in range(cfg.rounds):
        round_index = round_offset + r
        rng = generator(cfg.seed, TAG_SELECT, round_index)
        selected = sample_clients(cfg.num_clients, cfg.participation, rng)
        broadcast = nn.round_to_f32(global_model) if f32_boundary else global_model

        updates, dropped = [], []
        losses = []
        for cid in selected:
            client = clients[cid]
            data = client.shard if shard_filter is None else shard_filter(client.shard, round_index)
            if len(data) == 0:
                dropped.append(cid)
                continue
            upd = local_update(broadcast, client, cfg, mode, clear_cfg,
                               round_index, shard=data)
            if f32_boundary:
                upd.model = nn.round_to_f32(upd.model)
            updates.append(upd)
            losses.extend(upd.losses)
        if updates:
            global_model = aggregate(updates)
        record = RoundRecord(round_index, selected, dropped,
                             float(np.mean(losses)) if losses else None)
        if eval_hook is not None:
            record.metrics = eval_hook(round_index, global_model)
        history.append(record)
    return global_model, history
