"""Federated training orchestration: synchronous rounds of local rollout and
local gradient steps across N agents, uniform parameter averaging, broadcast,
and checkpointing.

Every episode runs three phases. Phase I: each agent (after the first
episode, having first overwritten its policy and twin critics with the
broadcast global models) samples one charging session from its own profile
and a uniformly drawn training day, and rolls it out, storing transitions
locally. Phase II: each agent takes its gradient steps and submits policy
and critic parameters. Phase III: the server averages them (uniform 1/N,
summed in ascending agent order for bitwise reproducibility) and broadcasts.

Raw transitions never leave an agent: the only inter-agent payload is the
flat ParamVector. Value networks, their targets, the temperature, optimizer
moments and replay buffers all stay local by default; config flags can widen
aggregation for experiments.
"""

from __future__ import annotations

import json
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .env import EnvConfig, UserProfile, default_profiles
from .errors import (
    CorruptPayload,
    EmptyInput,
    InvalidParam,
    LayoutMismatch,
    NanParameters,
    VersionMismatch,
)
from .nets import ParamVector, deserialize, ensure_same_layout, serialize
from .prices import PriceSeries
from .sac import AgentWorker, EpisodeLog, SacConfig

CHECKPOINT_MAGIC = b"FV2G"
CHECKPOINT_VERSION = 1

ROUNDLOG_HEADER = ("episode,agent,reward,price_reward,anxiety_reward,"
                   "departure_reward,critic_loss,value_loss,actor_loss,alpha")


@dataclass(frozen=True)
class FedConfig:
    n_agents: int = 3
    episodes: int = 250
    seed: int = 0
    sync_every: int = 1
    aggregate_value_nets: bool = False
    aggregate_alpha: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.n_agents < 1:
            raise InvalidParam("n_agents must be >= 1")
        if self.episodes < 1:
            raise InvalidParam("episodes must be >= 1")
        if self.sync_every < 1:
            raise InvalidParam("sync_every must be >= 1")

    def agent_seed(self, index: int) -> int:
        # decorrelates agents while keeping runs reproducible from one seed
        return self.seed * 10**6 + index


@dataclass
class GlobalModels:
    phi: ParamVector
    theta1: ParamVector
    theta2: ParamVector
    v1: ParamVector | None = None
    v2: ParamVector | None = None
    log_alpha: float | None = None


@dataclass
class RoundLog:
    episode: int
    agent: int
    reward: float
    price_reward: float
    anxiety_reward: float
    departure_reward: float
    critic_loss: float
    value_loss: float
    actor_loss: float
    alpha: float
    duration_s: float = 0.0  # wall clock; excluded from the CSV export

    def csv_row(self) -> str:
        return ",".join([
            str(self.episode), str(self.agent),
            repr(self.reward), repr(self.price_reward),
            repr(self.anxiety_reward), repr(self.departure_reward),
            repr(self.critic_loss), repr(self.value_loss),
            repr(self.actor_loss), repr(self.alpha),
        ])


def write_roundlog_csv(logs: list[RoundLog], path) -> None:
    with open(path, "w") as fh:
        fh.write(ROUNDLOG_HEADER + "\n")
        for log in logs:
            fh.write(log.csv_row() + "\n")


def aggregate(params: list[ParamVector]) -> ParamVector:
    """Uniform elementwise mean, summed in list (agent index) order."""
    if not params:
        raise EmptyInput("nothing to aggregate")
    for pv in params:
        if not isinstance(pv, ParamVector):
            raise TypeError(f"aggregate accepts ParamVector only, got {type(pv)}")
        ensure_same_layout(params[0].layout, pv.layout)
    acc = np.zeros_like(params[0].values)
    for pv in params:
        acc += pv.values
    acc /= float(len(params))
    return ParamVector(params[0].layout, acc)


@dataclass
class TrainResult:
    globals: GlobalModels
    logs: list[RoundLog]
    workers: list[AgentWorker]
    price_scale: float
    episodes_completed: int
    pending_broadcast: bool


def build_workers(fed: FedConfig, sac_cfg: SacConfig, env_cfg: EnvConfig,
                  profiles: list[UserProfile], train_prices: PriceSeries,
                  price_scale: float | None = None) -> tuple[list[AgentWorker], float]:
    if not profiles:
        profiles = default_profiles()
    scale = price_scale if price_scale is not None else train_prices.mean_price()
    workers = [
        AgentWorker(
            index=i,
            profile=profiles[i % len(profiles)],
            series=train_prices,
            env_config=env_cfg,
            sac_config=sac_cfg,
            seed=fed.agent_seed(i),
            price_scale=scale,
        )
        for i in range(fed.n_agents)
    ]
    return workers, scale


def _broadcast(workers: list[AgentWorker], g: GlobalModels, fed: FedConfig) -> None:
    for w in workers:
        w.models.policy.load_params(g.phi)
        w.models.q1.load_params(g.theta1)
        w.models.q2.load_params(g.theta2)
        if fed.aggregate_value_nets and g.v1 is not None:
            w.models.v1.load_params(g.v1)
            w.models.v2.load_params(g.v2)
        if fed.aggregate_alpha and g.log_alpha is not None:
            w.models.log_alpha[0] = g.log_alpha


def _aggregate_round(workers: list[AgentWorker], fed: FedConfig) -> GlobalModels:
    g = GlobalModels(
        phi=aggregate([w.models.policy.param_vector() for w in workers]),
        theta1=aggregate([w.models.q1.param_vector() for w in workers]),
        theta2=aggregate([w.models.q2.param_vector() for w in workers]),
    )
    if fed.aggregate_value_nets:
        g.v1 = aggregate([w.models.v1.param_vector() for w in workers])
        g.v2 = aggregate([w.models.v2.param_vector() for w in workers])
    if fed.aggregate_alpha:
        g.log_alpha = float(np.mean([w.models.log_alpha[0] for w in workers]))
    return g


def run_training(fed: FedConfig, sac_cfg: SacConfig, env_cfg: EnvConfig,
                 profiles: list[UserProfile], train_prices: PriceSeries,
                 price_scale: float | None = None,
                 resume: "CheckpointData | None" = None,
                 on_episode=None) -> TrainResult:
    """The full federated loop. Deterministic for a fixed seed: results do
    not depend on the worker-thread count because agents share no state and
    aggregation order is fixed.

    With `resume`, agent state (parameters, optimizer moments, buffers, RNG)
    is restored and training continues from the recorded episode; the
    trajectory matches an uninterrupted run when checkpoints were written on
    a sync boundary (always true for sync_every=1).
    """
    workers, scale = build_workers(fed, sac_cfg, env_cfg, profiles, train_prices,
                                   price_scale)
    globals_: GlobalModels | None = None
    pending = False
    start_episode = 1
    if resume is not None:
        restore_workers(resume, workers)
        globals_ = resume.globals
        pending = resume.pending_broadcast
        start_episode = resume.episodes_completed + 1

    logs: list[RoundLog] = []

    def run_agent(w: AgentWorker) -> tuple[EpisodeLog, float]:
        t0 = time.perf_counter()
        log = w.run_training_episode()
        return log, time.perf_counter() - t0

    pool = ThreadPoolExecutor(max_workers=fed.workers) if fed.workers > 1 else None
    try:
        for episode in range(start_episode, fed.episodes + 1):
            if pending and globals_ is not None:
                _broadcast(workers, globals_, fed)
                pending = False
            try:
                if pool is not None:
                    results = list(pool.map(run_agent, workers))
                else:
                    results = [run_agent(w) for w in workers]
            except NanParameters as exc:
                raise NanParameters(f"episode {episode}: {exc}") from exc
            episode_logs = []
            for w, (elog, dt) in zip(workers, results):
                rl = RoundLog(
                    episode=episode, agent=w.index,
                    reward=elog.reward, price_reward=elog.price_reward,
                    anxiety_reward=elog.anxiety_reward,
                    departure_reward=elog.departure_reward,
                    critic_loss=elog.critic_loss, value_loss=elog.value_loss,
                    actor_loss=elog.actor_loss, alpha=elog.alpha,
                    duration_s=dt,
                )
                logs.append(rl)
                episode_logs.append(rl)
            if episode % fed.sync_every == 0 or episode == fed.episodes:
                globals_ = _aggregate_round(workers, fed)
                pending = True
            if on_episode is not None:
                on_episode(episode, episode_logs)
    finally:
        if pool is not None:
            pool.shutdown()

    return TrainResult(
        globals=globals_, logs=logs, workers=workers, price_scale=scale,
        episodes_completed=fed.episodes, pending_broadcast=pending,
    )


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

@dataclass
class AgentCheckpoint:
    nets: dict[str, ParamVector]          # policy, q1, q2, v1, v2, vt1, vt2
    adam: dict[str, tuple[ParamVector, ParamVector, int]]  # name -> (m, v, t)
    log_alpha: float
    rng_state: dict
    buffer_arrays: dict[str, np.ndarray]  # S, A, R, S2, D (only filled rows)
    buffer_size: int
    buffer_cursor: int
    buffer_capacity: int


@dataclass
class CheckpointData:
    config: dict
    price_scale: float
    episodes_completed: int
    pending_broadcast: bool
    globals: GlobalModels | None
    agents: list[AgentCheckpoint]


_NET_NAMES = ("policy", "q1", "q2", "v1", "v2", "vt1", "vt2")
_OPT_NAMES = ("policy", "q1", "q2", "v1", "v2", "alpha")


def snapshot_workers(result: TrainResult, config_flat: dict) -> CheckpointData:
    agents = []
    for w in result.workers:
        m = w.models
        nets = {name: getattr(m, name).param_vector(copy=True) for name in _NET_NAMES}
        adam = {}
        for name in _OPT_NAMES:
            opt = getattr(m, f"opt_{name}")
            layout = (( "flat", (len(opt.m),)),)
            adam[name] = (ParamVector(layout, opt.m.copy()),
                          ParamVector(layout, opt.v.copy()),
                          opt.step_count)
        buf = w.buffer
        n = buf.size
        agents.append(AgentCheckpoint(
            nets=nets, adam=adam,
            log_alpha=float(m.log_alpha[0]),
            rng_state=w.rng.bit_generator.state,
            buffer_arrays={
                "S": buf.S[:n].copy(), "A": buf.A[:n].copy(),
                "R": buf.R[:n].copy(), "S2": buf.S2[:n].copy(),
                "D": buf.D[:n].copy(),
            },
            buffer_size=n, buffer_cursor=buf.cursor,
            buffer_capacity=buf.capacity,
        ))
    return CheckpointData(
        config=config_flat,
        price_scale=result.price_scale,
        episodes_completed=result.episodes_completed,
        pending_broadcast=result.pending_broadcast,
        globals=result.globals,
        agents=agents,
    )


def restore_workers(data: CheckpointData, workers: list[AgentWorker]) -> None:
    if len(data.agents) != len(workers):
        raise LayoutMismatch(
            f"checkpoint has {len(data.agents)} agents, run configured "
            f"{len(workers)}"
        )
    for w, a in zip(workers, data.agents):
        m = w.models
        for name in _NET_NAMES:
            getattr(m, name).load_params(a.nets[name])
        for name in _OPT_NAMES:
            opt = getattr(m, f"opt_{name}")
            mom_m, mom_v, step = a.adam[name]
            if len(mom_m.values) != len(opt.m):
                raise LayoutMismatch(f"adam state size mismatch for {name}")
            opt.m[:] = mom_m.values
            opt.v[:] = mom_v.values
            opt.step_count = step
        m.log_alpha[0] = a.log_alpha
        w.rng.bit_generator.state = a.rng_state
        buf = w.buffer
        if buf.capacity != a.buffer_capacity:
            raise LayoutMismatch("replay buffer capacity changed across resume")
        n = a.buffer_size
        buf.S[:n] = a.buffer_arrays["S"]
        buf.A[:n] = a.buffer_arrays["A"]
        buf.R[:n] = a.buffer_arrays["R"]
        buf.S2[:n] = a.buffer_arrays["S2"]
        buf.D[:n] = a.buffer_arrays["D"]
        buf.size = n
        buf.cursor = a.buffer_cursor


def _buffer_pv(arrays: dict[str, np.ndarray]) -> ParamVector:
    layout = tuple((k, tuple(v.shape)) for k, v in arrays.items())
    flat = np.concatenate([v.ravel() for v in arrays.values()]) if arrays else np.zeros(0)
    return ParamVector(layout, flat)


def _pv_to_arrays(pv: ParamVector) -> dict[str, np.ndarray]:
    out = {}
    offset = 0
    for name, shape in pv.layout:
        size = int(np.prod(shape))
        out[name] = pv.values[offset : offset + size].reshape(shape).copy()
        offset += size
    return out


def save_checkpoint(path, data: CheckpointData) -> None:
    """Binary container: magic, version, JSON manifest, parameter payloads."""
    sections: list[tuple[str, bytes]] = []

    def add(name: str, pv: ParamVector):
        sections.append((name, serialize(pv)))

    if data.globals is not None:
        add("global.phi", data.globals.phi)
        add("global.theta1", data.globals.theta1)
        add("global.theta2", data.globals.theta2)
        if data.globals.v1 is not None:
            add("global.v1", data.globals.v1)
            add("global.v2", data.globals.v2)
    agent_meta = []
    for i, a in enumerate(data.agents):
        for name in _NET_NAMES:
            add(f"agent{i}.{name}", a.nets[name])
        for name in _OPT_NAMES:
            mom_m, mom_v, step = a.adam[name]
            add(f"agent{i}.adam.{name}.m", mom_m)
            add(f"agent{i}.adam.{name}.v", mom_v)
        add(f"agent{i}.buffer", _buffer_pv(a.buffer_arrays))
        agent_meta.append({
            "log_alpha": a.log_alpha,
            "rng_state": a.rng_state,
            "adam_steps": {name: a.adam[name][2] for name in _OPT_NAMES},
            "buffer_size": a.buffer_size,
            "buffer_cursor": a.buffer_cursor,
            "buffer_capacity": a.buffer_capacity,
        })
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "config": data.config,
        "price_scale": data.price_scale,
        "episodes_completed": data.episodes_completed,
        "pending_broadcast": data.pending_broadcast,
        "has_globals": data.globals is not None,
        "global_log_alpha": data.globals.log_alpha if data.globals else None,
        "n_agents": len(data.agents),
        "agents": agent_meta,
        "sections": [[name, len(blob)] for name, blob in sections],
    }
    manifest_b = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(manifest_b)))
        fh.write(manifest_b)
        for _, blob in sections:
            fh.write(blob)


def load_checkpoint(path) -> CheckpointData:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:4] != CHECKPOINT_MAGIC:
        raise VersionMismatch("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected "
                              f"{CHECKPOINT_VERSION}")
    (mlen,) = struct.unpack("<Q", raw[8:16])
    if 16 + mlen > len(raw):
        raise CorruptPayload("manifest extends past end of file")
    try:
        manifest = json.loads(raw[16 : 16 + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptPayload(f"unreadable manifest: {exc}") from None
    pos = 16 + mlen
    payloads: dict[str, ParamVector] = {}
    for name, length in manifest["sections"]:
        if pos + length > len(raw):
            raise CorruptPayload(f"section {name} extends past end of file")
        payloads[name] = deserialize(raw[pos : pos + length])
        pos += length
    if pos != len(raw):
        raise CorruptPayload(f"{len(raw) - pos} trailing bytes after sections")

    globals_ = None
    if manifest["has_globals"]:
        globals_ = GlobalModels(
            phi=payloads["global.phi"],
            theta1=payloads["global.theta1"],
            theta2=payloads["global.theta2"],
            v1=payloads.get("global.v1"),
            v2=payloads.get("global.v2"),
            log_alpha=manifest.get("global_log_alpha"),
        )
    agents = []
    for i, meta in enumerate(manifest["agents"]):
        nets = {name: payloads[f"agent{i}.{name}"] for name in _NET_NAMES}
        adam = {}
        for name in _OPT_NAMES:
            adam[name] = (payloads[f"agent{i}.adam.{name}.m"],
                          payloads[f"agent{i}.adam.{name}.v"],
                          meta["adam_steps"][name])
        agents.append(AgentCheckpoint(
            nets=nets, adam=adam,
            log_alpha=meta["log_alpha"],
            rng_state=meta["rng_state"],
            buffer_arrays=_pv_to_arrays(payloads[f"agent{i}.buffer"]),
            buffer_size=meta["buffer_size"],
            buffer_cursor=meta["buffer_cursor"],
            buffer_capacity=meta["buffer_capacity"],
        ))
    return CheckpointData(
        config=manifest["config"],
        price_scale=manifest["price_scale"],
        episodes_completed=manifest["episodes_completed"],
        pending_broadcast=manifest["pending_broadcast"],
        globals=globals_,
        agents=agents,
    )
