"""Run configuration: one flat-key text format covering every tunable.

The file format is deliberately plain so no ecosystem-specific parser is
needed: one ``key.path = value`` per line, ``#`` starts a comment, unknown
keys are rejected. ``auto`` marks the values that are derived at run time
(price scale from the training-split mean, updates per episode from the
episode length, evaluation week start from the first Monday in the held-out
series). Loading the serialized form of a config reproduces it exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .env import (
    SCHEDULE_KEYS,
    BatteryConfig,
    EnvConfig,
    RewardConfig,
    ScheduleDist,
    UserProfile,
    default_profiles,
)
from .errors import ConfigError
from .fed import FedConfig
from .sac import SacConfig


@dataclass(frozen=True)
class PriceSourceConfig:
    source: str = "synthetic"  # synthetic | csv
    csv_path: str = ""
    synth_seed: int = 7
    synth_days: int = 170
    synth_base: float = 30.0
    synth_amplitude: float = 15.0
    synth_noise_sd: float = 2.0
    synth_start: str = "2017-01-01T00:00"


@dataclass(frozen=True)
class EvalConfig:
    seed: int = 123
    sessions: int = 20
    drain_rate: float = 0.05
    drive_hours: int = 1
    week_start: int | None = None  # None -> first Monday midnight in eval data


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "runs"
    price_window_n: int = 24
    price_scale: float | None = None  # None -> training-split mean
    battery: BatteryConfig = field(default_factory=BatteryConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    sac: SacConfig = field(default_factory=SacConfig)
    fed: FedConfig = field(default_factory=FedConfig)
    prices: PriceSourceConfig = field(default_factory=PriceSourceConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    profiles: tuple[UserProfile, ...] = field(
        default_factory=lambda: tuple(default_profiles()))

    def env_config(self) -> EnvConfig:
        return EnvConfig(battery=self.battery, reward=self.reward,
                         price_window_n=self.price_window_n)

    def fed_config(self) -> FedConfig:
        # the run seed is the single source of truth
        return replace(self.fed, seed=self.seed)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse_bool(key: str, raw: str) -> bool:
    if raw == "true":
        return True
    if raw == "false":
        return False
    raise ConfigError(f"{key}: expected true/false, got {raw!r}")


def _parse_int(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected integer, got {raw!r}") from None


def _parse_float(key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected number, got {raw!r}") from None


def _parse_int_tuple(key: str, raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in raw.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated integers, got {raw!r}") \
            from None


def to_flat(cfg: RunConfig) -> dict[str, str]:
    """Canonical flat key/value form (strings both sides)."""
    flat: dict[str, str] = {
        "seed": _fmt(cfg.seed),
        "out_dir": cfg.out_dir,
        "price_window_n": _fmt(cfg.price_window_n),
        "price_scale": "auto" if cfg.price_scale is None else _fmt(cfg.price_scale),
        "battery.eta": _fmt(cfg.battery.eta),
        "battery.a_min": _fmt(cfg.battery.a_min),
        "battery.a_max": _fmt(cfg.battery.a_max),
        "reward.sigma_p": _fmt(cfg.reward.sigma_p),
        "reward.sigma_x": _fmt(cfg.reward.sigma_x),
        "reward.sigma_d": _fmt(cfg.reward.sigma_d),
        "sac.gamma": _fmt(cfg.sac.gamma),
        "sac.batch_size": _fmt(cfg.sac.batch_size),
        "sac.lr_actor": _fmt(cfg.sac.lr_actor),
        "sac.lr_critic": _fmt(cfg.sac.lr_critic),
        "sac.lr_alpha": _fmt(cfg.sac.lr_alpha),
        "sac.zeta": _fmt(cfg.sac.zeta),
        "sac.target_entropy": _fmt(cfg.sac.target_entropy),
        "sac.updates_per_episode": ("auto" if cfg.sac.updates_per_episode is None
                                    else _fmt(cfg.sac.updates_per_episode)),
        "sac.buffer_capacity": _fmt(cfg.sac.buffer_capacity),
        "sac.policy_hidden": _fmt(cfg.sac.policy_hidden),
        "sac.critic_hidden": _fmt(cfg.sac.critic_hidden),
        "sac.policy_squash": cfg.sac.policy_squash,
        "fed.n_agents": _fmt(cfg.fed.n_agents),
        "fed.episodes": _fmt(cfg.fed.episodes),
        "fed.sync_every": _fmt(cfg.fed.sync_every),
        "fed.aggregate_value_nets": _fmt(cfg.fed.aggregate_value_nets),
        "fed.aggregate_alpha": _fmt(cfg.fed.aggregate_alpha),
        "fed.workers": _fmt(cfg.fed.workers),
        "prices.source": cfg.prices.source,
        "prices.csv_path": cfg.prices.csv_path,
        "prices.synth_seed": _fmt(cfg.prices.synth_seed),
        "prices.synth_days": _fmt(cfg.prices.synth_days),
        "prices.synth_base": _fmt(cfg.prices.synth_base),
        "prices.synth_amplitude": _fmt(cfg.prices.synth_amplitude),
        "prices.synth_noise_sd": _fmt(cfg.prices.synth_noise_sd),
        "prices.synth_start": cfg.prices.synth_start,
        "eval.seed": _fmt(cfg.eval.seed),
        "eval.sessions": _fmt(cfg.eval.sessions),
        "eval.drain_rate": _fmt(cfg.eval.drain_rate),
        "eval.drive_hours": _fmt(cfg.eval.drive_hours),
        "eval.week_start": ("auto" if cfg.eval.week_start is None
                            else _fmt(cfg.eval.week_start)),
        "profiles.count": _fmt(len(cfg.profiles)),
    }
    for i, prof in enumerate(cfg.profiles):
        p = f"profiles.{i}"
        flat[f"{p}.name"] = prof.name
        flat[f"{p}.d1_min"] = _fmt(prof.d1_range[0])
        flat[f"{p}.d1_max"] = _fmt(prof.d1_range[1])
        flat[f"{p}.d2_mean"] = _fmt(prof.d2_mean)
        flat[f"{p}.d2_sd"] = _fmt(prof.d2_sd)
        flat[f"{p}.d2_min"] = _fmt(prof.d2_bounds[0])
        flat[f"{p}.d2_max"] = _fmt(prof.d2_bounds[1])
        flat[f"{p}.anxious_min"] = _fmt(prof.anxious_duration_range[0])
        flat[f"{p}.anxious_max"] = _fmt(prof.anxious_duration_range[1])
        for key in SCHEDULE_KEYS:
            dist = prof.schedule[key]
            flat[f"{p}.schedule.{key}.mean"] = _fmt(dist.mean)
            flat[f"{p}.schedule.{key}.sd"] = _fmt(dist.sd)
    return flat


def from_flat(flat: dict[str, str]) -> RunConfig:
    """Build a RunConfig from flat keys; unknown keys are an error."""
    d = dict(flat)

    def take(key: str, parse, default):
        if key in d:
            return parse(key, d.pop(key))
        return default

    def take_str(key: str, default: str) -> str:
        return d.pop(key, default)

    def take_auto(key: str, parse, default):
        if key in d:
            raw = d.pop(key)
            return None if raw == "auto" else parse(key, raw)
        return default

    base = RunConfig()
    seed = take("seed", _parse_int, base.seed)
    out_dir = take_str("out_dir", base.out_dir)
    price_window_n = take("price_window_n", _parse_int, base.price_window_n)
    price_scale = take_auto("price_scale", _parse_float, base.price_scale)

    battery = BatteryConfig(
        eta=take("battery.eta", _parse_float, base.battery.eta),
        a_min=take("battery.a_min", _parse_float, base.battery.a_min),
        a_max=take("battery.a_max", _parse_float, base.battery.a_max),
    )
    reward = RewardConfig(
        sigma_p=take("reward.sigma_p", _parse_float, base.reward.sigma_p),
        sigma_x=take("reward.sigma_x", _parse_float, base.reward.sigma_x),
        sigma_d=take("reward.sigma_d", _parse_float, base.reward.sigma_d),
    )
    sac = SacConfig(
        gamma=take("sac.gamma", _parse_float, base.sac.gamma),
        batch_size=take("sac.batch_size", _parse_int, base.sac.batch_size),
        lr_actor=take("sac.lr_actor", _parse_float, base.sac.lr_actor),
        lr_critic=take("sac.lr_critic", _parse_float, base.sac.lr_critic),
        lr_alpha=take("sac.lr_alpha", _parse_float, base.sac.lr_alpha),
        zeta=take("sac.zeta", _parse_float, base.sac.zeta),
        target_entropy=take("sac.target_entropy", _parse_float,
                            base.sac.target_entropy),
        updates_per_episode=take_auto("sac.updates_per_episode", _parse_int,
                                      base.sac.updates_per_episode),
        buffer_capacity=take("sac.buffer_capacity", _parse_int,
                             base.sac.buffer_capacity),
        policy_hidden=take("sac.policy_hidden", _parse_int_tuple,
                           base.sac.policy_hidden),
        critic_hidden=take("sac.critic_hidden", _parse_int_tuple,
                           base.sac.critic_hidden),
        policy_squash=take_str("sac.policy_squash", base.sac.policy_squash),
    )
    if sac.policy_squash not in ("clip", "tanh"):
        raise ConfigError(f"sac.policy_squash must be clip|tanh, "
                          f"got {sac.policy_squash!r}")
    fed = FedConfig(
        n_agents=take("fed.n_agents", _parse_int, base.fed.n_agents),
        episodes=take("fed.episodes", _parse_int, base.fed.episodes),
        seed=base.fed.seed,  # the run seed is mirrored in via fed_config()
        sync_every=take("fed.sync_every", _parse_int, base.fed.sync_every),
        aggregate_value_nets=take("fed.aggregate_value_nets", _parse_bool,
                                  base.fed.aggregate_value_nets),
        aggregate_alpha=take("fed.aggregate_alpha", _parse_bool,
                             base.fed.aggregate_alpha),
        workers=take("fed.workers", _parse_int, base.fed.workers),
    )
    prices = PriceSourceConfig(
        source=take_str("prices.source", base.prices.source),
        csv_path=take_str("prices.csv_path", base.prices.csv_path),
        synth_seed=take("prices.synth_seed", _parse_int, base.prices.synth_seed),
        synth_days=take("prices.synth_days", _parse_int, base.prices.synth_days),
        synth_base=take("prices.synth_base", _parse_float, base.prices.synth_base),
        synth_amplitude=take("prices.synth_amplitude", _parse_float,
                             base.prices.synth_amplitude),
        synth_noise_sd=take("prices.synth_noise_sd", _parse_float,
                            base.prices.synth_noise_sd),
        synth_start=take_str("prices.synth_start", base.prices.synth_start),
    )
    if prices.source not in ("synthetic", "csv"):
        raise ConfigError(f"prices.source must be synthetic|csv, "
                          f"got {prices.source!r}")
    eval_cfg = EvalConfig(
        seed=take("eval.seed", _parse_int, base.eval.seed),
        sessions=take("eval.sessions", _parse_int, base.eval.sessions),
        drain_rate=take("eval.drain_rate", _parse_float, base.eval.drain_rate),
        drive_hours=take("eval.drive_hours", _parse_int, base.eval.drive_hours),
        week_start=take_auto("eval.week_start", _parse_int, base.eval.week_start),
    )

    count = take("profiles.count", _parse_int, len(base.profiles))
    if count < 1:
        raise ConfigError("profiles.count must be >= 1")
    defaults = default_profiles()
    profiles = []
    for i in range(count):
        proto = defaults[i % len(defaults)]
        p = f"profiles.{i}"
        schedule = {}
        for key in SCHEDULE_KEYS:
            schedule[key] = ScheduleDist(
                mean=take(f"{p}.schedule.{key}.mean", _parse_float,
                          proto.schedule[key].mean),
                sd=take(f"{p}.schedule.{key}.sd", _parse_float,
                        proto.schedule[key].sd),
            )
        profiles.append(UserProfile(
            name=take_str(f"{p}.name", proto.name),
            d1_range=(take(f"{p}.d1_min", _parse_float, proto.d1_range[0]),
                      take(f"{p}.d1_max", _parse_float, proto.d1_range[1])),
            anxious_duration_range=(
                take(f"{p}.anxious_min", _parse_float,
                     proto.anxious_duration_range[0]),
                take(f"{p}.anxious_max", _parse_float,
                     proto.anxious_duration_range[1])),
            schedule=schedule,
            d2_mean=take(f"{p}.d2_mean", _parse_float, proto.d2_mean),
            d2_sd=take(f"{p}.d2_sd", _parse_float, proto.d2_sd),
            d2_bounds=(take(f"{p}.d2_min", _parse_float, proto.d2_bounds[0]),
                       take(f"{p}.d2_max", _parse_float, proto.d2_bounds[1])),
        ))

    if d:
        raise ConfigError(f"unknown config keys: {sorted(d)}")
    return RunConfig(
        seed=seed, out_dir=out_dir, price_window_n=price_window_n,
        price_scale=price_scale, battery=battery, reward=reward, sac=sac,
        fed=fed, prices=prices, eval=eval_cfg, profiles=tuple(profiles),
    )


def to_text(cfg: RunConfig) -> str:
    flat = to_flat(cfg)
    lines = [f"{key} = {flat[key]}" for key in sorted(flat)]
    return "\n".join(lines) + "\n"


def parse_text(text: str) -> dict[str, str]:
    flat: dict[str, str] = {}
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', "
                              f"got {raw_line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key in flat:
            raise ConfigError(f"line {line_no}: duplicate key {key!r}")
        flat[key] = value
    return flat


def from_text(text: str) -> RunConfig:
    return from_flat(parse_text(text))


def load(path) -> RunConfig:
    with open(path) as fh:
        return from_text(fh.read())


def dump(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(to_text(cfg))


def apply_overrides(cfg: RunConfig, overrides: dict[str, str]) -> RunConfig:
    """Re-resolve the config with some flat keys replaced (CLI flags)."""
    flat = to_flat(cfg)
    for key, value in overrides.items():
        if key not in flat:
            raise ConfigError(f"unknown config key {key!r}")
        flat[key] = value
    return from_flat(flat)
