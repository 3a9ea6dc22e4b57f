"""Job-level glue between configuration and the core modules.

Each function here backs one service endpoint: resolve the run config,
source the prices, run the work, write the artifacts (checkpoint, round-log
CSV, trace CSV, metrics JSON) into the requested output directory, and
return a plain-dict summary for the response model.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import fed as fed_mod
from .config import RunConfig
from .errors import ConfigError, DegenerateVariance, InvalidParam
from .evaluate import (
    build_week_plans,
    evaluate_sessions,
    export_plot_data,
    find_monday_midnight,
    price_responsiveness,
    simulate_week,
)
from .gradcheck import run_suite
from .nets import GaussianPolicyNet
from .prices import PriceSeries, load_csv, split_train_eval, synthesize_prices, write_csv

WEEK_MARGIN_HOURS = 200


def resolve_config(config_text: str = "", overrides: dict[str, str] | None = None) -> RunConfig:
    cfg = config_mod.from_text(config_text) if config_text else RunConfig()
    if overrides:
        cfg = config_mod.apply_overrides(cfg, overrides)
    return cfg


def resolve_prices(cfg: RunConfig) -> PriceSeries:
    p = cfg.prices
    if p.source == "csv":
        if not p.csv_path:
            raise ConfigError("prices.csv_path is required when prices.source = csv")
        return load_csv(p.csv_path)
    return synthesize_prices(
        seed=p.synth_seed, days=p.synth_days, base=p.synth_base,
        amplitude=p.synth_amplitude, noise_sd=p.synth_noise_sd,
        start=datetime.fromisoformat(p.synth_start),
    )


def policy_from_checkpoint(data: fed_mod.CheckpointData) -> tuple[GaussianPolicyNet, RunConfig]:
    cfg = config_mod.from_flat(data.config)
    policy = GaussianPolicyNet(
        cfg.env_config().state_dim, cfg.battery.a_min, cfg.battery.a_max,
        hidden=cfg.sac.policy_hidden, squash=cfg.sac.policy_squash,
    )
    policy.load_params(data.globals.phi)
    return policy, cfg


def _episode_summaries(logs: list[fed_mod.RoundLog], n_agents: int) -> list[dict]:
    out = []
    by_episode: dict[int, list[fed_mod.RoundLog]] = {}
    for log in logs:
        by_episode.setdefault(log.episode, []).append(log)
    for episode in sorted(by_episode):
        rows = by_episode[episode]
        out.append({
            "episode": episode,
            "mean_reward": float(np.mean([r.reward for r in rows])),
            "mean_price_reward": float(np.mean([r.price_reward for r in rows])),
            "mean_anxiety_reward": float(np.mean([r.anxiety_reward for r in rows])),
            "mean_departure_reward": float(np.mean([r.departure_reward for r in rows])),
            "mean_critic_loss": float(np.mean([r.critic_loss for r in rows])),
            "mean_value_loss": float(np.mean([r.value_loss for r in rows])),
            "mean_actor_loss": float(np.mean([r.actor_loss for r in rows])),
            "mean_alpha": float(np.mean([r.alpha for r in rows])),
        })
    return out


def run_train_job(cfg: RunConfig, out_dir, resume_path: str | None = None,
                  on_episode=None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    series = resolve_prices(cfg)
    split = split_train_eval(series)
    resume = None
    if resume_path:
        resume = fed_mod.load_checkpoint(resume_path)
        cfg = config_mod.apply_overrides(
            config_mod.from_flat(resume.config),
            {"fed.episodes": str(cfg.fed.episodes)},
        )
    result = fed_mod.run_training(
        cfg.fed_config(), cfg.sac, cfg.env_config(), list(cfg.profiles),
        split.train, price_scale=cfg.price_scale, resume=resume,
        on_episode=on_episode,
    )
    checkpoint_path = out / "checkpoint.bin"
    roundlog_path = out / "roundlog.csv"
    snapshot = fed_mod.snapshot_workers(result, config_mod.to_flat(cfg))
    fed_mod.save_checkpoint(checkpoint_path, snapshot)
    fed_mod.write_roundlog_csv(result.logs, roundlog_path)
    summaries = _episode_summaries(result.logs, cfg.fed.n_agents)
    return {
        "checkpoint_path": str(checkpoint_path),
        "roundlog_path": str(roundlog_path),
        "price_scale": result.price_scale,
        "episodes": cfg.fed.episodes,
        "n_agents": cfg.fed.n_agents,
        "episode_summaries": summaries,
        "final_mean_reward": summaries[-1]["mean_reward"] if summaries else 0.0,
    }


def _pick_week_start(series: PriceSeries, requested: int | None) -> int:
    if requested is not None:
        return requested
    start = 0
    while True:
        try:
            monday = find_monday_midnight(series, start)
        except InvalidParam:
            raise InvalidParam(
                f"evaluation series ({len(series)} hours) has no Monday "
                f"midnight with {WEEK_MARGIN_HOURS} hours of margin for a "
                f"week simulation") from None
        if monday + WEEK_MARGIN_HOURS < len(series):
            return monday
        start = monday + 1


def _eval_series(cfg: RunConfig) -> PriceSeries:
    split = split_train_eval(resolve_prices(cfg))
    if split.eval is None:
        raise InvalidParam(
            "price data has no evaluation days (nothing past day 20 of a month)")
    return split.eval


def run_week_job(checkpoint_path, out_dir, week_start: int | None = None,
                 seed: int | None = None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = fed_mod.load_checkpoint(checkpoint_path)
    policy, cfg = policy_from_checkpoint(data)
    eval_series = _eval_series(cfg)
    start = _pick_week_start(eval_series, week_start if week_start is not None
                             else cfg.eval.week_start)
    rng = np.random.default_rng(seed if seed is not None else cfg.eval.seed)
    profiles = list(cfg.profiles)  # one EV per configured user profile
    plans = build_week_plans(profiles, rng, drive_hours=cfg.eval.drive_hours)
    traces, metrics = simulate_week(
        policy, plans, profiles, eval_series, start, cfg.env_config(),
        data.price_scale, rng, drain_rate=cfg.eval.drain_rate,
    )
    trace_path = out / "week_trace.csv"
    export_plot_data(traces, trace_path)
    responsiveness = []
    for trace in traces:
        try:
            responsiveness.append(price_responsiveness(trace))
        except DegenerateVariance:
            responsiveness.append(None)
    metric_dicts = [{
        "ev": m.ev,
        "total_cost": m.total_cost,
        "total_anxiety_penalty": m.total_anxiety_penalty,
        "total_departure_penalty": m.total_departure_penalty,
        "departure_shortfalls": m.departure_shortfalls,
        "mean_reward": m.mean_reward,
        "plugged_hours": m.plugged_hours,
        "price_responsiveness": responsiveness[m.ev],
    } for m in metrics]
    metrics_path = out / "week_metrics.json"
    metrics_path.write_text(json.dumps(
        {"week_start_index": start, "metrics": metric_dicts},
        sort_keys=True, indent=2))
    return {
        "trace_path": str(trace_path),
        "metrics_path": str(metrics_path),
        "week_start_index": start,
        "metrics": metric_dicts,
    }


def run_eval_job(checkpoint_path, out_dir, sessions: int | None = None,
                 seed: int | None = None, week_start: int | None = None,
                 skip_week: bool = False) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = fed_mod.load_checkpoint(checkpoint_path)
    policy, cfg = policy_from_checkpoint(data)
    eval_series = _eval_series(cfg)
    session_results = evaluate_sessions(
        policy, eval_series, list(cfg.profiles), cfg.env_config(),
        data.price_scale,
        n_sessions=sessions if sessions is not None else cfg.eval.sessions,
        seed=seed if seed is not None else cfg.eval.seed,
    )
    session_dicts = [asdict(r) for r in session_results]
    week = None
    if not skip_week:
        week = run_week_job(checkpoint_path, out_dir, week_start=week_start,
                            seed=seed)
    metrics_path = out / "eval_metrics.json"
    metrics_path.write_text(json.dumps(
        {"sessions": session_dicts,
         "week": None if week is None else week["metrics"]},
        sort_keys=True, indent=2))
    return {
        "session_results": session_dicts,
        "week": week,
        "metrics_path": str(metrics_path),
    }


def run_synth_prices_job(seed: int, days: int, base: float, amplitude: float,
                         noise_sd: float, start: str, out_path) -> dict:
    series = synthesize_prices(seed=seed, days=days, base=base,
                               amplitude=amplitude, noise_sd=noise_sd,
                               start=datetime.fromisoformat(start))
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(series, out)
    return {
        "path": str(out),
        "n_points": len(series),
        "mean_price": series.mean_price(),
    }


def run_gradcheck_job(seed: int = 0, n_seeds: int = 10) -> dict:
    cfg = RunConfig()
    passed, reports, elapsed = run_suite(
        seed=seed, n_seeds=n_seeds, state_dim=cfg.env_config().state_dim,
        policy_hidden=cfg.sac.policy_hidden, critic_hidden=cfg.sac.critic_hidden,
    )
    return {
        "passed": passed,
        "elapsed_s": elapsed,
        "reports": [r.line() for r in reports],
        "max_rel_err": max(r.max_rel_err for r in reports),
    }
