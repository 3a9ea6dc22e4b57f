"""Command-line client for the training service.

Every command goes through the HTTP API. By default the service app is
mounted in-process (no running server needed); pass ``--server URL`` to talk
to a remote instance started with ``fedv2g serve``.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click


class ServiceClient:
    def __init__(self, server: str | None):
        if server:
            import httpx

            self._client = httpx.Client(base_url=server, timeout=None)
        else:
            from fastapi.testclient import TestClient

            from .service.app import create_app

            self._client = TestClient(create_app(),
                                      raise_server_exceptions=False)

    def _check(self, resp):
        if resp.status_code >= 400:
            try:
                detail = resp.json().get("detail", resp.text)
            except Exception:
                detail = resp.text
            raise click.ClickException(f"[{resp.status_code}] {detail}")
        return resp.json()

    def get(self, path: str) -> dict:
        return self._check(self._client.get(path))

    def post(self, path: str, payload: dict) -> dict:
        return self._check(self._client.post(path, json=payload))


def _read_config(config_path: str | None) -> str:
    if not config_path:
        return ""
    return Path(config_path).read_text()


def _collect_overrides(set_items, seed, episodes, agents, workers,
                       synthetic, prices) -> dict[str, str]:
    overrides: dict[str, str] = {}
    for item in set_items:
        if "=" not in item:
            raise click.ClickException(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    if seed is not None:
        overrides["seed"] = str(seed)
    if episodes is not None:
        overrides["fed.episodes"] = str(episodes)
    if agents is not None:
        overrides["fed.n_agents"] = str(agents)
    if workers is not None:
        overrides["fed.workers"] = str(workers)
    if synthetic and prices:
        raise click.ClickException("--synthetic and --prices are mutually exclusive")
    if synthetic:
        overrides["prices.source"] = "synthetic"
    if prices:
        overrides["prices.source"] = "csv"
        overrides["prices.csv_path"] = prices
    return overrides


@click.group()
@click.option("--server", default=None, metavar="URL",
              help="Remote service URL; defaults to running in-process.")
@click.pass_context
def main(ctx, server):
    """Federated EV charging/discharging control: train, evaluate, inspect."""
    ctx.obj = {"server": server}


def _client(ctx) -> ServiceClient:
    return ServiceClient(ctx.obj["server"])


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="Run-config file (flat key = value lines).")
@click.option("--seed", type=int, default=None, help="Global seed.")
@click.option("--episodes", type=int, default=None, help="Training episodes.")
@click.option("--agents", type=int, default=None, help="Number of agents.")
@click.option("--workers", type=int, default=None, help="Parallel agent workers.")
@click.option("--out-dir", default="runs", show_default=True,
              help="Directory for checkpoint and round-log files.")
@click.option("--synthetic", is_flag=True, help="Use synthetic sinusoidal prices.")
@click.option("--prices", type=click.Path(exists=True), default=None,
              help="Hourly price CSV (timestamp,price).")
@click.option("--resume", "resume_from", type=click.Path(exists=True), default=None,
              help="Checkpoint to resume from.")
@click.option("--set", "set_items", multiple=True, metavar="KEY=VALUE",
              help="Override any config key (repeatable).")
@click.option("--quiet", is_flag=True, help="Suppress per-episode lines.")
@click.pass_context
def train(ctx, config_path, seed, episodes, agents, workers, out_dir,
          synthetic, prices, resume_from, set_items, quiet):
    """Run federated training and write checkpoint + round-log CSV."""
    payload = {
        "config_text": _read_config(config_path),
        "overrides": _collect_overrides(set_items, seed, episodes, agents,
                                        workers, synthetic, prices),
        "out_dir": out_dir,
        "resume_from": resume_from,
    }
    result = _client(ctx).post("/train", payload)
    if not quiet:
        for s in result["episode_summaries"]:
            click.echo(
                f"episode {s['episode']:4d}  reward {s['mean_reward']:9.3f}  "
                f"price {s['mean_price_reward']:8.3f}  "
                f"anxiety {s['mean_anxiety_reward']:8.3f}  "
                f"departure {s['mean_departure_reward']:8.3f}  "
                f"alpha {s['mean_alpha']:.4f}")
    click.echo(f"checkpoint: {result['checkpoint_path']}")
    click.echo(f"roundlog:   {result['roundlog_path']}")
    click.echo(f"price scale {result['price_scale']:.4f}, "
               f"final mean reward {result['final_mean_reward']:.3f}")


@main.command("eval")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--out-dir", default="runs", show_default=True)
@click.option("--sessions", type=int, default=None,
              help="Held-out sessions per profile.")
@click.option("--seed", type=int, default=None, help="Evaluation seed.")
@click.option("--week-start", type=int, default=None,
              help="Hour index of the simulated week's Monday 00:00.")
@click.option("--skip-week", is_flag=True, help="Session metrics only.")
@click.pass_context
def eval_cmd(ctx, checkpoint, out_dir, sessions, seed, week_start, skip_week):
    """Evaluate a checkpoint on held-out prices (sessions + week simulation)."""
    result = _client(ctx).post("/eval", {
        "checkpoint_path": checkpoint, "out_dir": out_dir,
        "sessions": sessions, "seed": seed, "week_start": week_start,
        "skip_week": skip_week,
    })
    for r in result["session_results"]:
        click.echo(
            f"{r['profile']:>8}: mean reward {r['mean_reward']:9.3f} "
            f"(price {r['mean_price_reward']:8.3f}, "
            f"anxiety {r['mean_anxiety_reward']:8.3f}, "
            f"departure {r['mean_departure_reward']:8.3f}, "
            f"shortfall {r['mean_departure_shortfall']:.4f})")
    if result["week"] is not None:
        _print_week(result["week"])
    click.echo(f"metrics: {result['metrics_path']}")


def _print_week(week: dict) -> None:
    click.echo(f"week starts at eval hour {week['week_start_index']}; "
               f"trace: {week['trace_path']}")
    for m in week["metrics"]:
        corr = m.get("price_responsiveness")
        corr_s = "n/a" if corr is None else f"{corr:+.3f}"
        click.echo(
            f"  ev {m['ev']}: cost {m['total_cost']:8.3f}  "
            f"anxiety {m['total_anxiety_penalty']:7.3f}  "
            f"departure {m['total_departure_penalty']:7.3f}  "
            f"action/price corr {corr_s}")


@main.command("simulate-week")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--out-dir", default="runs", show_default=True)
@click.option("--week-start", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.pass_context
def simulate_week_cmd(ctx, checkpoint, out_dir, week_start, seed):
    """Run the one-week trip simulation and export the hourly trace CSV."""
    result = _client(ctx).post("/simulate-week", {
        "checkpoint_path": checkpoint, "out_dir": out_dir,
        "week_start": week_start, "seed": seed,
    })
    _print_week(result)


@main.command("synth-prices")
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--days", type=int, default=170, show_default=True)
@click.option("--base", type=float, default=30.0, show_default=True)
@click.option("--amplitude", type=float, default=15.0, show_default=True)
@click.option("--noise-sd", type=float, default=2.0, show_default=True)
@click.option("--start", default="2017-01-01T00:00", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_context
def synth_prices(ctx, seed, days, base, amplitude, noise_sd, start, out_path):
    """Write a deterministic synthetic hourly price CSV."""
    result = _client(ctx).post("/prices/synthesize", {
        "seed": seed, "days": days, "base": base, "amplitude": amplitude,
        "noise_sd": noise_sd, "start": start, "out_path": out_path,
    })
    click.echo(f"wrote {result['n_points']} hours to {result['path']} "
               f"(mean price {result['mean_price']:.3f})")


@main.command("grad-check")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--seeds", "n_seeds", type=int, default=10, show_default=True,
              help="Number of seeds per network shape.")
@click.pass_context
def grad_check(ctx, seed, n_seeds):
    """Verify analytic gradients against central finite differences."""
    result = _client(ctx).post("/grad-check", {"seed": seed, "n_seeds": n_seeds})
    for line in result["reports"]:
        click.echo(line)
    click.echo(f"max relative error {result['max_rel_err']:.3e} "
               f"in {result['elapsed_s']:.2f}s")
    if not result["passed"]:
        sys.exit(1)
    click.echo("all gradients match finite differences")


@main.command("print-config")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--set", "set_items", multiple=True, metavar="KEY=VALUE")
@click.pass_context
def print_config(ctx, config_path, set_items):
    """Print the fully resolved run configuration (defaults included)."""
    overrides = _collect_overrides(set_items, None, None, None, None, False, None)
    if config_path or overrides:
        result = _client(ctx).post("/config/resolve", {
            "config_text": _read_config(config_path), "overrides": overrides,
        })
    else:
        result = _client(ctx).get("/config/defaults")
    click.echo(result["text"], nl=False)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8642, show_default=True)
def serve(host, port):
    """Start the HTTP service for remote clients."""
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
