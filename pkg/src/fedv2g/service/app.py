"""FastAPI service wrapping the federated trainer and evaluation harness.

Endpoints run synchronously: a training request returns when the run (and
its checkpoint/round-log files) is complete. Clients should disable request
timeouts for long runs.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import config as config_mod
from .. import pipeline
from ..errors import FedV2GError
from .schemas import (
    ConfigRequest,
    ConfigResponse,
    EvalRequest,
    EvalResponse,
    GradCheckRequest,
    GradCheckResponse,
    HealthResponse,
    SimulateWeekRequest,
    SimulateWeekResponse,
    SynthPricesRequest,
    SynthPricesResponse,
    TrainRequest,
    TrainResponse,
)


def create_app() -> FastAPI:
    app = FastAPI(title="fedv2g", description="Federated EV charging control trainer")

    @app.exception_handler(FedV2GError)
    async def domain_error(request, exc: FedV2GError):
        raise HTTPException(status_code=422, detail=str(exc))

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse()

    @app.get("/config/defaults", response_model=ConfigResponse)
    def config_defaults():
        return ConfigResponse(text=config_mod.to_text(config_mod.RunConfig()))

    @app.post("/config/resolve", response_model=ConfigResponse)
    def config_resolve(req: ConfigRequest):
        cfg = _wrap(pipeline.resolve_config, req.config_text, req.overrides)
        return ConfigResponse(text=config_mod.to_text(cfg))

    @app.post("/train", response_model=TrainResponse)
    def train(req: TrainRequest):
        cfg = _wrap(pipeline.resolve_config, req.config_text, req.overrides)
        result = _wrap(pipeline.run_train_job, cfg, req.out_dir,
                       resume_path=req.resume_from)
        return TrainResponse(**result)

    @app.post("/eval", response_model=EvalResponse)
    def eval_checkpoint(req: EvalRequest):
        result = _wrap(pipeline.run_eval_job, req.checkpoint_path, req.out_dir,
                       sessions=req.sessions, seed=req.seed,
                       week_start=req.week_start, skip_week=req.skip_week)
        return EvalResponse(**result)

    @app.post("/simulate-week", response_model=SimulateWeekResponse)
    def simulate_week_endpoint(req: SimulateWeekRequest):
        result = _wrap(pipeline.run_week_job, req.checkpoint_path, req.out_dir,
                       week_start=req.week_start, seed=req.seed)
        return SimulateWeekResponse(**result)

    @app.post("/prices/synthesize", response_model=SynthPricesResponse)
    def synth_prices(req: SynthPricesRequest):
        result = _wrap(pipeline.run_synth_prices_job, req.seed, req.days,
                       req.base, req.amplitude, req.noise_sd, req.start,
                       req.out_path)
        return SynthPricesResponse(**result)

    @app.post("/grad-check", response_model=GradCheckResponse)
    def grad_check(req: GradCheckRequest):
        return GradCheckResponse(**pipeline.run_gradcheck_job(req.seed, req.n_seeds))

    return app


def _wrap(fn, *args, **kwargs):
    """Map domain and file errors onto HTTP status codes."""
    try:
        return fn(*args, **kwargs)
    except FileNotFoundError as exc:
        raise HTTPException(status_code=404, detail=str(exc)) from exc
    except (FedV2GError, ValueError) as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc


app = create_app()
