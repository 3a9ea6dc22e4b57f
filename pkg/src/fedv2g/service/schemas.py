"""Request/response models for the training service API."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str = "ok"


class TrainRequest(BaseModel):
    config_text: str = ""  # run-config file content; empty means defaults
    overrides: dict[str, str] = Field(default_factory=dict)
    out_dir: str
    resume_from: str | None = None


class EpisodeSummary(BaseModel):
    episode: int
    mean_reward: float
    mean_price_reward: float
    mean_anxiety_reward: float
    mean_departure_reward: float
    mean_critic_loss: float
    mean_value_loss: float
    mean_actor_loss: float
    mean_alpha: float


class TrainResponse(BaseModel):
    checkpoint_path: str
    roundlog_path: str
    price_scale: float
    episodes: int
    n_agents: int
    episode_summaries: list[EpisodeSummary]
    final_mean_reward: float


class SessionMetrics(BaseModel):
    profile: str
    n_sessions: int
    mean_reward: float
    mean_price_reward: float
    mean_anxiety_reward: float
    mean_departure_reward: float
    mean_departure_shortfall: float


class WeekEvMetrics(BaseModel):
    ev: int
    total_cost: float
    total_anxiety_penalty: float
    total_departure_penalty: float
    departure_shortfalls: list[float]
    mean_reward: float
    plugged_hours: int
    price_responsiveness: float | None = None


class SimulateWeekRequest(BaseModel):
    checkpoint_path: str
    out_dir: str
    week_start: int | None = None  # index into the evaluation series
    seed: int | None = None


class SimulateWeekResponse(BaseModel):
    trace_path: str
    metrics_path: str
    week_start_index: int
    metrics: list[WeekEvMetrics]


class EvalRequest(BaseModel):
    checkpoint_path: str
    out_dir: str
    sessions: int | None = None
    seed: int | None = None
    week_start: int | None = None
    skip_week: bool = False


class EvalResponse(BaseModel):
    session_results: list[SessionMetrics]
    week: SimulateWeekResponse | None = None
    metrics_path: str


class SynthPricesRequest(BaseModel):
    seed: int = 7
    days: int = 170
    base: float = 30.0
    amplitude: float = 15.0
    noise_sd: float = 2.0
    start: str = "2017-01-01T00:00"
    out_path: str


class SynthPricesResponse(BaseModel):
    path: str
    n_points: int
    mean_price: float


class GradCheckRequest(BaseModel):
    seed: int = 0
    n_seeds: int = 10


class GradCheckResponse(BaseModel):
    passed: bool
    elapsed_s: float
    max_rel_err: float
    reports: list[str]


class ConfigRequest(BaseModel):
    config_text: str = ""
    overrides: dict[str, str] = Field(default_factory=dict)


class ConfigResponse(BaseModel):
    text: str
