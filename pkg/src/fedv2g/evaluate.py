"""Evaluation harness: deterministic rollouts on held-out prices and the
one-week trip simulation.

The week runs Monday 00:00 through Sunday 24:00 (168 hours). On weekdays the
EV commutes home -> office -> home; on weekends it spends the daytime parked
in a public area. Driving legs take a fixed number of hours (default 1) and
drain the battery; every parked hour the EV is plugged in and the policy
picks the rate. Each parked interval is treated as a charging session whose
departure is the next driving leg; session shape parameters (anxiety window,
targets) are drawn per profile from the evaluation seed, and the battery
state carries across legs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .env import (
    ChargingSession,
    EnvConfig,
    EvEnv,
    UserProfile,
    apply_driving_drain,
    sample_session,
)
from .errors import DegenerateVariance, EmptyInput, InvalidParam, ScheduleInfeasible
from .prices import PriceSeries

WEEK_HOURS = 168


@dataclass(frozen=True)
class Leg:
    location: str  # home | office | public | driving
    start: int     # hour within the week, [start, end)
    end: int


@dataclass
class WeekPlan:
    ev: int
    legs: list[Leg]

    def check_tiling(self) -> None:
        cursor = 0
        for leg in self.legs:
            if leg.start != cursor or leg.end <= leg.start:
                raise InvalidParam(f"legs do not tile the week at hour {cursor}")
            cursor = leg.end
        if cursor != WEEK_HOURS:
            raise InvalidParam(f"plan covers {cursor} hours, expected {WEEK_HOURS}")


@dataclass
class TraceRow:
    hour: int
    ev: int
    location: str
    price: float   # raw price, for plotting
    soc: float     # at the end of the hour
    action: float  # executed rate; exactly 0 while driving
    cumulative_cost: float


@dataclass
class EvalMetrics:
    ev: int
    total_cost: float             # sigma_p-weighted price reward, negated
    total_anxiety_penalty: float  # >= 0
    total_departure_penalty: float  # >= 0
    departure_shortfalls: list[float]
    plugged_hours: int

    @property
    def mean_reward(self) -> float:
        if self.plugged_hours == 0:
            return 0.0
        return (-self.total_cost - self.total_anxiety_penalty
                - self.total_departure_penalty) / self.plugged_hours


def _draw_int_hour(dist, rng, lo: int, hi: int) -> int:
    return min(max(int(round(dist.draw(rng))), lo), hi)


def build_week_plans(profiles: list[UserProfile], rng: np.random.Generator,
                     drive_hours: int = 1) -> list[WeekPlan]:
    """One plan per profile; weekdays commute, weekends a public-area trip."""
    if drive_hours < 1:
        raise InvalidParam("drive_hours must be >= 1")
    plans = []
    for ev, prof in enumerate(profiles):
        legs: list[Leg] = []
        cursor = 0
        for day in range(7):
            base = day * 24
            if day < 5:
                dep = _draw_int_hour(prof.schedule["home_departure"], rng,
                                     1, 23 - 2 * drive_hours - 2)
                odep = _draw_int_hour(prof.schedule["office_departure"], rng,
                                      dep + drive_hours + 1, 23 - drive_hours)
                away, back, loc = dep, odep, "office"
            else:
                parr = _draw_int_hour(prof.schedule["public_arrival"], rng,
                                      drive_hours + 1, 23 - 2 * drive_hours - 2)
                pdep = _draw_int_hour(prof.schedule["public_departure"], rng,
                                      parr + 1, 23 - drive_hours)
                away, back, loc = parr - drive_hours, pdep, "public"
            if base + away <= cursor:
                raise ScheduleInfeasible(
                    f"profile {prof.name}: day {day} departure before the "
                    f"previous day's return")
            legs.append(Leg("home", cursor, base + away))
            legs.append(Leg("driving", base + away, base + away + drive_hours))
            legs.append(Leg(loc, base + away + drive_hours, base + back))
            legs.append(Leg("driving", base + back, base + back + drive_hours))
            cursor = base + back + drive_hours
        legs.append(Leg("home", cursor, WEEK_HOURS))
        plan = WeekPlan(ev=ev, legs=legs)
        plan.check_tiling()
        plans.append(plan)
    return plans


def _as_policy_fn(policy):
    if callable(policy) and not hasattr(policy, "deterministic_action"):
        return policy
    return lambda vec: float(policy.deterministic_action(vec[None, :])[0])


def simulate_week(policy, plans: list[WeekPlan], profiles: list[UserProfile],
                  series: PriceSeries, eval_start: int, env_cfg: EnvConfig,
                  price_scale: float, rng: np.random.Generator,
                  drain_rate: float = 0.05) -> tuple[list[list[TraceRow]], list[EvalMetrics]]:
    """Run the deterministic policy through each EV's week.

    `eval_start` indexes the series hour corresponding to week hour 0 and
    should be a Monday midnight for the plans to line up with the calendar.
    The series must extend at least ~8 days past eval_start so the final
    overnight session (whose departure falls in the following week) can be
    represented.
    """
    margin = WEEK_HOURS + 32
    if eval_start < 0 or eval_start + margin >= len(series):
        raise InvalidParam(
            f"need {margin} hours of prices after eval_start={eval_start}, "
            f"series has {len(series)}")
    act = _as_policy_fn(policy)
    traces: list[list[TraceRow]] = []
    metrics: list[EvalMetrics] = []
    for plan, prof in zip(plans, profiles):
        env = EvEnv(series, env_cfg, price_scale)
        soc = float(rng.uniform(0.0, 0.95))  # week-start battery
        rows: list[TraceRow] = []
        cum_cost = 0.0
        total_cost = total_anx = total_dep = 0.0
        shortfalls: list[float] = []
        plugged = 0
        next_monday_dep = _draw_int_hour(prof.schedule["home_departure"], rng, 1, 23)
        for li, leg in enumerate(plan.legs):
            if leg.location == "driving":
                for h in range(leg.start, leg.end):
                    soc = apply_driving_drain(soc, 1, drain_rate)
                    rows.append(TraceRow(h, plan.ev, "driving",
                                         float(series.prices[eval_start + h]),
                                         soc, 0.0, cum_cost))
                continue
            final_leg = li == len(plan.legs) - 1
            t_a = eval_start + leg.start
            t_d = eval_start + (WEEK_HOURS + next_monday_dep if final_leg else leg.end)
            duration = int(round(rng.uniform(*prof.anxious_duration_range)))
            t_x = min(max(t_d - duration, t_a), t_d - 1)
            d1 = float(rng.uniform(*prof.d1_range))
            d2 = float(np.clip(rng.normal(prof.d2_mean, prof.d2_sd),
                               *prof.d2_bounds))
            session = ChargingSession(t_a=t_a, t_d=t_d, t_x=t_x,
                                      soc_init=min(soc, 0.95), d1=d1, d2=d2)
            # the battery carries across legs (may exceed the 0.95 session cap)
            state = env.reset(session, soc=soc).vector()
            for h in range(leg.start, min(leg.end, WEEK_HOURS)):
                action = act(state)
                next_state, _, done, info = env.step(action)
                state = next_state.vector()
                cum_cost += -info.price_reward
                total_cost += -info.price_reward
                total_anx += -info.anxiety_reward
                total_dep += -info.departure_reward
                if done:
                    shortfalls.append(max(session.soc_d - env.soc, 0.0))
                plugged += 1
                rows.append(TraceRow(h, plan.ev, leg.location,
                                     float(series.prices[eval_start + h]),
                                     env.soc, info.action_effective, cum_cost))
            soc = env.soc
        traces.append(rows)
        metrics.append(EvalMetrics(
            ev=plan.ev, total_cost=total_cost,
            total_anxiety_penalty=total_anx, total_departure_penalty=total_dep,
            departure_shortfalls=shortfalls, plugged_hours=plugged,
        ))
    return traces, metrics


def export_plot_data(traces: list[list[TraceRow]], path) -> None:
    """CSV for external plotting: hour,ev,location,price,soc,action,cumulative_cost."""
    rows = [r for trace in traces for r in trace]
    if not rows:
        raise EmptyInput("nothing to export")
    with open(path, "w") as fh:
        fh.write("hour,ev,location,price,soc,action,cumulative_cost\n")
        for r in rows:
            fh.write(f"{r.hour},{r.ev},{r.location},{r.price!r},{r.soc!r},"
                     f"{r.action!r},{r.cumulative_cost!r}\n")


def price_responsiveness(trace: list[TraceRow]) -> float:
    """Pearson correlation between action and price over plugged hours.

    A well-trained arbitrage policy charges cheap and discharges dear, so
    this should come out negative.
    """
    plugged = [r for r in trace if r.location != "driving"]
    if len(plugged) < 2:
        raise DegenerateVariance("need at least 2 plugged hours")
    actions = np.array([r.action for r in plugged])
    prices = np.array([r.price for r in plugged])
    if np.var(actions) == 0.0 or np.var(prices) == 0.0:
        raise DegenerateVariance("constant actions or prices")
    return float(np.corrcoef(actions, prices)[0, 1])


@dataclass
class SessionEvalResult:
    profile: str
    n_sessions: int
    mean_reward: float
    mean_price_reward: float
    mean_anxiety_reward: float
    mean_departure_reward: float
    mean_departure_shortfall: float


def evaluate_sessions(policy, series: PriceSeries, profiles: list[UserProfile],
                      env_cfg: EnvConfig, price_scale: float, n_sessions: int,
                      seed: int) -> list[SessionEvalResult]:
    """Deterministic-policy rollouts over sessions sampled from held-out days."""
    act = _as_policy_fn(policy)
    results = []
    for prof in profiles:
        rng = np.random.default_rng(seed)
        env = EvEnv(series, env_cfg, price_scale)
        day_starts = series.day_starts(margin_hours=36)
        if not day_starts:
            raise InvalidParam("evaluation series too short for sessions")
        sums = {"reward": 0.0, "price": 0.0, "anx": 0.0, "dep": 0.0, "short": 0.0}
        for _ in range(n_sessions):
            ds = day_starts[int(rng.integers(len(day_starts)))]
            day_type = "weekend" if series.is_weekend(ds) else "weekday"
            session = sample_session(prof, rng, day_type, series, ds)
            state = env.reset(session).vector()
            done = False
            while not done:
                next_state, r, done, info = env.step(act(state))
                state = next_state.vector()
                sums["reward"] += r
                sums["price"] += info.price_reward
                sums["anx"] += info.anxiety_reward
                sums["dep"] += info.departure_reward
            sums["short"] += max(session.soc_d - env.soc, 0.0)
        n = float(n_sessions)
        results.append(SessionEvalResult(
            profile=prof.name, n_sessions=n_sessions,
            mean_reward=sums["reward"] / n,
            mean_price_reward=sums["price"] / n,
            mean_anxiety_reward=sums["anx"] / n,
            mean_departure_reward=sums["dep"] / n,
            mean_departure_shortfall=sums["short"] / n,
        ))
    return results


def find_monday_midnight(series: PriceSeries, min_index: int = 0) -> int:
    """First hour index at or after min_index that is a Monday 00:00."""
    for i in range(min_index, len(series)):
        t = series.timestamps[i]
        if t.weekday() == 0 and t.hour == 0:
            return i
    raise InvalidParam("series contains no Monday midnight after the offset")
