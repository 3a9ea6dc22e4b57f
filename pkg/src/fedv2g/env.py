"""Per-user EV charging environment: battery dynamics and reward settlement.

Each simulated EV user owns one environment instance. An episode is a single
plug-in session (arrival to departure). The hourly decision is a
charging/discharging rate in SoC fraction per hour; positive charges,
negative discharges. The observation is::

    [psi_{t-n} .. psi_t, hours_to_departure, hours_to_anxious, SoC,
     anxiety_target_SoC, departure_target_SoC]

with psi the price normalized by a fixed scale (by default the mean of the
training price series) so that the price, anxiety and departure reward terms
stay commensurate.

Reward cases over a session [t_a, t_d]:

* before the anxious time:   -sigma_p * psi_t * a_t
* anxious time to departure: the price term minus
  sigma_x * max(target_SoC(t) - SoC, 0)
* at departure:              -sigma_d * max(departure_SoC - SoC, 0)

Settlement convention: the price term is charged on the executed rate a_t,
the two gap terms are assessed on the SoC actually reached after the step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError, EpisodeFinished, InvalidParam, ScheduleInfeasible
from .prices import PriceSeries, window

_MAX_SCHEDULE_DRAWS = 32


@dataclass(frozen=True)
class BatteryConfig:
    """Charging efficiency and rate limits (SoC fraction per hour)."""

    eta: float = 0.98
    a_min: float = -0.2
    a_max: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.eta <= 1.0:
            raise InvalidParam(f"eta must be in (0, 1], got {self.eta}")
        if not self.a_min <= 0.0 <= self.a_max:
            raise InvalidParam("rate bounds must satisfy a_min <= 0 <= a_max")


@dataclass(frozen=True)
class RewardConfig:
    """User sensitivities to price, range anxiety and departure demand."""

    sigma_p: float = 8.0
    sigma_x: float = 15.0
    sigma_d: float = 35.0

    def __post_init__(self):
        if min(self.sigma_p, self.sigma_x, self.sigma_d) < 0:
            raise InvalidParam("sensitivities must be non-negative")


@dataclass(frozen=True)
class ScheduleDist:
    """Hour-of-day distribution, normal with mean/sd, truncated at +-3 sd."""

    mean: float
    sd: float

    def draw(self, rng: np.random.Generator) -> float:
        x = rng.normal(self.mean, self.sd) if self.sd > 0 else self.mean
        lo, hi = self.mean - 3.0 * self.sd, self.mean + 3.0 * self.sd
        return min(max(x, lo), hi)


# Schedule keys. Home and office times describe weekdays (overnight home
# session, daytime office stay); public times describe weekend daytime stays.
SCHEDULE_KEYS = (
    "home_arrival",
    "home_departure",
    "office_arrival",
    "office_departure",
    "public_arrival",
    "public_departure",
)


@dataclass(frozen=True)
class UserProfile:
    """Behavioral parameters for one EV user."""

    name: str
    d1_range: tuple[float, float]
    anxious_duration_range: tuple[float, float]  # hours before departure
    schedule: dict[str, ScheduleDist]
    d2_mean: float = 9.0
    d2_sd: float = 1.0
    d2_bounds: tuple[float, float] = (6.0, 12.0)

    def __post_init__(self):
        lo, hi = self.d1_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise InvalidParam(f"d1_range must lie in [0, 1], got {self.d1_range}")
        blo, bhi = self.d2_bounds
        if blo <= 0.0 <= bhi:
            raise InvalidParam("d2_bounds must exclude 0")
        alo, ahi = self.anxious_duration_range
        if not (0.0 < alo <= ahi < 24.0):
            raise InvalidParam("anxious duration must lie in (0, 24) hours")
        missing = [k for k in SCHEDULE_KEYS if k not in self.schedule]
        if missing:
            raise InvalidParam(f"profile {self.name!r} missing schedule keys {missing}")


def _shift(sched: dict[str, ScheduleDist], hours: float, keys=SCHEDULE_KEYS) -> dict:
    return {
        k: ScheduleDist(v.mean + (hours if k in keys else 0.0), v.sd)
        for k, v in sched.items()
    }


_BASE_SCHEDULE = {
    "home_departure": ScheduleDist(7.5, 1.0),
    "office_arrival": ScheduleDist(8.5, 1.0),
    "office_departure": ScheduleDist(17.0, 1.0),
    "home_arrival": ScheduleDist(18.0, 1.5),
    "public_arrival": ScheduleDist(10.0, 1.5),
    "public_departure": ScheduleDist(16.0, 2.0),
}


def default_profiles() -> list[UserProfile]:
    """Three users with distinct travel habits and anxiety parameters.

    User 2 runs the whole day 1.5 h early; user 3 works late (office
    departure and home arrival shifted +3 h).
    """
    return [
        UserProfile(
            name="user1",
            d1_range=(0.85, 0.95),
            anxious_duration_range=(1.0, 4.0),
            schedule=dict(_BASE_SCHEDULE),
        ),
        UserProfile(
            name="user2",
            d1_range=(0.85, 0.90),
            anxious_duration_range=(1.0, 2.0),
            schedule=_shift(_BASE_SCHEDULE, -1.5),
        ),
        UserProfile(
            name="user3",
            d1_range=(0.90, 0.95),
            anxious_duration_range=(2.0, 4.0),
            schedule=_shift(_BASE_SCHEDULE, +3.0, keys=("office_departure", "home_arrival")),
        ),
    ]


@dataclass(frozen=True)
class ChargingSession:
    """One arrival-to-departure plug-in event (absolute hour indices)."""

    t_a: int
    t_d: int
    t_x: int
    soc_init: float
    d1: float
    d2: float

    @property
    def soc_d(self) -> float:
        # Departure target equals the anxiety curve endpoint.
        return self.d1

    def __post_init__(self):
        if not self.t_a <= self.t_x < self.t_d:
            raise InvalidParam(
                f"session times must satisfy t_a <= t_x < t_d, "
                f"got ({self.t_a}, {self.t_x}, {self.t_d})"
            )
        if not 0.0 <= self.soc_init <= 0.95:
            raise InvalidParam(f"soc_init must be in [0, 0.95], got {self.soc_init}")
        if self.d2 == 0.0:
            raise InvalidParam("d2 must be nonzero")


def sample_session(
    profile: UserProfile,
    rng: np.random.Generator,
    day_type: str,
    prices: PriceSeries,
    day_start: int | None = None,
) -> ChargingSession:
    """Draw one plug-in session from the profile's schedule distributions.

    Weekdays yield the overnight home session (arrive in the evening, depart
    next morning); weekends the daytime public-area stay. ``day_start`` is
    the series index of the session day's midnight; when omitted it is drawn
    uniformly over days that leave enough horizon.

    Draw order (fixed for reproducibility): day (if needed), arrival,
    departure, anxious duration, d1, d2, initial SoC.
    """
    if day_type not in ("weekday", "weekend"):
        raise InvalidParam(f"day_type must be weekday|weekend, got {day_type!r}")
    horizon = 36 if day_type == "weekday" else 24
    if day_start is None:
        starts = prices.day_starts(margin_hours=horizon)
        if not starts:
            raise ScheduleInfeasible(
                f"series of {len(prices)} hours has no day with {horizon}h of margin"
            )
        day_start = starts[int(rng.integers(len(starts)))]

    if day_type == "weekday":
        arr_dist = profile.schedule["home_arrival"]
        dep_dist = profile.schedule["home_departure"]
        dep_offset = 24  # departure happens the next morning
    else:
        arr_dist = profile.schedule["public_arrival"]
        dep_dist = profile.schedule["public_departure"]
        dep_offset = 0

    t_a = t_d = -1
    for _ in range(_MAX_SCHEDULE_DRAWS):
        arr = min(max(arr_dist.draw(rng), 0.0), 23.0)
        dep = min(max(dep_dist.draw(rng), 0.0), 23.0)
        t_a = day_start + int(round(arr))
        t_d = day_start + dep_offset + int(round(dep))
        if t_a < t_d and t_d < len(prices):
            break
    else:
        raise ScheduleInfeasible(
            f"could not draw t_a < t_d within the price horizon for {profile.name}"
        )

    dur_lo, dur_hi = profile.anxious_duration_range
    duration = int(round(rng.uniform(dur_lo, dur_hi)))
    t_x = min(max(t_d - duration, t_a), t_d - 1)

    d1 = rng.uniform(*profile.d1_range)
    d2 = min(max(rng.normal(profile.d2_mean, profile.d2_sd), profile.d2_bounds[0]),
             profile.d2_bounds[1])
    soc_init = rng.uniform(0.0, 0.95)
    return ChargingSession(t_a=t_a, t_d=t_d, t_x=t_x, soc_init=soc_init, d1=d1, d2=d2)


def anxiety_target(t: int, session: ChargingSession) -> float:
    """Expected SoC at hour t of the session, per the exponential anxiety curve.

    Zero at arrival, d1 at departure, monotone in between for d2 > 0.
    """
    if t < session.t_a or t > session.t_d:
        raise DomainError(f"t={t} outside session [{session.t_a}, {session.t_d}]")
    frac = (t - session.t_a) / (session.t_d - session.t_a)
    value = session.d1 * (math.exp(-session.d2 * frac) - 1.0) / (math.exp(-session.d2) - 1.0)
    return min(max(value, 0.0), 1.0)


def reward_parts(
    session: ChargingSession,
    reward_cfg: RewardConfig,
    psi: float,
    t: int,
    soc: float,
    action: float,
) -> tuple[float, float, float]:
    """(price, anxiety, departure) reward components at hour t.

    ``psi`` is the normalized price, ``soc`` the post-step state of charge.
    At t = t_d only the departure term applies.
    """
    if t < session.t_a or t > session.t_d:
        raise DomainError(f"t={t} outside session [{session.t_a}, {session.t_d}]")
    if t == session.t_d:
        return 0.0, 0.0, -reward_cfg.sigma_d * max(session.soc_d - soc, 0.0)
    price_part = -reward_cfg.sigma_p * psi * action
    anxiety_part = 0.0
    if t >= session.t_x:
        gap = max(anxiety_target(t, session) - soc, 0.0)
        anxiety_part = -reward_cfg.sigma_x * gap
    return price_part, anxiety_part, 0.0


def reward(session, reward_cfg, psi, t, soc, action) -> float:
    return sum(reward_parts(session, reward_cfg, psi, t, soc, action))


def apply_driving_drain(soc: float, hours: int, rate: float = 0.05) -> float:
    """SoC after driving for `hours`, consuming `rate` of capacity per hour."""
    if hours < 0:
        raise InvalidParam(f"hours must be >= 0, got {hours}")
    return max(soc - rate * hours, 0.0)


@dataclass
class EnvState:
    """Decomposed observation; `vector()` gives the flat n+6 network input."""

    price_window: np.ndarray  # normalized, length n+1
    hours_to_departure: int
    hours_to_anxious: int
    soc: float
    soc_x: float
    soc_d: float

    def vector(self) -> np.ndarray:
        return np.concatenate([
            self.price_window,
            [
                float(self.hours_to_departure),
                float(self.hours_to_anxious),
                self.soc,
                self.soc_x,
                self.soc_d,
            ],
        ])


@dataclass(frozen=True)
class EnvConfig:
    battery: BatteryConfig = field(default_factory=BatteryConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    price_window_n: int = 24

    @property
    def state_dim(self) -> int:
        return self.price_window_n + 6


@dataclass
class StepInfo:
    action_effective: float
    price_reward: float
    anxiety_reward: float
    departure_reward: float


class EvEnv:
    """One user's charging MDP over a fixed price series.

    Not thread-safe; each agent worker owns its instance. The clock is an
    absolute hour index into the price series.
    """

    def __init__(self, series: PriceSeries, config: EnvConfig, price_scale: float | None = None):
        if price_scale is not None and price_scale <= 0:
            raise InvalidParam(f"price_scale must be positive, got {price_scale}")
        self.series = series
        self.config = config
        self.price_scale = price_scale if price_scale is not None else series.mean_price()
        if self.price_scale <= 0:
            self.price_scale = 1.0  # degenerate all-zero series
        self.session: ChargingSession | None = None
        self.t = 0
        self.soc = 0.0
        self._done = True

    @property
    def state_dim(self) -> int:
        return self.config.state_dim

    def psi(self, t: int) -> float:
        return float(self.series.prices[t]) / self.price_scale

    def _state(self) -> EnvState:
        s = self.session
        win = window(self.series, self.t, self.config.price_window_n) / self.price_scale
        return EnvState(
            price_window=win,
            hours_to_departure=s.t_d - self.t,
            hours_to_anxious=max(s.t_x - self.t, 0),
            soc=self.soc,
            soc_x=anxiety_target(self.t, s),
            soc_d=s.soc_d,
        )

    def reset(self, session: ChargingSession, soc: float | None = None) -> EnvState:
        """Start a session. `soc` overrides the session's initial charge, used
        when the battery carries over from a previous leg (may exceed 0.95)."""
        if session.t_d >= len(self.series):
            raise InvalidParam(
                f"session departs at {session.t_d}, beyond series of {len(self.series)}"
            )
        if soc is not None and not 0.0 <= soc <= 1.0:
            raise InvalidParam(f"soc override must be in [0, 1], got {soc}")
        self.session = session
        self.t = session.t_a
        self.soc = session.soc_init if soc is None else soc
        self._done = False
        return self._state()

    def _clip_action(self, action: float) -> float:
        """Clip to the rate bounds, then tighten so SoC stays inside [0, 1]."""
        bat = self.config.battery
        a = min(max(action, bat.a_min), bat.a_max)
        target = self.soc + bat.eta * a
        if target > 1.0:
            a = (1.0 - self.soc) / bat.eta
            while self.soc + bat.eta * a > 1.0:
                a = math.nextafter(a, -math.inf)
        elif target < 0.0:
            a = (0.0 - self.soc) / bat.eta
            while self.soc + bat.eta * a < 0.0:
                a = math.nextafter(a, math.inf)
        return a

    def step(self, action: float) -> tuple[EnvState, float, bool, StepInfo]:
        if self._done or self.session is None:
            raise EpisodeFinished("step() after the session ended; call reset()")
        if not math.isfinite(action):
            raise InvalidParam(f"action must be finite, got {action}")
        s = self.session
        a_eff = self._clip_action(action)
        self.soc = self.soc + self.config.battery.eta * a_eff

        price_r, anx_r, _ = reward_parts(
            s, self.config.reward, self.psi(self.t), self.t, self.soc, a_eff
        )
        dep_r = 0.0
        if self.t + 1 == s.t_d:
            _, _, dep_r = reward_parts(
                s, self.config.reward, self.psi(self.t), s.t_d, self.soc, 0.0
            )
        r = price_r + anx_r + dep_r

        self.t += 1
        self._done = self.t == s.t_d
        info = StepInfo(
            action_effective=a_eff,
            price_reward=price_r,
            anxiety_reward=anx_r,
            departure_reward=dep_r,
        )
        return self._state(), r, self._done, info


def with_sensitivities(profile_cfg: EnvConfig, sigma_p=None, sigma_x=None, sigma_d=None) -> EnvConfig:
    """Copy of an EnvConfig with some reward sensitivities replaced."""
    r = profile_cfg.reward
    new = RewardConfig(
        sigma_p=r.sigma_p if sigma_p is None else sigma_p,
        sigma_x=r.sigma_x if sigma_x is None else sigma_x,
        sigma_d=r.sigma_d if sigma_d is None else sigma_d,
    )
    return replace(profile_cfg, reward=new)
