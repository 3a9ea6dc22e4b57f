"""One agent's soft actor-critic learner.

Per agent: a Gaussian policy, twin soft-Q critics, two trained soft value
networks with slowly tracking (Polyak-averaged) target copies, an
auto-tuned entropy temperature, and a FIFO replay buffer. One gradient step
runs, in order: temperature, policy, both critics, both value networks
(followed by the target moving average). All expectations over fresh policy
actions use a single reparameterized draw per state.

Critic regression target:  r + gamma * min_k Vbar_k(s')   (0 bootstrap at done)
Value regression target:   min_k Q_k(s, a~) - alpha * log pi(a~|s)
Policy objective:          mean( alpha * log pi(a~|s) - min_k Q_k(s, a~) )
Temperature objective:     mean( -alpha * (log pi(a~|s) + target_entropy) )
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .env import EnvConfig, EvEnv, UserProfile, sample_session
from .errors import InsufficientData, InvalidParam, NanParameters
from .nets import (
    AdamState,
    GaussianPolicyNet,
    Mlp,
    adam_step,
    polyak_update,
    sample_action,
)
from .prices import PriceSeries


@dataclass(frozen=True)
class SacConfig:
    gamma: float = 0.99
    batch_size: int = 128
    lr_actor: float = 1e-3
    lr_critic: float = 1e-2
    lr_alpha: float = 1e-2
    zeta: float = 0.005
    target_entropy: float = -1.0
    updates_per_episode: int | None = None  # None -> one per episode step
    buffer_capacity: int = 100_000
    policy_hidden: tuple[int, ...] = (128, 128, 128, 128)
    critic_hidden: tuple[int, ...] = (128, 128, 128)
    policy_squash: str = "clip"

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise InvalidParam(f"gamma must be in [0, 1], got {self.gamma}")
        if self.batch_size < 1:
            raise InvalidParam("batch_size must be >= 1")
        if not 0.0 < self.zeta < 1.0:
            raise InvalidParam(f"zeta must be in (0, 1), got {self.zeta}")


class ReplayBuffer:
    """Ring buffer of transitions; oldest entries are overwritten first."""

    def __init__(self, capacity: int, state_dim: int):
        if capacity < 1:
            raise InvalidParam("capacity must be >= 1")
        self.capacity = capacity
        self.state_dim = state_dim
        self.S = np.zeros((capacity, state_dim))
        self.A = np.zeros(capacity)
        self.R = np.zeros(capacity)
        self.S2 = np.zeros((capacity, state_dim))
        self.D = np.zeros(capacity)
        self.size = 0
        self.cursor = 0

    def push(self, s, a: float, r: float, s2, done: bool) -> None:
        i = self.cursor
        self.S[i] = s
        self.A[i] = a
        self.R[i] = r
        self.S2[i] = s2
        self.D[i] = 1.0 if done else 0.0
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, batch_size: int) -> dict:
        """Uniform with replacement; deterministic under a seeded rng."""
        if self.size < batch_size:
            raise InsufficientData(
                f"buffer holds {self.size} transitions, need {batch_size}"
            )
        idx = rng.integers(0, self.size, size=batch_size)
        return {
            "S": self.S[idx],
            "A": self.A[idx],
            "R": self.R[idx],
            "S2": self.S2[idx],
            "D": self.D[idx],
        }


class AgentModels:
    """Policy, twin critics, twin value nets + targets, and temperature."""

    def __init__(self, state_dim: int, action_low: float, action_high: float,
                 config: SacConfig, rng: np.random.Generator):
        self.config = config
        self.policy = GaussianPolicyNet(
            state_dim, action_low, action_high, rng,
            hidden=config.policy_hidden, squash=config.policy_squash,
        )
        critic_sizes = [state_dim + 1, *config.critic_hidden, 1]
        value_sizes = [state_dim, *config.critic_hidden, 1]
        self.q1 = Mlp(critic_sizes, rng)
        self.q2 = Mlp(critic_sizes, rng)
        self.v1 = Mlp(value_sizes, rng)
        self.v2 = Mlp(value_sizes, rng)
        self.vt1 = Mlp(value_sizes)
        self.vt2 = Mlp(value_sizes)
        self.vt1.theta[:] = self.v1.theta
        self.vt2.theta[:] = self.v2.theta
        self.log_alpha = np.zeros(1)
        self.opt_policy = AdamState(self.policy.n_params)
        self.opt_q1 = AdamState(self.q1.n_params)
        self.opt_q2 = AdamState(self.q2.n_params)
        self.opt_v1 = AdamState(self.v1.n_params)
        self.opt_v2 = AdamState(self.v2.n_params)
        self.opt_alpha = AdamState(1)

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    def all_finite(self) -> bool:
        nets = (self.policy, self.q1, self.q2, self.v1, self.v2, self.vt1, self.vt2)
        return all(n.all_finite() for n in nets) and bool(
            np.all(np.isfinite(self.log_alpha))
        )


def _q_input(S: np.ndarray, A: np.ndarray) -> np.ndarray:
    return np.concatenate([S, A[:, None]], axis=1)


def compute_q_target(batch: dict, models: AgentModels, config: SacConfig) -> np.ndarray:
    """r + gamma * min_k Vbar_k(s'), with zero bootstrap on terminal steps."""
    v1 = models.vt1.forward_batch(batch["S2"])[:, 0]
    v2 = models.vt2.forward_batch(batch["S2"])[:, 0]
    return batch["R"] + config.gamma * (1.0 - batch["D"]) * np.minimum(v1, v2)


def critic_update(models: AgentModels, batch: dict, config: SacConfig) -> tuple[float, float]:
    """One Adam step on each critic's squared Bellman residual (pre-step losses)."""
    target = compute_q_target(batch, models, config)
    X = _q_input(batch["S"], batch["A"])
    B = len(target)
    losses = []
    for net, opt in ((models.q1, models.opt_q1), (models.q2, models.opt_q2)):
        q, cache = net.forward_batch(X, need_cache=True)
        err = q[:, 0] - target
        losses.append(float(np.mean(0.5 * np.square(err))))
        grad, _ = net.backward_batch(cache, (err / B)[:, None], need_dx=False)
        adam_step(net.theta, grad, opt, config.lr_critic)
    return losses[0], losses[1]


def value_update(models: AgentModels, batch: dict, config: SacConfig,
                 rng: np.random.Generator) -> tuple[float, float]:
    """Regress both value nets on the entropy-adjusted twin-critic minimum,
    then move the target copies by the Polyak average."""
    S = batch["S"]
    sample = models.policy.sample_batch(S, rng)
    X = _q_input(S, sample.action)
    q1 = models.q1.forward_batch(X)[:, 0]
    q2 = models.q2.forward_batch(X)[:, 0]
    y = np.minimum(q1, q2) - models.alpha * sample.log_prob
    B = len(y)
    losses = []
    for net, opt in ((models.v1, models.opt_v1), (models.v2, models.opt_v2)):
        v, cache = net.forward_batch(S, need_cache=True)
        err = v[:, 0] - y
        losses.append(float(np.mean(0.5 * np.square(err))))
        grad, _ = net.backward_batch(cache, (err / B)[:, None], need_dx=False)
        adam_step(net.theta, grad, opt, config.lr_critic)
    polyak_update(models.vt1.param_vector(), models.v1.param_vector(), config.zeta)
    polyak_update(models.vt2.param_vector(), models.v2.param_vector(), config.zeta)
    return losses[0], losses[1]


def actor_loss_and_grad(models: AgentModels, S: np.ndarray, kappa: np.ndarray,
                        config: SacConfig) -> tuple[float, np.ndarray]:
    """Reparameterized policy loss and its exact gradient for fixed noise.

    loss = mean(alpha * log pi(a~|s) - min_k Q_k(s, a~)); the gradient flows
    through a~ into the policy but never into the critics.
    """
    alpha = models.alpha
    B = len(kappa)
    mu, ls, cache = models.policy.heads_forward(S, need_cache=True)
    sample = models.policy.sample_given_kappa(mu, ls, kappa)
    X = _q_input(S, sample.action)
    q1, c1 = models.q1.forward_batch(X, need_cache=True)
    q2, c2 = models.q2.forward_batch(X, need_cache=True)
    q1, q2 = q1[:, 0], q2[:, 0]
    use_q1 = q1 <= q2
    q_min = np.where(use_q1, q1, q2)
    loss = float(np.mean(alpha * sample.log_prob - q_min))

    # -(1/B) through the per-sample selected critic, input gradient only
    d1 = np.where(use_q1, -1.0 / B, 0.0)[:, None]
    d2 = np.where(use_q1, 0.0, -1.0 / B)[:, None]
    _, dX1 = models.q1.backward_batch(c1, d1, need_param_grads=False)
    _, dX2 = models.q2.backward_batch(c2, d2, need_param_grads=False)
    d_action = dX1[:, -1] + dX2[:, -1]
    d_logp = np.full(B, alpha / B)
    dmu, dls = models.policy.sample_backward(sample, d_action, d_logp)
    grad = models.policy.heads_backward(cache, dmu, dls)
    return loss, grad


def actor_update(models: AgentModels, batch: dict, config: SacConfig,
                 rng: np.random.Generator) -> float:
    kappa = rng.standard_normal(len(batch["S"]))
    loss, grad = actor_loss_and_grad(models, batch["S"], kappa, config)
    adam_step(models.policy.theta, grad, models.opt_policy, config.lr_actor)
    return loss


def alpha_update(models: AgentModels, batch: dict, config: SacConfig,
                 rng: np.random.Generator) -> float:
    """Temperature step: raise alpha when entropy falls below the target,
    lower it when exploration overshoots. Positivity comes from the log
    parameterization."""
    sample = models.policy.sample_batch(batch["S"], rng)
    alpha = models.alpha
    excess = float(np.mean(sample.log_prob + config.target_entropy))
    loss = -alpha * excess
    grad = np.array([-alpha * excess])
    adam_step(models.log_alpha, grad, models.opt_alpha, config.lr_alpha)
    return loss


def update_step(models: AgentModels, buffer: ReplayBuffer, config: SacConfig,
                rng: np.random.Generator) -> dict:
    """One full gradient step on a fresh minibatch (temperature, policy,
    critics, values)."""
    batch = buffer.sample(rng, config.batch_size)
    a_loss = alpha_update(models, batch, config, rng)
    pi_loss = actor_update(models, batch, config, rng)
    q1_loss, q2_loss = critic_update(models, batch, config)
    v1_loss, v2_loss = value_update(models, batch, config, rng)
    return {
        "alpha_loss": a_loss,
        "actor_loss": pi_loss,
        "critic_loss": 0.5 * (q1_loss + q2_loss),
        "value_loss": 0.5 * (v1_loss + v2_loss),
        "alpha": models.alpha,
    }


def act(models: AgentModels, state: np.ndarray, deterministic: bool = False,
        rng: np.random.Generator | None = None) -> float:
    action, _, _ = sample_action(models.policy, state, rng, deterministic)
    return action


# ---------------------------------------------------------------------------
# one agent's training loop pieces
# ---------------------------------------------------------------------------

@dataclass
class EpisodeLog:
    reward: float
    price_reward: float
    anxiety_reward: float
    departure_reward: float
    length: int
    critic_loss: float = 0.0
    value_loss: float = 0.0
    actor_loss: float = 0.0
    alpha: float = 1.0
    n_updates: int = 0


class AgentWorker:
    """Everything one simulated EV user owns during training.

    Owns its RNG, environment, models and buffer; never shares state with
    other workers, so workers can run on separate threads. The RNG draw
    order per episode is fixed: day index, session parameters, one noise
    draw per rollout step, then per update the batch indices and the three
    fresh-action draws.
    """

    def __init__(self, index: int, profile: UserProfile, series: PriceSeries,
                 env_config: EnvConfig, sac_config: SacConfig, seed: int,
                 price_scale: float | None = None):
        self.index = index
        self.profile = profile
        self.series = series
        self.sac_config = sac_config
        self.rng = np.random.default_rng(seed)
        self.env = EvEnv(series, env_config, price_scale)
        bat = env_config.battery
        self.models = AgentModels(env_config.state_dim, bat.a_min, bat.a_max,
                                  sac_config, self.rng)
        self.buffer = ReplayBuffer(sac_config.buffer_capacity, env_config.state_dim)
        self._day_starts = series.day_starts(margin_hours=36)
        if not self._day_starts:
            raise InvalidParam("price series too short for overnight sessions")

    def _pick_day(self) -> tuple[int, str]:
        day_start = self._day_starts[int(self.rng.integers(len(self._day_starts)))]
        day_type = "weekend" if self.series.is_weekend(day_start) else "weekday"
        return day_start, day_type

    def run_episode(self) -> EpisodeLog:
        """Phase I: roll out one charging session with the current policy."""
        day_start, day_type = self._pick_day()
        session = sample_session(self.profile, self.rng, day_type, self.series,
                                 day_start)
        state = self.env.reset(session).vector()
        price = anx = dep = 0.0
        steps = 0
        done = False
        while not done:
            a = act(self.models, state, rng=self.rng)
            next_state, _, done, info = self.env.step(a)
            nvec = next_state.vector()
            self.buffer.push(state, info.action_effective,
                             info.price_reward + info.anxiety_reward
                             + info.departure_reward,
                             nvec, done)
            price += info.price_reward
            anx += info.anxiety_reward
            dep += info.departure_reward
            state = nvec
            steps += 1
        return EpisodeLog(
            reward=price + anx + dep,
            price_reward=price, anxiety_reward=anx, departure_reward=dep,
            length=steps, alpha=self.models.alpha,
        )

    def update_phase(self, episode_log: EpisodeLog) -> EpisodeLog:
        """Phase II: gradient steps once the buffer can fill a minibatch."""
        cfg = self.sac_config
        n = cfg.updates_per_episode if cfg.updates_per_episode is not None \
            else episode_log.length
        sums = {"critic_loss": 0.0, "value_loss": 0.0, "actor_loss": 0.0}
        done_updates = 0
        for _ in range(n):
            if self.buffer.size < cfg.batch_size:
                break
            stats = update_step(self.models, self.buffer, cfg, self.rng)
            for k in sums:
                sums[k] += stats[k]
            done_updates += 1
        if not self.models.all_finite():
            raise NanParameters(f"agent {self.index}: non-finite parameters")
        if done_updates:
            episode_log.critic_loss = sums["critic_loss"] / done_updates
            episode_log.value_loss = sums["value_loss"] / done_updates
            episode_log.actor_loss = sums["actor_loss"] / done_updates
        episode_log.alpha = self.models.alpha
        episode_log.n_updates = done_updates
        return episode_log

    def run_training_episode(self) -> EpisodeLog:
        return self.update_phase(self.run_episode())


def train_single(worker: AgentWorker, episodes: int) -> list[EpisodeLog]:
    """Plain (non-federated) SAC: the reference trajectory for one agent."""
    return [worker.run_training_episode() for _ in range(episodes)]
