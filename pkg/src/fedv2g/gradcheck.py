"""Central finite-difference verification of the analytic backward passes.

The check perturbs individual parameters by +-h and compares the symmetric
difference quotient against the reverse-mode gradient. Rectifier and clamp
nonlinearities make the loss only piecewise smooth: a perturbation window
that crosses a kink invalidates the quotient (not the gradient), so any
parameter whose +-h evaluations land in different activation regimes is
skipped and replaced by another sampled index.

Losses are fixed random linear functionals of the network outputs, which
exercises every parameter while keeping the check independent of the
training objectives.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .nets import GaussianPolicyNet, Mlp


@dataclass
class GradCheckReport:
    name: str
    seed: int
    max_rel_err: float
    n_checked: int
    n_skipped: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err < 1e-4 and self.n_checked > 0

    def line(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return (f"{status}  {self.name} seed={self.seed} "
                f"max_rel_err={self.max_rel_err:.3e} "
                f"checked={self.n_checked} skipped={self.n_skipped}")


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


def _pick_indices(layout, values_per_tensor: int, rng: np.random.Generator):
    """A few parameter indices per tensor, plus spares for regime skips."""
    indices = []
    offset = 0
    for _, shape in layout:
        size = int(np.prod(shape))
        k = min(size, values_per_tensor)
        chosen = rng.choice(size, size=k, replace=False)
        indices.extend(offset + int(c) for c in chosen)
        offset += size
    return indices


def _central_diff(loss_fn, theta: np.ndarray, analytic: np.ndarray,
                  indices, h: float):
    """Returns (max relative error, n checked, n skipped)."""
    _, sig0 = loss_fn()
    max_err = 0.0
    checked = skipped = 0
    for idx in indices:
        orig = theta[idx]
        theta[idx] = orig + h
        lp, sp = loss_fn()
        theta[idx] = orig - h
        lm, sm = loss_fn()
        theta[idx] = orig
        if sp != sig0 or sm != sig0:
            skipped += 1
            continue
        fd = (lp - lm) / (2.0 * h)
        max_err = max(max_err, _rel_err(fd, float(analytic[idx])))
        checked += 1
    return max_err, checked, skipped


def check_mlp(layer_sizes, seed: int, relu_output: bool = False,
              batch: int = 4, values_per_tensor: int = 10,
              h: float = 1e-5) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    net = Mlp(list(layer_sizes), rng, relu_output=relu_output)
    X = rng.standard_normal((batch, layer_sizes[0]))
    W_loss = rng.standard_normal((batch, layer_sizes[-1]))

    def loss_fn():
        y, cache = net.forward_batch(X, need_cache=True)
        return float(np.sum(W_loss * y)), net.regime_signature(cache)

    _, cache = net.forward_batch(X, need_cache=True)
    analytic, _ = net.backward_batch(cache, W_loss, need_dx=False)
    indices = _pick_indices(net.layout, values_per_tensor, rng)
    err, checked, skipped = _central_diff(loss_fn, net.theta, analytic, indices, h)
    name = "mlp" + ("x".join(str(w) for w in layer_sizes))
    return GradCheckReport(name, seed, err, checked, skipped)


def check_policy(state_dim: int, seed: int, hidden=(128, 128, 128, 128),
                 batch: int = 4, values_per_tensor: int = 10,
                 h: float = 1e-5) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    net = GaussianPolicyNet(state_dim, -0.2, 0.2, rng, hidden=hidden)
    X = rng.standard_normal((batch, state_dim))
    c_mu = rng.standard_normal(batch)
    c_ls = rng.standard_normal(batch)

    def loss_fn():
        mu, ls, cache = net.heads_forward(X, need_cache=True)
        return float(np.sum(c_mu * mu + c_ls * ls)), net.regime_signature(cache)

    _, _, cache = net.heads_forward(X, need_cache=True)
    analytic = net.heads_backward(cache, c_mu, c_ls)
    indices = _pick_indices(net.layout, values_per_tensor, rng)
    err, checked, skipped = _central_diff(loss_fn, net.theta, analytic, indices, h)
    name = f"policy{state_dim}x" + "x".join(str(w) for w in hidden)
    return GradCheckReport(name, seed, err, checked, skipped)


def run_suite(seed: int = 0, n_seeds: int = 10, state_dim: int = 30,
              policy_hidden=(128, 128, 128, 128),
              critic_hidden=(128, 128, 128)) -> tuple[bool, list[GradCheckReport], float]:
    """FD-check every network shape the trainer instantiates.

    Returns (all passed, per-check reports, elapsed seconds).
    """
    t0 = time.perf_counter()
    reports = []
    critic_sizes = [state_dim + 1, *critic_hidden, 1]
    value_sizes = [state_dim, *critic_hidden, 1]
    for s in range(seed, seed + n_seeds):
        reports.append(check_mlp(critic_sizes, s))
        reports.append(check_mlp(value_sizes, s))
        reports.append(check_policy(state_dim, s, hidden=policy_hidden))
    elapsed = time.perf_counter() - t0
    return all(r.passed for r in reports), reports, elapsed
