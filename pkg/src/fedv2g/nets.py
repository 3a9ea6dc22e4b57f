"""Dense network substrate: forward passes, exact reverse-mode gradients,
Adam, and a flat parameter format for checkpointing and federated exchange.

Everything is float64 and numpy-only. Networks keep their parameters in one
flat vector; per-layer weight matrices are reshaped views into it, so
optimizer updates and parameter loads are plain in-place array operations.
Topologies are fixed (MLP trunks with rectifier hidden units), which keeps
the backward passes explicit and cheap to verify against finite differences.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CorruptPayload, LayoutMismatch, ShapeMismatch

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# flat parameter container and wire format
# ---------------------------------------------------------------------------

Layout = tuple[tuple[str, tuple[int, ...]], ...]


@dataclass
class ParamVector:
    """Flat float64 parameter array plus the (name, shape) layout header.

    `values` may alias a live network's storage; call `.copy()` before
    holding onto the numbers.
    """

    layout: Layout
    values: np.ndarray

    def __post_init__(self):
        expected = sum(int(np.prod(shape)) for _, shape in self.layout)
        if self.values.ndim != 1 or len(self.values) != expected:
            raise ShapeMismatch(
                f"layout wants {expected} values, got array of shape {self.values.shape}"
            )

    def copy(self) -> "ParamVector":
        return ParamVector(self.layout, self.values.copy())


def ensure_same_layout(a: Layout, b: Layout) -> None:
    if a != b:
        raise LayoutMismatch(f"layouts differ: {a} vs {b}")


def serialize(pv: ParamVector) -> bytes:
    """Little-endian payload: tensor count, per-tensor header, raw float64s."""
    out = [struct.pack("<I", len(pv.layout))]
    for name, shape in pv.layout:
        name_b = name.encode("utf-8")
        out.append(struct.pack("<I", len(name_b)))
        out.append(name_b)
        out.append(struct.pack("<I", len(shape)))
        for dim in shape:
            out.append(struct.pack("<I", dim))
    out.append(np.ascontiguousarray(pv.values, dtype="<f8").tobytes())
    return b"".join(out)


def deserialize(data: bytes, expected_layout: Layout | None = None) -> ParamVector:
    view = memoryview(data)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CorruptPayload(f"payload truncated at byte {pos} (+{n} needed)")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    layout = []
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = bytes(take(name_len)).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = tuple(struct.unpack("<I", take(4))[0] for _ in range(rank))
        layout.append((name, shape))
    layout = tuple(layout)
    n_values = sum(int(np.prod(shape)) for _, shape in layout)
    values = np.frombuffer(take(n_values * 8), dtype="<f8").astype(np.float64)
    if pos != len(view):
        raise CorruptPayload(f"{len(view) - pos} trailing bytes after payload")
    if expected_layout is not None:
        ensure_same_layout(layout, expected_layout)
    return ParamVector(layout=layout, values=values)


# ---------------------------------------------------------------------------
# optimizer and target tracking
# ---------------------------------------------------------------------------

class AdamState:
    """Adam moment accumulators for one flat parameter vector."""

    def __init__(self, n_params: int, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.step_count = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps


def adam_step(theta: np.ndarray, grad: np.ndarray, state: AdamState, lr: float) -> None:
    """One Adam update, in place on `theta`."""
    if theta.shape != grad.shape or theta.shape != state.m.shape:
        raise ShapeMismatch(
            f"theta {theta.shape}, grad {grad.shape}, moments {state.m.shape}"
        )
    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grad
    state.v *= b2
    state.v += (1.0 - b2) * np.square(grad)
    m_hat = state.m / (1.0 - b1 ** state.step_count)
    v_hat = state.v / (1.0 - b2 ** state.step_count)
    theta -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


def polyak_update(target: ParamVector, source: ParamVector, zeta: float) -> None:
    """target <- zeta * source + (1 - zeta) * target, elementwise in place."""
    ensure_same_layout(target.layout, source.layout)
    target.values *= 1.0 - zeta
    target.values += zeta * source.values


# ---------------------------------------------------------------------------
# multilayer perceptron
# ---------------------------------------------------------------------------

def _init_layer(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class _FlatParams:
    """Shared plumbing: flat theta with named reshaped views."""

    layout: Layout
    theta: np.ndarray

    def _alloc(self, layout: Layout) -> None:
        self.layout = layout
        self.theta = np.zeros(sum(int(np.prod(s)) for _, s in layout))
        self._views = {}
        offset = 0
        for name, shape in layout:
            size = int(np.prod(shape))
            self._views[name] = self.theta[offset : offset + size].reshape(shape)
            offset += size

    def view(self, name: str) -> np.ndarray:
        return self._views[name]

    @property
    def n_params(self) -> int:
        return len(self.theta)

    def param_vector(self, copy: bool = False) -> ParamVector:
        vals = self.theta.copy() if copy else self.theta
        return ParamVector(self.layout, vals)

    def load_params(self, pv: ParamVector) -> None:
        ensure_same_layout(self.layout, pv.layout)
        self.theta[:] = pv.values

    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.theta)))

    def _grad_buffer(self) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        grad = np.zeros_like(self.theta)
        views = {}
        offset = 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            views[name] = grad[offset : offset + size].reshape(shape)
            offset += size
        return grad, views


class Mlp(_FlatParams):
    """Fully connected net: rectifier hidden units, identity output.

    `layer_sizes` includes the input width, e.g. [31, 128, 128, 128, 1].
    With `relu_output=True` the final affine layer is rectified too (used for
    the policy trunk, where every listed layer is a hidden layer).
    Weights start at U(-1/sqrt(fan_in), +1/sqrt(fan_in)), biases at zero.
    """

    def __init__(self, layer_sizes: list[int], rng: np.random.Generator | None = None,
                 relu_output: bool = False):
        if len(layer_sizes) < 2:
            raise ShapeMismatch("need at least input and output widths")
        self.layer_sizes = list(layer_sizes)
        self.relu_output = relu_output
        self.n_layers = len(layer_sizes) - 1
        layout = []
        for i in range(self.n_layers):
            layout.append((f"layer{i}.W", (layer_sizes[i], layer_sizes[i + 1])))
            layout.append((f"layer{i}.b", (layer_sizes[i + 1],)))
        self._alloc(tuple(layout))
        if rng is not None:
            for i in range(self.n_layers):
                self.view(f"layer{i}.W")[:] = _init_layer(
                    rng, layer_sizes[i], layer_sizes[i + 1]
                )

    def _relu_at(self, i: int) -> bool:
        return i < self.n_layers - 1 or self.relu_output

    def forward_batch(self, X: np.ndarray, need_cache: bool = False):
        """X: (B, d_in) -> (B, d_out), optionally with the backward cache."""
        if X.ndim != 2 or X.shape[1] != self.layer_sizes[0]:
            raise ShapeMismatch(
                f"expected input (B, {self.layer_sizes[0]}), got {X.shape}"
            )
        acts = [X]
        masks = []
        h = X
        for i in range(self.n_layers):
            z = h @ self.view(f"layer{i}.W") + self.view(f"layer{i}.b")
            if self._relu_at(i):
                mask = z > 0.0
                h = np.where(mask, z, 0.0)
                masks.append(mask)
            else:
                h = z
                masks.append(None)
            acts.append(h)
        if need_cache:
            return h, (acts, masks)
        return h

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_batch(np.asarray(x, dtype=np.float64)[None, :])[0]

    def backward_batch(self, cache, dY: np.ndarray, need_dx: bool = True,
                       need_param_grads: bool = True):
        """Exact gradients for the scalar loss whose dL/d(output) is dY.

        Returns (flat parameter gradient or None, dL/d(input) or None).
        """
        acts, masks = cache
        if dY.shape != acts[-1].shape:
            raise ShapeMismatch(f"upstream grad {dY.shape} vs output {acts[-1].shape}")
        grad, gviews = self._grad_buffer() if need_param_grads else (None, None)
        d = dY
        for i in reversed(range(self.n_layers)):
            if masks[i] is not None:
                d = np.where(masks[i], d, 0.0)
            if need_param_grads:
                gviews[f"layer{i}.W"][:] = acts[i].T @ d
                gviews[f"layer{i}.b"][:] = d.sum(axis=0)
            if i > 0 or need_dx:
                d = d @ self.view(f"layer{i}.W").T
        dX = d if need_dx else None
        return grad, dX

    def regime_signature(self, cache) -> tuple:
        """Hashable fingerprint of the active rectifier regions."""
        _, masks = cache
        return tuple(m.tobytes() if m is not None else b"" for m in masks)


# ---------------------------------------------------------------------------
# Gaussian policy
# ---------------------------------------------------------------------------

@dataclass
class PolicySample:
    """One reparameterized draw and what the backward pass needs."""

    action: np.ndarray     # executed (squashed) action
    raw: np.ndarray        # mu + kappa * sigma, before squashing
    log_prob: np.ndarray
    kappa: np.ndarray
    mu: np.ndarray
    log_sigma: np.ndarray
    sigma: np.ndarray
    squash_aux: np.ndarray  # clip: in-bounds mask; tanh: tanh(raw)


class GaussianPolicyNet(_FlatParams):
    """State -> Gaussian action head with a rectified trunk.

    The trunk applies a rectifier after every listed hidden layer; two affine
    heads map the final features to the mean and to log sigma (clamped to
    keep the variance away from collapse and blow-up). Actions are bounded
    either by clipping the raw draw (log-density of the unsquashed Gaussian)
    or by a tanh squash with the change-of-variables correction, selected by
    `squash`.
    """

    def __init__(self, state_dim: int, action_low: float, action_high: float,
                 rng: np.random.Generator | None = None,
                 hidden: tuple[int, ...] = (128, 128, 128, 128),
                 squash: str = "clip",
                 log_sigma_bounds: tuple[float, float] = (-20.0, 2.0)):
        if squash not in ("clip", "tanh"):
            raise ShapeMismatch(f"unknown squash mode {squash!r}")
        if not action_low < action_high:
            raise ShapeMismatch("action_low must be < action_high")
        self.state_dim = state_dim
        self.hidden = tuple(hidden)
        self.action_low = action_low
        self.action_high = action_high
        self.squash = squash
        self.log_sigma_bounds = log_sigma_bounds
        widths = [state_dim, *hidden]
        layout = []
        for i in range(len(hidden)):
            layout.append((f"trunk{i}.W", (widths[i], widths[i + 1])))
            layout.append((f"trunk{i}.b", (widths[i + 1],)))
        feat = hidden[-1]
        layout += [("mu.W", (feat, 1)), ("mu.b", (1,)),
                   ("log_sigma.W", (feat, 1)), ("log_sigma.b", (1,))]
        self._alloc(tuple(layout))
        if rng is not None:
            for i in range(len(hidden)):
                self.view(f"trunk{i}.W")[:] = _init_layer(rng, widths[i], widths[i + 1])
            self.view("mu.W")[:] = _init_layer(rng, feat, 1)
            self.view("log_sigma.W")[:] = _init_layer(rng, feat, 1)

    # -- forward / backward through trunk and heads --

    def heads_forward(self, S: np.ndarray, need_cache: bool = False):
        """S: (B, state_dim) -> (mu (B,), log_sigma (B,) clamped[, cache])."""
        if S.ndim != 2 or S.shape[1] != self.state_dim:
            raise ShapeMismatch(f"expected states (B, {self.state_dim}), got {S.shape}")
        acts = [S]
        masks = []
        h = S
        for i in range(len(self.hidden)):
            z = h @ self.view(f"trunk{i}.W") + self.view(f"trunk{i}.b")
            mask = z > 0.0
            h = np.where(mask, z, 0.0)
            masks.append(mask)
            acts.append(h)
        mu = (h @ self.view("mu.W") + self.view("mu.b"))[:, 0]
        ls_pre = (h @ self.view("log_sigma.W") + self.view("log_sigma.b"))[:, 0]
        lo, hi = self.log_sigma_bounds
        clamp_mask = (ls_pre > lo) & (ls_pre < hi)
        ls = np.clip(ls_pre, lo, hi)
        if need_cache:
            return mu, ls, (acts, masks, clamp_mask)
        return mu, ls

    def heads_backward(self, cache, dmu: np.ndarray, dls: np.ndarray) -> np.ndarray:
        """Flat parameter gradient from upstream d(mu), d(log sigma)."""
        acts, masks, clamp_mask = cache
        grad, gviews = self._grad_buffer()
        dmu_col = dmu[:, None]
        dls_col = np.where(clamp_mask, dls, 0.0)[:, None]
        h = acts[-1]
        gviews["mu.W"][:] = h.T @ dmu_col
        gviews["mu.b"][:] = dmu_col.sum(axis=0)
        gviews["log_sigma.W"][:] = h.T @ dls_col
        gviews["log_sigma.b"][:] = dls_col.sum(axis=0)
        d = dmu_col @ self.view("mu.W").T + dls_col @ self.view("log_sigma.W").T
        for i in reversed(range(len(self.hidden))):
            d = np.where(masks[i], d, 0.0)
            gviews[f"trunk{i}.W"][:] = acts[i].T @ d
            gviews[f"trunk{i}.b"][:] = d.sum(axis=0)
            if i > 0:
                d = d @ self.view(f"trunk{i}.W").T
        return grad

    def regime_signature(self, cache) -> tuple:
        acts, masks, clamp_mask = cache
        return tuple(m.tobytes() for m in masks) + (clamp_mask.tobytes(),)

    # -- sampling --

    def sample_given_kappa(self, mu: np.ndarray, ls: np.ndarray,
                           kappa: np.ndarray) -> PolicySample:
        """Reparameterized draw a = squash(mu + kappa * sigma) with log-density."""
        sigma = np.exp(ls)
        raw = mu + kappa * sigma
        base_logp = -0.5 * np.square(kappa) - ls - 0.5 * LOG_2PI
        if self.squash == "clip":
            action = np.clip(raw, self.action_low, self.action_high)
            in_bounds = (raw > self.action_low) & (raw < self.action_high)
            return PolicySample(action, raw, base_logp, kappa, mu, ls, sigma,
                                squash_aux=in_bounds)
        half_range = 0.5 * (self.action_high - self.action_low)
        center = 0.5 * (self.action_high + self.action_low)
        tnh = np.tanh(raw)
        action = center + half_range * tnh
        logp = base_logp - np.log(half_range * (1.0 - np.square(tnh)) + 1e-9)
        return PolicySample(action, raw, logp, kappa, mu, ls, sigma, squash_aux=tnh)

    def sample_batch(self, S: np.ndarray, rng: np.random.Generator,
                     need_cache: bool = False):
        if need_cache:
            mu, ls, cache = self.heads_forward(S, need_cache=True)
        else:
            mu, ls = self.heads_forward(S)
            cache = None
        kappa = rng.standard_normal(S.shape[0])
        sample = self.sample_given_kappa(mu, ls, kappa)
        return (sample, cache) if need_cache else sample

    def sample_backward(self, sample: PolicySample, d_action: np.ndarray,
                        d_logp: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Push gradients on (action, log_prob) back to (mu, log_sigma).

        Treats kappa as a constant (reparameterization trick). The clip
        squash passes zero action-gradient outside the bounds; the tanh
        squash includes the change-of-variables terms.
        """
        if self.squash == "clip":
            d_raw = d_action * sample.squash_aux
            # log_prob = -kappa^2/2 - log_sigma - const, so only dls is hit
            dmu = d_raw
            dls = d_raw * sample.kappa * sample.sigma - d_logp
            return dmu, dls
        tnh = sample.squash_aux
        half_range = 0.5 * (self.action_high - self.action_low)
        sech2 = 1.0 - np.square(tnh)
        d_raw = d_action * half_range * sech2
        # d/d raw of -log(half_range * sech2 + eps)
        denom = half_range * sech2 + 1e-9
        d_raw += d_logp * (2.0 * half_range * tnh * sech2) / denom
        dmu = d_raw
        dls = d_raw * sample.kappa * sample.sigma - d_logp
        return dmu, dls

    def deterministic_action(self, S: np.ndarray) -> np.ndarray:
        """Evaluation-mode action: the squashed mean."""
        mu, _ = self.heads_forward(S)
        if self.squash == "clip":
            return np.clip(mu, self.action_low, self.action_high)
        half_range = 0.5 * (self.action_high - self.action_low)
        center = 0.5 * (self.action_high + self.action_low)
        return center + half_range * np.tanh(mu)


def sample_action(policy: GaussianPolicyNet, state: np.ndarray,
                  rng: np.random.Generator | None = None,
                  deterministic: bool = False) -> tuple[float, float, float]:
    """Single-state draw -> (action, log_prob, kappa).

    Deterministic mode returns the squashed mean with its density evaluated
    at kappa = 0.
    """
    S = np.asarray(state, dtype=np.float64)[None, :]
    mu, ls = policy.heads_forward(S)
    if deterministic:
        kappa = np.zeros(1)
    else:
        if rng is None:
            raise ShapeMismatch("stochastic sampling needs an rng")
        kappa = rng.standard_normal(1)
    sample = policy.sample_given_kappa(mu, ls, kappa)
    return float(sample.action[0]), float(sample.log_prob[0]), float(sample.kappa[0])
