"""Deep Q-learning over full-state sweeps with a soft-updated target network.

The Q network is a small numpy MLP mapping a (scaled) feature vector to four
action values in Up, Down, Left, Right order. Each sweep visits every
non-terminal state once, picks an epsilon-greedy action, and takes one
gradient step on the mean squared TD residual over the sweep.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field as dc_field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .fieldgen import FORMAT_VERSION, ThreatField, check_format_version
from .mdp import FeatureScale, Goal, StateSpace, Variant
from .seeding import substream


class TrainingDivergence(RuntimeError):
    """Raised when the TD loss stops being finite."""


class EpsilonMode(str, Enum):
    PER_STATE = "per-state"
    PER_SWEEP = "per-sweep"


@dataclass
class DQLConfig:
    m_q: int = 25
    eta_q: float = 0.005
    eta_qprime: float = 0.001
    eps0: float = 0.051
    eps1: float = 0.95
    d: float = 500.0
    gamma: float = 1.0
    loss_reset_threshold: float = 0.5
    epsilon_mode: EpsilonMode = EpsilonMode.PER_STATE
    hidden: tuple[int, ...] = (64, 64)
    optimizer: str = "adam"

    def __post_init__(self):
        self.epsilon_mode = EpsilonMode(self.epsilon_mode)
        self.hidden = tuple(int(h) for h in self.hidden)
        if not (0 < self.eta_q < 1 and 0 < self.eta_qprime < 1):
            raise ValueError("learning rates must lie in (0, 1)")
        if not 0 <= self.eps0 <= self.eps1 <= 1:
            raise ValueError("need 0 <= eps0 <= eps1 <= 1")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.m_q < 1 or self.d <= 0:
            raise ValueError("m_q and d must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["epsilon_mode"] = self.epsilon_mode.value
        out["hidden"] = list(self.hidden)
        return out


def epsilon(j: int, cfg: DQLConfig) -> float:
    """Exploration probability at global sweep ``j``."""
    return cfg.eps0 + (cfg.eps1 - cfg.eps0) * math.exp(-j / cfg.d)


# --- MLP ---------------------------------------------------------------------
# Parameters live in one flat vector; ``layers`` returns (W, b) views into it.


def n_params(arch: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(arch[:-1], arch[1:]))


def layers(flat: np.ndarray, arch: Sequence[int]) -> list[tuple[np.ndarray, np.ndarray]]:
    out, k = [], 0
    for a, b in zip(arch[:-1], arch[1:]):
        W = flat[k:k + a * b].reshape(a, b)
        k += a * b
        out.append((W, flat[k:k + b]))
        k += b
    return out


def init_params(arch: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    flat = np.zeros(n_params(arch))
    for W, _ in layers(flat, arch):
        n_in, n_out = W.shape
        bound = math.sqrt(6.0 / (n_in + n_out))
        W[:] = rng.uniform(-bound, bound, size=W.shape)
    return flat


# Hidden activation is squareplus, (z + sqrt(z^2 + 4)) / 2: smooth, ReLU-like, cheap.
# The forward pass caches (z, sqrt(z^2 + 4)) per hidden layer for the backward pass.


def _forward_cache(flat: np.ndarray, arch, X: np.ndarray):
    acts, pres = [X], []
    h = X
    ls = layers(flat, arch)
    for k, (W, b) in enumerate(ls):
        z = h @ W + b
        if k < len(ls) - 1:
            r = np.sqrt(z * z + 4.0)
            pres.append((z, r))
            h = 0.5 * (z + r)
        else:
            h = z
        acts.append(h)
    return h, acts, pres


def forward(flat: np.ndarray, phi: np.ndarray, arch: Sequence[int]) -> np.ndarray:
    """Q-values for one feature vector (shape (4,)) or a batch (shape (B, 4))."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape[-1] != arch[0]:
        raise ValueError(f"feature length {phi.shape[-1]} does not match network input {arch[0]}")
    return _forward_cache(flat, arch, phi)[0]


def _backward(flat: np.ndarray, arch, acts, pres, grad_out: np.ndarray) -> np.ndarray:
    grad = np.empty_like(flat)
    ls = layers(flat, arch)
    gls = layers(grad, arch)
    g = grad_out
    for k in range(len(ls) - 1, -1, -1):
        gW, gb = gls[k]
        np.matmul(acts[k].T, g, out=gW)
        gb[:] = g.sum(axis=0)
        if k > 0:
            z, r = pres[k - 1]
            g = (g @ ls[k][0].T) * (0.5 + 0.5 * z / r)
    return grad


class _Adam:
    def __init__(self, size: int, b1=0.9, b2=0.999, eps=1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.b1, self.b2, self.eps, self.t = b1, b2, eps, 0

    def step(self, flat: np.ndarray, grad: np.ndarray, lr: float) -> None:
        self.t += 1
        self.m *= self.b1
        self.m += (1 - self.b1) * grad
        self.v *= self.b2
        self.v += (1 - self.b2) * grad * grad
        c1, c2 = 1 - self.b1**self.t, 1 - self.b2**self.t
        flat -= (lr / c1) * self.m / (np.sqrt(self.v / c2) + self.eps)


# --- model -------------------------------------------------------------------

@dataclass
class QModel:
    arch: tuple[int, ...]
    theta: np.ndarray
    theta_prime: np.ndarray
    scale: FeatureScale
    variant: Variant = Variant.STANDARD
    dynamic: bool = False
    j: int = 0
    rng: np.random.Generator = dc_field(default_factory=np.random.default_rng, repr=False)
    optimizer_state: _Adam | None = dc_field(default=None, repr=False)

    @classmethod
    def create(cls, field: ThreatField, variant=Variant.STANDARD, hidden=(64, 64),
               seed: int = 0, scale: FeatureScale | None = None) -> "QModel":
        variant = Variant(variant)
        arch = (5 * variant.block_size, *hidden, 4)
        theta = init_params(arch, substream(seed, "model_init"))
        return cls(arch, theta, theta.copy(), scale or FeatureScale.for_field(field),
                   variant, not field.is_static, 0, substream(seed, "dql"))

    def q_values(self, space: StateSpace, target: bool = False) -> np.ndarray:
        params = self.theta_prime if target else self.theta
        return forward(params, space.features(self.scale), self.arch)


class Policy:
    """Deterministic action table indexed by (clamped slice, cell)."""

    def __init__(self, actions: np.ndarray, dynamic: bool):
        self.actions = np.asarray(actions, dtype=int)
        self.dynamic = dynamic

    def __call__(self, cell: int, t: int = 0) -> int:
        return int(self.actions[min(t, self.actions.shape[0] - 1), cell])

    def __eq__(self, other):
        return isinstance(other, Policy) and np.array_equal(self.actions, other.actions)


def argmax_first(q: np.ndarray) -> np.ndarray:
    """Argmax over the last axis; ties go to the earliest action."""
    return np.argmax(q, axis=-1)


def greedy_policy(model: QModel, field: ThreatField, goal: Goal) -> Policy:
    space = StateSpace(field, goal, model.variant)
    q = model.q_values(space)
    return Policy(argmax_first(q).reshape(space.n_slices, space.n_cells), not field.is_static)


class SweepContext:
    """Per-(field, goal, weights) arrays reused by every sweep."""

    def __init__(self, model: QModel, field: ThreatField, goal: Goal, w):
        w = np.asarray(w, dtype=float)
        if Variant.for_weights(w) is not model.variant:
            raise ValueError("reward weights do not match the model's feature variant")
        space = StateSpace(field, goal, model.variant)
        self.space = space
        self.scale = model.scale
        self.features = space.features(model.scale)
        self.succ = space.successors()
        self.terminal = space.is_goal.ravel()
        self.active = np.flatnonzero(~self.terminal)
        self.X = self.features[self.active]
        self.S2 = self.succ[self.active]
        self.bootstrap = ~self.terminal[self.S2]
        self.set_weights(w)

    def set_weights(self, w) -> None:
        self.R = self.space.rewards(w, self.scale)[self.active]


def dql_sweep(model: QModel, field: ThreatField, goal: Goal, w, cfg: DQLConfig,
              ctx: SweepContext | None = None) -> float:
    """One pass over all non-terminal states; returns the residual norm."""
    ctx = ctx or SweepContext(model, field, goal, w)
    n = len(ctx.active)
    q, acts, pres = _forward_cache(model.theta, model.arch, ctx.X)
    q_target = forward(model.theta_prime, ctx.features, model.arch).max(axis=1)

    eps = epsilon(model.j, cfg)
    actions = argmax_first(q)
    if cfg.epsilon_mode is EpsilonMode.PER_STATE:
        explore = model.rng.random(n) < eps
        actions = np.where(explore, model.rng.integers(0, 4, size=n), actions)
    elif model.rng.random() < eps:
        actions = model.rng.integers(0, 4, size=n)

    rows = np.arange(n)
    s2 = ctx.S2[rows, actions]
    boot = np.where(ctx.bootstrap[rows, actions], cfg.gamma * q_target[s2], 0.0)
    resid = ctx.R[rows, actions] - q[rows, actions] + boot
    loss_norm = float(np.sqrt(resid @ resid))
    if not math.isfinite(loss_norm):
        raise TrainingDivergence(f"non-finite TD loss at sweep {model.j}")

    grad_out = np.zeros_like(q)
    grad_out[rows, actions] = -2.0 * resid / n
    grad = _backward(model.theta, model.arch, acts, pres, grad_out)
    if cfg.optimizer == "adam":
        if model.optimizer_state is None:
            model.optimizer_state = _Adam(model.theta.size)
        model.optimizer_state.step(model.theta, grad, cfg.eta_q)
    else:
        model.theta -= cfg.eta_q * grad
    model.theta_prime *= 1.0 - cfg.eta_qprime
    model.theta_prime += cfg.eta_qprime * model.theta
    model.j += 1
    return loss_norm


def run_dql(model: QModel, field: ThreatField, goal: Goal, w, cfg: DQLConfig,
            m_q: int | None = None, ctx: SweepContext | None = None,
            return_policy: bool = True) -> Policy | None:
    """``m_q`` sweeps, then a hard target reset if the last loss is small enough."""
    ctx = ctx or SweepContext(model, field, goal, w)
    loss = math.inf
    for _ in range(cfg.m_q if m_q is None else m_q):
        loss = dql_sweep(model, field, goal, w, cfg, ctx)
    if loss <= cfg.loss_reset_threshold:
        model.theta_prime = model.theta.copy()
    if return_policy:
        return greedy_policy(model, field, goal)
    return None


# --- persistence -------------------------------------------------------------

def _params_to_list(flat: np.ndarray, arch) -> list:
    return [{"W": W.tolist(), "b": b.tolist()} for W, b in layers(flat, arch)]


def _params_from_list(doc: list, arch) -> np.ndarray:
    flat = np.zeros(n_params(arch))
    for (W, b), layer in zip(layers(flat, arch), doc):
        W[:] = np.asarray(layer["W"], float)
        b[:] = np.asarray(layer["b"], float)
    return flat


def model_to_dict(model: QModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "arch": list(model.arch),
        "theta": _params_to_list(model.theta, model.arch),
        "theta_prime": _params_to_list(model.theta_prime, model.arch),
        "normalization": {"threat": model.scale.threat, "distance": model.scale.distance},
        "variant": model.variant.value,
        "dynamic": model.dynamic,
        "j": model.j,
        "rng_state": model.rng.bit_generator.state,
    }


def model_from_dict(doc: dict) -> QModel:
    check_format_version(doc, "model")
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = doc["rng_state"]
    norm = doc["normalization"]
    arch = tuple(int(a) for a in doc["arch"])
    return QModel(arch, _params_from_list(doc["theta"], arch),
                  _params_from_list(doc["theta_prime"], arch),
                  FeatureScale(float(norm["threat"]), float(norm["distance"])),
                  Variant(doc["variant"]), bool(doc["dynamic"]), int(doc["j"]), rng)


def save_model(model: QModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path) -> QModel:
    return model_from_dict(json.loads(Path(path).read_text()))
