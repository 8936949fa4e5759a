"""Outer inverse-RL loop: alternate Q-learning, rollouts and weight updates.

Feature expectations enter the update relative to the expert's, i.e. as
``mu / mu_expert - 1``, so the expert sits at the origin and the stopping
threshold reads as a relative mismatch. The projected estimate ``mu_bar`` is
rescaled to unit max-norm after every update to keep it bounded; the reward
weights are clipped to be non-positive and rescaled to unit max-norm.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field as dc_field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .dql import DQLConfig, Policy, QModel, SweepContext, greedy_policy, run_dql
from .fieldgen import ThreatField
from .mdp import FeatureScale, Goal, State, Variant
from .oracle import PathDataset, all_starts, feature_expectation
from .synth import synthesize_dataset

log = logging.getLogger(__name__)


class WeightPostprocess(str, Enum):
    CLIP_NORMALIZE = "clip-normalize"
    NONE = "none"


class InitMode(str, Enum):
    GUESS = "guess"          # w0 as given, default (-1, -1)
    EXPERT = "expert"        # w0 from the expert feature expectation


@dataclass
class IRLConfig:
    e_mu: float = 0.01
    m_i: int = 150
    m_e: int = 300
    m_p: int = 500
    eta_i: float = 0.01
    k_rollouts: int | None = None
    w0: tuple[float, ...] | None = None
    weight_postprocess: WeightPostprocess = WeightPostprocess.CLIP_NORMALIZE
    init: InitMode = InitMode.GUESS

    def __post_init__(self):
        self.weight_postprocess = WeightPostprocess(self.weight_postprocess)
        self.init = InitMode(self.init)
        if self.e_mu <= 0:
            raise ValueError("e_mu must be positive")
        if not 0 < self.eta_i <= 1:
            raise ValueError("eta_i must lie in (0, 1]")
        if self.m_i < 1 or self.m_e < 1 or self.m_p < 1:
            raise ValueError("m_i, m_e and m_p must be positive")
        if self.w0 is not None:
            self.w0 = tuple(float(v) for v in self.w0)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["weight_postprocess"] = self.weight_postprocess.value
        out["init"] = self.init.value
        out["w0"] = None if self.w0 is None else list(self.w0)
        return out


@dataclass
class IRLState:
    i: int
    mu_bar: np.ndarray
    w: np.ndarray
    mu: np.ndarray
    history: list[dict] = dc_field(default_factory=list)


@dataclass
class IRLResult:
    weights: np.ndarray
    policy: Policy
    model: QModel
    state: IRLState
    converged: bool

    @property
    def history(self) -> list[dict]:
        return self.state.history


def projection_update(mu_bar, delta_mu) -> np.ndarray:
    """mu_bar + (<delta, mu_bar> / |delta|) * delta; unchanged when delta is zero."""
    mu_bar = np.asarray(mu_bar, dtype=float)
    delta_mu = np.asarray(delta_mu, dtype=float)
    norm = np.linalg.norm(delta_mu)
    if norm == 0:
        return mu_bar.copy()
    return mu_bar + (delta_mu @ mu_bar) / norm * delta_mu


def postprocess_weights(w, previous=None) -> np.ndarray:
    """Clip positive entries to zero and rescale to unit max-norm.

    An all-zero result would erase the reward, so ``previous`` is kept instead.
    """
    w = np.minimum(np.asarray(w, dtype=float), 0.0)
    peak = np.abs(w).max()
    if peak == 0:
        if previous is None:
            raise ValueError("weights clipped to zero")
        return np.asarray(previous, dtype=float).copy()
    return w / peak


def weight_update(w, mu_bar_next, eta_i: float,
                  postprocess=WeightPostprocess.CLIP_NORMALIZE) -> np.ndarray:
    """Convex blend ``eta_i * mu_bar_next + (1 - eta_i) * w`` then post-processing."""
    w = np.asarray(w, dtype=float)
    blended = eta_i * np.asarray(mu_bar_next, dtype=float) + (1.0 - eta_i) * w
    if WeightPostprocess(postprocess) is WeightPostprocess.NONE:
        return blended
    return postprocess_weights(blended, previous=w)


def relative_mismatch(mu, mu_expert) -> np.ndarray:
    """Componentwise ``mu / mu_expert - 1``; plain difference where the expert entry is 0."""
    mu = np.asarray(mu, dtype=float)
    mu_expert = np.asarray(mu_expert, dtype=float)
    safe = np.where(mu_expert != 0, mu_expert, 1.0)
    return np.where(mu_expert != 0, mu / safe - 1.0, mu)


def rollout_feature_expectation(policy: Policy, field: ThreatField, goal: Goal,
                                starts: Sequence[State], m_p: int = 500,
                                variant=Variant.STANDARD) -> tuple[np.ndarray, PathDataset]:
    """Mean aggregate feature over policy rollouts (start node included).

    Paths that miss the goal are cut at ``m_p`` transitions and keep their
    full truncated sums.
    """
    ds = synthesize_dataset(policy, field, goal, starts, m_p, feature_variant=variant)
    return feature_expectation(ds), ds


def initial_weights(cfg: IRLConfig, variant: Variant, mu_expert: np.ndarray,
                    scale: FeatureScale) -> np.ndarray:
    if cfg.init is InitMode.EXPERT:
        return postprocess_weights(-mu_expert / scale.vector(variant))
    if cfg.w0 is not None:
        w0 = np.asarray(cfg.w0, dtype=float)
        if len(w0) != variant.block_size:
            raise ValueError(f"w0 has {len(w0)} entries, variant needs {variant.block_size}")
        return w0
    return -np.ones(variant.block_size)


def irl_train(dataset: PathDataset, field: ThreatField, goal: Goal,
              irl_cfg: IRLConfig | None = None, dql_cfg: DQLConfig | None = None,
              seed: int = 0, model: QModel | None = None,
              starts: Sequence[State] | None = None,
              callback: Callable[[IRLState], None] | None = None) -> IRLResult:
    """Learn reward weights and a greedy policy that reproduce ``dataset``.

    Rollouts start from the expert paths' own start states unless ``starts``
    is given, so learner and expert feature expectations average over the
    same initial states.
    """
    irl_cfg = irl_cfg or IRLConfig()
    dql_cfg = dql_cfg or DQLConfig()
    variant = dataset.feature_variant
    if model is None:
        model = QModel.create(field, variant, dql_cfg.hidden, seed)
    elif model.variant is not variant:
        raise ValueError("model feature variant does not match the dataset")
    if starts is None:
        starts = dataset.starts
        if irl_cfg.k_rollouts is not None and irl_cfg.k_rollouts < len(starts):
            from .seeding import substream
            idx = np.sort(substream(seed, "rollout").choice(len(starts), irl_cfg.k_rollouts,
                                                            replace=False))
            starts = [starts[k] for k in idx]
    starts = list(starts) or all_starts(field.grid, goal)

    mu_expert = feature_expectation(dataset)
    w = initial_weights(irl_cfg, variant, mu_expert, model.scale)
    state = IRLState(0, w.copy(), w.copy(), np.zeros_like(w))
    ctx = SweepContext(model, field, goal, w)
    converged = False
    policy = None
    while state.i < irl_cfg.m_i:
        for _ in range(irl_cfg.m_e):
            run_dql(model, field, goal, state.w, dql_cfg, ctx=ctx, return_policy=False)
        policy = greedy_policy(model, field, goal)
        mu, paths = rollout_feature_expectation(policy, field, goal, starts, irl_cfg.m_p, variant)
        rel = relative_mismatch(mu, mu_expert)
        err = float(np.linalg.norm(rel))
        state.mu = mu
        state.history.append({
            "iteration": state.i, "error": err,
            "w": state.w.tolist(), "mu": mu.tolist(),
            "converged_fraction": paths.converged_fraction, "sweeps": model.j,
        })
        log.info("irl iter %d: error %.4f w %s conv %.3f", state.i, err,
                 np.round(state.w, 4), paths.converged_fraction)
        if callback is not None:
            callback(state)
        if err < irl_cfg.e_mu:
            converged = True
            break
        state.mu_bar = projection_update(state.mu_bar, rel - state.mu_bar)
        peak = np.abs(state.mu_bar).max()
        if peak > 0:
            state.mu_bar = state.mu_bar / peak
        state.w = weight_update(state.w, state.mu_bar, irl_cfg.eta_i, irl_cfg.weight_postprocess)
        ctx.set_weights(state.w)
        state.i += 1
    # report the weights that produced the returned policy
    return IRLResult(np.array(state.history[-1]["w"]), policy, model, state, converged)
