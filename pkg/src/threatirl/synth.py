"""Roll a deterministic policy out from many starts at once."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .dql import Policy
from .fieldgen import ThreatField
from .mdp import Goal, State, StateSpace, Variant
from .oracle import CostVariant, Path, PathDataset, build_path, node_costs


class ModeMismatch(ValueError):
    """A static-field policy was applied to a dynamic field or vice versa."""


def rollout_cells(policy: Policy, space: StateSpace, starts: Sequence[State],
                  m_p: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Follow ``policy`` from every start for at most ``m_p`` transitions.

    Returns ``(cells, times, lengths)`` where ``cells[k, n]`` is the k-th
    visited cell of path n (valid for ``k < lengths[n]``).
    """
    dynamic = space.n_slices > 1
    cells = np.array([s.cell for s in starts], dtype=int)
    times = np.array([s.t for s in starts], dtype=int)
    n = len(cells)
    out_c = np.empty((m_p + 1, n), dtype=int)
    out_t = np.empty((m_p + 1, n), dtype=int)
    out_c[0], out_t[0] = cells, times
    lengths = np.ones(n, dtype=int)
    active = cells != space.goal.cell
    last = space.n_slices - 1
    for k in range(1, m_p + 1):
        if not active.any():
            out_c, out_t = out_c[:k], out_t[:k]
            break
        acts = policy.actions[np.minimum(times, last), cells]
        new_cells = space.next_cell[cells, acts]
        cells = np.where(active, new_cells, cells)
        if dynamic:
            times = np.where(active, times + 1, times)
        out_c[k], out_t[k] = cells, times
        lengths += active
        active &= cells != space.goal.cell
    return out_c, out_t, lengths


def _check_mode(policy: Policy, field: ThreatField):
    if policy.dynamic != (not field.is_static):
        kind = "dynamic" if policy.dynamic else "static"
        raise ModeMismatch(f"a {kind}-field policy cannot run on this field")


def synthesize_dataset(policy: Policy, field: ThreatField, goal: Goal, starts: Sequence[State],
                       m_p: int = 500, feature_variant=Variant.STANDARD,
                       cost_variant=CostVariant.PURE, field_ref: str = "") -> PathDataset:
    """One rollout per start, kept in start order; unfinished paths are flagged, not dropped."""
    starts = list(starts)
    if not starts:
        raise ValueError("starts must be non-empty")
    _check_mode(policy, field)
    space = StateSpace(field, goal, feature_variant)
    costs = node_costs(field, goal, cost_variant)
    cells, times, lengths = rollout_cells(policy, space, starts, m_p)
    paths = [build_path(cells[:L, n], times[:L, n], space, costs) for n, L in enumerate(lengths)]
    ds = PathDataset(paths, cost_variant, feature_variant, field_ref)
    ds.meta["converged_fraction"] = ds.converged_fraction
    return ds


def synthesize_path(policy: Policy, field: ThreatField, goal: Goal, start: State,
                    m_p: int = 500, feature_variant=Variant.STANDARD,
                    cost_variant=CostVariant.PURE) -> Path:
    return synthesize_dataset(policy, field, goal, [start], m_p, feature_variant,
                              cost_variant).paths[0]
