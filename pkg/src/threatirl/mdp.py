"""Deterministic 4-connected grid MDP with threat/distance features.

A state is a cell and a time step. In static fields the time step is always 0.
In dynamic fields time advances by one per move and field lookups clamp at the
last slice, so the learnable state space is ``n_time_steps * n_cells`` states
indexed ``t * n_cells + cell`` with ``t`` saturated at ``n_time_steps - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import NamedTuple

import numpy as np

from .fieldgen import GridSpec, ThreatField


class Action(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3


ACTIONS = tuple(Action)
# (d_row, d_col); row grows toward +y, col toward +x
DELTAS = np.array([(1, 0), (-1, 0), (0, -1), (0, 1)])


class State(NamedTuple):
    cell: int
    t: int = 0


class Variant(str, Enum):
    """Feature layout: (threat, distance) or (threat, |dx|, |dy|) per block."""

    STANDARD = "standard"
    SPLIT = "split"

    @property
    def block_size(self) -> int:
        return 2 if self is Variant.STANDARD else 3

    @classmethod
    def for_weights(cls, w) -> "Variant":
        n = len(w)
        if n == 2:
            return cls.STANDARD
        if n == 3:
            return cls.SPLIT
        raise ValueError(f"reward weights must have 2 or 3 entries, got {n}")


@dataclass(frozen=True)
class Goal:
    cell: int
    coord: tuple[float, float]

    @classmethod
    def at(cls, grid: GridSpec, point=(1.0, 1.0)) -> "Goal":
        """Goal at the grid point nearest to ``point``."""
        cell = grid.nearest_cell(point)
        return cls(cell, tuple(float(v) for v in grid.coords()[cell]))


class TransitionError(ValueError):
    pass


def transition(s: State, u: Action, grid: GridSpec) -> State | None:
    """Successor of ``s`` under ``u``, or None if the move leaves the grid."""
    row, col = grid.row_col(s.cell)
    dr, dc = DELTAS[int(u)]
    r2, c2 = row + dr, col + dc
    if not (0 <= r2 < grid.rows and 0 <= c2 < grid.cols):
        return None
    t2 = 0 if grid.is_static else s.t + 1
    return State(grid.cell(r2, c2), t2)


def neighbors(s: State, grid: GridSpec) -> list[tuple[Action, State]]:
    out = []
    for u in ACTIONS:
        s2 = transition(s, u, grid)
        if s2 is not None:
            out.append((u, s2))
    return out


def _block(field: ThreatField, goal: Goal, cell: int, t: int, variant: Variant) -> list[float]:
    x = field.grid.coords()[cell]
    c = float(field.slice_at(t)[cell])
    dx, dy = x[0] - goal.coord[0], x[1] - goal.coord[1]
    if variant is Variant.STANDARD:
        return [c, float(np.hypot(dx, dy))]
    return [c, abs(dx), abs(dy)]


def feature_vector(s: State, field: ThreatField, goal: Goal,
                   variant: Variant = Variant.STANDARD) -> np.ndarray:
    """Own block followed by one block per action in Up, Down, Left, Right order.

    Off-grid actions repeat the state's own block.
    """
    variant = Variant(variant)
    own = _block(field, goal, s.cell, s.t, variant)
    phi = list(own)
    for u in ACTIONS:
        s2 = transition(s, u, field.grid)
        if s2 is None:
            phi.extend(own)
        else:
            phi.extend(_block(field, goal, s2.cell, s.t + 1, variant))
    return np.array(phi)


def reward(s: State, u: Action, s_next: State, w, field: ThreatField, goal: Goal) -> float:
    """Linear reward on the threat and goal distance of the state being entered."""
    if transition(s, u, field.grid) != s_next:
        raise TransitionError(f"{s_next} is not reached from {s} by {Action(u).name}")
    w = np.asarray(w, dtype=float)
    variant = Variant.for_weights(w)
    return float(w @ np.array(_block(field, goal, s_next.cell, s_next.t, variant)))


@dataclass(frozen=True)
class FeatureScale:
    """Divisors applied to features before they reach a network or a reward.

    Threat entries are divided by ``threat``, distance entries by ``distance``.
    """

    threat: float
    distance: float

    @classmethod
    def for_field(cls, field: ThreatField) -> "FeatureScale":
        return cls(float(field.values.max()), field.grid.diagonal)

    @classmethod
    def identity(cls) -> "FeatureScale":
        return cls(1.0, 1.0)

    def vector(self, variant: Variant) -> np.ndarray:
        return np.array([self.threat] + [self.distance] * (Variant(variant).block_size - 1))


class StateSpace:
    """Vectorized view of the MDP over every (clamped time, cell) state."""

    def __init__(self, field: ThreatField, goal: Goal, variant: Variant = Variant.STANDARD):
        self.field = field
        self.grid = grid = field.grid
        self.goal = goal
        self.variant = Variant(variant)
        self.n_cells = grid.n_cells
        self.n_slices = grid.n_time_steps
        self.n_states = self.n_cells * self.n_slices

        rows, cols = np.divmod(np.arange(self.n_cells), grid.cols)
        r2 = rows[:, None] + DELTAS[None, :, 0]
        c2 = cols[:, None] + DELTAS[None, :, 1]
        self.valid = (r2 >= 0) & (r2 < grid.rows) & (c2 >= 0) & (c2 < grid.cols)
        # off-grid moves become self-transitions
        self.next_cell = np.where(self.valid, r2 * grid.cols + c2, np.arange(self.n_cells)[:, None])

        coords = grid.coords()
        diff = coords - np.asarray(goal.coord)
        if self.variant is Variant.STANDARD:
            geo = np.hypot(diff[:, 0], diff[:, 1])[:, None]
        else:
            geo = np.abs(diff)
        # own_blocks[t, cell] = block of state (cell, t)
        self.own_blocks = np.concatenate(
            [field.values[:, :, None], np.broadcast_to(geo, (self.n_slices,) + geo.shape)], axis=2)

        t = np.arange(self.n_slices)
        self.next_slice = np.minimum(t + 1, self.n_slices - 1)
        # blocks of the state entered by each action: (T, N, 4, k)
        self.next_blocks = self.own_blocks[self.next_slice][:, self.next_cell]
        self.is_goal = np.zeros((self.n_slices, self.n_cells), dtype=bool)
        self.is_goal[:, goal.cell] = True

    def state_index(self, cell, t):
        return np.minimum(t, self.n_slices - 1) * self.n_cells + cell

    def features(self, scale: FeatureScale | None = None) -> np.ndarray:
        """Feature vectors of all states, shape (n_states, 5 * block_size)."""
        nb = np.where(self.valid[None, :, :, None], self.next_blocks,
                      self.own_blocks[:, :, None, :])
        phi = np.concatenate([self.own_blocks[:, :, None, :], nb], axis=2)
        phi = phi.reshape(self.n_states, -1)
        if scale is not None:
            phi = phi / np.tile(scale.vector(self.variant), 5)
        return phi

    def rewards(self, w, scale: FeatureScale | None = None) -> np.ndarray:
        """Reward of every (state, action), shape (n_states, 4)."""
        w = np.asarray(w, dtype=float)
        if scale is not None:
            w = w / scale.vector(self.variant)
        return (self.next_blocks @ w).reshape(self.n_states, 4)

    def successors(self) -> np.ndarray:
        """Flat successor state index of every (state, action), shape (n_states, 4)."""
        return (self.next_slice[:, None, None] * self.n_cells
                + self.next_cell[None, :, :]).reshape(self.n_states, 4)
