"""Exact minimum-exposure paths and expert datasets.

Path cost is the sum of node costs over every visited state, start included.
The dynamic oracle runs Dijkstra on the time-expanded graph whose last slice
links to itself, matching the clamped field lookups.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field as dc_field
from enum import Enum
from pathlib import Path as FsPath
from typing import Iterable, Sequence

import numpy as np

from .fieldgen import FORMAT_VERSION, ThreatField, check_format_version
from .mdp import Goal, State, StateSpace, Variant


class CostVariant(str, Enum):
    PURE = "pure"          # sum of c(x)
    VERTICAL = "vertical"  # sum of c(x) + |x[2] - goal[2]|

    @property
    def default_features(self) -> Variant:
        return Variant.STANDARD if self is CostVariant.PURE else Variant.SPLIT


class DatasetError(ValueError):
    pass


def node_costs(field: ThreatField, goal: Goal, cost_variant=CostVariant.PURE) -> np.ndarray:
    """Per-(slice, cell) cost of visiting a node, shape (n_time_steps, n_cells)."""
    cost_variant = CostVariant(cost_variant)
    costs = field.values.copy()
    if cost_variant is CostVariant.VERTICAL:
        costs += np.abs(field.grid.coords()[:, 1] - goal.coord[1])[None, :]
    return costs


@dataclass
class Path:
    states: list[State]
    reached_goal: bool
    cost: float
    phi: np.ndarray

    def __len__(self):
        return len(self.states)

    @property
    def cells(self) -> list[int]:
        return [s.cell for s in self.states]

    def to_dict(self) -> dict:
        return {
            "start": {"cell": self.states[0].cell, "t": self.states[0].t},
            "states": [{"cell": s.cell, "t": s.t} for s in self.states],
            "cost": self.cost,
            "phi": [float(v) for v in self.phi],
            "reached_goal": self.reached_goal,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Path":
        states = [State(int(s["cell"]), int(s["t"])) for s in d["states"]]
        return cls(states, bool(d["reached_goal"]), float(d["cost"]), np.asarray(d["phi"], float))


def build_path(cells: Sequence[int], times: Sequence[int], space: StateSpace,
               costs: np.ndarray) -> Path:
    """Assemble a Path and its aggregate features from visited cells and times."""
    cells = np.asarray(cells, dtype=int)
    times = np.asarray(times, dtype=int)
    slices = np.minimum(times, space.n_slices - 1)
    phi = space.own_blocks[slices, cells].sum(axis=0)
    cost = float(costs[slices, cells].sum())
    states = [State(int(c), int(t)) for c, t in zip(cells, times)]
    return Path(states, bool(cells[-1] == space.goal.cell), cost, phi)


@dataclass
class PathDataset:
    paths: list[Path]
    cost_variant: CostVariant = CostVariant.PURE
    feature_variant: Variant = Variant.STANDARD
    field_ref: str = ""
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.cost_variant = CostVariant(self.cost_variant)
        self.feature_variant = Variant(self.feature_variant)

    def __len__(self):
        return len(self.paths)

    @property
    def N(self) -> int:
        return len(self.paths)

    @property
    def converged_fraction(self) -> float:
        if not self.paths:
            return 0.0
        return float(np.mean([p.reached_goal for p in self.paths]))

    @property
    def starts(self) -> list[State]:
        return [p.states[0] for p in self.paths]


@dataclass
class ValueTable:
    """Optimal cost-to-go per (slice, cell) plus the successor action realizing it."""

    values: np.ndarray
    successor: np.ndarray
    space: StateSpace
    costs: np.ndarray
    cost_variant: CostVariant

    def value(self, s: State) -> float:
        return float(self.values[min(s.t, self.space.n_slices - 1), s.cell])

    def path(self, start: State) -> Path:
        sp = self.space
        cells, times = [start.cell], [start.t]
        cell, t = start.cell, start.t
        limit = sp.n_states + 1
        while cell != sp.goal.cell:
            u = self.successor[min(t, sp.n_slices - 1), cell]
            if u < 0 or len(cells) > limit:
                raise DatasetError(f"goal unreachable from {start}")
            cell = int(sp.next_cell[cell, u])
            t = t + 1 if sp.n_slices > 1 else 0
            cells.append(cell)
            times.append(t)
        return build_path(cells, times, sp, self.costs)


def _time_expanded_dijkstra(costs: np.ndarray, space: StateSpace) -> np.ndarray:
    """Cost-to-go for every (slice, cell) node; goal nodes are absorbing."""
    T, N = costs.shape
    goal = space.goal.cell
    dist = np.full((T, N), np.inf)
    done = np.zeros((T, N), dtype=bool)
    heap = []
    for t in range(T):
        dist[t, goal] = costs[t, goal]
        heap.append((dist[t, goal], t, goal))
    heapq.heapify(heap)
    # predecessors of a cell are its grid neighbours (4-adjacency is symmetric)
    nbrs = [space.next_cell[c][space.valid[c]].tolist() for c in range(N)]
    while heap:
        d, t, c = heapq.heappop(heap)
        if done[t, c]:
            continue
        done[t, c] = True
        prev_slices = [t - 1] if t < T - 1 else [t - 1, t]
        for tp in prev_slices:
            if tp < 0:
                continue
            for p in nbrs[c]:
                if p == goal or done[tp, p]:
                    continue
                nd = costs[tp, p] + d
                if nd < dist[tp, p]:
                    dist[tp, p] = nd
                    heapq.heappush(heap, (nd, tp, p))
    return dist


def _successor_actions(values: np.ndarray, space: StateSpace) -> np.ndarray:
    """First action (fixed order) entering a minimum-value valid neighbour."""
    nxt = values[space.next_slice][:, space.next_cell]  # (T, N, 4)
    nxt = np.where(space.valid[None], nxt, np.inf)
    succ = np.argmin(nxt, axis=2)  # argmin returns the first minimum
    succ[:, space.goal.cell] = -1
    succ[~np.isfinite(nxt.min(axis=2))] = -1
    return succ


def _solve(field: ThreatField, goal: Goal, cost_variant) -> ValueTable:
    cost_variant = CostVariant(cost_variant)
    space = StateSpace(field, goal, cost_variant.default_features)
    costs = node_costs(field, goal, cost_variant)
    values = _time_expanded_dijkstra(costs, space)
    return ValueTable(values, _successor_actions(values, space), space, costs, cost_variant)


def dijkstra_static(field: ThreatField, goal: Goal, cost_variant=CostVariant.PURE) -> ValueTable:
    if not field.is_static:
        raise ValueError("dijkstra_static needs a static field")
    return _solve(field, goal, cost_variant)


def dijkstra_dynamic(field: ThreatField, goal: Goal, cost_variant=CostVariant.PURE) -> ValueTable:
    if field.is_static:
        raise ValueError("dijkstra_dynamic needs a dynamic field")
    return _solve(field, goal, cost_variant)


def solve(field: ThreatField, goal: Goal, cost_variant=CostVariant.PURE) -> ValueTable:
    """Dispatch to the static or time-expanded oracle."""
    return _solve(field, goal, cost_variant)


def shortest_costs(node_cost: np.ndarray, field: ThreatField, goal: Goal) -> np.ndarray:
    """Cost-to-go for an arbitrary positive node-cost array of shape (T, N)."""
    space = StateSpace(field, goal)
    return _time_expanded_dijkstra(np.asarray(node_cost, float), space)


def all_starts(grid, goal: Goal) -> list[State]:
    """Every non-goal cell at t = 0."""
    return [State(c, 0) for c in range(grid.n_cells) if c != goal.cell]


def random_starts(grid, goal: Goal, n: int, rng: np.random.Generator) -> list[State]:
    pool = np.array([c for c in range(grid.n_cells) if c != goal.cell])
    if n > len(pool):
        raise DatasetError(f"requested {n} starts but only {len(pool)} non-goal cells exist")
    picked = np.sort(rng.choice(pool, size=n, replace=False))
    return [State(int(c), 0) for c in picked]


def generate_expert_dataset(field: ThreatField, goal: Goal, starts: Iterable[State],
                            cost_variant=CostVariant.PURE, feature_variant=None,
                            table: ValueTable | None = None, field_ref: str = "") -> PathDataset:
    """One exactly optimal path per start."""
    cost_variant = CostVariant(cost_variant)
    feature_variant = Variant(feature_variant or cost_variant.default_features)
    starts = list(starts)
    if not starts:
        raise DatasetError("starts must be non-empty")
    table = table or _solve(field, goal, cost_variant)
    fspace = StateSpace(field, goal, feature_variant)
    paths = []
    for s in starts:
        p = table.path(s)
        feat = build_path(p.cells, [st.t for st in p.states], fspace, table.costs)
        paths.append(Path(p.states, p.reached_goal, p.cost, feat.phi))
    return PathDataset(paths, cost_variant, feature_variant, field_ref)


def feature_expectation(dataset: PathDataset) -> np.ndarray:
    """Mean of the per-path aggregate features."""
    if len(dataset) == 0:
        raise DatasetError("feature expectation of an empty dataset")
    return np.mean([p.phi for p in dataset.paths], axis=0)


def save_dataset(dataset: PathDataset, path, header: dict | None = None) -> None:
    head = {
        "format_version": FORMAT_VERSION,
        "cost_variant": dataset.cost_variant.value,
        "feature_variant": dataset.feature_variant.value,
        "field_ref": dataset.field_ref,
        "N": len(dataset),
        **dataset.meta,
        **(header or {}),
    }
    lines = [json.dumps({"header": head})]
    lines += [json.dumps(p.to_dict()) for p in dataset.paths]
    FsPath(path).write_text("\n".join(lines) + "\n")


def load_dataset(path) -> PathDataset:
    head, paths = {}, []
    for line in FsPath(path).read_text().splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        if "header" in doc:
            head = doc["header"]
            check_format_version(head, "dataset")
        else:
            paths.append(Path.from_dict(doc))
    if not paths:
        raise DatasetError(f"{path} holds no paths")
    meta = {k: v for k, v in head.items()
            if k not in ("format_version", "cost_variant", "feature_variant", "field_ref", "N")}
    return PathDataset(paths, head.get("cost_variant", "pure"),
                       head.get("feature_variant", "standard"), head.get("field_ref", ""), meta)
