"""Percent-error maps against the oracle, run aggregation, and PCA of synthesized paths."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dql import Policy
from .fieldgen import GridSpec, ThreatField
from .mdp import Goal
from .oracle import CostVariant, Path, PathDataset, ValueTable, all_starts, node_costs, solve
from .synth import synthesize_dataset


class EmptyAggregate(ValueError):
    """Every run was filtered out before aggregation."""


def value_of_path(path: Path, field: ThreatField, goal: Goal,
                  cost_variant=CostVariant.PURE) -> float:
    """Sum of node costs over every state of ``path`` (start included, time clamped)."""
    costs = node_costs(field, goal, cost_variant)
    last = costs.shape[0] - 1
    return float(sum(costs[min(s.t, last), s.cell] for s in path.states))


@dataclass
class ErrorMap:
    cells: np.ndarray              # start cell per entry (all non-goal cells)
    percent_error: np.ndarray      # nan where the rollout did not reach the goal
    converged: np.ndarray

    @property
    def converged_fraction(self) -> float:
        return float(self.converged.mean())

    def _ok(self) -> np.ndarray:
        return self.percent_error[self.converged]

    @property
    def mean(self) -> float:
        ok = self._ok()
        return float(ok.mean()) if ok.size else float("nan")

    @property
    def max(self) -> float:
        ok = self._ok()
        return float(ok.max()) if ok.size else float("nan")

    @property
    def std(self) -> float:
        ok = self._ok()
        return float(ok.std()) if ok.size else float("nan")

    def summary(self) -> dict:
        return {"mean": self.mean, "max": self.max, "std": self.std,
                "converged_fraction": self.converged_fraction}


def error_map(policy: Policy, field: ThreatField, goal: Goal, oracle: ValueTable | None = None,
              m_p: int = 500, cost_variant=None) -> ErrorMap:
    """Roll ``policy`` out from every non-goal cell and compare with the oracle."""
    if oracle is None:
        oracle = solve(field, goal, cost_variant or CostVariant.PURE)
    cost_variant = CostVariant(cost_variant or oracle.cost_variant)
    starts = all_starts(field.grid, goal)
    ds = synthesize_dataset(policy, field, goal, starts, m_p, cost_variant=cost_variant)
    opt = np.array([oracle.value(s) for s in starts])
    cost = np.array([p.cost for p in ds.paths])
    converged = np.array([p.reached_goal for p in ds.paths])
    pe = np.where(converged, 100.0 * np.abs(cost - opt) / opt, np.nan)
    return ErrorMap(np.array([s.cell for s in starts]), pe, converged)


def optimal_policy(oracle: ValueTable) -> Policy:
    """The oracle's successor map as a Policy (goal cells get action 0)."""
    return Policy(np.maximum(oracle.successor, 0), oracle.space.n_slices > 1)


def aggregate_runs(maps: Sequence[ErrorMap]) -> tuple[np.ndarray, np.ndarray]:
    """Per-state mean and std over runs that converged from every start."""
    kept = [m for m in maps if m.converged_fraction >= 1.0]
    if not kept:
        raise EmptyAggregate("no run converged from every start")
    cells = kept[0].cells
    if any(not np.array_equal(m.cells, cells) for m in kept):
        raise ValueError("error maps cover different states")
    stack = np.stack([m.percent_error for m in kept])
    return stack.mean(axis=0), stack.std(axis=0)


def generalization_report(policy: Policy, field_a: ThreatField, field_b: ThreatField,
                          goal: Goal, m_p: int = 500) -> tuple[ErrorMap, ErrorMap]:
    """Error maps of one policy on its training field and on an unseen field."""
    if field_a.grid != field_b.grid:
        raise ValueError("fields must share a grid")
    return error_map(policy, field_a, goal, m_p=m_p), error_map(policy, field_b, goal, m_p=m_p)


# --- PCA ---------------------------------------------------------------------

def path_encoding(path: Path, grid: GridSpec) -> np.ndarray:
    """Binary occupancy over grid cells."""
    enc = np.zeros(grid.n_cells)
    enc[path.cells] = 1.0
    return enc


@dataclass
class PCAResult:
    components: np.ndarray         # (k, n_cells), orthonormal rows
    projections: np.ndarray        # (n_paths, k)
    explained_variance: np.ndarray
    labels: list[str]
    degenerate: bool

    def centroid_separation(self, axis: int = 0) -> tuple[float, float]:
        """Distance between class centroids along one component, and the pooled within-class std."""
        labels = np.asarray(self.labels)
        names = sorted(set(self.labels))
        if len(names) != 2 or self.projections.shape[1] <= axis:
            raise ValueError("need two classes and a non-degenerate axis")
        groups = [self.projections[labels == n, axis] for n in names]
        sep = abs(groups[0].mean() - groups[1].mean())
        resid = np.concatenate([g - g.mean() for g in groups])
        return float(sep), float(np.sqrt(np.mean(resid**2)))


def top_eigenpairs(cov: np.ndarray, k: int = 3, tol: float = 1e-10,
                   max_iter: int = 100_000) -> tuple[np.ndarray, np.ndarray]:
    """Leading eigenpairs of a symmetric PSD matrix by power iteration with deflation.

    Stops early when the remaining spectrum is numerically zero.
    """
    n = cov.shape[0]
    work = cov.astype(float).copy()
    floor = max(np.trace(cov), 0.0) * 1e-12
    vals, vecs = [], []
    start = np.linspace(1.0, 2.0, n)
    for _ in range(min(k, n)):
        v = start - sum((u @ start) * u for u in vecs)
        if np.linalg.norm(v) == 0:
            break
        v /= np.linalg.norm(v)
        for _ in range(max_iter):
            nv = work @ v
            norm = np.linalg.norm(nv)
            if norm <= floor:
                break
            nv /= norm
            done = min(np.linalg.norm(nv - v), np.linalg.norm(nv + v)) < tol
            v = nv
            if done:
                break
        lam = float(v @ work @ v)
        if lam <= floor:
            break
        # fix the sign so results do not depend on iteration parity
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        vals.append(lam)
        vecs.append(v)
        work -= lam * np.outer(v, v)
    return np.array(vals), np.array(vecs).reshape(len(vecs), n)


def pca_discriminate(dataset_a: PathDataset, dataset_b: PathDataset, grid: GridSpec,
                     labels: tuple[str, str] = ("A", "B"), k: int = 3) -> PCAResult:
    if not len(dataset_a) or not len(dataset_b):
        raise ValueError("datasets must be non-empty")
    enc = np.array([path_encoding(p, grid) for p in dataset_a.paths + dataset_b.paths])
    tags = [labels[0]] * len(dataset_a) + [labels[1]] * len(dataset_b)
    centred = enc - enc.mean(axis=0)
    cov = centred.T @ centred / len(enc)
    vals, vecs = top_eigenpairs(cov, k)
    return PCAResult(vecs, centred @ vecs.T, vals, tags, len(vals) < k)


# --- CSV export --------------------------------------------------------------

def write_error_csv(emap: ErrorMap, grid: GridSpec, path) -> None:
    xy = grid.coords()
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["state_index", "x", "y", "percent_error"])
        for cell, pe in zip(emap.cells, emap.percent_error):
            out.writerow([int(cell), repr(float(xy[cell, 0])), repr(float(xy[cell, 1])),
                          "" if np.isnan(pe) else repr(float(pe))])


def write_pca_csv(result: PCAResult, path) -> None:
    k = result.projections.shape[1]
    with open(path, "w", newline="") as fh:
        fh.write("# explained_variance: " + ",".join(repr(float(v)) for v in result.explained_variance)
                 + ("  (degenerate)" if result.degenerate else "") + "\n")
        out = csv.writer(fh)
        out.writerow(["path_id", "label"] + [f"pc{i + 1}" for i in range(k)])
        for n, (tag, row) in enumerate(zip(result.labels, result.projections)):
            out.writerow([n, tag] + [repr(float(v)) for v in row])


def read_error_csv(path) -> np.ndarray:
    """percent_error column of an error CSV (nan for unconverged starts)."""
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["percent_error"]) if r["percent_error"] else np.nan for r in rows])


def write_summary_csv(rows: Sequence[dict], path) -> None:
    if not rows:
        raise ValueError("no rows")
    with open(path, "w", newline="") as fh:
        out = csv.DictWriter(fh, fieldnames=list(rows[0]))
        out.writeheader()
        out.writerows(rows)

