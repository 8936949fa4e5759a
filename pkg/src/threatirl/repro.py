"""Packaged experiments behind ``threatirl repro``.

Each experiment writes its inputs, training runs and reports under one
directory and returns a report whose ``lines`` summarize the pass/fail
status of the matching acceptance checks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dql import DQLConfig, greedy_policy
from .evaluation import ErrorMap, error_map, pca_discriminate, write_error_csv, write_pca_csv
from .fieldgen import GridSpec, ThreatField, central_blob_field, generate_dynamic_field, \
    generate_static_field, save_field
from .irl import IRLConfig, IRLResult, irl_train
from .mdp import Goal
from .oracle import CostVariant, all_starts, generate_expert_dataset, random_starts, save_dataset
from .rundir import dump_json, write_training_run
from .seeding import substream
from .synth import synthesize_dataset

log = logging.getLogger(__name__)

MAX_RETRIES = 5


@dataclass(frozen=True)
class Scale:
    rows: int
    cols: int
    n_time_steps: int = 1
    m_e: int = 300
    m_i: int = 150
    max_error: float = 20.0
    mean_error: float = 5.0


# M_E is reduced from the reference value of 300 for the desk-scale runs; the
# Q model is warm-started across IRL iterations, so fewer episodes per
# iteration still track the slowly moving reward.
SCALES = {
    "static-small": Scale(10, 10, m_e=60, max_error=10.0, mean_error=3.0),
    "static-paper": Scale(25, 25, m_e=300, max_error=20.0, mean_error=5.0),
    "dynamic-small": Scale(10, 10, n_time_steps=20, m_e=30, max_error=15.0, mean_error=4.5),
    "generalization": Scale(10, 10, m_e=60, max_error=50.0),
    "discrimination": Scale(25, 25, m_e=60),
}


def _train_and_write(out: Path, dataset, field, goal, irl_cfg, dql_cfg, seed) -> tuple[IRLResult, list[str]]:
    res = irl_train(dataset, field, goal, irl_cfg, dql_cfg, seed=seed)
    names = write_training_run(out, res, irl_cfg, dql_cfg, seed,
                               {"field": "field.json", "dataset": "expert.jsonl"})
    return res, names


def _make_field(scale: Scale, seed: int) -> ThreatField:
    grid = GridSpec(scale.rows, scale.cols, n_time_steps=scale.n_time_steps)
    if grid.is_static:
        return generate_static_field(seed, grid)
    return generate_dynamic_field(seed, grid)


def _retry_seed(seed: int, attempt: int) -> int:
    """Training seed for a retry; attempt 0 uses the experiment seed itself."""
    if attempt == 0:
        return seed
    return int(substream(seed, "model_init", attempt).integers(2**31))


def _fmt(em: ErrorMap) -> str:
    return f"max {em.max:.2f}% mean {em.mean:.3f}% converged {100 * em.converged_fraction:.1f}%"


def error_experiment(name: str, scale: Scale, seed: int, out: Path) -> tuple[dict, list[str]]:
    """Train on one field, evaluate on it, retry with a new training seed if
    some start fails to reach the goal."""
    field = _make_field(scale, seed)
    goal = Goal.at(field.grid)
    out.mkdir(parents=True, exist_ok=True)
    save_field(field, out / "field.json")
    expert = generate_expert_dataset(field, goal, all_starts(field.grid, goal), field_ref="field.json")
    save_dataset(expert, out / "expert.jsonl")
    names = ["field.json", "expert.jsonl"]
    irl_cfg = IRLConfig(m_e=scale.m_e, m_i=scale.m_i)
    dql_cfg = DQLConfig()
    attempts = []
    for attempt in range(MAX_RETRIES + 1):
        tseed = _retry_seed(seed, attempt)
        run = f"train_{attempt}"
        res, files = _train_and_write(out / run, expert, field, goal, irl_cfg, dql_cfg, tseed)
        names += [f"{run}/{f}" for f in files]
        em = error_map(res.policy, field, goal)
        write_error_csv(em, field.grid, out / run / "errors.csv")
        names.append(f"{run}/errors.csv")
        attempts.append({"attempt": attempt, "train_seed": tseed, "irl_converged": res.converged,
                         "iterations": len(res.history), "weights": [float(v) for v in res.weights],
                         **em.summary()})
        log.info("%s attempt %d: %s", name, attempt, _fmt(em))
        if em.converged_fraction == 1.0:
            break
    final = attempts[-1]
    passed = (final["converged_fraction"] == 1.0 and final["max"] <= scale.max_error
              and final["mean"] <= scale.mean_error)
    report = {
        "experiment": name, "seed": seed, "attempts": attempts,
        "thresholds": {"max": scale.max_error, "mean": scale.mean_error},
        "passed": bool(passed),
        "lines": [f"{name}: {_fmt(em)} (thresholds max<={scale.max_error}, "
                  f"mean<={scale.mean_error}, attempts {len(attempts)}) "
                  f"{'PASS' if passed else 'FAIL'}"],
    }
    return report, names


def generalization_experiment(scale: Scale, seed: int, out: Path, pairs: int) -> tuple[dict, list[str]]:
    names, rows = [], []
    for k in range(pairs):
        seed_a, seed_b = seed + 2 * k, seed + 2 * k + 1
        sub = out / f"pair_{k}"
        sub.mkdir(parents=True, exist_ok=True)
        field_a, field_b = _make_field(scale, seed_a), _make_field(scale, seed_b)
        goal = Goal.at(field_a.grid)
        save_field(field_a, sub / "field.json")
        save_field(field_b, sub / "field_b.json")
        expert = generate_expert_dataset(field_a, goal, all_starts(field_a.grid, goal))
        save_dataset(expert, sub / "expert.jsonl")
        res, files = _train_and_write(sub / "train", expert, field_a, goal,
                                      IRLConfig(m_e=scale.m_e, m_i=scale.m_i), DQLConfig(), seed_a)
        em_a = error_map(res.policy, field_a, goal)
        em_b = error_map(greedy_policy(res.model, field_b, goal), field_b, goal)
        write_error_csv(em_a, field_a.grid, sub / "errors_train.csv")
        write_error_csv(em_b, field_b.grid, sub / "errors_test.csv")
        names += [f"pair_{k}/{f}" for f in ("field.json", "field_b.json", "expert.jsonl",
                                           "errors_train.csv", "errors_test.csv")]
        names += [f"pair_{k}/train/{f}" for f in files]
        rows.append({"pair": k, "seed_a": seed_a, "seed_b": seed_b,
                     "train": em_a.summary(), "test": em_b.summary()})
    # a pair with no converged start on B has undefined error: it counts as
    # worse than A for the ordering and as over any max-error bound
    def worst(r, key):
        v = r["test"][key]
        return np.inf if np.isnan(v) else v

    ordered = sum(worst(r, "mean") >= r["train"]["mean"] for r in rows)
    max_b = max(worst(r, "max") for r in rows)
    passed = ordered > pairs / 2 and max_b <= scale.max_error
    lines = [f"generalization pair {r['pair']}: mean A {r['train']['mean']:.2f}% "
             f"mean B {r['test']['mean']:.2f}% max B {r['test']['max']:.2f}% "
             f"conv B {100 * r['test']['converged_fraction']:.1f}%" for r in rows]
    lines.append(f"generalization: B >= A on {ordered}/{pairs} pairs, max B {max_b:.2f}% "
                 f"(<= {scale.max_error}) {'PASS' if passed else 'FAIL'}")
    return {"experiment": "generalization", "seed": seed, "pairs": rows,
            "ordered_pairs": int(ordered), "max_test_error": float(max_b), "passed": bool(passed), "lines": lines}, names


def discrimination_experiment(scale: Scale, seed: int, out: Path,
                              n_paths: int = 500) -> tuple[dict, list[str]]:
    grid = GridSpec(scale.rows, scale.cols)
    field = central_blob_field(grid)
    goal = Goal.at(grid)
    out.mkdir(parents=True, exist_ok=True)
    save_field(field, out / "field.json")
    names = ["field.json"]
    every = all_starts(grid, goal)

    # the two expert policies must themselves disagree often enough
    full_a = generate_expert_dataset(field, goal, every, CostVariant.PURE)
    full_b = generate_expert_dataset(field, goal, every, CostVariant.VERTICAL)
    oracle_differ = float(np.mean([p.cells != q.cells for p, q in zip(full_a.paths, full_b.paths)]))
    # the same PC1 test on exact expert paths bounds what imitation can reach
    oracle_sep, oracle_spread = _pc1_separation(pca_discriminate(full_a, full_b, grid))

    synth = {}
    for tag, variant in (("A", CostVariant.PURE), ("B", CostVariant.VERTICAL)):
        starts = random_starts(grid, goal, min(n_paths, len(every)), substream(seed, "dataset", ord(tag)))
        expert = generate_expert_dataset(field, goal, starts, variant, field_ref="field.json")
        save_dataset(expert, out / f"expert_{tag}.jsonl")
        res, files = _train_and_write(out / f"train_{tag}", expert, field, goal,
                                      IRLConfig(m_e=scale.m_e, m_i=scale.m_i), DQLConfig(), seed)
        ds = synthesize_dataset(res.policy, field, goal, every, feature_variant=expert.feature_variant,
                                cost_variant=variant, field_ref="field.json")
        save_dataset(ds, out / f"synth_{tag}.jsonl")
        synth[tag] = ds
        names += [f"expert_{tag}.jsonl", f"synth_{tag}.jsonl"] + [f"train_{tag}/{f}" for f in files]

    pairs = list(zip(synth["A"].paths, synth["B"].paths))
    differ = float(np.mean([p.cells != q.cells for p, q in pairs]))
    both = [p.cells != q.cells for p, q in pairs if p.reached_goal and q.reached_goal]
    differ_both = float(np.mean(both)) if both else float("nan")
    pca = pca_discriminate(synth["A"], synth["B"], grid)
    write_pca_csv(pca, out / "pca.csv")
    names.append("pca.csv")
    sep, spread = _pc1_separation(pca)
    differ_ok, pca_ok = differ >= 0.10, sep > spread
    conv = {k: v.converged_fraction for k, v in synth.items()}
    lines = [
        f"discrimination: oracle paths differ on {100 * oracle_differ:.1f}% of starts, "
        f"oracle PC1 separation {oracle_sep:.3f} vs pooled std {oracle_spread:.3f}",
        f"discrimination: synthesized paths differ on {100 * differ:.1f}% of {len(every)} starts "
        f"({100 * differ_both:.1f}% of the {len(both)} where both reach the goal; "
        f"goal reached A {100 * conv['A']:.1f}% B {100 * conv['B']:.1f}%) "
        f"{'PASS' if differ_ok else 'FAIL'}",
        f"discrimination: PC1 centroid separation {sep:.3f} vs pooled std {spread:.3f} "
        f"{'PASS' if pca_ok else 'FAIL'}",
    ]
    report = {"experiment": "discrimination", "seed": seed, "oracle_differ": oracle_differ,
              "oracle_pc1_separation": oracle_sep, "oracle_pc1_within_std": oracle_spread,
              "synth_differ": differ, "synth_differ_both_converged": differ_both,
              "converged_fraction": conv, "differ_passed": bool(differ_ok), "pca_passed": bool(pca_ok),
              "pc1_separation": sep, "pc1_within_std": spread,
              "explained_variance": [float(v) for v in pca.explained_variance],
              "passed": bool(differ_ok and pca_ok), "lines": lines}
    return report, names


def _pc1_separation(pca) -> tuple[float, float]:
    return pca.centroid_separation() if len(pca.explained_variance) else (0.0, 0.0)


def run_experiment(name: str, seed: int, out: Path, overrides: dict | None = None):
    """Run one named experiment; returns (report, written files, resolved config)."""
    overrides = dict(overrides or {})
    pairs = overrides.pop("pairs", None) or 5
    base = SCALES[name]
    scale = Scale(**{**base.__dict__, **overrides})
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if name == "generalization":
        report, names = generalization_experiment(scale, seed, out, pairs)
    elif name == "discrimination":
        report, names = discrimination_experiment(scale, seed, out)
    else:
        report, names = error_experiment(name, scale, seed, out)
    dump_json(report, out / "report.json")
    names.append("report.json")
    config = {"experiment": name, "seed": seed, "scale": scale.__dict__}
    if name == "generalization":
        config["pairs"] = pairs
    return report, names, config
