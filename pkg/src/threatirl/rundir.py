"""Run-directory writers shared by the CLI and the packaged experiments."""

from __future__ import annotations

import csv
import hashlib
import json
import time
from pathlib import Path

from . import __version__
from .dql import DQLConfig, save_model
from .irl import IRLConfig, IRLResult


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir: Path, name: str, argv: list[str], config: dict,
                   inputs: dict[str, str], outputs: list[str]) -> None:
    """Record one command in ``out_dir/manifest.json``, keyed by its output name.

    Commands writing single files share the directory's manifest; run
    directories get one entry.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.json"
    doc = {"format_version": "1.0", "entries": {}}
    if path.exists():
        doc = json.loads(path.read_text())
    doc["entries"][name] = {
        "command": ["threatirl", *argv],
        "config": config,
        "inputs": {k: {"path": v, "sha256": file_sha256(v)} for k, v in sorted(inputs.items())},
        "outputs": sorted(outputs),
        "tool_version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_training_run(out: Path, result: IRLResult, irl_cfg: IRLConfig, dql_cfg: DQLConfig,
                       seed: int, refs: dict) -> list[str]:
    """config.json, weights/iter_NNNN.json, history.csv, model.json, summary.json."""
    out.mkdir(parents=True, exist_ok=True)
    dump_json({"seed": seed, "irl": irl_cfg.to_dict(), "dql": dql_cfg.to_dict(), **refs},
              out / "config.json")
    wdir = out / "weights"
    wdir.mkdir(exist_ok=True)
    names = ["config.json", "history.csv", "model.json", "summary.json"]
    hist = result.history
    for h in hist:
        name = f"iter_{h['iteration']:04d}.json"
        dump_json({"iteration": h["iteration"], "w": h["w"]}, wdir / name)
        names.append(f"weights/{name}")
    n_w = len(result.weights)
    with open(out / "history.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iteration", "error"] + [f"w{k + 1}" for k in range(n_w)]
                    + ["converged_fraction", "sweeps"])
        for h in hist:
            wr.writerow([h["iteration"], repr(h["error"])] + [repr(v) for v in h["w"]]
                        + [repr(h["converged_fraction"]), h["sweeps"]])
    save_model(result.model, out / "model.json")
    dump_json({"converged": result.converged, "iterations": len(hist),
               "final_error": hist[-1]["error"], "weights": [float(v) for v in result.weights]},
              out / "summary.json")
    return names
