"""Command-line entry point: threatirl <subcommand> ...

Every flag can also be set through an environment variable named
THREATIRL_<FLAG>, e.g. THREATIRL_SEED=3; an explicit flag wins.
Exit codes: 0 success, 1 input error, 2 training divergence, 3 training
finished without meeting the convergence threshold.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .dql import DQLConfig, TrainingDivergence, greedy_policy, load_model
from .evaluation import error_map, pca_discriminate, write_error_csv, write_pca_csv
from .fieldgen import FieldError, GridSpec, central_blob_field, generate_dynamic_field, \
    generate_static_field, load_field, save_field
from .irl import IRLConfig, irl_train
from .mdp import Goal
from .oracle import DatasetError, all_starts, generate_expert_dataset, load_dataset, \
    random_starts, save_dataset
from .rundir import dump_json, write_manifest, write_training_run
from .seeding import substream
from .synth import ModeMismatch, synthesize_dataset

log = logging.getLogger("threatirl")

ENV_PREFIX = "THREATIRL_"
EXIT_OK, EXIT_INPUT, EXIT_DIVERGED, EXIT_NOT_CONVERGED = 0, 1, 2, 3


class InputError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """ArgumentParser that exits with the input-error code on bad usage."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


# --- shared helpers ----------------------------------------------------------

def parse_starts(spec: str, grid: GridSpec, goal: Goal, seed: int, stage: str):
    if spec == "all":
        return all_starts(grid, goal)
    if spec.startswith("random:"):
        try:
            n = int(spec.split(":", 1)[1])
        except ValueError:
            raise InputError(f"bad starts spec {spec!r}") from None
        return random_starts(grid, goal, n, substream(seed, stage))
    raise InputError(f"starts must be 'all' or 'random:N', got {spec!r}")


def goal_for(grid: GridSpec, args) -> Goal:
    return Goal.at(grid, tuple(args.goal))


def irl_config(args) -> IRLConfig:
    return IRLConfig(e_mu=args.e_mu, m_i=args.m_i, m_e=args.m_e, m_p=args.m_p, eta_i=args.eta_i,
                     k_rollouts=args.k_rollouts, w0=args.w0,
                     weight_postprocess=args.weight_postprocess, init=args.init)


def dql_config(args) -> DQLConfig:
    return DQLConfig(m_q=args.m_q, eta_q=args.eta_q, eta_qprime=args.eta_qprime, eps0=args.eps0,
                     eps1=args.eps1, d=args.d, gamma=args.gamma,
                     loss_reset_threshold=args.loss_reset_threshold,
                     epsilon_mode=args.epsilon_mode, hidden=tuple(args.hidden),
                     optimizer=args.optimizer)


# --- subcommands -------------------------------------------------------------

def cmd_gen_field(args, argv):
    grid = GridSpec(args.rows, args.cols, n_time_steps=args.n_time_steps)
    if args.blob:
        field = central_blob_field(grid, amplitude=args.blob_amplitude, width=args.blob_width)
    elif grid.is_static:
        field = generate_static_field(args.seed, grid, n_rbf=args.n_rbf, offset=args.offset)
    else:
        field = generate_dynamic_field(args.seed, grid, n_rbf=args.n_rbf, offset=args.offset)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_field(field, out)
    cfg = {k: getattr(args, k) for k in ("seed", "rows", "cols", "n_time_steps", "n_rbf", "offset",
                                         "blob", "blob_amplitude", "blob_width")}
    write_manifest(out.parent, out.name, argv, cfg, {}, [out.name])
    return EXIT_OK


def cmd_gen_dataset(args, argv):
    field = load_field(args.field)
    goal = goal_for(field.grid, args)
    starts = parse_starts(args.starts, field.grid, goal, args.seed, "dataset")
    ds = generate_expert_dataset(field, goal, starts, args.variant, field_ref=Path(args.field).name)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out, header={"goal": list(goal.coord), "starts": args.starts})
    cfg = {"variant": args.variant, "starts": args.starts, "seed": args.seed, "goal": args.goal}
    write_manifest(out.parent, out.name, argv, cfg, {"field": args.field}, [out.name])
    return EXIT_OK


def cmd_train(args, argv):
    field = load_field(args.field)
    ds = load_dataset(args.dataset)
    goal = goal_for(field.grid, args)
    irl_cfg, dql_cfg = irl_config(args), dql_config(args)
    out = Path(args.out)
    result = irl_train(ds, field, goal, irl_cfg, dql_cfg, seed=args.seed)
    names = write_training_run(out, result, irl_cfg, dql_cfg, args.seed,
                               {"field": str(args.field), "dataset": str(args.dataset),
                                "goal": args.goal})
    cfg = {"seed": args.seed, "goal": args.goal, "irl": irl_cfg.to_dict(), "dql": dql_cfg.to_dict(),
           "threads": args.threads}
    write_manifest(out, "train", argv, cfg, {"field": args.field, "dataset": args.dataset},
                   names)
    if not result.converged:
        log.warning("IRL stopped after %d iterations without reaching e_mu", len(result.history))
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_synth(args, argv):
    model = load_model(args.model)
    field = load_field(args.field)
    goal = goal_for(field.grid, args)
    starts = parse_starts(args.starts, field.grid, goal, args.seed, "synth")
    policy = greedy_policy(model, field, goal)
    ds = synthesize_dataset(policy, field, goal, starts, args.m_p, model.variant,
                            field_ref=Path(args.field).name)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out, header={"model_ref": Path(args.model).name, "goal": list(goal.coord)})
    cfg = {"starts": args.starts, "seed": args.seed, "m_p": args.m_p, "goal": args.goal}
    write_manifest(out.parent, out.name, argv, cfg, {"model": args.model, "field": args.field},
                   [out.name])
    return EXIT_OK


def cmd_eval(args, argv):
    model = load_model(args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fields = {"train": args.field}
    if args.test_field:
        fields["test"] = args.test_field
    summary, names = {}, []
    for tag, path in fields.items():
        field = load_field(path)
        goal = goal_for(field.grid, args)
        policy = greedy_policy(model, field, goal)
        emap = error_map(policy, field, goal, m_p=args.m_p, cost_variant=args.oracle_variant)
        write_error_csv(emap, field.grid, out / f"errors_{tag}.csv")
        names.append(f"errors_{tag}.csv")
        summary[tag] = emap.summary()
        log.info("%s field: %s", tag, emap.summary())
    dump_json(summary, out / "summary.json")
    names.append("summary.json")
    cfg = {"oracle_variant": args.oracle_variant, "m_p": args.m_p, "goal": args.goal}
    write_manifest(out, "eval", argv, cfg, {"model": args.model, **fields}, names)
    return EXIT_OK


def cmd_pca(args, argv):
    a, b = load_dataset(args.a), load_dataset(args.b)
    if args.field is None:
        if not a.field_ref:
            raise InputError("dataset A has no field_ref; pass --field")
        # field_ref is stored as a file name next to the dataset
        args.field = str(Path(args.a).parent / a.field_ref)
    field = load_field(args.field)
    res = pca_discriminate(a, b, field.grid, labels=(args.label_a, args.label_b))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_pca_csv(res, out)
    if res.degenerate:
        log.warning("pooled covariance has rank %d < 3", len(res.explained_variance))
    cfg = {"label_a": args.label_a, "label_b": args.label_b}
    write_manifest(out.parent, out.name, argv, cfg, {"a": args.a, "b": args.b, "field": args.field},
                   [out.name])
    return EXIT_OK


def cmd_repro(args, argv):
    from .repro import run_experiment

    out = Path(args.out)
    overrides = {k: getattr(args, k) for k in ("m_e", "m_i", "pairs") if getattr(args, k) is not None}
    report, names, config = run_experiment(args.experiment, args.seed, out, overrides)
    write_manifest(out, "repro", argv, {**config, "threads": args.threads}, {}, names)
    for line in report.get("lines", []):
        print(line)
    return EXIT_OK


# --- parser ------------------------------------------------------------------

def _add_goal(p):
    p.add_argument("--goal", type=float, nargs=2, default=[1.0, 1.0], metavar=("X", "Y"),
                   help="goal location, snapped to the nearest cell (default 1 1)")


def _add_training_flags(p):
    irl, dql = IRLConfig(), DQLConfig()
    g = p.add_argument_group("IRL")
    g.add_argument("--e-mu", type=float, default=irl.e_mu)
    g.add_argument("--m-i", type=int, default=irl.m_i)
    g.add_argument("--m-e", type=int, default=irl.m_e)
    g.add_argument("--m-p", type=int, default=irl.m_p)
    g.add_argument("--eta-i", type=float, default=irl.eta_i)
    g.add_argument("--k-rollouts", type=int, default=None)
    g.add_argument("--w0", type=float, nargs="+", default=None)
    g.add_argument("--weight-postprocess", choices=["clip-normalize", "none"],
                   default=irl.weight_postprocess.value)
    g.add_argument("--init", choices=["guess", "expert"], default=irl.init.value)
    g = p.add_argument_group("DQL")
    g.add_argument("--m-q", type=int, default=dql.m_q)
    g.add_argument("--eta-q", type=float, default=dql.eta_q)
    g.add_argument("--eta-qprime", type=float, default=dql.eta_qprime)
    g.add_argument("--eps0", type=float, default=dql.eps0)
    g.add_argument("--eps1", type=float, default=dql.eps1)
    g.add_argument("--d", type=float, default=dql.d)
    g.add_argument("--gamma", type=float, default=dql.gamma)
    g.add_argument("--loss-reset-threshold", type=float, default=dql.loss_reset_threshold)
    g.add_argument("--epsilon-mode", choices=["per-state", "per-sweep"],
                   default=dql.epsilon_mode.value)
    g.add_argument("--hidden", type=int, nargs="+", default=list(dql.hidden))
    g.add_argument("--optimizer", choices=["sgd", "adam"], default=dql.optimizer)


def build_parser() -> Parser:
    parser = Parser(prog="threatirl", description="IRL for minimum-threat path planning")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads (recorded; results never depend on it)")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-field", help="generate an RBF threat field")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rows", type=int, default=25)
    p.add_argument("--cols", type=int, default=25)
    p.add_argument("--n-time-steps", "--time-steps", dest="n_time_steps", type=int, default=1)
    p.add_argument("--n-rbf", type=int, default=10)
    p.add_argument("--offset", type=float, default=1.0)
    p.add_argument("--blob", action="store_true", help="single central high-threat blob")
    p.add_argument("--blob-amplitude", type=float, default=8.0)
    p.add_argument("--blob-width", type=float, default=0.35)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_field)

    p = sub.add_parser("gen-dataset", help="exactly optimal expert paths")
    p.add_argument("--field", required=True)
    p.add_argument("--variant", choices=["pure", "vertical"], default="pure")
    p.add_argument("--starts", default="all", help="'all' or 'random:N'")
    p.add_argument("--seed", type=int, default=0)
    _add_goal(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("train", help="learn reward weights and a Q model")
    p.add_argument("--field", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_goal(p)
    _add_training_flags(p)
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", help="roll a trained model out into a path dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--starts", default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--m-p", type=int, default=500)
    _add_goal(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="percent-error maps against the oracle")
    p.add_argument("--model", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--test-field", default=None, help="second, unseen field")
    p.add_argument("--oracle-variant", choices=["pure", "vertical"], default="pure")
    p.add_argument("--m-p", type=int, default=500)
    _add_goal(p)
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pca", help="principal components of two path datasets")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--field", default=None,
                   help="field file supplying the grid (default: dataset A's field_ref)")
    p.add_argument("--label-a", default="A")
    p.add_argument("--label-b", default="B")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pca)

    p = sub.add_parser("repro", help="run a packaged experiment end to end")
    p.add_argument("experiment", choices=["static-small", "static-paper", "dynamic-small",
                                          "generalization", "discrimination"])
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--m-e", type=int, default=None, help="override the experiment's M_E")
    p.add_argument("--m-i", type=int, default=None)
    p.add_argument("--pairs", type=int, default=None, help="seed pairs (generalization)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_repro)

    _apply_env(parser)
    return parser


def _env_name(action) -> str:
    return ENV_PREFIX + action.dest.upper()


def _apply_env(parser: argparse.ArgumentParser) -> None:
    """Let THREATIRL_<DEST> replace a flag's default (and satisfy required flags)."""
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                _apply_env(sub)
            continue
        if not action.option_strings or action.dest in ("help", "version"):
            continue
        raw = os.environ.get(_env_name(action))
        if raw is None:
            continue
        if isinstance(action, argparse._StoreTrueAction):
            value = raw.lower() in ("1", "true", "yes", "on")
        elif action.nargs in ("+", "*") or isinstance(action.nargs, int):
            conv = action.type or str
            value = [conv(v) for v in raw.replace(",", " ").split()]
        else:
            value = (action.type or str)(raw)
        action.default = value
        action.required = False


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except TrainingDivergence as exc:
        log.error("training diverged: %s", exc)
        return EXIT_DIVERGED
    except (InputError, FieldError, DatasetError, ModeMismatch, ValueError, KeyError,
            FileNotFoundError, json.JSONDecodeError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
