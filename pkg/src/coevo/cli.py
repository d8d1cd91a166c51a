"""``coevo`` command line: run, resume, eval, solve, report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import coevolve as ce
from .config import config_from_dict, load_config
from .errors import CoevoError, ConfigError, MissingCheckpoint, ParseError, RunAborted
from .level import level_from_dict
from .matrix_game import read_matrix_csv, solve_nash

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_ABORTED = 3


def _print_iteration(summary: dict) -> None:
    print(
        f"iter {summary['iteration']}: policy {summary['policy']} ({summary['policy_mutation']}, "
        f"score {summary['policy_score']:.3f})  level {summary['level']} ({summary['level_mutation']}, "
        f"mixture {summary['level_score']:.3f})  nash value {summary['nash_value']:.6f}",
        flush=True,
    )


def cmd_run(args) -> int:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(run_seed=args.seed)
    if args.iterations is not None:
        cfg = cfg.replace(T=args.iterations)
    out = args.out or cfg.output_dir
    if not out:
        raise ConfigError("an output directory is required (--out or output_dir)")
    state = ce.run(cfg, out, progress=_print_iteration)
    print(f"completed {state.completed} iterations; run directory {out}")
    return EXIT_OK


def cmd_resume(args) -> int:
    if not args.out:
        raise ConfigError("resume needs --out pointing at the run directory")
    state = ce.resume(args.out, T=args.iterations, progress=_print_iteration)
    print(f"completed {state.completed} iterations; run directory {args.out}")
    return EXIT_OK


def _kinds(strategy: str):
    return ce.STRATEGY_KINDS if strategy == "all" else (strategy,)


def _load_levels(path) -> list:
    doc = json.loads(Path(path).read_text())
    docs = doc if isinstance(doc, list) else doc.get("levels", [doc]) if isinstance(doc, dict) else []
    return [level_from_dict(d) for d in docs]


def cmd_eval(args) -> int:
    if not args.out:
        raise ConfigError("eval needs --out pointing at the run directory")
    state = ce.load_state(args.out)
    if state.completed == 0:
        raise MissingCheckpoint(f"{args.out} has no completed iteration")
    rows = ce.strategy_table(state, _kinds(args.strategy))
    (Path(args.out) / "strategy_eval.csv").write_text(ce.strategy_eval_csv(rows, state.matrix.col_ids))
    lines = []
    for r in rows:
        lines.append(f"iteration {r.iteration} {r.kind:8s} mean {r.mean:.4f} min {r.min:.4f}")
    if set(_kinds(args.strategy)) >= {"msne", "greedy", "uniform"}:
        for k in range(state.completed):
            e = {kind: ce.evaluate_strategy(state, kind, k).min for kind in ce.STRATEGY_KINDS}
            ok = e["msne"] >= max(e["greedy"], e["uniform"]) - 1e-9
            lines.append(f"iteration {k} msne min >= greedy/uniform min: {'yes' if ok else 'NO'}")
    if args.held_out:
        held = _load_levels(args.held_out)
        for kind in _kinds(args.strategy):
            for lid, v in ce.generalization_eval(state, kind, held):
                lines.append(f"held-out {lid} {kind:8s} success {v:.4f}")
    text = "\n".join(lines) + "\n"
    (Path(args.out) / "strategy_eval.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_solve(args) -> int:
    matrix = read_matrix_csv(args.matrix)
    sol = solve_nash(matrix)
    for rid, w in zip(matrix.row_ids, sol.strategy.weights):
        print(f"{rid},{w:.12f}")
    print(f"value,{sol.value:.12f}")
    print("support," + " ".join(matrix.row_ids[i] for i in sol.support))
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.out:
        raise ConfigError("report needs --out pointing at the run directory")
    state = ce.load_state(args.out)
    out = [f"run directory: {args.out}", f"family: {state.family}  seed: {state.run_seed}  "
           f"iterations: {state.completed}/{state.config.T}", ""]
    for m in state.mutations:
        out.append(f"iter {m['iteration']}: {m['kind']:6s} {m['parent']} -> {m['child']}: {m['description']}")
    out.append("")
    for k, sol in enumerate(state.nash_history):
        support = ", ".join(f"{state.policies[i].id}={sol.strategy.weights[i]:.4f}" for i in sol.support)
        out.append(f"nash {k}: value {sol.value:.6f}  support {support}")
    if state.completed:
        out.append("")
        k = state.iteration
        for kind in ce.STRATEGY_KINDS:
            e = ce.evaluate_strategy(state, kind, k)
            out.append(f"final {kind:8s} mean {e.mean:.4f} min {e.min:.4f}  per-level "
                       + " ".join(f"{v:.2f}" for v in e.values))
        out.append(f"dangling level (no responding policy): {state.levels[-1].id}")
    text = "\n".join(out) + "\n"
    (Path(args.out) / "report.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def load_run_config(path):
    """Read a YAML config, or the config echoed inside a run manifest."""
    if path is None:
        raise ConfigError("--config is required")
    p = Path(path)
    if p.suffix == ".json":
        try:
            doc = json.loads(p.read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from None
        if isinstance(doc, dict) and "manifest_version" in doc:
            return config_from_dict(doc["config"])
        return config_from_dict(doc)
    return load_config(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coevo", description="Policy/level co-evolution experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=False):
        if config:
            p.add_argument("--config", help="YAML run config (or a run manifest.json)")
            p.add_argument("--seed", type=int, help="override run_seed")
        p.add_argument("--out", help="run directory")
        p.add_argument("--iterations", type=int, help="override total iterations T")

    common(sub.add_parser("run", help="start a run"), config=True)
    common(sub.add_parser("resume", help="continue a run from its latest checkpoint"))
    ev = sub.add_parser("eval", help="strategy evaluation on the archive")
    ev.add_argument("--out", help="run directory")
    ev.add_argument("--strategy", choices=(*ce.STRATEGY_KINDS, "all"), default="all")
    ev.add_argument("--held-out", dest="held_out", help="JSON file with held-out levels")
    so = sub.add_parser("solve", help="solve a payoff matrix CSV")
    so.add_argument("matrix", help="CSV file (first column row ids, header column ids)")
    rp = sub.add_parser("report", help="plain-text summary of a run")
    rp.add_argument("--out", help="run directory")
    return parser


COMMANDS = {"run": cmd_run, "resume": cmd_resume, "eval": cmd_eval, "solve": cmd_solve, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RunAborted as exc:
        print(f"run aborted: {exc} (state preserved at the last checkpoint)", file=sys.stderr)
        return EXIT_ABORTED
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except CoevoError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
