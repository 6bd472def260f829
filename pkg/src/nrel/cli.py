"""Command-line runner: ``nrel run PROGRAM MANIFEST``.

Exit status: 0 success, 2 parse/expand/lower/compile error, 3 load or
runtime error (including fit and pred), 4 oracle mismatch.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field

from .errors import NrelError
from .execution.oracle import Oracle, diff_relation
from .execution.physical import compile_physical
from .execution.runtime import FitConfig, Session, artifact_path, write_loss_trace, write_relation_csv
from .frontend import flatten, parse
from .lowering import lower
from .manifest import Manifest
from .tensor import ParameterStore

EXIT_OK, EXIT_COMPILE, EXIT_RUNTIME, EXIT_ORACLE = 0, 2, 3, 4
COMPILE_STAGES = {"parse", "expand", "lower", "compile"}
ORACLE_TOL = 1e-9


class OracleMismatch(Exception):
    pass


@dataclass
class RunReport:
    artifacts: list[str] = field(default_factory=list)
    traces: dict[str, list[float]] = field(default_factory=dict)
    predictions: dict = field(default_factory=dict)
    oracle_checks: int = 0
    plan_dump: str | None = None


class _Stage:
    """Re-labels unexpected errors raised inside a block with a stage name."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, et, exc, tb):
        if exc is None or isinstance(exc, (OracleMismatch, KeyboardInterrupt)):
            return False
        if isinstance(exc, NrelError):
            # generic runtime/schema errors take the name of the stage they escaped from
            if type(exc).stage in ("runtime", "load") and self.name != "load":
                exc.stage = self.name
            return False
        err = NrelError(f"{type(exc).__name__}: {exc}")
        err.stage = self.name
        raise err from exc


def run_program(program_path, manifest_path, seed: int | None = None, out_dir: str | None = None,
                dry_run: bool = False, oracle: bool = False, dump_plan: str | None = None,
                echo=print) -> RunReport:
    report = RunReport()
    with _Stage("parse"):
        try:
            with open(program_path, encoding="utf-8") as fh:
                source = fh.read()
        except OSError as exc:
            raise NrelError(f"cannot read program {program_path}: {exc.strerror}") from None
        stmts = parse(source)
    with _Stage("load"):
        manifest = Manifest.load(manifest_path)
        seed = manifest.seed if seed is None else seed
        store = ParameterStore(seed)
        db, vocabs = manifest.build(store, seed)
    with _Stage("expand"):
        flat = flatten(stmts, db.relations)
    with _Stage("lower"):
        program = lower(flat, {n: (r.attrs, r.d) for n, r in db.relations.items()}, store, vocabs)
    session = Session(program, db, store)
    with _Stage("compile"):
        for target in [a.target for a in program.actions] + ([dump_plan] if dump_plan else []):
            session.executor(target)
        if dump_plan:
            plan = program.plan(dump_plan)
            report.plan_dump = plan.dump() + "\nphysical:\n" + compile_physical(plan).dump()
            echo(report.plan_dump)
    if dry_run:
        return report

    if out_dir is None:
        out_dir = manifest.resolve(manifest.output)
    used: dict = {}
    for action in program.actions:
        if action.kind == "fit":
            with _Stage("fit"):
                config = FitConfig.from_kwargs(action.kwargs)
                if oracle:
                    expected = Oracle(flat, db, store, vocabs).run()[action.target]
                    engine = session.evaluate(action.target)
                    _check(engine, expected, f"initial loss of {action.target}")
                    report.oracle_checks += 1
                result = session.fit(action.target, config)
                path = artifact_path(out_dir, action.target, ".loss", used)
                os.makedirs(out_dir, exist_ok=True)
                write_loss_trace(result.trace, path)
            report.traces[path] = result.trace
            report.artifacts.append(path)
            last = f"{result.trace[-1]:.6g}" if result.trace else "n/a"
            echo(f"fit {action.target}: {len(result.trace)} epoch(s), final loss {last} -> {path}")
        else:
            with _Stage("pred"):
                rel = session.predict(action.target)
                if oracle:
                    expected = Oracle(flat, db, store, vocabs).run()[action.target]
                    _check(rel, expected, action.target)
                    report.oracle_checks += 1
                path = artifact_path(out_dir, action.target, ".csv", used)
                os.makedirs(out_dir, exist_ok=True)
                write_relation_csv(rel, path)
            report.predictions[path] = rel
            report.artifacts.append(path)
            echo(f"pred {action.target}: {len(rel)} tuple(s), width {rel.d} -> {path}")
    if oracle:
        echo(f"oracle: {report.oracle_checks} check(s), no differences")
    return report


def _check(engine_rel, oracle_rel, what: str) -> None:
    problems = diff_relation(engine_rel, oracle_rel, ORACLE_TOL)
    if problems:
        raise OracleMismatch(f"oracle mismatch on {what}: " + "; ".join(problems[:5]))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nrel", description="Run neuro-relational programs over CSV data.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="compile and execute a program")
    run.add_argument("program", help="program source (.relnn)")
    run.add_argument("manifest", help="data manifest")
    run.add_argument("--seed", type=int, default=None, help="override the manifest seed")
    run.add_argument("--dump-plan", metavar="REL", default=None, help="print the plan for REL")
    run.add_argument("--out", metavar="DIR", default=None, help="output directory (default: manifest output)")
    run.add_argument("--dry-run", action="store_true", help="compile only; write nothing")
    run.add_argument("--oracle", action="store_true", help="cross-check against the naive evaluator")
    run.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("examples", help="list the shipped example programs")
    return ap


def examples_dir() -> str:
    return os.path.join(os.path.dirname(__file__), "programs")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "examples":
        root = examples_dir()
        for name in sorted(os.listdir(root)):
            if os.path.isfile(os.path.join(root, name, "program.relnn")):
                print(os.path.join(root, name))
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        run_program(args.program, args.manifest, seed=args.seed, out_dir=args.out, dry_run=args.dry_run,
                    oracle=args.oracle, dump_plan=args.dump_plan)
    except OracleMismatch as exc:
        print(f"nrel: oracle error: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    except NrelError as exc:
        stage = getattr(exc, "stage", "runtime")
        print(f"nrel: {stage} error: {exc}", file=sys.stderr)
        return EXIT_COMPILE if stage in COMPILE_STAGES else EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
