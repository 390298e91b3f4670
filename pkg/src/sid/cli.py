"""Command-line interface: ``sid check|types|run|analyze|corpus``.

Exit codes: 0 success, 1 type error, 2 parse or usage error, 3 step budget
exhausted, 4 invariant violation (monitor report or a stuck state).
"""

from __future__ import annotations

import contextlib
import io
import json
import os
import sys
from dataclasses import dataclass
from enum import IntEnum
from importlib import resources
from pathlib import Path

import click

from . import analysis
from .parser import ParseError, parse_program
from .semantics import RunStatus, run as run_process
from .syntax import Program, pretty
from .typecheck import TypeCheckError, check_expr, check_initial, clear_cache, type_process
from .types import pretty_type


class Exit(IntEnum):
    OK = 0
    TYPE_ERROR = 1
    PARSE_ERROR = 2
    EXHAUSTED = 3
    VIOLATION = 4


@dataclass(frozen=True)
class RunConfig:
    steps: int = 1000
    seed: int | None = None
    scheduler: str = "det"
    monitor: bool = False
    snapshot_every: int = 0
    output: str = "human"

    def __post_init__(self):
        if self.scheduler == "random" and self.seed is None:
            raise ValueError("the random scheduler needs --seed")


def corpus_files() -> list[str]:
    root = resources.files("sid") / "corpus"
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".sid"))


def read_source(path: str) -> str:
    """Read ``path``; names of bundled corpus files work from anywhere."""
    p = Path(path)
    if p.exists():
        return p.read_text(encoding="utf-8")
    name = p.name if p.suffix == ".sid" else p.name + ".sid"
    if name in corpus_files():
        return (resources.files("sid") / "corpus" / name).read_text(encoding="utf-8")
    raise FileNotFoundError(path)


def _color() -> bool | None:
    return False if os.environ.get("SID_COLOR") == "0" else None


def say(text: str = "", fg: str | None = None, err: bool = False) -> None:
    click.secho(text, fg=fg, err=err, color=_color())


def emit_json(obj: dict) -> None:
    click.echo(json.dumps(obj, sort_keys=True, ensure_ascii=False))


def load(path: str) -> Program:
    try:
        return parse_program(read_source(path))
    except FileNotFoundError:
        say(f"error: cannot read {path}", fg="red", err=True)
        sys.exit(Exit.PARSE_ERROR)
    except ParseError as exc:
        say(f"parse error: {exc}", fg="red", err=True)
        sys.exit(Exit.PARSE_ERROR)


def _type_error(err: TypeCheckError, what: str, output: str) -> None:
    if output == "json":
        emit_json({"kind": "type-error", "item": what, **err.to_json()})
    else:
        say(f"{what}: type error", fg="red")
        for line in err.render().splitlines():
            say("  " + line)


def check_program(prog: Program, output: str = "human") -> bool:
    ok = True
    for name, d in prog.defs.items():
        try:
            check_expr(prog.assumptions, prog.definition_body(name), d.type, exact=False)
        except TypeCheckError as err:
            ok = False
            _type_error(err, f"def {name}", output)
        else:
            if output == "json":
                emit_json({"kind": "ok", "item": f"def {name}", "type": pretty_type(d.type)})
            else:
                say(f"def {name} : {pretty_type(d.type)}", fg="green")
    if prog.main is not None:
        main = prog.main_process()
        try:
            typing = type_process(prog.assumptions, main)
        except TypeCheckError as err:
            ok = False
            _type_error(err, "main", output)
        else:
            initial = _is_initial(main)
            if output == "json":
                emit_json({
                    "kind": "ok",
                    "item": "main",
                    "initial": initial,
                    "delta": {str(u): pretty_type(t) for u, t in typing.delta.items()},
                })
            else:
                say(f"main ok ({'initial' if initial else 'not initial'})", fg="green")
    return ok


def _is_initial(p) -> bool:
    try:
        check_initial(p)
    except TypeCheckError:
        return False
    return True


@click.group()
@click.version_option(package_name="artifact")
def main() -> None:
    """Type checker, interpreter and analyser for the session calculus."""


@main.command()
@click.argument("file")
@click.option("--output", type=click.Choice(["human", "json"]), default="human")
def check(file: str, output: str) -> None:
    """Typecheck every definition and the main process."""
    prog = load(file)
    sys.exit(Exit.OK if check_program(prog, output) else Exit.TYPE_ERROR)


@main.command()
@click.argument("file")
def types(file: str) -> None:
    """Print the declared types and the types inferred for restrictions."""
    prog = load(file)
    for name, t in prog.types.items():
        say(f"type {name} = {pretty_type(t)}")
    for name, d in prog.defs.items():
        say(f"def {name} : {pretty_type(d.type)}")
    for label, p in _processes(prog):
        try:
            typing = type_process(prog.assumptions, p)
        except TypeCheckError as err:
            say(f"{label}: type error", fg="red")
            say("  " + err.render().replace("\n", "\n  "))
            continue
        say(f"{label}:")
        for binder, t in typing.resources.items():
            say(f"  {binder} : {pretty_type(t)}")


def _processes(prog: Program):
    out = []
    if prog.main is not None:
        out.append(("main", prog.main_process()))
    out.extend((f"proc {n}", prog.named_process(n)) for n in prog.processes)
    return out


def _event_line(ev) -> str:
    who = ", ".join(ev.participants)
    text = f"{ev.step:>5}  {ev.rule.value:<9} {who}"
    if ev.channel:
        text += f"  on {ev.channel}"
    if ev.message is not None:
        text += f"  [{ev.message}]"
    if ev.fresh:
        text += f"  new {', '.join(ev.fresh)}"
    return text


@main.command()
@click.argument("file")
@click.option("--steps", default=1000, show_default=True, type=click.IntRange(min=0), help="Step budget.")
@click.option("--seed", type=int, default=None, help="Seed for the random scheduler (implies --scheduler random).")
@click.option("--scheduler", type=click.Choice(["det", "random"]), default=None)
@click.option("--monitor", is_flag=True, help="Check the runtime invariants after every step.")
@click.option("--snapshot-every", default=0, type=click.IntRange(min=0), help="Print the state every N steps.")
@click.option("--output", type=click.Choice(["human", "json"]), default="human")
@click.option("--process", "process_name", default="main", show_default=True, help="Which process to run.")
@click.option("--unchecked", is_flag=True, help="Run without typechecking first.")
def run(file, steps, seed, scheduler, monitor, snapshot_every, output, process_name, unchecked) -> None:
    """Reduce a process and print its trace."""
    if scheduler is None:
        scheduler = "random" if seed is not None else "det"
    try:
        cfg = RunConfig(steps, seed, scheduler, monitor, snapshot_every, output)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    prog = load(file)
    try:
        p = prog.named_process(process_name)
    except (KeyError, ValueError):
        say(f"error: no process named {process_name!r}", fg="red", err=True)
        sys.exit(Exit.PARSE_ERROR)
    if not unchecked:
        try:
            type_process(prog.assumptions, p)
        except TypeCheckError as err:
            _type_error(err, process_name, output)
            sys.exit(Exit.TYPE_ERROR)
        if _is_initial(p):
            p = check_initial(p)
    if cfg.monitor:
        clear_cache()
        report = analysis.monitor_run(
            p, cfg.steps, scheduler=cfg.scheduler, seed=cfg.seed, snapshot_every=cfg.snapshot_every
        )
        events, status, final, snapshots = report.events, report.status, report.final, report.snapshots
        violations = report.violations
    else:
        trace = run_process(p, cfg.scheduler, cfg.steps, seed=cfg.seed, snapshot_every=cfg.snapshot_every)
        events, final, snapshots = trace.events, trace.final, trace.snapshots
        status = trace.status.value
        violations = []
    _print_run(cfg, events, snapshots, status, final, violations)
    if violations or status == RunStatus.STUCK.value:
        sys.exit(Exit.VIOLATION)
    sys.exit(Exit.EXHAUSTED if status == RunStatus.EXHAUSTED.value else Exit.OK)


def _print_run(cfg: RunConfig, events, snapshots, status, final, violations) -> None:
    snaps = dict(snapshots)
    summary = {
        "status": status,
        "steps": len(events),
        "scheduler": cfg.scheduler,
        "seed": cfg.seed,
        "final": pretty(final.process()) if final is not None else None,
        "violations": len(violations),
    }
    if cfg.output == "json":
        for ev in events:
            emit_json({"kind": "event", **ev.to_json()})
            if ev.step + 1 in snaps:
                emit_json({"kind": "snapshot", "step": ev.step + 1, "state": snaps[ev.step + 1]})
        for v in violations:
            emit_json({"kind": "violation", **v.to_json()})
        emit_json({"kind": "summary", **summary})
        return
    for ev in events:
        say(_event_line(ev))
        if ev.step + 1 in snaps:
            say(f"  state: {snaps[ev.step + 1]}", fg="cyan")
    for v in violations:
        say(f"violation at step {v.step}: {v.invariant.value}: {v.detail}", fg="red")
    colour = {"final": "green", "exhausted": "yellow"}.get(status, "red")
    say(f"{status} after {len(events)} steps", fg=colour)
    if final is not None:
        say(f"state: {summary['final']}")


@main.command()
@click.argument("file")
@click.option("--output", type=click.Choice(["human", "json"]), default="human")
def analyze(file: str, output: str) -> None:
    """Well-polarisation, precedence and weight of every process in FILE."""
    prog = load(file)
    results = [_analyze_one(prog, label, p) for label, p in _processes(prog)]
    if output == "json":
        for r in results:
            emit_json({"kind": "analysis", **r})
        return
    for r in results:
        say(f"{r['process']}:", fg="cyan")
        say(f"  well-polarised as written: {_yes(r['wp_on_tree'])}")
        say(f"  some arrangement well-polarised: {_yes(r['wp_exists'])}")
        if r["witness"] is not None:
            say(f"  witness: {r['witness']}")
        say(f"  sharing graph: {'simple' if r['simple'] else 'not simple'}, "
            f"{'acyclic' if r['sharing_acyclic'] else 'cyclic'}")
        if r["precedence"]:
            say("  precedence: " + ", ".join(f"{a} < {b}" for a, b in r["precedence"]))
        if r["acyclic"]:
            say("  precedence acyclic")
        else:
            say("  precedence cycle: " + " < ".join(r["cycle"]), fg="red")
        if r["weight"] is not None:
            say(f"  weight: {tuple(r['weight'])}")
        elif r["type_error"]:
            say(f"  untypeable: {r['type_error']}", fg="yellow")


def _yes(b: bool) -> str:
    return "yes" if b else "no"


def _analyze_one(prog: Program, label: str, p) -> dict:
    parts = analysis.split(p)
    wp = analysis.wp_exists(parts.threads)
    graph = analysis.SharingGraph.of(parts.threads)
    acyc = analysis.precedence_acyclic(parts.threads)
    out = {
        "process": label,
        "threads": len(graph.vertices),
        "wp_on_tree": analysis.wp_on_tree(parts.threads),
        "wp_exists": wp.holds,
        "witness": pretty(wp.witness) if wp.witness is not None else None,
        "simple": graph.is_simple(),
        "sharing_acyclic": graph.is_acyclic(),
        "precedence": [list(e) for e in analysis.precedence_edges(parts.threads)],
        "acyclic": acyc.acyclic,
        "cycle": list(acyc.cycle),
        "weight": None,
        "type_error": None,
    }
    try:
        typing = type_process(prog.assumptions, p)
        m = analysis.horizon(typing.resources, typing.env)
        out["weight"] = list(analysis.weight(p, typing.env, typing.resources, time=m))
    except TypeCheckError as err:
        out["type_error"] = err.message
    except analysis.BudgetExceeded as exc:
        out["type_error"] = str(exc)
    return out


@main.command()
@click.option("--check", "do_check", is_flag=True, help="Typecheck every bundled file.")
def corpus(do_check: bool) -> None:
    """List the bundled example programs."""
    failed = 0
    for name in corpus_files():
        if not do_check:
            say(name)
            continue
        prog = parse_program(read_source(name))
        with contextlib.redirect_stdout(io.StringIO()):
            ok = check_program(prog)
        failed += not ok
        say(f"{name}: {'ok' if ok else 'type errors'}", fg="green" if ok else "yellow")
    sys.exit(Exit.OK if not failed else Exit.TYPE_ERROR)


if __name__ == "__main__":  # pragma: no cover
    main()
