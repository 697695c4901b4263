"""Command-line front end.

Exit codes: 0 on success, 1 for an infeasible or failed run, 2 for input
errors (unreadable files, parse failures, bad flags).
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .consistency import validate_consistency
from .convexify import convexify_problem
from .curvature import SignContext, curvature_of, detect_nonconvex, verify_convex
from .errors import NcxError
from .expr import Assignment
from .gateway import GatewayConfig, ModelGateway
from .jsonio import emit_json
from .metrics import (
    Corpus,
    breakdown_from_timings,
    eval_corpus,
    load_problem_file,
    sweep_iterations,
    time_breakdown,
)
from .pipeline import PipelineConfig, run
from .problem import NlDescription, default_reference_point
from .codegen import emit_script
from .solver import BackendId, SolveOptions, select_backend


def _load_or_die(path: str):
    try:
        return load_problem_file(path)
    except (NcxError, OSError) as exc:
        click.echo(f"error: {path}: {exc}", err=True)
        sys.exit(2)


def _parse_x0(text: str | None, pb) -> Assignment | None:
    if not text:
        return None
    values = {}
    try:
        for chunk in text.split(","):
            name, _, raw = chunk.partition("=")
            if not _:
                raise ValueError(f"expected name=value, got {chunk!r}")
            values[name.strip()] = float(raw)
    except ValueError as exc:
        click.echo(f"error: bad --x0: {exc}", err=True)
        sys.exit(2)
    base = dict(default_reference_point(pb))
    base.update(values)
    return Assignment(base)


def _write_or_print(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
        click.echo(f"wrote {out}")
    else:
        click.echo(text)


@click.group()
def main() -> None:
    """Convexification pipeline for optimization problems."""


@main.command("solve")
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.option("--x0", "x0_text", default=None,
              help="Starting point as comma-separated name=value pairs.")
@click.option("--report", "report_path", default=None,
              help="Write the full run record as JSON.")
@click.option("--max-ecl", default=3, show_default=True, help="Repair rounds (K).")
@click.option("--max-fdc", default=6, show_default=True, help="Correction rounds (L).")
def solve_cmd(file: str, x0_text: str | None, report_path: str | None,
              max_ecl: int, max_fdc: int) -> None:
    """Run the full pipeline on one problem file (.dsl text or .json)."""
    pb = _load_or_die(file)
    cfg = PipelineConfig(max_ecl=max_ecl, max_fdc=max_fdc)
    x0 = _parse_x0(x0_text, pb)
    result = run(pb, cfg, x0=x0)
    doc = result.to_json_dict()
    _emit_solve_output(doc, report_path)
    sys.exit(0 if result.success_flag else 1)


def _emit_solve_output(doc: dict, report_path: str | None) -> None:
    if report_path:
        Path(report_path).write_text(json.dumps(doc, indent=2), encoding="utf-8")
    flags = doc["flags"]
    click.echo(f"success={flags['success']} execute={flags['execute']}")
    if doc.get("objective") is not None:
        click.echo(f"objective: {doc['objective']!r}")
    if doc.get("x"):
        for name, value in doc["x"].items():
            click.echo(f"  {name} = {value!r}")


@main.command("analyze")
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
def analyze_cmd(file: str) -> None:
    """Curvature report and non-convex component list."""
    pb = _load_or_die(file)
    ctx = SignContext.for_problem(pb)
    click.echo(f"problem {pb.name}: {pb.direction.value}, "
               f"{len(pb.variables)} vars, m={pb.m}, p={pb.p}")
    click.echo(f"objective curvature: {curvature_of(pb.objective, ctx).value}")
    for i, g in enumerate(pb.ineq):
        click.echo(f"ineq[{i}] curvature: {curvature_of(g, ctx).value}")
    for j, h in enumerate(pb.eq):
        click.echo(f"eq[{j}] curvature: {curvature_of(h, ctx).value}")
    comps = detect_nonconvex(pb)
    if not comps:
        click.echo("certified convex-solvable: yes")
    else:
        click.echo(f"non-convex components ({len(comps)}):")
        for comp in comps:
            click.echo(f"  - {comp}")
    report = validate_consistency(pb)
    click.echo(f"consistency: i_c={int(report.i_c)}")


@main.command("transform")
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.option("--x0", "x0_text", default=None,
              help="Reference point as comma-separated name=value pairs.")
@click.option("--emit-script", "script_backend", default=None,
              type=click.Choice(["scipy", "cvxpy", "gurobi"]),
              help="Render the transformed problem for an external backend.")
@click.option("--out", "out_path", default=None, help="Write output to a file.")
def transform_cmd(file: str, x0_text: str | None, script_backend: str | None,
                  out_path: str | None) -> None:
    """Convexify a problem; print the transform record or a backend script."""
    pb = _load_or_die(file)
    x0 = _parse_x0(x0_text, pb) or default_reference_point(pb)
    try:
        pc = convexify_problem(pb, x0)
    except NcxError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    if script_backend:
        try:
            text = emit_script(pc, BackendId.script(script_backend))
        except NcxError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
        _write_or_print(text, out_path)
        return
    doc = {
        "verified_convex": verify_convex(pc.problem),
        "backend": str(select_backend(pc)),
        "transforms": [
            {"location": str(e.component.location),
             "kind": e.component.kind.value,
             "strategy": e.strategy.value}
            for e in pc.record.entries
        ],
        "problem": json.loads(emit_json(pc.problem)),
    }
    _write_or_print(json.dumps(doc, indent=2), out_path)


@main.command("eval")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.option("--repeats", default=10, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--max-ecl", default=3, show_default=True)
@click.option("--max-fdc", default=6, show_default=True)
@click.option("--ablate", multiple=True,
              type=click.Choice(["convex", "ecl", "fdc"]),
              help="Disable a pipeline stage (repeatable).")
@click.option("--sweep-k", default=None, help="Comma-separated K values.")
@click.option("--sweep-l", default=None, help="Comma-separated L values.")
@click.option("--report", "report_path", default=None, help="Write JSON report.")
@click.option("--csv", "csv_path", default=None, help="Write flat CSV metrics.")
def eval_cmd(manifest: str, repeats: int, seed: int, max_ecl: int, max_fdc: int,
             ablate: tuple[str, ...], sweep_k: str | None, sweep_l: str | None,
             report_path: str | None, csv_path: str | None) -> None:
    """Evaluate a corpus manifest: success rate, execution rate, timings."""
    try:
        corpus = Corpus.load(manifest)
    except NcxError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    cfg = PipelineConfig(
        max_ecl=max_ecl,
        max_fdc=max_fdc,
        disable_convexify="convex" in ablate,
        disable_ecl="ecl" in ablate,
        disable_fdc="fdc" in ablate,
    )
    if sweep_k or sweep_l:
        try:
            k_values = [int(v) for v in (sweep_k or str(max_ecl)).split(",")]
            l_values = [int(v) for v in (sweep_l or str(max_fdc)).split(",")]
        except ValueError as exc:
            click.echo(f"error: bad sweep list: {exc}", err=True)
            sys.exit(2)
        table = sweep_iterations(corpus, cfg, k_values, l_values, repeats, seed)
        doc = table.to_json_dict()
        for cell in doc["cells"]:
            click.echo(f"K={cell['max_ecl']} L={cell['max_fdc']} "
                       f"SR={cell['success_rate']:.3f} ER={cell['execution_rate']:.3f}")
        if report_path:
            Path(report_path).write_text(json.dumps(doc, indent=2), encoding="utf-8")
        return
    report = eval_corpus(corpus, cfg, repeats, seed)
    click.echo(f"corpus {report.corpus_name}: {len(corpus)} problems x {repeats} reps")
    click.echo(f"success rate:   {report.success_rate:.4f}")
    click.echo(f"execution rate: {report.execution_rate:.4f}")
    click.echo(time_breakdown(report).render())
    if report_path:
        Path(report_path).write_text(report.to_json(), encoding="utf-8")
    if csv_path:
        Path(csv_path).write_text(report.to_csv(), encoding="utf-8")


@main.command("extract")
@click.argument("desc_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--gateway", "gateway_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Gateway config JSON: {mode, endpoint, model, fixture_path}.")
@click.option("--max-rounds", default=3, show_default=True)
@click.option("--out", "out_path", default=None,
              help="Write the extracted problem as canonical JSON.")
def extract_cmd(desc_file: str, gateway_path: str, max_rounds: int,
                out_path: str | None) -> None:
    """Extract a problem from a natural-language description via the model
    gateway."""
    from .consistency import extract_from_nl

    try:
        raw = json.loads(Path(gateway_path).read_text(encoding="utf-8"))
        cfg = GatewayConfig(
            mode=raw.get("mode", "replay"),
            endpoint=raw.get("endpoint"),
            model=raw.get("model"),
            fixture_path=raw.get("fixture_path"),
            api_key_env=raw.get("api_key_env", "NC2C_API_KEY"),
        )
        gateway = ModelGateway(cfg)
    except (ValueError, OSError) as exc:
        click.echo(f"error: gateway config: {exc}", err=True)
        sys.exit(2)
    text = Path(desc_file).read_text(encoding="utf-8")
    try:
        outcome = extract_from_nl(NlDescription(text), gateway, max_rounds)
    except NcxError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    payload = emit_json(outcome.problem).decode("utf-8")
    _write_or_print(payload, out_path)
    for diag in outcome.diagnostics:
        click.echo(f"note: {diag}", err=True)


if __name__ == "__main__":
    main()
