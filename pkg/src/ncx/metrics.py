"""Corpus evaluation: success/execution rates over repeated runs, stage-time
breakdown, and iteration-budget sweeps."""

from __future__ import annotations

import csv
import io
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from .dsl import parse_problem
from .errors import CorpusLoadError, NcxError
from .jsonio import parse_json
from .pipeline import STAGES, PipelineConfig, run
from .problem import NlDescription, Problem

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def load_problem_file(path: str | Path) -> Problem:
    path = Path(path)
    data = path.read_bytes()
    if path.suffix == ".json":
        return parse_json(data)
    return parse_problem(data)


@dataclass(frozen=True)
class CorpusProblem:
    path: Path
    problem: Problem
    description: str | None = None


@dataclass(frozen=True)
class Corpus:
    name: str
    problems: tuple[CorpusProblem, ...]

    def __post_init__(self):
        if not self.problems:
            raise CorpusLoadError([("<corpus>", "no problems listed")])

    def __len__(self):
        return len(self.problems)

    @classmethod
    def from_paths(cls, paths, name: str = "corpus") -> Corpus:
        loaded: list[CorpusProblem] = []
        failures: list[tuple[str, str]] = []
        for p in paths:
            try:
                loaded.append(CorpusProblem(Path(p), load_problem_file(p)))
            except (NcxError, OSError) as exc:
                failures.append((str(p), str(exc)))
        if failures:
            raise CorpusLoadError(failures)
        return cls(name, tuple(loaded))

    @classmethod
    def load(cls, manifest_path: str | Path) -> Corpus:
        """TOML manifest: `name`, `problems` (list of paths relative to the
        manifest), optional `[descriptions]` table mapping path to text."""
        manifest_path = Path(manifest_path)
        try:
            doc = tomllib.loads(manifest_path.read_text(encoding="utf-8"))
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise CorpusLoadError([(str(manifest_path), str(exc))]) from None
        name = doc.get("name", manifest_path.stem)
        entries = doc.get("problems")
        if not isinstance(entries, list) or not entries:
            raise CorpusLoadError(
                [(str(manifest_path), "manifest needs a nonempty 'problems' list")])
        descriptions = doc.get("descriptions", {})
        base = manifest_path.parent
        loaded: list[CorpusProblem] = []
        failures: list[tuple[str, str]] = []
        for entry in entries:
            path = base / entry
            try:
                pb = load_problem_file(path)
            except (NcxError, OSError) as exc:
                failures.append((str(path), str(exc)))
                continue
            loaded.append(CorpusProblem(path, pb, descriptions.get(entry)))
        if failures:
            raise CorpusLoadError(failures)
        return cls(name, tuple(loaded))


def aggregate_rates(v_arrays, q_arrays) -> tuple[float, float]:
    """Success and execution rates: corpus mean of per-problem repetition
    means."""
    if not v_arrays:
        return 0.0, 0.0

    def mean(xs):
        xs = list(xs)
        return sum(xs) / len(xs)

    sr = mean(mean(v) for v in v_arrays)
    er = mean(mean(q) for q in q_arrays)
    return sr, er


@dataclass(frozen=True)
class MetricsReport:
    corpus_name: str
    problem_names: tuple[str, ...]
    v_arrays: tuple[tuple[int, ...], ...]  # feasibility outcomes per repetition
    q_arrays: tuple[tuple[int, ...], ...]  # execution outcomes per repetition
    repetitions: int
    seed: int
    stage_totals: dict = field(default_factory=dict)
    config_snapshot: dict = field(default_factory=dict)

    @property
    def success_rate(self) -> float:
        return aggregate_rates(self.v_arrays, self.q_arrays)[0]

    @property
    def execution_rate(self) -> float:
        return aggregate_rates(self.v_arrays, self.q_arrays)[1]

    def stage_means(self) -> dict:
        n = len(self.problem_names) * self.repetitions
        return {k: self.stage_totals.get(k, 0.0) / max(n, 1) for k in STAGES}

    def to_json_dict(self) -> dict:
        return {
            "corpus": self.corpus_name,
            "success_rate": self.success_rate,
            "execution_rate": self.execution_rate,
            "repetitions": self.repetitions,
            "seed": self.seed,
            "problems": [
                {"name": name, "v": list(v), "q": list(q)}
                for name, v, q in zip(self.problem_names, self.v_arrays, self.q_arrays)
            ],
            "stage_means": self.stage_means(),
            "config": self.config_snapshot,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["problem", "repetition", "executed", "feasible"])
        for name, v, q in zip(self.problem_names, self.v_arrays, self.q_arrays):
            for rep, (vi, qi) in enumerate(zip(v, q)):
                writer.writerow([name, rep, qi, vi])
        writer.writerow([])
        writer.writerow(["success_rate", self.success_rate])
        writer.writerow(["execution_rate", self.execution_rate])
        return out.getvalue()


def _config_snapshot(cfg: PipelineConfig, repeats: int, seed: int) -> dict:
    return {
        "max_ecl": cfg.max_ecl,
        "max_fdc": cfg.max_fdc,
        "feas_tol": cfg.feas_tol,
        "ablations": {
            "convexify": cfg.disable_convexify,
            "ecl": cfg.disable_ecl,
            "fdc": cfg.disable_fdc,
        },
        "repeats": repeats,
        "seed": seed,
    }


def eval_corpus(corpus: Corpus, cfg: PipelineConfig | None = None,
                repeats: int = 10, seed: int = 0) -> MetricsReport:
    """Run the pipeline `repeats` times per problem with per-repetition
    seeds derived as seed + index, and aggregate feasibility/execution
    outcomes."""
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    cfg = cfg or PipelineConfig()
    names: list[str] = []
    v_arrays: list[tuple[int, ...]] = []
    q_arrays: list[tuple[int, ...]] = []
    stage_totals = {k: 0.0 for k in STAGES}
    for item in corpus.problems:
        names.append(item.problem.name)
        vs: list[int] = []
        qs: list[int] = []
        for rep in range(repeats):
            rep_cfg = replace(
                cfg, solve_options=replace(cfg.solve_options, seed=seed + rep))
            task = item.problem
            if item.description is not None and cfg.gateway is not None:
                task = NlDescription(item.description)
            result = run(task, rep_cfg)
            vs.append(result.success_flag)
            qs.append(result.execute_flag)
            for k in STAGES:
                stage_totals[k] += result.timings.get(k, 0.0)
        v_arrays.append(tuple(vs))
        q_arrays.append(tuple(qs))
    return MetricsReport(
        corpus_name=corpus.name,
        problem_names=tuple(names),
        v_arrays=tuple(v_arrays),
        q_arrays=tuple(q_arrays),
        repetitions=repeats,
        seed=seed,
        stage_totals=stage_totals,
        config_snapshot=_config_snapshot(cfg, repeats, seed),
    )


@dataclass(frozen=True)
class TimeBreakdown:
    shares: dict
    degenerate: bool = False  # all-zero timings fell back to uniform shares

    def render(self) -> str:
        lines = ["stage        share", "-----------  ------"]
        for stage in STAGES:
            lines.append(f"{stage:<11}  {self.shares[stage]:6.3f}")
        if self.degenerate:
            lines.append("(all-zero timings: uniform shares reported)")
        return "\n".join(lines)

    def to_json_dict(self) -> dict:
        return {"shares": dict(self.shares), "degenerate": self.degenerate}


def time_breakdown(report: MetricsReport) -> TimeBreakdown:
    """Normalized stage shares; they sum to 1 unless every timing is zero,
    in which case uniform shares are reported with a warning flag."""
    totals = {k: report.stage_totals.get(k, 0.0) for k in STAGES}
    total = sum(totals.values())
    if total <= 0.0:
        uniform = 1.0 / len(STAGES)
        return TimeBreakdown({k: uniform for k in STAGES}, degenerate=True)
    return TimeBreakdown({k: v / total for k, v in totals.items()})


def breakdown_from_timings(timings: dict) -> TimeBreakdown:
    """Shares for one run's raw timing map (same normalization rules)."""
    stub = MetricsReport("single", ("single",), ((1,),), ((1,),), 1, 0,
                         stage_totals={k: timings.get(k, 0.0) for k in STAGES})
    return time_breakdown(stub)


@dataclass(frozen=True)
class SweepCell:
    max_ecl: int
    max_fdc: int
    report: MetricsReport


@dataclass(frozen=True)
class SweepTable:
    cells: tuple[SweepCell, ...]

    def cell(self, k: int, l: int) -> MetricsReport:
        for c in self.cells:
            if c.max_ecl == k and c.max_fdc == l:
                return c.report
        raise KeyError((k, l))

    def to_json_dict(self) -> dict:
        return {
            "cells": [
                {"max_ecl": c.max_ecl, "max_fdc": c.max_fdc,
                 "success_rate": c.report.success_rate,
                 "execution_rate": c.report.execution_rate}
                for c in self.cells
            ]
        }


def sweep_iterations(corpus: Corpus, cfg: PipelineConfig,
                     k_values, l_values, repeats: int = 10,
                     seed: int = 0) -> SweepTable:
    """One metrics report per (K, L) pair."""
    k_values = list(k_values)
    l_values = list(l_values)
    if not k_values or not l_values:
        raise ValueError("sweep lists must be nonempty")
    cells = []
    for k in k_values:
        for l in l_values:
            cell_cfg = replace(cfg, max_ecl=k, max_fdc=l)
            cells.append(SweepCell(k, l, eval_corpus(corpus, cell_cfg, repeats, seed)))
    return SweepTable(tuple(cells))
