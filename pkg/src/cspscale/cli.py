"""Command-line interface.

Exit codes: 0 success, 1 usage error (bad flags, unknown preset or file),
2 architecture file that does not parse, 3 semantic error (invariant or
transform precondition violated, infeasible budget).

A network source is one of: a path to an architecture file, a preset name,
``backbone+neck`` (for example ``darknet53+fpnspp``), or any of those followed
by ``\\P7``-style suffixes that prune the top pyramid levels.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import replace
from fractions import Fraction
from typing import Optional, Sequence

from .costmodel import closed_form_cost
from .ir import ArchSemanticError, ArchSyntaxError, NetworkSpec, load_spec, serialize_spec
from .oracle import oracle_cost
from .planner import Budget, BudgetKind, PlanningError, check_tiny_principles, compound_scale_up
from .presets import BACKBONES, NECKS, PRESETS, PresetError, detector, get_preset
from .report import ADDITIVE, METRICS, CostReport, ratio_delta
from .rewrite import RewriteReport, apply_partition, cspize, prune_heads

EXIT_USAGE, EXIT_PARSE, EXIT_SEMANTIC = 1, 2, 3
CSV_COLUMNS = ("source", "stage", "role") + METRICS


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# Source resolution
# ---------------------------------------------------------------------------


def resolve_source(text: str, input_size: Optional[int] = None, tau: int = 1) -> NetworkSpec:
    if os.path.isfile(text):
        spec = load_spec(text)
    else:
        base, *levels = text.split("\\")
        spec = _named(base)
        if levels:
            spec, _ = prune_heads(spec, levels)
    if input_size is not None:
        spec = with_input(spec, input_size)
    return apply_partition(spec, tau)


def _named(name: str) -> NetworkSpec:
    if "+" in name:
        backbone, _, neck = name.partition("+")
        if backbone not in BACKBONES or neck not in NECKS:
            raise UsageError(
                f"unknown combination {name!r}; backbones: {', '.join(BACKBONES)}; necks: {', '.join(NECKS)}"
            )
        return detector(backbone, neck)
    try:
        return get_preset(name)
    except PresetError:
        raise UsageError(f"unknown preset or file {name!r}") from None


def with_input(spec: NetworkSpec, size: int) -> NetworkSpec:
    return NetworkSpec(spec.name, replace(spec.input, width=size, height=size), spec.stages)


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------


def humanize(n: float) -> str:
    for scale, suffix in ((1e12, "T"), (1e9, "G"), (1e6, "M"), (1e3, "K")):
        if abs(n) >= scale:
            return f"{n / scale:.2f}{suffix}"
    return str(n)


def _table(rows: Sequence[Sequence], header: Sequence[str], left: int = 2) -> str:
    cells = [list(map(str, header))] + [[str(c) for c in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    lines = []
    for n, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) if i < left else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))))
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _report_rows(report: CostReport):
    rows = [[s.name, s.role] + [getattr(s, m) for m in METRICS] for s in report.per_stage]
    rows.append(["total", ""] + [getattr(report, m) for m in METRICS])
    return rows


def render_report_table(spec: NetworkSpec, report: CostReport) -> str:
    shape = spec.input
    head = f"network {spec.name}  input {shape.width}x{shape.height}x{shape.channels}"
    body = _table(_report_rows(report), ("stage", "role") + METRICS)
    summary = "  ".join(f"{m} {humanize(getattr(report, m))}" for m in ("flops", "params", "mac"))
    return f"{head}\n{body}\n{summary}"


def csv_rows(source: str, report: CostReport):
    for s in report.per_stage:
        yield [source, s.name, s.role] + [getattr(s, m) for m in METRICS]
    yield [source, "total", ""] + [getattr(report, m) for m in METRICS]


def _csv(rows, header=CSV_COLUMNS) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue().rstrip("\n")


def _json(data) -> str:
    return json.dumps(data, indent=2, sort_keys=False, default=str)


def difference(a: CostReport, b: CostReport) -> dict:
    return {m: getattr(a, m) - getattr(b, m) for m in METRICS}


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_analyze(args) -> str:
    spec = resolve_source(args.source, args.input, args.tau)
    closed = closed_form_cost(spec)
    oracle = oracle_cost(spec) if args.oracle else None
    if oracle is not None and oracle != closed:
        print("warning: closed form and oracle disagree", file=sys.stderr)
    if args.format == "json":
        data = {"network": spec.name, "input": _shape(spec), "closed_form": closed.to_dict()}
        if oracle is not None:
            data["oracle"] = oracle.to_dict()
            data["difference"] = difference(closed, oracle)
        return _json(data)
    if args.format == "csv":
        rows = list(csv_rows("closed_form", closed))
        if oracle is not None:
            rows += list(csv_rows("oracle", oracle))
        return _csv(rows)
    out = render_report_table(spec, closed)
    if oracle is not None:
        diff = difference(closed, oracle)
        out += "\n\noracle   " + "  ".join(f"{m} {getattr(oracle, m)}" for m in METRICS)
        out += "\ndiff     " + "  ".join(f"{m} {diff[m]}" for m in METRICS)
    return out


def _shape(spec: NetworkSpec) -> dict:
    return {"width": spec.input.width, "height": spec.input.height, "channels": spec.input.channels}


def compare_reports(a: CostReport, b: CostReport) -> dict:
    return {m: ratio_delta(getattr(a, m), getattr(b, m)) for m in ADDITIVE}


def cmd_compare(args) -> str:
    spec_a = resolve_source(args.a, args.input, args.tau)
    spec_b = resolve_source(args.b, args.input, args.tau)
    cost = oracle_cost if args.oracle else closed_form_cost
    a, b = cost(spec_a), cost(spec_b)
    deltas = compare_reports(a, b)
    if args.format == "json":
        return _json(
            {"a": {"network": spec_a.name, **a.to_dict()}, "b": {"network": spec_b.name, **b.to_dict()},
             "reduction": deltas}
        )
    rows = [[m, getattr(a, m), getattr(b, m), f"{deltas[m]:.6f}" if m in deltas else ""] for m in METRICS]
    if args.format == "csv":
        return _csv(rows, ("metric", "a", "b", "reduction"))
    head = f"a = {spec_a.name}\nb = {spec_b.name}\nreduction = 1 - b/a"
    return head + "\n" + _table(rows, ("metric", "a", "b", "reduction"), left=1)


def _rewrite_output(args, spec: NetworkSpec, report: RewriteReport) -> str:
    for warning in report.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    if args.write:
        with open(args.write, "w", encoding="utf-8") as fh:
            fh.write(serialize_spec(spec))
    if args.format == "json":
        return _json({"network": spec.name, **report.to_dict()})
    if args.format == "csv":
        rows = list(csv_rows("before", report.before)) + list(csv_rows("after", report.after))
        if report.removed is not None:
            rows += list(csv_rows("removed", report.removed))
        return _csv(rows)
    rows = [[m, getattr(report.before, m), getattr(report.after, m)] for m in METRICS]
    if report.removed is not None:
        for row, m in zip(rows, METRICS):
            row.append(getattr(report.removed, m))
    header = ("metric", "before", "after") + (("removed",) if report.removed is not None else ())
    lines = [f"network {spec.name}", _table(rows, header, left=1)]
    lines.append(f"flops reduction {report.flops_delta:.4%}  params reduction {report.params_delta:.4%}")
    lines += report.transform_log
    return "\n".join(lines)


def cmd_cspize(args) -> str:
    spec = resolve_source(args.source, args.input, args.tau)
    out, report = cspize(spec, args.scope)
    return _rewrite_output(args, out, report)


def cmd_prune(args) -> str:
    spec = resolve_source(args.source, args.input, args.tau)
    out, report = prune_heads(spec, args.levels)
    return _rewrite_output(args, out, report)


def cmd_scale(args) -> str:
    if args.input is None:
        raise UsageError("scale needs --input <px>")
    if args.budget_flops is None:
        raise UsageError("scale needs --budget-flops <n>")
    base = resolve_source(args.source, None, args.tau)
    budget = Budget(Fraction(args.budget_flops), BudgetKind(args.budget_kind))
    plan = compound_scale_up(base, args.input, budget)
    if args.format == "json":
        return _json(plan.to_dict())
    base_cost = closed_form_cost(base)
    rows = [
        ["input", base.input.width, plan.resulting_spec.input.width],
        ["stages", len(base.stages), len(plan.resulting_spec.stages)],
        ["depths", ",".join(map(str, _backbone_depths(base))), ",".join(map(str, plan.stage_depths))],
        ["width", "1", str(plan.width_multiplier)],
    ] + [[m, getattr(base_cost, m), getattr(plan.cost, m)] for m in METRICS]
    if args.format == "csv":
        return _csv(rows, ("field", "base", "planned"))
    f = plan.factors
    lines = [
        _table(rows, ("field", "base", "planned"), left=1),
        f"factors alpha {f.alpha_size}  beta {f.beta_depth}  gamma {f.gamma_width}  stages {f.delta_stages:+d}",
    ]
    lines += [f"  {k}: {v}" for k, v in f.provenance.items()]
    lines += [f"  width {w}: {flops} FLOPs" for w, flops in plan.candidates]
    return "\n".join(lines)


def _backbone_depths(spec: NetworkSpec) -> list[int]:
    return [s.block.repeats for s, g in zip(spec.stages, spec.geometry) if g.name.startswith("B")]


def cmd_presets(args) -> str:
    if args.action != "list":
        raise UsageError(f"unknown presets action {args.action!r}")
    if args.format == "json":
        return _json([{"name": p.name, "notes": p.notes} for p in PRESETS.values()])
    rows = [[p.name, p.notes] for p in PRESETS.values()]
    if args.format == "csv":
        return _csv(rows, ("name", "notes"))
    return _table(rows, ("name", "notes"))


def cmd_check_tiny(args) -> str:
    spec = resolve_source(args.source, args.input)
    report = check_tiny_principles(spec, args.tau)
    if args.format == "json":
        return _json(report.to_dict())
    if args.format == "csv":
        rows = [[i, p.name, "pass" if p.passed else "fail", " | ".join(p.details)]
                for i, p in enumerate(report.principles, 1)]
        return _csv(rows, ("principle", "name", "result", "details"))
    lines = [f"network {spec.name}  tau {args.tau}"]
    for i, p in enumerate(report.principles, 1):
        lines.append(f"[{'pass' if p.passed else 'FAIL'}] {i}. {p.name}")
        lines += [f"    {d}" for d in p.details]
    return "\n".join(lines)


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _input_size(text: str) -> int:
    value = _positive(text)
    if value < 32:
        raise argparse.ArgumentTypeError(f"input must be >= 32 pixels, got {value}")
    return value


def _budget(text: str) -> Fraction:
    try:
        value = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError("budget must be > 0")
    return value


def build_parser() -> argparse.ArgumentParser:
    # flags are accepted before or after the subcommand; SUPPRESS keeps the
    # subcommand copy from overwriting a value given earlier
    def add_common(p, defaults: bool):
        d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
        p.add_argument("--format", choices=("table", "json", "csv"), default=d("table"))
        p.add_argument("--oracle", action="store_true", default=d(False),
                       help="also count FLOPs by expanding every convolution")
        p.add_argument("--tau", type=_positive, default=d(1), help="bandwidth for PCB partition planning")
        p.add_argument("--input", type=_input_size, default=d(None), help="square input size in pixels")

    parser = _Parser(prog="cspscale", description="CNN cost modeling, CSP rewrites and compound scaling.")
    add_common(parser, True)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        add_common(p, False)
        p.set_defaults(func=func)
        return p

    p = command("analyze", cmd_analyze, "cost report of one network")
    p.add_argument("source")
    p = command("compare", cmd_compare, "two networks side by side")
    p.add_argument("a")
    p.add_argument("b")
    p = command("cspize", cmd_cspize, "replace plain blocks by their CSP counterparts")
    p.add_argument("source")
    p.add_argument("--scope", choices=("backbone", "neck", "all"), default="all")
    p.add_argument("--write", metavar="PATH", help="save the rewritten architecture file")
    p = command("prune", cmd_prune, "remove the top pyramid levels")
    p.add_argument("source")
    p.add_argument("levels", nargs="+", metavar="LEVEL", help="levels such as P7 P6")
    p.add_argument("--write", metavar="PATH", help="save the pruned architecture file")
    p = command("scale", cmd_scale, "compound scale-up under a FLOP budget")
    p.add_argument("source")
    p.add_argument("--budget-flops", type=_budget, default=None)
    p.add_argument("--budget-kind", choices=[k.value for k in BudgetKind], default="flops")
    p = command("presets", cmd_presets, "built-in architectures")
    p.add_argument("action", choices=("list",))
    p = command("check-tiny", cmd_check_tiny, "tiny-model design principles")
    p.add_argument("source")
    p = command("export", cmd_export, "print a network as an architecture file")
    p.add_argument("source")
    return parser


def cmd_export(args) -> str:
    return serialize_spec(resolve_source(args.source, args.input, args.tau)).rstrip("\n")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        output = args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ArchSyntaxError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ArchSemanticError, PlanningError) as exc:
        print(f"semantic error: {exc}", file=sys.stderr)
        return EXIT_SEMANTIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(output)
    return 0


if __name__ == "__main__":
    sys.exit(main())
