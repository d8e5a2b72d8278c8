"""Command-line harness: single runs, the port sweep and the arbitration sweep.

Every command writes CSV (the stable contract) plus a markdown table and,
unless ``--no-svg`` is given, a grouped bar chart. Files are written only
after all points of a sweep have finished.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import HierarchyConfig, Policy, load_config, validate, with_override
from .engine import DEFAULT_CYCLE_CAP, SweepRow, Simulation, sweep
from .errors import MemSimError
from .workloads import builtin_suite, load_workloads, resolve

log = logging.getLogger("memsim")

CSV_COLUMNS = ("experiment", "workload", "mem_ports", "arbitration", "seed", "cycles", "retired", "ipc",
               "l1d_hit_rate", "l2_hit_rate", "l3_hit_rate", "channel_util_mean", "max_outstanding")
PORT_COUNTS = (1, 2, 4, 8)
ARB_POLICIES = (Policy.CROSSBAR, Policy.SOURCE_RR, Policy.DISTRIBUTED_RR)


def _fmt(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.6f}"


def csv_row(experiment: str, row: SweepRow) -> dict[str, str]:
    """One CSV record; metric cells are empty when the point failed."""
    cfg = row.config
    out = {k: "" for k in CSV_COLUMNS}
    out["experiment"] = experiment
    out["workload"] = row.workload
    if cfg is not None:
        out["mem_ports"] = str(cfg.memory.num_channels)
        out["arbitration"] = cfg.arbitration.variant.value
        out["seed"] = str(cfg.seed)
    elif row.parameter == "mem_ports":
        out["mem_ports"] = str(row.value)
    s = row.stats
    if s is not None:
        out.update(cycles=str(s.cycles), retired=str(s.retired), ipc=_fmt(s.ipc),
                   l1d_hit_rate=_fmt(s.hit_rate("l1d")), l2_hit_rate=_fmt(s.hit_rate("l2")),
                   l3_hit_rate=_fmt(s.hit_rate("l3")), channel_util_mean=_fmt(s.channel_util_mean),
                   max_outstanding=str(s.max_outstanding))
    return out


def render_csv(records: Sequence[dict], columns: Sequence[str] = CSV_COLUMNS,
               failures: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    w.writerows(records)
    if failures:
        buf.write(f"# incomplete: {len(failures)} point(s) failed\n")
    return buf.getvalue()


def geomean(values: Sequence[float]) -> float:
    vals = [v for v in values if v > 0]
    if not vals:
        return float("nan")
    return math.exp(sum(math.log(v) for v in vals) / len(vals))


# -- SVG ----------------------------------------------------------------------

_COLORS = ("#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948")


def grouped_bar_svg(title: str, groups: Sequence[str], series: Sequence[str],
                    values: dict[tuple[str, str], float], ylabel: str = "") -> str:
    """A grouped bar chart as standalone SVG markup."""
    W, H, left, bottom, top = 720, 360, 60, 50, 40
    plot_w, plot_h = W - left - 20, H - bottom - top
    finite = [v for v in values.values() if v is not None and not math.isnan(v)]
    vmax = max(finite) if finite else 1.0
    vmax = vmax * 1.1 if vmax > 0 else 1.0
    gw = plot_w / max(1, len(groups))
    bw = gw * 0.8 / max(1, len(series))
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" '
             f'font-size="11">',
             f'<text x="{W / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
             f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" stroke="black"/>',
             f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>']
    for k in range(5):
        v = vmax * k / 4
        y = top + plot_h - plot_h * k / 4
        parts.append(f'<text x="{left - 5}" y="{y + 4:.1f}" text-anchor="end">{v:.3g}</text>')
    if ylabel:
        parts.append(f'<text x="14" y="{top + plot_h / 2:.1f}" text-anchor="middle" '
                     f'transform="rotate(-90 14 {top + plot_h / 2:.1f})">{ylabel}</text>')
    for gi, g in enumerate(groups):
        x0 = left + gi * gw + gw * 0.1
        for si, s in enumerate(series):
            v = values.get((g, s))
            if v is None or math.isnan(v):
                continue
            h = plot_h * v / vmax
            parts.append(f'<rect x="{x0 + si * bw:.1f}" y="{top + plot_h - h:.1f}" width="{bw:.1f}" '
                         f'height="{h:.1f}" fill="{_COLORS[si % len(_COLORS)]}"/>')
        parts.append(f'<text x="{left + gi * gw + gw / 2:.1f}" y="{top + plot_h + 15}" '
                     f'text-anchor="middle">{g}</text>')
    for si, s in enumerate(series):
        x = left + 10 + si * 110
        parts.append(f'<rect x="{x}" y="{H - 18}" width="10" height="10" fill="{_COLORS[si % len(_COLORS)]}"/>')
        parts.append(f'<text x="{x + 14}" y="{H - 9}">{s}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# -- reports ------------------------------------------------------------------

def ports_report(rows: Sequence[SweepRow]) -> dict[str, str]:
    """Files for the port sweep: raw and relative CSV, markdown, SVG."""
    records = [csv_row("sweep-ports", r) for r in rows]
    failures = [f"{r.workload} mem_ports={r.value}: {r.error}" for r in rows if r.error]
    base = {r.workload: r.stats.ipc for r in rows if r.value == 1 and r.stats is not None}
    rel_records = []
    rel: dict[tuple[str, str], float] = {}
    for r, rec in zip(rows, records):
        rec = dict(rec)
        b = base.get(r.workload)
        if r.stats is not None and b:
            rec["relative_ipc"] = _fmt(r.stats.ipc / b)
            rel[(r.workload, str(r.value))] = r.stats.ipc / b
        else:
            rec["relative_ipc"] = ""
        rel_records.append(rec)
    workloads = list(dict.fromkeys(r.workload for r in rows))
    ports = list(dict.fromkeys(str(r.value) for r in rows))
    md = ["| workload | " + " | ".join(f"{p} port{'s' if p != '1' else ''}" for p in ports) + " |",
          "|---|" + "---|" * len(ports)]
    for w in workloads:
        cells = []
        for p in ports:
            r = next(x for x in rows if x.workload == w and str(x.value) == p)
            cells.append(f"{r.stats.ipc:.4f} ({rel[(w, p)]:.2f}x)" if (w, p) in rel else "failed")
        md.append(f"| {w} | " + " | ".join(cells) + " |")
    md.append("| geomean speedup | " + " | ".join(
        f"{geomean([rel[(w, p)] for w in workloads if (w, p) in rel]):.3f}x" for p in ports) + " |")
    for f in failures:
        md.append(f"\nfailed: {f}")
    files = {
        "ports_ipc.csv": render_csv(records, failures=failures),
        "ports_relative.csv": render_csv(rel_records, CSV_COLUMNS + ("relative_ipc",), failures),
        "ports.md": "\n".join(md) + "\n",
    }
    files["ports.svg"] = grouped_bar_svg("IPC relative to 1 memory port", workloads,
                                         ports, {(w, p): v for (w, p), v in rel.items()},
                                         "relative IPC")
    return files


def arb_report(rows: Sequence[SweepRow]) -> dict[str, str]:
    """Files for the arbitration sweep: CSV, policies x workloads markdown, SVG."""
    records = [csv_row("sweep-arb", r) for r in rows]
    failures = [f"{r.workload} arbitration={r.value}: {r.error}" for r in rows if r.error]
    workloads = list(dict.fromkeys(r.workload for r in rows))
    policies = list(dict.fromkeys(Policy.parse(r.value).value for r in rows))
    ipc = {(r.workload, Policy.parse(r.value).value): r.stats.ipc for r in rows if r.stats is not None}
    md = ["| policy | " + " | ".join(workloads) + " |", "|---|" + "---|" * len(workloads)]
    best = {w: max((ipc[(w, p)] for p in policies if (w, p) in ipc), default=None) for w in workloads}
    for p in policies:
        cells = []
        for w in workloads:
            v = ipc.get((w, p))
            if v is None:
                cells.append("failed")
            else:
                cells.append(f"**{v:.4f}**" if v == best[w] else f"{v:.4f}")
        md.append(f"| {p} | " + " | ".join(cells) + " |")
    spread = []
    for w in workloads:
        vals = [ipc[(w, p)] for p in policies if (w, p) in ipc]
        spread.append(f"{max(vals) / min(vals):.4f}" if vals and min(vals) > 0 else "n/a")
    md.append("| max/min | " + " | ".join(spread) + " |")
    for f in failures:
        md.append(f"\nfailed: {f}")
    files = {"arb_ipc.csv": render_csv(records, failures=failures), "arb.md": "\n".join(md) + "\n"}
    files["arb.svg"] = grouped_bar_svg("IPC per arbitration policy", workloads, policies, ipc, "IPC")
    return files


# -- commands -----------------------------------------------------------------

def _base_config(args) -> HierarchyConfig:
    cfg = load_config(args.config) if args.config else HierarchyConfig()
    seed = os.environ.get("MEMSIM_SEED")
    if seed is not None:
        cfg = with_override(cfg, "seed", int(seed))
    if args.seed is not None:
        cfg = with_override(cfg, "seed", args.seed)
    return cfg


def _extra_workloads(args):
    return load_workloads(args.config) if args.config else []


def _write(out_dir: Path, files: dict[str, str], svg: bool) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        if name.endswith(".svg") and not svg:
            continue
        (out_dir / name).write_text(text)
        print(f"wrote {out_dir / name}")


def cmd_run(args) -> int:
    cfg = validate(_base_config(args))
    try:
        spec = resolve(args.workload, _extra_workloads(args))
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return 2
    trace_fh = open(args.trace, "w", newline="") if args.trace else None
    try:
        stats = Simulation(cfg, spec, cycle_cap=args.cycle_cap, trace=trace_fh).run()
    finally:
        if trace_fh:
            trace_fh.close()
    print(f"workload          {spec.name}")
    print(stats.summary())
    row = SweepRow(spec.name, "mem_ports", cfg.memory.num_channels, cfg, stats)
    text = render_csv([csv_row("run", row)])
    if args.out_dir:
        _write(Path(args.out_dir), {"run.csv": text}, False)
    else:
        sys.stdout.write(text)
    return 0


def _suite(args):
    if args.workload:
        extra = _extra_workloads(args)
        try:
            return [resolve(w, extra) for w in args.workload]
        except KeyError as exc:
            raise SystemExit(f"error: {exc.args[0]}")
    return builtin_suite()


def cmd_sweep_ports(args) -> int:
    base = _base_config(args)
    rows = sweep(base, ("mem_ports", PORT_COUNTS), _suite(args), jobs=args.jobs, cycle_cap=args.cycle_cap)
    files = ports_report(rows)
    _write(Path(args.out_dir or "results"), files, not args.no_svg)
    sys.stdout.write(files["ports.md"])
    return 1 if any(r.error for r in rows) else 0


def cmd_sweep_arb(args) -> int:
    base = _base_config(args)
    if not base.l3.enabled:
        log.warning("L3 disabled in config; enabling it for the arbitration sweep")
        base = with_override(base, "l3_enabled", True)
    if base.memory.num_channels != 4:
        log.warning("arbitration sweep runs at 4 memory ports (config has %d)", base.memory.num_channels)
        base = with_override(base, "mem_ports", 4)
    rows = sweep(base, ("arbitration", [p.value for p in ARB_POLICIES]), _suite(args), jobs=args.jobs,
                 cycle_cap=args.cycle_cap)
    files = arb_report(rows)
    _write(Path(args.out_dir or "results"), files, not args.no_svg)
    sys.stdout.write(files["arb.md"])
    return 1 if any(r.error for r in rows) else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memsim", description="Multiport GPU memory hierarchy simulator")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (defaults when omitted)")
    common.add_argument("--seed", type=int, help="override the config seed (MEMSIM_SEED also works)")
    common.add_argument("--cycle-cap", type=int, default=DEFAULT_CYCLE_CAP)
    common.add_argument("--out-dir", help="directory for output files")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="simulate one workload")
    p.add_argument("--workload", required=True)
    p.add_argument("--trace", help="write a per-request trace CSV here")
    p.set_defaults(func=cmd_run)

    for name, func, text in (("sweep-ports", cmd_sweep_ports, "IPC across 1, 2, 4 and 8 memory ports"),
                             ("sweep-arb", cmd_sweep_arb, "IPC per arbitration policy at 4 ports")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--workload", action="append", help="limit to these workloads (repeatable)")
        p.add_argument("--jobs", type=int, default=1, help="parallel simulations (0: one per CPU)")
        p.add_argument("--no-svg", action="store_true")
        p.set_defaults(func=func)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except MemSimError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
