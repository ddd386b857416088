"""Command-line front end: ``run``, ``sweep``, ``verify-cover`` and ``plot``.

Exit codes: 0 success, 1 usage error, 2 a checked bound failed
(or, for ``verify-cover``, the cover failed verification).
"""

from __future__ import annotations

import argparse
import csv
import html
import json
import logging
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from catlab import harness as hs
from catlab import policies as pol

log = logging.getLogger("catlab")

EXIT_OK, EXIT_USAGE, EXIT_BOUND = 0, 1, 2

# flags that may also come from a --config JSON file, with their defaults
RUN_DEFAULTS = {
    "algo": None,
    "env": "lowerbound",
    "process": "uniform",
    "seed": 0,
    "master_seed": 0,
    "eps": None,
    "g_exponent": 0.75,
    "L": 1.0,
    "f": None,
    "budget_hint": 64,
    "K": 2,
    "theta": None,
    "sigma": 1.0,
    "slab_lo": 0.0,
    "script": None,
    "n_actions": 2,
    "class_size": 16,
    "grid_size": 32,
    "bits_seed": None,
    "out": None,
    "no_timing": False,
}
ENV_KEYS = ("L", "f", "budget_hint", "K", "theta", "sigma", "slab_lo", "script",
            "n_actions", "class_size", "grid_size", "bits_seed", "process")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# argument parsing


def parse_T_list(text: str) -> list[int]:
    """``"100,1000"`` or geometric ``"lo:hi:factor"`` (inclusive of hi when reached)."""
    text = (text or "").strip()
    if not text:
        raise UsageError("--T must not be empty")
    try:
        if ":" in text:
            parts = text.split(":")
            if len(parts) != 3:
                raise UsageError("geometric --T needs lo:hi:factor")
            lo, hi, factor = int(parts[0]), int(parts[1]), float(parts[2])
            if lo < 1 or hi < lo or factor <= 1:
                raise UsageError("geometric --T needs 1 <= lo <= hi and factor > 1")
            out, t = [], float(lo)
            while round(t) <= hi:
                out.append(int(round(t)))
                t *= factor
            return out
        out = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise UsageError(f"cannot parse --T {text!r}") from None
    if not out:
        raise UsageError("--T must not be empty")
    if any(t < 1 for t in out):
        raise UsageError("every T must be >= 1")
    return out


def _add_run_flags(p: argparse.ArgumentParser, sweep: bool) -> None:
    p.add_argument("--config", help="JSON file of flag values; flags given on the command line win")
    p.add_argument("--algo", help=f"one of {', '.join(hs.ALGOS)}")
    p.add_argument("--env", choices=hs.ENV_KINDS)
    p.add_argument("--process", choices=hs.PROCESS_KINDS)
    p.add_argument("--T", required=False, help="horizon" if not sweep else "comma list or lo:hi:factor")
    if sweep:
        p.add_argument("--seeds", type=int)
    else:
        p.add_argument("--seed", type=int)
    p.add_argument("--master-seed", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--g-exponent", type=float)
    p.add_argument("--L", type=float)
    p.add_argument("--f", type=int)
    p.add_argument("--budget-hint", type=int, help="Q in f = ceil(sqrt(Q T)) for lowerbound/nolg")
    p.add_argument("--K", type=int)
    p.add_argument("--theta", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--slab-lo", type=float)
    p.add_argument("--script", help="file of inputs (JSON list or whitespace-separated)")
    p.add_argument("--n-actions", type=int)
    p.add_argument("--class-size", type=int)
    p.add_argument("--grid-size", type=int)
    p.add_argument("--bits-seed", type=int)
    p.add_argument("--out", help="CSV path (run) or output directory (sweep)")
    p.add_argument("--no-timing", action="store_true", default=None,
                   help="write wall_ms=0 so output is byte-reproducible")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="catlab", description="Simulate mentor-assisted learners and check their guarantees.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    _add_run_flags(sub.add_parser("run", help="one (algo, env, T, seed) run"), sweep=False)
    _add_run_flags(sub.add_parser("sweep", help="runs over a T grid and seeds, with aggregates"), sweep=True)

    vc = sub.add_parser("verify-cover", help="build and verify a smooth epsilon-cover")
    vc.add_argument("--class", dest="cls", required=True, help="thresholds, intervals or ksegments")
    vc.add_argument("--eps", type=float, required=True)
    vc.add_argument("--K", type=int, default=2)
    vc.add_argument("--probes", type=int, default=1000, help="random probes on top of the deterministic grid")
    vc.add_argument("--seed", type=int, default=0)

    pl = sub.add_parser("plot", help="SVG chart plus a gnuplot .dat twin from a CSV")
    pl.add_argument("csv")
    pl.add_argument("--x", default="T")
    pl.add_argument("--y", default="regret_add", help="column name(s), comma separated")
    pl.add_argument("--scale", choices=("linear", "loglog"), default="loglog")
    pl.add_argument("--overlay", choices=sorted(OVERLAYS), help="analytic curve drawn from its closed form")
    pl.add_argument("--param", action="append", default=[], metavar="NAME=VALUE",
                    help="overlay parameter, repeatable")
    pl.add_argument("--out", help="SVG path (default: <out dir>/plot.svg)")
    return p


def _merge(args: argparse.Namespace, sweep: bool) -> dict:
    values = dict(RUN_DEFAULTS)
    values["T"] = None
    if sweep:
        values.pop("seed")
        values["seeds"] = 1
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
        for k, v in data.items():
            key = k.replace("-", "_")
            if key not in values:
                raise UsageError(f"unknown config key {k!r}; valid keys: {', '.join(sorted(values))}")
            values[key] = v
    for k in values:
        v = getattr(args, k, None)
        if v is not None:
            values[k] = v
    if values["algo"] is None:
        raise UsageError(f"--algo is required; one of {', '.join(hs.ALGOS)}")
    return values


def _config_from(values: dict, T_list: list[int], seeds: int) -> hs.ExperimentConfig:
    env_fields = {k: values[k] for k in ENV_KEYS}
    try:
        env = hs.EnvSpec(kind=values["env"], **env_fields)
        return hs.ExperimentConfig(
            algo=values["algo"], env=env, T=tuple(T_list), seeds=seeds,
            master_seed=int(values["master_seed"]), eps=values["eps"],
            g_exponent=float(values["g_exponent"]), out=values["out"],
            record_timing=not values["no_timing"],
        )
    except hs.ConfigError as exc:
        raise UsageError(str(exc)) from None


def _validate_eps(config: hs.ExperimentConfig) -> None:
    if config.eps is None:
        return
    if config.eps <= 0:
        raise UsageError("eps must be positive")
    for T in config.T:
        if config.eps * T < 1.0 - 1e-12:
            raise UsageError(f"eps below 1/T: eps={config.eps:g} < 1/T={1.0 / T:g} for T={T}")


# ---------------------------------------------------------------------------
# commands


def cmd_run(args) -> int:
    values = _merge(args, sweep=False)
    if values["T"] is None:
        raise UsageError("--T is required")
    try:
        T = int(values["T"])
    except (TypeError, ValueError):
        raise UsageError(f"--T must be a single integer for run; got {values['T']!r}") from None
    if T < 1:
        raise UsageError("T must be >= 1")
    config = _config_from(values, [T], 1)
    _validate_eps(config)
    try:
        rec = hs.run_once(config, T, int(values["seed"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(values["out"]) if values["out"] else hs.default_out_dir() / "runs.csv"
    try:
        hs.append_runs(out, [rec])
    except hs.ConfigError as exc:
        raise UsageError(str(exc)) from None
    status = "ok" if rec.bounds_ok else "BOUND FAILURE"
    failed = [name for name, ok in rec.bound_checks if not ok]
    print(
        f"{rec.run_id}: regret_add={rec.regret_add:.6g} regret_mul={rec.regret_mul} "
        f"queries={rec.queries} diam={rec.diam_s:.4g} checks={len(rec.bound_checks)} {status}"
        + (f" ({', '.join(failed) or rec.failure})" if not rec.bounds_ok else "")
        + f" -> {out}"
    )
    return EXIT_OK if rec.bounds_ok else EXIT_BOUND


def cmd_sweep(args) -> int:
    values = _merge(args, sweep=True)
    if values["T"] is None:
        raise UsageError("--T is required")
    T_list = parse_T_list(str(values["T"]))
    seeds = int(values["seeds"])
    if seeds < 1:
        raise UsageError("--seeds must be >= 1")
    config = _config_from(values, T_list, seeds)
    _validate_eps(config)
    try:
        result = hs.sweep(config)
    except hs.ConfigError as exc:
        raise UsageError(str(exc)) from None
    out_dir = Path(values["out"]) if values["out"] else hs.default_out_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "runs.csv").write_text(hs.runs_csv(result.records))
    (out_dir / "aggregates.csv").write_text(hs.aggregates_csv(result.aggregates))
    for a in result.aggregates:
        print(f"T={a.T}: mean_regret_add={a.mean_regret_add:.6g}±{a.stderr_regret_add:.3g} "
              f"mean_queries={a.mean_queries:.6g}±{a.stderr_queries:.3g} (n={a.n_seeds})")
    for line in result.verdicts.lines():
        print(line)
    failures = [r for r in result.records if not r.bounds_ok]
    print(f"{len(result.records)} runs, {len(failures)} with failed checks -> {out_dir}")
    return EXIT_OK if not failures else EXIT_BOUND


def cmd_verify_cover(args) -> int:
    if not (args.eps > 0 and args.eps <= 1):
        raise UsageError(f"--eps must lie in (0, 1]; got {args.eps}")
    factories = {
        "thresholds": pol.PolicyClass.thresholds,
        "intervals": pol.PolicyClass.intervals,
        "ksegments": lambda: pol.PolicyClass.ksegments(args.K),
    }
    if args.cls not in factories:
        raise UsageError(f"unsupported class {args.cls!r}; choose from {', '.join(factories)}")
    cls = factories[args.cls]()
    cover = pol.build_smooth_cover(cls, args.eps)
    probes = pol.probe_policies(cls, args.eps, args.probes, np.random.default_rng(args.seed))
    report = pol.verify_smooth_cover(cover, probes)
    print(f"class={args.cls} size={report.size} ceiling={report.ceiling:.6g} "
          f"max_min_disagreement={report.max_min_disagreement:.6g} "
          f"{'pass' if report.passed and report.within_ceiling else 'FAIL'}")
    return EXIT_OK if report.passed and report.within_ceiling else EXIT_BOUND


# ---------------------------------------------------------------------------
# plotting


def _g(T, p):
    return np.ceil(np.asarray(T, dtype=float) ** p.get("exponent", 0.75))


OVERLAYS = {
    # DBWRQ regret ceiling
    "2LKT/g^2": lambda T, p: 2 * p.get("L", 1.0) * p.get("K", 2) * T / _g(T, p) ** 2,
    # DBWRQ query ceiling
    "(diam+4)T^0.75": lambda T, p: (p.get("diam", 1.0) + 4) * _g(T, p),
    # expected regret of random guessing on the lower-bound construction
    "LT/(8f)": lambda T, p: p.get("L", 1.0) * T / (8 * np.ceil(np.sqrt(p.get("Q", 64) * T))),
    "power": lambda T, p: p.get("c", 1.0) * np.asarray(T, dtype=float) ** p.get("a", 0.5),
}


@dataclass
class PlotSpec:
    csv_path: Path
    x: str
    ys: list
    scale: str = "loglog"
    overlay: Optional[str] = None
    params: dict = None
    out: Optional[Path] = None


def _parse_params(items: Sequence[str]) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"--param expects NAME=VALUE; got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = float(v)
        except ValueError:
            raise UsageError(f"--param {k} needs a number; got {v!r}") from None
    return out


def load_series(spec: PlotSpec) -> tuple[dict, list]:
    """Mean y per x for each (algo, y column) series, sorted by x."""
    if not spec.csv_path.exists():
        raise UsageError(f"no such CSV: {spec.csv_path}")
    with spec.csv_path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        rows = list(reader)
    missing = [c for c in [spec.x, *spec.ys] if c not in header]
    if missing:
        raise UsageError(f"missing column(s) {', '.join(missing)}; columns found: {', '.join(header)}")
    series: dict = {}
    for row in rows:
        group = row.get("algo", "data")
        try:
            x = float(row[spec.x])
        except ValueError:
            continue
        for y in spec.ys:
            try:
                val = float(row[y])
            except ValueError:
                continue
            if not math.isfinite(val):
                continue
            series.setdefault(f"{group}:{y}" if len(spec.ys) > 1 else group, {}).setdefault(x, []).append(val)
    out = {name: sorted((x, float(np.mean(v))) for x, v in pts.items()) for name, pts in series.items()}
    return out, header


PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]


def render_svg(series: dict, spec: PlotSpec, width: int = 640, height: int = 420) -> str:
    loglog = spec.scale == "loglog"
    pts_all = [p for s in series.values() for p in s]
    if loglog:
        pts_all = [p for p in pts_all if p[0] > 0 and p[1] > 0]
    if not pts_all:
        raise UsageError("nothing to plot: no numeric points in the selected columns")

    def tr(v):
        return math.log10(v) if loglog else v

    xs = [tr(p[0]) for p in pts_all]
    ys = [tr(p[1]) for p in pts_all]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1
    pad_y = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad_y, y1 + pad_y
    left, right, top, bottom = 70, 20, 20, 50
    W, H = width - left - right, height - top - bottom

    def sx(v):
        return left + (tr(v) - x0) / (x1 - x0) * W

    def sy(v):
        return top + H - (tr(v) - y0) / (y1 - y0) * H

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{top + H}" x2="{left + W}" y2="{top + H}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + H}" stroke="black"/>',
    ]
    for i in range(6):
        fx = x0 + (x1 - x0) * i / 5
        fy = y0 + (y1 - y0) * i / 5
        lx = 10 ** fx if loglog else fx
        ly = 10 ** fy if loglog else fy
        px = left + W * i / 5
        py = top + H - H * i / 5
        parts.append(f'<line x1="{px:.1f}" y1="{top + H}" x2="{px:.1f}" y2="{top + H + 4}" stroke="black"/>')
        parts.append(f'<text x="{px:.1f}" y="{top + H + 16}" text-anchor="middle">{lx:.3g}</text>')
        parts.append(f'<line x1="{left - 4}" y1="{py:.1f}" x2="{left}" y2="{py:.1f}" stroke="black"/>')
        parts.append(f'<text x="{left - 6}" y="{py + 4:.1f}" text-anchor="end">{ly:.3g}</text>')
    parts.append(f'<text x="{left + W / 2}" y="{height - 10}" text-anchor="middle">{html.escape(spec.x)}</text>')
    parts.append(f'<text x="14" y="{top + H / 2}" transform="rotate(-90 14 {top + H / 2})" '
                 f'text-anchor="middle">{html.escape(", ".join(spec.ys))}</text>')
    for k, (name, pts) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        dashed = name.startswith("overlay:")
        pts = [p for p in pts if not loglog or (p[0] > 0 and p[1] > 0)]
        poly = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        dash = ' stroke-dasharray="6,4"' if dashed else ""
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{poly}"/>')
        if not dashed:
            for x, y in pts:
                parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="2.5" fill="{color}"/>')
        parts.append(f'<text x="{left + 10}" y="{top + 14 + 14 * k}" fill="{color}">{html.escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_dat(series: dict) -> str:
    lines = []
    for name, pts in series.items():
        lines.append(f"# {name}")
        lines.extend(f"{x!r} {y!r}" for x, y in pts)
        lines.append("")
        lines.append("")
    return "\n".join(lines)


def cmd_plot(args) -> int:
    spec = PlotSpec(
        csv_path=Path(args.csv), x=args.x, ys=[c.strip() for c in args.y.split(",") if c.strip()],
        scale=args.scale, overlay=args.overlay, params=_parse_params(args.param),
        out=Path(args.out) if args.out else hs.default_out_dir() / "plot.svg",
    )
    if not spec.ys:
        raise UsageError("--y needs at least one column")
    series, _ = load_series(spec)
    if spec.overlay:
        xs = sorted({x for pts in series.values() for x, _ in pts})
        ys = OVERLAYS[spec.overlay](np.asarray(xs), spec.params)
        series[f"overlay:{spec.overlay}"] = [(x, float(y)) for x, y in zip(xs, np.atleast_1d(ys))]
    svg = render_svg(series, spec)
    spec.out.parent.mkdir(parents=True, exist_ok=True)
    spec.out.write_text(svg)
    dat = spec.out.with_suffix(".dat")
    dat.write_text(render_dat(series))
    print(f"wrote {spec.out} and {dat} ({len(series)} series)")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "verify-cover": cmd_verify_cover, "plot": cmd_plot}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError(parser.format_usage().strip())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
