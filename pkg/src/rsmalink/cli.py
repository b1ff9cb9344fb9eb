"""Command-line entry point.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .csit import draw_block
from .optimizer import OptimizerSettings, optimize_all
from .sweep import (
    ConfigError,
    ExperimentConfig,
    csit_config,
    estimate_dof,
    load_config,
    read_csv,
    run_sweep,
    write_outputs,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
JOBS_ENV = "RSMALINK_JOBS"

log = logging.getLogger("rsmalink")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value experiment file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--out", help="output path")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--jobs", type=int, help=f"worker processes (default ${JOBS_ENV} or 1)")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rsmalink", description="Rate-splitting link-level simulator")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sweep", help="SNR sweep to a CSV result file")
    _common(p)
    p = sub.add_parser("dof", help="high-SNR slope estimation")
    _common(p)
    p = sub.add_parser("optimize", help="optimise precoders for one block and print rates")
    _common(p)
    p.add_argument("--snr-db", type=float, help="SNR of the block (default: first grid point)")
    p.add_argument("--block", type=int, default=0)
    p = sub.add_parser("codec-selftest", help="run codec conformance fixtures")
    p.add_argument("--fixtures", help="fixture file (default: bundled)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p = sub.add_parser("emit-plot", help="per-strategy series files and a plotting script")
    p.add_argument("input", help="result CSV from `sweep`")
    p.add_argument("--out", default="plot", help="output directory")
    p.add_argument("--metric", choices=("throughput", "sum_rate"), default=None)
    p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _parse_overrides(items) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        key, value = item.split("=", 1)
        out[key.strip()] = value
    return out


def resolve_config(args) -> ExperimentConfig:
    """File values, then ``--set`` overrides, then the dedicated flags."""
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = cfg.with_overrides(_parse_overrides(args.set))
    direct = {}
    if args.seed is not None:
        direct["seed"] = args.seed
    if args.out is not None:
        direct["out"] = args.out
    if args.jobs is not None:
        direct["jobs"] = args.jobs
    elif os.environ.get(JOBS_ENV):
        try:
            direct["jobs"] = int(os.environ[JOBS_ENV])
        except ValueError as exc:
            raise ConfigError(f"{JOBS_ENV} must be an integer") from exc
    try:
        return dataclasses.replace(cfg, **direct)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    result = run_sweep(cfg)
    out = cfg.out or "results.csv"
    audit = write_outputs(result, out, cfg.audit or None)
    print(f"wrote {out} ({len(result.points)} rows) and {audit}")
    return EXIT_OK


def _cmd_dof(args) -> int:
    cfg = dataclasses.replace(resolve_config(args), mode="dof")
    result = run_sweep(cfg)
    slopes = estimate_dof(cfg, result)
    out = Path(cfg.out or "dof.csv")
    write_outputs(result, out, cfg.audit or None)
    out.with_suffix(".json").write_text(json.dumps(slopes, indent=1, sort_keys=True) + "\n")
    for name, s in slopes.items():
        pred = "n/a" if s["predicted"] is None else f"{s['predicted']:.3f}"
        print(f"{name}: slope {s['slope']:.3f} predicted {pred}")
    return EXIT_OK


def _cmd_optimize(args) -> int:
    cfg = resolve_config(args)
    snr = cfg.snr_db[0] if args.snr_db is None else args.snr_db
    csit = csit_config(cfg, snr)
    ch = draw_block(csit, args.block)
    settings = OptimizerSettings(
        qos_floor=cfg.r0, conditional_samples=cfg.conditional_samples, restarts=cfg.restarts
    )
    results = optimize_all(ch, settings, csit.power_budget, strategies=cfg.strategies)
    doc = {"snr_db": snr, "block": args.block, "seed": cfg.seed, "strategies": {}}
    for name, res in results.items():
        rep = res.report
        doc["strategies"][name] = {
            "sum_rate": rep.sum_rate, "feasible": res.feasible,
            "rate_common": rep.rate_common,
            "common_portions": np.asarray(rep.common_portions).tolist(),
            "rate_private": np.asarray(rep.rate_private).tolist(),
            "rate_total": np.asarray(rep.rate_total).tolist(),
            "common_power": float(np.vdot(res.precoders.common, res.precoders.common).real),
        }
    text = json.dumps(doc, indent=1)
    if cfg.out:
        Path(cfg.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def _cmd_selftest(args) -> int:
    from .phy.selftest import run_selftest

    results = run_selftest(args.fixtures)
    failed = 0
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed += not ok
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_RUNTIME


_PLOT_SCRIPT = '''"""Render the series files in this directory (needs matplotlib)."""
import glob
import os

import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
fig, ax = plt.subplots()
for path in sorted(glob.glob(os.path.join(here, "*.dat"))):
    name = os.path.splitext(os.path.basename(path))[0]
    rows = [line.split() for line in open(path) if not line.startswith("#")]
    x = [float(r[0]) for r in rows]
    y = [float(r[1]) for r in rows]
    e = [float(r[2]) for r in rows]
    ax.errorbar(x, y, yerr=e, marker="o", capsize=3, label=name.upper())
ax.set_xlabel("SNR [dB]")
ax.set_ylabel("{ylabel}")
ax.set_title("{title}")
ax.grid(True)
ax.legend()
fig.savefig(os.path.join(here, "{stem}.png"), dpi=150)
'''


def _cmd_emit_plot(args) -> int:
    try:
        rows = read_csv(args.input)
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read result file {args.input}: {exc}") from exc
    if not rows:
        raise ConfigError(f"{args.input} has no rows")
    mode = rows[0]["mode"]
    metric = args.metric or ("throughput" if mode == "lls" else "sum_rate")
    err_key = "ci95" if metric == "throughput" else "sum_rate_ci95"
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    strategies = list(dict.fromkeys(r["strategy"] for r in rows))
    for s in strategies:
        lines = [f"# snr_db {metric} ci95"]
        for r in sorted((r for r in rows if r["strategy"] == s), key=lambda r: r["snr_db"]):
            lines.append(f"{r['snr_db']!r} {r[metric]!r} {r.get(err_key, 0.0)!r}")
        (out / f"{s}.dat").write_text("\n".join(lines) + "\n")
    r0 = rows[0]
    title = f"alpha={r0['alpha']:g}, R0={r0['r0']:g} bps/Hz"
    ylabel = "Throughput [bps/Hz]" if metric == "throughput" else "Sum-rate [bps/Hz]"
    (out / "plot.py").write_text(_PLOT_SCRIPT.format(ylabel=ylabel, title=title, stem=metric))
    print(f"wrote {len(strategies)} series and plot.py to {out}")
    return EXIT_OK


_COMMANDS = {
    "sweep": _cmd_sweep,
    "dof": _cmd_dof,
    "optimize": _cmd_optimize,
    "codec-selftest": _cmd_selftest,
    "emit-plot": _cmd_emit_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
