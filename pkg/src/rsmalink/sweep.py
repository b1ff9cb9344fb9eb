"""Monte-Carlo sweeps over SNR: Shannon sum-rates, coded throughput and DoF slopes.

Every block index ``b`` fixes the CSIT estimate, the error directions, the
payload bits and the receiver noise through counter-based streams keyed
by ``(seed, b, ...)``. The same blocks are therefore reused at every SNR
and for every strategy, and the result does not depend on how blocks are
spread over worker processes.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .csit import CsitConfig, conditional_stack, draw_block
from .model import averaged_rates_fast
from .optimizer import (
    OptimizationResult,
    OptimizerSettings,
    StrategyTag,
    dof_slope,
    optimize_all,
    predicted_dof,
    superposition_form,
)
from .phy.amc import DEFAULT_BACKOFF, link_adapt, load_table
from .phy.link import StreamPlan, TrialRecord, predicted_goodput, run_trial

log = logging.getLogger(__name__)

MODES = ("shannon", "lls", "dof")
STRATEGIES = tuple(t.value for t in StrategyTag)
CSV_HEADER = (
    "strategy", "snr_db", "alpha", "r0", "mode", "trials", "sum_rate", "throughput",
    "ci95", "seed", "fingerprint", "sum_rate_ci95", "infeasible",
)
# fresh conditional samples for evaluation start far from the optimiser's
EVAL_OFFSET = 10_000
DOF_MIN_SNR_DB = 20.0
DOF_MIN_SPAN_DB = 15.0


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: strategies, SNR grid and channel model.

    ``out``, ``audit`` and ``jobs`` only affect where and how the run is
    executed and are left out of :meth:`fingerprint`.
    """

    strategies: tuple[str, ...] = STRATEGIES
    snr_db: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0)
    alpha: float = 0.6
    num_users: int = 2
    num_tx_antennas: int = 2
    r0: float = 0.0
    trials: int = 200
    seed: int = 1
    mode: str = "lls"
    perfect_csit: bool = False
    conditional_samples: int = 64
    eval_samples: int = 256
    restarts: int = 3
    backoff: float = DEFAULT_BACKOFF
    amc_table: str = ""
    out: str = ""
    audit: str = ""
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.strategies:
            raise ConfigError("at least one strategy is required")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ConfigError(f"unknown strategy {s!r}; choose from {STRATEGIES}")
        if len(set(self.strategies)) != len(self.strategies):
            raise ConfigError("strategies must not repeat")
        if not self.snr_db:
            raise ConfigError("SNR grid is empty")
        if any(b <= a for a, b in zip(self.snr_db, self.snr_db[1:])):
            raise ConfigError("SNR grid must be strictly increasing")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.alpha > 0 and min(self.snr_db) < 0 and not self.perfect_csit:
            raise ConfigError("negative SNR with alpha > 0 gives an error variance above 1")
        if self.num_users < 1 or self.num_tx_antennas < 1:
            raise ConfigError("need at least one user and one antenna")
        if "noma" in self.strategies and self.num_users != 2:
            raise ConfigError("NOMA is supported for K=2 only")
        if self.r0 < 0:
            raise ConfigError("r0 must be nonnegative")
        if not 0 <= self.seed < 2**63:
            raise ConfigError("seed must be a nonnegative 63-bit integer")
        if self.conditional_samples < 1 or self.eval_samples < 1 or self.restarts < 1:
            raise ConfigError("sample and restart counts must be positive")
        if not 0 < self.backoff <= 1:
            raise ConfigError("backoff must lie in (0, 1]")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")

    def fingerprint(self) -> str:
        d = dataclasses.asdict(self)
        for k in ("out", "audit", "jobs"):
            d.pop(k)
        text = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_overrides(self, overrides: dict[str, str]) -> "ExperimentConfig":
        return dataclasses.replace(self, **_coerce(overrides))

    def to_text(self) -> str:
        """Key/value text that :func:`load_config` reads back to an equal config."""
        lines = ["[experiment]"]
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v!r}" if isinstance(v, float) else f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_INT_KEYS = {"num_users", "num_tx_antennas", "trials", "seed", "conditional_samples",
             "eval_samples", "restarts", "jobs"}
_FLOAT_KEYS = {"alpha", "r0", "backoff"}
_BOOL_KEYS = {"perfect_csit"}


def _parse_grid(text: str) -> tuple[float, ...]:
    text = text.strip()
    if ":" in text:
        # start:stop:step with stop included
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ConfigError(f"grid range must be start:stop:step, got {text!r}")
        start, stop, step = parts
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return tuple(float(start + i * step) for i in range(n))
    return tuple(float(x) for x in text.split(",") if x.strip())


def _coerce(raw: dict[str, str]) -> dict:
    out = {}
    for key, value in raw.items():
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        value = str(value).strip()
        try:
            if key in _INT_KEYS:
                out[key] = int(value, 0)
            elif key in _FLOAT_KEYS:
                out[key] = float(value)
            elif key in _BOOL_KEYS:
                low = value.lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                out[key] = low in ("true", "1", "yes")
            elif key == "snr_db":
                out[key] = _parse_grid(value)
            elif key == "strategies":
                out[key] = tuple(s.strip().lower() for s in value.split(",") if s.strip())
            else:
                out[key] = value
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return out


def parse_config(text: str) -> ExperimentConfig:
    """Read ``key = value`` lines; a section header is optional."""
    parser = configparser.ConfigParser(interpolation=None)
    if not re.search(r"^\s*\[", text, flags=re.MULTILINE):
        text = "[experiment]\n" + text
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    raw: dict[str, str] = {}
    for section in parser.sections():
        raw.update(parser[section])
    return ExperimentConfig(**_coerce(raw))


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


@dataclass
class PointResult:
    """Aggregates of one (strategy, SNR) cell."""

    strategy: str
    snr_db: float
    trials: int
    sum_rate: float
    sum_rate_ci95: float
    throughput: float
    throughput_ci95: float
    infeasible: int
    bits: int = 0
    uses: int = 0


@dataclass
class SweepResult:
    config: ExperimentConfig
    points: list[PointResult]
    records: list[dict] = field(default_factory=list)

    @property
    def fingerprint(self) -> str:
        return self.config.fingerprint()

    def point(self, strategy: str, snr_db: float) -> PointResult:
        for p in self.points:
            if p.strategy == strategy and p.snr_db == snr_db:
                return p
        raise KeyError((strategy, snr_db))

    def series(self, strategy: str, metric: str = "throughput") -> list[tuple[float, float]]:
        return [(p.snr_db, getattr(p, metric)) for p in self.points if p.strategy == strategy]

    def rows(self) -> list[dict]:
        cfg = self.config
        rows = []
        for p in self.points:
            headline = p.throughput_ci95 if cfg.mode == "lls" else p.sum_rate_ci95
            rows.append({
                "strategy": p.strategy, "snr_db": p.snr_db, "alpha": cfg.alpha,
                "r0": cfg.r0, "mode": cfg.mode, "trials": p.trials,
                "sum_rate": p.sum_rate,
                "throughput": p.throughput if cfg.mode == "lls" else float("nan"),
                "ci95": headline, "seed": cfg.seed, "fingerprint": self.fingerprint,
                "sum_rate_ci95": p.sum_rate_ci95, "infeasible": p.infeasible,
            })
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in self.rows():
            w.writerow([_fmt(row[c]) for c in CSV_HEADER])
        return buf.getvalue()

    def audit_lines(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_csv(path: str | Path) -> list[dict]:
    """Rows of a result file with numeric fields converted."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            for key in ("snr_db", "alpha", "r0", "sum_rate", "throughput", "ci95", "sum_rate_ci95"):
                if key in row:
                    row[key] = float(row[key])
            for key in ("trials", "seed", "infeasible"):
                if key in row:
                    row[key] = int(row[key])
            rows.append(row)
    return rows


def half_width(values: Sequence[float]) -> float:
    """95% normal-approximation half-width of the sample mean (0 for one value)."""
    x = np.asarray(values, dtype=float)
    if x.size < 2:
        return 0.0
    return float(1.96 * np.std(x, ddof=1) / math.sqrt(x.size))


def evaluate_sum_rate(result: OptimizationResult, stack: np.ndarray, sigma2: np.ndarray) -> float:
    """Averaged sum-rate of an optimised strategy over the channel samples in ``stack``."""
    pre = result.precoders
    if result.strategy.tag is StrategyTag.NOMA:
        pre = superposition_form(pre, result.strategy.decoding_order)
    rc, rp = averaged_rates_fast(stack, sigma2, pre.common, pre.privates)
    return float(np.min(rc) + np.sum(rp))


def stream_plan(result: OptimizationResult, table, backoff: float):
    """Layered precoders and per-stream MCS from the optimiser's averaged rates."""
    rep = result.report
    tag = result.strategy.tag
    k = result.precoders.num_users
    if tag is StrategyTag.NOMA:
        weak = result.strategy.decoding_order[0]
        pre = superposition_form(result.precoders, result.strategy.decoding_order)
        privates = tuple(
            None if i == weak else link_adapt(rep.rate_private[i], table, backoff) for i in range(k)
        )
        plan = StreamPlan(
            link_adapt(rep.rate_common, table, backoff), privates,
            tuple(float(x) for x in pre.common_split),
            private_slots=tuple(i != weak for i in range(k)),
        )
        return pre, plan
    pre = result.precoders
    privates = tuple(link_adapt(r, table, backoff) for r in rep.rate_private)
    if tag is StrategyTag.SDMA:
        return pre, StreamPlan(None, privates, (0.0,) * k, common_slot=False)
    common = link_adapt(rep.rate_common, table, backoff)
    return pre, StreamPlan(common, privates, tuple(float(x) for x in pre.common_split))


def rsma_link_choice(results: dict, table, backoff: float, stack, noise_vars):
    """Pick the RSMA transmission with the best predicted goodput.

    The 1-layer RSMA transmitter can send its own optimised precoders or
    either special case: the SDMA solution (silent common stream) or the
    NOMA solution in layered form (weak user's message in the common
    stream). Only solutions that met the QoS floor compete, and the
    prediction uses CSIT samples only. Ties keep the earlier form in the
    order rsma, sdma, noma.
    """
    k = results["rsma"].precoders.num_users
    forms = [("rsma", *stream_plan(results["rsma"], table, backoff))]
    sdma = results.get("sdma")
    if sdma is not None and sdma.feasible:
        _, plan = stream_plan(sdma, table, backoff)
        forms.append(("sdma", sdma.precoders, StreamPlan(None, plan.privates, (0.0,) * k)))
    noma = results.get("noma")
    if noma is not None and noma.feasible:
        pre, plan = stream_plan(noma, table, backoff)
        forms.append(("noma", pre, StreamPlan(plan.common, plan.privates, plan.common_split)))
    best = None
    for form, pre, plan in forms:
        g = predicted_goodput(pre, plan, stack, noise_vars)
        if best is None or g > best[0]:
            best = (g, form, pre, plan)
    return best[1], best[2], best[3]


def csit_config(cfg: ExperimentConfig, snr_db: float) -> CsitConfig:
    return CsitConfig(
        cfg.num_tx_antennas, cfg.num_users, cfg.alpha, 10.0 ** (snr_db / 10.0), cfg.seed,
        cfg.conditional_samples, cfg.perfect_csit,
    )


def run_block(cfg: ExperimentConfig, snr_db: float, block: int, table=None) -> list[dict]:
    """Optimise and evaluate every strategy on one block at one SNR.

    Returns one audit record per strategy holding the evaluated sum-rate
    and, in ``lls`` mode, the coded trial outcome.
    """
    csit = csit_config(cfg, snr_db)
    ch = draw_block(csit, block)
    settings = OptimizerSettings(
        qos_floor=cfg.r0, conditional_samples=cfg.conditional_samples, restarts=cfg.restarts
    )
    wanted = list(cfg.strategies)
    if cfg.mode == "lls" and "rsma" in wanted and cfg.num_users == 2:
        wanted += [t for t in ("sdma", "noma") if t not in wanted]
    results = optimize_all(ch, settings, csit.power_budget, strategies=wanted)
    fresh = conditional_stack(ch, cfg.eval_samples, offset=EVAL_OFFSET)
    out = []
    for name in cfg.strategies:
        res = results[name]
        rec = {
            "strategy": name, "snr_db": snr_db, "block": block, "seed": cfg.seed,
            "sum_rate": evaluate_sum_rate(res, fresh, ch.noise_vars),
            "feasible": bool(res.feasible),
        }
        if cfg.mode == "lls":
            if name == "rsma":
                stack = conditional_stack(ch, cfg.conditional_samples, offset=1)
                form, pre, plan = rsma_link_choice(
                    results, table, cfg.backoff, stack, ch.noise_vars
                )
                rec["form"] = form
            else:
                pre, plan = stream_plan(res, table, cfg.backoff)
            trial = run_trial(ch, pre, plan, cfg.seed, block)
            rec.update(_trial_fields(trial))
        out.append(rec)
    return out


def _trial_fields(trial: TrialRecord) -> dict:
    d = {
        "S": int(trial.channel_uses),
        "D": [int(v) for v in trial.recovered_bits],
        "addressed": [int(v) for v in trial.addressed_bits],
        "mcs": trial.mcs,
    }
    d.update(trial.flags())
    return d


def _run_chunk(args) -> list[dict]:
    cfg, snr_db, blocks = args
    table = load_table(cfg.amc_table or None) if cfg.mode == "lls" else None
    recs = []
    for b in blocks:
        recs.extend(run_block(cfg, snr_db, b, table))
    return recs


def _chunks(cfg: ExperimentConfig, size: int) -> list[tuple]:
    return [
        (cfg, snr, tuple(range(lo, min(lo + size, cfg.trials))))
        for snr in cfg.snr_db
        for lo in range(0, cfg.trials, size)
    ]


def default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("RSMALINK_JOBS", "1")))
    except ValueError:
        return 1


def aggregate(cfg: ExperimentConfig, records: Iterable[dict]) -> list[PointResult]:
    """Per-(strategy, SNR) means, half-widths and bit accounting.

    Records are sorted by (SNR, block) before summation so the result is
    independent of the order in which workers returned them.
    """
    by_cell: dict[tuple[str, float], list[dict]] = {}
    for r in records:
        by_cell.setdefault((r["strategy"], r["snr_db"]), []).append(r)
    points = []
    for name in cfg.strategies:
        for snr in cfg.snr_db:
            cell = sorted(by_cell.get((name, snr), []), key=lambda r: r["block"])
            rates = [r["sum_rate"] for r in cell]
            infeasible = sum(not r["feasible"] for r in cell)
            bits = uses = 0
            tput = float("nan")
            tput_hw = 0.0
            if cfg.mode == "lls" and cell:
                bits = sum(sum(r["D"]) for r in cell)
                uses = sum(r["S"] for r in cell)
                tput = bits / uses
                tput_hw = half_width([sum(r["D"]) / r["S"] for r in cell])
            points.append(PointResult(
                name, snr, len(cell), float(np.mean(rates)) if rates else float("nan"),
                half_width(rates), tput, tput_hw, infeasible, bits, uses,
            ))
    return points


def run_sweep(config: ExperimentConfig, jobs: int | None = None) -> SweepResult:
    """Run every (SNR, block) of ``config`` and aggregate per strategy and SNR."""
    jobs = config.jobs if jobs is None else jobs
    chunk = max(1, min(25, math.ceil(config.trials / max(1, jobs))))
    tasks = _chunks(config, chunk)
    records: list[dict] = []
    if jobs <= 1:
        for i, t in enumerate(tasks):
            records.extend(_run_chunk(t))
            log.info("chunk %d/%d done (snr %.1f dB)", i + 1, len(tasks), t[1])
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for recs in pool.map(_run_chunk, tasks):
                records.extend(recs)
    records.sort(key=lambda r: (r["snr_db"], r["block"], config.strategies.index(r["strategy"])))
    return SweepResult(config, aggregate(config, records), records)


def write_outputs(result: SweepResult, out: str | Path, audit: str | Path | None = None) -> Path:
    """Write the CSV and (by default next to it) the NDJSON audit log."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(result.to_csv())
    audit = Path(audit) if audit else out.with_suffix(".audit.ndjson")
    audit.write_text(result.audit_lines())
    return audit


def read_audit(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def recompute_throughput(records: Iterable[dict]) -> dict[tuple[str, float], float]:
    """Total recovered bits over total channel uses per (strategy, SNR)."""
    bits: dict[tuple[str, float], int] = {}
    uses: dict[tuple[str, float], int] = {}
    for r in records:
        key = (r["strategy"], r["snr_db"])
        bits[key] = bits.get(key, 0) + sum(r["D"])
        uses[key] = uses.get(key, 0) + r["S"]
    return {k: bits[k] / uses[k] for k in bits}


def estimate_dof(config: ExperimentConfig, result: SweepResult | None = None, jobs=None) -> dict:
    """High-SNR sum-rate slopes per strategy next to their predicted values.

    Runs a Shannon sweep unless ``result`` is supplied.
    """
    grid = config.snr_db
    if len(grid) < 2:
        raise ConfigError("DoF estimation needs at least two SNR points")
    if min(grid) < DOF_MIN_SNR_DB or max(grid) - min(grid) < DOF_MIN_SPAN_DB:
        raise ConfigError(
            f"DoF grid must start at >= {DOF_MIN_SNR_DB} dB and span >= {DOF_MIN_SPAN_DB} dB"
        )
    if result is None:
        result = run_sweep(dataclasses.replace(config, mode="dof"), jobs)
    predicted = predicted_dof(config.num_users, config.alpha)
    out = {}
    for name in config.strategies:
        slope = dof_slope(result.series(name, "sum_rate"))
        out[name] = {"slope": slope, "predicted": predicted.get(name)}
    return out
