"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line; the lines are repeated in the
terminal summary. The coded sweeps on the two figure configurations are
run once per module through the CLI and shared.
"""

from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

import numpy as np
import pytest

from rsmalink.cli import main
from rsmalink.model import ChannelSet, PrecoderSet, rate_report, sdma_rate_report
from rsmalink.optimizer import OptimizerSettings, Strategy, optimize
from rsmalink.phy.amc import load_table
from rsmalink.phy.calibrate import awgn_bler
from rsmalink.phy.link import codewords_per_stream, decode_stream, encode_stream
from rsmalink.phy.polar import CodewordSpec, polar_decode, polar_encode
from rsmalink.sweep import estimate_dof, load_config, read_audit, read_csv, recompute_throughput

pytestmark = pytest.mark.acceptance

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
ORACLE = Path(__file__).parent / "oracles" / "toy_grid.json"
STRATEGIES = ("rsma", "sdma", "noma")


def _table(rows):
    return {(r["strategy"], r["snr_db"]): r for r in rows}


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    """fig2 (jobs 1 and 2) and fig3 through the CLI; paths to the outputs."""
    base = tmp_path_factory.mktemp("figs")
    out = {}
    for name, cfg, jobs in (("fig2", "fig2.cfg", 1), ("fig2_jobs2", "fig2.cfg", 2),
                            ("fig3", "fig3.cfg", 1)):
        csv = base / f"{name}.csv"
        code = main(["sweep", "--config", str(CONFIGS / cfg), "--out", str(csv), "--jobs", str(jobs)])
        assert code == 0
        out[name] = csv
    return out


def test_dof_slopes(record_criterion):
    cfg = load_config(CONFIGS / "dof.cfg")
    assert cfg.trials >= 500 and cfg.snr_db == (25.0, 30.0, 35.0, 40.0, 45.0)
    expected = {0.0: {"sdma": 1.0, "rsma": 1.0}, 0.6: {"sdma": 1.2, "rsma": 1.6},
                1.0: {"sdma": 2.0, "rsma": 2.0}}
    ok = True
    parts = []
    for alpha, pred in expected.items():
        got = estimate_dof(dataclasses.replace(cfg, alpha=alpha))
        for name in ("sdma", "rsma"):
            assert got[name]["predicted"] == pytest.approx(pred[name])
            slope = got[name]["slope"]
            ok &= abs(slope - pred[name]) <= 0.15
            parts.append(f"a={alpha:g} {name} {slope:.3f}/{pred[name]:g}")
    record_criterion(1, "DoF slopes within 0.15", ok, ", ".join(parts))
    assert ok


def test_embrace(runs, record_criterion):
    rows = _table(read_csv(runs["fig2"]))
    grid = sorted({snr for _, snr in rows})
    worst = math.inf
    bad = []
    for snr in grid:
        r = rows[("rsma", snr)]
        assert r["trials"] >= 200
        for other in ("sdma", "noma"):
            o = rows[(other, snr)]
            for metric, hw in (("sum_rate", "sum_rate_ci95"), ("throughput", "ci95")):
                margin = r[metric] - (o[metric] - (r[hw] + o[hw]))
                worst = min(worst, margin)
                if margin < 0:
                    bad.append(f"{metric}@{snr:g}dB vs {other}")
    ok = not bad
    record_criterion(2, "RSMA embraces SDMA and NOMA", ok,
                     f"{len(grid)} points, smallest margin {worst:.3f}" + (f"; {bad}" if bad else ""))
    assert ok


def test_qos_degradation(runs, record_criterion):
    base = _table(read_csv(runs["fig2"]))
    qos = _table(read_csv(runs["fig3"]))
    grid = sorted({snr for _, snr in base})
    problems = []
    sdma_drops = []
    for snr in grid:
        b, q = base[("sdma", snr)], qos[("sdma", snr)]
        hw = b["ci95"] + q["ci95"]
        if q["throughput"] > b["throughput"] + hw:
            problems.append(f"sdma rises at {snr:g} dB")
        if b["throughput"] - q["throughput"] > hw:
            sdma_drops.append(snr)
        for name in ("rsma", "noma"):
            b, q = base[(name, snr)], qos[(name, snr)]
            diff = abs(q["throughput"] - b["throughput"])
            limit = 2.0 * (b["ci95"] + q["ci95"])
            if not diff < limit:
                problems.append(f"{name} {diff:.3f} >= {limit:.3f} at {snr:g} dB")
    if not sdma_drops:
        problems.append("sdma never drops beyond the half-widths")
    ok = not problems
    detail = f"sdma drops at {[f'{s:g}' for s in sdma_drops]} dB"
    if problems:
        detail += "; " + "; ".join(problems)
    record_criterion(3, "QoS floor hurts SDMA only", ok, detail)
    assert ok


def test_optimizer_oracle(record_criterion):
    cases = json.loads(ORACLE.read_text())["instances"]
    assert len(cases) == 10
    gaps = []
    monotone = True
    for case in cases:
        ch = ChannelSet.perfect(np.array(case["channels"]))
        res = optimize(ch, Strategy.rsma(), OptimizerSettings(), case["power"])
        gaps.append(res.sum_rate - case["grid_best"])
        for trace in res.traces:
            monotone &= bool(np.all(np.diff(trace) >= -1e-9 * np.maximum(np.abs(trace[1:]), 1.0)))
    ok = min(gaps) >= -0.05 and monotone
    record_criterion(4, "optimizer vs grid search", ok,
                     f"worst gap {min(gaps):+.4f} bps/Hz, monotone traces {monotone}")
    assert ok


def _instance(seed):
    rng = np.random.default_rng(seed)
    k, m = 2 + seed % 2, 2 + seed % 3
    h = rng.standard_normal((k, m)) + 1j * rng.standard_normal((k, m))
    pk = rng.standard_normal((k, m)) + 1j * rng.standard_normal((k, m))
    pk *= math.sqrt(10.0 / np.sum(np.abs(pk) ** 2))
    return ChannelSet.perfect(h, rng.uniform(0.1, 2.0, k)), pk, rng.dirichlet(np.ones(k))


def test_restriction_identities(record_criterion):
    identical = 0
    for seed in range(100):
        ch, pk, split = _instance(seed)
        a = sdma_rate_report(ch, pk, 10.0)
        b = rate_report(ch, PrecoderSet(np.zeros(pk.shape[1]), pk, split, 10.0))
        identical += a.identical_to(b) and b.rate_common == 0.0
    errs = []
    for seed in range(10):
        rng = np.random.default_rng(500 + seed)
        h = rng.standard_normal((1, 3)) + 1j * rng.standard_normal((1, 3))
        p = 10.0 ** rng.uniform(0, 3)
        res = optimize(ChannelSet.perfect(h), Strategy.rsma(), OptimizerSettings(), p)
        errs.append(abs(res.sum_rate - math.log2(1 + p * np.linalg.norm(h) ** 2)))
    ok = identical == 100 and max(errs) <= 1e-6
    record_criterion(5, "restriction identities", ok,
                     f"{identical}/100 bit-identical, K=1 worst error {max(errs):.1e}")
    assert ok


def _binomial_limit(p, n):
    return p + 1.96 * math.sqrt(p * (1 - p) / n)


def test_codec_conformance(record_criterion):
    # noiseless round trip for every table entry
    rng = np.random.default_rng(31)
    trips = 0
    good = 0
    for mcs in load_table():
        for _ in range(10):
            payload = rng.integers(0, 2, (codewords_per_stream(mcs), mcs.payload_bits), dtype=np.uint8)
            bits, ok = decode_stream(mcs, encode_stream(mcs, payload), 1e-6)
            trips += ok.size
            good += int(np.sum(ok & np.all(bits == payload, axis=1)))
    # N=16 list decoder against exhaustive ML
    toy = CodewordSpec(8, 16, list_size=16, crc_length=0)
    msgs = ((np.arange(256)[:, None] >> np.arange(7, -1, -1)) & 1).astype(np.uint8)
    signs = 1.0 - 2.0 * polar_encode(toy, msgs)
    noisy = np.random.default_rng(2025)
    agree = 0
    for _ in range(500):
        y = signs[noisy.integers(256)] + 0.8 * noisy.standard_normal(16)
        llr = 2.0 * y / 0.64
        bits, _ = polar_decode(toy, llr)
        agree += bool(np.array_equal(bits, msgs[np.argmax(signs @ llr)]))
    # BLER at every AMC threshold, on streams disjoint from calibration
    n = 10_000
    limit = _binomial_limit(1e-2, n)
    worst = (0.0, None)
    for mcs in load_table():
        err, total = awgn_bler(mcs, mcs.min_sinr_db, n, seed=9001)
        if err / total >= worst[0]:
            worst = (err / total, mcs)
    ok = good == trips and agree / 500 >= 0.99 and worst[0] <= limit
    label = f"{worst[1].modulation_order}QAM r={worst[1].code_rate}"
    record_criterion(6, "codec conformance", ok,
                     f"round trip {good}/{trips}, ML agreement {agree}/500, "
                     f"worst BLER {worst[0]:.4f} ({label}) <= {limit:.4f}")
    assert ok


def test_audit_resummation(runs, record_criterion):
    checked = 0
    mismatched = []
    for name in ("fig2", "fig3"):
        csv = runs[name]
        again = recompute_throughput(read_audit(csv.with_suffix(".audit.ndjson")))
        for row in read_csv(csv):
            checked += 1
            if row["throughput"] != again[(row["strategy"], row["snr_db"])]:
                mismatched.append((name, row["strategy"], row["snr_db"]))
    ok = not mismatched and checked == 2 * 3 * 8
    record_criterion(7, "audit re-summation exact", ok, f"{checked} rows, mismatches {mismatched}")
    assert ok


def test_determinism(runs, record_criterion):
    a = runs["fig2"].read_bytes()
    b = runs["fig2_jobs2"].read_bytes()
    audit_a = runs["fig2"].with_suffix(".audit.ndjson").read_bytes()
    audit_b = runs["fig2_jobs2"].with_suffix(".audit.ndjson").read_bytes()
    ok = a == b and audit_a == audit_b
    record_criterion(8, "jobs-independent outputs", ok,
                     f"CSV {len(a)} bytes identical {a == b}, audit identical {audit_a == audit_b}")
    assert ok
