"""Sum-rate precoder optimisation for RSMA, SDMA and NOMA.

The optimiser works on a sample-average approximation of the ergodic
rates: ``conditional_samples`` channel draws consistent with the
transmitter's estimate. Each outer iteration

1. fixes per-sample MMSE equalisers and weights (closed form),
2. solves the resulting convex precoder problem: the common-rate minimum
   is dualised over the simplex and each dual point has a closed-form
   solution with a bisection on the power multiplier,
3. keeps the new precoders only if the true averaged objective did not
   decrease (backtracking otherwise), and tries an over-relaxed step
   along the same direction when the plain step helped.

When progress stalls, the common/private power ratio is searched directly
with the beam directions held fixed; plain MM steps move power between
layers of very different size only slowly. Restarts cover several
initial layouts and callers can add warm starts.

QoS floors enter through an exact penalty that is grown geometrically
until the floors hold to 1e-3 bps/Hz.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _ao
from .csit import conditional_stack
from .model import (
    ChannelSet,
    DimensionError,
    PrecoderSet,
    RateReport,
    averaged_rates_fast,
    stacked_sinrs,
)

LN2 = math.log(2.0)
QOS_TOL = 1e-3
MAX_PENALTY = 1e5


class StrategyTag(str, enum.Enum):
    RSMA_1LAYER = "rsma"
    SDMA = "sdma"
    NOMA = "noma"


@dataclass(frozen=True)
class Strategy:
    """Multiple-access strategy; NOMA carries the SIC decoding order.

    ``decoding_order[0]`` is the user whose stream every receiver decodes
    first (the weak user).
    """

    tag: StrategyTag
    decoding_order: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "tag", StrategyTag(self.tag))
        if self.tag is StrategyTag.NOMA:
            if self.decoding_order is None:
                raise ValueError("NOMA needs a decoding order")
            order = tuple(int(i) for i in self.decoding_order)
            if sorted(order) != list(range(len(order))):
                raise ValueError(f"decoding order {order} is not a permutation")
            object.__setattr__(self, "decoding_order", order)
        elif self.decoding_order is not None:
            raise ValueError("decoding order is only meaningful for NOMA")

    @classmethod
    def rsma(cls) -> "Strategy":
        return cls(StrategyTag.RSMA_1LAYER)

    @classmethod
    def sdma(cls) -> "Strategy":
        return cls(StrategyTag.SDMA)

    @classmethod
    def noma_for(cls, estimate: ChannelSet) -> "Strategy":
        """NOMA with users ordered by ascending estimated channel norm."""
        return cls(StrategyTag.NOMA, noma_order(estimate))


def noma_order(estimate: ChannelSet) -> tuple[int, ...]:
    """Decoding order, weakest estimated channel first; ties by user index."""
    norms = np.linalg.norm(estimate.estimate, axis=1)
    return tuple(int(i) for i in np.lexsort((np.arange(norms.size), norms)))


@dataclass(frozen=True)
class OptimizerSettings:
    max_outer_iterations: int = 200
    convergence_tol: float = 1e-4
    qos_floor: float = 0.0
    conditional_samples: int = 64
    restarts: int = 3
    penalty_growth: float = 5.0

    def __post_init__(self) -> None:
        if self.max_outer_iterations < 1 or self.restarts < 1 or self.conditional_samples < 1:
            raise ValueError("iteration, restart and sample counts must be positive")
        if self.convergence_tol <= 0 or self.qos_floor < 0:
            raise ValueError("convergence_tol must be positive and qos_floor nonnegative")
        if self.penalty_growth <= 1:
            raise ValueError("penalty_growth must exceed 1")


INIT_COMMON_FRACTIONS = (0.5, 0.2, 0.05)


@dataclass
class OptimizationResult:
    """Optimised precoders with their sample-averaged evaluation.

    For NOMA the precoders are in natural form (``privates[k]`` is user
    k's own stream); :func:`superposition_form` converts them to the
    layered form used by the receiver chain.
    """

    strategy: Strategy
    precoders: PrecoderSet
    report: RateReport
    feasible: bool
    infeasibility: str | None = None
    traces: list[np.ndarray] = field(default_factory=list)
    iterations: int = 0
    penalty: float = 0.0

    @property
    def sum_rate(self) -> float:
        return self.report.sum_rate


def _mode(strategy: Strategy) -> tuple[int, int]:
    if strategy.tag is StrategyTag.SDMA:
        return _ao.MODE_SDMA, -1
    if strategy.tag is StrategyTag.NOMA:
        return _ao.MODE_NOMA, strategy.decoding_order[0]
    return _ao.MODE_RSMA, -1


def _sample_stack(estimate: ChannelSet, samples, count: int) -> np.ndarray:
    if samples is not None:
        if isinstance(samples, np.ndarray):
            stack = samples
        else:
            stack = np.stack([s.true_channels for s in samples])
    elif estimate.error_std == 0.0:
        stack = estimate.estimate[None]
    else:
        stack = conditional_stack(estimate, count)
    if stack.ndim != 3 or stack.shape[1:] != estimate.estimate.shape:
        raise ValueError(f"sample stack has shape {stack.shape}")
    return np.ascontiguousarray(stack, dtype=np.complex128)


def _initial_points(estimate: np.ndarray, power: float, restarts: int):
    """Matched-filter starts with a growing common share, then a zero-forcing
    start and one single-user start per user."""
    k, m = estimate.shape
    directions = estimate / np.linalg.norm(estimate, axis=1, keepdims=True)
    # dominant left singular vector of the M x K estimate matrix
    u, _, _ = np.linalg.svd(estimate.T)
    common_dir = u[:, 0]
    zero = np.zeros(m, dtype=complex)
    for r in range(restarts):
        t = INIT_COMMON_FRACTIONS[r % len(INIT_COMMON_FRACTIONS)]
        pc = np.sqrt(t * power) * common_dir
        pp = np.sqrt((1.0 - t) * power / k) * directions
        yield np.ascontiguousarray(pc), np.ascontiguousarray(pp)
    if k <= m:
        zf = np.linalg.pinv(estimate.conj()).T
        zf = zf / np.linalg.norm(zf, axis=1, keepdims=True)
        yield zero, np.ascontiguousarray(np.sqrt(power / k) * zf)
    for i in range(k):
        pp = np.zeros((k, m), dtype=complex)
        pp[i] = np.sqrt(power) * directions[i]
        yield zero, pp


def single_user_rate_bound(stack: np.ndarray, sigma2: np.ndarray, power: float) -> np.ndarray:
    """Upper bound (bps/Hz) on each user's averaged rate when served alone.

    By Jensen, ``E log(1 + P |h^H w|^2) <= log(1 + P lambda_max(E h h^H))``.
    """
    cov = np.einsum("nka,nkb->kab", stack, stack.conj()) / stack.shape[0]
    lam = np.linalg.eigvalsh(cov)[:, -1]
    return np.log2(1.0 + power * lam / sigma2)


def common_split(rate_common: float, rate_private: np.ndarray, qos_floor: float) -> np.ndarray:
    """Fractions of the common rate allotted to each user.

    QoS shortfalls are covered first in user order; what remains goes to
    the user with the lowest total rate so far (lowest index on ties).
    """
    k = rate_private.size
    alloc = np.zeros(k)
    remaining = max(rate_common, 0.0)
    for i in range(k):
        give = min(max(qos_floor - rate_private[i], 0.0), remaining)
        alloc[i] = give
        remaining -= give
    target = int(np.argmin(rate_private + alloc))
    if rate_common <= 0.0:
        split = np.zeros(k)
        split[target] = 1.0
        return split
    alloc[target] += remaining
    split = alloc / alloc.sum()
    return split


def _rsma_report(stack, sigma2, pc, pp, split, semantics="rsma") -> RateReport:
    rc, rp = averaged_rates_fast(stack, sigma2, pc, pp)
    gc, gp = stacked_sinrs(stack, sigma2, pc, pp)
    rate_common = float(np.min(rc))
    portions = split * rate_common
    return RateReport(
        sinr_common=gc.mean(axis=0),
        sinr_private=gp.mean(axis=0),
        rate_common=rate_common,
        common_portions=portions,
        rate_private=rp,
        rate_total=portions + rp,
        metadata={
            "semantics": semantics,
            "rate_convention": "mean-of-rates",
            "samples": stack.shape[0],
            "common_terms": rc,
        },
    )


def superposition_form(precoders: PrecoderSet, order: Sequence[int]) -> PrecoderSet:
    """NOMA precoders in the layered form: weak stream in the common slot."""
    weak = order[0]
    privates = np.array(precoders.privates)
    common = privates[weak].copy()
    privates[weak] = 0.0
    split = np.zeros(precoders.num_users)
    split[weak] = 1.0
    return PrecoderSet(common, privates, split, precoders.power_budget)


def natural_form(layered: PrecoderSet, order: Sequence[int]) -> PrecoderSet:
    weak = order[0]
    privates = np.array(layered.privates)
    privates[weak] = layered.common
    return PrecoderSet.sdma(privates, layered.power_budget)


def _noma_report(stack, sigma2, precoders: PrecoderSet, order) -> RateReport:
    if precoders.num_users != 2:
        raise ValueError(f"NOMA rates are defined for K=2, got K={precoders.num_users}")
    layered = superposition_form(precoders, order)
    rep = _rsma_report(
        stack, sigma2, layered.common, layered.privates, layered.common_split, "noma"
    )
    rep.metadata["decoding_order"] = tuple(order)
    return rep


def noma_rates(channel: ChannelSet, precoders: PrecoderSet, order: Sequence[int]) -> RateReport:
    """Two-user NOMA rates with SIC in ``order`` (weak user's stream first).

    ``precoders.privates[k]`` is user k's stream. The weak stream must be
    decoded by both users, so its rate is the smaller of the two decoding
    rates; it is reported as ``rate_common`` and credited to the weak user.
    """
    if channel.num_users != 2:
        raise ValueError(f"NOMA rates are defined for K=2, got K={channel.num_users}")
    rep = _noma_report(channel.true_channels[None], channel.noise_vars, precoders, order)
    rep.metadata["rate_convention"] = "instantaneous"
    return rep


def averaged_noma_rates(
    samples: Sequence[ChannelSet], precoders: PrecoderSet, order: Sequence[int]
) -> RateReport:
    if len(samples) == 0:
        raise ValueError("need at least one channel sample")
    stack = np.stack([s.true_channels for s in samples])
    return _noma_report(stack, samples[0].noise_vars, precoders, order)


def sum_rate_objective(samples: Sequence[ChannelSet], precoders: PrecoderSet) -> float:
    """Averaged sum-rate ``R_c + sum_k R_k`` in bps/Hz."""
    if len(samples) == 0:
        raise ValueError("need at least one channel sample")
    stack = np.stack([s.true_channels for s in samples])
    rc, rp = averaged_rates_fast(stack, samples[0].noise_vars, precoders.common, precoders.privates)
    return float(np.min(rc) + np.sum(rp))


def _violation_bits(rc, rp, mode, weak, r0) -> float:
    _, viol = _ao.penalized_objective(rc * LN2, rp * LN2, mode, weak, r0 * LN2, 0.0)
    return viol / LN2


def _matched_filter(estimate: ChannelSet, strategy: Strategy, power: float, stack, sigma2):
    h = estimate.estimate[0]
    p1 = np.sqrt(power) * h / np.linalg.norm(h)
    pre = PrecoderSet(np.zeros_like(p1), p1[None], [1.0], power)
    rep = _rsma_report(stack, sigma2, pre.common, pre.privates, pre.common_split)
    feasible = rep.rate_total[0] >= -QOS_TOL
    return pre, rep, feasible


def optimize(
    estimate: ChannelSet,
    strategy: Strategy,
    settings: OptimizerSettings = OptimizerSettings(),
    power: float | None = None,
    samples: Sequence[ChannelSet] | np.ndarray | None = None,
    warm_starts: Sequence[PrecoderSet] = (),
) -> OptimizationResult:
    """Maximise the averaged sum-rate of ``strategy`` on the transmitter's estimate.

    Only ``estimate.estimate`` is used (plus ``samples`` when given); the
    true channel of ``estimate`` is never read.

    Args:
        estimate: channel set whose estimate is the transmitter's knowledge.
        strategy: RSMA, SDMA or NOMA (with decoding order).
        settings: iteration limits, QoS floor and sample count.
        power: total power budget P (linear, noise variance 1 means SNR).
        samples: optional explicit conditional samples; by default they are
            drawn from the estimate's generator lineage.
        warm_starts: extra starting points in the common-plus-private
            layout, run after the default restarts. Seeding RSMA with the
            SDMA and layered NOMA solutions makes it at least as good as
            both, since the iteration never decreases the objective.
    """
    if power is None:
        raise ValueError("optimize needs the power budget")
    k = estimate.num_users
    stack = _sample_stack(estimate, samples, settings.conditional_samples)
    sigma2 = np.ascontiguousarray(estimate.noise_vars, dtype=float)
    r0 = settings.qos_floor

    if k == 1:
        pre, rep, _ = _matched_filter(estimate, strategy, power, stack, sigma2)
        ok = rep.rate_total[0] >= r0 - QOS_TOL
        return OptimizationResult(
            strategy, pre, rep, ok, None if ok else "single-user rate below QoS floor"
        )
    if strategy.tag is StrategyTag.NOMA and k != 2:
        raise ValueError(f"NOMA optimisation supports K=2 only, got K={k}")

    if r0 > 0:
        bound = single_user_rate_bound(stack, sigma2, power)
        if np.min(bound) < r0:
            return _infeasible_result(estimate, strategy, power, stack, sigma2, bound)

    mode, weak = _mode(strategy)
    tol = settings.convergence_tol
    max_iter = settings.max_outer_iterations
    r0n = r0 * LN2
    traces: list[np.ndarray] = []
    candidates = []
    total_iters = 0
    starts = list(_initial_points(estimate.estimate, power, settings.restarts))
    for w in warm_starts:
        if w.privates.shape != estimate.estimate.shape:
            raise DimensionError("warm start does not match the channel dimensions")
        starts.append((np.ascontiguousarray(w.common), np.ascontiguousarray(w.privates)))
    for pc0, pp0 in starts:
        pc, pp = pc0, pp0
        rho = 0.0
        while True:
            buf = np.empty(max_iter + 1)
            pc, pp, count, obj, viol = _ao.ao_run(
                stack, sigma2, float(power), pc, pp, mode, weak, r0n, rho, max_iter, tol, buf
            )
            traces.append(buf[:count] / LN2)
            total_iters += count - 1
            if r0 == 0 or viol / LN2 < QOS_TOL:
                break
            rho = 1.0 if rho == 0.0 else rho * settings.penalty_growth
            if rho > MAX_PENALTY:
                break
        rc, rp = _ao.mean_rates(stack, sigma2, pc, pp)
        sum_rate = _ao.penalized_objective(rc, rp, mode, weak, 0.0, 0.0)[0] / LN2
        viol_bits = viol / LN2
        candidates.append((viol_bits >= QOS_TOL, round(-sum_rate, 12), len(candidates), pc, pp, rho))
    # feasible first, then largest sum-rate, then earliest restart
    candidates.sort(key=lambda c: c[:3])
    infeasible, _, _, pc, pp, rho = candidates[0]
    pc, pp = _scrub(pc, pp, power, mode, weak)

    if strategy.tag is StrategyTag.NOMA:
        natural = natural_form(PrecoderSet(pc, pp, _unit(k, weak), power), strategy.decoding_order)
        report = _noma_report(stack, sigma2, natural, strategy.decoding_order)
        precoders = natural
    else:
        rc, rp = averaged_rates_fast(stack, sigma2, pc, pp)
        if strategy.tag is StrategyTag.SDMA:
            split = np.zeros(k)
        else:
            split = common_split(float(np.min(rc)), rp, r0)
        precoders = PrecoderSet(pc, pp, split, power)
        report = _rsma_report(stack, sigma2, pc, pp, split)
    ok = not infeasible and bool(np.all(report.rate_total >= r0 - QOS_TOL))
    return OptimizationResult(
        strategy, precoders, report, ok,
        None if ok else "QoS floors not met after penalty continuation",
        traces, total_iters, rho,
    )


def optimize_all(
    estimate: ChannelSet,
    settings: OptimizerSettings = OptimizerSettings(),
    power: float | None = None,
    samples: Sequence[ChannelSet] | np.ndarray | None = None,
    strategies: Sequence[str] = ("rsma", "sdma", "noma"),
) -> dict[str, OptimizationResult]:
    """Optimise several strategies on one block, keyed by strategy tag.

    SDMA and NOMA run first and their solutions seed RSMA, so the RSMA
    objective on the shared samples is never below either of them.
    """
    wanted = [StrategyTag(t) for t in strategies]
    k = estimate.num_users
    stack = _sample_stack(estimate, samples, settings.conditional_samples)
    out: dict[str, OptimizationResult] = {}
    seeds: list[PrecoderSet] = []
    if StrategyTag.SDMA in wanted or StrategyTag.RSMA_1LAYER in wanted:
        sdma = optimize(estimate, Strategy.sdma(), settings, power, stack)
        if StrategyTag.SDMA in wanted:
            out["sdma"] = sdma
        seeds.append(sdma.precoders)
    if k == 2 and (StrategyTag.NOMA in wanted or StrategyTag.RSMA_1LAYER in wanted):
        strat = Strategy.noma_for(estimate)
        noma = optimize(estimate, strat, settings, power, stack)
        if StrategyTag.NOMA in wanted:
            out["noma"] = noma
        seeds.append(superposition_form(noma.precoders, strat.decoding_order))
    elif StrategyTag.NOMA in wanted:
        raise ValueError(f"NOMA optimisation supports K=2 only, got K={k}")
    if StrategyTag.RSMA_1LAYER in wanted:
        out["rsma"] = optimize(estimate, Strategy.rsma(), settings, power, stack, seeds)
    return {t.value: out[t.value] for t in wanted}


def _unit(k: int, i: int) -> np.ndarray:
    e = np.zeros(k)
    e[i] = 1.0
    return e


def _scrub(pc, pp, power, mode, weak):
    """Exact zeros for frozen streams and a final power-budget projection."""
    pc = np.array(pc)
    pp = np.array(pp)
    if mode == _ao.MODE_SDMA:
        pc[:] = 0.0
    if mode == _ao.MODE_NOMA:
        pp[weak] = 0.0
    used = np.vdot(pc, pc).real + np.sum(np.abs(pp) ** 2)
    if used > power:
        s = np.sqrt(power / used)
        pc *= s
        pp *= s
    return pc, pp


def _infeasible_result(estimate, strategy, power, stack, sigma2, bound) -> OptimizationResult:
    k = estimate.num_users
    pc = np.zeros(estimate.num_tx_antennas, complex)
    pp = np.zeros((k, estimate.num_tx_antennas), complex)
    if strategy.tag is StrategyTag.NOMA:
        precoders = PrecoderSet.sdma(pp, power)
        report = _noma_report(stack, sigma2, precoders, strategy.decoding_order)
    else:
        precoders = PrecoderSet.sdma(pp, power)
        report = _rsma_report(stack, sigma2, pc, pp, np.zeros(k))
    weakest = int(np.argmin(bound))
    return OptimizationResult(
        strategy, precoders, report, False,
        f"user {weakest} cannot reach the QoS floor even alone at full power "
        f"(bound {bound[weakest]:.4f} bps/Hz)",
    )


def dof_slope(points: Sequence[tuple[float, float]]) -> float:
    """Least-squares slope of sum-rate against ``log2(P)`` for ``(P_dB, rate)`` points."""
    if len(points) < 2:
        raise ValueError("dof_slope needs at least two points")
    snr_db = np.array([p[0] for p in points], dtype=float)
    if np.any(np.diff(snr_db) <= 0):
        raise ValueError("power points must be strictly increasing")
    x = snr_db / 10.0 * np.log2(10.0)
    y = np.array([p[1] for p in points], dtype=float)
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def predicted_dof(num_users: int, alpha: float) -> dict[str, float]:
    """High-SNR multiplexing gains of SDMA and 1-layer RSMA under CSIT quality ``alpha``."""
    return {
        "sdma": max(1.0, num_users * alpha),
        "rsma": 1.0 + (num_users - 1) * alpha,
    }
