"""Signal model and rate accounting for 1-layer rate splitting in the MISO BC.

Conventions used throughout the package:

* Channels are stored row-wise: ``true_channels[k]`` is ``h_k`` (length M).
* Inner products conjugate the channel, ``h^H p = np.vdot(h, p)``.
* Rates are in bps/Hz (log base 2); SINRs are linear.

SDMA is the restriction ``p_c = 0`` of the same model, so the SDMA
evaluation is produced by exactly the same code path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

POWER_RTOL = 1e-9
SPLIT_ATOL = 1e-12


class DimensionError(ValueError):
    """Raised when array lengths of channels, precoders or symbols disagree."""


def _as_complex(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=np.complex128)
    if arr.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ChannelSet:
    """One fading block: true channels, transmitter estimate and error draw.

    ``seed`` and ``block_index`` record the generator lineage so that
    conditional resampling can be reproduced; they are ``None`` for
    hand-built sets.
    """

    true_channels: np.ndarray
    estimate: np.ndarray
    error: np.ndarray
    error_std: float = 0.0
    noise_vars: np.ndarray | None = None
    seed: int | None = None
    block_index: int | None = None

    def __post_init__(self) -> None:
        h = _as_complex(self.true_channels, 2, "true_channels")
        est = _as_complex(self.estimate, 2, "estimate")
        err = _as_complex(self.error, 2, "error")
        if not (h.shape == est.shape == err.shape):
            raise DimensionError(
                f"channel arrays disagree: true {h.shape}, estimate {est.shape}, error {err.shape}"
            )
        if not 0.0 <= self.error_std <= 1.0:
            raise ValueError(f"error_std must lie in [0, 1], got {self.error_std}")
        k = h.shape[0]
        nv = np.ones(k) if self.noise_vars is None else np.array(self.noise_vars, dtype=float)
        if nv.shape != (k,):
            raise DimensionError(f"noise_vars has length {nv.size}, expected K={k}")
        if np.any(nv <= 0):
            raise ValueError("noise variances must be positive")
        nv.setflags(write=False)
        object.__setattr__(self, "true_channels", h)
        object.__setattr__(self, "estimate", est)
        object.__setattr__(self, "error", err)
        object.__setattr__(self, "noise_vars", nv)
        object.__setattr__(self, "error_std", float(self.error_std))

    @property
    def num_users(self) -> int:
        return self.true_channels.shape[0]

    @property
    def num_tx_antennas(self) -> int:
        return self.true_channels.shape[1]

    @classmethod
    def perfect(cls, channels, noise_vars=None) -> "ChannelSet":
        """Channel set whose estimate equals the true channel."""
        h = np.asarray(channels, dtype=np.complex128)
        return cls(h, h, np.zeros_like(h), 0.0, noise_vars)

    def as_known(self) -> "ChannelSet":
        """The transmitter's view: estimate promoted to the true channel."""
        return ChannelSet(
            self.estimate, self.estimate, np.zeros_like(self.estimate), 0.0, self.noise_vars,
            self.seed, self.block_index,
        )


@dataclass(frozen=True)
class PrecoderSet:
    """Common precoder, K private precoders and the common-rate split.

    ``common_split`` holds fractions of the common rate; an all-zero split is
    accepted only together with a zero common precoder (the SDMA convention).
    """

    common: np.ndarray
    privates: np.ndarray
    common_split: np.ndarray
    power_budget: float

    def __post_init__(self) -> None:
        pc = _as_complex(self.common, 1, "common")
        pk = _as_complex(self.privates, 2, "privates")
        if pk.shape[1] != pc.size:
            raise DimensionError(
                f"private precoders have length {pk.shape[1]}, common precoder has {pc.size}"
            )
        split = np.array(self.common_split, dtype=float)
        if split.shape != (pk.shape[0],):
            raise DimensionError(
                f"common_split has length {split.size}, expected K={pk.shape[0]}"
            )
        if np.any(split < 0):
            raise ValueError("common_split entries must be nonnegative")
        total = split.sum()
        if abs(total - 1.0) > SPLIT_ATOL and not (total == 0.0 and not np.any(pc)):
            raise ValueError(f"common_split must sum to 1, got {total!r}")
        if self.power_budget <= 0:
            raise ValueError("power_budget must be positive")
        used = float(np.vdot(pc, pc).real + np.sum(np.abs(pk) ** 2))
        if used > self.power_budget * (1.0 + POWER_RTOL):
            raise ValueError(f"transmit power {used} exceeds budget {self.power_budget}")
        split.setflags(write=False)
        object.__setattr__(self, "common", pc)
        object.__setattr__(self, "privates", pk)
        object.__setattr__(self, "common_split", split)
        object.__setattr__(self, "power_budget", float(self.power_budget))

    @property
    def num_users(self) -> int:
        return self.privates.shape[0]

    @property
    def transmit_power(self) -> float:
        return float(np.vdot(self.common, self.common).real + np.sum(np.abs(self.privates) ** 2))

    @classmethod
    def sdma(cls, privates, power_budget: float) -> "PrecoderSet":
        pk = np.asarray(privates, dtype=np.complex128)
        return cls(np.zeros(pk.shape[1], complex), pk, np.zeros(pk.shape[0]), power_budget)


@dataclass(frozen=True)
class RateReport:
    """Per-user SINRs and rates; ``metadata`` records evaluation conventions."""

    sinr_common: np.ndarray
    sinr_private: np.ndarray
    rate_common: float
    common_portions: np.ndarray
    rate_private: np.ndarray
    rate_total: np.ndarray
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def sum_rate(self) -> float:
        return float(np.sum(self.rate_total))

    def identical_to(self, other: "RateReport") -> bool:
        """Bit-for-bit equality of every numeric field."""
        pairs = [
            (self.sinr_common, other.sinr_common),
            (self.sinr_private, other.sinr_private),
            (self.common_portions, other.common_portions),
            (self.rate_private, other.rate_private),
            (self.rate_total, other.rate_total),
        ]
        return self.rate_common == other.rate_common and all(
            np.array_equal(a, b) for a, b in pairs
        )


def _check_compatible(channel: ChannelSet, precoders: PrecoderSet) -> None:
    if channel.num_users != precoders.num_users:
        raise DimensionError(
            f"channel has K={channel.num_users} users, precoders have K={precoders.num_users}"
        )
    if channel.num_tx_antennas != precoders.common.size:
        raise DimensionError(
            f"channel has M={channel.num_tx_antennas} antennas, precoders have length "
            f"{precoders.common.size}"
        )


def _check_user(channel: ChannelSet, user: int) -> None:
    if not 0 <= user < channel.num_users:
        raise IndexError(f"user index {user} out of range for K={channel.num_users}")


def transmit_signal(precoders: PrecoderSet, symbols: Sequence[complex]) -> np.ndarray:
    """Superpose the precoded streams: ``x = p_c s_c + sum_k p_k s_k``.

    ``symbols`` is ordered ``[s_c, s_1, ..., s_K]``.
    """
    s = np.asarray(symbols, dtype=np.complex128)
    expected = precoders.num_users + 1
    if s.shape != (expected,):
        raise DimensionError(
            f"expected {expected} symbols (common + {precoders.num_users} private), got {s.size}"
        )
    return precoders.common * s[0] + s[1:] @ precoders.privates


def received_sample(channel: ChannelSet, user: int, x, noise: complex = 0.0) -> complex:
    """``y_k = h_k^H x + n_k`` on the true channel."""
    _check_user(channel, user)
    x = np.asarray(x, dtype=np.complex128)
    if x.shape != (channel.num_tx_antennas,):
        raise DimensionError(
            f"transmit vector has length {x.size}, expected M={channel.num_tx_antennas}"
        )
    return complex(np.vdot(channel.true_channels[user], x) + noise)


def _gains(channel: ChannelSet, precoders: PrecoderSet) -> tuple[np.ndarray, np.ndarray]:
    """|h_k^H p_c|^2 per user and |h_k^H p_i|^2 as a (K, K) array [k, i]."""
    h = channel.true_channels
    common = np.abs(h.conj() @ precoders.common) ** 2
    private = np.abs(h.conj() @ precoders.privates.T) ** 2
    return common, private


def sinr_common(channel: ChannelSet, precoders: PrecoderSet, user: int) -> float:
    """SINR of the common stream at ``user``, all private streams as noise."""
    _check_compatible(channel, precoders)
    _check_user(channel, user)
    common, private = _gains(channel, precoders)
    return float(common[user] / (private[user].sum() + channel.noise_vars[user]))


def sinr_private(channel: ChannelSet, precoders: PrecoderSet, user: int) -> float:
    """SINR of the private stream at ``user`` after ideal common-stream removal."""
    _check_compatible(channel, precoders)
    _check_user(channel, user)
    _, private = _gains(channel, precoders)
    interference = np.delete(private[user], user).sum()
    return float(private[user, user] / (interference + channel.noise_vars[user]))


def _sinrs(channel: ChannelSet, precoders: PrecoderSet) -> tuple[np.ndarray, np.ndarray]:
    k = channel.num_users
    gc = np.array([sinr_common(channel, precoders, i) for i in range(k)])
    gp = np.array([sinr_private(channel, precoders, i) for i in range(k)])
    return gc, gp


def _assemble(
    gc: np.ndarray,
    gp: np.ndarray,
    rc_terms: np.ndarray,
    rp_terms: np.ndarray,
    split: np.ndarray,
    metadata: dict,
) -> RateReport:
    rate_common = float(np.min(rc_terms))
    portions = split * rate_common
    return RateReport(
        sinr_common=gc,
        sinr_private=gp,
        rate_common=rate_common,
        common_portions=portions,
        rate_private=rp_terms,
        rate_total=portions + rp_terms,
        metadata=metadata,
    )


def rate_report(channel: ChannelSet, precoders: PrecoderSet) -> RateReport:
    """Instantaneous rates of all streams on the true channel of ``channel``."""
    gc, gp = _sinrs(channel, precoders)
    return _assemble(
        gc, gp, np.log2(1.0 + gc), np.log2(1.0 + gp), precoders.common_split,
        {"semantics": "rsma", "rate_convention": "instantaneous"},
    )


def sdma_rate_report(channel: ChannelSet, privates, power_budget: float) -> RateReport:
    """SDMA rates: private streams only, interference treated as noise."""
    return rate_report(channel, PrecoderSet.sdma(privates, power_budget))


def averaged_rate_report(samples: Sequence[ChannelSet], precoders: PrecoderSet) -> RateReport:
    """Sample-average (ergodic) rates over estimate-conditioned channel draws.

    Per-user ``log2(1 + SINR)`` terms are averaged across samples first and
    the common rate is the minimum of the averaged common terms. The
    reported SINRs are sample means and are informational only.
    """
    if len(samples) == 0:
        raise ValueError("averaged_rate_report needs at least one channel sample")
    gcs, gps = zip(*(_sinrs(s, precoders) for s in samples))
    gc = np.array(gcs)
    gp = np.array(gps)
    rc = np.mean(np.log2(1.0 + gc), axis=0)
    rp = np.mean(np.log2(1.0 + gp), axis=0)
    return _assemble(
        gc.mean(axis=0), gp.mean(axis=0), rc, rp, precoders.common_split,
        {"semantics": "rsma", "rate_convention": "mean-of-rates", "samples": len(samples)},
    )


def stacked_channels(samples: Sequence[ChannelSet]) -> tuple[np.ndarray, np.ndarray]:
    """Samples as an (N, K, M) array plus the shared noise variances."""
    h = np.stack([s.true_channels for s in samples])
    return h, samples[0].noise_vars


def stacked_sinrs(h: np.ndarray, sigma2: np.ndarray, pc: np.ndarray, pk: np.ndarray):
    """Common and private SINRs, each (N, K), for an (N, K, M) channel stack."""
    hc = h.conj()
    common = np.abs(hc @ pc) ** 2
    private = np.abs(hc @ pk.T) ** 2
    own = np.diagonal(private, axis1=1, axis2=2)
    others = np.where(np.eye(pk.shape[0], dtype=bool), 0.0, private).sum(axis=2)
    return common / (others + own + sigma2), own / (others + sigma2)


def averaged_rates_fast(h: np.ndarray, sigma2: np.ndarray, pc: np.ndarray, pk: np.ndarray):
    """Vectorized per-user mean common and private rates over an (N, K, M) stack.

    Same arithmetic as :func:`averaged_rate_report` without building
    ChannelSet objects; used by the sweep and the optimizer.
    """
    hc = h.conj()
    common = np.abs(hc @ pc) ** 2
    private = np.abs(hc @ pk.T) ** 2
    own = np.diagonal(private, axis1=1, axis2=2)
    others = np.where(np.eye(pk.shape[0], dtype=bool), 0.0, private).sum(axis=2)
    gc = common / (others + own + sigma2)
    gp = own / (others + sigma2)
    return np.mean(np.log2(1.0 + gc), axis=0), np.mean(np.log2(1.0 + gp), axis=0)
