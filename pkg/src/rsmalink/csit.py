"""Fading blocks with Gaussian CSIT errors.

The true channel is composed from the transmitter estimate and an error
draw as ``H = sqrt(1 - s^2) * H_hat + s * H_err`` with both matrices i.i.d.
CN(0, 1) and ``s^2 = P^-alpha``.

Randomness is counter based: every (seed, block, purpose, sample) tuple
keys its own Philox stream, so any block or sample can be regenerated in
isolation and results do not depend on evaluation order or worker count.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .model import ChannelSet


class Stream(enum.IntEnum):
    """Purpose tags separating the counter streams of one block."""

    ESTIMATE = 0
    ERROR = 1
    NOISE = 2
    PAYLOAD = 3


def counter_rng(seed: int, *key: int) -> np.random.Generator:
    """Stateless generator for the counter tuple ``(seed, *key)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    """CN(0, 1) samples by Box-Muller on the generator's uniform output."""
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    u = rng.random((2,) + shape)
    radius = np.sqrt(-2.0 * np.log1p(-u[0]))
    angle = 2.0 * np.pi * u[1]
    return radius * (np.cos(angle) + 1j * np.sin(angle)) / np.sqrt(2.0)


@dataclass(frozen=True)
class CsitConfig:
    num_tx_antennas: int
    num_users: int
    alpha: float
    power_budget: float
    seed: int = 0
    conditional_samples: int = 64
    perfect_csit: bool = False
    noise_var: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.power_budget <= 0:
            raise ValueError("power budget must be positive")
        if self.num_tx_antennas < 1 or self.num_users < 1:
            raise ValueError("need at least one antenna and one user")
        if self.conditional_samples < 1:
            raise ValueError("conditional_samples must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def error_std(self) -> float:
        if self.perfect_csit:
            return 0.0
        return float(np.sqrt(error_variance(self.power_budget, self.alpha)))


def error_variance(power: float, alpha: float) -> float:
    """CSIT error variance ``P^-alpha``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if power <= 0:
        raise ValueError("power must be positive")
    if power < 1.0 and alpha > 0:
        raise ValueError(
            f"P={power} < 1 with alpha={alpha} would give an error variance above 1"
        )
    return float(power ** (-alpha))


def _compose(estimate: np.ndarray, error: np.ndarray, error_std: float) -> np.ndarray:
    return np.sqrt(1.0 - error_std**2) * estimate + error_std * error


def _draw(seed: int, block_index: int, stream: Stream, sample: int, k: int, m: int) -> np.ndarray:
    return complex_gaussian(counter_rng(seed, block_index, stream, sample), (k, m))


def draw_block(config: CsitConfig, block_index: int) -> ChannelSet:
    """Estimate, error and composed true channel for one fading block."""
    k, m = config.num_users, config.num_tx_antennas
    estimate = _draw(config.seed, block_index, Stream.ESTIMATE, 0, k, m)
    error = _draw(config.seed, block_index, Stream.ERROR, 0, k, m)
    s = config.error_std
    return ChannelSet(
        _compose(estimate, error, s), estimate, error, s,
        np.full(k, config.noise_var), config.seed, block_index,
    )


def conditional_draws(
    base: ChannelSet, config: CsitConfig, count: int, offset: int = 1
) -> list[ChannelSet]:
    """Channels consistent with ``base``'s estimate, each with a fresh error.

    Error draw ``j`` uses sample index ``offset + j`` of the block's error
    stream; index 0 is the realised error of ``base``, so the default
    ``offset=1`` keeps the realisation hidden from the transmitter while
    ``offset=0, count=1`` reproduces ``base`` exactly.
    """
    if count < 1:
        raise ValueError("conditional_draws needs count >= 1")
    seed = config.seed if base.seed is None else base.seed
    block = 0 if base.block_index is None else base.block_index
    k, m = base.num_users, base.num_tx_antennas
    out = []
    for j in range(count):
        err = _draw(seed, block, Stream.ERROR, offset + j, k, m)
        out.append(
            ChannelSet(
                _compose(base.estimate, err, base.error_std), base.estimate, err,
                base.error_std, base.noise_vars, seed, block,
            )
        )
    return out


def conditional_stack(
    base: ChannelSet, count: int, offset: int = 1, seed: int | None = None
) -> np.ndarray:
    """(count, K, M) array of conditional true channels; see :func:`conditional_draws`."""
    seed = (base.seed or 0) if seed is None else seed
    block = 0 if base.block_index is None else base.block_index
    k, m = base.num_users, base.num_tx_antennas
    errs = np.stack(
        [_draw(seed, block, Stream.ERROR, offset + j, k, m) for j in range(count)]
    )
    return _compose(base.estimate[None], errs, base.error_std)
