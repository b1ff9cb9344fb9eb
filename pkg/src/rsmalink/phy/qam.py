"""Gray-mapped square QAM with unit average energy and a max-log demapper.

Each symbol carries ``m = log2(order)`` bits: the first ``m/2`` select the
in-phase level and the rest the quadrature level. Per axis the bits form a
Gray label ``g``; the level is ``2^(m/2) - 1 - 2 * gray_decode(g)`` so that
bit 0 maps to the positive half-axis. For 4-QAM bits ``00`` give
``(1 + 1j) / sqrt(2)``.

LLRs use the same sign convention as the polar decoder: positive favours 0.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

ORDERS = (4, 16, 64, 256)


def bits_per_symbol(order: int) -> int:
    if order not in ORDERS:
        raise ValueError(f"unsupported QAM order {order}; choose one of {ORDERS}")
    return int(order).bit_length() - 1


@lru_cache(maxsize=None)
def _axis_table(order: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Per-axis levels indexed by label value, the label bits and the scale."""
    half = bits_per_symbol(order) // 2
    labels = np.arange(1 << half)
    binary = labels.copy()
    shift = labels >> 1
    while np.any(shift):
        binary ^= shift
        shift >>= 1
    levels = ((1 << half) - 1 - 2 * binary).astype(float)
    bits = ((labels[:, None] >> np.arange(half - 1, -1, -1)) & 1).astype(np.uint8)
    scale = np.sqrt(2.0 * (order - 1) / 3.0)
    levels.setflags(write=False)
    bits.setflags(write=False)
    return levels, bits, scale


def constellation(order: int) -> np.ndarray:
    """All ``order`` points indexed by their bit label read MSB first."""
    m = bits_per_symbol(order)
    labels = np.arange(order)
    bits = ((labels[:, None] >> np.arange(m - 1, -1, -1)) & 1).astype(np.uint8)
    return qam_map(bits.reshape(-1), order)


def qam_map(bits, order: int) -> np.ndarray:
    """Map a flat bit array (length a multiple of log2(order)) to symbols."""
    m = bits_per_symbol(order)
    bits = np.asarray(bits, dtype=np.int64)
    if bits.ndim != 1 or bits.size % m:
        raise ValueError(f"bit count {bits.size} is not a multiple of {m}")
    levels, _, scale = _axis_table(order)
    half = m // 2
    groups = bits.reshape(-1, 2, half)
    weights = 1 << np.arange(half - 1, -1, -1)
    label = groups @ weights
    return (levels[label[:, 0]] + 1j * levels[label[:, 1]]) / scale


def qam_demap(symbols, order: int, noise_var, interference_var=0.0) -> np.ndarray:
    """Max-log LLRs for equalised symbols ``y = s + w``.

    ``noise_var`` and ``interference_var`` are the complex variances of the
    Gaussian noise and of residual interference (treated as Gaussian); both
    may be scalars or per-symbol arrays. Output has ``log2(order)`` LLRs per
    symbol in mapping order.
    """
    m = bits_per_symbol(order)
    y = np.asarray(symbols, dtype=np.complex128).reshape(-1)
    var = np.broadcast_to(
        np.asarray(noise_var, dtype=float) + np.asarray(interference_var, dtype=float), y.shape
    )
    if np.any(var <= 0):
        raise ValueError("effective noise variance must be positive")
    levels, bits, scale = _axis_table(order)
    pts = levels / scale
    half = m // 2
    out = np.empty((y.size, 2, half))
    for axis, comp in enumerate((y.real, y.imag)):
        # squared distance to every level: (S, levels)
        d2 = (comp[:, None] - pts[None, :]) ** 2
        for j in range(half):
            one = bits[:, j] == 1
            d1 = d2[:, one].min(axis=1)
            d0 = d2[:, ~one].min(axis=1)
            # each axis carries half the complex variance
            out[:, axis, j] = (d1 - d0) / var
    return out.reshape(-1)
