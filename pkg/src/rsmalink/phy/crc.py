"""CRC-11 with generator x^11 + x^10 + x^9 + x^5 + 1.

Bits are 0/1 ``uint8`` arrays, first element is the highest-order
coefficient of the message polynomial; the register starts at zero and the
remainder is appended MSB first, so a valid word has zero syndrome.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

CRC11_POLY = 0b111000100001  # x^11 + x^10 + x^9 + x^5 + 1
CRC11_LEN = 11


def _remainder_bits(bits: np.ndarray, poly: int, width: int) -> np.ndarray:
    reg = 0
    top = 1 << width
    for b in bits:
        reg = (reg << 1) | int(b)
        if reg & top:
            reg ^= poly
    for _ in range(width):
        reg <<= 1
        if reg & top:
            reg ^= poly
    return np.array([(reg >> (width - 1 - i)) & 1 for i in range(width)], dtype=np.uint8)


@lru_cache(maxsize=64)
def crc_matrix(length: int, poly: int = CRC11_POLY, width: int = CRC11_LEN) -> np.ndarray:
    """(length, width) matrix ``G`` with ``crc(bits) = bits @ G mod 2``.

    The CRC is linear over GF(2) with a zero initial register, so row ``i``
    is the CRC of the ``i``-th unit vector.
    """
    g = np.zeros((length, width), dtype=np.uint8)
    for i in range(length):
        e = np.zeros(length, dtype=np.uint8)
        e[i] = 1
        g[i] = _remainder_bits(e, poly, width)
    g.setflags(write=False)
    return g


def crc_bits(bits) -> np.ndarray:
    """The 11 CRC bits of ``bits`` by bitwise polynomial division."""
    return _remainder_bits(np.asarray(bits, dtype=np.uint8), CRC11_POLY, CRC11_LEN)


def crc_attach(bits) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8)
    parity = (bits.astype(np.int64) @ crc_matrix(bits.size)) & 1
    return np.concatenate([bits, parity.astype(np.uint8)])


def crc_check(word) -> bool:
    """True when the trailing 11 bits are the CRC of the rest."""
    word = np.asarray(word, dtype=np.uint8)
    if word.size < CRC11_LEN:
        raise ValueError("word shorter than the CRC")
    msg = word[:-CRC11_LEN]
    parity = (msg.astype(np.int64) @ crc_matrix(msg.size)) & 1
    return bool(np.array_equal(parity, word[-CRC11_LEN:]))
