"""AWGN link simulation used to set the MCS thresholds."""

from __future__ import annotations

import json
import math
from fractions import Fraction
from pathlib import Path

import numpy as np

from ..csit import complex_gaussian, counter_rng
from .amc import BLOCK_LENGTH, Mcs, validate_table
from .link import codewords_per_stream, decode_stream, encode_stream

# candidate (order, payload bits per 256-bit codeword), ascending efficiency
CANDIDATES = (
    (4, 32), (4, 64), (4, 96), (4, 128), (4, 160), (4, 192),
    (16, 128), (16, 160), (16, 192),
    (64, 144), (64, 168), (64, 192),
    (256, 160), (256, 176), (256, 192), (256, 208), (256, 224),
)
TARGET_BLER = 5e-3


def awgn_bler(mcs: Mcs, snr_db: float, codewords: int, seed: int = 0) -> tuple[int, int]:
    """(errors, codewords) over unit-energy symbols with noise variance 10^(-snr/10).

    A codeword is in error if its CRC fails or its payload differs from
    what was sent. Block ``b`` uses counter streams keyed by ``(seed, b)``.
    """
    sigma2 = 10.0 ** (-snr_db / 10.0)
    per_block = codewords_per_stream(mcs)
    blocks = math.ceil(codewords / per_block)
    errors = 0
    total = 0
    for b in range(blocks):
        rng = counter_rng(seed, mcs.modulation_order, mcs.payload_bits, b)
        payload = rng.integers(0, 2, (per_block, mcs.payload_bits), dtype=np.uint8)
        sym = encode_stream(mcs, payload)
        y = sym + math.sqrt(sigma2) * complex_gaussian(rng, sym.size)
        bits, ok = decode_stream(mcs, y, sigma2)
        good = ok & np.all(bits == payload, axis=1)
        take = min(per_block, codewords - total)
        errors += int(np.sum(~good[:take]))
        total += take
    return errors, total


def calibrate_threshold(
    order: int, payload_bits: int, target: float = TARGET_BLER, codewords: int = 4000,
    seed: int = 1, lo: float = -10.0, hi: float = 40.0, steps: int = 12,
) -> float:
    """Lowest SNR (dB, rounded up to 0.1 dB) found by bisection where BLER <= ``target``."""
    mcs = Mcs(order, Fraction(payload_bits, BLOCK_LENGTH), 0.0)
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        err, n = awgn_bler(mcs, mid, codewords, seed)
        if err / n <= target:
            hi = mid
        else:
            lo = mid
    return math.ceil(hi * 10.0 - 1e-9) / 10.0


def build_table(candidates=CANDIDATES, **kwargs) -> list[Mcs]:
    """Calibrate every candidate and drop entries that break threshold ordering."""
    table: list[Mcs] = []
    for order, bits in candidates:
        thr = calibrate_threshold(order, bits, **kwargs)
        mcs = Mcs(order, Fraction(bits, BLOCK_LENGTH), thr)
        if table and mcs.min_sinr_db <= table[-1].min_sinr_db:
            continue
        table.append(mcs)
    return list(validate_table(table))


def main(out: str | Path | None = None) -> None:
    table = build_table()
    path = Path(out) if out else Path(__file__).with_name("data") / "amc_table.json"
    path.write_text(json.dumps([m.to_dict() for m in table], indent=1) + "\n")
    for m in table:
        print(m.label, m.spectral_efficiency, m.min_sinr_db)


if __name__ == "__main__":
    main()
