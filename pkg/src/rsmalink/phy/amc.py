"""Modulation-and-coding table and rate-based link adaptation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path

from .qam import ORDERS, bits_per_symbol

BLOCK_LENGTH = 256
DEFAULT_BACKOFF = 0.9


@dataclass(frozen=True, order=True)
class Mcs:
    """Modulation order and polar code rate with its AWGN SNR threshold.

    ``code_rate`` is payload bits per coded bit (the CRC is overhead), so
    ``spectral_efficiency`` counts delivered payload bits per symbol.
    """

    modulation_order: int
    code_rate: Fraction
    min_sinr_db: float

    def __post_init__(self) -> None:
        bits_per_symbol(self.modulation_order)
        rate = Fraction(self.code_rate).limit_denominator(BLOCK_LENGTH)
        if not 0 < rate < 1:
            raise ValueError(f"code rate must lie in (0, 1), got {self.code_rate}")
        if (rate * BLOCK_LENGTH).denominator != 1:
            raise ValueError(f"code rate {rate} does not give whole payload bits at N={BLOCK_LENGTH}")
        object.__setattr__(self, "code_rate", rate)
        object.__setattr__(self, "min_sinr_db", float(self.min_sinr_db))

    @property
    def bits_per_symbol(self) -> int:
        return bits_per_symbol(self.modulation_order)

    @property
    def payload_bits(self) -> int:
        """Payload bits per N=256 codeword."""
        return int(self.code_rate * BLOCK_LENGTH)

    @property
    def spectral_efficiency(self) -> float:
        return float(self.bits_per_symbol * self.code_rate)

    @property
    def label(self) -> str:
        return f"{self.modulation_order}QAM-{self.payload_bits}/{BLOCK_LENGTH}"

    def to_dict(self) -> dict:
        return {
            "order": self.modulation_order,
            "rate": f"{self.code_rate.numerator}/{self.code_rate.denominator}",
            "min_sinr_db": self.min_sinr_db,
        }


def validate_table(table) -> tuple[Mcs, ...]:
    """Check ordering: strictly increasing spectral efficiency and threshold."""
    table = tuple(table)
    if not table:
        raise ValueError("MCS table is empty")
    for a, b in zip(table, table[1:]):
        if not b.spectral_efficiency > a.spectral_efficiency:
            raise ValueError(f"{b.label} does not increase spectral efficiency over {a.label}")
        if not b.min_sinr_db > a.min_sinr_db:
            raise ValueError(f"{b.label} threshold does not exceed that of {a.label}")
    return table


def table_from_records(records) -> tuple[Mcs, ...]:
    out = []
    for r in records:
        if set(r) != {"order", "rate", "min_sinr_db"}:
            raise ValueError(f"MCS record needs exactly order, rate, min_sinr_db: {r}")
        if int(r["order"]) not in ORDERS:
            raise ValueError(f"unsupported order {r['order']}")
        out.append(Mcs(int(r["order"]), Fraction(str(r["rate"])), float(r["min_sinr_db"])))
    return validate_table(out)


def load_table(path: str | Path | None = None) -> tuple[Mcs, ...]:
    """Read a JSON list of ``{order, rate, min_sinr_db}``; default is the bundled table."""
    if path is None:
        text = resources.files("rsmalink.phy").joinpath("data/amc_table.json").read_text()
    else:
        text = Path(path).read_text()
    return table_from_records(json.loads(text))


def amc_select(
    predicted_rate: float, table, backoff: float = DEFAULT_BACKOFF, sinr_db: float | None = None
) -> Mcs | None:
    """Highest-efficiency entry with ``efficiency <= backoff * predicted_rate``.

    With ``sinr_db`` given, entries whose AWGN threshold exceeds it are
    skipped as well. Returns ``None`` (no transmission) when no entry
    qualifies.
    """
    budget = backoff * max(float(predicted_rate), 0.0)
    best = None
    for mcs in table:
        if mcs.spectral_efficiency > budget:
            continue
        if sinr_db is not None and mcs.min_sinr_db > sinr_db:
            continue
        if best is None or mcs.spectral_efficiency > best.spectral_efficiency:
            best = mcs
    return best


def rate_equivalent_sinr_db(rate: float) -> float:
    """SINR in dB whose Gaussian-input capacity is ``rate`` bps/Hz."""
    lin = math.expm1(max(float(rate), 0.0) * math.log(2.0))
    if lin <= 0.0:
        return float("-inf")
    return 10.0 * math.log10(lin)


def link_adapt(predicted_rate: float, table, backoff: float = DEFAULT_BACKOFF) -> Mcs | None:
    """Rate rule combined with the table thresholds at the rate-equivalent SINR."""
    return amc_select(predicted_rate, table, backoff, rate_equivalent_sinr_db(predicted_rate))
