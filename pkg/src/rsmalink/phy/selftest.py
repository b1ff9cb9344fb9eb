"""Codec conformance fixtures: frozen (payload, codeword) pairs and self-checks."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from ..csit import counter_rng
from .polar import CodewordSpec, polar_decode, polar_encode
from .qam import ORDERS, bits_per_symbol, constellation, qam_demap, qam_map

# (block_length, info_length, crc_length) of the fixture codes
FIXTURE_CODES = ((16, 8, 0), (64, 32, 11), (256, 43, 11), (256, 139, 11), (256, 235, 11))
FIXTURES_PER_CODE = 4
_FIXTURE_SEED = 0xC0DE


def _bits_to_str(bits) -> str:
    return "".join(str(int(b)) for b in bits)


def _str_to_bits(text: str) -> np.ndarray:
    return np.frombuffer(text.encode(), dtype=np.uint8) - ord("0")


def make_fixtures() -> list[dict]:
    out = []
    for n, k, crc in FIXTURE_CODES:
        spec = CodewordSpec(k, n, 8, crc)
        for j in range(FIXTURES_PER_CODE):
            rng = counter_rng(_FIXTURE_SEED, n, k, j)
            payload = rng.integers(0, 2, spec.payload_length, dtype=np.uint8)
            out.append({
                "block_length": n, "info_length": k, "crc_length": crc,
                "payload": _bits_to_str(payload),
                "codeword": _bits_to_str(polar_encode(spec, payload)),
            })
    return out


def load_fixtures(path: str | Path | None = None) -> list[dict]:
    if path is None:
        text = resources.files("rsmalink.phy").joinpath("data/codec_fixtures.json").read_text()
    else:
        text = Path(path).read_text()
    return json.loads(text)


def check_fixture(fx: dict) -> tuple[bool, str]:
    spec = CodewordSpec(fx["info_length"], fx["block_length"], 8, fx["crc_length"])
    payload = _str_to_bits(fx["payload"])
    codeword = _str_to_bits(fx["codeword"])
    enc = polar_encode(spec, payload)
    if not np.array_equal(enc, codeword):
        return False, "encoder output differs from fixture"
    llr = np.where(codeword == 0, 8.0, -8.0)
    dec, ok = polar_decode(spec, llr)
    if not (ok and np.array_equal(dec, payload)):
        return False, "noiseless decode did not return the payload"
    return True, "ok"


def run_selftest(path: str | Path | None = None) -> list[tuple[str, bool, str]]:
    """Run codec fixtures and modulation checks; one (name, passed, detail) per check."""
    results = []
    for i, fx in enumerate(load_fixtures(path)):
        name = f"polar N={fx['block_length']} K={fx['info_length']} #{i}"
        results.append((name, *check_fixture(fx)))
    for order in ORDERS:
        pts = constellation(order)
        energy = float(np.mean(np.abs(pts) ** 2))
        results.append((f"{order}-QAM unit energy", abs(energy - 1.0) < 1e-12, f"{energy!r}"))
        m = bits_per_symbol(order)
        bits = counter_rng(_FIXTURE_SEED, order).integers(0, 2, 64 * m, dtype=np.uint8)
        llr = qam_demap(qam_map(bits, order), order, 1e-3)
        same = bool(np.array_equal((llr < 0).astype(np.uint8), bits))
        results.append((f"{order}-QAM noiseless demap", same, "ok" if same else "sign mismatch"))
    return results


if __name__ == "__main__":
    target = Path(__file__).with_name("data") / "codec_fixtures.json"
    target.write_text(json.dumps(make_fixtures(), indent=1) + "\n")
    print(f"wrote {target}")
