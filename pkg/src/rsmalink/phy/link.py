"""Coded transmission of one fading block and the SIC receiver.

A block spans ``SYMBOLS_PER_BLOCK`` channel uses. Every active stream
fills the block with ``log2(order) / 2`` polar codewords of length 256,
bit-interleaved by a fixed permutation and Gray-mapped onto QAM symbols.
Precoders are in the common-plus-private layout; NOMA uses the layered
form with the weak user's stream in the common slot.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from ..csit import Stream, complex_gaussian, counter_rng
from ..model import ChannelSet, PrecoderSet, stacked_sinrs
from .amc import BLOCK_LENGTH, Mcs
from .polar import CodewordSpec, polar_decode_batch, polar_encode
from .qam import qam_demap, qam_map

SYMBOLS_PER_BLOCK = 128
LIST_SIZE = 8
_INTERLEAVER_SEED = 0x5EED


@lru_cache(maxsize=None)
def stream_spec(mcs: Mcs) -> CodewordSpec:
    return CodewordSpec(mcs.payload_bits + 11, BLOCK_LENGTH, LIST_SIZE)


def codewords_per_stream(mcs: Mcs) -> int:
    return SYMBOLS_PER_BLOCK * mcs.bits_per_symbol // BLOCK_LENGTH


@lru_cache(maxsize=None)
def interleaver(order: int) -> np.ndarray:
    """Fixed bit permutation for one block of ``order``-QAM symbols."""
    m = int(order).bit_length() - 1
    perm = counter_rng(_INTERLEAVER_SEED, order).permutation(SYMBOLS_PER_BLOCK * m)
    perm.setflags(write=False)
    return perm


def encode_stream(mcs: Mcs, payload: np.ndarray) -> np.ndarray:
    """(codewords, payload_bits) bits to one block of unit-energy symbols."""
    payload = np.asarray(payload, dtype=np.uint8)
    n_cw = codewords_per_stream(mcs)
    if payload.shape != (n_cw, mcs.payload_bits):
        raise ValueError(f"expected payload shape {(n_cw, mcs.payload_bits)}, got {payload.shape}")
    coded = polar_encode(stream_spec(mcs), payload).reshape(-1)
    # coded bit j is sent at position perm[j]
    tx = np.empty_like(coded)
    tx[interleaver(mcs.modulation_order)] = coded
    return qam_map(tx, mcs.modulation_order)


def decode_stream(mcs: Mcs, equalised: np.ndarray, noise_var, interference_var=0.0):
    """Demap, deinterleave and decode one block; returns (payload bits, CRC flags)."""
    llr = qam_demap(equalised, mcs.modulation_order, noise_var, interference_var)
    coded = llr[interleaver(mcs.modulation_order)]
    return polar_decode_batch(stream_spec(mcs), coded.reshape(codewords_per_stream(mcs), -1))


@dataclass(frozen=True)
class MessageFrame:
    """User ``user``'s message bits for one block, split into common and private parts."""

    user: int
    common_part: np.ndarray
    private_part: np.ndarray

    @property
    def message(self) -> np.ndarray:
        return np.concatenate([self.common_part, self.private_part])


@dataclass(frozen=True)
class StreamPlan:
    """MCS per stream for one block; ``None`` marks a silent stream.

    ``private_slots`` lists which users the strategy gives a private
    stream at all (NOMA has none for the weak user, whose stream rides in
    the common slot); ``common_slot`` is False for SDMA.
    """

    common: Mcs | None
    privates: tuple[Mcs | None, ...]
    common_split: tuple[float, ...]
    common_slot: bool = True
    private_slots: tuple[bool, ...] | None = None

    def __post_init__(self) -> None:
        if self.private_slots is None:
            object.__setattr__(self, "private_slots", (True,) * len(self.privates))
        if len(self.common_split) != len(self.privates):
            raise ValueError("common_split and privates disagree on K")
        if not self.common_slot and self.common is not None:
            raise ValueError("a strategy without a common slot cannot send a common stream")

    @property
    def num_users(self) -> int:
        return len(self.privates)


def common_shares(total_bits: int, split: Sequence[float]) -> np.ndarray:
    """Bit boundaries of each user's share of the common payload, user 0 first."""
    cum = np.concatenate([[0.0], np.cumsum(split)])
    cum = cum / cum[-1] if cum[-1] > 0 else cum
    bounds = np.rint(cum * total_bits).astype(int)
    bounds[-1] = total_bits if cum[-1] > 0 else 0
    return bounds


def credited_bits(
    common_share_bits: Sequence[int], common_ok: Sequence[bool], private_bits: Sequence[int],
    private_ok: Sequence[bool],
) -> np.ndarray:
    """Recovered bits per user: own common share if decoded plus own private bits if decoded."""
    return np.array(
        [
            (c if cok else 0) + (p if pok else 0)
            for c, cok, p, pok in zip(common_share_bits, common_ok, private_bits, private_ok)
        ],
        dtype=np.int64,
    )


@dataclass
class ReceiverOutput:
    common_bits: np.ndarray | None
    common_ok: np.ndarray
    private_bits: np.ndarray | None
    private_ok: np.ndarray
    sic_layers: int = 0
    subtracted: bool = False


def sic_receive(
    user: int,
    received: np.ndarray,
    channel: ChannelSet,
    precoders: PrecoderSet,
    plan: StreamPlan,
    genie_common: np.ndarray | None = None,
) -> ReceiverOutput:
    """Decode the common stream, cancel it, then decode the user's private stream.

    The receiver knows its true channel and all precoders. Silent streams
    contribute no interference. The common stream is cancelled only when
    every one of its codewords passes the CRC; otherwise the private
    stream is decoded against the full interference. ``genie_common``
    forces cancellation with the given transmitted common symbols.
    """
    h = channel.true_channels[user]
    sigma2 = float(channel.noise_vars[user])
    g_c = np.vdot(h, precoders.common)
    g_p = precoders.privates @ h.conj()  # h^H p_i for every private stream
    p_active = np.array([m is not None for m in plan.privates])
    y = np.asarray(received, dtype=np.complex128)

    out = ReceiverOutput(None, np.zeros(0, bool), None, np.zeros(0, bool))
    common_active = plan.common is not None and abs(g_c) > 0
    private_stage = plan.private_slots[user]
    cancelled = None
    # the decode-and-cancel stage exists whenever the user has both a common
    # and a private slot, even if the common stream is silent in this block
    if plan.common_slot and private_stage:
        out.sic_layers = 1
    if plan.common_slot and plan.common is not None:
        if common_active:
            interf = float(np.sum(np.abs(g_p[p_active]) ** 2))
            scale = abs(g_c) ** 2
            bits, ok = decode_stream(plan.common, y / g_c, sigma2 / scale, interf / scale)
        else:
            n_cw = codewords_per_stream(plan.common)
            bits = np.zeros((n_cw, plan.common.payload_bits), np.uint8)
            ok = np.zeros(n_cw, bool)
        out.common_bits, out.common_ok = bits, ok
        if private_stage:
            if genie_common is not None:
                cancelled = genie_common
            elif ok.all():
                cancelled = encode_stream(plan.common, bits)
    if cancelled is not None:
        y = y - g_c * cancelled
        out.subtracted = True

    mcs = plan.privates[user]
    if private_stage and mcs is not None:
        g_k = g_p[user]
        if abs(g_k) == 0:
            n_cw = codewords_per_stream(mcs)
            out.private_bits = np.zeros((n_cw, mcs.payload_bits), np.uint8)
            out.private_ok = np.zeros(n_cw, bool)
            return out
        others = p_active.copy()
        others[user] = False
        interf = float(np.sum(np.abs(g_p[others]) ** 2))
        if plan.common is not None and cancelled is None:
            interf += abs(g_c) ** 2
        scale = abs(g_k) ** 2
        out.private_bits, out.private_ok = decode_stream(mcs, y / g_k, sigma2 / scale, interf / scale)
    return out


@dataclass
class TrialRecord:
    """Channel uses and recovered information bits of one block."""

    channel_uses: int
    recovered_bits: np.ndarray
    addressed_bits: np.ndarray
    common_ok: list = field(default_factory=list)
    private_ok: list = field(default_factory=list)
    sic_layers: list = field(default_factory=list)
    subtracted: list = field(default_factory=list)
    mcs: dict = field(default_factory=dict)

    def flags(self) -> dict:
        return {
            "common_ok": [None if f is None else bool(f) for f in self.common_ok],
            "private_ok": [None if f is None else bool(f) for f in self.private_ok],
            "sic_layers": [int(v) for v in self.sic_layers],
            "subtracted": [bool(v) for v in self.subtracted],
        }


def _payload(seed: int, block: int, stream_index: int, mcs: Mcs) -> np.ndarray:
    rng = counter_rng(seed, block, Stream.PAYLOAD, stream_index)
    return rng.integers(0, 2, (codewords_per_stream(mcs), mcs.payload_bits), dtype=np.uint8)


def _noise(seed: int, block: int, user: int, sigma2: float) -> np.ndarray:
    rng = counter_rng(seed, block, Stream.NOISE, user)
    return np.sqrt(sigma2) * complex_gaussian(rng, SYMBOLS_PER_BLOCK)


def build_frames(
    plan: StreamPlan, seed: int, block: int
) -> tuple[list[MessageFrame], np.ndarray | None, list[np.ndarray | None]]:
    """Per-user message frames plus the common and private payload blocks."""
    k = plan.num_users
    common = _payload(seed, block, 0, plan.common) if plan.common is not None else None
    privates = [
        _payload(seed, block, 1 + i, m) if m is not None else None
        for i, m in enumerate(plan.privates)
    ]
    flat = common.reshape(-1) if common is not None else np.zeros(0, np.uint8)
    bounds = common_shares(flat.size, plan.common_split)
    frames = [
        MessageFrame(
            i,
            flat[bounds[i]: bounds[i + 1]],
            privates[i].reshape(-1) if privates[i] is not None else np.zeros(0, np.uint8),
        )
        for i in range(k)
    ]
    return frames, common, privates


def run_trial(
    channel: ChannelSet,
    precoders: PrecoderSet,
    plan: StreamPlan,
    seed: int,
    block: int,
    genie_common: bool = False,
) -> TrialRecord:
    """Transmit one block over the true channel and decode at every user.

    User k is credited with the bits of its common share that lie in
    codewords it decoded with a passing CRC, plus its private payload
    bits in passing codewords. A CRC pass with wrong bits earns nothing.
    """
    k = plan.num_users
    frames, common, privates = build_frames(plan, seed, block)
    m = channel.num_tx_antennas
    x = np.zeros((m, SYMBOLS_PER_BLOCK), dtype=np.complex128)
    s_common = None
    if common is not None:
        s_common = encode_stream(plan.common, common)
        x += np.outer(precoders.common, s_common)
    for i in range(k):
        if privates[i] is not None:
            x += np.outer(precoders.privates[i], encode_stream(plan.privates[i], privates[i]))

    flat_len = 0 if common is None else common.size
    bounds = common_shares(flat_len, plan.common_split)
    cw_bits = 0 if plan.common is None else plan.common.payload_bits
    rec = TrialRecord(
        SYMBOLS_PER_BLOCK,
        np.zeros(k, np.int64),
        np.array([f.common_part.size + f.private_part.size for f in frames], np.int64),
    )
    for user in range(k):
        h = channel.true_channels[user]
        y = h.conj() @ x + _noise(seed, block, user, float(channel.noise_vars[user]))
        out = sic_receive(
            user, y, channel, precoders, plan, s_common if genie_common else None
        )
        got = 0
        c_ok = None
        if common is not None:
            good = out.common_ok & np.all(out.common_bits == common, axis=1)
            c_ok = bool(out.common_ok.all())
            lo, hi = bounds[user], bounds[user + 1]
            for c in np.flatnonzero(good):
                a, b = c * cw_bits, (c + 1) * cw_bits
                got += max(0, min(b, hi) - max(a, lo))
        p_ok = None
        if privates[user] is not None and out.private_bits is not None:
            good = out.private_ok & np.all(out.private_bits == privates[user], axis=1)
            p_ok = bool(out.private_ok.all())
            got += int(good.sum()) * plan.privates[user].payload_bits
        rec.recovered_bits[user] = got
        rec.common_ok.append(c_ok)
        rec.private_ok.append(p_ok)
        rec.sic_layers.append(out.sic_layers)
        rec.subtracted.append(out.subtracted)
    rec.mcs = {
        "common": None if plan.common is None else plan.common.label,
        "private": [None if p is None else p.label for p in plan.privates],
    }
    return rec


def predicted_goodput(
    precoders: PrecoderSet, plan: StreamPlan, stack: np.ndarray, noise_vars: np.ndarray
) -> float:
    """Expected delivered bits per channel use judged on CSIT samples.

    A stream counts as delivered on a channel sample when its SINR there
    reaches the MCS threshold; the common stream must reach it at every
    user. Only transmitter-side samples are used, never the true channel.
    """
    gc, gp = stacked_sinrs(stack, noise_vars, precoders.common, precoders.privates)
    with np.errstate(divide="ignore"):
        gc_db = 10.0 * np.log10(gc)
        gp_db = 10.0 * np.log10(gp)
    total = 0.0
    if plan.common is not None:
        ok = np.all(gc_db >= plan.common.min_sinr_db, axis=1)
        total += plan.common.spectral_efficiency * float(np.mean(ok))
    for i, mcs in enumerate(plan.privates):
        if mcs is not None:
            total += mcs.spectral_efficiency * float(np.mean(gp_db[:, i] >= mcs.min_sinr_db))
    return total


def throughput(records: Sequence[TrialRecord]) -> float:
    """Total recovered bits over total channel uses."""
    uses = sum(r.channel_uses for r in records)
    if uses == 0:
        return 0.0
    return float(sum(int(r.recovered_bits.sum()) for r in records) / uses)
