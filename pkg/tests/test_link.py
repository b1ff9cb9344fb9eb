from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsmalink.model import ChannelSet, PrecoderSet
from rsmalink.phy.amc import Mcs
from rsmalink.phy.link import (
    SYMBOLS_PER_BLOCK,
    StreamPlan,
    codewords_per_stream,
    common_shares,
    credited_bits,
    decode_stream,
    encode_stream,
    interleaver,
    run_trial,
    sic_receive,
    throughput,
)

QPSK_HALF = Mcs(4, Fraction(1, 2), 0.0)
QAM16_HALF = Mcs(16, Fraction(1, 2), 6.0)
QAM64_HIGH = Mcs(64, Fraction(7, 8), 20.0)


def _orthogonal(noise=1e-3):
    h = np.eye(2, dtype=complex)
    return ChannelSet.perfect(h, np.full(2, noise))


def _rsma_precoders(common=0.6, private=0.35):
    pc = np.array([common, common], dtype=complex)
    pk = np.eye(2, dtype=complex) * private
    return PrecoderSet(pc, pk, np.array([0.5, 0.5]), 1.0)


class TestStreams:
    @pytest.mark.parametrize("mcs", [QPSK_HALF, QAM16_HALF, Mcs(256, Fraction(3, 4), 0)])
    def test_round_trip(self, mcs):
        rng = np.random.default_rng(mcs.modulation_order)
        payload = rng.integers(0, 2, (codewords_per_stream(mcs), mcs.payload_bits), dtype=np.uint8)
        sym = encode_stream(mcs, payload)
        assert sym.shape == (SYMBOLS_PER_BLOCK,)
        bits, ok = decode_stream(mcs, sym, 1e-4)
        assert ok.all()
        np.testing.assert_array_equal(bits, payload)

    @pytest.mark.parametrize("order,count", [(4, 1), (16, 2), (64, 3), (256, 4)])
    def test_codewords_fill_the_block(self, order, count):
        assert codewords_per_stream(Mcs(order, Fraction(1, 2), 0)) == count

    def test_interleaver_is_a_fixed_permutation(self):
        p = interleaver(16)
        assert sorted(p.tolist()) == list(range(512))
        assert p is interleaver(16)
        assert not np.array_equal(p, np.arange(512))

    def test_payload_shape_checked(self):
        with pytest.raises(ValueError):
            encode_stream(QPSK_HALF, np.zeros((2, 128), np.uint8))


class TestCredit:
    def test_full_credit_example(self):
        # common 100 bits split 0.5/0.5, 100 private bits each, everything decoded
        shares = np.diff(common_shares(100, [0.5, 0.5]))
        got = credited_bits(shares, [True, True], [100, 100], [True, True])
        np.testing.assert_array_equal(got, [150, 150])
        # with S = 256 channel uses the block contributes 300 / 256
        assert got.sum() / 256 == pytest.approx(300 / 256)

    def test_everything_fails(self):
        got = credited_bits([50, 50], [False, False], [100, 100], [False, False])
        np.testing.assert_array_equal(got, [0, 0])

    def test_other_users_share_is_excluded(self):
        got = credited_bits([30, 70], [True, True], [0, 0], [False, False])
        np.testing.assert_array_equal(got, [30, 70])

    @given(st.integers(0, 5000), st.lists(st.floats(0, 1), min_size=1, max_size=4))
    @settings(max_examples=200, deadline=None)
    def test_shares_partition_the_payload(self, total, split):
        b = common_shares(total, split)
        assert b[0] == 0
        assert np.all(np.diff(b) >= 0)
        assert b[-1] == (total if sum(split) > 0 else 0)

    def test_throughput_matches_independent_sum(self):
        h = _orthogonal()
        recs = [run_trial(h, _rsma_precoders(), StreamPlan(QPSK_HALF, (QAM16_HALF,) * 2, (0.3, 0.7)),
                          5, b) for b in range(6)]
        bits = 0
        uses = 0
        for r in recs:
            for d in r.recovered_bits.tolist():
                bits += d
            uses += r.channel_uses
        assert throughput(recs) == bits / uses

    def test_empty_throughput(self):
        assert throughput([]) == 0.0


class TestReceiver:
    def test_clean_channel_decodes_everything(self):
        plan = StreamPlan(QPSK_HALF, (QAM16_HALF, QAM16_HALF), (0.5, 0.5))
        rec = run_trial(_orthogonal(), _rsma_precoders(), plan, seed=1, block=0)
        np.testing.assert_array_equal(rec.recovered_bits, rec.addressed_bits)
        assert rec.common_ok == [True, True]
        assert rec.private_ok == [True, True]
        assert rec.subtracted == [True, True]
        # 128 common bits split evenly plus 2 codewords of 128 private bits
        np.testing.assert_array_equal(rec.recovered_bits, [64 + 256, 64 + 256])

    def test_common_failure_skips_subtraction(self):
        # common MCS far above what the common SINR supports
        plan = StreamPlan(QAM64_HIGH, (QPSK_HALF, QPSK_HALF), (0.5, 0.5))
        pre = _rsma_precoders(common=0.2, private=0.65)
        rec = run_trial(_orthogonal(1e-2), pre, plan, seed=3, block=0)
        assert rec.common_ok == [False, False]
        assert rec.subtracted == [False, False]
        assert rec.sic_layers == [1, 1]
        # private streams still decode against the full common interference
        assert rec.private_ok == [True, True]
        np.testing.assert_array_equal(rec.recovered_bits, [128, 128])

    def test_sic_counters(self):
        ch, pre = _orthogonal(), _rsma_precoders()
        rsma = run_trial(ch, pre, StreamPlan(QPSK_HALF, (QAM16_HALF,) * 2, (0.5, 0.5)), 1, 0)
        assert rsma.sic_layers == [1, 1]
        # NOMA with user 1 weak: its stream rides in the common slot
        noma_plan = StreamPlan(QPSK_HALF, (QAM16_HALF, None), (0.0, 1.0), private_slots=(True, False))
        noma = run_trial(ch, pre, noma_plan, 1, 0)
        assert noma.sic_layers == [1, 0]
        assert noma.private_ok[1] is None
        sdma_pre = PrecoderSet.sdma(np.eye(2, dtype=complex) * 0.7, 1.0)
        sdma = run_trial(ch, sdma_pre, StreamPlan(None, (QAM16_HALF,) * 2, (0.0, 0.0),
                                                  common_slot=False), 1, 0)
        assert sdma.sic_layers == [0, 0]
        assert sdma.common_ok == [None, None]

    def test_no_common_without_slot(self):
        with pytest.raises(ValueError):
            StreamPlan(QPSK_HALF, (None, None), (0.5, 0.5), common_slot=False)

    def test_silent_plan_recovers_nothing(self):
        rec = run_trial(_orthogonal(), _rsma_precoders(), StreamPlan(None, (None, None), (0.5, 0.5)),
                        1, 0)
        np.testing.assert_array_equal(rec.recovered_bits, [0, 0])
        np.testing.assert_array_equal(rec.addressed_bits, [0, 0])
        # the common slot still defines a stage, but nothing is cancelled
        assert rec.sic_layers == [1, 1]
        assert rec.subtracted == [False, False]

    def test_determinism(self):
        rng = np.random.default_rng(0)
        h = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        ch = ChannelSet.perfect(h, np.full(2, 0.05))
        plan = StreamPlan(QPSK_HALF, (QAM16_HALF,) * 2, (0.4, 0.6))
        a = [run_trial(ch, _rsma_precoders(), plan, 9, b) for b in range(4)]
        b = [run_trial(ch, _rsma_precoders(), plan, 9, b) for b in range(4)]
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.recovered_bits, y.recovered_bits)
            assert x.flags() == y.flags()

    @given(st.integers(0, 2**31), st.floats(0.01, 1.0))
    @settings(max_examples=25, deadline=None)
    def test_recovered_within_addressed(self, seed, noise):
        rng = np.random.default_rng(seed)
        h = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        ch = ChannelSet.perfect(h, np.full(2, noise))
        plan = StreamPlan(QPSK_HALF, (QAM16_HALF, QPSK_HALF), (0.25, 0.75))
        rec = run_trial(ch, _rsma_precoders(), plan, seed, 0)
        assert np.all(rec.recovered_bits >= 0)
        assert np.all(rec.recovered_bits <= rec.addressed_bits)
        # never more than the assigned spectral efficiencies
        se = QPSK_HALF.spectral_efficiency + QAM16_HALF.spectral_efficiency + QPSK_HALF.spectral_efficiency
        assert rec.recovered_bits.sum() <= se * SYMBOLS_PER_BLOCK

    def test_genie_cancellation_never_hurts(self):
        # near-threshold geometry so the common stream fails now and then
        plan = StreamPlan(QAM16_HALF, (QPSK_HALF, QPSK_HALF), (0.5, 0.5))
        pre = _rsma_precoders(common=0.55, private=0.4)
        errors = {False: 0, True: 0}
        trials = 1000
        for b in range(trials):
            rng = np.random.default_rng(b)
            h = np.eye(2) + 0.3 * (rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))
            ch = ChannelSet.perfect(h, np.full(2, 0.06))
            for genie in (False, True):
                rec = run_trial(ch, pre, plan, 11, b, genie_common=genie)
                errors[genie] += sum(not ok for ok in rec.private_ok)
        assert errors[True] <= errors[False]
        assert errors[False] > 0

    def test_receiver_direct(self):
        ch, pre = _orthogonal(), _rsma_precoders()
        plan = StreamPlan(QPSK_HALF, (QAM16_HALF,) * 2, (0.5, 0.5))
        y = np.zeros(SYMBOLS_PER_BLOCK, complex)
        out = sic_receive(0, y, ch, pre, plan)
        # silence on the air: decoding yields codewords but nothing gets cancelled
        assert out.sic_layers == 1
        assert out.common_bits.shape == (1, 128)
