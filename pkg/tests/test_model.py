from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsmalink.model import (
    ChannelSet,
    DimensionError,
    PrecoderSet,
    averaged_rate_report,
    rate_report,
    received_sample,
    sdma_rate_report,
    sinr_common,
    sinr_private,
    transmit_signal,
)

SQ2 = math.sqrt(2.0)


def _random_instance(seed, k=2, m=2, power=10.0):
    rng = np.random.default_rng(seed)
    h = rng.standard_normal((k, m)) + 1j * rng.standard_normal((k, m))
    pc = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    pk = rng.standard_normal((k, m)) + 1j * rng.standard_normal((k, m))
    scale = math.sqrt(power / (np.vdot(pc, pc).real + np.sum(np.abs(pk) ** 2)))
    split = rng.dirichlet(np.ones(k))
    noise = rng.uniform(0.5, 2.0, k)
    return ChannelSet.perfect(h, noise), PrecoderSet(pc * scale, pk * scale, split, power)


def _scalar_gain(h, p):
    # |sum_j conj(h_j) p_j|^2 with plain complex arithmetic
    acc = 0j
    for hj, pj in zip(h, p):
        acc += complex(hj).conjugate() * complex(pj)
    return acc.real**2 + acc.imag**2


def _oracle_sinrs(channel, pre, k):
    h = channel.true_channels[k]
    noise = float(channel.noise_vars[k])
    gains = [_scalar_gain(h, pre.privates[i]) for i in range(pre.num_users)]
    common = _scalar_gain(h, pre.common) / (sum(gains) + noise)
    private = gains[k] / (sum(g for i, g in enumerate(gains) if i != k) + noise)
    return common, private


class TestTransmitSignal:
    def test_zero_common(self):
        pre = PrecoderSet([0, 0], [[1, 0], [0, 1]], [0.5, 0.5], 2.0)
        np.testing.assert_array_equal(transmit_signal(pre, [0.7, 1, -1]), [1, -1])

    def test_single_stream(self):
        pre = PrecoderSet([1, 1], [[0, 0], [0, 0]], [1.0, 0.0], 2.0)
        np.testing.assert_array_equal(transmit_signal(pre, [2, 0, 0]), [2, 2])

    def test_direct_sum(self):
        pre = PrecoderSet([1, 0], [[0, 1], [1, 0]], [0.5, 0.5], 3.0)
        np.testing.assert_array_equal(transmit_signal(pre, [1, 1, 1]), [2, 1])

    def test_symbol_count_mismatch(self):
        pre = PrecoderSet([1, 0], [[0, 1], [1, 0]], [0.5, 0.5], 3.0)
        with pytest.raises(DimensionError, match="expected 3 symbols"):
            transmit_signal(pre, [1, 1])


class TestReceivedSample:
    def test_unit_channel(self):
        ch = ChannelSet.perfect([[1, 0]])
        assert received_sample(ch, 0, [3, 5]) == 3

    def test_hermitian_convention(self):
        ch = ChannelSet.perfect([[0, 1j]])
        assert received_sample(ch, 0, [1, 1]) == -1j

    def test_noise_only(self):
        ch = ChannelSet.perfect([[1, 0]])
        assert received_sample(ch, 0, [0, 0], noise=0.5) == 0.5

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            received_sample(ChannelSet.perfect([[1, 0]]), 1, [0, 0])


class TestSinr:
    ortho = ChannelSet.perfect([[1, 0], [0, 1]])
    pre = PrecoderSet([SQ2, 0], [[1, 0], [0, 1]], [0.5, 0.5], 4.0)

    def test_orthogonal_common(self):
        assert sinr_common(self.ortho, self.pre, 0) == pytest.approx(1.0, abs=1e-15)
        assert sinr_common(self.ortho, self.pre, 1) == 0.0

    def test_zero_common_numerator(self):
        pre = PrecoderSet.sdma([[1, 0], [0, 1]], 2.0)
        assert sinr_common(self.ortho, pre, 0) == 0.0
        assert sinr_common(self.ortho, pre, 1) == 0.0

    def test_zero_forcing_private(self):
        p = 50.0
        pre = PrecoderSet.sdma([[math.sqrt(p), 0], [0, math.sqrt(p)]], 2 * p)
        assert sinr_private(self.ortho, pre, 0) == pytest.approx(p, rel=1e-15)

    def test_zero_private_numerator(self):
        pre = PrecoderSet.sdma([[0, 0], [0, 1]], 1.0)
        assert sinr_private(self.ortho, pre, 0) == 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_term_by_term_oracle(self, seed):
        ch, pre = _random_instance(seed)
        for k in range(2):
            oc, op = _oracle_sinrs(ch, pre, k)
            assert sinr_common(ch, pre, k) == pytest.approx(oc, rel=1e-12)
            assert sinr_private(ch, pre, k) == pytest.approx(op, rel=1e-12)


class TestRateReport:
    def test_min_with_zero_user(self):
        rep = rate_report(TestSinr.ortho, TestSinr.pre)
        assert rep.rate_common == 0.0
        np.testing.assert_array_equal(rep.common_portions, [0.0, 0.0])
        np.testing.assert_array_equal(rep.rate_total, rep.rate_private)

    def test_single_user_matched_filter(self):
        h = np.array([[0.3 - 1.1j, 2.0 + 0.5j]])
        p = 7.0
        mf = math.sqrt(p) * h / np.linalg.norm(h)
        rep = rate_report(ChannelSet.perfect(h), PrecoderSet([0, 0], mf, [1.0], p))
        assert rep.rate_total[0] == pytest.approx(math.log2(1 + p * np.linalg.norm(h) ** 2))

    @pytest.mark.parametrize("seed", range(5))
    def test_compositional_oracle(self, seed):
        ch, pre = _random_instance(seed)
        rep = rate_report(ch, pre)
        terms = [_oracle_sinrs(ch, pre, k) for k in range(2)]
        rc = min(math.log2(1 + c) for c, _ in terms)
        assert rep.rate_common == pytest.approx(rc, rel=1e-12)
        for k, (_, p) in enumerate(terms):
            assert rep.rate_private[k] == pytest.approx(math.log2(1 + p), rel=1e-12)
            assert rep.common_portions[k] == pytest.approx(pre.common_split[k] * rc, rel=1e-12)
        assert rep.metadata["rate_convention"] == "instantaneous"

    def test_sdma_restriction_bit_identical(self):
        ch, pre = _random_instance(3)
        sdma = sdma_rate_report(ch, pre.privates, pre.power_budget)
        zero_common = rate_report(ch, PrecoderSet(np.zeros(2), pre.privates, [0.5, 0.5], 10.0))
        assert sdma.rate_common == 0.0
        np.testing.assert_array_equal(sdma.rate_total, zero_common.rate_total)
        np.testing.assert_array_equal(sdma.rate_private, zero_common.rate_private)


class TestAveragedReport:
    def test_singleton_matches_instantaneous(self):
        ch, pre = _random_instance(1)
        a = averaged_rate_report([ch], pre)
        b = rate_report(ch, pre)
        assert a.identical_to(b)
        assert a.metadata["rate_convention"] == "mean-of-rates"

    def test_duplicate_samples(self):
        ch, pre = _random_instance(2)
        a = averaged_rate_report([ch, ch], pre)
        b = rate_report(ch, pre)
        np.testing.assert_allclose(a.rate_total, b.rate_total, rtol=1e-15)
        assert a.rate_common == pytest.approx(b.rate_common, rel=1e-15)

    def test_per_sample_oracle(self):
        rng = np.random.default_rng(9)
        _, pre = _random_instance(4)
        samples = [
            ChannelSet.perfect(rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))
            for _ in range(64)
        ]
        rep = averaged_rate_report(samples, pre)
        rc_terms = np.zeros(2)
        rp_terms = np.zeros(2)
        for s in samples:
            for k in range(2):
                c, p = _oracle_sinrs(s, pre, k)
                rc_terms[k] += math.log2(1 + c) / 64
                rp_terms[k] += math.log2(1 + p) / 64
        assert rep.rate_common == pytest.approx(rc_terms.min(), rel=1e-12)
        np.testing.assert_allclose(rep.rate_private, rp_terms, rtol=1e-12)

    def test_empty(self):
        _, pre = _random_instance(0)
        with pytest.raises(ValueError, match="at least one"):
            averaged_rate_report([], pre)


class TestValidation:
    def test_power_budget(self):
        with pytest.raises(ValueError, match="exceeds budget"):
            PrecoderSet([1, 0], [[1, 0], [0, 1]], [0.5, 0.5], 2.0)
        PrecoderSet([1, 0], [[1, 0], [0, 1]], [0.5, 0.5], 3.0 / (1 + 5e-10))

    def test_split_sum(self):
        with pytest.raises(ValueError, match="sum to 1"):
            PrecoderSet([1, 0], [[1, 0], [0, 1]], [0.5, 0.4], 3.0)

    def test_zero_split_needs_zero_common(self):
        with pytest.raises(ValueError):
            PrecoderSet([1, 0], [[1, 0], [0, 1]], [0.0, 0.0], 3.0)

    def test_channel_shapes(self):
        with pytest.raises(DimensionError):
            ChannelSet([[1, 0]], [[1, 0, 0]], [[0, 0]])

    def test_mismatched_precoder(self):
        ch = ChannelSet.perfect([[1, 0, 0], [0, 1, 0]])
        with pytest.raises(DimensionError, match="antennas"):
            sinr_common(ch, TestSinr.pre, 0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.01, 100.0))
def test_sinr_scale_invariance(seed, scale):
    ch, pre = _random_instance(seed)
    scaled = ChannelSet.perfect(ch.true_channels * scale, ch.noise_vars * scale**2)
    for k in range(2):
        assert sinr_common(scaled, pre, k) == pytest.approx(sinr_common(ch, pre, k), rel=1e-9)
        assert sinr_private(scaled, pre, k) == pytest.approx(sinr_private(ch, pre, k), rel=1e-9)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_min_rule(seed):
    ch, pre = _random_instance(seed)
    rep = rate_report(ch, pre)
    terms = np.log2(1 + rep.sinr_common)
    assert np.all(rep.rate_common <= terms)
    assert np.any(rep.rate_common == terms)
    assert rep.common_portions.sum() == pytest.approx(rep.rate_common, abs=1e-9)
    np.testing.assert_array_equal(rep.rate_total, rep.common_portions + rep.rate_private)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), gain=st.floats(1.0, 10.0))
def test_common_power_monotonicity(seed, gain):
    ch, pre = _random_instance(seed, power=10.0)
    louder = PrecoderSet(pre.common * gain, pre.privates, pre.common_split, 10.0 * gain**2)
    for k in range(2):
        assert sinr_common(ch, louder, k) >= sinr_common(ch, pre, k)
        assert sinr_private(ch, louder, k) <= sinr_private(ch, pre, k) * (1 + 1e-15)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_power_accounting(seed):
    _, pre = _random_instance(seed)
    assert pre.transmit_power <= pre.power_budget * (1 + 1e-9)
