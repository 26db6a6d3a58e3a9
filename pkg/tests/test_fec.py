import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddbcjr.channel import ChannelConfig, build_joint_trellis
from ddbcjr.errors import InvalidInputError
from ddbcjr.fec import (NASA_K7, ConvCodeSpec, Interleaver, bits_to_symbols, coded_length,
                        conv_encode, deinterleave, free_distance, info_length, interleave,
                        is_catastrophic, soft_decode)
from ddbcjr.trellis import detect

# 171 and 133 octal written out bit by bit
G171 = (1, 1, 1, 1, 0, 0, 1)
G133 = (1, 0, 1, 1, 0, 1, 1)


def reference_encode(bits):
    """Shift-register encoder written from the binary generator expansions."""
    reg = [0] * 7
    out = []
    for b in list(bits) + [0] * 6:
        reg = [int(b)] + reg[:-1]
        out.append(sum(r & g for r, g in zip(reg, G171)) % 2)
        out.append(sum(r & g for r, g in zip(reg, G133)) % 2)
    return np.array(out, dtype=np.uint8)


def saturated(coded):
    return 50.0 * bits_to_symbols(coded)


def test_zero_input():
    assert conv_encode(np.zeros(10)).tolist() == [0] * coded_length(10)
    assert coded_length(10) == 2 * (10 + 6)


def test_impulse_response():
    out = conv_encode([1])
    expected = np.ravel(np.column_stack([G171, G133]))
    np.testing.assert_array_equal(out, expected)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=80))
def test_matches_shift_register(bits):
    np.testing.assert_array_equal(conv_encode(bits), reference_encode(bits))


def test_linearity():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        a, b = rng.integers(0, 2, n), rng.integers(0, 2, n)
        np.testing.assert_array_equal(conv_encode(a ^ b), conv_encode(a) ^ conv_encode(b))


def test_saturated_round_trip():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        bits = rng.integers(0, 2, int(rng.integers(1, 200)), dtype=np.uint8)
        np.testing.assert_array_equal(soft_decode(saturated(conv_encode(bits))), bits)


def test_long_frame_round_trip():
    bits = np.random.default_rng(2).integers(0, 2, 49_994, dtype=np.uint8)
    coded = conv_encode(bits)
    assert len(coded) == 100_000 and info_length(100_000) == 49_994
    np.testing.assert_array_equal(soft_decode(saturated(coded)), bits)


def test_corrects_sign_flips():
    rng = np.random.default_rng(3)
    for _ in range(200):
        bits = rng.integers(0, 2, 100, dtype=np.uint8)
        llr = saturated(conv_encode(bits))
        flips = rng.choice(len(llr), size=int(rng.integers(1, 3)), replace=False)
        llr[flips] *= -1
        np.testing.assert_array_equal(soft_decode(llr), bits)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_scale_invariance(seed, scale):
    rng = np.random.default_rng(seed)
    llr = rng.normal(0, 2, coded_length(40))
    np.testing.assert_array_equal(soft_decode(llr), soft_decode(scale * llr))


def test_length_mismatch():
    with pytest.raises(InvalidInputError):
        soft_decode(np.zeros(13))
    with pytest.raises(InvalidInputError):
        soft_decode(np.zeros(12))


def test_free_distance():
    assert free_distance(NASA_K7) == 10
    # brute-force oracle: minimum weight over short inputs that start with a 1
    best = min(int(reference_encode((1,) + tail).sum())
               for n in range(0, 12) for tail in itertools.product((0, 1), repeat=n))
    assert best == 10


def test_free_distance_small_codes():
    # (7, 5) K=3 has d_free 5; (15, 17) K=4 has d_free 6
    assert free_distance(ConvCodeSpec((0o7, 0o5), 3)) == 5
    assert free_distance(ConvCodeSpec((0o15, 0o17), 4)) == 6


def test_catastrophic_detection():
    assert not is_catastrophic(NASA_K7)
    # generators sharing the factor (1 + D) are catastrophic
    assert is_catastrophic(ConvCodeSpec((0o6, 0o5), 3))


def test_trellis_size():
    next_state, outputs = NASA_K7.trellis_tables()
    assert next_state.shape == (64, 2)
    assert sorted(np.bincount(next_state.ravel())) == [2] * 64


class TestInterleaver:
    def test_identity(self):
        x = np.arange(10)
        np.testing.assert_array_equal(interleave(x, Interleaver.identity(10)), x)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 500), st.integers(0, 2**31))
    def test_round_trip(self, n, seed):
        x = np.random.default_rng(seed).normal(size=n)
        ilv = Interleaver.random(n, seed)
        assert sorted(ilv.permutation.tolist()) == list(range(n))
        np.testing.assert_array_equal(deinterleave(interleave(x, ilv), ilv), x)

    def test_seeded(self):
        a, b = Interleaver.random(100, 5), Interleaver.random(100, 5)
        np.testing.assert_array_equal(a.permutation, b.permutation)

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            interleave(np.zeros(5), Interleaver.identity(6))
        with pytest.raises(InvalidInputError):
            deinterleave(np.zeros(5), Interleaver.identity(6))


def test_coded_awgn_waterfall():
    # inverse-variance SNR 5 dB at rate 1/2: Eb/N0 = 5 dB, far below 1e-5 BER for this code
    var = 10 ** -0.5
    rng = np.random.default_rng(4)
    bits = rng.integers(0, 2, 100_000, dtype=np.uint8)
    tx = bits_to_symbols(conv_encode(bits))
    rx = tx + np.sqrt(var) * rng.standard_normal(len(tx))
    trellis = build_joint_trellis(ChannelConfig.create(memory=1, levels=1, total_power=var))
    decoded = soft_decode(detect(trellis, rx).llr)
    assert np.count_nonzero(decoded != bits) / len(bits) < 1e-5
