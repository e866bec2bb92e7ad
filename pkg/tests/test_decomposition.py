import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dualnet_magpha.channels import FormatError
from dualnet_magpha.decomposition import (
    MDPQ_TABLES,
    MdpqTable,
    SignMatrix,
    circular_distance,
    decompose,
    mdpq_bin_bits,
    mdpq_decode,
    mdpq_encode,
    mdpq_quantize,
    mdpq_total_bits,
    n_transmitted,
    phase_bit_budget,
    place_signs,
    recombine,
    select_signs,
    sign_bits,
)

TABLE_1_8 = MdpqTable((0.0, 0.5, 0.7, 0.8, 0.9), (0, 0, 0, 3, 7))


def rand_csi(rng, shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def brute_force_bits(magnitude, table):
    """Rank every entry by sorting (ascending, ties by row-major index) and look up its bin."""
    flat = list(np.asarray(magnitude).ravel())
    n = len(flat)
    ranked = sorted(range(n), key=lambda i: (flat[i], i))
    out = [0] * n
    for r, i in enumerate(ranked):
        cdf = r / n
        b = 0
        for t, bits in zip(table.cdf_thresholds, table.bits_per_bin):
            if t <= cdf:
                b = bits
        out[i] = b
    return np.array(out).reshape(np.shape(magnitude))


class TestDecompose:
    def test_three_four_five(self):
        mag, cos, s = decompose(np.array([[3 + 4j]]))
        assert mag[0, 0] == 5 and cos[0, 0] == pytest.approx(0.6) and s.signs[0, 0] == 1

    def test_negative_imaginary(self):
        mag, cos, s = decompose(np.array([[-2j]]))
        assert mag[0, 0] == 2 and cos[0, 0] == 0 and s.signs[0, 0] == -1

    def test_zero_entry(self):
        mag, cos, s = decompose(np.zeros((1, 1)))
        assert mag[0, 0] == 0 and cos[0, 0] == 1 and s.signs[0, 0] == 1

    def test_all_transmitted(self):
        _, _, s = decompose(rand_csi(np.random.default_rng(0), (3, 4)))
        assert s.transmitted.all()

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (2, 3, 4), elements=st.floats(-1e3, 1e3)))
    def test_round_trip_property(self, parts):
        h = parts[0] + 1j * parts[1, :, :]
        h = np.where(np.abs(h) > 1e-6, h, 1.0 + 0j)
        mag, cos, s = decompose(h)
        assert np.all(mag >= 0) and np.all(np.abs(cos) <= 1)
        back = recombine(mag, cos, s)
        # sqrt(1 - c^2) loses about half the digits when the phase is within
        # ~1e-5 rad of 0 or pi, so those entries get a sqrt(eps)-level bound
        near_axis = np.abs(h.imag) < 1e-3 * mag
        err = np.abs(back - h)
        assert np.all(err[near_axis] <= 1e-7 * mag[near_axis])
        far = ~near_axis
        assert np.linalg.norm(err[far]) <= 1e-12 * np.linalg.norm(h[far]) + 1e-300

    def test_round_trip_gaussian(self):
        h = rand_csi(np.random.default_rng(5), (16, 64))
        back = recombine(*decompose(h))
        assert np.linalg.norm(back - h) <= 1e-12 * np.linalg.norm(h)


class TestSigns:
    def test_full_ratio_keeps_everything(self):
        h = rand_csi(np.random.default_rng(1), (4, 4))
        mag, _, s = decompose(h)
        sel = select_signs(s, mag, 1.0)
        assert sel.transmitted.all()
        np.testing.assert_array_equal(sel.signs, s.signs)

    def test_top_two(self):
        mag = np.array([[4.0, 3.0], [2.0, 1.0]])
        sel = select_signs(SignMatrix(-np.ones((2, 2)), np.ones((2, 2), bool)), mag, 0.5)
        assert sel.transmitted.tolist() == [[True, True], [False, False]]
        assert sel.signs.tolist() == [[-1, -1], [1, 1]]

    def test_ties_row_major(self):
        mag = np.ones((4, 4))
        sel = select_signs(SignMatrix(np.ones((4, 4)), np.ones((4, 4), bool)), mag, 0.25)
        assert sel.transmitted.ravel().tolist() == [True] * 4 + [False] * 12

    def test_bad_ratio(self):
        s = SignMatrix(np.ones((2, 2)), np.ones((2, 2), bool))
        for r in (0.0, -0.1, 1.01):
            with pytest.raises(ValueError):
                select_signs(s, np.ones((2, 2)), r)

    def test_ceil_count(self):
        assert n_transmitted(0.25, 16, 64) == 256
        assert n_transmitted(0.125, 16, 64) == 128
        assert n_transmitted(0.1, 3, 3) == 1
        # 0.3 * 10 is 3.0000000000000004 in floating point
        assert n_transmitted(0.3, 2, 5) == 3

    def test_bits_rank_order_and_genie_placement(self):
        h = np.array([[1 - 1j, -5 + 2j], [0.5 - 3j, 2 + 0.1j]])
        mag, _, s = decompose(h)
        bits = sign_bits(s, mag, 0.75)
        # ranks: 5.39 (+), 3.04 (-), 2.0 (+)
        assert bits.tolist() == [0, 1, 0]
        placed = place_signs(bits, mag, 0.75)
        sel = select_signs(s, mag, 0.75)
        np.testing.assert_array_equal(placed.signs, sel.signs)
        np.testing.assert_array_equal(placed.transmitted, sel.transmitted)

    def test_placement_with_wrong_ranking(self):
        mag = np.array([[3.0, 2.0, 1.0]])
        recovered = np.array([[2.0, 3.0, 1.0]])
        placed = place_signs(np.array([1, 0]), recovered, 2 / 3)
        # the bit meant for entry 0 lands on entry 1
        assert placed.signs.tolist() == [[1.0, -1.0, 1.0]]
        assert not np.array_equal(placed.signs, place_signs(np.array([1, 0]), mag, 2 / 3).signs)

    def test_wrong_bit_count(self):
        with pytest.raises(ValueError):
            place_signs(np.array([1]), np.ones((2, 2)), 0.5)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
    def test_monotone_in_ratio(self, seed, r1, r2):
        lo, hi = sorted((r1, r2))
        rng = np.random.default_rng(seed)
        mag = np.round(rng.random((4, 6)), 1)  # coarse values force ties
        s = SignMatrix(np.ones((4, 6)), np.ones((4, 6), bool))
        small = select_signs(s, mag, lo).transmitted
        big = select_signs(s, mag, hi).transmitted
        assert np.all(big[small])

    def test_batched_matches_single(self):
        rng = np.random.default_rng(2)
        h = rand_csi(rng, (3, 4, 5))
        mag, _, s = decompose(h)
        batch = sign_bits(s, mag, 0.3)
        for i in range(3):
            m1, _, s1 = decompose(h[i])
            np.testing.assert_array_equal(batch[i], sign_bits(s1, m1, 0.3))


class TestRecombine:
    def test_inverse_example(self):
        assert recombine(np.array([[5.0]]), np.array([[0.6]]), np.array([[1.0]]))[0, 0] == pytest.approx(3 + 4j)

    def test_unit_cosine_is_real(self):
        out = recombine(np.array([[2.0, 3.0]]), np.ones((1, 2)), np.array([[-1.0, 1.0]]))
        assert np.all(out.imag == 0)

    def test_slack_and_error(self):
        out = recombine(np.ones((1, 1)), np.array([[1 + 5e-7]]), np.ones((1, 1)))
        assert out[0, 0] == 1
        with pytest.raises(ValueError):
            recombine(np.ones((1, 1)), np.array([[1.01]]), np.ones((1, 1)))


class TestBudget:
    def test_full_size_budgets(self):
        b = phase_bit_budget(1 / 16, 8, 0.125, 16, 64)
        assert (b.codeword_bits, b.sign_bits, b.total_bits) == (512, 128, 640)
        assert b.bits_per_entry == 0.625
        b = phase_bit_budget(1 / 8, 8, 0.25, 16, 64)
        assert (b.codeword_bits, b.sign_bits, b.total_bits) == (1024, 256, 1280)
        assert b.bits_per_entry == 1.25

    def test_full_signs(self):
        assert phase_bit_budget(1 / 8, 8, 1.0, 16, 64).total_bits == 2048

    def test_invalid(self):
        with pytest.raises(ValueError):
            phase_bit_budget(0, 8, 0.25, 16, 64)
        with pytest.raises(ValueError):
            phase_bit_budget(1 / 8, 8, 1.5, 16, 64)
        with pytest.raises(ValueError):
            phase_bit_budget(1 / 8, 0, 0.25, 16, 64)


class TestMdpq:
    def test_table_validation(self):
        with pytest.raises(ValueError):
            MdpqTable((0.1, 0.5), (0, 1))
        with pytest.raises(ValueError):
            MdpqTable((0.0, 0.5, 0.5), (0, 1, 2))
        with pytest.raises(ValueError):
            MdpqTable((0.0,), (-1,))

    def test_zero_table(self):
        table = MdpqTable((0.0, 0.5), (0, 0))
        rng = np.random.default_rng(0)
        phase = rng.uniform(-np.pi, np.pi, (4, 4))
        stream = mdpq_encode(phase, rng.random((4, 4)), table)
        assert stream.size == 0
        assert not np.any(mdpq_decode(stream, rng.random((4, 4)), table))

    def test_top_bin_gets_seven_bits(self):
        mag = np.arange(20, dtype=float).reshape(4, 5)  # entry 19 sits at rank 19/20 = 0.95
        bits = mdpq_bin_bits(mag, TABLE_1_8)
        assert bits.ravel()[19] == 7
        phase = np.full((4, 5), 1.234)
        dec = mdpq_decode(mdpq_encode(phase, mag, TABLE_1_8), mag, TABLE_1_8)
        assert circular_distance(dec.ravel()[19], 1.234) <= np.pi / 2**7

    def test_bit_count_matches_brute_force(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            mag = np.round(rng.random((8, 8)), 2)
            expected = brute_force_bits(mag, TABLE_1_8)
            np.testing.assert_array_equal(mdpq_bin_bits(mag, TABLE_1_8), expected)
            stream = mdpq_encode(rng.uniform(-np.pi, np.pi, (8, 8)), mag, TABLE_1_8)
            assert stream.size == expected.sum()

    def test_total_bits_on_1024_entries(self):
        # ranks r/1024 put 102 entries in each of the two top bins, not 0.1 * 1024
        assert mdpq_total_bits(16, 64, TABLE_1_8) == 102 * 3 + 102 * 7 == 1020
        assert mdpq_total_bits(16, 64, MDPQ_TABLES[1 / 16]) == 102 * 5

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_error_bound_and_consistency(self, seed):
        rng = np.random.default_rng(seed)
        mag = rng.random((6, 7))
        phase = rng.uniform(-np.pi, np.pi, (6, 7))
        stream = mdpq_encode(phase, mag, TABLE_1_8)
        dec = mdpq_decode(stream, mag, TABLE_1_8)
        bits = mdpq_bin_bits(mag, TABLE_1_8)
        on = bits > 0
        assert np.all(circular_distance(dec[on], phase[on]) <= np.pi / 2.0 ** bits[on] + 1e-12)
        assert np.all(dec[~on] == 0)
        np.testing.assert_allclose(mdpq_quantize(phase[None], mag[None], TABLE_1_8)[0], dec, atol=1e-12)

    def test_stream_length_mismatch(self):
        mag = np.random.default_rng(0).random((4, 4))
        stream = mdpq_encode(np.zeros((4, 4)), mag, TABLE_1_8)
        with pytest.raises(FormatError):
            mdpq_decode(stream[:-1], mag, TABLE_1_8)

    def test_msb_first_row_major(self):
        table = MdpqTable((0.0, 0.5), (0, 2))
        mag = np.array([[1.0, 4.0], [3.0, 2.0]])  # ranks 0,3,2,1 -> top half: entries 1 and 2
        phase = np.array([[0.0, -np.pi / 2], [np.pi / 2, 0.0]])
        # 2-bit levels: -pi, -pi/2, 0, pi/2 -> indices 1 then 3
        assert mdpq_encode(phase, mag, table).tolist() == [0, 1, 1, 1]
