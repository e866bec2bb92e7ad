import dataclasses

import numpy as np
import pytest

from dualnet_magpha import decomposition as dec
from dualnet_magpha.autodiff import Tensor, gradient_check
from dualnet_magpha.model import (
    DualNetModel,
    FeedbackPayload,
    FrameworkConfig,
    complex_mse,
    loss_magnitude,
    loss_mdpp,
    loss_naive,
    loss_smdp,
)

SMALL = dict(q_t=4, n_b=8, kernel=3)


def rand_csi(rng, *shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def zero_combiner(model):
    for _, t in model.combiner:
        t.data = np.zeros_like(t.data)


def direct_complex_error(h, mag_hat, cos_hat, signs):
    est = mag_hat * (cos_hat + 1j * signs * np.sqrt(1 - cos_hat**2))
    return np.sum(np.abs(h - est) ** 2)


class TestConfig:
    def test_full_size_codeword_lengths(self):
        c = FrameworkConfig()
        assert c.mag_codeword_len == 256
        assert c.phase_codeword_len == 128
        assert dataclasses.replace(c, cr_pha=1 / 16).phase_codeword_len == 64
        blq = dataclasses.replace(c, quantizer_kind="blq")
        assert blq.phase_codeword_len == 1024 and blq.phase_bits == 1

    def test_validation(self):
        for bad in (dict(cr_pha=0), dict(r_s=1.5), dict(k_pha=0), dict(core_kind="rnn"),
                    dict(quantizer_kind="x"), dict(phase_method="x"), dict(q_f=0)):
            with pytest.raises(ValueError):
                FrameworkConfig(**bad)

    def test_dict_round_trip(self):
        c = FrameworkConfig.desk(mag_scale=0.1, genie_signs=True)
        assert FrameworkConfig.from_dict(c.to_dict()) == c

    def test_feedback_bits(self):
        assert FrameworkConfig().phase_feedback_bits() == 1280
        assert FrameworkConfig(cr_pha=1 / 16, r_s=0.125).phase_feedback_bits() == 640
        assert FrameworkConfig(phase_method="naive").phase_feedback_bits() == 1024


class TestLosses:
    def test_magnitude(self):
        rng = np.random.default_rng(0)
        m = rng.random((4, 8))
        assert loss_magnitude(m, m).item() == 0
        assert loss_magnitude(m + 1, m).item() == pytest.approx(32)
        a, b = np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[0.5, 2.5], [1.0, 4.0]])
        assert loss_magnitude(a, b).item() == pytest.approx(0.25 + 0.25 + 4.0)

    def test_magnitude_is_batch_mean(self):
        a = np.ones((3, 2, 2))
        assert loss_magnitude(a + 1, a).item() == pytest.approx(4.0)

    def test_naive(self):
        rng = np.random.default_rng(1)
        h = rand_csi(rng, 4, 8)
        mag, ph = np.abs(h), np.angle(h)
        assert loss_naive(h, mag, ph).item() == pytest.approx(0, abs=1e-20)
        m = np.full((2, 3), 1.5)
        assert loss_naive(m + 0j, m, np.full((2, 3), np.pi)).item() == pytest.approx(4 * np.sum(m**2))
        mh, th = rng.random((4, 8)), rng.uniform(-3, 3, (4, 8))
        assert loss_naive(h, mh, th).item() == pytest.approx(np.sum(np.abs(h - mh * np.exp(1j * th)) ** 2), rel=1e-12)

    def test_mdpp(self):
        rng = np.random.default_rng(2)
        ph, mag = rng.uniform(-3, 3, (4, 8)), rng.random((4, 8))
        assert loss_mdpp(ph, ph, mag).item() == 0
        assert loss_mdpp(ph + 0.2, ph, np.ones((4, 8))).item() == pytest.approx(32 * 0.04)
        other = rng.uniform(-3, 3, (4, 8))
        assert loss_mdpp(other, ph, mag).item() == pytest.approx(np.sum(((other - ph) * mag) ** 2), rel=1e-12)

    def test_mdpp_does_not_wrap(self):
        # pi and -pi are the same angle but the raw difference is 2*pi
        assert loss_mdpp(np.array([[np.pi]]), np.array([[-np.pi]]), np.ones((1, 1))).item() == pytest.approx(4 * np.pi**2)

    def test_smdp_perfect_and_zero_magnitude(self):
        rng = np.random.default_rng(3)
        h = rand_csi(rng, 4, 8)
        mag, cos, s = dec.decompose(h)
        assert loss_smdp(h, mag, cos, s).item() == pytest.approx(0, abs=1e-20)
        zero = np.zeros((4, 8))
        assert loss_smdp(zero, zero, rng.uniform(-1, 1, (4, 8)), s).item() == 0

    def test_smdp_equals_complex_error(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            h = rand_csi(rng, 4, 4)
            _, _, s = dec.decompose(h)
            mh, ch = rng.random((4, 4)) * 2, rng.uniform(-1, 1, (4, 4))
            want = direct_complex_error(h, mh, ch, s.signs)
            assert loss_smdp(h, mh, ch, s).item() == pytest.approx(want, rel=1e-10)

    def test_losses_are_nonnegative(self):
        rng = np.random.default_rng(5)
        h = rand_csi(rng, 2, 4, 8)
        mh, x = rng.random((2, 4, 8)), rng.uniform(-1, 1, (2, 4, 8))
        s = np.where(rng.random((2, 4, 8)) < 0.5, -1.0, 1.0)
        for v in (loss_smdp(h, mh, x, s), loss_naive(h, mh, x), loss_mdpp(x, np.angle(h), mh),
                  loss_magnitude(mh, np.abs(h)), complex_mse(h, Tensor(mh), Tensor(x))):
            assert v.item() >= 0

    def test_loss_gradients(self):
        rng = np.random.default_rng(6)
        h = rand_csi(rng, 2, 4, 8)
        _, _, s = dec.decompose(h)
        mh = Tensor(rng.random((2, 4, 8)) + 0.1)
        ch = Tensor(rng.uniform(-0.9, 0.9, (2, 4, 8)))
        th = Tensor(rng.uniform(-3, 3, (2, 4, 8)))
        assert gradient_check(lambda: loss_smdp(h, mh, ch, s), [mh, ch]).passed
        assert gradient_check(lambda: loss_naive(h, mh, th), [mh, th]).passed
        assert gradient_check(lambda: loss_mdpp(th, np.angle(h), np.abs(h)), [th]).passed
        assert gradient_check(lambda: loss_magnitude(mh, np.abs(h)), [mh]).passed


class TestArchitecture:
    def test_codeword_shapes_and_grid(self):
        m = DualNetModel(FrameworkConfig.desk())
        rng = np.random.default_rng(7)
        mag = rng.random((8, 32))
        code = m.mag_encode(mag)
        assert code.shape == (64,)
        np.testing.assert_allclose(code.data * 255, np.rint(code.data * 255), atol=1e-9)
        pcode = m.phase_encode(rng.uniform(-1, 1, (8, 32)))
        assert pcode.shape == (32,)
        np.testing.assert_allclose(pcode.data * 255, np.rint(pcode.data * 255), atol=1e-9)

    def test_full_size_phase_codewords(self):
        m = DualNetModel(FrameworkConfig())
        cos = np.random.default_rng(8).uniform(-1, 1, (16, 64))
        assert m.phase_encode(cos).shape == (128,)
        blq = DualNetModel(FrameworkConfig(quantizer_kind="blq"))
        code = blq.phase_encode(cos).data
        assert code.shape == (1024,) and set(np.unique(code)) <= {0.0, 1.0}

    def test_mag_decode_contracts(self):
        m = DualNetModel(FrameworkConfig(**SMALL))
        rng = np.random.default_rng(9)
        code = m.mag_encode(rng.random((4, 8)))
        ul = rng.random((4, 8))
        out = m.mag_decode(code, ul).data
        assert out.shape == (4, 8) and np.all(out >= 0)
        moved = m.mag_decode(code, ul + 0.5 * rng.random((4, 8))).data
        assert np.max(np.abs(moved - out)) > 0

    def test_phase_decode_contracts(self):
        m = DualNetModel(FrameworkConfig(**SMALL))
        rng = np.random.default_rng(10)
        code = m.phase_encode(rng.uniform(-1, 1, (4, 8)))
        signs = np.where(rng.random((4, 8)) < 0.5, -1.0, 1.0)
        out = m.phase_decode(code, signs).data
        assert out.shape == (4, 8) and np.all(np.abs(out) < 1)
        flipped = signs.copy()
        flipped[1, 2] *= -1
        assert not np.array_equal(m.phase_decode(code, flipped).data, out)

    def test_shape_and_length_errors(self):
        m = DualNetModel(FrameworkConfig(**SMALL))
        with pytest.raises(ValueError):
            m.mag_encode(np.ones((5, 8)))
        with pytest.raises(ValueError):
            m.mag_decode(np.ones(3), np.ones((4, 8)))
        with pytest.raises(ValueError):
            m.phase_decode(np.ones(3), np.ones((4, 8)))
        with pytest.raises(ValueError):
            m.phase_encode(np.full((4, 8), 1.5))
        with pytest.raises(ValueError):
            m.combine(np.ones((4, 8)), np.ones((4, 7)), np.ones((4, 8)))

    def test_combine_residual_identity(self):
        m = DualNetModel(FrameworkConfig(**SMALL))
        rng = np.random.default_rng(11)
        h = rand_csi(rng, 4, 8)
        mag, cos, s = dec.decompose(h)
        re, im = m.combine(mag, cos, s)
        np.testing.assert_allclose(re.data + 1j * im.data, h, atol=1e-12)
        mh, ch = rng.random((4, 8)), rng.uniform(-1, 1, (4, 8))
        re, im = m.combine(mh, ch, s)
        np.testing.assert_array_equal(re.data + 1j * im.data, dec.recombine(mh, ch, s))
        re, im = m.combine(np.zeros((4, 8)), ch, s)
        assert not np.any(re.data) and not np.any(im.data)

    def test_sign_mask_channel(self):
        m = DualNetModel(FrameworkConfig(sign_mask_channel=True, **SMALL))
        assert m.specs["phase_decoder"][0].c_in == 3
        rng = np.random.default_rng(12)
        h = rand_csi(rng, 4, 8)
        mag, cos, s = dec.decompose(h)
        code = m.phase_encode(cos)
        assert m.phase_decode(code, dec.select_signs(s, mag, 0.25)).shape == (4, 8)

    def test_dense_core_parameter_ratio(self):
        counts = {}
        for kind in ("dense", "circular-conv"):
            c = DualNetModel(FrameworkConfig(core_kind=kind)).parameter_counts()
            counts[kind] = c["phase_encoder"] + c["phase_decoder"]
        assert counts["dense"] >= 5 * counts["circular-conv"]

    def test_init_determinism(self):
        a = DualNetModel(FrameworkConfig(**SMALL, seed=3)).state()
        b = DualNetModel(FrameworkConfig(**SMALL, seed=3)).state()
        assert all(np.array_equal(a[k], b[k]) for k in a)


class TestForward:
    @pytest.mark.parametrize("method", ["smdp", "naive", "mdpp", "mdpq"])
    def test_forward_contracts(self, method):
        c = FrameworkConfig.desk(phase_method=method)
        m = DualNetModel(c)
        rng = np.random.default_rng(13)
        h = rand_csi(rng, 3, 8, 32)
        ul = np.abs(rand_csi(rng, 3, 8, 32))
        est, payloads = m.forward(h, ul)
        assert est.shape == h.shape and len(payloads) == 3
        est2, _ = m.forward(h, ul)
        np.testing.assert_array_equal(est, est2)
        p = payloads[0]
        assert p.phase_bit_length == c.phase_feedback_bits()
        assert p.bit_length == c.mag_codeword_len * c.k_mag + c.phase_feedback_bits()
        back = FeedbackPayload.deserialize(p.serialize(), c)
        np.testing.assert_array_equal(back.bit_list(), p.bit_list())
        assert len(p.serialize()) == -(-p.bit_length // 8)

    def test_payload_matches_bit_budget(self):
        c = FrameworkConfig.desk()
        m = DualNetModel(c)
        rng = np.random.default_rng(14)
        est, p = m.forward(rand_csi(rng, 8, 32), np.abs(rand_csi(rng, 8, 32)))
        budget = dec.phase_bit_budget(c.cr_pha, c.k_pha, c.r_s, c.q_t, c.n_b)
        assert p.phase_bit_length == budget.total_bits
        assert est.shape == (8, 32)

    def test_sign_bits_in_payload(self):
        c = FrameworkConfig.desk()
        m = DualNetModel(c)
        rng = np.random.default_rng(15)
        h = rand_csi(rng, 8, 32)
        _, p = m.forward(h, np.abs(h))
        mag, _, s = dec.decompose(h)
        np.testing.assert_array_equal(p.sign_bits, dec.sign_bits(s, mag, c.r_s))

    def test_deserialize_length_error(self):
        c = FrameworkConfig.desk()
        with pytest.raises(ValueError):
            FeedbackPayload.deserialize(b"\x00" * 3, c)

    def test_full_network_gradients(self):
        c = FrameworkConfig(q_t=4, n_b=8, kernel=7)
        m = DualNetModel(c)
        rng = np.random.default_rng(16)
        h = rand_csi(rng, 2, 4, 8)
        mag, cos, s = dec.decompose(h)
        params = [t for _, t in m.named_parameters(("phase_encoder", "phase_decoder"))]

        def f():
            cos_hat = m.phase_decode(m.phase_encode(cos, training=True), s)
            return loss_smdp(h, mag, cos_hat, s)

        rep = gradient_check(f, params, max_entries=6, rng=np.random.default_rng(0))
        assert rep.max_rel_error < 1e-3, rep
