"""Denoiser checks: layout oracle, zero-tail identity, conv references, dual routes."""

import json

import numpy as np
import pytest

from gsct import autodiff as ad
from gsct import denoiser as dn
from gsct.core import ImageGrid
from gsct.errors import ArgumentError, FormatError


def rand_image(seed, h, w, scale=0.1):
    return scale * np.random.default_rng(seed).random((h, w))


class TestLayout:
    def test_tiny_parameter_count_by_hand(self):
        # channels (2,2), one conv per level, k=3:
        #   enc0 (2,9)+2=20, down1 (2,18)+2=38, enc1 (2,18)+2=38,
        #   up1 (2,18)+2=38, dec0 (2,18)+2=38, tail (1,18)+1=19  -> 191
        spec = dn.NetworkSpec(channels=(2, 2), convs_per_level=1)
        model = dn.DenoiserModel.fresh(spec, seed=0)
        assert model.num_params == 191

    def test_default_parameter_count_by_hand(self):
        # channels (16,32), two convs per level, k=3: summed per layer below
        #   enc0: 160 + 2320; down1: 4640; enc1: 9248 * 2; up1: 4624;
        #   dec0: 2320 * 2; tail: 145  -> 35025
        model = dn.DenoiserModel.fresh(dn.NetworkSpec(), seed=0)
        assert model.num_params == 35025

    def test_layout_shapes(self):
        spec = dn.NetworkSpec(channels=(2, 2), convs_per_level=1)
        layout = dict(dn.parameter_layout(spec))
        assert layout["enc0.conv0.w"] == (2, 9)
        assert layout["down1.w"] == (2, 18)
        assert layout["tail.w"] == (1, 18)
        assert layout["tail.b"] == (1,)

    def test_flat_round_trip(self):
        spec = dn.NetworkSpec(channels=(2, 2), convs_per_level=1)
        model = dn.DenoiserModel.fresh(spec, seed=4, sigma=0.02)
        back = dn.DenoiserModel.from_flat(spec, model.flat_weights(), sigma=0.02)
        assert back.sigma == model.sigma
        for name in model.params:
            assert np.array_equal(back.params[name], model.params[name])

    def test_from_flat_length_checked(self):
        spec = dn.NetworkSpec(channels=(2, 2), convs_per_level=1)
        with pytest.raises(ArgumentError):
            dn.DenoiserModel.from_flat(spec, np.zeros(190, np.float32))

    def test_spec_validation(self):
        with pytest.raises(ArgumentError):
            dn.NetworkSpec(channels=())
        with pytest.raises(ArgumentError):
            dn.NetworkSpec(kernel_size=4)
        with pytest.raises(ArgumentError):
            dn.NetworkSpec(beta=0.0)
        with pytest.raises(ArgumentError):
            dn.NetworkSpec(convs_per_level=0)
        with pytest.raises(ArgumentError):
            dn.NetworkSpec(in_channels=1, out_channels=2, global_residual=True)

    def test_spec_dict_round_trip(self):
        spec = dn.NetworkSpec(channels=(4, 8, 8), convs_per_level=3, kernel_size=5, beta=7.0)
        assert dn.NetworkSpec.from_dict(spec.to_dict()) == spec
        with pytest.raises(FormatError):
            dn.NetworkSpec.from_dict({"channels": [4]})

    def test_model_param_validation(self):
        spec = dn.NetworkSpec(channels=(2, 2), convs_per_level=1)
        params = dn.init_weights(spec, 0)
        missing = dict(params)
        missing.pop("tail.w")
        with pytest.raises(ArgumentError):
            dn.DenoiserModel(spec, missing)
        bad_shape = dict(params)
        bad_shape["tail.w"] = np.zeros((2, 18), np.float32)
        with pytest.raises(ArgumentError):
            dn.DenoiserModel(spec, bad_shape)
        with pytest.raises(ArgumentError):
            dn.DenoiserModel(spec, params, sigma=-1.0)


class TestInit:
    def test_biases_zero_every_weight_drawn(self):
        # a zero tail would pin training at a stationary point, so no
        # weight tensor may start at zero (see init_weights)
        params = dn.init_weights(dn.NetworkSpec(channels=(2, 2), convs_per_level=1), seed=1)
        for name, arr in params.items():
            if name.endswith(".b"):
                assert np.all(arr == 0.0), name
            else:
                assert np.any(arr != 0.0), name

    def test_seed_determinism(self):
        spec = dn.NetworkSpec(channels=(2, 2), convs_per_level=1)
        a = dn.init_weights(spec, seed=7)
        b = dn.init_weights(spec, seed=7)
        c = dn.init_weights(spec, seed=8)
        for name in a:
            assert np.array_equal(a[name], b[name])
        assert any(not np.array_equal(a[n], c[n]) for n in a)

    def test_zero_tail_model_is_identity(self, identity_model):
        x = rand_image(3, 12, 12)
        out = dn.network_forward(x, identity_model)
        assert np.array_equal(out, x)

    def test_zero_tail_regularizer_vanishes(self, identity_model):
        x = rand_image(4, 10, 14)
        ev = dn.regularizer(x, identity_model)
        assert ev.value == 0.0
        assert np.all(ev.gradient == 0.0)
        d = dn.gradient_step_denoise(x, identity_model)
        assert np.array_equal(d, x)


class TestConvOracle:
    def ref_conv(self, x, w, b, k, stride):
        from scipy.signal import correlate2d

        B, C, H, W = x.shape
        cout = w.shape[0]
        p = k // 2
        wk = w.reshape(cout, C, k, k)
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), mode="reflect")
        ho = (H + 2 * p - k) // stride + 1
        wo = (W + 2 * p - k) // stride + 1
        out = np.zeros((B, cout, ho, wo))
        for bi in range(B):
            for co in range(cout):
                acc = sum(
                    correlate2d(xp[bi, c], wk[co, c], mode="valid") for c in range(C)
                )
                out[bi, co] = acc[::stride, ::stride] + b[co]
        return out

    @pytest.mark.parametrize("stride", [1, 2])
    @pytest.mark.parametrize("shape", [(6, 5), (8, 8), (7, 9)])
    def test_conv2d_matches_scipy(self, stride, shape):
        gen = np.random.default_rng(5)
        h, w = shape
        x = gen.normal(size=(2, 2, h, w))
        wt = gen.normal(size=(3, 2 * 9))
        b = gen.normal(size=3)
        got = dn._conv2d(ad.constant(x), ad.constant(wt), ad.constant(b), k=3, stride=stride)
        want = self.ref_conv(x, wt, b, 3, stride)
        np.testing.assert_allclose(got.value, want, rtol=1e-12, atol=1e-12)

    def test_upsample_matches_repeat(self):
        gen = np.random.default_rng(6)
        x = gen.normal(size=(2, 3, 4, 5))
        got = dn._upsample2(ad.constant(x)).value
        want = np.repeat(np.repeat(x, 2, axis=-2), 2, axis=-1)
        np.testing.assert_array_equal(got, want)

    def test_reflection_pad_oracle(self):
        x = np.arange(6, dtype=np.float64).reshape(1, 1, 2, 3)
        got = dn._pad_bottom_right(ad.constant(x), 1, 1).value
        want = np.pad(x, ((0, 0), (0, 0), (0, 1), (0, 1)), mode="reflect")
        np.testing.assert_array_equal(got, want)

    def test_kernel_too_large_rejected(self):
        with pytest.raises(ArgumentError):
            dn._conv_plan(1, 2, 2, 5, 1)


class TestForward:
    def test_non_divisor_shapes_supported(self, tiny_model):
        for shape in [(13, 21), (16, 16), (9, 8)]:
            x = rand_image(8, *shape)
            out = dn.network_forward(x, tiny_model)
            assert out.shape == shape
            assert np.all(np.isfinite(out))

    def test_deterministic(self, tiny_model):
        x = rand_image(9, 16, 16)
        a = dn.network_forward(x, tiny_model)
        b = dn.network_forward(x, tiny_model)
        assert np.array_equal(a, b)

    def test_image_grid_container(self, tiny_model):
        grid = ImageGrid.from_array(rand_image(10, 12, 12).astype(np.float32), 0.3, origin=(1.0, 2.0))
        out = dn.network_forward(grid, tiny_model)
        assert isinstance(out, ImageGrid)
        assert (out.spacing, out.origin) == (0.3, (1.0, 2.0))
        arr_out = dn.network_forward(grid.as_float64(), tiny_model)
        np.testing.assert_allclose(out.values, arr_out.astype(np.float32), rtol=1e-5, atol=1e-6)

    def test_dtype_follows_input(self, tiny_model):
        x = rand_image(11, 8, 8)
        assert dn.network_forward(x, tiny_model).dtype == np.float64
        assert dn.network_forward(x.astype(np.float32), tiny_model).dtype == np.float32

    def test_input_validation(self, tiny_model):
        with pytest.raises(ArgumentError):
            dn.network_forward(np.zeros((2, 2, 2)), tiny_model)
        with pytest.raises(ArgumentError):
            dn.network_forward(np.zeros((1, 1)), tiny_model)


class TestGradientRoutes:
    def test_denoiser_equals_identity_minus_gradient(self, tiny_model):
        # two independent computations of the same map
        x = rand_image(12, 16, 16)
        d = dn.gradient_step_denoise(x, tiny_model)
        ev = dn.regularizer(x, tiny_model)
        other = x - ev.gradient
        gap = np.abs(d - other).max()
        assert gap <= 1e-10 * max(1.0, np.abs(x).max())

    def test_regularizer_value_definition(self, tiny_model):
        x = rand_image(13, 12, 12)
        n = dn.network_forward(x, tiny_model)
        assert dn.regularizer(x, tiny_model).value == pytest.approx(
            0.5 * float(((x - n) ** 2).sum()), rel=1e-12
        )

    def test_gradient_matches_finite_differences(self, tiny_model):
        x = rand_image(14, 8, 8)
        grad = dn.regularizer(x, tiny_model).gradient
        eps = 1e-5
        fd = np.zeros_like(x)
        for i in range(8):
            for j in range(8):
                xp = x.copy()
                xp[i, j] += eps
                xm = x.copy()
                xm[i, j] -= eps
                fd[i, j] = (
                    dn.regularizer(xp, tiny_model).value - dn.regularizer(xm, tiny_model).value
                ) / (2 * eps)
        np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-10)

    def test_vjp_adjoint_of_directional_derivative(self, tiny_model):
        # <v, J u> by finite differences must equal <J^T v, u>
        gen = np.random.default_rng(15)
        x = rand_image(16, 12, 12)
        u = gen.normal(size=x.shape)
        v = gen.normal(size=x.shape)
        eps = 1e-6
        ju = (
            dn.network_forward(x + eps * u, tiny_model)
            - dn.network_forward(x - eps * u, tiny_model)
        ) / (2 * eps)
        jtv = dn.network_vjp(x, v, tiny_model)
        assert float((v * ju).sum()) == pytest.approx(float((jtv * u).sum()), rel=1e-5)

    def test_vjp_linear_in_cotangent(self, tiny_model):
        gen = np.random.default_rng(16)
        x = rand_image(17, 10, 10)
        v1 = gen.normal(size=x.shape)
        v2 = gen.normal(size=x.shape)
        lhs = dn.network_vjp(x, 2.0 * v1 - v2, tiny_model)
        rhs = 2.0 * dn.network_vjp(x, v1, tiny_model) - dn.network_vjp(x, v2, tiny_model)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-12)
        assert np.all(dn.network_vjp(x, np.zeros_like(x), tiny_model) == 0.0)

    def test_vjp_shape_validation(self, tiny_model):
        with pytest.raises(ArgumentError):
            dn.network_vjp(np.zeros((8, 8)), np.zeros((4, 4)), tiny_model)

    def test_regularizer_eval_validation(self):
        with pytest.raises(ArgumentError):
            dn.RegularizerEval(value=-1.0, gradient=np.zeros(3))
        with pytest.raises(ArgumentError):
            dn.RegularizerEval(value=float("nan"), gradient=np.zeros(3))


class TestPersistence:
    def test_round_trip(self, tmp_path, tiny_model):
        path = tmp_path / "m.gswt"
        model = tiny_model.with_sigma(0.0125)
        dn.save_model(path, model)
        back = dn.load_model(path)
        assert back.spec == model.spec
        assert back.sigma == model.sigma
        for name in model.params:
            assert np.array_equal(back.params[name], model.params[name])
        # behaviour identical after the round trip
        x = rand_image(18, 12, 12)
        np.testing.assert_array_equal(
            dn.network_forward(x, back), dn.network_forward(x, model)
        )

    def test_tensor_order_enforced(self, tmp_path, tiny_model):
        from gsct import fileio

        path = tmp_path / "m.gswt"
        shuffled = dict(reversed(list(tiny_model.params.items())))
        fileio.write_weights(path, 0.0, tiny_model.spec.to_dict(), shuffled)
        with pytest.raises(FormatError):
            dn.load_model(path)

    def test_bad_spec_rejected(self, tmp_path, tiny_model):
        from gsct import fileio

        path = tmp_path / "m.gswt"
        fileio.write_weights(path, 0.0, {"channels": [2, 2]}, dict(tiny_model.params))
        with pytest.raises(FormatError):
            dn.load_model(path)

    def test_wrong_tensor_shape_rejected(self, tmp_path, tiny_model):
        from gsct import fileio

        path = tmp_path / "m.gswt"
        tensors = dict(tiny_model.params)
        tensors["tail.b"] = np.zeros(2, np.float32)
        fileio.write_weights(path, 0.0, tiny_model.spec.to_dict(), tensors)
        with pytest.raises(FormatError):
            dn.load_model(path)

    def test_spec_json_is_canonical(self):
        spec = dn.NetworkSpec(channels=(2, 2), convs_per_level=1)
        a = dn.spec_json(spec)
        b = dn.spec_json(dn.NetworkSpec.from_dict(json.loads(a)))
        assert a == b
