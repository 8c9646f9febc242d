import math
import warnings

import numpy as np
import pytest

from kanvmc.ansatz import (
    GridAnomalyWarning,
    ModelSpec,
    build_model,
    init_mlp,
    init_rbm,
    init_sinekan,
)
from kanvmc.spins import SpinConfiguration, codes_to_bits


def random_bits(rng, n, L):
    return (rng.random((n, L)) < 0.5).astype(np.uint8)


def naive_layer_forward(layer, x):
    """Scalar-loop re-evaluation of one sine-KAN layer (independent oracle)."""
    B = x.shape[0]
    out = np.zeros((B, layer.out_dim))
    for b in range(B):
        for m in range(layer.out_dim):
            acc = 0.0
            for n in range(layer.grid_size):
                for l in range(layer.in_dim):
                    phi = (
                        math.pi * n / layer.grid_size
                        + math.pi * l / layer.in_dim
                        + layer.delta[n, l]
                    )
                    acc += layer.amplitudes[m, n, l] * math.sin(
                        layer.frequencies[n, l] * x[b, l] + phi
                    )
            out[b, m] = acc + layer.bias[m]
    return out


def naive_rbm_log_psi(model, bits):
    sigma = 2.0 * bits - 1.0
    y = sum(model.visible_bias[i] * sigma[i] for i in range(model.L))
    for j in range(model.n_hidden):
        z = model.hidden_bias[j] + sum(
            model.w[j, i] * sigma[i] for i in range(model.L)
        )
        y += math.log(2.0 * math.cosh(z))
    return y


def fd_grad(model, config, eps=1e-5):
    theta0 = model.flatten()
    g = np.empty_like(theta0)
    for i in range(theta0.size):
        tp = theta0.copy()
        tp[i] += eps
        model.unflatten(tp)
        yp = model.log_psi(config)
        tp[i] = theta0[i] - eps
        model.unflatten(tp)
        ym = model.log_psi(config)
        g[i] = (yp - ym) / (2 * eps)
    model.unflatten(theta0)
    return g


class TestLayerForward:
    def test_zero_amplitudes_give_bias(self):
        model = init_sinekan(4, (3, 1), grid_size=2, seed=1)
        layer = model.layers[0]
        layer.amplitudes[:] = 0.0
        layer.bias[:] = [0.5, -1.0, 2.0]
        x = np.random.default_rng(0).normal(size=(5, 4))
        assert np.allclose(layer.forward(x), np.tile([0.5, -1.0, 2.0], (5, 1)))

    def test_single_grid_single_input_zero_freq(self):
        # N=1, I=1, omega=0, delta=0: phase is 0, so sin contributes nothing
        model = init_sinekan(1, (2, 1), grid_size=1, seed=0)
        layer = model.layers[0]
        layer.delta[:] = 0.0
        layer.phase[:] = 0.0
        layer.frequencies[:] = 0.0
        layer.bias[:] = [0.3, -0.7]
        x = np.array([[0.9], [-2.0]])
        assert np.allclose(layer.forward(x), np.tile([0.3, -0.7], (2, 1)))

    def test_matches_naive_loop(self):
        model = init_sinekan(4, (3, 1), grid_size=2, seed=42)
        layer = model.layers[0]
        x = np.random.default_rng(7).normal(size=(6, 4))
        assert np.allclose(layer.forward(x), naive_layer_forward(layer, x), atol=1e-12)

    def test_shape_mismatch(self):
        model = init_sinekan(4, (3, 1), grid_size=2, seed=0)
        with pytest.raises(ValueError):
            model.layers[0].forward(np.zeros((2, 5)))


class TestLogPsi:
    def test_reflected_symmetry_bitwise(self):
        model = init_sinekan(10, (16, 16), grid_size=4, reflected=True, seed=3)
        bits = random_bits(np.random.default_rng(0), 50, 10)
        a = model.log_psi_batch(bits)
        b = model.log_psi_batch(bits[:, ::-1])
        assert np.array_equal(a, b)

    def test_constant_model(self):
        model = init_sinekan(8, (4, 1), grid_size=2, seed=0)
        for layer in model.layers:
            layer.amplitudes[:] = 0.0
        model.layers[-1].bias[:] = 1.25
        model.refresh()
        bits = random_bits(np.random.default_rng(1), 20, 8)
        assert np.allclose(model.log_psi_batch(bits), 1.25)

    def test_fast_path_matches_full_forward(self):
        model = init_sinekan(8, (8, 6), grid_size=3, seed=5)
        bits = random_bits(np.random.default_rng(2), 40, 8)
        fast = model.log_psi_batch(bits)
        full = model._forward_sigma_full(2.0 * bits.astype(float) - 1.0)
        assert np.allclose(fast, full, atol=1e-12)

    def test_rbm_matches_naive_formula(self):
        model = init_rbm(6, alpha=2, seed=9)
        bits = random_bits(np.random.default_rng(3), 10, 6)
        got = model.log_psi_batch(bits)
        want = [naive_rbm_log_psi(model, row.astype(float)) for row in bits]
        assert np.allclose(got, want, atol=1e-10)

    def test_length_mismatch(self):
        model = init_sinekan(8, (4, 1), 2, seed=0)
        with pytest.raises(ValueError):
            model.log_psi_batch(np.zeros((3, 7), dtype=np.uint8))


KINDS = [
    ("vsinekan", lambda: init_sinekan(8, (5, 4), grid_size=3, seed=11)),
    ("rsinekan", lambda: init_sinekan(8, (5, 4), grid_size=3, reflected=True, seed=12)),
    ("mlp", lambda: init_mlp(8, (10, 6), seed=13)),
    ("rmlp", lambda: init_mlp(8, (10, 6), reflected=True, seed=14)),
    ("rbm", lambda: init_rbm(8, alpha=2, seed=15)),
]


class TestGradients:
    @pytest.mark.parametrize("name,factory", KINDS)
    def test_grad_matches_finite_differences(self, name, factory):
        model = factory()
        config = SpinConfiguration.from_string("uduuddud")
        analytic = model.grad_log_psi(config)
        numeric = fd_grad(model, config)
        err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
        assert err.max() < 1e-6, f"{name}: max rel err {err.max():.2e}"

    def test_final_bias_derivative(self):
        vanilla = init_sinekan(6, (4, 1), 2, seed=1)
        reflected = init_sinekan(6, (4, 1), 2, reflected=True, seed=1)
        config = SpinConfiguration.from_string("uduudd")
        # final-layer bias is the last flat parameter in the sinekan layout
        assert vanilla.grad_log_psi(config)[-1] == 1.0
        assert reflected.grad_log_psi(config)[-1] == 2.0

    def test_weighted_grad_sum_linearity(self):
        model = init_sinekan(6, (4, 1), 2, seed=2)
        bits = random_bits(np.random.default_rng(4), 5, 6)
        w = np.array([0.3, -1.0, 2.0, 0.0, 0.7])
        total = model.weighted_grad_sum(bits, w)
        manual = sum(
            w[i] * model.grad_log_psi(SpinConfiguration.from_bits(bits[i]))
            for i in range(5)
        )
        assert np.allclose(total, manual, atol=1e-12)


class TestParamPlumbing:
    def test_table_counts(self):
        assert init_sinekan(100, (64, 64), 8, seed=0).param_count() == 86_433
        assert init_mlp(100, (256, 256), seed=0).param_count() == 91_905
        assert init_rbm(100, alpha=128, seed=0).param_count() == 1_292_900

    def test_appendix_counts(self):
        assert init_sinekan(64, (64, 64), 7, seed=0).param_count() == 59_265
        assert init_sinekan(32, (64, 64), 8, seed=0).param_count() == 51_073

    def test_flatten_unflatten_roundtrip(self):
        model = init_sinekan(8, (6, 4), 3, reflected=True, seed=21)
        rng = np.random.default_rng(5)
        bits = random_bits(rng, 100, 8)
        before = model.log_psi_batch(bits)
        vec = model.flatten()
        model.unflatten(rng.normal(size=vec.shape))
        model.unflatten(vec)
        after = model.log_psi_batch(bits)
        assert np.array_equal(before, after)

    def test_unflatten_length_mismatch(self):
        model = init_sinekan(6, (4, 1), 2, seed=0)
        with pytest.raises(ValueError):
            model.unflatten(np.zeros(model.param_count() + 1))

    def test_determinism(self):
        a = init_sinekan(10, (8, 8), 4, seed=77)
        b = init_sinekan(10, (8, 8), 4, seed=77)
        assert np.array_equal(a.flatten(), b.flatten())
        for la, lb in zip(a.layers, b.layers):
            assert np.array_equal(la.delta, lb.delta)
        c = init_sinekan(10, (8, 8), 4, seed=78)
        assert not np.array_equal(a.flatten(), c.flatten())

    def test_delta_range(self):
        model = init_sinekan(12, (8, 8), 4, seed=1, delta_max=0.01)
        for layer in model.layers:
            assert np.all(layer.delta > 0) and np.all(layer.delta <= 0.01)

    def test_frequency_inits(self):
        unit = init_sinekan(6, (4, 1), 4, seed=1)  # default ramp_unit
        for layer in unit.layers:
            expect = np.repeat(np.arange(1.0, 5.0)[:, None] / 4, layer.in_dim, axis=1)
            assert np.array_equal(layer.frequencies, expect)
        ramp = init_sinekan(6, (4, 1), 4, seed=1, freq_init="ramp")
        assert np.array_equal(ramp.layers[0].frequencies[:, 0], [1.0, 2.0, 3.0, 4.0])
        ones = init_sinekan(6, (4, 1), 4, seed=1, freq_init="one")
        assert np.all(ones.layers[0].frequencies == 1.0)
        with pytest.raises(ValueError):
            init_sinekan(6, (4, 1), 4, seed=1, freq_init="random")


class TestInitGuards:
    def test_grid_anomaly_warns(self):
        with pytest.warns(GridAnomalyWarning):
            init_sinekan(64, (64, 64), 8, seed=0)

    def test_grid_off_by_one_is_quiet(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error", GridAnomalyWarning)
            init_sinekan(64, (64, 64), 7, seed=0)

    def test_zero_dims_rejected(self):
        with pytest.raises(ValueError):
            init_sinekan(8, (0, 4), 3, seed=0)
        with pytest.raises(ValueError):
            init_sinekan(8, (4, 4), 0, seed=0)

    def test_build_model_dispatch(self):
        for kind in ("sinekan", "mlp", "rbm"):
            spec = ModelSpec(kind=kind, L=6, hidden_dims=(4,), alpha=2, seed=1)
            model = build_model(spec)
            assert model.kind == kind
        with pytest.raises(ValueError):
            build_model(ModelSpec(kind="lstm", L=6))
