"""The channel-distillation network: shapes, forward oracle, gradients."""

import numpy as np
import pytest

from eegadapt.adapter import (
    AdapterConfig,
    AdapterParams,
    ConvLayerParams,
    ConvLayerSpec,
    adapter_forward,
    adapter_grad,
    default_adapter_config,
    init_adapter_params,
)
from eegadapt.errors import ConfigurationError, DimensionError
from eegadapt.nnops import gelu


def naive_forward(x, params, cfg):
    """Direct nested-loop convolution, the independent oracle."""
    h = np.asarray(x, dtype=np.float64)
    for spec, lp in zip(cfg.layers, params.layers):
        t_out = (h.shape[1] - spec.kernel_len) // spec.stride + 1
        z = np.zeros((spec.out_maps, t_out))
        for o in range(spec.out_maps):
            for t in range(t_out):
                acc = 0.0
                for c in range(h.shape[0]):
                    for j in range(spec.kernel_len):
                        acc += lp.w[o, c, j] * h[c, t * spec.stride + j]
                z[o, t] = acc + lp.b[o]
        h = gelu(z) if spec.activation == "gelu" else z
    return h


class TestConfigArithmetic:
    def test_exact_cascade_required(self):
        # (10 - 3) / 2 does not divide; the constructor must refuse.
        with pytest.raises(ConfigurationError):
            AdapterConfig(in_channels=2, in_timesteps=10, out_channels=4,
                          out_timesteps=4,
                          layers=(ConvLayerSpec(4, 3, 2),))

    def test_wrong_declared_output_len(self):
        with pytest.raises(ConfigurationError):
            AdapterConfig(in_channels=2, in_timesteps=10, out_channels=4,
                          out_timesteps=5,
                          layers=(ConvLayerSpec(4, 3, 1),))

    def test_final_maps_must_match_out_channels(self):
        with pytest.raises(ConfigurationError):
            AdapterConfig(in_channels=2, in_timesteps=10, out_channels=4,
                          out_timesteps=8,
                          layers=(ConvLayerSpec(6, 3, 1),))

    def test_default_config_solves_exactly(self):
        for t, out in [(256, 112), (128, 112), (256, 240), (64, 16)]:
            cfg = default_adapter_config(8, t, out_timesteps=out)
            assert cfg.out_timesteps == out
            assert cfg.layers[-1].out_maps == 23

    def test_default_config_without_target(self):
        cfg = default_adapter_config(8, 256)
        assert cfg.out_timesteps == 240
        assert cfg.layers[0].kernel_len == 15

    def test_unsolvable_target_rejected(self):
        with pytest.raises(ConfigurationError):
            default_adapter_config(8, 64, out_timesteps=63)


class TestForward:
    def test_zero_input_zero_bias_gives_zero(self):
        cfg = default_adapter_config(4, 40, out_timesteps=16)
        params = init_adapter_params(cfg, np.random.default_rng(0))
        out = adapter_forward(np.zeros((4, 40)), params, cfg)
        np.testing.assert_array_equal(out, np.zeros((23, 16)))

    def test_unit_kernel_identity_selection(self):
        # One layer, kernel 1, stride 1, each output map copies one input row.
        cfg = AdapterConfig(in_channels=3, in_timesteps=5, out_channels=2,
                            out_timesteps=5,
                            layers=(ConvLayerSpec(2, 1, 1, "none"),))
        w = np.zeros((2, 3, 1))
        w[0, 2, 0] = 1.0
        w[1, 0, 0] = 1.0
        params = AdapterParams(layers=[ConvLayerParams(w=w, b=np.zeros(2))])
        x = np.arange(15, dtype=float).reshape(3, 5)
        out = adapter_forward(x, params, cfg)
        np.testing.assert_array_equal(out[0], x[2])
        np.testing.assert_array_equal(out[1], x[0])

    def test_matches_nested_loop_oracle(self):
        rng = np.random.default_rng(42)
        cfg = default_adapter_config(8, 64, out_timesteps=16)
        params = init_adapter_params(cfg, rng)
        x = rng.normal(size=(8, 64))
        out = adapter_forward(x, params, cfg)
        assert out.shape == (23, 16)
        np.testing.assert_allclose(out, naive_forward(x, params, cfg), atol=1e-10)

    def test_shape_contract_over_random_configs(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            e = int(rng.integers(1, 12))
            out_ch = int(rng.integers(1, 30))
            k = int(rng.integers(1, 9))
            stride = int(rng.integers(1, 4))
            t_out = int(rng.integers(1, 20))
            t_in = k + stride * (t_out - 1)
            cfg = AdapterConfig(
                in_channels=e, in_timesteps=t_in, out_channels=out_ch,
                out_timesteps=t_out, layers=(ConvLayerSpec(out_ch, k, stride),),
            )
            params = init_adapter_params(cfg, rng)
            out = adapter_forward(rng.normal(size=(e, t_in)), params, cfg)
            assert out.shape == (out_ch, t_out)

    def test_shape_mismatch_rejected(self):
        cfg = default_adapter_config(4, 40, out_timesteps=16)
        params = init_adapter_params(cfg, np.random.default_rng(0))
        with pytest.raises(DimensionError):
            adapter_forward(np.zeros((5, 40)), params, cfg)

    def test_determinism(self):
        rng = np.random.default_rng(2)
        cfg = default_adapter_config(6, 48, out_timesteps=16)
        params = init_adapter_params(cfg, rng)
        x = rng.normal(size=(6, 48))
        a = adapter_forward(x, params, cfg)
        b = adapter_forward(x, params, cfg)
        np.testing.assert_array_equal(a, b)


class TestGradients:
    def setup_method(self):
        rng = np.random.default_rng(17)
        self.cfg = default_adapter_config(5, 36, out_timesteps=8)
        self.params = init_adapter_params(self.cfg, rng)
        self.x = rng.normal(size=(5, 36))
        self.upstream = rng.normal(size=(23, 8))

    def test_zero_upstream_zero_gradients(self):
        grads, dx = adapter_grad(self.x, self.params, self.cfg,
                                 np.zeros((23, 8)))
        assert np.all(dx == 0)
        for g in grads.values():
            assert np.all(g == 0)

    def test_upstream_linearity(self):
        grads, dx = adapter_grad(self.x, self.params, self.cfg, self.upstream)
        grads2, dx2 = adapter_grad(self.x, self.params, self.cfg,
                                   2.0 * self.upstream)
        np.testing.assert_allclose(dx2, 2.0 * dx, rtol=1e-12)
        for name in grads:
            np.testing.assert_allclose(grads2[name], 2.0 * grads[name], rtol=1e-12)

    def test_matches_finite_differences(self):
        h = 1e-5
        rng = np.random.default_rng(3)

        def objective():
            return float(np.sum(adapter_forward(self.x, self.params, self.cfg)
                                * self.upstream))

        grads, dx = adapter_grad(self.x, self.params, self.cfg, self.upstream)
        worst = 0.0
        for name, arr in self.params.named_arrays():
            flat = arr.reshape(-1)
            picks = rng.choice(flat.size, size=min(25, flat.size), replace=False)
            for idx in picks:
                orig = flat[idx]
                flat[idx] = orig + h
                plus = objective()
                flat[idx] = orig - h
                minus = objective()
                flat[idx] = orig
                numeric = (plus - minus) / (2 * h)
                analytic = grads[name].reshape(-1)[idx]
                worst = max(worst, abs(analytic - numeric)
                            / max(abs(analytic), abs(numeric), 1e-4))
        flat_x = self.x.reshape(-1)
        for idx in rng.choice(flat_x.size, size=40, replace=False):
            orig = flat_x[idx]
            flat_x[idx] = orig + h
            plus = objective()
            flat_x[idx] = orig - h
            minus = objective()
            flat_x[idx] = orig
            numeric = (plus - minus) / (2 * h)
            analytic = dx.reshape(-1)[idx]
            worst = max(worst, abs(analytic - numeric)
                        / max(abs(analytic), abs(numeric), 1e-4))
        assert worst <= 1e-4

    def test_upstream_shape_checked(self):
        with pytest.raises(DimensionError):
            adapter_grad(self.x, self.params, self.cfg, np.zeros((23, 9)))
