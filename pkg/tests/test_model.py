"""Network assembly: parameter bookkeeping, gate behavior, gradient flow."""

import numpy as np
import pytest

from segforge.autodiff import ShapeMismatchError, Tensor, finite_diff_check, tensor_sum
from segforge.losses import bce_dice_loss
from segforge.model import (
    BadConfigError,
    ModelConfig,
    attention_gate,
    build_unet,
    count_parameters,
    forward,
)


def closed_form_param_count(depth, base, in_ch=1, attention=True):
    """Analytic count from the block structure: double convs 3x3, 2x2
    transposed-conv upsampling, 1x1 gates, 1x1 head."""

    def conv(cout, cin, k):
        return cout * cin * k * k + cout

    total = 0
    cin = in_ch
    for level in range(depth):
        c = base * 2**level
        total += conv(c, cin, 3) + conv(c, c, 3)
        cin = c
    cb = base * 2**depth
    total += conv(cb, cin, 3) + conv(cb, cb, 3)
    for level in range(depth):
        c = base * 2**level
        cg = base * 2 ** (level + 1)
        total += cg * c * 2 * 2 + c  # transposed conv (Cin, Cout, 2, 2) + bias
        if attention:
            total += conv(c, c, 1) + conv(c, cg, 1) + conv(1, c, 1)
        total += conv(c, 2 * c, 3) + conv(c, c, 3)
    total += conv(1, base, 1)
    return total


class TestBuild:
    def test_param_count_depth1_base1(self):
        cfg = ModelConfig(depth=1, base_channels=1, input_size=(4, 4), init_seed=0)
        m = build_unet(cfg)
        assert count_parameters(m) == closed_form_param_count(1, 1)

    @pytest.mark.parametrize("depth,base", [(1, 2), (2, 4), (3, 8)])
    def test_param_count_matches_closed_form(self, depth, base):
        size = 2**depth * 4
        cfg = ModelConfig(depth=depth, base_channels=base, input_size=(size, size))
        assert count_parameters(build_unet(cfg)) == closed_form_param_count(depth, base)

    def test_same_seed_bit_identical(self):
        cfg = ModelConfig(depth=2, base_channels=4, input_size=(16, 16), init_seed=9)
        a = build_unet(cfg)
        b = build_unet(cfg)
        for (ka, ta), (kb, tb) in zip(a.named_parameters(), b.named_parameters()):
            assert ka == kb
            assert np.array_equal(ta.data, tb.data)

    def test_attention_off_drops_gate_params(self):
        on = build_unet(ModelConfig(depth=2, base_channels=4, input_size=(16, 16)))
        off = build_unet(
            ModelConfig(depth=2, base_channels=4, input_size=(16, 16), attention_enabled=False)
        )
        gate_names = [k for k in on.params if k.startswith("gate")]
        assert gate_names
        assert not any(k.startswith("gate") for k in off.params)
        assert count_parameters(off) == closed_form_param_count(2, 4, attention=False)

    def test_shared_params_match_across_attention_setting(self):
        on = build_unet(ModelConfig(depth=2, base_channels=4, input_size=(16, 16), init_seed=3))
        off = build_unet(
            ModelConfig(depth=2, base_channels=4, input_size=(16, 16),
                        attention_enabled=False, init_seed=3)
        )
        for k, t in off.named_parameters():
            assert np.array_equal(t.data, on.params[k].data)

    def test_doubling_base_roughly_quadruples(self):
        small = count_parameters(build_unet(ModelConfig(depth=2, base_channels=4,
                                                        input_size=(16, 16))))
        big = count_parameters(build_unet(ModelConfig(depth=2, base_channels=8,
                                                      input_size=(16, 16))))
        assert 3.0 < big / small < 4.5

    def test_bad_configs(self):
        with pytest.raises(BadConfigError):
            ModelConfig(depth=0)
        with pytest.raises(BadConfigError):
            ModelConfig(depth=3, input_size=(20, 20))  # not divisible by 8
        with pytest.raises(BadConfigError):
            ModelConfig(base_channels=0)


class TestAttentionGate:
    def _params(self, c, cg, seed=0, psi_zero=False, psi_bias=None):
        rng = np.random.default_rng(seed)
        wx = Tensor(rng.normal(0, 0.3, (c, c, 1, 1)).astype(np.float32))
        bx = Tensor(np.zeros(c, np.float32))
        wg = Tensor(rng.normal(0, 0.3, (c, cg, 1, 1)).astype(np.float32))
        bg = Tensor(np.zeros(c, np.float32))
        wpsi = Tensor(np.zeros((1, c, 1, 1), np.float32) if psi_zero
                      else rng.normal(0, 0.3, (1, c, 1, 1)).astype(np.float32))
        bpsi = Tensor(np.full(1, 0.0 if psi_bias is None else psi_bias, np.float32))
        return wx, bx, wg, bg, wpsi, bpsi

    def test_zero_psi_forces_half_gate(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(0, 1, (2, 3, 8, 8)).astype(np.float32))
        g = Tensor(rng.normal(0, 1, (2, 6, 4, 4)).astype(np.float32))
        out = attention_gate(x, g, *self._params(3, 6, psi_zero=True))
        assert np.array_equal(out.data, x.data * np.float32(0.5))

    def test_saturated_psi_opens_gate(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(0, 1, (1, 2, 8, 8)).astype(np.float32))
        g = Tensor(rng.normal(0, 1, (1, 4, 4, 4)).astype(np.float32))
        out = attention_gate(x, g, *self._params(2, 4, psi_zero=True, psi_bias=20.0))
        assert np.allclose(out.data, x.data, atol=1e-6)

    def test_gate_gradient_finite_difference(self):
        rng = np.random.default_rng(3)
        params = self._params(2, 4, seed=4)
        g = Tensor(rng.uniform(0.2, 0.8, (1, 4, 2, 2)).astype(np.float32))
        c = Tensor(rng.uniform(0.5, 1.5, (1, 2, 4, 4)).astype(np.float32))
        x = Tensor(rng.uniform(0.2, 0.8, (1, 2, 4, 4)).astype(np.float32), requires_grad=True)

        def f(t):
            from segforge.autodiff import mul
            return tensor_sum(mul(attention_gate(t, g, *params), c))

        assert finite_diff_check(f, x, 1e-3) <= 1e-3

    def test_shape_contract(self):
        x = Tensor(np.zeros((1, 2, 8, 8), np.float32))
        g = Tensor(np.zeros((1, 4, 8, 8), np.float32))  # not half resolution
        with pytest.raises(ShapeMismatchError):
            attention_gate(x, g, *self._params(2, 4))


class TestForward:
    def test_output_in_unit_interval_and_shape(self):
        cfg = ModelConfig(depth=2, base_channels=4, input_size=(16, 16), init_seed=1)
        m = build_unet(cfg)
        x = np.random.default_rng(0).normal(0, 1, (2, 1, 16, 16)).astype(np.float32)
        out = forward(m, x)
        assert out.shape == (2, 1, 16, 16)
        assert np.all(out.data > 0.0) and np.all(out.data < 1.0)

    def test_zero_input_finite(self):
        cfg = ModelConfig(depth=1, base_channels=2, input_size=(8, 8))
        m = build_unet(cfg)
        out = forward(m, np.zeros((1, 1, 8, 8), np.float32))
        assert np.isfinite(out.data).all()

    @pytest.mark.parametrize("depth,size", [(1, 16), (2, 32), (3, 64), (3, 128)])
    def test_shape_preserved_across_configs(self, depth, size):
        cfg = ModelConfig(depth=depth, base_channels=2, input_size=(size, size))
        m = build_unet(cfg)
        out = forward(m, np.zeros((1, 1, size, size), np.float32))
        assert out.shape == (1, 1, size, size)

    def test_wrong_input_size_rejected(self):
        m = build_unet(ModelConfig(depth=1, base_channels=2, input_size=(8, 8)))
        with pytest.raises(ShapeMismatchError):
            forward(m, np.zeros((1, 1, 16, 16), np.float32))

    def test_single_weight_perturbation_changes_output(self):
        cfg = ModelConfig(depth=1, base_channels=2, input_size=(8, 8), init_seed=5)
        m = build_unet(cfg)
        x = np.random.default_rng(1).normal(0, 1, (1, 1, 8, 8)).astype(np.float32)
        base_out = forward(m, x).data.copy()
        m.params["enc0.conv1.w"].data[0, 0, 1, 1] += 1.0
        assert not np.array_equal(forward(m, x).data, base_out)

    def test_zero_psi_equals_plain_unet_with_halved_skip_weights(self):
        # sigmoid(0) = 0.5 exactly, and scaling by a power of two commutes
        # with float rounding, so the equality is bit-exact
        cfg_on = ModelConfig(depth=2, base_channels=4, input_size=(16, 16), init_seed=2)
        cfg_off = ModelConfig(depth=2, base_channels=4, input_size=(16, 16),
                              attention_enabled=False, init_seed=2)
        gated = build_unet(cfg_on)
        plain = build_unet(cfg_off)
        for name, t in gated.named_parameters():
            if ".psi." in name:
                t.data = np.zeros_like(t.data)
        # halve the skip-channel half of each decoder conv1 kernel
        for level in range(2):
            w = plain.params[f"dec{level}.conv1.w"]
            c = w.data.shape[0]
            w.data[:, c:, :, :] *= np.float32(0.5)
        x = np.random.default_rng(3).normal(0, 1, (1, 1, 16, 16)).astype(np.float32)
        assert np.array_equal(forward(gated, x).data, forward(plain, x).data)


class TestEndToEndGradient:
    def test_tiny_model_finite_difference(self):
        # positive weights keep every relu pre-activation strictly positive,
        # so the loss is smooth within the finite-difference step; He init
        # would park some activations on the kink and invalidate the check
        cfg = ModelConfig(depth=1, base_channels=2, input_size=(8, 8), init_seed=4)
        m = build_unet(cfg)
        rng = np.random.default_rng(5)
        for name, t in m.named_parameters():
            if name.endswith(".w"):
                t.data = rng.uniform(0.05, 0.4, t.data.shape).astype(np.float32)
        t_mask = (rng.random((1, 1, 8, 8)) > 0.5).astype(np.float32)
        x = rng.uniform(0.2, 0.8, (1, 1, 8, 8)).astype(np.float32)

        # check gradients through the whole graph for a few parameters
        for pname in ("enc0.conv1.w", "dec0.up.w", "head.w", "gate0.psi.w"):
            param = m.params[pname]

            def f(_t, _p=param):
                return bce_dice_loss(forward(m, x), t_mask)

            err = finite_diff_check(f, param, 1e-3)
            assert err <= 1e-3, f"{pname}: {err}"
