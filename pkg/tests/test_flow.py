import numpy as np
import pytest

from genhmm.flow import (SCALE_CAP, FlowError, FlowGenerator, FlowTapes,
                         gaussian_logdensity)
from oracles import (constant_affine, finite_diff_grads, flow_tape_grads,
                     numerical_jacobian, zero_params)

LOG_TWO_PI = np.log(2.0 * np.pi)


def make_gen(n_dim, n_blocks=1, hidden=6, seed=0):
    return FlowGenerator(n_dim, n_blocks=n_blocks, hidden=hidden,
                         rng=np.random.default_rng(seed))


class TestIdentityFlow:
    def test_inverse_is_identity_with_zero_logdet(self):
        gen = zero_params(make_gen(4, n_blocks=2))
        x = np.random.default_rng(0).normal(size=(5, 4))
        z, log_det, _ = gen.inverse(x)
        np.testing.assert_array_equal(z, x)
        np.testing.assert_array_equal(log_det, np.zeros(5))

    def test_forward_is_identity(self):
        gen = zero_params(make_gen(4, n_blocks=2))
        z = np.random.default_rng(1).normal(size=(5, 4))
        np.testing.assert_array_equal(gen.forward(z), z)

    def test_loglik_at_origin(self):
        gen = zero_params(make_gen(2))
        ll, _ = gen.loglik(np.zeros(2))
        assert ll == pytest.approx(-LOG_TWO_PI, abs=1e-12)

    def test_loglik_unit_offset(self):
        gen = zero_params(make_gen(2))
        ll, _ = gen.loglik(np.array([1.0, 0.0]))
        assert ll == pytest.approx(-LOG_TWO_PI - 0.5, abs=1e-12)


class TestConstantAffineLayer:
    def test_single_layer_analytic_form(self):
        # one layer with constant raw scale c and shift d: the
        # data-to-latent step multiplies the active half by
        # exp(clamp(c)) and adds d, and log_det is clamp(c)
        gen = make_gen(2, n_blocks=1)
        gen.layers = gen.layers[:1]
        c, d = 0.4, -0.8
        constant_affine(gen, [np.array([d])], [np.array([c])])
        clamped = SCALE_CAP * np.tanh(c / SCALE_CAP)
        x = np.array([1.5, 2.0])
        z, log_det, _ = gen.inverse(x)
        assert z[0] == pytest.approx(1.5)
        assert z[1] == pytest.approx(np.exp(clamped) * 2.0 + d)
        assert log_det == pytest.approx(clamped)

    def test_logdet_matches_numerical_jacobian(self):
        gen = make_gen(2, n_blocks=1, seed=3)
        gen.layers = gen.layers[:1]
        constant_affine(gen, [np.array([-0.8])], [np.array([0.4])])
        x = np.array([1.5, 2.0])
        _, log_det, _ = gen.inverse(x)
        jac = numerical_jacobian(lambda v: gen.inverse(v)[0], x)
        _, num = np.linalg.slogdet(jac)
        assert abs(log_det - num) <= 1e-6


class TestRoundTrip:
    @pytest.mark.parametrize("n_dim", [2, 4, 6])
    def test_forward_inverse_round_trip(self, n_dim):
        rng = np.random.default_rng(n_dim)
        gen = make_gen(n_dim, n_blocks=2, seed=n_dim)
        x = rng.normal(size=(20, n_dim))
        z, _, _ = gen.inverse(x)
        back = gen.forward(z)
        assert np.max(np.abs(back - x)) <= 1e-8

    @pytest.mark.parametrize("n_dim", [3, 5])
    def test_round_trip_odd_widths(self, n_dim):
        rng = np.random.default_rng(n_dim)
        gen = make_gen(n_dim, n_blocks=2, seed=n_dim + 10)
        x = rng.normal(size=(20, n_dim))
        z, _, _ = gen.inverse(x)
        assert np.max(np.abs(gen.forward(z) - x)) <= 1e-8

    def test_invertibility_bounded_inputs_larger_width(self):
        # inputs up to +-10, widths up to 16
        rng = np.random.default_rng(99)
        for n_dim in (8, 16):
            gen = make_gen(n_dim, n_blocks=2, hidden=8, seed=n_dim)
            x = rng.uniform(-10, 10, size=(10, n_dim))
            z, _, _ = gen.inverse(x)
            assert np.max(np.abs(gen.forward(z) - x)) <= 1e-6


class TestSampling:
    def test_samples_finite_for_random_nets(self):
        rng = np.random.default_rng(5)
        gen = make_gen(4, n_blocks=2, seed=5)
        z = rng.standard_normal((100, 4))
        assert np.all(np.isfinite(gen.forward(z)))

    def test_identity_flow_sample_mean(self):
        # Monte-Carlo check against the latent standard normal
        gen = zero_params(make_gen(3))
        rng = np.random.default_rng(6)
        x = gen.forward(rng.standard_normal((100_000, 3)))
        assert np.max(np.abs(x.mean(axis=0))) <= 0.02


class TestLogLik:
    @pytest.mark.parametrize("n_dim", [2, 4, 6])
    def test_change_of_variables_against_dense_jacobian(self, n_dim):
        rng = np.random.default_rng(n_dim + 20)
        gen = make_gen(n_dim, n_blocks=2, seed=n_dim + 20)
        for _ in range(3):
            x = rng.normal(size=n_dim)
            ll, _ = gen.loglik(x)
            z, _, _ = gen.inverse(x)
            jac = numerical_jacobian(lambda v: gen.inverse(v)[0], x)
            _, logdet = np.linalg.slogdet(jac)
            want = gaussian_logdensity(z)[0] + logdet
            assert abs(ll - want) <= 1e-6

    def test_full_support_extreme_inputs(self):
        # the scale clamp keeps the log-det finite for any finite input
        gen = make_gen(4, n_blocks=3, seed=8)
        for scale in (1.0, 1e3, 1e6):
            x = np.full(4, scale)
            z, log_det, _ = gen.inverse(x)
            assert np.all(np.isfinite(z))
            assert np.isfinite(log_det)
        layer_bound = SCALE_CAP * gen.n_dim * gen.n_layers
        assert abs(log_det) <= layer_bound

    def test_rejects_non_finite_input(self):
        gen = make_gen(2)
        with pytest.raises(FlowError):
            gen.inverse(np.array([np.inf, 0.0]))


class TestPermutationCompleteness:
    def test_every_coordinate_is_transformed(self):
        # with a full block and generic parameters, no row of the
        # Jacobian is a unit vector
        rng = np.random.default_rng(13)
        for n_dim in (2, 4, 5):
            gen = make_gen(n_dim, n_blocks=1, seed=n_dim + 40)
            x = rng.normal(size=n_dim)
            jac = numerical_jacobian(lambda v: gen.inverse(v)[0], x)
            off_diag = np.abs(jac - np.diag(np.diag(jac)))
            assert np.all(off_diag.max(axis=1) > 1e-12)


class TestBackward:
    def _weighted_loglik(self, gen, x, w):
        ll, _ = gen.loglik(x)
        return float(np.dot(w, np.atleast_1d(ll)))

    def test_zero_weight_leaves_tapes(self):
        gen = make_gen(2, seed=1)
        tapes = FlowTapes(gen)
        _, cache = gen.loglik(np.random.default_rng(0).normal(size=(3, 2)))
        gen.loglik_backward(cache, np.zeros(3), tapes)
        assert all(np.all(buf == 0) for buf in flow_tape_grads(tapes))

    def test_gradients_match_finite_differences(self):
        gen = make_gen(2, n_blocks=1, hidden=5, seed=2)
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 2))
        w = rng.uniform(0.1, 1.0, size=4)
        tapes = FlowTapes(gen)
        _, cache = gen.loglik(x)
        gen.loglik_backward(cache, w, tapes)
        fd = finite_diff_grads(gen.parameters(),
                               lambda: self._weighted_loglik(gen, x, w))
        for got, want in zip(flow_tape_grads(tapes), fd):
            np.testing.assert_allclose(got, want, rtol=1e-4, atol=1e-7)

    def test_linearity_in_weight(self):
        gen = make_gen(2, seed=4)
        x = np.random.default_rng(5).normal(size=(3, 2))
        _, cache = gen.loglik(x)
        tapes_double = FlowTapes(gen)
        gen.loglik_backward(cache, np.full(3, 2.0), tapes_double)
        tapes_two_calls = FlowTapes(gen)
        gen.loglik_backward(cache, np.ones(3), tapes_two_calls)
        gen.loglik_backward(cache, np.ones(3), tapes_two_calls)
        for a, b in zip(flow_tape_grads(tapes_double),
                        flow_tape_grads(tapes_two_calls)):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)

    def test_non_finite_weights_skipped_and_counted(self):
        gen = make_gen(2, seed=6)
        x = np.random.default_rng(7).normal(size=(3, 2))
        _, cache = gen.loglik(x)
        tapes = FlowTapes(gen)
        n = gen.loglik_backward(cache, np.array([1.0, np.nan, 1.0]), tapes)
        assert n == 1
        assert all(np.all(np.isfinite(buf)) for buf in flow_tape_grads(tapes))


class TestStructure:
    def test_orientation_alternates(self):
        gen = make_gen(4, n_blocks=3)
        assert [layer.swap for layer in gen.layers] == [False, True] * 3

    def test_layer_count_is_twice_blocks(self):
        assert make_gen(4, n_blocks=4).n_layers == 8

    def test_copy_is_deep(self):
        gen = make_gen(2, seed=9)
        dup = gen.copy()
        dup.layers[0].scale_net.weights[0][:] += 1.0
        assert not np.allclose(gen.layers[0].scale_net.weights[0],
                               dup.layers[0].scale_net.weights[0])
