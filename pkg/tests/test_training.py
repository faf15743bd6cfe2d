import numpy as np
import pytest
from hypothesis import given, strategies as st

from overparam_net.experiments import projected_descent_instance, localisation_instance, random_instance
from overparam_net.network import Topology, WeightVector, forward
from overparam_net.training import (Dataset, DivergenceError, GdConfig, Projection,
                                    certified_input_gradient_bound, empirical_risk,
                                    finite_difference_gradient, gradient, gradient_check,
                                    gradient_fault, lipschitz_probe, project_ball, run_gd,
                                    truncate, verify_derivative_bound, verify_linearisation_bound,
                                    verify_localisation)

# calibrated constant in C^2 <= const * B^(4L) * gamma^2 (L = 2 here)
C_NET_LIPSCHITZ = 0.0075


def small_instance(seed, K=2, L=2, r=2, d=1, n=8):
    return random_instance(np.random.default_rng(seed), K, L, r, d, n)


class TestDataset:
    def test_promotes_vector_inputs(self):
        data = Dataset(np.arange(3.0), [1, 2, 3])
        assert data.xs.shape == (3, 1) and data.n == 3 and data.d == 1

    def test_rejects_mismatch_and_empty(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 1)), np.zeros(2))
        with pytest.raises(ValueError):
            Dataset(np.zeros((0, 1)), np.zeros(0))


class TestRisk:
    def test_zero_network_risk_is_mean_square(self):
        t = Topology(1, 2, 1, 2)
        data = Dataset(np.zeros((3, 1)), [1.0, 2.0, 3.0])
        assert empirical_risk(WeightVector.zeros(t), data) == pytest.approx(14 / 3)

    def test_dimension_mismatch(self):
        w, _ = small_instance(0)
        with pytest.raises(ValueError):
            empirical_risk(w, Dataset(np.zeros((2, 2)), np.zeros(2)))

    def test_gradient_of_output_weights_by_hand(self):
        w, data = small_instance(1)
        g = gradient(w, data)
        from overparam_net.network import subnet_outputs
        S = subnet_outputs(w, data.xs)  # (n, K)
        res = forward(w, data.xs) - data.ys
        assert np.allclose(g[-w.topology.K:], 2 * S.T @ res / data.n, atol=1e-14)


class TestGradientOracle:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_extended_precision_differences(self, seed):
        w, data = small_instance(seed, K=3, L=3, r=3, d=2, n=10)
        ok, worst = gradient_check(w, data)
        assert ok, worst

    def test_oracle_independent_of_float_forward(self):
        # the long-double risk agrees with the double-precision one
        from overparam_net.training import _risk_extended
        w, data = small_instance(3, K=2, L=3, r=3, d=2)
        ext = _risk_extended(w.values.astype(np.longdouble), w.topology,
                             data.xs.astype(np.longdouble), data.ys.astype(np.longdouble))
        assert float(ext) == pytest.approx(empirical_risk(w, data), rel=1e-13)

    def test_fault_injection_is_caught(self):
        w, data = small_instance(2, K=2, L=2, r=3, d=1)
        i = int(np.argmax(np.abs(gradient(w, data))))
        with gradient_fault(i):
            ok, worst = gradient_check(w, data)
        assert not ok and worst > 1
        assert gradient_check(w, data)[0]

    def test_fd_gradient_shape(self):
        w, data = small_instance(0)
        assert finite_difference_gradient(w, data).shape == (w.topology.n_weights,)


class TestProjectionAndTruncation:
    @given(st.integers(0, 2**31), st.floats(0, 3))
    def test_projection_lands_in_ball_and_is_idempotent(self, seed, radius):
        rng = np.random.default_rng(seed)
        t = Topology(1, 2, 1, 2)
        c = WeightVector(t, rng.normal(size=t.n_weights))
        w = WeightVector(t, rng.normal(size=t.n_weights) * 3)
        p = project_ball(w, c, radius)
        assert p.distance(c) <= radius * (1 + 1e-12) + 1e-15
        assert np.allclose(project_ball(p, c, radius).values, p.values)
        if w.distance(c) <= radius:
            assert p is w

    def test_negative_radius(self):
        t = Topology(1, 1, 1, 1)
        with pytest.raises(ValueError):
            project_ball(WeightVector.zeros(t), WeightVector.zeros(t), -1)
        with pytest.raises(ValueError):
            Projection(WeightVector.zeros(t), -1)

    @given(st.floats(-1e6, 1e6), st.floats(1e-3, 1e3))
    def test_truncate(self, z, beta):
        out = truncate(z, beta)
        assert -beta <= out <= beta
        if abs(z) <= beta:
            assert out == z

    def test_truncate_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            truncate(1.0, 0.0)


class TestRunGd:
    def test_zero_steps_and_zero_step_size(self):
        w, data = small_instance(0)
        tr = run_gd(w, data, GdConfig(0.1, 0))
        assert len(tr) == 1 and tr.weights is w
        tr = run_gd(w, data, GdConfig(0.0, 5))
        assert np.all(tr.risks == tr.risks[0]) and np.all(tr.drifts == 0)

    def test_single_step_matches_formula(self):
        w, data = small_instance(4)
        tr = run_gd(w, data, GdConfig(0.05, 1))
        assert np.allclose(tr.weights.values, w.values - 0.05 * gradient(w, data))

    def test_projected_iterates_stay_in_ball(self):
        w, data = small_instance(5)
        tr = run_gd(w, data, GdConfig(1.0, 30, Projection(w, 0.1)))
        assert np.all(tr.drifts <= 0.1 + 1e-12)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_raises(self):
        # sigmoid saturation keeps the risk bounded for most blow-ups, so use
        # responses whose square overflows
        w = WeightVector.zeros(Topology(1, 1, 1, 1))
        data = Dataset(np.zeros((2, 1)), [1e200, 1e200])
        with pytest.raises(DivergenceError):
            run_gd(w, data, GdConfig(1.0, 3))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            GdConfig(-1.0, 1)
        with pytest.raises(ValueError):
            GdConfig(1.0, -1)
        with pytest.raises(ValueError):
            GdConfig(1.0, 1, truncation=0)


class TestLipschitzProbe:
    def test_degenerate_radius_gives_zero_constants(self):
        w, data = small_instance(0)
        C, D, L = lipschitz_probe(w, data, 0.0)
        assert C == 0 and L == 0
        assert D == pytest.approx(np.linalg.norm(gradient(w, data)))

    def test_monotone_in_samples(self):
        w, data = small_instance(1)
        a = lipschitz_probe(w, data, 0.5, samples=8)
        b = lipschitz_probe(w, data, 0.5, samples=24)
        assert b.C >= a.C and b.D >= a.D and b.L >= a.L

    def test_linear_model_curvature(self):
        # with L=1 and only output weights moving, grad F is linear in the output
        # weights; its Lipschitz constant is the top eigenvalue of 2 S^T S / n
        w, data = small_instance(2, K=3, L=1, r=2)
        from overparam_net.network import subnet_outputs
        S = subnet_outputs(w, data.xs)
        lam = np.linalg.eigvalsh(2 * S.T @ S / data.n).max()
        _, _, L = lipschitz_probe(w, data, 1.0, samples=16)
        assert L >= 0.9 * lam

    def test_network_gradient_lipschitz_scaling(self):
        # fresh seeds, not the calibration ones
        for seed in range(20, 28):
            w, data = small_instance(seed, K=3, L=2, r=3, d=1, n=10)
            radius = 0.5
            C, _, _ = lipschitz_probe(w, data, radius, samples=16)
            B = np.abs(w.inner).max() + radius
            gamma = np.abs(w.output).max() + radius
            assert C**2 <= C_NET_LIPSCHITZ * B**8 * gamma**2


class TestLinearisationBound:
    @pytest.mark.parametrize("seed", [100, 101, 102])
    def test_holds(self, seed):
        w0, star, data, cfg = projected_descent_instance(seed)
        v = verify_linearisation_bound(w0, star, data, cfg)
        assert v.status == "ok" and v.holds, v

    def test_preconditions_reported(self):
        w0, star, data, cfg = projected_descent_instance(100)
        from dataclasses import replace
        assert verify_linearisation_bound(w0, star, data, replace(cfg, projection=None)).status.startswith(
            "precondition")
        far = star.with_values(star.values + 10)
        assert "outside" in verify_linearisation_bound(w0, far, data, cfg).status
        assert "beta" in verify_linearisation_bound(w0, star, data, replace(cfg, truncation=0.5)).status


class TestLocalisation:
    @pytest.mark.parametrize("seed", range(4))
    def test_monotone_and_bounded_drift(self, seed):
        w, data = localisation_instance(seed)
        v = verify_localisation(w, data, steps=40)
        assert v.holds, v


class TestDerivativeBound:
    @pytest.mark.parametrize("L", [1, 2, 3])
    def test_sampled_below_certified(self, L):
        rng = np.random.default_rng(L)
        t = Topology(2, 3, L, 3)
        w = WeightVector(t, rng.uniform(-2, 2, t.n_weights))
        v = verify_derivative_bound(w, 1.0, grid=21)
        assert v.holds and v.certified <= v.closed_form * t.K + 1e-12

    def test_single_neuron_bound_is_tight(self):
        # f(x) = sigma(a x) at x=0 has slope a/4, the certified value
        t = Topology(1, 1, 1, 1)
        w = WeightVector.from_blocks(t, [[[0.0, 3.0]]], np.zeros((1, 0, 1, 2)), [1.0])
        assert certified_input_gradient_bound(w)[0] == pytest.approx(0.75)
        assert verify_derivative_bound(w, 1.0, grid=41).sample_max == pytest.approx(0.75, rel=1e-8)
