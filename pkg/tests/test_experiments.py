import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from overparam_net.experiments import (CSV_COLUMNS, ExperimentConfig, K_tilde, cell_seed,
                                       covering_bound, fit_slope, generate_data, make_target,
                                       mc_l2_error, rate_csv, rate_study, run_cell,
                                       verify_suite)
from overparam_net.training import gradient_fault


def tiny(**kw):
    base = dict(n_grid=(20, 40, 80), reps=2, steps=10, m_eval=500)
    base.update(kw)
    return ExperimentConfig(**base)


class TestConfig:
    def test_defaults_are_the_rate_fixture(self):
        c = ExperimentConfig()
        assert (c.target, c.d, c.p, c.mode, c.reps) == ("abs", 1, 1.0, "planted", 10)
        assert c.n_grid == (50, 100, 200, 400, 800, 1600, 3200)

    def test_validation(self):
        with pytest.raises(ValueError):
            ExperimentConfig(n_grid=(10, 10))
        with pytest.raises(ValueError):
            ExperimentConfig(reps=0)
        with pytest.raises(ValueError):
            ExperimentConfig(noise=-1)
        with pytest.raises(ValueError):
            ExperimentConfig(mode="oracle")
        with pytest.raises(ValueError):
            ExperimentConfig.from_dict({"nosuchkey": 1})

    def test_json_roundtrip(self, tmp_path):
        c = tiny(target="sin", p=2.0, seed=7)
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(c.to_dict()))
        assert ExperimentConfig.from_json(str(path)) == c

    def test_targets(self):
        x = np.array([[0.5, -0.25]])
        assert make_target("abs", 2)(x)[0] == pytest.approx(0.375)
        assert make_target("linear", 2)(x)[0] == pytest.approx(0.125)
        assert make_target("product", 2)(x)[0] == pytest.approx(-0.125)
        assert make_target("zero", 2)(x)[0] == 0.0
        assert make_target("expr:x1 - x2", 2)(x)[0] == pytest.approx(0.75)
        with pytest.raises(ValueError):
            make_target("nope")


class TestData:
    def test_noiseless(self):
        c = tiny(noise=0.0, target="sin", p=2.0)
        data = generate_data(c, 50, 3)
        assert np.array_equal(data.ys, c.make_target()(data.xs))
        assert np.abs(data.xs).max() <= c.A

    def test_noise_mean(self):
        c = tiny(noise=0.5)
        data = generate_data(c, 100_000, 1)
        eps = data.ys - c.make_target()(data.xs)
        assert abs(eps.mean()) <= 4 * 0.5 / math.sqrt(1e5)

    def test_deterministic(self):
        c = tiny()
        a, b = generate_data(c, 30, 9), generate_data(c, 30, 9)
        assert np.array_equal(a.xs, b.xs) and np.array_equal(a.ys, b.ys)
        assert not np.array_equal(a.xs, generate_data(c, 30, 10).xs)


class TestMcError:
    def test_exact_cases(self):
        f = make_target("sin", 1, 2.0)
        assert mc_l2_error(f, f, 1, 1.0, 1000).value == 0.0
        one = mc_l2_error(lambda X: np.zeros(len(X)), lambda X: np.ones(len(X)), 1, 1.0, 100)
        assert one.value == 1.0 and one.stderr == 0.0

    def test_closed_form_integral(self):
        e = mc_l2_error(lambda X: np.zeros(len(X)), lambda X: X[:, 0], 1, 1.0, 100_000, seed=2)
        assert abs(e.value - 1 / 3) <= 3 * e.stderr

    def test_stderr_scaling(self):
        zero = lambda X: np.zeros(len(X))
        lin = lambda X: X[:, 0]
        se = [mc_l2_error(zero, lin, 1, 1.0, M, seed=4).stderr for M in (1000, 10_000, 100_000)]
        for a, b in zip(se, se[1:]):
            assert b / a == pytest.approx(1 / math.sqrt(10), rel=0.3)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            mc_l2_error(lambda X: X, lambda X: X, 1, 1.0, 0)


class TestSlope:
    def test_exact_power_law(self):
        n = np.array([10, 20, 40, 80])
        assert fit_slope(n, 3 * n**-0.5)[0] == pytest.approx(-0.5)

    def test_insufficient_and_degenerate(self):
        assert fit_slope([10, 20], [1, 2]) == (None, "insufficient")
        assert fit_slope([10, 20, 40], [0.0, 0.0, 0.0]) == (None, "degenerate")


class TestRateStudy:
    def test_seeds(self):
        assert cell_seed(0, 50, 1) == cell_seed(0, 50, 1)
        assert len({cell_seed(0, n, r) for n in (50, 100) for r in range(5)}) == 10
        assert K_tilde(ExperimentConfig(), 64) == 4

    def test_zero_target_is_degenerate(self):
        r = rate_study(tiny(target="zero", noise=0.0, mode="random"))
        assert r.slope_status == "degenerate"
        assert all(m == 0.0 for m in r.means)

    def test_csv_format(self):
        r = rate_study(tiny(reps=1, mode="random"))
        lines = rate_csv(r).splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS)
        assert len(lines) == 4
        n, rep, seed, err, se, wall = lines[1].split(",")
        assert (n, rep, wall) == ("20", "0", "") and float(err) >= 0
        assert r.slope_status == "ok" and "fewer than 10" in r.notes[0]

    def test_timing_fills_wall_column(self):
        cell = run_cell(tiny(mode="random"), 20, 0, timing=True)
        assert cell.wall_ms > 0

    def test_failed_cells_recorded(self):
        c = tiny(reps=1, step_size=1e300, mode="random", target="expr:1e200 + 0*x1", p=2.0)
        with np.errstate(all="ignore"):
            r = rate_study(c)
        assert r.failures == 3 and all(cell.failure for cell in r.cells)
        assert "failed cells" in r.notes[-1]
        assert rate_csv(r).splitlines()[1].endswith(",,,")

    def test_stderr_shrinks_with_repetitions(self):
        se = [rate_study(ExperimentConfig(n_grid=(30,), reps=R, steps=10, m_eval=500,
                                          mode="random")).stderrs[0] for R in (20, 80)]
        assert se[1] / se[0] == pytest.approx(0.5, rel=0.3)

    def test_noiseless_linear_planted_slope_nonpositive(self):
        c = ExperimentConfig(target="linear", p=2.0, noise=0.0, n_grid=(50, 100, 200, 400),
                             reps=3, steps=100, m_eval=2000)
        r = rate_study(c)
        assert r.slope_status == "ok" and r.slope <= 0


class TestCoveringBound:
    def test_unit_example(self):
        val = covering_bound(1, 1, 1, 1, 1, 1, 1, 1, 0.5, 2)
        assert val == pytest.approx(3 * math.log(4))

    @given(st.floats(0.01, 0.49), st.floats(0.51, 0.99))
    def test_decreasing_in_eps(self, e1, e2):
        args = (1.5, 2, 1.2, 1.1, 3, 2, 2, 1)
        assert covering_bound(*args, e1, 2) >= covering_bound(*args, e2, 2)

    @given(st.sampled_from(range(5)), st.floats(1.0, 3.0))
    def test_increasing_in_magnitudes(self, which, factor):
        base = [1.5, 2.0, 1.2, 1.1, 3.0]
        bumped = list(base)
        bumped[which] *= factor
        b0 = covering_bound(*base, 2, 2, 1, 0.3, 2)
        b1 = covering_bound(*bumped, 2, 2, 1, 0.3, 2)
        assert b1 >= b0 - 1e-12

    def test_large_k_limit(self):
        v = covering_bound(1, 1, 1, 1, 1, 1, 1, 1e12, 0.5, 2)
        assert v == pytest.approx(2 * math.log(4), rel=1e-9)

    def test_domain(self):
        with pytest.raises(ValueError):
            covering_bound(1, 1, 1, 1, 1, 1, 1, 1, 1.0, 2)
        with pytest.raises(ValueError):
            covering_bound(0.5, 1, 1, 1, 1, 1, 1, 1, 0.5, 2)


class TestVerifySuite:
    def test_all_pass_by_default(self):
        verdicts = verify_suite("all")
        failed = [v for v in verdicts if not v.passed]
        assert not failed, failed
        assert {v.suite for v in verdicts} == {"approx", "opt", "derivbound"}

    def test_stable_across_runs(self):
        a = [v.as_dict() for v in verify_suite("opt", seed=3)]
        b = [v.as_dict() for v in verify_suite("opt", seed=3)]
        assert a == b

    def test_gradient_fault_fails_opt(self):
        with gradient_fault(3):
            verdicts = verify_suite("opt")
        assert not all(v.passed for v in verdicts)

    def test_unknown_suite(self):
        with pytest.raises(ValueError):
            verify_suite("bogus")
