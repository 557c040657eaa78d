import numpy as np
import pytest

from rpmix.ecf import (
    EcfGrid,
    cf_weights,
    default_grid,
    empirical_cf,
    fit_from_init,
    fit_step1,
    fit_step2,
    init_step,
    make_gaussian_objective,
    make_student_objective,
    model_cf,
)
from rpmix.errors import InvalidArgumentError
from rpmix.model import GAUSSIAN, STUDENT_T, UnivariateMixture

from conftest import t_cf_by_quadrature


def single(family, loc, s2, nu=None):
    return UnivariateMixture(family, np.array([1.0]), np.array([loc]), np.array([s2]), nu=nu)


class TestGrid:
    def test_points_are_equally_spaced(self):
        grid = EcfGrid(tau=0.5, n_points=4)
        np.testing.assert_allclose(grid.points, [0.5, 1.0, 1.5, 2.0])

    def test_default_grid_scale(self, rng):
        y = 2.5 * rng.standard_normal(4000)
        grid = default_grid(y, 20)
        assert grid.tau * 20 == pytest.approx(4.0 / np.std(y), rel=1e-12)

    def test_constant_data_rejected(self):
        with pytest.raises(InvalidArgumentError):
            default_grid(np.ones(50))

    def test_robust_scale_ignores_tails(self, rng):
        body = rng.standard_normal(1000)
        y = np.concatenate([body, [500.0, -400.0]])
        tame = default_grid(y, 20, robust_scale=True)
        wild = default_grid(y, 20)
        assert tame.tau > 5 * wild.tau  # sd blows up, IQR does not

    def test_weights_modes(self):
        grid = EcfGrid(tau=1.0, n_points=3)
        np.testing.assert_array_equal(cf_weights(grid, "identity"), np.ones(6))
        diag = cf_weights(grid, "diagonal")
        expected = 1.0 / (1.0 + grid.points**2)
        np.testing.assert_allclose(diag, np.concatenate([expected, expected]))
        with pytest.raises(InvalidArgumentError):
            cf_weights(grid, "hac")


class TestEmpiricalCf:
    def test_all_zeros(self):
        grid = EcfGrid(tau=0.7, n_points=5)
        out = empirical_cf(np.zeros(10), grid)
        np.testing.assert_allclose(out[:5], 1.0)
        np.testing.assert_allclose(out[5:], 0.0)

    def test_symmetric_pair(self):
        grid = EcfGrid(tau=0.3, n_points=4)
        a = 1.234
        out = empirical_cf(np.array([a, -a]), grid)
        np.testing.assert_allclose(out[4:], 0.0, atol=1e-15)
        np.testing.assert_allclose(out[:4], np.cos(grid.points * a), atol=1e-15)

    def test_gaussian_draws_near_theory(self, rng):
        y = rng.standard_normal(10_000)
        out = empirical_cf(y, EcfGrid(tau=1.0, n_points=1))
        assert abs(out[0] - np.exp(-0.5)) < 0.05
        assert abs(out[1]) < 0.05

    def test_concentration_band(self):
        # sup-norm deviation from the true CF stays below 4 / sqrt(N)
        n = 500
        mix = UnivariateMixture(
            GAUSSIAN, np.array([0.3, 0.7]), np.array([0.0, 3.0]), np.array([1.0, 0.8])
        )
        grid = EcfGrid(tau=0.2, n_points=20)
        truth = model_cf(mix, grid)
        hits = 0
        reps = 200
        for rep in range(reps):
            r = np.random.default_rng(rep)
            z = r.random(n) < 0.3
            y = np.where(z, r.normal(0.0, 1.0, n), r.normal(3.0, np.sqrt(0.8), n))
            hits += np.max(np.abs(empirical_cf(y, grid) - truth)) < 4.0 / np.sqrt(n)
        assert hits >= 0.95 * reps


class TestModelCf:
    def test_gaussian_closed_form(self):
        grid = EcfGrid(tau=1.0, n_points=1)
        out = model_cf(single(GAUSSIAN, 0.0, 1.0), grid)
        np.testing.assert_allclose(out, [np.exp(-0.5), 0.0], atol=1e-15)

    def test_gaussian_mixture_exact(self, rng):
        mix = UnivariateMixture(
            GAUSSIAN, np.array([0.25, 0.75]), np.array([-1.0, 2.0]), np.array([0.5, 2.0])
        )
        grid = EcfGrid(tau=0.37, n_points=10)
        out = model_cf(mix, grid)
        t = grid.points
        psi = 0.25 * np.exp(1j * t * -1.0 - 0.5 * t**2 * 0.5) + 0.75 * np.exp(
            1j * t * 2.0 - 0.5 * t**2 * 2.0
        )
        np.testing.assert_allclose(out, np.concatenate([psi.real, psi.imag]), atol=1e-12)

    def test_cauchy_closed_form(self):
        grid = EcfGrid(tau=2.0, n_points=1)
        out = model_cf(single(STUDENT_T, 0.0, 1.0, nu=1), grid)
        np.testing.assert_allclose(out, [np.exp(-2.0), 0.0], atol=1e-14)

    @pytest.mark.parametrize("nu", [1, 2, 4])
    def test_t_cf_matches_density_quadrature(self, nu):
        grid = EcfGrid(tau=0.15, n_points=50)
        out = model_cf(single(STUDENT_T, 0.0, 1.0, nu=nu), grid)
        for i, t in enumerate(grid.points):
            assert out[i] == pytest.approx(t_cf_by_quadrature(t, nu), abs=1e-6)
        np.testing.assert_allclose(out[50:], 0.0, atol=1e-14)

    def test_t_location_shifts_phase(self):
        grid = EcfGrid(tau=0.4, n_points=6)
        base = model_cf(single(STUDENT_T, 0.0, 0.7, nu=4), grid)
        shifted = model_cf(single(STUDENT_T, 1.3, 0.7, nu=4), grid)
        mag = base[:6]
        t = grid.points
        np.testing.assert_allclose(shifted[:6], mag * np.cos(1.3 * t), atol=1e-12)
        np.testing.assert_allclose(shifted[6:], mag * np.sin(1.3 * t), atol=1e-12)

    def test_cf_symmetry_about_center(self):
        # mixture symmetric about c: Im psi(t) cos(tc) - Re psi(t) sin(tc) = 0
        c = 0.8
        mix = UnivariateMixture(
            GAUSSIAN,
            np.array([0.5, 0.5]),
            np.array([c - 1.1, c + 1.1]),
            np.array([0.6, 0.6]),
        )
        grid = EcfGrid(tau=0.3, n_points=12)
        out = model_cf(mix, grid)
        re, im = out[:12], out[12:]
        t = grid.points
        np.testing.assert_allclose(im * np.cos(t * c) - re * np.sin(t * c), 0.0, atol=1e-10)


class TestInitStep:
    def test_perfectly_separated_clusters(self, rng):
        y = np.concatenate([rng.normal(0.0, 1e-3, 50), rng.normal(10.0, 1e-3, 50)])
        res = init_step(y, 2, rng=rng)
        assert res.screen_passed
        np.testing.assert_allclose(np.sort(res.mixture.locations), [0.0, 10.0], atol=0.01)
        np.testing.assert_allclose(res.mixture.weights, [0.5, 0.5], atol=0.01)

    def test_constant_data_fails_screen(self):
        res = init_step(np.ones(100), 2, rng=np.random.default_rng(0))
        assert not res.screen_passed
        assert res.mixture is None

    def test_example1_screen_rate(self):
        from rpmix.model import project_sample, sample

        from conftest import example1_mixture

        model = example1_mixture(eta=2.0)
        passes = 0
        for s in range(100):
            y = project_sample(sample(model, 200, seed=5000 + s).data, np.array([1.0, 0.0]))
            res = init_step(y, 2, rng=np.random.default_rng(s), family=STUDENT_T, nu=4)
            passes += res.screen_passed
        assert passes >= 95

    def test_minimum_sample_size(self):
        with pytest.raises(InvalidArgumentError):
            init_step(np.zeros(15), 2, rng=np.random.default_rng(0))


class TestGradients:
    @pytest.mark.parametrize(
        "family,nu,fixed",
        [
            (GAUSSIAN, None, None),
            (STUDENT_T, 4, None),
            (STUDENT_T, 1, None),
            (GAUSSIAN, None, np.array([0.4, 0.6])),
            (STUDENT_T, 2, np.array([0.4, 0.6])),
        ],
    )
    def test_analytic_gradient_matches_finite_differences(self, family, nu, fixed, rng):
        grid = EcfGrid(tau=0.17, n_points=20)
        y = np.concatenate([rng.standard_normal(120), 3 + 0.7 * rng.standard_normal(80)])
        ehat = empirical_cf(y, grid)
        w = cf_weights(grid, "diagonal")
        if family == GAUSSIAN:
            obj = make_gaussian_objective(ehat, grid.points, w, 2, fixed_weights=fixed)
        else:
            obj = make_student_objective(ehat, grid.points, w, 2, nu, fixed_weights=fixed)
        n_par = 4 if fixed is not None else 6
        for _ in range(20):
            theta = rng.standard_normal(n_par)
            _, grad = obj(theta)
            eps = 1e-6
            fd = np.empty(n_par)
            for i in range(n_par):
                up, dn = theta.copy(), theta.copy()
                up[i] += eps
                dn[i] -= eps
                fd[i] = (obj(up)[0] - obj(dn)[0]) / (2 * eps)
            denom = np.maximum(np.abs(fd), 1e-3)
            assert np.max(np.abs(grad - fd) / denom) < 1e-5


class TestFitStep1:
    def test_two_component_gaussian_recovery(self, rng):
        n = 2000
        z = rng.random(n) < 0.3
        y = np.where(z, rng.normal(0.0, 1.0, n), rng.normal(4.0, 1.0, n))
        res = fit_step1(y, 2, family=GAUSSIAN, seed=1)
        assert res.screen_passed and res.fitted is not None
        order = np.argsort(res.fitted.locations)
        np.testing.assert_allclose(res.fitted.weights[order], [0.3, 0.7], atol=0.05)
        np.testing.assert_allclose(res.fitted.locations[order], [0.0, 4.0], atol=0.15)

    def test_single_component_moment_match(self, rng):
        y = rng.normal(2.0, 1.5, 3000)
        res = fit_step1(y, 1, family=GAUSSIAN, seed=2)
        assert res.fitted.weights[0] == 1.0
        assert abs(res.fitted.locations[0] - y.mean()) < 3.0 * y.std() / np.sqrt(y.size)

    def test_restart_stability(self, rng):
        n = 1000
        z = rng.random(n) < 0.5
        y = np.where(z, rng.normal(-3.0, 1.0, n), rng.normal(3.0, 1.0, n))
        a = fit_step1(y, 2, family=GAUSSIAN, seed=101)
        b = fit_step1(y, 2, family=GAUSSIAN, seed=202)
        assert a.screen_passed == b.screen_passed
        assert abs(a.criterion - b.criterion) < 1e-6

    def test_criterion_nonnegative_and_trace_monotone(self, rng):
        y = rng.standard_normal(400)
        res = fit_step1(y, 2, family=GAUSSIAN, seed=3)
        assert res.criterion >= 0.0
        trace = res.criterion_trace
        assert np.all(np.diff(trace) <= 0.0)
        assert res.criterion == pytest.approx(trace[-1])

    def test_perfect_match_gives_zero_criterion(self):
        mix = UnivariateMixture(
            GAUSSIAN, np.array([0.4, 0.6]), np.array([-1.0, 2.0]), np.array([1.0, 0.5])
        )
        grid = EcfGrid(tau=0.25, n_points=12)
        ehat = model_cf(mix, grid)
        obj = make_gaussian_objective(ehat, grid.points, np.ones(24), 2)
        theta = np.concatenate(
            [mix.locations, np.log(mix.scales2), np.log(mix.weights)]
        )
        q, _ = obj(theta)
        assert q == pytest.approx(0.0, abs=1e-24)

    def test_screen_failure_flags_result(self):
        res = fit_step1(np.ones(60), 2, family=GAUSSIAN, seed=4)
        assert not res.screen_passed
        assert not res.usable

    def test_grid_too_small_for_components(self, rng):
        y = rng.standard_normal(200)
        with pytest.raises(InvalidArgumentError):
            fit_step1(y, 2, family=GAUSSIAN, grid=EcfGrid(tau=0.5, n_points=5), seed=0)


class TestFitStep2:
    def test_single_component_matches_step1(self, rng):
        y = rng.normal(1.0, 2.0, 500)
        f1 = fit_step1(y, 1, family=GAUSSIAN, seed=5)
        f2 = fit_step2(y, np.array([1.0]), f1.fitted, family=GAUSSIAN)
        assert abs(f1.fitted.locations[0] - f2.fitted.locations[0]) < 1e-10
        assert abs(f1.fitted.scales2[0] - f2.fitted.scales2[0]) < 1e-10

    def test_zero_weight_component_untouched(self, rng):
        y = rng.normal(0.0, 1.0, 400)
        init = UnivariateMixture(
            GAUSSIAN, np.array([1.0, 0.0]), np.array([0.0, 9.9]), np.array([1.0, 7.7])
        )
        res = fit_step2(y, np.array([1.0, 0.0]), init, family=GAUSSIAN)
        assert res.fitted.locations[1] == 9.9
        assert res.fitted.scales2[1] == 7.7

    def test_weights_must_lie_on_simplex(self, rng):
        y = rng.normal(0.0, 1.0, 400)
        init = UnivariateMixture(
            GAUSSIAN, np.array([0.5, 0.5]), np.array([0.0, 1.0]), np.array([1.0, 1.0])
        )
        with pytest.raises(InvalidArgumentError):
            fit_step2(y, np.array([0.5, 0.6]), init, family=GAUSSIAN)

    def test_pinned_weights_usually_improve_locations(self):
        # paired comparison on well-separated two-component draws
        wins = 0
        for rep in range(100):
            r = np.random.default_rng(10_000 + rep)
            n = 500
            z = r.random(n) < 0.4
            y = np.where(z, r.normal(-2.0, 0.8, n), r.normal(2.0, 1.2, n))
            f1 = fit_step1(y, 2, family=GAUSSIAN, seed=rep)
            if not f1.usable:
                continue
            init = f1.fitted.reordered(np.argsort(f1.fitted.locations))
            f2 = fit_step2(y, np.array([0.4, 0.6]), init, family=GAUSSIAN)
            truth = np.array([-2.0, 2.0])
            e1 = np.abs(np.sort(f1.fitted.locations) - truth).sum()
            e2 = np.abs(np.sort(f2.fitted.locations) - truth).sum()
            wins += e2 <= e1
        assert wins >= 60


class TestFitFromInit:
    def test_refines_a_rough_start(self, rng):
        n = 1500
        z = rng.random(n) < 0.35
        y = np.where(z, rng.normal(-1.5, 0.9, n), rng.normal(2.5, 1.1, n))
        rough = UnivariateMixture(
            GAUSSIAN, np.array([0.5, 0.5]), np.array([-1.0, 2.0]), np.array([1.0, 1.0])
        )
        res = fit_from_init(y, rough, family=GAUSSIAN)
        order = np.argsort(res.fitted.locations)
        np.testing.assert_allclose(res.fitted.weights[order], [0.35, 0.65], atol=0.06)
        np.testing.assert_allclose(res.fitted.locations[order], [-1.5, 2.5], atol=0.2)
