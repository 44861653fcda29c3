import math
import warnings

import numpy as np
import pytest

from gradmusic.geometry import Domain, Grid, make_uniform_grid
from gradmusic.hankel import SubspaceBasis, build_hankel, exact_basis, \
    subspace_distance, truncated_svd
from gradmusic.kernels import (ConfigQuantities, KernelGeometry,
                               config_quantities, cube_kernel, default_tau,
                               energy_bounds, hessian_at_zero, kernel_matrix,
                               kernel_quantities)
from gradmusic.landscape import (LandscapeError, MusicEvaluator,
                                 check_admissibility, grid_evaluate,
                                 music_gradient, music_hessian, music_value)
from gradmusic.signal import (NoiseModel, cube_effective_sites, observe,
                              random_separated_config)


@pytest.fixture
def basis_evaluator(config3, small_cube):
    return MusicEvaluator.from_basis(exact_basis(config3.theta, small_cube))


@pytest.fixture
def analytic_evaluator(config3, small_cube):
    return MusicEvaluator.analytic(small_cube, config3.theta)


class TestMusicValue:
    def test_zero_at_true_frequencies(self, basis_evaluator, config3):
        for theta in config3.theta:
            assert music_value(basis_evaluator, theta) <= 1e-12

    def test_single_spike_closed_form(self, small_cube):
        theta = np.array([[0.3, 0.7]])
        ev = MusicEvaluator.from_basis(exact_basis(theta, small_cube))
        rng = np.random.default_rng(0)
        for _ in range(20):
            omega = rng.uniform(0, 1, 2)
            diff = (omega - theta[0]) - np.round(omega - theta[0])
            expected = 1.0 - cube_kernel(diff, small_cube.m) ** 2
            assert music_value(ev, omega) == pytest.approx(expected, abs=1e-12)

    def test_basis_and_analytic_paths_agree(self, basis_evaluator,
                                            analytic_evaluator):
        rng = np.random.default_rng(1)
        pts = rng.uniform(0, 1, (100, 2))
        qb = basis_evaluator.values(pts)
        qa = analytic_evaluator.values(pts)
        assert np.abs(qb - qa).max() <= 1e-9

    def test_range_and_clamp_counter(self, basis_evaluator):
        rng = np.random.default_rng(2)
        vals = basis_evaluator.values(rng.uniform(0, 1, (500, 2)))
        assert np.all(vals >= 0.0) and np.all(vals <= 1.0)

    def test_unitary_basis_remix_invariance(self, config3, small_cube):
        base = exact_basis(config3.theta, small_cube)
        rng = np.random.default_rng(3)
        z = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        q, _ = np.linalg.qr(z)
        mixed = SubspaceBasis(small_cube, base.columns @ q)
        ev1 = MusicEvaluator.from_basis(base)
        ev2 = MusicEvaluator.from_basis(mixed)
        pts = rng.uniform(0, 1, (50, 2))
        assert np.abs(ev1.values(pts) - ev2.values(pts)).max() <= 1e-10

    def test_large_negative_raises(self, small_cube):
        bad = np.zeros(((2 * 4 + 1) ** 2, 1), dtype=complex)
        bad[0, 0] = 1.2  # not orthonormal: projector inflates the projection
        with pytest.raises(LandscapeError):
            MusicEvaluator.from_basis(SubspaceBasis(small_cube, bad))


class TestDerivatives:
    def test_gradient_vanishes_at_minima(self, basis_evaluator, config3):
        for theta in config3.theta:
            assert np.linalg.norm(music_gradient(basis_evaluator, theta)) \
                <= 1e-9 * math.sqrt((2 * 4 + 1) ** 2)

    @pytest.mark.parametrize("path", ["basis", "analytic", "ball"])
    def test_gradient_matches_finite_differences(self, path, config3,
                                                 small_cube):
        ev = _make_evaluator(path, config3, small_cube)
        rng = np.random.default_rng(4)
        h = 1e-6
        scale = 2.0 * math.sqrt(np.trace(hessian_at_zero(ev.geometry)))
        for _ in range(25):
            omega = _random_point(ev, rng)
            grad = ev.gradient(omega)
            fd = np.array([
                (ev.value(omega + h * e) - ev.value(omega - h * e)) / (2 * h)
                for e in np.eye(2)])
            assert np.linalg.norm(grad - fd) <= \
                1e-5 * np.linalg.norm(grad) + 1e-7 * scale

    @pytest.mark.parametrize("path", ["basis", "analytic", "ball"])
    def test_hessian_matches_finite_differences(self, path, config3,
                                                small_cube):
        ev = _make_evaluator(path, config3, small_cube)
        rng = np.random.default_rng(5)
        h = 2e-5 / max(1.0, ev.geometry.m / 8)
        scale = float(np.trace(hessian_at_zero(ev.geometry)))
        for _ in range(10):
            omega = _random_point(ev, rng)
            hess = ev.hessian(omega)
            fd = np.zeros((2, 2))
            for i, ei in enumerate(np.eye(2)):
                for j, ej in enumerate(np.eye(2)):
                    fd[i, j] = (ev.value(omega + h * ei + h * ej)
                                - ev.value(omega + h * ei - h * ej)
                                - ev.value(omega - h * ei + h * ej)
                                + ev.value(omega - h * ei - h * ej)) \
                        / (4 * h * h)
            assert np.abs(hess - fd).max() <= \
                1e-5 * np.abs(hess).max() + 1e-4 * scale

    def test_hessian_symmetric(self, basis_evaluator):
        omega = np.array([0.21, 0.47])
        hess = music_hessian(basis_evaluator, omega)
        assert np.array_equal(hess, hess.T)

    def test_single_spike_hessian_at_minimum_is_2_psi(self, small_cube):
        theta = np.array([[0.4, 0.55]])
        ev = MusicEvaluator.from_basis(exact_basis(theta, small_cube))
        hess = music_hessian(ev, theta[0])
        assert np.abs(hess - 2 * hessian_at_zero(small_cube)).max() \
            <= 1e-6 * np.abs(hess).max()


def _make_evaluator(path, config3, small_cube):
    if path == "basis":
        return MusicEvaluator.from_basis(exact_basis(config3.theta, small_cube))
    if path == "analytic":
        return MusicEvaluator.analytic(small_cube, config3.theta)
    geom = KernelGeometry("ball", 6.0, 2)
    dom = Domain("box", 2)
    theta = np.array([[0.25, 0.4], [0.7, 0.65]])
    return MusicEvaluator.analytic(geom, theta, domain=dom)


def _random_point(ev, rng):
    if ev.domain.kind == "torus":
        return rng.uniform(0, 1, 2)
    return rng.uniform(0.05, 0.95, 2)


class TestGridEvaluate:
    def test_matches_pointwise_values(self, basis_evaluator):
        grid = make_uniform_grid(Domain("torus", 2), 0.05)
        fft_vals = grid_evaluate(basis_evaluator, grid)
        direct = basis_evaluator.values(grid.points)
        assert np.abs(fft_vals - direct).max() <= 1e-10

    def test_constant_basis_closed_form(self, small_cube):
        # basis = normalized steering vector at 0: q = 1 - D_m(omega)^2
        ev = MusicEvaluator.from_basis(exact_basis([[0.0, 0.0]], small_cube))
        grid = make_uniform_grid(Domain("torus", 2), 0.1)
        vals = grid_evaluate(ev, grid)
        expected = 1.0 - cube_kernel(
            grid.points - np.round(grid.points), small_cube.m) ** 2
        assert np.abs(vals - np.clip(expected, 0, 1)).max() <= 1e-10

    def test_zero_dimensional_basis(self, small_cube):
        empty = SubspaceBasis(small_cube,
                              np.zeros(((2 * 4 + 1) ** 2, 0), dtype=complex))
        ev = MusicEvaluator.from_basis(empty)
        grid = make_uniform_grid(Domain("torus", 2), 0.1)
        assert np.all(grid_evaluate(ev, grid) == 1.0)

    def test_non_power_of_two_falls_back_with_warning(self, basis_evaluator):
        grid = Grid.uniform(Domain("torus", 2), 12)
        with pytest.warns(UserWarning, match="direct"):
            vals = grid_evaluate(basis_evaluator, grid)
        assert np.abs(vals - basis_evaluator.values(grid.points)).max() == 0.0

    def test_analytic_path_on_grid(self, analytic_evaluator):
        grid = make_uniform_grid(Domain("torus", 2), 0.1)
        vals = grid_evaluate(analytic_evaluator, grid)
        assert vals.shape == (grid.size,)
        assert np.all((vals >= 0) & (vals <= 1))

    def test_bit_for_bit_deterministic(self, basis_evaluator):
        grid = make_uniform_grid(Domain("torus", 2), 0.05)
        first = grid_evaluate(basis_evaluator, grid)
        second = grid_evaluate(basis_evaluator, grid)
        assert np.array_equal(first, second)


class TestPerturbationInequalities:
    def test_value_and_gradient_bernstein_bounds(self, config3, small_cube,
                                                 clean_samples):
        noisy = observe(config3, small_cube,
                        NoiseModel(kind="gaussian", sigma0=0.05), seed=13)
        spectrum = truncated_svd(build_hankel(noisy), config3.s,
                                 tol=1e-10, seed=0)
        exact = exact_basis(config3.theta, small_cube)
        dist = subspace_distance(exact, spectrum.left)
        ev_exact = MusicEvaluator.from_basis(exact)
        ev_noisy = MusicEvaluator.from_basis(spectrum.left)
        tr_psi = float(np.trace(hessian_at_zero(small_cube)))
        rng = np.random.default_rng(6)
        for _ in range(40):
            omega = rng.uniform(0, 1, 2)
            dq = abs(ev_exact.value(omega) - ev_noisy.value(omega))
            assert dq <= dist + 1e-10
            dg = np.linalg.norm(ev_exact.gradient(omega)
                                - ev_noisy.gradient(omega))
            assert dg <= math.sqrt(tr_psi) * dist + 1e-9

    def test_gradient_sup_bound(self, basis_evaluator, small_cube):
        rng = np.random.default_rng(7)
        tr_psi = float(np.trace(hessian_at_zero(small_cube)))
        grads = [np.linalg.norm(basis_evaluator.gradient(rng.uniform(0, 1, 2)))
                 for _ in range(200)]
        assert max(grads) <= 2.0 * math.sqrt(tr_psi) + 1e-9


def _admissible_instance():
    """Certified-admissible cube configuration: two antipodal-ish points at
    huge aperture so the certificate conditions hold with room."""
    d = 2
    theta = np.array([[0.2, 0.2], [0.7, 0.7]])
    m = 2048
    geom = KernelGeometry("cube", m, d)
    kq = kernel_quantities(geom)
    dom = Domain("torus", d)
    delta = 0.5 * math.sqrt(2)
    beta = m * delta
    e0, e1 = energy_bounds(theta, geom)
    mat = kernel_matrix(theta, geom)
    eigs = np.linalg.eigvalsh(mat)
    cfg_q = ConfigQuantities(kernel_matrix=mat, lambda_min=float(eigs[0]),
                             lambda_max=float(eigs[-1]), e0=e0, e1=e1,
                             separation=delta, probe_mesh=float("nan"))
    return geom, dom, theta, kq, cfg_q


class TestAdmissibility:
    def test_zero_projection_distance(self):
        geom, dom, theta, kq, cfg_q = _admissible_instance()
        diag = check_admissibility(kq, cfg_q, 0.0, 1.5, 0.25)
        assert diag.cond3_lhs == 0.0
        assert diag.epsilon == 0.0 and diag.alpha0 == 0.0
        assert diag.rho == kq.tau

    def test_epsilon_formula_direct_substitution(self):
        # tr(psi)=2c, lambda_d=c, delta2=1/4, proj=p -> eps = 8 sqrt(2c) p / c
        geom = KernelGeometry("cube", 4, 2)
        kq = kernel_quantities(geom)
        c = kq.lambda_min_psi
        cfg_q = ConfigQuantities(kernel_matrix=np.eye(1), lambda_min=1.0,
                                 lambda_max=1.0, e0=0.0, e1=0.0,
                                 separation=math.inf, probe_mesh=0.0)
        p = 1e-3
        diag = check_admissibility(kq, cfg_q, p, 1.5, 0.25)
        assert diag.epsilon == pytest.approx(
            8.0 * math.sqrt(2 * c) * p / c)
        assert diag.alpha1 == pytest.approx(
            (5 / 8 - 0.25 / 4) * (1 - kq.tail_sup ** 2))

    def test_marginal_instance_records_pass_fail(self):
        # m delta = 8 is far outside the certified regime: conditions are
        # evaluated and recorded, admissibility is (correctly) denied
        geom = KernelGeometry("cube", 32, 2)
        dom = Domain("torus", 2)
        cfg = random_separated_config(2, 8.0 / 32, "unit", dom, seed=8)
        kq = kernel_quantities(geom)
        cfg_q = config_quantities(cfg.theta, geom,
                                  probe=make_uniform_grid(dom, 1 / 64))
        diag = check_admissibility(kq, cfg_q, 0.01, 1.5, 0.25)
        blob = diag.to_json()
        assert len(blob["conditions"]) == 3
        assert not diag.admissible

    def test_certified_instance_is_admissible(self):
        geom, dom, theta, kq, cfg_q = _admissible_instance()
        diag = check_admissibility(kq, cfg_q, 1e-6, 1.5, 0.25)
        assert diag.admissible
        assert diag.alpha0 < diag.alpha1
        assert diag.epsilon < diag.rho

    def test_hessian_window_on_admissible_instance(self):
        geom, dom, theta, kq, cfg_q = _admissible_instance()
        diag = check_admissibility(kq, cfg_q, 0.0, 1.5, 0.25)
        ev = MusicEvaluator.analytic(geom, theta, domain=dom)
        rng = np.random.default_rng(9)
        lo, hi = diag.hessian_eig_window
        for _ in range(20):
            direction = rng.standard_normal(2)
            direction /= np.linalg.norm(direction)
            omega = theta[0] + direction * kq.tau * rng.uniform(0, 1)
            eigs = np.linalg.eigvalsh(ev.hessian(omega))
            assert eigs[0] >= lo - 1e-6 * hi
            assert eigs[-1] <= hi * (1 + 1e-9)

    def test_value_gap_outside_basins(self):
        geom, dom, theta, kq, cfg_q = _admissible_instance()
        diag = check_admissibility(kq, cfg_q, 0.0, 1.5, 0.25)
        ev = MusicEvaluator.analytic(geom, theta, domain=dom)
        rng = np.random.default_rng(10)
        count = 0
        while count < 100:
            omega = rng.uniform(0, 1, 2)
            dists = [dom.distance(omega, t) for t in theta]
            if min(dists) <= diag.rho:
                continue
            count += 1
            assert ev.value(omega) > diag.alpha1

    def test_delta_precondition(self):
        geom, dom, theta, kq, cfg_q = _admissible_instance()
        with pytest.raises(LandscapeError):
            check_admissibility(kq, cfg_q, 0.0, 1.5, 0.75)
