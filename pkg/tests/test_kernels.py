import math

import numpy as np
import pytest
from scipy import integrate

from gradmusic.geometry import Domain, Grid, make_uniform_grid
from gradmusic.kernels import (KernelGeometry, ball_kernel, biharmonic_at_zero,
                               biharmonic_bound, config_quantities, cube_kernel,
                               default_tau, dirichlet_1d, energy_bounds,
                               energy_terms, gradient_sup_bound,
                               hessian_at_zero, kernel_bound_audit,
                               kernel_matrix, kernel_quantities, kernel_value,
                               tail_sup, unit_ball_volume)
from gradmusic.signal import cube_effective_sites, random_separated_config


def dirichlet_sum_oracle(t, m, order=0):
    """Direct Fourier-sum oracle (1/(2m+1)) Σ_k (2πik)^order e^{2πikt}."""
    k = np.arange(-m, m + 1)
    return np.sum((2j * np.pi * k) ** order * np.exp(2j * np.pi * k * t)).real \
        / (2 * m + 1)


class TestDirichlet:
    def test_normalized_at_zero(self):
        for m in (1, 2, 5, 20):
            assert dirichlet_1d(0.0, m) == pytest.approx(1.0)
            assert dirichlet_1d(0.0, m, 1) == pytest.approx(0.0, abs=1e-14)

    def test_zeros_of_numerator(self):
        m = 3
        for k in range(1, 2 * m + 1):
            assert dirichlet_1d(k / (2 * m + 1), m) == pytest.approx(0.0,
                                                                     abs=1e-14)

    def test_direct_sum_oracle(self):
        assert dirichlet_1d(0.1, 2) == pytest.approx(dirichlet_sum_oracle(0.1, 2))
        rng = np.random.default_rng(0)
        for m in (1, 4, 17):
            for t in rng.uniform(-1, 1, 10):
                for order in (0, 1, 2):
                    assert dirichlet_1d(t, m, order) == pytest.approx(
                        dirichlet_sum_oracle(t, m, order), rel=1e-9, abs=1e-9)

    def test_branch_consistency_with_oracle(self):
        # both sides of the near-integer branch agree with the Fourier sum
        for m in (1, 8, 64):
            for order in (0, 1, 2):
                for t in (1e-3 * 0.999, 1e-3 * 1.001, 1e-5, 0.5e-3):
                    val = dirichlet_1d(t, m, order)
                    oracle = dirichlet_sum_oracle(t, m, order)
                    scale = max(1.0, abs(oracle))
                    assert abs(val - oracle) / scale < 1e-9

    def test_periodicity(self):
        assert dirichlet_1d(0.3, 5) == pytest.approx(dirichlet_1d(1.3, 5))
        assert dirichlet_1d(0.3, 5) == pytest.approx(dirichlet_1d(-0.7, 5))


class TestCubeKernel:
    def test_value_and_gradient_at_zero(self):
        for d in (1, 2, 3):
            z = np.zeros(d)
            assert cube_kernel(z, 4) == pytest.approx(1.0)
            assert np.allclose(cube_kernel(z, 4, "gradient"), 0.0)

    def test_tensor_identity(self):
        xi = np.array([0.13, 0.27])
        prod = dirichlet_1d(0.13, 3) * dirichlet_1d(0.27, 3)
        assert cube_kernel(xi, 3) == pytest.approx(prod)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        h = 1e-6
        for m in (2, 8):
            for _ in range(20):
                xi = rng.uniform(-0.5, 0.5, 2)
                grad = cube_kernel(xi, m, "gradient")
                fd = np.array([
                    (cube_kernel(xi + h * e, m) - cube_kernel(xi - h * e, m))
                    / (2 * h) for e in np.eye(2)])
                assert np.linalg.norm(grad - fd) <= \
                    1e-6 * np.linalg.norm(grad) + 1e-6 * m

    def test_hessian_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        m, h = 3, 1e-5
        for _ in range(10):
            xi = rng.uniform(-0.5, 0.5, 2)
            hess = cube_kernel(xi, m, "hessian")
            for i, ei in enumerate(np.eye(2)):
                for j, ej in enumerate(np.eye(2)):
                    fd = (cube_kernel(xi + h * ei + h * ej, m)
                          - cube_kernel(xi + h * ei - h * ej, m)
                          - cube_kernel(xi - h * ei + h * ej, m)
                          + cube_kernel(xi - h * ei - h * ej, m)) / (4 * h * h)
                    assert hess[i, j] == pytest.approx(fd, rel=1e-4, abs=1e-2)

    def test_real_and_even(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            xi = rng.uniform(-0.5, 0.5, 3)
            assert cube_kernel(xi, 5) == pytest.approx(cube_kernel(-xi, 5),
                                                       abs=1e-12)


class TestBallKernel:
    def test_value_at_zero(self):
        for d in (1, 2, 3):
            assert ball_kernel(np.zeros(d), 3.0) == pytest.approx(1.0)
            assert np.allclose(ball_kernel(np.zeros(d), 3.0, "gradient"), 0.0)

    def test_quadrature_oracle_d2(self):
        # (1/|B_m|) ∫_{B_m} cos(2π ξ·x) dx at |ξ| = 0.3, m = 1
        w = ball_kernel(np.array([0.3, 0.0]), 1.0)
        val, _ = integrate.dblquad(
            lambda y, x: np.cos(2 * np.pi * 0.3 * x),
            -1, 1, lambda x: -np.sqrt(1 - x ** 2), lambda x: np.sqrt(1 - x ** 2),
            epsabs=1e-12)
        assert w == pytest.approx(val / np.pi, rel=1e-8)

    def test_quadrature_oracle_d1(self):
        # d = 1 ball is the interval [-m, m]: kernel is sinc(2 m ξ)
        for m in (1.0, 2.5):
            for xi in (0.07, 0.4):
                w = ball_kernel(np.array([xi]), m)
                oracle = math.sin(2 * np.pi * m * xi) / (2 * np.pi * m * xi)
                assert w == pytest.approx(oracle, rel=1e-10)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        h = 1e-6
        for m in (1.0, 6.0):
            for _ in range(20):
                xi = rng.uniform(-0.8, 0.8, 2)
                grad = ball_kernel(xi, m, "gradient")
                fd = np.array([
                    (ball_kernel(xi + h * e, m) - ball_kernel(xi - h * e, m))
                    / (2 * h) for e in np.eye(2)])
                assert np.linalg.norm(grad - fd) <= \
                    1e-6 * np.linalg.norm(grad) + 1e-6 * m

    def test_hessian_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        m, h = 2.0, 1e-5
        for _ in range(10):
            xi = rng.uniform(0.05, 0.6, 2)
            hess = ball_kernel(xi, m, "hessian")
            fd = np.zeros((2, 2))
            for i, ei in enumerate(np.eye(2)):
                for j, ej in enumerate(np.eye(2)):
                    fd[i, j] = (ball_kernel(xi + h * ei + h * ej, m)
                                - ball_kernel(xi + h * ei - h * ej, m)
                                - ball_kernel(xi - h * ei + h * ej, m)
                                + ball_kernel(xi - h * ei - h * ej, m)) \
                        / (4 * h * h)
            assert np.abs(hess - fd).max() <= 1e-4 * np.abs(hess).max() + 1e-3

    def test_small_argument_branch_continuity(self):
        m = 5.0
        t_edge = 1e-4 / (2 * np.pi * m)
        for frac in (0.99, 1.01):
            r = t_edge * frac
            v = ball_kernel(np.array([r, 0.0]), m)
            assert v == pytest.approx(1.0, abs=1e-6)


class TestHessianAtZero:
    @pytest.mark.parametrize("d", [1, 2, 3])
    @pytest.mark.parametrize("m", [1, 4, 16])
    def test_cube_closed_form(self, d, m):
        psi = hessian_at_zero(KernelGeometry("cube", m, d))
        expected = 4 * math.pi ** 2 / 3 * m * (m + 1)
        assert np.allclose(psi, expected * np.eye(d))

    @pytest.mark.parametrize("d", [1, 2, 3])
    @pytest.mark.parametrize("m", [1, 4, 16])
    def test_ball_closed_form(self, d, m):
        psi = hessian_at_zero(KernelGeometry("ball", float(m), d))
        expected = 4 * math.pi ** 2 * m ** 2 / (d + 2)
        assert np.allclose(psi, expected * np.eye(d))

    def test_matches_finite_difference_hessian(self):
        for kind in ("cube", "ball"):
            for d, m in [(1, 4), (2, 4), (3, 2)]:
                geom = KernelGeometry(kind, m, d)
                psi = hessian_at_zero(geom)
                h = 1e-4 / (2 * math.pi * m)
                fd = np.zeros((d, d))
                for i in range(d):
                    for j in range(d):
                        offs = np.zeros((4, d))
                        offs[0, i] += h; offs[0, j] += h
                        offs[1, i] += h; offs[1, j] -= h
                        offs[2, i] -= h; offs[2, j] += h
                        offs[3, i] -= h; offs[3, j] -= h
                        vals = kernel_value(geom, offs)
                        fd[i, j] = (vals[0] - vals[1] - vals[2] + vals[3]) \
                            / (4 * h * h)
                assert np.abs(-fd - psi).max() <= 1e-5 * np.abs(psi).max()

    def test_third_derivatives_vanish_at_zero(self):
        for kind, m in (("cube", 3), ("ball", 3.0)):
            geom = KernelGeometry(kind, m, 2)
            h = 1e-3 / (2 * math.pi * 3)
            scale = (2 * math.pi * 3) ** 3
            for i in range(2):
                e = np.eye(2)[i]
                vals = kernel_value(geom, np.array(
                    [2 * h * e, h * e, -h * e, -2 * h * e]))
                third = (vals[0] - 2 * vals[1] + 2 * vals[2] - vals[3]) \
                    / (2 * h ** 3)
                assert abs(third) / scale < 1e-5


class TestKernelMatrix:
    def test_single_point(self):
        geom = KernelGeometry("cube", 4, 2)
        mat = kernel_matrix([[0.3, 0.7]], geom)
        assert mat.shape == (1, 1) and mat[0, 0] == 1.0

    def test_positive_semidefinite(self):
        rng = np.random.default_rng(6)
        for kind, m in (("cube", 8), ("ball", 8.0)):
            geom = KernelGeometry(kind, m, 2)
            for _ in range(10):
                theta = rng.uniform(0, 1, (5, 2))
                eigs = np.linalg.eigvalsh(kernel_matrix(theta, geom))
                assert eigs[0] >= -1e-10

    def test_cube_matches_gram_oracle(self):
        # K_ϑ = (2m+1)^{-d} T* T with T the steering matrix on Q_m ∩ Z^d
        geom = KernelGeometry("cube", 4, 2)
        theta = np.array([[0.2, 0.8], [0.55, 0.35]])
        sites = cube_effective_sites(geom)
        t_mat = np.exp(2j * np.pi * (sites @ theta.T))
        oracle = (t_mat.conj().T @ t_mat) / geom.nu_X
        mat = kernel_matrix(theta, geom)
        assert np.abs(mat - oracle).max() < 1e-10 * np.abs(oracle).max()

    def test_eigenvalue_bounds_well_separated(self):
        # 1 - d^{3/2}/β <= λmin <= λmax <= 1 + d^{3/2}/β for mΔ = β >= 32π√d
        rng = np.random.default_rng(7)
        d = 2
        dom = Domain("torus", d)
        beta_target = 32 * math.pi * math.sqrt(d)
        for trial in range(20):
            s = int(rng.integers(2, 5))
            delta = 0.25 * (1 + rng.uniform())
            m = int(math.ceil(beta_target / delta))
            geom = KernelGeometry("cube", m, d)
            cfg = random_separated_config(s, delta, "unit", dom, seed=trial)
            beta = geom.m * cfg.separation()
            assert beta >= beta_target
            eigs = np.linalg.eigvalsh(kernel_matrix(cfg.theta, geom))
            margin = d ** 1.5 / beta
            assert eigs[0] >= 1 - margin - 1e-12
            assert eigs[-1] <= 1 + margin + 1e-12


class TestEnergyTerms:
    def test_single_frequency_empty_sum(self):
        geom = KernelGeometry("cube", 4, 2)
        probe = make_uniform_grid(Domain("torus", 2), 0.1)
        e0, e1 = energy_terms([[0.4, 0.6]], geom, probe)
        assert e0 == 0.0 and e1 == 0.0

    def test_cube_energy_bounds(self):
        # separation mΔ = β >= 4π√d: E0 <= 16π²d²/β², E1 <= 64π⁴d³m²/β²
        d = 2
        dom = Domain("torus", d)
        rng = np.random.default_rng(8)
        for trial in range(5):
            delta = 0.3 + 0.1 * rng.uniform()
            m = int(math.ceil(4 * math.pi * math.sqrt(d) / delta)) + 10
            geom = KernelGeometry("cube", m, d)
            cfg = random_separated_config(3, delta, "unit", dom, seed=trial)
            probe = make_uniform_grid(dom, 1.0 / (2 * m))
            e0, e1 = energy_terms(cfg.theta, geom, probe)
            beta = m * cfg.separation()
            assert e0 <= 16 * math.pi ** 2 * d ** 2 / beta ** 2
            assert e1 <= 64 * math.pi ** 4 * d ** 3 * m ** 2 / beta ** 2

    def test_ball_energy_bounds(self):
        d = 2
        dom = Domain("box", d)
        m = 40.0
        geom = KernelGeometry("ball", m, d)
        cfg = random_separated_config(3, 0.35, "unit", dom, seed=3)
        probe = make_uniform_grid(dom, 1.0 / (2 * m))
        e0, e1 = energy_terms(cfg.theta, geom, probe, domain=dom)
        beta = m * cfg.separation()
        vol = unit_ball_volume(d)
        assert e0 <= d * 4 ** (d + 1) / (math.pi ** 2 * vol ** 2 * beta ** (d + 1))
        assert e1 <= d * 4 ** (d + 1) * 4 * math.pi ** 2 * m ** 2 \
            / (vol ** 2 * beta ** (d + 1))


class TestTauAndTail:
    def test_default_tau_values(self):
        assert default_tau(KernelGeometry("cube", 10, 2)) == \
            pytest.approx(1 / (80 * math.pi))
        assert default_tau(KernelGeometry("ball", 10.0, 2)) == \
            pytest.approx(1 / (40 * math.pi * math.sqrt(2)))

    def test_tau_below_half_separation(self):
        dom = Domain("torus", 2)
        cfg = random_separated_config(4, 0.25, "unit", dom, seed=9)
        geom = KernelGeometry("cube", 16, 2)
        assert default_tau(geom) <= cfg.separation() / 2

    def test_cube_tail_below_one(self):
        for m in (2, 8, 32):
            geom = KernelGeometry("cube", m, 2)
            est = tail_sup(geom, default_tau(geom))
            assert est["sup"] < 1.0

    def test_dirichlet_quarter_bound_outside_1_over_m(self):
        # |d_m(t)| <= 1/4 for |t| >= 1/m
        for m in (3, 8, 20):
            t = np.linspace(1.0 / m, 0.5, 2000)
            assert np.abs(dirichlet_1d(t, m)).max() <= 0.25 + 1e-12

    def test_ball_tail_value_via_radial_oracle(self):
        geom = KernelGeometry("ball", 1.0, 2)
        tau = default_tau(geom)
        est = tail_sup(geom, tau)
        r = np.linspace(tau, math.sqrt(2), 400_000)
        xi = np.zeros((r.size, 2))
        xi[:, 0] = r
        oracle = np.abs(ball_kernel(xi, 1.0)).max()
        assert est["sup"] == pytest.approx(oracle, rel=1e-6)
        assert est["sup"] < 1.0


class TestBoundAudit:
    @pytest.mark.parametrize("kind", ["cube", "ball"])
    def test_audit_passes(self, kind):
        geom = KernelGeometry(kind, 5, 2)
        report = kernel_bound_audit(geom, default_tau(geom), seed=0)
        assert report["pass"], report

    def test_degenerate_tau_zero(self):
        geom = KernelGeometry("cube", 3, 2)
        report = kernel_bound_audit(geom, 0.0)
        assert report["records"][0]["observed"] == pytest.approx(0.0, abs=1e-12)
        assert report["pass"]

    def test_biharmonic_closed_forms(self):
        # cube: exact Σ ∂_j²∂_k² from the Fourier series; ball: 16π⁴m⁴d/(d+4)
        m, d = 3, 2
        quartic = 16 * math.pi ** 4 / 15 * m * (m + 1) * (3 * m * m + 3 * m - 1)
        cross = 16 * math.pi ** 4 / 9 * m ** 2 * (m + 1) ** 2
        assert biharmonic_at_zero(KernelGeometry("cube", m, d)) == \
            pytest.approx(d * quartic + d * (d - 1) * cross)
        assert biharmonic_at_zero(KernelGeometry("ball", 2.0, 3)) == \
            pytest.approx(16 * math.pi ** 4 * 16 * 3 / 7)
        for kind in ("cube", "ball"):
            geom = KernelGeometry(kind, 4, 2)
            assert biharmonic_at_zero(geom) <= biharmonic_bound(geom) * (1 + 1e-12)


class TestKernelQuantities:
    def test_symmetry_and_realness_random(self):
        rng = np.random.default_rng(10)
        for kind, m in (("cube", 6), ("ball", 6.0)):
            geom = KernelGeometry(kind, m, 2)
            xi = rng.uniform(-0.5, 0.5, (40, 2))
            vals = kernel_value(geom, xi)
            assert np.all(np.isreal(vals))
            assert np.allclose(vals, kernel_value(geom, -xi), atol=1e-12)

    def test_quantities_assembly(self):
        geom = KernelGeometry("cube", 8, 2)
        kq = kernel_quantities(geom)
        assert kq.tr_psi == pytest.approx(2 * 4 * math.pi ** 2 / 3 * 8 * 9)
        assert kq.tail_sup < 1.0
        assert kq.grad_sup == pytest.approx(
            gradient_sup_bound(geom, default_tau(geom)))

    def test_config_quantities(self):
        geom = KernelGeometry("cube", 16, 2)
        dom = Domain("torus", 2)
        cfg = random_separated_config(3, 0.3, "unit", dom, seed=11)
        probe = make_uniform_grid(dom, 1.0 / 32)
        cq = config_quantities(cfg.theta, geom, probe=probe)
        assert cq.lambda_min <= cq.lambda_max
        assert np.allclose(np.diag(cq.kernel_matrix), 1.0)
        e0b, e1b = energy_bounds(cfg.theta, geom)
        if math.isfinite(e0b):
            assert cq.e0 <= e0b and cq.e1 <= e1b
