"""MUSIC landscape: values, derivatives, grid sweeps, admissibility.

Two evaluation paths exist.  The subspace path works from any orthonormal
basis (estimated or exact) on the cube lattice and computes projections of
the steering vector onto it.  The analytic path works from a known frequency
configuration through the kernel matrix and covers the noiseless ball case
as well as an independent cross-check on the cube.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .geometry import Domain, Grid
from .hankel import SubspaceBasis
from .kernels import (ConfigQuantities, KernelGeometry, KernelQuantities,
                      kernel_gradient, kernel_hessian, kernel_matrix,
                      kernel_value)
from .signal import cube_effective_sites


class LandscapeError(ValueError):
    pass


class MusicEvaluator:
    """Evaluates the (perturbed) MUSIC function q, its gradient and Hessian.

    Values are clamped to [0, 1]; clamps of magnitude within 1e-10 are
    counted, anything larger raises an internal-consistency error.
    """

    def __init__(self, geometry: KernelGeometry, domain: Optional[Domain] = None,
                 basis: Optional[SubspaceBasis] = None,
                 theta: Optional[np.ndarray] = None):
        self.geometry = geometry
        self.domain = domain or geometry.default_domain()
        self.clamp_count = 0
        self._basis = basis
        self._theta = None
        self._chol = None
        if basis is not None:
            if geometry.kind != "cube":
                raise LandscapeError("subspace evaluators require the cube geometry")
            sites = cube_effective_sites(geometry)
            if basis.ambient_dim != sites.shape[0]:
                raise LandscapeError("basis does not match the effective lattice")
            if basis.dim and basis.gram_defect() > 1e-8:
                raise LandscapeError("basis columns are not orthonormal")
            self._sites = sites
            self._ubar = basis.columns.conj()
            self._sqrt_nu = math.sqrt(sites.shape[0])
        elif theta is not None:
            theta = np.atleast_2d(np.asarray(theta, dtype=float))
            self._theta = self.domain.canonicalize(theta)
            kmat = kernel_matrix(self._theta, geometry, self.domain)
            eigs = np.linalg.eigvalsh(kmat)
            if eigs[0] <= 1e-10:
                raise LandscapeError(
                    f"kernel matrix nearly singular (λmin = {eigs[0]:.3e})")
            self._chol = cho_factor(kmat)
        else:
            raise LandscapeError("either a basis or a configuration is required")

    @classmethod
    def from_basis(cls, basis: SubspaceBasis,
                   domain: Optional[Domain] = None) -> "MusicEvaluator":
        return cls(basis.geometry, domain=domain, basis=basis)

    @classmethod
    def analytic(cls, geometry: KernelGeometry, theta,
                 domain: Optional[Domain] = None) -> "MusicEvaluator":
        return cls(geometry, domain=domain, theta=theta)

    @property
    def is_analytic(self) -> bool:
        return self._chol is not None

    # -- raw projections ----------------------------------------------------

    def _clamp(self, q):
        q = np.asarray(q, dtype=float)
        low = q < 0.0
        high = q > 1.0
        if np.any(q < -1e-10) or np.any(q > 1.0 + 1e-10):
            worst = float(q.min()) if np.any(q < -1e-10) else float(q.max())
            raise LandscapeError(
                f"MUSIC value {worst} outside [0, 1] beyond tolerance")
        self.clamp_count += int(np.count_nonzero(low | high))
        return np.clip(q, 0.0, 1.0)

    def values(self, points) -> np.ndarray:
        """q at many points; vectorized."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.is_analytic:
            v = self._steering_kernel(pts)
            sol = cho_solve(self._chol, v.T)
            q = 1.0 - np.sum(v.T * sol, axis=0)
        else:
            if self._ubar.shape[1] == 0:
                q = np.ones(pts.shape[0])
            else:
                phases = np.exp(2j * math.pi * (pts @ self._sites.T))
                coeff = phases @ self._ubar / self._sqrt_nu
                q = 1.0 - np.sum(np.abs(coeff) ** 2, axis=1)
        return self._clamp(q)

    def _steering_kernel(self, pts):
        diffs = pts[:, None, :] - self._theta[None, :, :]
        if self.domain.kind == "torus":
            diffs = diffs - np.round(diffs)
        flat = diffs.reshape(-1, self.geometry.d)
        return kernel_value(self.geometry, flat).reshape(pts.shape[0],
                                                         self._theta.shape[0])

    def value(self, omega) -> float:
        return float(self.values(np.asarray(omega, dtype=float)[None, :])[0])

    def gradient(self, omega) -> np.ndarray:
        omega = np.asarray(omega, dtype=float)
        d = self.geometry.d
        if self.is_analytic:
            diffs = (omega[None, :] - self._theta)
            if self.domain.kind == "torus":
                diffs = diffs - np.round(diffs)
            v = kernel_value(self.geometry, diffs)
            jac = kernel_gradient(self.geometry, diffs)  # (s, d)
            av = cho_solve(self._chol, v)
            return -2.0 * jac.T @ av
        if self._ubar.shape[1] == 0:
            return np.zeros(d)
        phase = np.exp(2j * math.pi * (self._sites @ omega))
        c = (phase @ self._ubar) / self._sqrt_nu                   # (k,)
        weighted = (2j * math.pi) * self._sites * phase[:, None]   # (N, d)
        g = weighted.T @ self._ubar / self._sqrt_nu                # (d, k)
        return -2.0 * np.real(g.conj() @ c)

    def hessian(self, omega) -> np.ndarray:
        omega = np.asarray(omega, dtype=float)
        d = self.geometry.d
        if self.is_analytic:
            diffs = (omega[None, :] - self._theta)
            if self.domain.kind == "torus":
                diffs = diffs - np.round(diffs)
            v = kernel_value(self.geometry, diffs)
            jac = kernel_gradient(self.geometry, diffs)
            hess_k = kernel_hessian(self.geometry, diffs)  # (s, d, d)
            av = cho_solve(self._chol, v)
            aj = cho_solve(self._chol, jac)
            term1 = jac.T @ aj
            term2 = np.einsum("l,ljk->jk", av, hess_k)
            out = -2.0 * (term1 + term2)
            return 0.5 * (out + out.T)
        if self._ubar.shape[1] == 0:
            return np.zeros((d, d))
        phase = np.exp(2j * math.pi * (self._sites @ omega))
        c = (phase @ self._ubar) / self._sqrt_nu
        weighted = (2j * math.pi) * self._sites * phase[:, None]
        g = weighted.T @ self._ubar / self._sqrt_nu                # (d, k)
        quad = np.einsum("nj,nk,n,nq->jkq", (2j * math.pi) * self._sites,
                         (2j * math.pi) * self._sites, phase, self._ubar,
                         optimize=True) / self._sqrt_nu            # (d, d, k)
        term1 = np.real(np.einsum("jkq,q->jk", quad.conj(), c))
        term2 = np.real(np.einsum("kq,jq->jk", g.conj(), g))
        out = -2.0 * term1 - 2.0 * term2
        return 0.5 * (out + out.T)


def music_value(ev: MusicEvaluator, omega) -> float:
    return ev.value(omega)


def music_gradient(ev: MusicEvaluator, omega) -> np.ndarray:
    return ev.gradient(omega)


def music_hessian(ev: MusicEvaluator, omega) -> np.ndarray:
    return ev.hessian(omega)


def grid_evaluate(ev: MusicEvaluator, grid: Grid, chunk: int = 1 << 16) -> np.ndarray:
    """q on every grid node, aligned with the grid's lexicographic points.

    On the subspace path with a uniform power-of-two torus grid the inner
    products come from one zero-padded FFT per basis column; otherwise the
    evaluation falls back to direct sums with a cost warning.
    """
    if ev.is_analytic:
        pts = grid.points
        out = np.empty(grid.size)
        for start in range(0, pts.shape[0], chunk):
            out[start:start + chunk] = ev.values(pts[start:start + chunk])
        return out
    uniform_pow2 = grid.is_uniform and all(n & (n - 1) == 0 for n in grid.counts)
    side = 2 * int(ev.geometry.m) + 1
    if not uniform_pow2 or grid.domain.kind != "torus" \
            or any(n < side for n in grid.counts):
        warnings.warn("grid not FFT-compatible; falling back to direct "
                      "evaluation (O(N) per node)")
        pts = grid.points
        out = np.empty(grid.size)
        for start in range(0, pts.shape[0], chunk):
            out[start:start + chunk] = ev.values(pts[start:start + chunk])
        return out
    m, d = int(ev.geometry.m), ev.geometry.d
    counts = grid.counts
    sites_axis = np.arange(-m, m + 1)
    acc = np.zeros(counts)
    n_cells = int(np.prod(counts))
    cube_shape = (side,) * d
    idx = np.ix_(*[np.mod(sites_axis, n) for n in counts])
    for j in range(ev._ubar.shape[1]):
        col = ev._ubar[:, j].reshape(cube_shape)
        padded = np.zeros(counts, dtype=complex)
        padded[idx] = col
        inner = np.fft.ifftn(padded) * n_cells / ev._sqrt_nu
        acc += np.abs(inner) ** 2
    return ev._clamp(1.0 - acc).ravel()


@dataclass(frozen=True)
class LandscapeDiagnostics:
    """Evaluated admissibility conditions and landscape parameters."""

    epsilon: float
    rho: float
    alpha0: float
    alpha1: float
    cond1_lhs: float
    cond1_rhs: float
    cond2_lhs: float
    cond2_rhs: float
    cond3_lhs: float
    cond3_rhs: float
    grad_sup_bound: float
    hessian_eig_window: tuple

    @property
    def admissible(self) -> bool:
        return (self.cond1_lhs <= self.cond1_rhs
                and self.cond2_lhs <= self.cond2_rhs
                and self.cond3_lhs <= self.cond3_rhs)

    def to_json(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "rho": self.rho,
            "alpha0": self.alpha0,
            "alpha1": self.alpha1,
            "conditions": [
                {"lhs": self.cond1_lhs, "rhs": self.cond1_rhs,
                 "holds": self.cond1_lhs <= self.cond1_rhs},
                {"lhs": self.cond2_lhs, "rhs": self.cond2_rhs,
                 "holds": self.cond2_lhs <= self.cond2_rhs},
                {"lhs": self.cond3_lhs, "rhs": self.cond3_rhs,
                 "holds": self.cond3_lhs <= self.cond3_rhs},
            ],
            "admissible": self.admissible,
            "grad_sup_bound": self.grad_sup_bound,
            "hessian_eig_window": list(self.hessian_eig_window),
        }


def check_admissibility(geom_q: KernelQuantities, cfg_q: ConfigQuantities,
                        proj_dist: float, delta1: float,
                        delta2: float) -> LandscapeDiagnostics:
    """Numeric certificate that the perturbed landscape is admissible.

    Evaluates the three structural conditions from the supplied kernel and
    configuration quantities and, on success, reports the landscape
    parameters (ε, ρ, α0, α1) together with the gradient bound and the
    Hessian eigenvalue window valid near the true frequencies.
    """
    if delta1 + delta2 >= 2.0:
        raise LandscapeError("need delta1 + delta2 < 2")
    tau = geom_q.tau
    if tau > cfg_q.separation / 2.0:
        raise LandscapeError(
            f"tau = {tau} exceeds half the separation {cfg_q.separation / 2}")
    lam_d = geom_q.lambda_min_psi
    lam_1 = geom_q.lambda_max_psi
    tr_psi = geom_q.tr_psi
    bih = geom_q.biharmonic
    grad_sup = geom_q.grad_sup
    tail = geom_q.tail_sup
    sqrt_bih = math.sqrt(bih)

    cond1_lhs = math.sqrt(2.0 * tau * grad_sup) \
        + grad_sup ** 2 / (cfg_q.lambda_min * sqrt_bih) \
        + cfg_q.e1 / (cfg_q.lambda_min * sqrt_bih)
    cond1_rhs = delta1 * lam_d / sqrt_bih

    spread = max(abs(1.0 / cfg_q.lambda_max - 1.0),
                 abs(1.0 / cfg_q.lambda_min - 1.0))
    cond2_lhs = cfg_q.e0 + cfg_q.lambda_max * spread
    cond2_rhs = 3.0 / 8.0 * (1.0 - tail ** 2)

    cond3_lhs = proj_dist
    cond3_rhs = delta2 * min(
        0.25 * (1.0 - tail ** 2),
        lam_d / (2.0 * math.sqrt(bih + tr_psi ** 2)),
        0.5 * tau * lam_d / math.sqrt(tr_psi),
    )

    epsilon = 2.0 * math.sqrt(tr_psi) / (delta2 * lam_d) * proj_dist
    alpha1 = (5.0 / 8.0 - delta2 / 4.0) * (1.0 - tail ** 2)
    window = ((2.0 - delta1 - delta2) * lam_d, (2.0 + delta1 + delta2) * lam_1)
    return LandscapeDiagnostics(
        epsilon=epsilon,
        rho=tau,
        alpha0=proj_dist ** 2,
        alpha1=alpha1,
        cond1_lhs=cond1_lhs,
        cond1_rhs=cond1_rhs,
        cond2_lhs=cond2_lhs,
        cond2_rhs=cond2_rhs,
        cond3_lhs=cond3_lhs,
        cond3_rhs=cond3_rhs,
        grad_sup_bound=2.0 * math.sqrt(tr_psi),
        hessian_eig_window=window,
    )


DEFAULT_DELTAS = {"cube": (1.5, 0.25), "ball": (1.0, 0.5)}
