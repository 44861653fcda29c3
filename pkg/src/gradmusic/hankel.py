"""Implicit multilevel Hankel operator and subspace estimation.

The operator H(ỹ) has entries ỹ(x_j + x_k) over the lexicographically ordered
lattice X = Q_m ∩ Z^d.  It is never materialized in the hot path: a matvec is
a d-dimensional zero-padded FFT convolution of the sample array with the
reversed input, costing O(m^d log m).  The leading left singular space of
H(ỹ) estimates the signal subspace; it is computed by a block Krylov
iteration with full reorthogonalization driven only by matvecs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.fft import next_fast_len

from .kernels import KernelGeometry
from .signal import SampleSet, cube_effective_sites


class HankelError(ValueError):
    pass


DENSE_CUTOFF = 4096


class HankelOperator:
    """H(ỹ) acting on l²(X), X = Q_m ∩ Z^d in lexicographic order.

    Entry (j, k) equals ỹ(x^(j) + x^(k)); the operator is complex symmetric.
    Construction stores the samples and index maps only.  ``matvec_calls`` and
    ``matvec_work`` (padded FFT points processed) accumulate for complexity
    accounting.
    """

    def __init__(self, samples: SampleSet):
        if samples.geometry.kind != "cube":
            raise HankelError("Hankel operators require cube-lattice samples")
        self.geometry = samples.geometry
        self.samples = samples
        m, d = int(self.geometry.m), self.geometry.d
        self.m, self.d = m, d
        self.side = 2 * m + 1
        self.n = self.side ** d
        self.shape = (self.n, self.n)
        self._grid = samples.values_grid()
        self._fft_shape = tuple(next_fast_len(6 * m + 1) for _ in range(d))
        self._fft_samples = np.fft.fftn(self._grid, s=self._fft_shape,
                                        axes=tuple(range(d)))
        self._out_slice = tuple(slice(2 * m, 4 * m + 1) for _ in range(d))
        self.matvec_calls = 0
        self.matvec_work = 0

    # -- fast matvecs -------------------------------------------------------

    def matvec_block(self, block: np.ndarray, chunk: int = 4) -> np.ndarray:
        """Product H @ block for ``block`` of shape (n,) or (n, b).

        Columns are processed in small FFT batches; larger batches lose to
        memory traffic on the padded arrays.
        """
        single = block.ndim == 1
        v = block[:, None] if single else block
        if v.shape[0] != self.n:
            raise HankelError(f"expected vectors of length {self.n}, got {v.shape[0]}")
        b = v.shape[1]
        out = np.empty((self.n, b), dtype=complex)
        axes = tuple(range(1, self.d + 1))
        for start in range(0, b, chunk):
            piece = v[:, start:start + chunk]
            nb = piece.shape[1]
            cube = piece.T.reshape((nb,) + (self.side,) * self.d)
            rev = cube[(slice(None),) + (slice(None, None, -1),) * self.d]
            spec = np.fft.fftn(rev, s=self._fft_shape, axes=axes)
            spec *= self._fft_samples[None]
            conv = np.fft.ifftn(spec, axes=axes)
            out[:, start:start + nb] = \
                conv[(slice(None),) + self._out_slice].reshape(nb, self.n).T
        self.matvec_calls += b
        fft_points = int(np.prod(self._fft_shape))
        self.matvec_work += 2 * b * fft_points * max(1, int(math.log2(fft_points)))
        return out[:, 0] if single else out

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.matvec_block(np.asarray(v, dtype=complex))

    def rmatvec_block(self, block: np.ndarray) -> np.ndarray:
        """Adjoint product H* @ block; uses complex symmetry H* = conj(H)."""
        return np.conj(self.matvec_block(np.conj(block)))

    def rmatvec(self, w: np.ndarray) -> np.ndarray:
        return self.rmatvec_block(np.asarray(w, dtype=complex))

    # -- dense oracle -------------------------------------------------------

    def dense(self, cutoff: int = DENSE_CUTOFF) -> np.ndarray:
        """Materialize the full matrix; test oracle for small instances."""
        if self.n > cutoff:
            raise HankelError(f"dense materialization refused for N={self.n}")
        sites = cube_effective_sites(self.geometry).astype(int)
        strides = np.array([(4 * self.m + 1) ** (self.d - 1 - j)
                            for j in range(self.d)])
        partial = (sites + self.m) @ strides
        flat = self.samples.values
        return flat[partial[:, None] + partial[None, :]]


def build_hankel(samples: SampleSet) -> HankelOperator:
    return HankelOperator(samples)


def hankel_matvec(op: HankelOperator, v) -> np.ndarray:
    v = np.asarray(v, dtype=complex).ravel()
    if v.size != op.n:
        raise HankelError(f"length mismatch: {v.size} vs {op.n}")
    return op.matvec(v)


# ---------------------------------------------------------------------------
# Subspaces

@dataclass(frozen=True)
class SubspaceBasis:
    """Orthonormal basis of a subspace of functions on X."""

    geometry: KernelGeometry
    columns: np.ndarray
    origin: str = "estimated"

    def __post_init__(self):
        cols = np.asarray(self.columns, dtype=complex)
        if cols.ndim != 2:
            raise HankelError("basis columns must form a 2-d array")
        object.__setattr__(self, "columns", cols)

    @property
    def dim(self) -> int:
        return self.columns.shape[1]

    @property
    def ambient_dim(self) -> int:
        return self.columns.shape[0]

    def gram_defect(self) -> float:
        g = self.columns.conj().T @ self.columns
        return float(np.abs(g - np.eye(self.dim)).max())


def exact_basis(theta, geom: KernelGeometry) -> SubspaceBasis:
    """Orthonormalized steering vectors spanning the true signal subspace."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    sites = cube_effective_sites(geom)
    raw = np.exp(2j * math.pi * (sites @ theta.T))
    sv = np.linalg.svd(raw / math.sqrt(sites.shape[0]), compute_uv=False)
    if sv[-1] < 1e-8:
        raise HankelError(
            f"steering vectors numerically dependent (smallest normalized "
            f"singular value {sv[-1]:.3e}); separation too small")
    q, _ = np.linalg.qr(raw)
    return SubspaceBasis(geometry=geom, columns=q, origin="exact")


def subspace_distance(a: SubspaceBasis, b: SubspaceBasis) -> float:
    """Spectral norm of P_A - P_B: the sine of the largest canonical angle.

    Computed as the top singular value of (I - P_A) Q_B, which equals the
    sine directly and stays accurate for nearly identical subspaces (the
    cosine route loses half the digits there).
    """
    if a.ambient_dim != b.ambient_dim:
        raise HankelError("ambient dimensions differ")
    if a.dim != b.dim:
        return 1.0 if (a.dim > 0 or b.dim > 0) else 0.0
    if a.dim == 0:
        return 0.0
    cross = a.columns.conj().T @ b.columns
    residual = b.columns - a.columns @ cross
    sines = np.linalg.svd(residual, compute_uv=False)
    return min(1.0, float(sines[0]))


# ---------------------------------------------------------------------------
# Truncated SVD

@dataclass
class SingularSpectrum:
    """Leading singular triplets of a Hankel operator."""

    values: np.ndarray
    left: SubspaceBasis
    right: np.ndarray = field(repr=False)
    forward_residuals: np.ndarray = field(default=None, repr=False)
    adjoint_residuals: np.ndarray = field(default=None, repr=False)
    iterations: int = 0
    converged: bool = True

    def left_block(self, k: int) -> SubspaceBasis:
        return SubspaceBasis(self.left.geometry, self.left.columns[:, :k],
                             origin="estimated")


def _orthonormalize(block, against, rng):
    """Orthogonalize ``block`` against ``against`` and itself; repair rank
    loss with fresh random directions."""
    n = block.shape[0]
    x = block.copy()
    for _ in range(2):
        if against is not None and against.shape[1]:
            x -= against @ (against.conj().T @ x)
    q, r = np.linalg.qr(x)
    scale = np.abs(np.diag(r))
    col_ref = max(1.0, float(scale.max(initial=0.0)))
    dead = scale < 1e-12 * col_ref
    if dead.any():
        repl = rng.standard_normal((n, int(dead.sum()))) \
            + 1j * rng.standard_normal((n, int(dead.sum())))
        q[:, dead] = repl
        for _ in range(2):
            if against is not None and against.shape[1]:
                q -= against @ (against.conj().T @ q)
            q, _ = np.linalg.qr(q)
    return q


_GRAM_FLOOR = 8e-8  # sqrt(machine eps): value floor of Gram-based Ritz extraction


ENUMERATION_VERSION = "lex-v1"  # lexicographic over coordinates, first slowest


def save_spectrum(spectrum: "SingularSpectrum", path) -> None:
    """Serialize a spectrum: JSON metadata plus a binary array sidecar.

    Writes ``<path>.json`` (geometry, values, residuals, enumeration version)
    and ``<path>.npz`` (left/right singular vectors).
    """
    import json
    from pathlib import Path
    base = Path(path)
    meta = {
        "geometry": spectrum.left.geometry.to_json(),
        "enumeration": ENUMERATION_VERSION,
        "values": np.asarray(spectrum.values).tolist(),
        "forward_residuals": np.asarray(spectrum.forward_residuals).tolist(),
        "adjoint_residuals": np.asarray(spectrum.adjoint_residuals).tolist(),
        "iterations": spectrum.iterations,
        "converged": spectrum.converged,
        "sidecar": base.with_suffix(".npz").name,
    }
    base.with_suffix(".json").write_text(json.dumps(meta, indent=2) + "\n")
    np.savez(base.with_suffix(".npz"), left=spectrum.left.columns,
             right=spectrum.right)


def load_spectrum(path) -> "SingularSpectrum":
    import json
    from pathlib import Path
    base = Path(path)
    meta = json.loads(base.with_suffix(".json").read_text())
    if meta["enumeration"] != ENUMERATION_VERSION:
        raise HankelError(
            f"spectrum was serialized under enumeration "
            f"{meta['enumeration']!r}, expected {ENUMERATION_VERSION!r}")
    arrays = np.load(base.with_suffix(".npz"))
    geom = KernelGeometry.from_json(meta["geometry"])
    return SingularSpectrum(
        values=np.asarray(meta["values"]),
        left=SubspaceBasis(geom, arrays["left"], origin="estimated"),
        right=arrays["right"],
        forward_residuals=np.asarray(meta["forward_residuals"]),
        adjoint_residuals=np.asarray(meta["adjoint_residuals"]),
        iterations=int(meta["iterations"]),
        converged=bool(meta["converged"]),
    )


def _ritz_from_gram(gram: np.ndarray, k: int):
    """Ritz values/vectors of H restricted to the right subspace, from the
    Gram matrix (HV)^H (HV)."""
    lam, w = np.linalg.eigh(gram)
    order = np.argsort(lam)[::-1][:k]
    sig = np.sqrt(np.clip(lam[order], 0.0, None))
    return sig, w[:, order]


def truncated_svd(op: HankelOperator, k: int, tol: float = 1e-9, seed: int = 0,
                  max_iter: int = 300, n_strict: Optional[int] = None,
                  loose_tol: Optional[float] = None,
                  block_size: Optional[int] = None,
                  strict_above_ratio: Optional[float] = None) -> SingularSpectrum:
    """Leading k singular triplets via block Krylov iteration on H*H.

    Driven purely by the operator's matvec and adjoint matvec; deterministic
    for a fixed seed.  Iterations track convergence through the adjoint
    residual ||H* u_i - σ_i v_i|| relative to σ_1, computed from explicit
    Ritz vectors: the leading ``n_strict`` triplets (default all k) must
    reach ``tol`` and the remainder ``loose_tol``.  With
    ``strict_above_ratio`` the strict set instead adapts to the spectrum:
    every triplet with σ_i >= ratio · σ_1 is strict and the rest are loose,
    which is the right split when the model order is not known in advance
    (clustered sub-threshold noise values need not be resolved finely).  The
    reported values come from one full-precision SVD of the converged
    subspace image.  Raises on non-convergence within the iteration budget.
    """
    n = op.n
    k = int(min(k, n))
    geom = op.geometry
    if k == 0:
        empty = SubspaceBasis(geom, np.zeros((n, 0), dtype=complex))
        return SingularSpectrum(values=np.zeros(0), left=empty,
                                right=np.zeros((n, 0), dtype=complex),
                                forward_residuals=np.zeros(0),
                                adjoint_residuals=np.zeros(0))
    rng = np.random.default_rng(seed)
    if n_strict is None:
        n_strict = 0 if strict_above_ratio is not None else k
    n_strict = min(n_strict, k)
    loose_tol = tol if loose_tol is None else loose_tol
    b = min(block_size or (k + 4), n)
    p_max = min(n, max(6 * b, 4 * k + 16, k + 2 * b, 96))

    block = rng.standard_normal((n, b)) + 1j * rng.standard_normal((n, b))
    v_all = _orthonormalize(block, None, rng)
    hv_all = op.matvec_block(v_all)
    ahv_all = op.rmatvec_block(hv_all)
    gram = hv_all.conj().T @ hv_all
    new_lo = 0

    adj = np.full(k, np.inf)
    for iteration in range(1, max_iter + 1):
        k_cur = min(k, v_all.shape[1])
        sig_k, w_k = _ritz_from_gram(gram, k_cur)
        sigma1 = float(sig_k[0]) if sig_k.size else 0.0
        ref = max(sigma1, 1e-300)
        v_k = v_all @ w_k
        hstar_u_scaled = ahv_all @ w_k  # column i equals σ_i · (H* u_i)
        small = sig_k <= max(tol, _GRAM_FLOOR) * ref
        adj = np.full(k, np.inf)
        adj[small.nonzero()[0]] = 0.0  # value-level convergence: σ_i ~ 0
        nontrivial = (~small).nonzero()[0]
        if nontrivial.size:
            scaled = hstar_u_scaled[:, nontrivial] / sig_k[nontrivial][None, :]
            adj[nontrivial] = np.linalg.norm(
                scaled - v_k[:, nontrivial] * sig_k[nontrivial][None, :], axis=0)
        strict = np.zeros(k, dtype=bool)
        strict[:n_strict] = True
        if strict_above_ratio is not None:
            strict[:k_cur] |= sig_k >= strict_above_ratio * ref
        ok_strict = bool(k_cur >= min(k, n)
                         and np.all(adj[strict] <= tol * ref))
        loose = ~strict
        loose[k_cur:] = False
        ok_loose = bool(np.all(adj[loose] <= loose_tol * ref))
        saturated = v_all.shape[1] >= n
        if (ok_strict and ok_loose) or sigma1 == 0.0 or saturated:
            # full-precision extraction from the converged subspace
            u_fin, sig_fin, wh_fin = np.linalg.svd(hv_all, full_matrices=False)
            sig_out = sig_fin[:k]
            w_out = wh_fin.conj().T[:, :k]
            u_out = u_fin[:, :k]
            v_out = v_all @ w_out
            fwd = np.linalg.norm(hv_all @ w_out - u_out * sig_out[None, :], axis=0)
            hsu = ahv_all @ w_out
            adj_out = np.zeros(sig_out.size)
            for i in range(sig_out.size):
                if sig_out[i] > max(tol, 1e-13) * max(sig_out[0], 1e-300):
                    adj_out[i] = np.linalg.norm(hsu[:, i] / sig_out[i]
                                                - sig_out[i] * v_out[:, i])
            return SingularSpectrum(
                values=sig_out.copy(),
                left=SubspaceBasis(geom, u_out, origin="estimated"),
                right=v_out,
                forward_residuals=fwd,
                adjoint_residuals=adj_out,
                iterations=iteration,
                converged=bool(ok_strict and ok_loose) or sigma1 == 0.0,
            )
        # expand the Krylov space with H*H applied to the newest block
        candidate = ahv_all[:, new_lo:]
        if v_all.shape[1] + min(b, candidate.shape[1]) > p_max:
            # thick restart: keep the best Ritz directions
            keep = min(p_max - b, max(2 * k, k + b))
            sig_r, w_r = _ritz_from_gram(gram, keep)
            v_all = v_all @ w_r
            hv_all = hv_all @ w_r
            ahv_all = ahv_all @ w_r
            gram = np.diag(sig_r ** 2).astype(complex)
            candidate = ahv_all[:, :b]
        v_new = _orthonormalize(candidate[:, :b], v_all, rng)
        hv_new = op.matvec_block(v_new)
        ahv_new = op.rmatvec_block(hv_new)
        new_lo = v_all.shape[1]
        cross = hv_all.conj().T @ hv_new
        corner = hv_new.conj().T @ hv_new
        gram = np.block([[gram, cross], [cross.conj().T, corner]])
        v_all = np.concatenate([v_all, v_new], axis=1)
        hv_all = np.concatenate([hv_all, hv_new], axis=1)
        ahv_all = np.concatenate([ahv_all, ahv_new], axis=1)

    raise HankelError(
        f"truncated SVD did not converge within {max_iter} iterations "
        f"(worst residual {adj.max():.3e} at tol {tol:.1e})")


def detect_model_order(spectrum: SingularSpectrum, ratio_threshold: float) -> int:
    """Largest k with σ_k / σ_1 >= threshold; 0 with a warning if none."""
    values = np.asarray(spectrum.values, dtype=float)
    if values.size == 0 or values[0] <= 0.0:
        warnings.warn("all singular values vanish; detected model order 0")
        return 0
    ratios = values / values[0]
    above = np.nonzero(ratios >= ratio_threshold)[0]
    if above.size == 0:
        warnings.warn("no singular-value ratio reaches the threshold; order 0")
        return 0
    return int(above[-1] + 1)


# ---------------------------------------------------------------------------
# Perturbation audits

def operator_norm(op: HankelOperator, seed: int = 0) -> float:
    """Spectral norm: dense for small instances, iterative otherwise."""
    if op.n <= DENSE_CUTOFF:
        return float(np.linalg.norm(op.dense(), 2))
    spec = truncated_svd(op, 1, tol=1e-8, seed=seed)
    return float(spec.values[0])


def wedin_audit(y_samples: SampleSet, eta_samples: SampleSet, s: int,
                seed: int = 0) -> dict:
    """Check the subspace perturbation bounds on a concrete instance.

    Computes σ_s(H(y)), ||H(η)||, the exact and perturbed leading subspaces,
    and asserts both the matrix perturbation bound
    ||P_U - P_Ũ|| <= (4/3) ||H(η)|| / σ_s(H(y)) and the Wedin form
    ||H(η)|| / σ_s(H(ỹ)).  Requires the hypothesis 4||H(η)|| <= σ_s(H(y));
    when it fails the audit is skipped with a reason.
    """
    geom = y_samples.geometry
    tilde = SampleSet(geometry=geom,
                      values=y_samples.values + eta_samples.values)
    op_y = build_hankel(y_samples)
    op_eta = build_hankel(eta_samples)
    op_tilde = build_hankel(tilde)
    use_dense = op_y.n <= DENSE_CUTOFF
    if use_dense:
        dy = op_y.dense()
        uy, sy, _ = np.linalg.svd(dy)
        dt = op_tilde.dense()
        ut, st, _ = np.linalg.svd(dt)
        eta_norm = float(np.linalg.norm(op_eta.dense(), 2))
        basis_u = SubspaceBasis(geom, uy[:, :s], origin="exact")
        basis_ut = SubspaceBasis(geom, ut[:, :s], origin="estimated")
        sigma_s_y = float(sy[s - 1])
        sigma_s_t = float(st[s - 1])
    else:
        spec_y = truncated_svd(op_y, s, tol=1e-9, seed=seed)
        spec_t = truncated_svd(op_tilde, s, tol=1e-9, seed=seed)
        eta_norm = operator_norm(op_eta, seed=seed)
        basis_u = spec_y.left
        basis_ut = spec_t.left
        sigma_s_y = float(spec_y.values[s - 1])
        sigma_s_t = float(spec_t.values[s - 1])
    report = {
        "sigma_s_clean": sigma_s_y,
        "sigma_s_noisy": sigma_s_t,
        "noise_operator_norm": eta_norm,
        "dense": use_dense,
    }
    if 4.0 * eta_norm > sigma_s_y:
        report.update(skipped=True,
                      reason="hypothesis 4||H(eta)|| <= sigma_s(H(y)) fails")
        return report
    dist = subspace_distance(basis_u, basis_ut)
    bound_matrix = (4.0 / 3.0) * eta_norm / sigma_s_y
    bound_wedin = eta_norm / sigma_s_t
    report.update(
        skipped=False,
        subspace_distance=dist,
        matrix_bound=bound_matrix,
        wedin_bound=bound_wedin,
        matrix_bound_holds=bool(dist <= bound_matrix * (1 + 1e-9) + 1e-12),
        wedin_bound_holds=bool(dist <= bound_wedin * (1 + 1e-9) + 1e-12),
    )
    return report


def noise_norm_bound(eta_samples: SampleSet, p: float) -> dict:
    """Young-inequality bound ||H(η)|| <= (4m+1)^{d/p'} ||η||_p, evaluated."""
    geom = eta_samples.geometry
    m, d = int(geom.m), geom.d
    eta = eta_samples.values
    if p == math.inf:
        lp = float(np.abs(eta).max())
        exponent = d
    else:
        lp = float(np.sum(np.abs(eta) ** p) ** (1.0 / p))
        exponent = d * (1.0 - 1.0 / p)
    bound = (4 * m + 1) ** exponent * lp
    observed = operator_norm(build_hankel(eta_samples))
    return {"p": p, "bound": float(bound), "observed": observed,
            "holds": bool(observed <= bound * (1 + 1e-9))}
