"""Gradient-MUSIC end to end: thresholding, clustering, descent, pipeline.

The initialization stage thresholds the landscape on a coarse grid whose mesh
tracks the aperture (never the target accuracy) and keeps one representative
per connected cluster of sub-level nodes.  Local refinement is plain fixed-step
gradient descent, whose step obeys the curvature window of the landscape.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .geometry import Grid, make_uniform_grid, matching_distance
from .hankel import build_hankel, detect_model_order, truncated_svd
from .kernels import KernelGeometry, default_tau, hessian_at_zero
from .landscape import MusicEvaluator, grid_evaluate
from .signal import ParameterConfig, SampleSet, estimate_amplitudes


class RecoveryError(ValueError):
    pass


@dataclass(frozen=True)
class DescentConfig:
    step: float
    iterations: int
    stop_grad_tol: float = 0.0

    def __post_init__(self):
        if self.step <= 0 or self.iterations < 0:
            raise RecoveryError("need step > 0 and iterations >= 0")


@dataclass(frozen=True)
class Hyperparams:
    mesh_target: float
    alpha1: float
    step: float
    iterations: int
    contraction: float


def default_hyperparams(geom: KernelGeometry, noise_scale_hint: Optional[float] = None,
                        mesh_kappa: float = 1.0) -> Hyperparams:
    """Grid mesh, threshold, step size and iteration count for Algorithm 1.

    Cube: mesh target κ/(4πmd) (κ = 1 keeps the realized mesh at or below the
    basin radius), h = 3/(8π²m(m+1)), per-step contraction 14/15.  Ball:
    mesh target 1/(4πm√d), h = (d+2)/(16π²m²), contraction 13/14.  The
    iteration count makes the geometric descent error reach the noise-scale
    hint (default 1e-9).
    """
    m, d = geom.m, geom.d
    if geom.kind == "cube":
        step = 3.0 / (8.0 * math.pi ** 2 * m * (m + 1))
        contraction = 14.0 / 15.0
    else:
        step = (d + 2) / (16.0 * math.pi ** 2 * m ** 2)
        contraction = 13.0 / 14.0
    mesh_target = mesh_kappa * default_tau(geom)
    eps_target = noise_scale_hint if noise_scale_hint else 1e-9
    eps_target = min(max(eps_target, 1e-15), 0.5)
    iterations = int(math.ceil(math.log(1.0 / eps_target)
                               / math.log(1.0 / contraction)))
    return Hyperparams(mesh_target=mesh_target, alpha1=0.5, step=step,
                       iterations=iterations, contraction=contraction)


# ---------------------------------------------------------------------------
# Thresholding and clustering

def threshold_and_cluster(grid: Grid, values, alpha1: float):
    """Sub-level set nodes {q <= alpha1} grouped into lattice clusters.

    Adjacency is l∞ on grid indices (diagonals included) with periodic wrap
    on torus domains.  Returns (representatives, representative values): the
    argmin node of each cluster, clusters ordered by ascending value with
    lexicographic tie-breaking.
    """
    if not grid.is_uniform:
        raise RecoveryError("clustering requires a uniform grid")
    vals = np.asarray(values, dtype=float).reshape(grid.counts)
    mask = vals <= alpha1
    d = len(grid.counts)
    if not mask.any():
        return np.zeros((0, d)), np.zeros(0)
    structure = np.ones((3,) * d, dtype=int)
    labels, n_labels = ndimage.label(mask, structure=structure)
    if grid.domain.kind == "torus" and n_labels > 1:
        labels = _merge_periodic(labels, n_labels)
    flat_labels = labels.ravel()
    flat_vals = vals.ravel()
    sel = np.nonzero(flat_labels)[0]
    order = np.lexsort((sel, flat_vals[sel], flat_labels[sel]))
    ordered = sel[order]
    lab_sorted = flat_labels[ordered]
    first = np.ones(lab_sorted.size, dtype=bool)
    first[1:] = lab_sorted[1:] != lab_sorted[:-1]
    rep_flat = ordered[first]
    rep_vals = flat_vals[rep_flat]
    rep_idx = np.stack(np.unravel_index(rep_flat, grid.counts), axis=-1)
    reps = np.array([grid.index_to_point(ix) for ix in rep_idx])
    srt = np.lexsort((rep_flat, rep_vals))
    return reps[srt], rep_vals[srt]


def _merge_periodic(labels: np.ndarray, n_labels: int) -> np.ndarray:
    """Union labels that touch across periodic boundaries (l∞ adjacency)."""
    parent = np.arange(n_labels + 1)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    d = labels.ndim
    for axis in range(d):
        if labels.shape[axis] < 2:
            continue
        face_lo = np.take(labels, 0, axis=axis)
        face_hi = np.take(labels, labels.shape[axis] - 1, axis=axis)
        shifts = np.array(np.meshgrid(*([[-1, 0, 1]] * (d - 1)), indexing="ij"))
        shifts = shifts.reshape(d - 1, -1).T if d > 1 else np.zeros((1, 0), dtype=int)
        for shift in shifts:
            rolled = face_hi
            for ax, sh in enumerate(shift):
                if sh:
                    rolled = np.roll(rolled, sh, axis=ax)
            both = (face_lo > 0) & (rolled > 0)
            for a, b in zip(np.asarray(face_lo)[both].ravel(),
                            np.asarray(rolled)[both].ravel()):
                union(int(a), int(b))
    remap = np.array([find(a) for a in range(n_labels + 1)])
    return remap[labels]


# ---------------------------------------------------------------------------
# Gradient descent

def gradient_descent(ev: MusicEvaluator, x0, cfg: DescentConfig,
                     record: bool = False):
    """Fixed-step descent θ_{k+1} = θ_k - h ∇q(θ_k), re-wrapped each step.

    Returns the endpoint, or (endpoint, trajectory, values) when recording.
    """
    domain = ev.domain
    x = domain.canonicalize(np.asarray(x0, dtype=float))[0]
    traj = [x.copy()] if record else None
    vals = [ev.value(x)] if record else None
    for _ in range(cfg.iterations):
        g = ev.gradient(x)
        if not np.all(np.isfinite(g)):
            raise RecoveryError(f"non-finite gradient at {x}")
        if np.linalg.norm(g) <= cfg.stop_grad_tol:
            break
        x = domain.canonicalize(x - cfg.step * g)[0]
        if record:
            traj.append(x.copy())
            vals.append(ev.value(x))
    if record:
        return x, np.asarray(traj), np.asarray(vals)
    return x


# ---------------------------------------------------------------------------
# Pipeline

@dataclass
class PipelineOptions:
    s_hint: Optional[int] = None
    order_ratio_threshold: float = 0.1
    svd_tol: float = 1e-9
    svd_loose_tol: float = 1e-4
    svd_seed: int = 0
    svd_max_iter: int = 300
    mesh_kappa: float = 1.0
    alpha1: float = 0.5
    step: Optional[float] = None
    iterations: Optional[int] = None
    noise_scale_hint: Optional[float] = None
    stop_grad_scale: float = 1e-12
    record_trajectories: bool = False
    max_order: int = 64

    def to_json(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


@dataclass
class PipelineReport:
    detected_order: int
    basis_dim: int
    singular_values: np.ndarray
    initializers: np.ndarray
    initializer_values: np.ndarray
    estimates: np.ndarray
    amplitudes: Optional[np.ndarray]
    timings: dict
    flags: list
    matvec_calls: int
    matvec_work: int
    grid_counts: tuple
    matching_error: Optional[float] = None
    trajectories: Optional[list] = None
    descent_values: Optional[list] = None

    def to_json(self) -> dict:
        out = {
            "detected_order": self.detected_order,
            "basis_dim": self.basis_dim,
            "singular_values": np.asarray(self.singular_values).tolist(),
            "initializers": np.asarray(self.initializers).tolist(),
            "estimates": np.asarray(self.estimates).tolist(),
            "timings": self.timings,
            "flags": self.flags,
            "matvec_calls": self.matvec_calls,
            "matvec_work": self.matvec_work,
            "grid_counts": list(self.grid_counts),
        }
        if self.amplitudes is not None:
            out["amplitudes_re"] = self.amplitudes.real.tolist()
            out["amplitudes_im"] = self.amplitudes.imag.tolist()
        if self.matching_error is not None:
            out["matching_error"] = self.matching_error
        return out


def run_gradient_music(samples: SampleSet, options: Optional[PipelineOptions] = None,
                       truth: Optional[ParameterConfig] = None) -> PipelineReport:
    """Full pipeline on cube-lattice samples.

    Hankel build -> truncated SVD -> order detection -> subspace landscape ->
    threshold/cluster initialization -> per-cluster descent -> amplitude
    least squares.  With ``s_hint`` the subspace dimension is pinned (the
    detected order is still reported); otherwise the detected order is used.
    """
    options = options or PipelineOptions()
    geom = samples.geometry
    domain = geom.default_domain()
    d = geom.d
    timings = {}
    flags = []
    t0 = time.perf_counter()
    op = build_hankel(samples)
    timings["build"] = time.perf_counter() - t0

    empty = np.zeros((0, d))
    if not np.any(samples.values):
        flags.append("zero samples")
        return PipelineReport(
            detected_order=0, basis_dim=0, singular_values=np.zeros(0),
            initializers=empty, initializer_values=np.zeros(0),
            estimates=empty, amplitudes=np.zeros(0, dtype=complex),
            timings=timings, flags=flags, matvec_calls=0, matvec_work=0,
            grid_counts=())

    s_expected = options.s_hint if options.s_hint else 8
    k = min(2 * s_expected + 4, options.max_order, op.n)
    t0 = time.perf_counter()
    if options.s_hint:
        strict_kwargs = {"n_strict": min(k, options.s_hint)}
    else:
        # order unknown: resolve finely only above the detection threshold
        strict_kwargs = {"strict_above_ratio": options.order_ratio_threshold}
    spectrum = truncated_svd(op, k, tol=options.svd_tol, seed=options.svd_seed,
                             max_iter=options.svd_max_iter,
                             loose_tol=options.svd_loose_tol,
                             block_size=min(s_expected + 4, op.n),
                             **strict_kwargs)
    timings["svd"] = time.perf_counter() - t0

    detected = detect_model_order(spectrum, options.order_ratio_threshold)
    basis_dim = options.s_hint if options.s_hint else detected
    if options.s_hint and detected != options.s_hint:
        flags.append(f"detected order {detected} != hinted {options.s_hint}")
    if basis_dim == 0:
        flags.append("model order zero")
        return PipelineReport(
            detected_order=0, basis_dim=0, singular_values=spectrum.values,
            initializers=empty, initializer_values=np.zeros(0),
            estimates=empty, amplitudes=np.zeros(0, dtype=complex),
            timings=timings, flags=flags, matvec_calls=op.matvec_calls,
            matvec_work=op.matvec_work, grid_counts=())

    basis = spectrum.left_block(basis_dim)
    ev = MusicEvaluator.from_basis(basis, domain=domain)
    hyper = default_hyperparams(geom, options.noise_scale_hint,
                                mesh_kappa=options.mesh_kappa)
    step = hyper.step if options.step is None else options.step
    iterations = (hyper.iterations if options.iterations is None
                  else options.iterations)

    t0 = time.perf_counter()
    grid = make_uniform_grid(domain, hyper.mesh_target)
    values = grid_evaluate(ev, grid)
    timings["grid"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    reps, rep_vals = threshold_and_cluster(grid, values, options.alpha1)
    timings["cluster"] = time.perf_counter() - t0
    if reps.shape[0] != basis_dim:
        flags.append(f"{reps.shape[0]} clusters for subspace dimension {basis_dim}")
        if reps.shape[0] > basis_dim:
            reps = reps[:basis_dim]
            rep_vals = rep_vals[:basis_dim]

    tr_psi = float(np.trace(hessian_at_zero(geom)))
    cfg = DescentConfig(step=step, iterations=iterations,
                        stop_grad_tol=options.stop_grad_scale * math.sqrt(tr_psi))
    t0 = time.perf_counter()
    estimates = []
    trajectories = [] if options.record_trajectories else None
    descent_values = [] if options.record_trajectories else None
    for rep in reps:
        if options.record_trajectories:
            end, traj, vals = gradient_descent(ev, rep, cfg, record=True)
            trajectories.append(traj)
            descent_values.append(vals)
        else:
            end = gradient_descent(ev, rep, cfg)
        estimates.append(end)
    estimates = np.asarray(estimates) if estimates else empty
    timings["descent"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    amplitudes = None
    try:
        amplitudes = estimate_amplitudes(estimates, samples)
    except Exception as exc:  # ill-conditioned systems are reported, not fatal
        flags.append(f"amplitude estimation failed: {exc}")
    timings["amplitudes"] = time.perf_counter() - t0

    matching = None
    if truth is not None and estimates.shape[0] == truth.s:
        matching = matching_distance(truth.theta, estimates, domain)
    elif truth is not None:
        flags.append("estimate count differs from truth; no matching error")

    return PipelineReport(
        detected_order=detected, basis_dim=basis_dim,
        singular_values=spectrum.values, initializers=reps,
        initializer_values=rep_vals, estimates=estimates,
        amplitudes=amplitudes, timings=timings, flags=flags,
        matvec_calls=op.matvec_calls, matvec_work=op.matvec_work,
        grid_counts=grid.counts, matching_error=matching,
        trajectories=trajectories, descent_values=descent_values)
