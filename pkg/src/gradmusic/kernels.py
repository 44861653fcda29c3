"""Measurement kernels for the two sampling geometries.

The cube geometry samples the lattice Q_m ∩ Z^d with counting measure, whose
kernel is a tensor product of normalized Dirichlet kernels.  The ball geometry
samples B_m with Lebesgue measure, whose kernel is a radial Bessel profile.
Both kernels are real, even, equal to 1 at the origin, and carry a negative
Hessian there that is a positive multiple of the identity; that multiple sets
every scale in the optimization landscape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import jv

from .geometry import Domain, Grid, make_uniform_grid, min_separation


class KernelError(ValueError):
    pass


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2.0) / gamma_fn(d / 2.0 + 1.0)


@dataclass(frozen=True)
class KernelGeometry:
    """Sampling model: ``cube`` lattice Q_m ∩ Z^d or continuous ``ball`` B_m."""

    kind: str
    m: float
    d: int

    def __post_init__(self):
        if self.kind not in ("cube", "ball"):
            raise KernelError(f"unknown geometry kind {self.kind!r}")
        if self.d < 1:
            raise KernelError("dimension must be positive")
        if self.kind == "cube":
            if self.m < 1 or self.m != int(self.m):
                raise KernelError("cube aperture m must be a positive integer")
            object.__setattr__(self, "m", int(self.m))
        elif self.m <= 0:
            raise KernelError("ball aperture m must be positive")

    @property
    def nu_X(self) -> float:
        """Total measure of the effective sampling set X."""
        if self.kind == "cube":
            return float((2 * int(self.m) + 1) ** self.d)
        return unit_ball_volume(self.d) * self.m ** self.d

    def default_domain(self) -> Domain:
        if self.kind == "cube":
            return Domain("torus", self.d)
        return Domain("box", self.d)

    def to_json(self) -> dict:
        return {"kind": self.kind, "m": self.m, "d": self.d}

    @staticmethod
    def from_json(obj: dict) -> "KernelGeometry":
        return KernelGeometry(kind=obj["kind"], m=obj["m"], d=int(obj["d"]))


# ---------------------------------------------------------------------------
# Dirichlet kernel (cube geometry)

_NEAR_INTEGER = 1e-3  # closed form loses relative accuracy in d', d'' below this


def _dirichlet_sum(t, m: int, order: int):
    """Exact Fourier-sum evaluation, used near the removable singularity."""
    t = np.asarray(t, dtype=float)
    k = np.arange(1, m + 1, dtype=float)
    n = 2 * m + 1
    ang = 2.0 * math.pi * np.multiply.outer(t, k)
    if order == 0:
        return (1.0 + 2.0 * np.sum(np.cos(ang), axis=-1)) / n
    if order == 1:
        return -4.0 * math.pi / n * np.sum(k * np.sin(ang), axis=-1)
    if order == 2:
        return -8.0 * math.pi ** 2 / n * np.sum(k * k * np.cos(ang), axis=-1)
    raise KernelError("order must be 0, 1, or 2")


def dirichlet_1d(t, m: int, order: int = 0):
    """Normalized Dirichlet kernel sin((2m+1)πt) / ((2m+1) sin(πt)).

    ``order`` selects the value or its first/second derivative.  The removable
    singularity at integer t is handled by switching to the exact Fourier sum
    in a narrow band where the closed-form quotient cancels.
    """
    if m < 1:
        raise KernelError("m must be >= 1")
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    frac = t - np.round(t)
    near = np.abs(frac) < _NEAR_INTEGER
    out = np.empty_like(t)
    n = 2 * m + 1
    far = ~near
    if np.any(far):
        tf = t[far]
        u = np.sin(n * math.pi * tf)
        v = n * np.sin(math.pi * tf)
        if order == 0:
            out[far] = u / v
        else:
            du = n * math.pi * np.cos(n * math.pi * tf)
            dv = n * math.pi * np.cos(math.pi * tf)
            if order == 1:
                out[far] = (du * v - u * dv) / v ** 2
            elif order == 2:
                d2u = -((n * math.pi) ** 2) * u
                d2v = -(math.pi ** 2) * v
                out[far] = (d2u * v - u * d2v) / v ** 2 \
                    - 2.0 * dv * (du * v - u * dv) / v ** 3
            else:
                raise KernelError("order must be 0, 1, or 2")
    if np.any(near):
        out[near] = _dirichlet_sum(frac[near], m, order)
    return float(out[0]) if scalar else out


def cube_kernel(xi, m: int, want: str = "value"):
    """Square Dirichlet kernel D_m(ξ) = Π_j d_m(ξ_j) and its derivatives.

    ``xi`` has shape (..., d); returns value (...,), gradient (..., d) or
    hessian (..., d, d).
    """
    xi = np.asarray(xi, dtype=float)
    if xi.ndim == 1:
        xi = xi[None, :]
        squeeze = True
    else:
        squeeze = False
    d = xi.shape[-1]
    vals = dirichlet_1d(xi, m, 0)
    if want == "value":
        out = np.prod(vals, axis=-1)
        return out[0] if squeeze and np.ndim(out) else out
    ders = dirichlet_1d(xi, m, 1)
    if want == "gradient":
        prod = np.prod(vals, axis=-1)
        out = np.empty_like(xi)
        for j in range(d):
            others = np.prod(np.delete(vals, j, axis=-1), axis=-1)
            out[..., j] = ders[..., j] * others
        return out[0] if squeeze else out
    if want == "hessian":
        d2 = dirichlet_1d(xi, m, 2)
        shape = xi.shape[:-1]
        out = np.empty(shape + (d, d))
        for j in range(d):
            for k in range(j, d):
                mask = np.ones(d, dtype=bool)
                mask[j] = False
                mask[k] = False
                others = np.prod(vals[..., mask], axis=-1)
                if j == k:
                    out[..., j, j] = d2[..., j] * others
                else:
                    out[..., j, k] = ders[..., j] * ders[..., k] * others
                    out[..., k, j] = out[..., j, k]
        return out[0] if squeeze else out
    raise KernelError(f"unknown want {want!r}")


# ---------------------------------------------------------------------------
# Bessel kernel (ball geometry)

_SMALL_T = 1e-4


def _bessel_ratio(t, nu: float):
    """g_nu(t) = J_nu(t) / t^nu, an even entire function; series branch at 0."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    small = np.abs(t) < _SMALL_T
    big = ~small
    if np.any(big):
        tb = t[big]
        out[big] = jv(nu, tb) / tb ** nu
    if np.any(small):
        ts = t[small]
        c0 = 1.0 / (2.0 ** nu * gamma_fn(nu + 1.0))
        t2 = ts * ts
        out[small] = c0 * (1.0 - t2 / (4.0 * (nu + 1.0))
                           + t2 * t2 / (32.0 * (nu + 1.0) * (nu + 2.0)))
    return out


def ball_kernel(xi, m: float, want: str = "value"):
    """Ball kernel W_m(ξ): normalized Fourier transform of 1_{B_m}.

    Radial with profile proportional to J_{d/2}(2πm r) / r^{d/2}; the r → 0
    limit is taken so W_m(0) = 1 and ∇W_m(0) = 0.  Returns value, gradient,
    or hessian for ``xi`` of shape (..., d).
    """
    xi = np.asarray(xi, dtype=float)
    if xi.ndim == 1:
        xi = xi[None, :]
        squeeze = True
    else:
        squeeze = False
    d = xi.shape[-1]
    nu = d / 2.0
    scale = 2.0 ** nu * gamma_fn(nu + 1.0)  # 1 / g_nu(0)
    r = np.linalg.norm(xi, axis=-1)
    t = 2.0 * math.pi * m * r
    if want == "value":
        out = scale * _bessel_ratio(t, nu)
        return out[0] if squeeze else out
    c1 = 4.0 * math.pi ** 2 * m ** 2 * scale
    if want == "gradient":
        out = -c1 * _bessel_ratio(t, nu + 1.0)[..., None] * xi
        return out[0] if squeeze else out
    if want == "hessian":
        g1 = _bessel_ratio(t, nu + 1.0)
        g2 = _bessel_ratio(t, nu + 2.0)
        c2 = (4.0 * math.pi ** 2 * m ** 2) ** 2 * scale
        eye = np.eye(d)
        outer = xi[..., :, None] * xi[..., None, :]
        out = -c1 * g1[..., None, None] * eye + c2 * g2[..., None, None] * outer
        return out[0] if squeeze else out
    raise KernelError(f"unknown want {want!r}")


# ---------------------------------------------------------------------------
# Dispatch and derived quantities

def kernel_value(geom: KernelGeometry, xi):
    if geom.kind == "cube":
        return cube_kernel(xi, geom.m, "value")
    return ball_kernel(xi, geom.m, "value")


def kernel_gradient(geom: KernelGeometry, xi):
    if geom.kind == "cube":
        return cube_kernel(xi, geom.m, "gradient")
    return ball_kernel(xi, geom.m, "gradient")


def kernel_hessian(geom: KernelGeometry, xi):
    if geom.kind == "cube":
        return cube_kernel(xi, geom.m, "hessian")
    return ball_kernel(xi, geom.m, "hessian")


def hessian_at_zero(geom: KernelGeometry) -> np.ndarray:
    """Ψ = -∇²K(0): (4π²/3) m(m+1) I for the cube, 4π²m²/(d+2) I for the ball."""
    if geom.kind == "cube":
        c = 4.0 * math.pi ** 2 / 3.0 * geom.m * (geom.m + 1)
    else:
        c = 4.0 * math.pi ** 2 * geom.m ** 2 / (geom.d + 2)
    return c * np.eye(geom.d)


def biharmonic_at_zero(geom: KernelGeometry) -> float:
    """Δ²K(0) = Σ_{j,k} ∂_j²∂_k² K(0), in closed form."""
    m, d = geom.m, geom.d
    if geom.kind == "cube":
        quartic = 16.0 * math.pi ** 4 / 15.0 * m * (m + 1) * (3 * m * m + 3 * m - 1)
        cross = (16.0 * math.pi ** 4 / 9.0) * m ** 2 * (m + 1) ** 2
        return d * quartic + d * (d - 1) * cross
    return 16.0 * math.pi ** 4 * m ** 4 * d / (d + 4.0)


def default_tau(geom: KernelGeometry) -> float:
    """Basin radius: 1/(4πmd) for the cube, 1/(4πm√d) for the ball."""
    if geom.kind == "cube":
        return 1.0 / (4.0 * math.pi * geom.m * geom.d)
    return 1.0 / (4.0 * math.pi * geom.m * math.sqrt(geom.d))


def gradient_sup_bound(geom: KernelGeometry, tau: float) -> float:
    """Certified bound on ||∇K|| over B_tau."""
    if geom.kind == "cube":
        return 4.0 * math.pi ** 2 * geom.m ** 2 * tau
    return 4.0 * math.pi ** 2 * geom.m ** 2 * tau / (geom.d + 2)


def biharmonic_bound(geom: KernelGeometry) -> float:
    """Stated upper bound on Δ²K(0)."""
    m, d = geom.m, geom.d
    if geom.kind == "cube":
        return 16.0 * math.pi ** 4 * d ** 2 * m ** 2 * (m + 1) ** 2 / 5.0
    return 16.0 * math.pi ** 4 * m ** 4 * d / (d + 4.0)


def tail_sup(geom: KernelGeometry, tau: float, resolution: Optional[int] = None,
             r_max: Optional[float] = None) -> dict:
    """Empirical sup of |K| outside B_tau.

    Dense sampling plus local zoom refinement; the achieved sampling
    resolution is recorded alongside the estimate.  For the radial ball
    kernel the search is one-dimensional in r.
    """
    if tau <= 0:
        raise KernelError("tau must be positive")
    if geom.kind == "ball":
        return _tail_sup_ball(geom, tau, resolution, r_max)
    return _tail_sup_cube(geom, tau, resolution)


def _tail_sup_ball(geom, tau, resolution, r_max):
    m, d = geom.m, geom.d
    if r_max is None:
        r_max = math.sqrt(d)  # diameter of the default unit-box domain
    n = resolution or max(4096, int(64 * m * r_max) + 1)

    def profile(r):
        xi = np.zeros((r.size, d))
        xi[:, 0] = r
        return np.abs(ball_kernel(xi, m, "value"))

    r = np.linspace(tau, r_max, n)
    vals = profile(r)
    best = int(np.argmax(vals))
    sup = float(vals[best])
    lo, hi = r[max(0, best - 1)], r[min(n - 1, best + 1)]
    for _ in range(8):
        rr = np.linspace(lo, hi, 129)
        vv = profile(rr)
        j = int(np.argmax(vv))
        sup = max(sup, float(vv[j]))
        lo, hi = rr[max(0, j - 1)], rr[min(128, j + 1)]
    witness = np.zeros(d)
    witness[0] = 0.5 * (lo + hi)
    return {"sup": sup, "resolution": (r_max - tau) / (n - 1), "witness": witness}


def _tail_sup_cube(geom, tau, resolution):
    m, d = geom.m, geom.d
    budget = 2 ** 22
    n = resolution or min(max(128, 16 * m), int(budget ** (1.0 / d)))
    axes = [np.linspace(-0.5, 0.5, n, endpoint=False)] * d
    best_val = -1.0
    best_pt = None
    # dense lattice scan outside B_tau, chunked over the first axis
    for x0 in axes[0]:
        mesh = np.meshgrid(*([np.array([x0])] + axes[1:]), indexing="ij")
        pts = np.stack([g.ravel() for g in mesh], axis=-1)
        r = np.linalg.norm(pts, axis=-1)
        mask = r >= tau
        if not mask.any():
            continue
        vals = np.abs(cube_kernel(pts[mask], m, "value"))
        j = int(np.argmax(vals))
        if vals[j] > best_val:
            best_val = float(vals[j])
            best_pt = pts[mask][j]
    # the sup is typically attained on the sphere |ξ| = tau; probe it directly
    rng = np.random.default_rng(0)
    dirs = [np.eye(d)[j] for j in range(d)] + [np.ones(d) / math.sqrt(d)]
    extra = rng.standard_normal((256, d))
    extra /= np.linalg.norm(extra, axis=1, keepdims=True)
    sphere = np.concatenate([np.asarray(dirs), extra], axis=0) * tau
    vals = np.abs(cube_kernel(sphere, m, "value"))
    j = int(np.argmax(vals))
    if vals[j] > best_val:
        best_val = float(vals[j])
        best_pt = sphere[j]
    # local zoom around the best candidate
    width = 1.0 / n
    center = best_pt.copy()
    for _ in range(6):
        local = center + (np.random.default_rng(1).uniform(-width, width, (512, d)))
        r = np.linalg.norm(local, axis=-1)
        local = local[r >= tau]
        if local.shape[0]:
            vals = np.abs(cube_kernel(local, m, "value"))
            j = int(np.argmax(vals))
            if vals[j] > best_val:
                best_val = float(vals[j])
                center = local[j]
        width /= 4.0
    return {"sup": best_val, "resolution": 1.0 / n, "witness": center}


@dataclass(frozen=True)
class KernelQuantities:
    """Scalar summary of a kernel: curvature, biharmonic, scale, tail."""

    geom: KernelGeometry
    psi: np.ndarray
    tr_psi: float
    lambda_min_psi: float
    lambda_max_psi: float
    biharmonic: float
    tau: float
    tail_sup: float
    grad_sup: float

    def to_json(self) -> dict:
        return {
            "geometry": self.geom.to_json(),
            "tr_psi": self.tr_psi,
            "lambda_min_psi": self.lambda_min_psi,
            "lambda_max_psi": self.lambda_max_psi,
            "biharmonic": self.biharmonic,
            "tau": self.tau,
            "tail_sup": self.tail_sup,
            "grad_sup": self.grad_sup,
        }


def kernel_quantities(geom: KernelGeometry, tau: Optional[float] = None,
                      tail_resolution: Optional[int] = None) -> KernelQuantities:
    tau = default_tau(geom) if tau is None else tau
    psi = hessian_at_zero(geom)
    eigs = np.diag(psi)
    tail = tail_sup(geom, tau, tail_resolution)["sup"]
    return KernelQuantities(
        geom=geom,
        psi=psi,
        tr_psi=float(np.trace(psi)),
        lambda_min_psi=float(eigs.min()),
        lambda_max_psi=float(eigs.max()),
        biharmonic=biharmonic_at_zero(geom),
        tau=tau,
        tail_sup=tail,
        grad_sup=gradient_sup_bound(geom, tau),
    )


@dataclass(frozen=True)
class ConfigQuantities:
    """Configuration-dependent kernel quantities for a frequency set."""

    kernel_matrix: np.ndarray
    lambda_min: float
    lambda_max: float
    e0: float
    e1: float
    separation: float
    probe_mesh: float

    def to_json(self) -> dict:
        return {
            "lambda_min": self.lambda_min,
            "lambda_max": self.lambda_max,
            "e0": self.e0,
            "e1": self.e1,
            "separation": self.separation,
            "probe_mesh": self.probe_mesh,
        }


def kernel_matrix(theta, geom: KernelGeometry, domain: Optional[Domain] = None):
    """K_ϑ = [K(θ_j - θ_k)], symmetric PSD with unit diagonal."""
    domain = domain or geom.default_domain()
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    s = theta.shape[0]
    diffs = theta[:, None, :] - theta[None, :, :]
    if domain.kind == "torus":
        diffs = diffs - np.round(diffs)
    mat = kernel_value(geom, diffs.reshape(-1, geom.d)).reshape(s, s)
    mat = 0.5 * (mat + mat.T)
    np.fill_diagonal(mat, 1.0)
    return mat


def energy_terms(theta, geom: KernelGeometry, probe: Grid,
                 domain: Optional[Domain] = None, chunk: int = 65536):
    """Empirical suprema of the exclusion sums E0 and E1 over a probe grid.

    These are lower bounds of the true suprema; the probe mesh is reported by
    the caller via ``probe.mesh``.  Single-frequency configurations have empty
    exclusion sums and return (0, 0).
    """
    domain = domain or geom.default_domain()
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    s = theta.shape[0]
    if s == 1:
        return 0.0, 0.0
    delta = min_separation(theta, domain)
    pts = probe.points
    e0 = 0.0
    e1 = 0.0
    for start in range(0, pts.shape[0], chunk):
        block = pts[start:start + chunk]
        diffs = block[:, None, :] - theta[None, :, :]
        if domain.kind == "torus":
            diffs = diffs - np.round(diffs)
        dist = np.linalg.norm(diffs, axis=-1)
        mask = dist >= delta / 2.0
        flat = diffs.reshape(-1, geom.d)
        kv = kernel_value(geom, flat).reshape(block.shape[0], s)
        kg = kernel_gradient(geom, flat).reshape(block.shape[0], s, geom.d)
        e0 = max(e0, float(np.max(np.sum(kv ** 2 * mask, axis=1))))
        grad_sq = np.sum(kg ** 2, axis=-1)
        e1 = max(e1, float(np.max(np.sum(grad_sq * mask, axis=1))))
    return e0, e1


def config_quantities(theta, geom: KernelGeometry, domain: Optional[Domain] = None,
                      probe: Optional[Grid] = None,
                      probe_budget: int = 2 ** 20) -> ConfigQuantities:
    """Assemble K_ϑ extremes, separation and energy estimates for a config."""
    domain = domain or geom.default_domain()
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    mat = kernel_matrix(theta, geom, domain)
    eigs = np.linalg.eigvalsh(mat)
    delta = min_separation(theta, domain)
    if probe is None:
        # default probe: half the landscape grid mesh, capped by budget
        target = default_tau(geom)
        grid = make_uniform_grid(domain, target, max_points=probe_budget * 4)
        while grid.size > probe_budget:
            grid = Grid.uniform(domain, tuple(max(1, n // 2) for n in grid.counts))
        probe = grid
    e0, e1 = energy_terms(theta, geom, probe, domain)
    return ConfigQuantities(
        kernel_matrix=mat,
        lambda_min=float(eigs[0]),
        lambda_max=float(eigs[-1]),
        e0=e0,
        e1=e1,
        separation=delta,
        probe_mesh=probe.mesh,
    )


def energy_bounds(theta, geom: KernelGeometry, domain: Optional[Domain] = None):
    """Closed-form upper bounds for (E0, E1) valid for well-separated configs.

    Cube: requires mΔ >= 4π√d.  Ball: any separation.  Returns NaNs when the
    prerequisite fails.
    """
    domain = domain or geom.default_domain()
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    if theta.shape[0] == 1:
        return 0.0, 0.0
    beta = geom.m * min_separation(theta, domain)
    d, m = geom.d, geom.m
    if geom.kind == "cube":
        if beta < 4.0 * math.pi * math.sqrt(d):
            return float("nan"), float("nan")
        e0 = 16.0 * math.pi ** 2 * d ** 2 / beta ** 2
        e1 = 64.0 * math.pi ** 4 * d ** 3 * m ** 2 / beta ** 2
        return e0, e1
    vol = unit_ball_volume(d)
    e0 = d * 4.0 ** (d + 1) / (math.pi ** 2 * vol ** 2 * beta ** (d + 1))
    e1 = d * 4.0 ** (d + 1) * 4.0 * math.pi ** 2 * m ** 2 / (vol ** 2 * beta ** (d + 1))
    return e0, e1


def kernel_bound_audit(geom: KernelGeometry, tau: float, n_samples: int = 4096,
                       seed: int = 0) -> dict:
    """Verify the certified gradient and biharmonic bounds by sampling.

    Samples ∇K on B_tau (interior, boundary, and axis points), compares its
    sup against the closed-form bound, and checks a finite-difference estimate
    of Δ²K(0) against its stated bound.  Returns one record per quantity with
    fields {quantity, bound, observed, witness, pass}.
    """
    d = geom.d
    records = []
    if tau < 0:
        raise KernelError("tau must be nonnegative")
    if tau == 0:
        pts = np.zeros((1, d))
    else:
        rng = np.random.default_rng(seed)
        dirs = rng.standard_normal((n_samples, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = tau * rng.uniform(0, 1, n_samples) ** (1.0 / d)
        interior = dirs * radii[:, None]
        boundary = dirs[: n_samples // 4] * tau
        axis_pts = np.concatenate([np.eye(d), -np.eye(d)]) * tau
        pts = np.concatenate([interior, boundary, axis_pts, np.zeros((1, d))])
    grads = kernel_gradient(geom, pts)
    norms = np.linalg.norm(np.atleast_2d(grads), axis=-1)
    j = int(np.argmax(norms))
    bound = gradient_sup_bound(geom, tau)
    records.append({
        "quantity": "grad_sup",
        "bound": bound,
        "observed": float(norms[j]),
        "witness": np.atleast_2d(pts)[j].tolist(),
        "pass": bool(norms[j] <= bound * (1 + 1e-9) + 1e-12),
    })

    fd = _biharmonic_fd(geom)
    bbound = biharmonic_bound(geom)
    records.append({
        "quantity": "biharmonic",
        "bound": bbound,
        "observed": fd,
        "witness": [0.0] * d,
        "pass": bool(fd <= bbound * (1 + 1e-4)),
    })
    ok = all(r["pass"] for r in records)
    return {"geometry": geom.to_json(), "tau": tau, "records": records, "pass": ok}


def _biharmonic_fd_step(geom: KernelGeometry, h: float) -> float:
    d = geom.d
    total = 0.0
    for j in range(d):
        for k in range(d):
            if j == k:
                offs = np.zeros((5, d))
                offs[:, j] = np.array([-2, -1, 0, 1, 2]) * h
                vals = kernel_value(geom, offs)
                total += (vals[0] - 4 * vals[1] + 6 * vals[2]
                          - 4 * vals[3] + vals[4]) / h ** 4
            else:
                offs = np.zeros((9, d))
                steps = [(a, b) for a in (-1, 0, 1) for b in (-1, 0, 1)]
                for idx, (a, b) in enumerate(steps):
                    offs[idx, j] = a * h
                    offs[idx, k] = b * h
                vals = kernel_value(geom, offs).reshape(3, 3)
                d2j = vals[0, :] - 2 * vals[1, :] + vals[2, :]
                total += (d2j[0] - 2 * d2j[1] + d2j[2]) / h ** 4
    return float(total)


def _biharmonic_fd(geom: KernelGeometry) -> float:
    """Finite-difference Σ_{j,k} ∂_j²∂_k² K(0), Richardson extrapolated.

    Fourth differences are roundoff-limited (eps / h^4), so the base step is
    deliberately coarse and Richardson removes the leading truncation term.
    """
    h = 0.02 / (2.0 * math.pi * max(geom.m, 1))
    coarse = _biharmonic_fd_step(geom, h)
    fine = _biharmonic_fd_step(geom, h / 2.0)
    return (4.0 * fine - coarse) / 3.0
