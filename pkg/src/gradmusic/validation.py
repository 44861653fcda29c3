"""Input validation helpers for the estimator-facing API."""

from __future__ import annotations

import numbers

import numpy as np

from .kernels import KernelGeometry


def check_seed(seed) -> int:
    if seed is None:
        return 0
    if isinstance(seed, numbers.Integral):
        return int(seed)
    raise ValueError(f"seed must be an integer or None, got {seed!r}")


def check_cube_samples(X, m=None, d=None):
    """Validate raw samples on the lattice Q_{2m} ∩ Z^d.

    Accepts a d-dimensional array of shape (4m+1, ..., 4m+1) or a flat vector
    whose length matches (4m+1)^d for the given or inferred geometry.
    Returns (values_flat, geometry).
    """
    arr = np.asarray(X)
    if arr.size == 0:
        raise ValueError("empty sample array")
    if not np.all(np.isfinite(arr.real)) or not np.all(np.isfinite(arr.imag)):
        raise ValueError("samples contain non-finite values")
    arr = arr.astype(complex)
    if arr.ndim > 1:
        sides = set(arr.shape)
        if len(sides) != 1:
            raise ValueError(f"sample array must be hypercubic, got {arr.shape}")
        side = arr.shape[0]
        if (side - 1) % 4:
            raise ValueError(f"side {side} does not match any 4m+1 lattice")
        m_inferred = (side - 1) // 4
        d_inferred = arr.ndim
    else:
        if m is None or d is None:
            raise ValueError("flat sample vectors need explicit m and d")
        m_inferred, d_inferred = int(m), int(d)
        if arr.size != (4 * m_inferred + 1) ** d_inferred:
            raise ValueError(
                f"expected {(4 * m_inferred + 1) ** d_inferred} samples "
                f"for m={m_inferred}, d={d_inferred}, got {arr.size}")
    if m is not None and int(m) != m_inferred:
        raise ValueError(f"sample shape implies m={m_inferred}, got m={m}")
    if d is not None and int(d) != d_inferred:
        raise ValueError(f"sample shape implies d={d_inferred}, got d={d}")
    geom = KernelGeometry("cube", m_inferred, d_inferred)
    return arr.ravel(), geom


def check_sites(X, d: int) -> np.ndarray:
    sites = np.asarray(X, dtype=float)
    if sites.ndim == 1:
        sites = sites[:, None] if d == 1 else sites[None, :]
    if sites.ndim != 2 or sites.shape[1] != d:
        raise ValueError(f"sites must have shape (n, {d}), got {sites.shape}")
    if not np.all(np.isfinite(sites)):
        raise ValueError("sites contain non-finite values")
    return sites
