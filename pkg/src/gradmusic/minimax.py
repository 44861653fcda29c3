"""Adversarial twin configurations realizing the minimax lower bound.

Two admissible parameter sets whose noisy data coincide exactly: one carries
no noise, the other a perturbation η within the noise budget.  Any estimator
fed the common data must err by at least half the parameter gap against one
of the two truths, which is what ``estimator_stress`` demonstrates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .geometry import Domain, matching_distance
from .kernels import KernelGeometry
from .signal import ParameterConfig, SampleSet, cube_sample_sites, synthesize


class MinimaxError(ValueError):
    pass


def default_cd(d: int) -> float:
    """Small enough that the norm-budget chain verifies for all tested (d, m)."""
    return 1e-2 / 4 ** d


@dataclass(frozen=True)
class AdversarialPair:
    """Twin configurations with identical data under admissible noise."""

    config: ParameterConfig
    config_alt: ParameterConfig
    eta: np.ndarray
    sites: np.ndarray
    quad_weight: float          # per-site measure (1 for lattice counting)
    geometry: KernelGeometry
    delta: float                # location gap |θ_1 - θ'_1|
    amplitude_gap: float
    p: float
    epsilon: float
    lp_norm: float
    norms_approximate: bool
    data_residual: float

    def to_json(self) -> dict:
        return {
            "geometry": self.geometry.to_json(),
            "config": self.config.to_json(),
            "config_alt": self.config_alt.to_json(),
            "delta": self.delta,
            "amplitude_gap": self.amplitude_gap,
            "p": self.p if self.p != math.inf else "inf",
            "epsilon": self.epsilon,
            "lp_norm": self.lp_norm,
            "norms_approximate": self.norms_approximate,
            "data_residual": self.data_residual,
        }


def _lp_norm(values: np.ndarray, p: float, weight: float) -> float:
    if p == math.inf:
        return float(np.abs(values).max(initial=0.0))
    return float((np.sum(np.abs(values) ** p) * weight) ** (1.0 / p))


def _ball_quadrature(m: float, d: int, resolution: Optional[float]):
    h = resolution if resolution else m / 64.0
    axis = np.arange(-2.0 * m, 2.0 * m + h / 2, h)
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=-1)
    pts = pts[np.linalg.norm(pts, axis=1) <= 2.0 * m]
    return pts, h ** d


def adversarial_pair(s: int, beta: float, m: int, d: int, p: float,
                     epsilon: float, c_d: Optional[float] = None,
                     geometry: str = "cube",
                     quad_resolution: Optional[float] = None) -> AdversarialPair:
    """Construct the explicit minimax witness pair.

    θ_1 sits at the origin with the remaining frequencies spaced β/m apart
    along the first axis (the nearest at 2β/m); the twin moves θ_1 by
    δ = c_d ε / m^{1+d/p} and rescales a_1 to 1 + mδ.  The residual noise
    η = y(ϑ, a) - y(ϑ', a') then satisfies |η| <= mδ(1 + 4π + 4πδ) pointwise
    and ||η||_p <= ε.  Raises when the noise budget cannot absorb ε.
    """
    if s < 2:
        raise MinimaxError("the construction needs s >= 2")
    if beta < 1:
        raise MinimaxError("beta must be at least 1")
    if m < 2 * beta * s:
        raise MinimaxError(f"need m >= 2 β s = {2 * beta * s}")
    if not (p >= 1):
        raise MinimaxError("p must be in [1, inf]")
    if epsilon < 0:
        raise MinimaxError("epsilon must be nonnegative")
    c_d = default_cd(d) if c_d is None else c_d
    dp = 0.0 if p == math.inf else d / p
    delta = c_d * epsilon / m ** (1.0 + dp)
    if delta > 1.0 / m:
        raise MinimaxError(
            f"hypothesis on epsilon violated: derived shift δ = {delta:.3e} "
            f"exceeds 1/m")

    if geometry == "cube":
        geom = KernelGeometry("cube", int(m), d)
        domain = Domain("torus", d)
        sites = cube_sample_sites(geom)
        weight = 1.0
        approximate = False
    elif geometry == "ball":
        geom = KernelGeometry("ball", float(m), d)
        domain = Domain("box", d, bounds=np.array([[0.0, 1.0]] * d))
        sites, weight = _ball_quadrature(float(m), d, quad_resolution)
        approximate = True
    else:
        raise MinimaxError(f"unknown geometry {geometry!r}")

    theta = np.zeros((s, d))
    for j in range(1, s):
        theta[j, 0] = 2.0 * beta / m + (j - 1) * beta / m
    amps = np.ones(s, dtype=complex)
    config = ParameterConfig(theta, amps, domain)

    theta_alt = theta.copy()
    theta_alt[0, 0] = delta
    amps_alt = amps.copy()
    amps_alt[0] = 1.0 + m * delta
    config_alt = ParameterConfig(theta_alt, amps_alt, domain)

    y = synthesize(config, sites)
    y_alt = synthesize(config_alt, sites)
    eta = y - y_alt

    sup = float(np.abs(eta).max(initial=0.0))
    sup_bound = m * delta * (1.0 + 4.0 * math.pi + 4.0 * math.pi * delta)
    if sup > sup_bound * (1 + 1e-9) + 1e-15:
        raise MinimaxError(
            f"pointwise bound violated: max |η| = {sup:.3e} > {sup_bound:.3e}")
    lp = _lp_norm(eta, p, weight)
    if lp > epsilon * (1 + 1e-9):
        raise MinimaxError(
            f"hypothesis on epsilon violated: ||η||_p = {lp:.3e} > ε = {epsilon}")
    residual = float(np.abs(y - (y_alt + eta)).max(initial=0.0))
    scale = float(np.abs(y).max(initial=1.0))
    return AdversarialPair(
        config=config, config_alt=config_alt, eta=eta, sites=sites,
        quad_weight=weight, geometry=geom, delta=delta,
        amplitude_gap=m * delta, p=p, epsilon=epsilon, lp_norm=lp,
        norms_approximate=approximate, data_residual=residual / scale)


def estimator_stress(pair: AdversarialPair,
                     estimator: Callable[[SampleSet], np.ndarray]) -> dict:
    """Run an estimator on the pair's common data and verify the lower bound.

    The estimator receives the common observations (the clean data of the
    first configuration) and returns frequency estimates.  By the triangle
    inequality the larger of its two matching errors is at least δ/2, which
    the report confirms numerically.
    """
    if pair.geometry.kind != "cube":
        raise MinimaxError("stress runs require cube-lattice data")
    samples = SampleSet(geometry=pair.geometry,
                        values=synthesize(pair.config, pair.sites))
    estimates = np.atleast_2d(np.asarray(estimator(samples), dtype=float))
    domain = pair.config.domain
    if estimates.shape[0] != pair.config.s:
        raise MinimaxError(
            f"estimator returned {estimates.shape[0]} frequencies "
            f"for s = {pair.config.s}")
    err = matching_distance(pair.config.theta, estimates, domain)
    err_alt = matching_distance(pair.config_alt.theta, estimates, domain)
    worst = max(err, err_alt)
    return {
        "error_vs_config": err,
        "error_vs_alt": err_alt,
        "max_error": worst,
        "half_gap": pair.delta / 2.0,
        "bound_holds": bool(worst >= pair.delta / 2.0 - 1e-15),
    }
