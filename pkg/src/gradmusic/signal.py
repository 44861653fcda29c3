"""Ground-truth configurations, exponential-sum synthesis, and noise models."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .geometry import Domain, min_separation
from .kernels import KernelGeometry


class SignalError(ValueError):
    pass


@dataclass(frozen=True)
class ParameterConfig:
    """The unknowns of the estimation problem: s frequencies plus amplitudes.

    Frequencies are rows of ``theta`` (s, d); ``amplitudes`` are nonzero
    complex numbers.  Normalization to min |a_l| = 1 is an explicit operation.
    """

    theta: np.ndarray
    amplitudes: np.ndarray
    domain: Domain

    def __post_init__(self):
        theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
        amp = np.atleast_1d(np.asarray(self.amplitudes, dtype=complex))
        if theta.shape[0] != amp.shape[0]:
            raise SignalError("need one amplitude per frequency")
        if theta.shape[1] != self.domain.d:
            raise SignalError("frequency dimension does not match domain")
        if np.any(np.abs(amp) == 0):
            raise SignalError("amplitudes must be nonzero")
        theta = self.domain.canonicalize(theta)
        dists = self.domain.pairwise_distances(theta, theta)
        np.fill_diagonal(dists, np.inf)
        if theta.shape[0] > 1 and dists.min() == 0:
            raise SignalError("duplicate frequencies")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "amplitudes", amp)

    @property
    def s(self) -> int:
        return self.theta.shape[0]

    def normalized(self) -> "ParameterConfig":
        """Rescale amplitudes so min |a_l| = 1."""
        scale = np.abs(self.amplitudes).min()
        return ParameterConfig(self.theta, self.amplitudes / scale, self.domain)

    def separation(self) -> float:
        return min_separation(self.theta, self.domain)

    def to_json(self) -> dict:
        return {
            "domain": self.domain.to_json(),
            "theta": self.theta.tolist(),
            "amplitudes_re": self.amplitudes.real.tolist(),
            "amplitudes_im": self.amplitudes.imag.tolist(),
        }

    @staticmethod
    def from_json(obj: dict) -> "ParameterConfig":
        amp = np.asarray(obj["amplitudes_re"], dtype=float) \
            + 1j * np.asarray(obj["amplitudes_im"], dtype=float)
        return ParameterConfig(
            theta=np.asarray(obj["theta"], dtype=float),
            amplitudes=amp,
            domain=Domain.from_json(obj["domain"]),
        )


def synthesize(config: ParameterConfig, sites) -> np.ndarray:
    """Evaluate y(x) = Σ_l a_l exp(2πi θ_l · x) at the given sites."""
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    phases = sites @ config.theta.T
    return np.exp(2j * math.pi * phases) @ config.amplitudes


@dataclass(frozen=True)
class NoiseModel:
    """Per-site noise: none, fixed adversarial values, or complex Gaussian.

    The Gaussian profile is σ(x) = sigma0 (1 + |x|)^r, or any nonnegative
    per-site function passed as ``profile`` (callables do not serialize).
    The default convention draws Re and Im independently with variance 1/2
    each so that E|η(x)|² = σ(x)²; ``real_valued=True`` switches to real
    N(0, σ(x)²) draws for cross-checking.
    """

    kind: str = "none"
    values: Optional[np.ndarray] = None
    sigma0: float = 0.0
    r: float = 0.0
    real_valued: bool = False
    profile: Optional[callable] = None

    def __post_init__(self):
        if self.kind not in ("none", "adversarial", "gaussian"):
            raise SignalError(f"unknown noise kind {self.kind!r}")
        if self.kind == "adversarial" and self.values is None:
            raise SignalError("adversarial noise needs explicit values")
        if self.kind == "gaussian" and self.sigma0 < 0:
            raise SignalError("sigma0 must be nonnegative")

    def sigma_profile(self, sites) -> np.ndarray:
        sites = np.atleast_2d(np.asarray(sites, dtype=float))
        if self.profile is not None:
            sigma = np.asarray([self.profile(x) for x in sites], dtype=float)
            if np.any(sigma < 0):
                raise SignalError("sigma profile must be nonnegative")
            return sigma
        return self.sigma0 * (1.0 + np.linalg.norm(sites, axis=-1)) ** self.r

    def to_json(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "gaussian":
            out.update(sigma0=self.sigma0, r=self.r, real_valued=self.real_valued)
        if self.kind == "adversarial":
            out.update(values_re=self.values.real.tolist(),
                       values_im=self.values.imag.tolist())
        return out

    @staticmethod
    def from_json(obj: dict) -> "NoiseModel":
        kind = obj.get("kind", "none")
        if kind == "adversarial":
            vals = np.asarray(obj["values_re"], dtype=float) \
                + 1j * np.asarray(obj["values_im"], dtype=float)
            return NoiseModel(kind="adversarial", values=vals)
        if kind == "gaussian":
            return NoiseModel(kind="gaussian", sigma0=float(obj["sigma0"]),
                              r=float(obj.get("r", 0.0)),
                              real_valued=bool(obj.get("real_valued", False)))
        return NoiseModel()


def sample_noise(model: NoiseModel, sites, seed: int) -> np.ndarray:
    """Draw one noise realization; bit-identical for a fixed seed."""
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    n = sites.shape[0]
    if model.kind == "none":
        return np.zeros(n, dtype=complex)
    if model.kind == "adversarial":
        vals = np.asarray(model.values, dtype=complex).ravel()
        if vals.size != n:
            raise SignalError(f"adversarial noise has {vals.size} values for {n} sites")
        return vals
    rng = np.random.default_rng(seed)
    sigma = model.sigma_profile(sites)
    if model.real_valued:
        draw = rng.standard_normal(n).astype(complex)
    else:
        draw = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2.0)
    return sigma * draw


def random_separated_config(s: int, delta_min: float, amp_law, domain: Domain,
                            seed: int, max_tries: int = 20000) -> ParameterConfig:
    """Random configuration with min separation >= delta_min.

    Points are drawn sequentially and kept only if they respect the
    separation against all points kept so far; the result is post-checked.
    ``amp_law`` is "pm1", "unit", or an explicit amplitude array.
    """
    if s < 1:
        raise SignalError("s must be positive")
    rng = np.random.default_rng(seed)
    lo = np.zeros(domain.d) if domain.kind == "torus" else domain.bounds[:, 0]
    span = domain.side_lengths
    kept = []
    tries = 0
    while len(kept) < s:
        if tries >= max_tries:
            raise SignalError(
                f"could not pack {s} points at separation {delta_min} "
                f"within {max_tries} draws")
        tries += 1
        cand = lo + span * rng.uniform(0, 1, domain.d)
        ok = all(domain.distance(cand, p) >= delta_min for p in kept)
        if ok:
            kept.append(cand)
    theta = np.asarray(kept)
    if isinstance(amp_law, str):
        if amp_law == "pm1":
            amp = rng.choice([-1.0, 1.0], size=s).astype(complex)
        elif amp_law == "unit":
            amp = np.exp(2j * math.pi * rng.uniform(0, 1, s))
        else:
            raise SignalError(f"unknown amplitude law {amp_law!r}")
    else:
        amp = np.asarray(amp_law, dtype=complex)
    config = ParameterConfig(theta, amp, domain)
    if s > 1 and config.separation() < delta_min:
        raise SignalError("internal error: packing violated the separation")
    return config


@dataclass(frozen=True)
class SampleSet:
    """Observed values on the sampling set X*, in canonical site order.

    For the cube geometry the canonical order is the lexicographic
    enumeration of Q_{2m} ∩ Z^d (first coordinate slowest); the hankel module
    relies on this layout.  Explicit site lists cover quadrature lattices for
    the ball geometry.
    """

    geometry: KernelGeometry
    values: np.ndarray
    explicit_sites: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=complex).ravel()
        if self.explicit_sites is None:
            if self.geometry.kind != "cube":
                raise SignalError("ball sample sets need explicit sites")
            n_expected = (4 * int(self.geometry.m) + 1) ** self.geometry.d
            if vals.size != n_expected:
                raise SignalError(
                    f"expected {n_expected} samples on the cube lattice, "
                    f"got {vals.size}")
        else:
            sites = np.atleast_2d(np.asarray(self.explicit_sites, dtype=float))
            if sites.shape[0] != vals.size:
                raise SignalError("one value per site required")
            object.__setattr__(self, "explicit_sites", sites)
        object.__setattr__(self, "values", vals)

    @cached_property
    def sites(self) -> np.ndarray:
        if self.explicit_sites is not None:
            return self.explicit_sites
        return cube_sample_sites(self.geometry)

    @property
    def grid_shape(self) -> tuple:
        m, d = int(self.geometry.m), self.geometry.d
        return (4 * m + 1,) * d

    def values_grid(self) -> np.ndarray:
        """Cube samples reshaped to the (4m+1)^d lattice array."""
        if self.geometry.kind != "cube":
            raise SignalError("grid layout exists only for cube samples")
        return self.values.reshape(self.grid_shape)

    def to_json(self) -> dict:
        out = {
            "geometry": self.geometry.to_json(),
            "values_re": self.values.real.tolist(),
            "values_im": self.values.imag.tolist(),
        }
        if self.explicit_sites is not None:
            out["sites"] = self.explicit_sites.tolist()
        return out

    @staticmethod
    def from_json(obj: dict) -> "SampleSet":
        values = np.asarray(obj["values_re"], dtype=float) \
            + 1j * np.asarray(obj["values_im"], dtype=float)
        sites = np.asarray(obj["sites"], dtype=float) if "sites" in obj else None
        return SampleSet(geometry=KernelGeometry.from_json(obj["geometry"]),
                         values=values, explicit_sites=sites)


def cube_sample_sites(geom: KernelGeometry) -> np.ndarray:
    """Lexicographic enumeration of X* = Q_{2m} ∩ Z^d."""
    if geom.kind != "cube":
        raise SignalError("sample lattice exists only for the cube geometry")
    m = int(geom.m)
    axis = np.arange(-2 * m, 2 * m + 1, dtype=float)
    mesh = np.meshgrid(*([axis] * geom.d), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=-1)


def cube_effective_sites(geom: KernelGeometry) -> np.ndarray:
    """Lexicographic enumeration of X = Q_m ∩ Z^d."""
    if geom.kind != "cube":
        raise SignalError("effective lattice exists only for the cube geometry")
    m = int(geom.m)
    axis = np.arange(-m, m + 1, dtype=float)
    mesh = np.meshgrid(*([axis] * geom.d), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=-1)


def observe(config: ParameterConfig, geom: KernelGeometry, noise: NoiseModel,
            seed: int = 0) -> SampleSet:
    """Synthesize y on X* and add one noise draw."""
    sites = cube_sample_sites(geom)
    clean = synthesize(config, sites)
    eta = sample_noise(noise, sites, seed)
    return SampleSet(geometry=geom, values=clean + eta)


def estimate_amplitudes(theta_hat, samples: SampleSet,
                        cond_tol: float = 1e-8) -> np.ndarray:
    """Least-squares amplitudes for given frequencies on the sample set.

    Solves min_a ||Φ a - y||_2 with Φ the synthesis matrix on X*.  Raises if
    the synthesis system is numerically rank deficient, reporting the
    offending singular value.
    """
    theta_hat = np.atleast_2d(np.asarray(theta_hat, dtype=float))
    if theta_hat.shape[0] == 0:
        return np.zeros(0, dtype=complex)
    sites = samples.sites
    phi = np.exp(2j * math.pi * (sites @ theta_hat.T))
    sv = np.linalg.svd(phi, compute_uv=False)
    scale = math.sqrt(sites.shape[0])
    if sv[-1] < cond_tol * scale:
        raise SignalError(
            f"ill-conditioned synthesis system: smallest singular value "
            f"{sv[-1]:.3e} (normalized {sv[-1] / scale:.3e})")
    amp, *_ = np.linalg.lstsq(phi, samples.values, rcond=None)
    return amp
