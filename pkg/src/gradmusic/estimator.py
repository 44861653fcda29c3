"""Scikit-learn style front end for Gradient-MUSIC."""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from .recovery import PipelineOptions, run_gradient_music
from .signal import ParameterConfig, SampleSet, synthesize
from .validation import check_cube_samples, check_seed, check_sites


class GradientMusic(BaseEstimator):
    """Off-grid frequency and amplitude recovery from cube-lattice samples.

    Fit consumes noisy samples of an exponential sum on the integer lattice
    Q_{2m} ∩ Z^d (a hypercubic array of side 4m+1, or a flat vector together
    with ``m`` and ``d``) and exposes the recovered model through
    ``order_``, ``frequencies_`` and ``amplitudes_``.  ``predict`` evaluates
    the fitted exponential sum at arbitrary sites.

    Parameters mirror the pipeline: ``s`` pins the model order when known
    (detection still runs and is reported), ``alpha1`` is the landscape
    threshold, ``step``/``n_iter`` override the aperture-derived descent
    schedule, ``mesh_kappa`` scales the initialization grid target mesh.

    Example
    -------
    >>> est = GradientMusic(s=2)
    >>> est.fit(samples_4m1_by_4m1)       # doctest: +SKIP
    >>> est.frequencies_                  # doctest: +SKIP
    """

    def __init__(self, m: Optional[int] = None, d: Optional[int] = None,
                 s: Optional[int] = None, alpha1: float = 0.5,
                 mesh_kappa: float = 1.0, step: Optional[float] = None,
                 n_iter: Optional[int] = None,
                 order_ratio_threshold: float = 0.1,
                 noise_scale_hint: Optional[float] = None,
                 svd_tol: float = 1e-9, seed: int = 0):
        self.m = m
        self.d = d
        self.s = s
        self.alpha1 = alpha1
        self.mesh_kappa = mesh_kappa
        self.step = step
        self.n_iter = n_iter
        self.order_ratio_threshold = order_ratio_threshold
        self.noise_scale_hint = noise_scale_hint
        self.svd_tol = svd_tol
        self.seed = seed

    def fit(self, X, y=None):
        values, geom = check_cube_samples(X, self.m, self.d)
        samples = SampleSet(geometry=geom, values=values)
        options = PipelineOptions(
            s_hint=self.s,
            order_ratio_threshold=self.order_ratio_threshold,
            svd_tol=self.svd_tol,
            svd_seed=check_seed(self.seed),
            mesh_kappa=self.mesh_kappa,
            alpha1=self.alpha1,
            step=self.step,
            iterations=self.n_iter,
            noise_scale_hint=self.noise_scale_hint,
        )
        report = run_gradient_music(samples, options)
        self.geometry_ = geom
        self.report_ = report
        self.order_ = report.detected_order
        self.frequencies_ = report.estimates
        self.amplitudes_ = (report.amplitudes if report.amplitudes is not None
                            else np.zeros(0, dtype=complex))
        self.singular_values_ = report.singular_values
        return self

    def predict(self, X):
        """Evaluate the fitted exponential sum at sites of shape (n, d)."""
        self._check_fitted()
        sites = check_sites(X, self.geometry_.d)
        if self.frequencies_.shape[0] == 0:
            return np.zeros(sites.shape[0], dtype=complex)
        config = ParameterConfig(self.frequencies_, self.amplitudes_,
                                 self.geometry_.default_domain())
        return synthesize(config, sites)

    def score(self, X, y=None):
        """Negative mean squared residual of the fit on the training lattice."""
        self._check_fitted()
        values, geom = check_cube_samples(X, self.geometry_.m, self.geometry_.d)
        samples = SampleSet(geometry=geom, values=values)
        fitted = self.predict(samples.sites)
        return -float(np.mean(np.abs(values - fitted) ** 2))

    def _check_fitted(self):
        if not hasattr(self, "report_"):
            raise RuntimeError("this GradientMusic instance is not fitted yet")
