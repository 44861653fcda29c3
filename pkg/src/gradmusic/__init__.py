"""Gradient-MUSIC: multidimensional off-grid frequency recovery.

Recovers the number, locations and amplitudes of the frequencies of a noisy
exponential sum sampled on a discrete cube, by thresholding the MUSIC
landscape of an estimated signal subspace on a coarse grid and refining each
cluster with fixed-step gradient descent.  Also ships the analytic noiseless
landscape for continuous ball sampling, landscape admissibility diagnostics,
minimax adversarial witnesses, and a reproducible error-scaling experiment
harness.
"""

__version__ = "0.1.0"

from .estimator import GradientMusic
from .geometry import (Domain, Grid, make_uniform_grid, matching_distance,
                       mesh_norm, min_separation, torus_distance)
from .kernels import (KernelGeometry, ball_kernel, cube_kernel, default_tau,
                      dirichlet_1d, hessian_at_zero, kernel_matrix)
from .landscape import MusicEvaluator, check_admissibility, grid_evaluate
from .minimax import AdversarialPair, adversarial_pair, estimator_stress
from .recovery import (DescentConfig, PipelineOptions, default_hyperparams,
                       gradient_descent, run_gradient_music,
                       threshold_and_cluster)
from .signal import (NoiseModel, ParameterConfig, SampleSet,
                     estimate_amplitudes, observe, random_separated_config,
                     sample_noise, synthesize)

__all__ = [
    "__version__",
    "GradientMusic",
    "Domain", "Grid", "make_uniform_grid", "matching_distance", "mesh_norm",
    "min_separation", "torus_distance",
    "KernelGeometry", "ball_kernel", "cube_kernel", "default_tau",
    "dirichlet_1d", "hessian_at_zero", "kernel_matrix",
    "MusicEvaluator", "check_admissibility", "grid_evaluate",
    "AdversarialPair", "adversarial_pair", "estimator_stress",
    "DescentConfig", "PipelineOptions", "default_hyperparams",
    "gradient_descent", "run_gradient_music", "threshold_and_cluster",
    "NoiseModel", "ParameterConfig", "SampleSet", "estimate_amplitudes",
    "observe", "random_separated_config", "sample_noise", "synthesize",
]
