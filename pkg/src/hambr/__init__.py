"""Noisy-label learning on the unit sphere with energy-guided virtual outliers.

Samples with unreliable labels are partitioned by a two-component mixture
over their losses, a feature bank of trusted samples defines a class-wise
free energy on the sphere, and dissipative Hamiltonian chains ride that
energy surface to synthesize boundary outliers that sharpen the classifier's
decision margins.
"""

from .energy import EnergyParams, FeatureBank, class_free_energy, global_potential
from .losses import LossWeights, compute_prototypes
from .partition import fit_gmm_1d, clean_posterior
from .runner import ExperimentConfig, run_experiment
from .sampler import SamplerConfig, dshd_step, synthesize_outliers
from .sphere import TangentVector, UnitVector
from .synthgen import DatasetSpec, make_dataset

__version__ = "0.1.0"

__all__ = [
    "DatasetSpec",
    "EnergyParams",
    "ExperimentConfig",
    "FeatureBank",
    "LossWeights",
    "SamplerConfig",
    "TangentVector",
    "UnitVector",
    "class_free_energy",
    "clean_posterior",
    "compute_prototypes",
    "dshd_step",
    "fit_gmm_1d",
    "global_potential",
    "make_dataset",
    "run_experiment",
    "synthesize_outliers",
    "__version__",
]
