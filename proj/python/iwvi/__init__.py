"""Importance weighted variational inference with elliptical families."""

from ._core import (
    ClutterTarget,
    ConfigError,
    DatasetMissing,
    DirichletTarget,
    EllipticalParams,
    GaussianTarget,
    MixtureTarget1D,
    TargetModel,
    __version__,
    elbo,
    fixed_noise_iw_elbo,
    gap_diagnostics,
    iw_elbo,
    qm_marginal_density,
    run_experiment,
    run_to_directory,
    sample_qM,
    snis_expect,
)

__all__ = [
    "ClutterTarget",
    "ConfigError",
    "DatasetMissing",
    "DirichletTarget",
    "EllipticalParams",
    "GaussianTarget",
    "MixtureTarget1D",
    "TargetModel",
    "__version__",
    "elbo",
    "fixed_noise_iw_elbo",
    "gap_diagnostics",
    "iw_elbo",
    "qm_marginal_density",
    "run_experiment",
    "run_to_directory",
    "sample_qM",
    "snis_expect",
]
