"""Multistage estimators for nonmonotone missing covariates under CCMV."""

from ._core import (
    Dataset,
    MstageError,
    beta_from_gamma,
    bootstrap,
    estimate,
    from_arrays,
    gen_binary_treat,
    gen_cox,
    ipw_weights,
    read_csv,
    run_cli,
    sweep,
    tilt_binary,
    tilt_gaussian,
    true_ate,
)

__all__ = [
    "Dataset",
    "MstageError",
    "beta_from_gamma",
    "bootstrap",
    "estimate",
    "from_arrays",
    "gen_binary_treat",
    "gen_cox",
    "ipw_weights",
    "read_csv",
    "run_cli",
    "sweep",
    "tilt_binary",
    "tilt_gaussian",
    "true_ate",
]
