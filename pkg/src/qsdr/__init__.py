"""Quantile-based sufficient dimension reduction.

Estimators of the central subspace built from local polynomial quantile
regression across a grid of quantile levels:

* :func:`qopg_fit`, iterated outer products of quantile gradients;
* :func:`qmave_fit`, joint minimisation over local planes and directions;
* :func:`sir_fit`, sliced inverse regression as a baseline;
* :func:`select_dimension_cv`, structural dimension by leave-one-out CV.
"""

__version__ = "0.1.0"

from .bandwidth import (
    BandwidthPlan,
    modified_cv_bandwidths,
    normal_inv_cdf,
    parse_bandwidth_rule,
    plan_bandwidths,
    rule_of_thumb_bandwidth,
)
from .dimension import DimensionConfig, DimensionResult, select_dimension_cv
from .errors import (
    ConfigError,
    DataError,
    EmptyAfterFiltering,
    InsufficientData,
    InsufficientLocalData,
    MissingColumn,
    NoNumericData,
    QsdrError,
    RankDeficient,
    SolverDiverged,
)
from .io import Dataset, load_dataset_csv, write_dataset_csv
from .linalg import orthonormalize, projection, subspace_error, symmetric_eigen
from .opg import CsEstimate, QopgConfig, composite_opg, gradient_field, level_opg, qopg_fit
from .qmave import QmaveConfig, qmave_fit, qmave_objective
from .simulation import SimReport, SimSpec, generate_covariates, generate_model, run_replicates, sample_error
from .sir import SirConfig, sir_fit
from .smoother import (
    KernelSpec,
    SolverConfig,
    build_multi_index_set,
    check_loss,
    fit_local_quantile,
    local_gradients,
    solve_weighted_qr,
)

__all__ = [
    "__version__",
    "BandwidthPlan",
    "modified_cv_bandwidths",
    "normal_inv_cdf",
    "parse_bandwidth_rule",
    "plan_bandwidths",
    "rule_of_thumb_bandwidth",
    "DimensionConfig",
    "DimensionResult",
    "select_dimension_cv",
    "ConfigError",
    "DataError",
    "EmptyAfterFiltering",
    "InsufficientData",
    "InsufficientLocalData",
    "MissingColumn",
    "NoNumericData",
    "QsdrError",
    "RankDeficient",
    "SolverDiverged",
    "Dataset",
    "load_dataset_csv",
    "write_dataset_csv",
    "orthonormalize",
    "projection",
    "subspace_error",
    "symmetric_eigen",
    "CsEstimate",
    "QopgConfig",
    "composite_opg",
    "gradient_field",
    "level_opg",
    "qopg_fit",
    "QmaveConfig",
    "qmave_fit",
    "qmave_objective",
    "SimReport",
    "SimSpec",
    "generate_covariates",
    "generate_model",
    "run_replicates",
    "sample_error",
    "SirConfig",
    "sir_fit",
    "KernelSpec",
    "SolverConfig",
    "build_multi_index_set",
    "check_loss",
    "fit_local_quantile",
    "local_gradients",
    "solve_weighted_qr",
]
