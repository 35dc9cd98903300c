"""Quantile regression coefficient processes: exact, preprocessed and one-step fits with bootstrap inference."""

from __future__ import annotations

__version__ = "0.1.0"

from .bootstrap import (BootstrapDraws, WeightScheme, bootstrap_onestep, bootstrap_qr_preprocessed,
                        score_multiplier_bootstrap)
from .core import (CoefProcess, Dataset, Engine, QrFit, QuantileGrid, check_loss, interpolate_process, load_csv,
                   moment, moment_bound, objective, parse_grid, validate_grid)
from .errors import (BootstrapError, ConvergenceError, DomainError, GridError, InputError, NumericalError,
                     ParseError, ProcessError, QRError, RangeError, RankError, ShapeError, SingularJacobianError,
                     SizeError)
from .inference import TestKind, TestResult, UniformBands, functional_test, pointwise_test, uniform_bands, wald_test
from .onestep import (JacobianEstimate, OneStepConfig, estimate_jacobian, fit_process_onestep,
                      hall_sheather_bandwidth, onestep_update, powell_jacobian, with_jacobians)
from .preprocess import PreprocessConfig, fit_process_preprocess, fit_single_pk, solve_preprocessed
from .solver import SolverOptions, solve_qr, solve_qr_bruteforce

__all__ = [
    "BootstrapDraws", "BootstrapError", "CoefProcess", "ConvergenceError", "Dataset", "DomainError", "Engine",
    "GridError", "InputError", "JacobianEstimate", "NumericalError", "OneStepConfig", "ParseError",
    "PreprocessConfig", "ProcessError", "QRError", "QrFit", "QuantileGrid", "RangeError", "RankError",
    "ShapeError", "SingularJacobianError", "SizeError", "SolverOptions", "TestKind", "TestResult",
    "UniformBands", "WeightScheme", "bootstrap_onestep", "bootstrap_qr_preprocessed", "check_loss",
    "estimate_jacobian", "fit_process_onestep", "fit_process_preprocess", "fit_single_pk", "functional_test",
    "hall_sheather_bandwidth", "interpolate_process", "load_csv", "moment", "moment_bound", "objective",
    "onestep_update", "parse_grid", "pointwise_test", "powell_jacobian", "score_multiplier_bootstrap",
    "solve_preprocessed", "solve_qr", "solve_qr_bruteforce", "uniform_bands", "validate_grid", "wald_test",
    "with_jacobians",
]
