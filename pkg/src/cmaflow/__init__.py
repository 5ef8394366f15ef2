"""Parabolic complex Monge-Ampère flows on flat tori.

Spectral grid calculus (:mod:`field`), Hermitian metric algebra
(:mod:`kahler`), Newton-Krylov elliptic solvers (:mod:`elliptic`), explicit
flow integration (:mod:`flow`), a-priori estimate monitors (:mod:`monitors`)
and batch experiments (:mod:`harness`).
"""
from .elliptic import (
    EllipticError,
    EllipticReport,
    compatibility_constant,
    normalize_against,
    solve_fixed_rhs,
    solve_self_consistent,
)
from .field import (
    ComplexTensorField,
    FieldError,
    ScalarField,
    TorusGeometry,
    flat_laplacian,
    fourier_truncate,
    gradient,
    hessian,
    random_rough_field,
    trig_field,
)
from .flow import FlowConfig, FlowError, FlowState, Trajectory, estimate_horizon, run, step
from .harness import ConfigError, ExperimentConfig, ExperimentReport, run_config
from .kahler import (
    ConeExitError,
    MetricField,
    NonlinearityF,
    det_ratio,
    metric_from_potential,
    ricci,
    traces,
)
from .snapshot import SnapshotError, read_snapshot, write_snapshot

__version__ = "0.1.0"
