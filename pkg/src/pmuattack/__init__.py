"""Identification of unobservable data attacks on synchrophasor measurements.

The measurement matrix is split into a low-rank part (clean data) and a
column-sparse part seen through the grid transform (attacks on bus states),
optionally plus scattered sparse corruptions.
"""
from __future__ import annotations

__version__ = "0.1.0"

from .errors import PMUAttackError
from .gridmodel import GridTopology, TransformMatrix, build_ring_network, build_transform
from .attacksim import AttackScenario, MeasurementSet, ScenarioConfig, generate_scenario
from .solver import DecompositionResult, Mode, ProblemSpec, solve
from .detect import DetectionOutcome, SuccessRecord, identify, score
from .theory import CertificateReport, IncoherenceStats, LambdaRange, build_certificate, compute_incoherence, lambda_range

__all__ = [
    "AttackScenario",
    "CertificateReport",
    "DecompositionResult",
    "DetectionOutcome",
    "GridTopology",
    "IncoherenceStats",
    "LambdaRange",
    "MeasurementSet",
    "Mode",
    "PMUAttackError",
    "ProblemSpec",
    "ScenarioConfig",
    "SuccessRecord",
    "TransformMatrix",
    "build_certificate",
    "build_ring_network",
    "build_transform",
    "compute_incoherence",
    "generate_scenario",
    "identify",
    "lambda_range",
    "score",
    "solve",
]
