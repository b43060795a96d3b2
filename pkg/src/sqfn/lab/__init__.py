"""Experiment drivers: configuration, probes, norm estimation, envelope fits and reports."""

from .config import RunConfig
from .envelopes import fit_kernel_envelopes
from .norms import NormReport, estimate_operator_norm
from .reports import ReportBundle, emit_reports
from .suite import run_theorem_a_suite

__all__ = [
    "NormReport",
    "ReportBundle",
    "RunConfig",
    "emit_reports",
    "estimate_operator_norm",
    "fit_kernel_envelopes",
    "run_theorem_a_suite",
]
