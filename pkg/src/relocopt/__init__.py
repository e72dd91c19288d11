"""Consumption and spatial relocation under a finite horizon: indirect
(shooting) solver, integral-equation cross-check, direct-transcription
oracle and asymptotic analysis."""
from .model import (
    ControlCaps,
    ModelParams,
    ParameterError,
    Regime,
    WageProfile,
    classify_regime,
    compute_control_caps,
    wage_eval,
)
from .dynamics import Extremal, Path, ResidualReport, verify_necessary_conditions
from .shooting import ShootConfig, count_extremals, shoot_alpha, solve_extremal
from .analysis import closed_form_constant_wage, fit_growth_rate, peak_gap_report, sweep_horizon
from .integral_solver import PicardConfig, build_kernel_table, green_kernel, picard_solve
from .direct_oracle import DirectSolution, OracleConfig, direct_optimize, sample_controls, simulate

__all__ = [
    "ControlCaps", "ModelParams", "ParameterError", "Regime", "WageProfile",
    "classify_regime", "compute_control_caps", "wage_eval",
    "Extremal", "Path", "ResidualReport", "verify_necessary_conditions",
    "ShootConfig", "count_extremals", "shoot_alpha", "solve_extremal",
    "closed_form_constant_wage", "fit_growth_rate", "peak_gap_report", "sweep_horizon",
    "PicardConfig", "build_kernel_table", "green_kernel", "picard_solve",
    "DirectSolution", "OracleConfig", "direct_optimize", "sample_controls", "simulate",
]
