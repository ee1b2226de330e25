"""Coefficient-space solver for time-periodic solutions of the cubic
Klein-Gordon equation on the 3-sphere.

The solver constructs small-amplitude 2*pi/omega-periodic, spherically
symmetric solutions with omega = sqrt(1 + eps) by a kernel/range splitting:
an explicit one-mode kernel solution continued by Newton, and a Nash-Moser
iteration for the range component with small-divisor-aware linear solves.
It also verifies the construction's explicit bounds at finite truncation and
estimates the measure of the admissible amplitude set.
"""

from .field_algebra import (CoeffField, NormParams, field_multiply, load_field,
                            project_kernel, project_range, save_field,
                            smoothing_bound_check, sobolev_trade_check,
                            time_cutoff, zero_resonant_mode)
from .bifurcation import (KernelField, kernel_derivative, kernel_residual,
                          linearize_kernel, one_mode_solution, solve_kernel)
from .linearized import (assemble_linearized, diagonalize_block, divisor_table,
                         preconditioned_split_check, small_divisors,
                         split_diagonal)
from .resonance import (ConditionRecord, ResonanceParams, check_limit_conditions,
                        check_stage_conditions, fit_excluded_exponent,
                        mean_potential, measure_scan, strong_diophantine_check)
from .nash_moser import (ContractionError, MelnikovExcludedError, RunResult,
                         SolverConfig, SolveTrace, run, solve_stage,
                         solve_stage0, verify_solution)

__version__ = "0.1.0"

__all__ = [
    "CoeffField", "NormParams", "field_multiply", "project_kernel",
    "project_range", "time_cutoff", "zero_resonant_mode", "save_field",
    "load_field", "smoothing_bound_check", "sobolev_trade_check",
    "KernelField", "one_mode_solution", "kernel_residual", "linearize_kernel",
    "solve_kernel", "kernel_derivative",
    "assemble_linearized", "split_diagonal", "diagonalize_block",
    "small_divisors", "divisor_table", "preconditioned_split_check",
    "ResonanceParams", "ConditionRecord", "mean_potential",
    "check_stage_conditions", "check_limit_conditions",
    "strong_diophantine_check", "measure_scan", "fit_excluded_exponent",
    "SolverConfig", "SolveTrace", "RunResult", "run", "solve_stage0",
    "solve_stage", "verify_solution", "MelnikovExcludedError",
    "ContractionError",
]
