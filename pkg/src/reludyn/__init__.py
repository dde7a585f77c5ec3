"""Simulation and analysis of gradient descent for a bias-free one-ReLU
student-teacher model under l1/l2 regularization."""

__version__ = "0.1.0"

from .model import (
    ActivationMask,
    Design,
    PolarPair,
    Regularizer,
    WeightVector,
    activation_mask,
    empirical_step,
    expected_step,
    forward,
    loss,
    no_regularizer,
    optimum,
    polar,
    population_loss,
    sample_design,
    student,
    teacher,
    unit_ones_teacher,
)
from .analytic import (
    BoundReport,
    DegenerateMaskError,
    LyapunovEval,
    MaskedGram,
    NewtonConvergenceError,
    SolverReport,
    lambda_bound_l1,
    lambda_bound_l2,
    lyapunov_eval,
    lyapunov_matrices,
    masked_gram,
    neumann_residual,
    rank_tail_probability,
    solve_optimum_l1,
    solve_optimum_l2,
    theoretical_probability,
    vdot,
)
from .dynamics import (
    Outcome,
    StopRule,
    Trajectory,
    classify_outcome,
    init_ball_radius,
    run_expected_flow,
    run_gd,
    sample_init,
    trial_seeds,
    write_trajectory_csv,
    write_trajectory_json,
)
from .experiments import (
    DemoRun,
    GridConfig,
    PhaseField,
    TableReport,
    TableRow,
    demo_four,
    phase_field,
    run_grid,
    run_trial,
    wilson_halfwidth,
    write_phase_csv,
    write_phase_svg,
    write_table_csv,
    write_table_json,
)
