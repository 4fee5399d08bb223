"""Projection-evolution simulator on finite space-time lattices."""
from .engine import (
    EvolutionSchedule,
    PathTable,
    RngStream,
    SampleTable,
    Step,
    check_scaling_condition,
    collapse,
    enumerate_path_table,
    enumerate_paths,
    final_step_masses,
    nonselective_evolve,
    path_probabilities_direct,
    path_probability_direct,
    sample_trajectories,
    sample_trajectory,
    step_outcome_probabilities,
)
from .errors import BranchImpossibleError, ConfigError, ProjEvError, ResourceLimitError
from .hilbert import (
    COMPLEMENT,
    DensityOperator,
    LatticeSpace,
    LinearOperator,
    OperatorFamily,
    StateVector,
    complete_family,
    family_residuals,
    partial_trace,
    spectral_family,
    trivial_family,
)
from .mach_zehnder import (
    DeviceLayout,
    EpsilonRamp,
    TimeBasis,
    detection_distribution,
    forward_branch_filter,
    model1_schedule,
    model2_schedule,
)

__version__ = "0.1.0"
