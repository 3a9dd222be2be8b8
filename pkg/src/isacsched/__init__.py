"""Goal-oriented sensing schedules for collaborative ISAC networks.

Devices in a cell double as sensors.  Each sensing cycle a subset is
scheduled to sense and upload classification features while the rest
carry ordinary uplink traffic.  This package models the resulting
trade-off (discriminant gain of the fused features against throughput
guarantees and a network energy budget), computes optimized scheduling
policies for independent and correlated feature models, and verifies
them by simulation.
"""

from .model import (
    ClassStatistics,
    CorrelationModel,
    Device,
    IndependentPolicy,
    JointPolicy,
    device_gain,
    device_gain_gradient,
    fit_cross_coefficients,
    joint_gain_exact,
    joint_gain_simplified,
    network_gain_independent,
    pairwise_gain_matrix,
    product_moments,
)
from .network import (
    ConstraintSet,
    EnergyBudget,
    JointLayout,
    RadioEnvironment,
    RateRequirements,
    Timing,
    avg_rate_lower_bound_independent,
    avg_rate_lower_bound_joint,
    build_constraints_independent,
    build_constraints_joint,
    feature_time_used,
    independent_violations,
    joint_violations,
    spectral_efficiency,
)
from .sampler import (
    DichotomizedGaussian,
    ExplicitBernoulli,
    IsingModel,
    dg_calibrate,
    dg_sample,
    enumerate_bernoulli,
    ising_fit,
    ising_sample,
    psd_project,
    rng_stream,
)
from .solver import (
    McCormickState,
    RatioProgram,
    SolverConfig,
    SolverReport,
    find_feasible_point,
    inner_convex_solve,
    jong_solve,
    policy_all_on,
    policy_fair,
    policy_grid_search,
    policy_importance,
    project_constraints,
    solve_independent,
    solve_joint,
)
from .sim import (
    Scenario,
    ScenarioParams,
    SimReport,
    classify_proxy,
    generate_scenario,
    max_energy,
    run_sweep,
    simulate,
)

__version__ = "0.1.0"
