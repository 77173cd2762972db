"""Joint user association, BS clustering and scheduling for massive-MIMO HetNets."""

from .topology import (
    BaseStation,
    ChannelConfig,
    GainMatrix,
    GridLayoutConfig,
    HexLayoutConfig,
    Layout,
    Tier,
    User,
    compute_link_gains,
    distance,
    generate_grid_layout,
    generate_hex_layout,
)
from .rates import (
    BandSpec,
    RateTable,
    ServingCapacityRule,
    band_for,
    bf_gain,
    build_rate_table,
    capacity,
    enumerate_candidate_clusters,
    long_term_rate,
    rate_lzfbf,
    rate_mrt,
)
from .linklevel import monte_carlo_rate_oracle
from .num_solver import (
    DualState,
    NumProblem,
    PrimalSolution,
    SolverConfig,
    build_num_problem,
    count_fractional_users,
    optimal_rates_from_duals,
    recover_primal,
    run_dual_subgradient,
    solve_num,
)
from .lp import LinearProgram, LpSolution, check_hull_membership, solve_lp
from .scheduler import (
    FeasibilityReport,
    ScheduleInstant,
    SchedulerConfig,
    UniqueAssociation,
    VirtualQueueState,
    infeasibility_witness,
    run_scheduler,
    unique_association,
    verify_feasible_schedule,
    vq_greedy_schedule_rb,
    vq_state_update,
)

__version__ = "0.1.0"
