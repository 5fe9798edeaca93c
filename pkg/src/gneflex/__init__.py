"""Network-constrained demand-response bidding: a distributed equilibrium
seeker with a centralized cross-validation oracle.

The package models a utility-cleared load-adjustment market among
aggregators, derives the admissible-bid region and the game's stacked
gradients, tunes safe step sizes from closed-form constants, and runs a
fully distributed round-synchronous iteration in which agents exchange only
estimates and auxiliaries with their graph neighbors. A full-information
variational-inequality solver certifies the same equilibrium independently.
"""

from .config import RunConfig, load_config, load_packaged, resolve_config, write_config
from .errors import (
    ConfigError,
    ConvergenceError,
    GneflexError,
    GraphError,
    InfeasibleError,
    TuningError,
)
from .fixtures import cs5, load_fixture, t2, t2i
from .game import (
    AffineForm,
    GameModel,
    affine_form,
    cost,
    extended_pseudo_gradient,
    marginal_cost,
    objective,
    pseudo_gradient,
)
from .graphs import CommGraph, build_graph, neighbor_mix
from .market import (
    AggregatorParams,
    FeasibilityReport,
    FeasibleSet,
    MarketInstance,
    TransmissionLine,
    build_feasible_set,
    chebyshev_center,
    check_feasibility,
    clearing_price,
    load_adjustment,
    modify_bids,
    project_feasible,
    slater_point,
)
from .oracle import (
    VgneCertificate,
    best_response,
    grid_certify,
    kkt_residual,
    random_instance,
    solve_vgne,
)
from .solver import (
    AgentLocal,
    Phase1Messages,
    Phase2Messages,
    RoundMessages,
    RunResult,
    SolverState,
    StopReason,
    Trajectory,
    agent_phase1,
    agent_phase2,
    available_engines,
    dense_round,
    init,
    replay_agent_round,
    residuals,
    run,
    step,
)
from .tuning import (
    CocoercivityReport,
    GainSet,
    PreconditionerView,
    assemble_phi,
    cocoercivity_constants,
    coupling_block_norm,
    default_gains,
    kappa_interval,
    schur_margins,
    uniformity_gap,
)

__version__ = "0.1.0"
