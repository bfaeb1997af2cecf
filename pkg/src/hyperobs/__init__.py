"""Observer design and validation for networks coupled through directed hypergraphs."""

from .hypergraph import (
    Condensation,
    DirectedHypergraph,
    Hyperedge,
    HierarchicalGenSpec,
    LayerTooSmall,
    NegativeWeight,
    NodeOutOfRange,
    OverlappingTailsHeads,
    SignedGraph,
    WeightSumViolation,
    add_hyperedge,
    condense,
    generate_hierarchical,
    largest_connected_component,
    to_signed_graph,
)
from .dynamics import (
    CouplingFunction,
    DimensionMismatch,
    MissingMeasurement,
    NetworkSystem,
    OutputMap,
    VectorField,
    bistable_field,
    fd_jacobian,
    identity_output,
    linear_coupling,
    linear_output,
    lorenz_field,
    network_rhs,
    observer_rhs,
    tanh_coupling,
    vector_field_from_callable,
)
from .assembly import (
    CertificationReport,
    EmptySampleSet,
    ErrorSystem,
    MissingOutsideError,
    NonpositiveMargin,
    QNotSPD,
    RobustnessBound,
    SubsetIndex,
    SubsetNotHeadClosed,
    SubsetTooLarge,
    assemble_A,
    assemble_b,
    check_head_closed,
    check_thm1,
    check_thm2,
    thm3_bound,
)
from .gain_design import (
    GainSet,
    Infeasible,
    NoMeasuredNodes,
    ObserverDesign,
    design_gain_thm1,
    design_gain_thm2,
    estimate_network_rate,
)
from .designer import (
    AllMeasured,
    DesignOptions,
    DesignOutcome,
    EmptyTrajectorySet,
    certify_or_fail,
    design_observer,
    propagate_robustness_bounds,
    select_node,
)
from .sim import (
    EnsembleStats,
    RunResult,
    SimConfig,
    TrajectoryEnsemble,
    TrajectoryEnsembleSpec,
    integrate,
    make_ensemble,
    monte_carlo,
    settling_time,
    simulate_network,
)

__version__ = "0.1.0"
