//! Message tracing, β-driven grouping, and the variance/time bit-width
//! assigner.

mod assigner;
mod group;
mod plan;
mod solver;
mod stats;
mod variance;

pub use assigner::{reassignment_round, solve_instance, AssignerConfig, InstanceSolution};
pub use group::{group_and_order, MessageGroup};
pub use plan::{BitWidthPlan, GroupPlan, InstancePlan, PairPlan, PlanLayout};
pub use solver::{
    brute_force_assignment, evaluate, solve_assignment, Assignment, AssignmentProblem, GroupSpec,
    Objective, PairGroups, BRUTE_FORCE_MAX_GROUPS,
};
pub use stats::{
    compute_beta, Direction, InstanceKey, InstanceStats, MessageStat, PairStats, TraceStats,
};
pub use variance::{message_variance, remote_edges, variance_bound_q, NormBounds, RemoteEdge};
