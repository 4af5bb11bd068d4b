//! Distributed adaptive synchronization of unknown nonlinear agents under
//! prescribed performance constraints.
//!
//! Graph convention: `a_ij > 0` means agent `i` receives information from agent `j`.
//! Multi-channel vectors are stacked agent-major: entry `i * m + ch` is channel
//! `ch` of agent `i`.

pub mod config;
pub mod controller;
pub mod dynamics;
pub mod export;
pub mod graph;
pub mod ppf;
pub mod sim;

pub use config::{load_scenario, ConfigError, Override, ScenarioFile};
pub use controller::{
    adaptive_derivatives, check_gain_conditions, control_signal, lyapunov_value, AdaptiveState,
    ControllerError, ControllerGains, GainReport, KnownModel, ModelBounds,
};
pub use dynamics::{
    agent_derivative, builtin, leader_trajectory, scenario_example1, scenario_example1_seeded,
    scenario_example2, AgentModel, DynamicsError, LeaderModel, PlantTruth, Scenario,
};
pub use export::RunReport;
pub use graph::{
    build_matrices, global_error, is_strongly_connected, weighted_q_matrix, Digraph, GraphError,
    GraphMatrices,
};
pub use ppf::{
    erf, r_factor, smooth_s, transform, PerformanceFunction, PpfError, TransformSpec,
    TransformVariant,
};
pub use sim::{
    chattering, steady_state_report, ChatterMetric, SimError, SimRun, SimState, Simulator,
    SteadyStateReport, Trajectory,
};
