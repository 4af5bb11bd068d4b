//! Plant-side truth: agent and leader dynamics plus the built-in scenarios.
//!
//! Everything here is invisible to the controller. The simulator is the only
//! component that owns both a [`Scenario`]'s plant and the controller state.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ControllerError, ControllerGains, KnownModel, ModelBounds};
use crate::graph::{Digraph, GraphError};
use crate::ppf::{PerformanceFunction, PpfError, TransformSpec, TransformVariant};

pub const DEFAULT_EXAMPLE1_SEED: u64 = 20_190_417;
pub const DEFAULT_DIVERGENCE_BOUND: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("non-finite {what} passed to the plant")]
    NonFiniteState { what: &'static str },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Ppf(#[from] PpfError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error("unknown builtin scenario '{0}' (expected example1 or example2)")]
    UnknownBuiltin(String),
}

/// Unknown part of an agent's dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlantTruth {
    /// Scalar agent: `coeff * x^power + amplitude * cos(frequency * t)`.
    Polynomial {
        coeff: f64,
        power: i32,
        amplitude: f64,
        frequency: f64,
    },
    /// Three-channel agent with `theta(t) x + f(x, t) + D(t)`, parametrized by
    /// this agent's column of the heterogeneity matrices `a`, `b`, `c`.
    Heterogeneous3 { a: [f64; 3], b: [f64; 3], c: [f64; 3] },
}

impl PlantTruth {
    pub fn state_dim(&self) -> usize {
        match self {
            PlantTruth::Polynomial { .. } => 1,
            PlantTruth::Heterogeneous3 { .. } => 3,
        }
    }

    /// Adds the unknown terms at `(x, t)` to `out`.
    fn add_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        match *self {
            PlantTruth::Polynomial {
                coeff,
                power,
                amplitude,
                frequency,
            } => {
                out[0] += coeff * x[0].powi(power) + amplitude * (frequency * t).cos();
            }
            PlantTruth::Heterogeneous3 { .. } => {
                let th = self.theta_matrix(t);
                let f = self.nonlinearity(x, t);
                let d = self.disturbance(t);
                for r in 0..3 {
                    let thx: f64 = (0..3).map(|col| th[r][col] * x[col]).sum();
                    out[r] += thx + f[r] + d[r];
                }
            }
        }
    }

    /// Time-varying parameter matrix, columns `theta^1..theta^3`.
    pub fn theta_matrix(&self, t: f64) -> [[f64; 3]; 3] {
        match *self {
            PlantTruth::Polynomial { .. } => [[0.0; 3]; 3],
            PlantTruth::Heterogeneous3 { c, .. } => {
                let [c1, c2, c3] = c;
                [
                    [
                        3.0 * c1 * (0.5 * t).sin(),
                        2.0 * c1 * (0.4 * c1 * t).sin() * (0.3 * t).cos(),
                        0.7 * (0.2 * c1 * t).sin(),
                    ],
                    [
                        0.9 * (0.2 * c2 * t).sin(),
                        2.5 * (0.3 * c2 * t).sin() + 0.3 * t.cos(),
                        1.0 * (0.1 * c2 * t).sin(),
                    ],
                    [
                        0.5 * (0.13 * c3 * t).sin(),
                        0.6 * c3 * (0.15 * t).cos(),
                        1.5 * (0.7 * c3 * t).cos() + 1.6 * c3 * (0.3 * t).sin(),
                    ],
                ]
            }
        }
    }

    fn nonlinearity(&self, x: &[f64], t: f64) -> [f64; 3] {
        match *self {
            PlantTruth::Polynomial { .. } => [0.0; 3],
            PlantTruth::Heterogeneous3 { a, .. } => {
                let [a1, a2, a3] = a;
                let (x1, x2, x3) = (x[0], x[1], x[2]);
                [
                    a1 * x3 * x1 + 0.2 * (x1 * a1).sin(),
                    -a2 * x1 * x3 - 0.2 * a2 * (a2 * x3 * t).cos() * x1,
                    a3 * x1 * x2,
                ]
            }
        }
    }

    fn disturbance(&self, t: f64) -> [f64; 3] {
        match *self {
            PlantTruth::Polynomial { .. } => [0.0; 3],
            PlantTruth::Heterogeneous3 { b, .. } => {
                let [b1, b2, b3] = b;
                [
                    1.0 + b1 * (b1 * t).sin(),
                    1.2 * (b2 * t).cos(),
                    (0.5 * b3 * t).sin() + (b3 * t).cos() - 1.0,
                ]
            }
        }
    }
}

/// One agent: known `(A_m, B_m)` plus the unknown plant terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentModel {
    pub a_m: Vec<Vec<f64>>,
    pub b_m: Vec<Vec<f64>>,
    pub plant: PlantTruth,
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}

impl AgentModel {
    pub fn state_dim(&self) -> usize {
        self.plant.state_dim()
    }

    /// Controller-visible part of the model.
    pub fn known(&self, agent: usize) -> Result<KnownModel, DynamicsError> {
        let m = self.state_dim();
        for (what, mat) in [("A_m", &self.a_m), ("B_m", &self.b_m)] {
            if mat.len() != m || mat.iter().any(|row| row.len() != m) {
                return Err(DynamicsError::InvalidScenario(format!(
                    "agent {agent}: {what} must be {m}x{m}"
                )));
            }
        }
        Ok(KnownModel::new(
            agent,
            to_matrix(&self.a_m),
            to_matrix(&self.b_m),
        )?)
    }

    /// Writes `A_m x + B_m u + (unknown terms)` into `out` without checks.
    pub(crate) fn derivative_into(&self, x: &[f64], u: &[f64], t: f64, out: &mut [f64]) {
        let m = x.len();
        for r in 0..m {
            let mut acc = 0.0;
            for col in 0..m {
                acc += self.a_m[r][col] * x[col] + self.b_m[r][col] * u[col];
            }
            out[r] = acc;
        }
        self.plant.add_into(x, t, out);
    }

    /// The `(theta, sigma)` pair the estimates should track at `(x, t)`, in the
    /// controller's parametrization `theta ||x||_inf + sigma`.
    pub fn true_parameters(&self, x: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
        let m = self.state_dim();
        match self.plant {
            PlantTruth::Polynomial { .. } => {
                let mut sigma = vec![0.0; m];
                self.plant.add_into(x, t, &mut sigma);
                (vec![0.0; m], sigma)
            }
            PlantTruth::Heterogeneous3 { .. } => {
                let th = self.plant.theta_matrix(t);
                let norm = crate::controller::inf_norm(x);
                let theta = (0..3)
                    .map(|r| {
                        if norm > 0.0 {
                            (0..3).map(|col| th[r][col] * x[col]).sum::<f64>() / norm
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let f = self.plant.nonlinearity(x, t);
                let d = self.plant.disturbance(t);
                (theta, (0..3).map(|r| f[r] + d[r]).collect())
            }
        }
    }
}

/// Right-hand side `x_i' = A_m x + B_m u + f(x, t) + w(t)`.
pub fn agent_derivative(
    model: &AgentModel,
    x: &[f64],
    u: &[f64],
    t: f64,
) -> Result<Vec<f64>, DynamicsError> {
    let m = model.state_dim();
    for (what, v) in [("state", x), ("input", u)] {
        if v.len() != m {
            return Err(DynamicsError::DimensionMismatch {
                what,
                expected: m,
                got: v.len(),
            });
        }
        if v.iter().any(|a| !a.is_finite()) {
            return Err(DynamicsError::NonFiniteState { what });
        }
    }
    if !t.is_finite() {
        return Err(DynamicsError::NonFiniteState { what: "time" });
    }
    let mut out = vec![0.0; m];
    model.derivative_into(x, u, t, &mut out);
    Ok(out)
}

/// Leader trajectory, given in closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LeaderModel {
    Constant { value: Vec<f64> },
    /// `x0_k(t) = amplitude_k cos(frequency_k t)`.
    Cosine {
        amplitude: Vec<f64>,
        frequency: Vec<f64>,
    },
}

impl LeaderModel {
    pub fn state_dim(&self) -> usize {
        match self {
            LeaderModel::Constant { value } => value.len(),
            LeaderModel::Cosine { amplitude, .. } => amplitude.len(),
        }
    }

    pub(crate) fn state_into(&self, t: f64, out: &mut [f64]) {
        match self {
            LeaderModel::Constant { value } => out.copy_from_slice(value),
            LeaderModel::Cosine {
                amplitude,
                frequency,
            } => {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = amplitude[k] * (frequency[k] * t).cos();
                }
            }
        }
    }

    /// Upper bound on `||x0(t)||_inf`.
    pub fn bound(&self) -> f64 {
        match self {
            LeaderModel::Constant { value } => crate::controller::inf_norm(value),
            LeaderModel::Cosine { amplitude, .. } => crate::controller::inf_norm(amplitude),
        }
    }
}

pub fn leader_trajectory(leader: &LeaderModel, t: f64) -> Vec<f64> {
    let mut out = vec![0.0; leader.state_dim()];
    leader.state_into(t, &mut out);
    out
}

/// A complete simulation setup.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    /// Seed that generated any random scenario constants, if any.
    pub seed: Option<u64>,
    pub digraph: Digraph,
    pub agents: Vec<AgentModel>,
    pub leader: LeaderModel,
    /// One envelope per agent channel, agent-major.
    pub performance: Vec<PerformanceFunction>,
    pub transform: TransformSpec,
    pub gains: ControllerGains,
    pub bounds: ModelBounds,
    /// Stacked initial states, agent-major.
    pub x_init: Vec<f64>,
    pub theta_init: Vec<f64>,
    pub sigma_init: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    /// Log every `record_every`-th step.
    pub record_every: usize,
    pub divergence_bound: f64,
}

impl Scenario {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn state_dim(&self) -> usize {
        self.leader.state_dim()
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let n = self.digraph.n_agents();
        let m = self.state_dim();
        let bad = |msg: String| Err(DynamicsError::InvalidScenario(msg));
        if self.agents.len() != n {
            return bad(format!(
                "graph has {n} agents but {} agent models were given",
                self.agents.len()
            ));
        }
        if m == 0 {
            return bad("leader state is empty".into());
        }
        for (i, a) in self.agents.iter().enumerate() {
            if a.state_dim() != m {
                return bad(format!(
                    "agent {i} has state dimension {} but the leader has {m}",
                    a.state_dim()
                ));
            }
            a.known(i)?;
        }
        if let LeaderModel::Cosine {
            amplitude,
            frequency,
        } = &self.leader
        {
            if amplitude.len() != frequency.len() {
                return bad("leader amplitude and frequency lengths differ".into());
            }
        }
        for (what, len, want) in [
            ("performance", self.performance.len(), n * m),
            ("initial.x", self.x_init.len(), n * m),
            ("initial.theta_hat", self.theta_init.len(), n * m),
            ("initial.sigma_hat", self.sigma_init.len(), n * m),
            ("gains.gamma", self.gains.gamma.len(), n),
        ] {
            if len != want {
                return bad(format!("{what} has {len} entries, expected {want}"));
            }
        }
        if self.x_init.iter().any(|v| !v.is_finite()) {
            return bad("initial state is not finite".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("sim.dt = {} must be positive", self.dt));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return bad(format!("sim.horizon = {} must be nonnegative", self.horizon));
        }
        if self.record_every == 0 {
            return bad("sim.record_every must be at least 1".into());
        }
        if !(self.divergence_bound > 0.0) {
            return bad("sim.divergence_bound must be positive".into());
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Five scalar agents on a bidirectional ring pinned at agent 3, tracking the constant 2.
pub fn scenario_example1() -> Scenario {
    scenario_example1_seeded(DEFAULT_EXAMPLE1_SEED)
}

/// [`scenario_example1`] with disturbance amplitudes drawn from `seed`.
pub fn scenario_example1_seeded(seed: u64) -> Scenario {
    let n = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let powers = [3, 2, 4, 1, 5];
    let agents = powers
        .iter()
        .map(|&power| AgentModel {
            a_m: vec![vec![0.0]],
            b_m: vec![vec![1.0]],
            plant: PlantTruth::Polynomial {
                coeff: 1.0,
                power,
                amplitude: rng.random_range(0.0..=1.0),
                frequency: 1.0,
            },
        })
        .collect();
    let digraph = Digraph::bidirectional_ring(n, &[0.0, 0.0, 1.0, 0.0, 0.0])
        .expect("ring topology is valid");
    let pf = PerformanceFunction::new(7.0, 0.05, 7.0).expect("valid envelope");
    Scenario {
        name: "example1".into(),
        seed: Some(seed),
        digraph,
        agents,
        leader: LeaderModel::Constant { value: vec![2.0] },
        performance: vec![pf; n],
        transform: TransformSpec::new(7.0, 1.0, TransformVariant::ErfSmoothed, 20.0)
            .expect("valid transform"),
        gains: ControllerGains::new(100.0, 0.8, vec![150.0; n]).expect("valid gains"),
        bounds: ModelBounds {
            x_m: 2.0,
            theta_m: 1.0,
            sigma_m: 1.0,
            d_theta: 1.0,
            d_sigma: 1.0,
            f_m: 1.0,
        },
        x_init: vec![0.8230, -0.9001, -2.5351, -1.4567, -0.7553],
        theta_init: vec![0.0; n],
        sigma_init: vec![0.0; n],
        horizon: 10.0,
        dt: 1e-4,
        record_every: 1,
        divergence_bound: DEFAULT_DIVERGENCE_BOUND,
    }
}

/// Heterogeneity matrix `a`, indexed `[channel][agent]`.
pub const EXAMPLE2_A: [[f64; 5]; 3] = [
    [1.5, 0.5, 0.7, 1.3, 0.7],
    [0.5, 1.4, 0.1, 1.3, 2.4],
    [2.8, 1.4, 0.6, 0.7, 0.6],
];
/// Heterogeneity matrix `b`, indexed `[channel][agent]`.
pub const EXAMPLE2_B: [[f64; 5]; 3] = [
    [0.5, 1.5, 1.1, 1.6, 0.3],
    [0.7, 1.2, 1.3, 0.5, 0.3],
    [1.1, 1.4, 1.6, 0.6, 1.0],
];
/// Heterogeneity matrix `c`, indexed `[channel][agent]`.
pub const EXAMPLE2_C: [[f64; 5]; 3] = [
    [1.5, 2.5, 0.5, 1.7, 0.7],
    [0.5, 1.7, 1.1, 0.3, 0.4],
    [0.8, 0.4, 2.2, 0.9, 1.4],
];

/// Five three-channel agents on the same ring, tracking a cosine leader.
///
/// Agent `j` uses column `j` of the `a`, `b`, `c` matrices. The initial state is
/// read agent-major: agent 1 takes the first three printed values.
pub fn scenario_example2() -> Scenario {
    let n = 5;
    let m = 3;
    let col = |mat: &[[f64; 5]; 3], j: usize| [mat[0][j], mat[1][j], mat[2][j]];
    let a_m = vec![
        vec![-20.0, 22.0, 0.0],
        vec![0.0, 15.0, 0.0],
        vec![0.0, 0.0, -3.0],
    ];
    let b_m = vec![
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
    ];
    let agents = (0..n)
        .map(|j| AgentModel {
            a_m: a_m.clone(),
            b_m: b_m.clone(),
            plant: PlantTruth::Heterogeneous3 {
                a: col(&EXAMPLE2_A, j),
                b: col(&EXAMPLE2_B, j),
                c: col(&EXAMPLE2_C, j),
            },
        })
        .collect();
    let digraph = Digraph::bidirectional_ring(n, &[0.0, 0.0, 1.0, 0.0, 0.0])
        .expect("ring topology is valid");
    let pf = PerformanceFunction::new(7.0, 0.05, 7.0).expect("valid envelope");
    Scenario {
        name: "example2".into(),
        seed: None,
        digraph,
        agents,
        leader: LeaderModel::Cosine {
            amplitude: vec![3.0, 2.0, 1.5],
            frequency: vec![0.7, 0.8, 1.0],
        },
        performance: vec![pf; n * m],
        transform: TransformSpec::new(7.0, 1.0, TransformVariant::ErfSmoothed, 50.0)
            .expect("valid transform"),
        gains: ControllerGains::new(100.0, 0.8, vec![150.0; n]).expect("valid gains"),
        bounds: ModelBounds {
            x_m: 3.0,
            theta_m: 1.0,
            sigma_m: 1.0,
            d_theta: 1.0,
            d_sigma: 1.0,
            f_m: 1.0,
        },
        x_init: vec![
            1.6399, 1.6639, -2.1864, 0.1160, -2.7805, -2.2175, -0.1489, 2.2989, -1.3038, 0.5571,
            -0.5959, 1.6760, -2.4743, 0.0488, 0.8288,
        ],
        theta_init: vec![0.0; n * m],
        sigma_init: vec![0.0; n * m],
        horizon: 10.0,
        dt: 5e-5,
        record_every: 10,
        divergence_bound: DEFAULT_DIVERGENCE_BOUND,
    }
}

pub const BUILTIN_NAMES: [&str; 2] = ["example1", "example2"];

pub fn builtin(name: &str) -> Result<Scenario, DynamicsError> {
    match name {
        "example1" => Ok(scenario_example1()),
        "example2" => Ok(scenario_example2()),
        other => Err(DynamicsError::UnknownBuiltin(other.to_string())),
    }
}

/// Largest `max_ij |theta_ij(t)|` over `[0, horizon]` sampled every `step`.
pub fn theta_sup_on_grid(plant: &PlantTruth, horizon: f64, step: f64) -> f64 {
    let n = (horizon / step).ceil() as usize;
    (0..=n)
        .map(|k| {
            let th = plant.theta_matrix(k as f64 * step);
            th.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs()))
        })
        .fold(0.0, f64::max)
}
