//! Distributed control law, adaptive estimate dynamics, the gain-condition
//! checker and the Lyapunov diagnostic.
//!
//! Nothing in this module sees the plant's true parameters, nonlinearities or
//! disturbances: every input is either a known model matrix, a locally
//! measurable signal, or a controller-owned estimate.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{self, GraphMatrices};

/// Relative tolerance for deciding the `k = c lambda_min(Q) / 2` equality.
pub const GAIN_EQUALITY_RTOL: f64 = 1e-6;

/// Pivot tolerance for inverting `B_m`.
pub const INPUT_MATRIX_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("input matrix B_m of agent {agent} is not invertible")]
    SingularInputMatrix { agent: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid gains: {0}")]
    InvalidGains(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    /// Transformed-error feedback gain.
    pub c: f64,
    /// Sigma-modification leak gain.
    pub k: f64,
    /// Per-agent adaptation rates.
    pub gamma: Vec<f64>,
}

impl ControllerGains {
    pub fn new(c: f64, k: f64, gamma: Vec<f64>) -> Result<Self, ControllerError> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(ControllerError::InvalidGains(format!("c = {c} must be positive")));
        }
        if !(k > 0.0 && k.is_finite()) {
            return Err(ControllerError::InvalidGains(format!("k = {k} must be positive")));
        }
        if let Some((i, g)) = gamma.iter().enumerate().find(|(_, g)| !(**g > 0.0)) {
            return Err(ControllerError::InvalidGains(format!(
                "gamma[{i}] = {g} must be positive"
            )));
        }
        Ok(ControllerGains { c, k, gamma })
    }
}

/// Controller-owned estimates, stacked agent-major (`n * m` entries each).
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveState {
    pub theta_hat: Vec<f64>,
    pub sigma_hat: Vec<f64>,
    state_dim: usize,
}

impl AdaptiveState {
    pub fn zeros(n_agents: usize, state_dim: usize) -> Self {
        AdaptiveState {
            theta_hat: vec![0.0; n_agents * state_dim],
            sigma_hat: vec![0.0; n_agents * state_dim],
            state_dim,
        }
    }

    pub fn from_parts(
        theta_hat: Vec<f64>,
        sigma_hat: Vec<f64>,
        state_dim: usize,
    ) -> Result<Self, ControllerError> {
        if state_dim == 0 || !theta_hat.len().is_multiple_of(state_dim) {
            return Err(ControllerError::DimensionMismatch {
                expected: state_dim,
                got: theta_hat.len(),
            });
        }
        if sigma_hat.len() != theta_hat.len() {
            return Err(ControllerError::DimensionMismatch {
                expected: theta_hat.len(),
                got: sigma_hat.len(),
            });
        }
        Ok(AdaptiveState {
            theta_hat,
            sigma_hat,
            state_dim,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn n_agents(&self) -> usize {
        self.theta_hat.len() / self.state_dim
    }

    pub fn theta(&self, agent: usize) -> &[f64] {
        let m = self.state_dim;
        &self.theta_hat[agent * m..(agent + 1) * m]
    }

    pub fn sigma(&self, agent: usize) -> &[f64] {
        let m = self.state_dim;
        &self.sigma_hat[agent * m..(agent + 1) * m]
    }
}

/// Bounds on the leader and the unknown parameters, used only by the gain checker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelBounds {
    pub x_m: f64,
    pub theta_m: f64,
    pub sigma_m: f64,
    pub d_theta: f64,
    pub d_sigma: f64,
    pub f_m: f64,
}

/// The known part `(A_m, B_m)` of an agent, with `B_m^{-1}` precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct KnownModel {
    a_m: DMatrix<f64>,
    b_m: DMatrix<f64>,
    b_inv: DMatrix<f64>,
}

impl KnownModel {
    pub fn new(agent: usize, a_m: DMatrix<f64>, b_m: DMatrix<f64>) -> Result<Self, ControllerError> {
        let m = a_m.nrows();
        if a_m.ncols() != m || b_m.nrows() != m || b_m.ncols() != m {
            return Err(ControllerError::DimensionMismatch {
                expected: m,
                got: b_m.nrows(),
            });
        }
        let lu = b_m.clone().lu();
        let pivot_min = (0..m).map(|i| lu.u()[(i, i)].abs()).fold(f64::INFINITY, f64::min);
        let scale = b_m.abs().max().max(1.0);
        if !(pivot_min > INPUT_MATRIX_TOL * scale) {
            return Err(ControllerError::SingularInputMatrix { agent });
        }
        let b_inv = lu.try_inverse().ok_or(ControllerError::SingularInputMatrix { agent })?;
        Ok(KnownModel { a_m, b_m, b_inv })
    }

    pub fn scalar(agent: usize, a_m: f64, b_m: f64) -> Result<Self, ControllerError> {
        KnownModel::new(
            agent,
            DMatrix::from_element(1, 1, a_m),
            DMatrix::from_element(1, 1, b_m),
        )
    }

    pub fn state_dim(&self) -> usize {
        self.a_m.nrows()
    }

    pub fn a_m(&self) -> &DMatrix<f64> {
        &self.a_m
    }

    pub fn b_m(&self) -> &DMatrix<f64> {
        &self.b_m
    }
}

/// Infinity norm of an agent state.
pub fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()))
}

/// Control input of agent `agent`:
/// `u = B_m^{-1} (-c eps - A_m x~ - theta_hat ||x||_inf - sigma_hat)`.
pub fn control_signal(
    agent: usize,
    model: &KnownModel,
    eps: &[f64],
    x_tilde: &[f64],
    state: &[f64],
    adaptive: &AdaptiveState,
    gains: &ControllerGains,
) -> Result<Vec<f64>, ControllerError> {
    let m = model.state_dim();
    for len in [eps.len(), x_tilde.len(), state.len(), adaptive.state_dim()] {
        if len != m {
            return Err(ControllerError::DimensionMismatch { expected: m, got: len });
        }
    }
    if agent >= adaptive.n_agents() {
        return Err(ControllerError::DimensionMismatch {
            expected: agent + 1,
            got: adaptive.n_agents(),
        });
    }
    let mut u = vec![0.0; m];
    control_signal_into(
        model,
        eps,
        x_tilde,
        state,
        adaptive.theta(agent),
        adaptive.sigma(agent),
        gains.c,
        &mut u,
    );
    Ok(u)
}

/// Unchecked, non-allocating form of [`control_signal`] used in the integration loop.
#[allow(clippy::too_many_arguments)]
pub(crate) fn control_signal_into(
    model: &KnownModel,
    eps: &[f64],
    x_tilde: &[f64],
    state: &[f64],
    theta_hat: &[f64],
    sigma_hat: &[f64],
    c: f64,
    u: &mut [f64],
) {
    let m = model.state_dim();
    let norm = inf_norm(state);
    let mut v = [0.0; 8];
    let mut v_heap;
    let v: &mut [f64] = if m <= v.len() {
        &mut v[..m]
    } else {
        v_heap = vec![0.0; m];
        &mut v_heap
    };
    for r in 0..m {
        let ax: f64 = (0..m).map(|col| model.a_m[(r, col)] * x_tilde[col]).sum();
        v[r] = -c * eps[r] - ax - theta_hat[r] * norm - sigma_hat[r];
    }
    for (r, ur) in u.iter_mut().enumerate() {
        *ur = (0..m).map(|col| model.b_inv[(r, col)] * v[col]).sum();
    }
}

/// Time derivatives of agent `agent`'s estimates:
///
/// `theta_hat' = Gamma ||x||_inf p r (d + b) eps - k Gamma theta_hat`
/// `sigma_hat' = Gamma p r (d + b) eps - k Gamma sigma_hat`
///
/// with `r` applied per channel. For scalar agents `||x||_inf = |x|`.
#[allow(clippy::too_many_arguments)]
pub fn adaptive_derivatives(
    agent: usize,
    eps: &[f64],
    state: &[f64],
    p_i: f64,
    r_i: &[f64],
    d_i: f64,
    b_i: f64,
    adaptive: &AdaptiveState,
    gains: &ControllerGains,
) -> Result<(Vec<f64>, Vec<f64>), ControllerError> {
    let m = adaptive.state_dim();
    for len in [eps.len(), state.len(), r_i.len()] {
        if len != m {
            return Err(ControllerError::DimensionMismatch { expected: m, got: len });
        }
    }
    let gamma = *gains.gamma.get(agent).ok_or(ControllerError::DimensionMismatch {
        expected: agent + 1,
        got: gains.gamma.len(),
    })?;
    let mut dtheta = vec![0.0; m];
    let mut dsigma = vec![0.0; m];
    adaptive_derivatives_into(
        eps,
        state,
        p_i * (d_i + b_i),
        r_i,
        adaptive.theta(agent),
        adaptive.sigma(agent),
        gamma,
        gains.k,
        &mut dtheta,
        &mut dsigma,
    );
    Ok((dtheta, dsigma))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn adaptive_derivatives_into(
    eps: &[f64],
    state: &[f64],
    p_db: f64,
    r_i: &[f64],
    theta_hat: &[f64],
    sigma_hat: &[f64],
    gamma: f64,
    k: f64,
    dtheta: &mut [f64],
    dsigma: &mut [f64],
) {
    let norm = inf_norm(state);
    for ch in 0..eps.len() {
        let drive = gamma * eps[ch] * p_db * r_i[ch];
        dtheta[ch] = drive * norm - k * gamma * theta_hat[ch];
        dsigma[ch] = drive - k * gamma * sigma_hat[ch];
    }
}

/// Outcome of checking the stability gain conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub lambda_min_q: f64,
    pub lambda_max_p: f64,
    /// Largest singular value of the adjacency matrix.
    pub lambda_max_a: f64,
    pub c: f64,
    pub k: f64,
    /// `c lambda_min(Q) / 2`.
    pub recommended_k: f64,
    /// `k == c lambda_min(Q) / 2` within [`GAIN_EQUALITY_RTOL`].
    pub k_condition_holds: bool,
    /// `c lambda_min(Q)`.
    pub c_condition_lhs: f64,
    /// `(x_M + 1) lambda_max(P) lambda_max(A) / 2`.
    pub c_condition_rhs: f64,
    pub c_condition_holds: bool,
}

pub fn check_gain_conditions(
    gm: &GraphMatrices,
    gains: &ControllerGains,
    bounds: &ModelBounds,
    adjacency: &DMatrix<f64>,
) -> GainReport {
    let lambda_min_q = graph::min_eigenvalue(&gm.q_matrix);
    let lambda_max_p = gm.p_matrix.diagonal().max();
    let lambda_max_a = graph::max_singular_value(adjacency);
    let recommended_k = gains.c * lambda_min_q / 2.0;
    let k_condition_holds =
        (gains.k - recommended_k).abs() <= GAIN_EQUALITY_RTOL * recommended_k.abs();
    let c_condition_lhs = gains.c * lambda_min_q;
    let c_condition_rhs = 0.5 * (bounds.x_m + 1.0) * lambda_max_p * lambda_max_a;
    GainReport {
        lambda_min_q,
        lambda_max_p,
        lambda_max_a,
        c: gains.c,
        k: gains.k,
        recommended_k,
        k_condition_holds,
        c_condition_lhs,
        c_condition_rhs,
        c_condition_holds: c_condition_lhs > c_condition_rhs,
    }
}

/// `V = 1/2 eps^T (P ⊗ I) eps + 1/2 theta~^T Gamma^{-1} theta~ + 1/2 sigma~^T Gamma^{-1} sigma~`.
///
/// `true_theta` / `true_sigma` come from the plant side; only the simulator
/// owns both and calls this as a diagnostic.
pub fn lyapunov_value(
    eps: &[f64],
    adaptive: &AdaptiveState,
    true_theta: &[f64],
    true_sigma: &[f64],
    gm: &GraphMatrices,
    gains: &ControllerGains,
) -> Result<f64, ControllerError> {
    let m = adaptive.state_dim();
    let n = gm.n_agents();
    for len in [eps.len(), adaptive.theta_hat.len(), true_theta.len(), true_sigma.len()] {
        if len != n * m {
            return Err(ControllerError::DimensionMismatch {
                expected: n * m,
                got: len,
            });
        }
    }
    if gains.gamma.len() != n {
        return Err(ControllerError::DimensionMismatch {
            expected: n,
            got: gains.gamma.len(),
        });
    }
    let mut v = 0.0;
    for i in 0..n {
        let inv_gamma = 1.0 / gains.gamma[i];
        for ch in 0..m {
            let idx = i * m + ch;
            let th = true_theta[idx] - adaptive.theta_hat[idx];
            let sg = true_sigma[idx] - adaptive.sigma_hat[idx];
            v += 0.5 * gm.p(i) * eps[idx] * eps[idx] + 0.5 * inv_gamma * (th * th + sg * sg);
        }
    }
    Ok(v)
}
