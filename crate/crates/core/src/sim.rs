//! Fixed-step RK4 simulation of the closed loop.
//!
//! Each derivative evaluation runs the whole controller pipeline in order:
//! synchronization error, envelope, transform factor, transformed error,
//! control input, estimate derivatives, and finally the plant.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{
    adaptive_derivatives_into, check_gain_conditions, control_signal_into, GainReport, KnownModel,
};
use crate::dynamics::{DynamicsError, Scenario};
use crate::graph::{build_matrices, GraphError, GraphMatrices};
use crate::ppf::{evaluate_clamped, ErrorSign, TransformVariant};

/// Maximum number of individual violation events kept in a [`SimRun`].
pub const MAX_STORED_VIOLATIONS: usize = 10_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] DynamicsError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("simulation diverged at t = {t}")]
    Diverged { t: f64, partial: Box<SimRun> },
    #[error("run has {points} logged points, need at least 2")]
    TooShort { points: usize },
    #[error("tail fraction {0} must lie in (0, 1]")]
    InvalidTailFraction(f64),
}

/// Row-major time series with a fixed number of columns.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    width: usize,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn new(width: usize) -> Self {
        Trajectory {
            width,
            data: Vec::new(),
        }
    }

    pub fn from_rows(width: usize, rows: &[Vec<f64>]) -> Self {
        let mut t = Trajectory::new(width);
        for r in rows {
            t.push(r);
        }
        t
    }

    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.width, "trajectory row width");
        self.data.extend_from_slice(row);
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.width).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.width..(k + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.width.max(1))
    }

    pub fn last(&self) -> Option<&[f64]> {
        self.len().checked_sub(1).map(|k| self.row(k))
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows().map(move |r| r[j])
    }
}

/// The normalized error reached the admissible boundary and was clamped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolationEvent {
    /// Start of the step in which the clamp happened.
    pub t: f64,
    pub agent: usize,
    pub channel: usize,
    /// `e / rho` before clamping.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRun {
    pub scenario_name: String,
    pub seed: Option<u64>,
    pub variant: TransformVariant,
    pub n_agents: usize,
    pub state_dim: usize,
    pub dt: f64,
    pub horizon: f64,
    pub record_every: usize,
    pub t_grid: Vec<f64>,
    pub states: Trajectory,
    pub leader: Trajectory,
    pub theta_hat: Trajectory,
    pub sigma_hat: Trajectory,
    pub controls: Trajectory,
    pub errors: Trajectory,
    pub transformed: Trajectory,
    pub rho_values: Trajectory,
    /// Diagnostic only: needs the plant's true parameters.
    pub lyapunov: Vec<f64>,
    pub violations: Vec<ViolationEvent>,
    /// Total clamp events, including those not stored in `violations`.
    pub violation_count: usize,
    /// `(step, channel)` pairs, over every step and not only logged ones, where
    /// the error sat outside its envelope.
    pub envelope_breaches: usize,
    /// Per-channel `delta_hi * rho_inf`.
    pub tail_bounds: Vec<f64>,
    pub gain_report: GainReport,
    pub completed: bool,
    pub divergence_time: Option<f64>,
}

/// Chattering measure of the control signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatterMetric {
    pub total_variation_per_channel: Vec<f64>,
    pub max_step_jump: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateReport {
    pub tail_fraction: f64,
    pub window_start: f64,
    /// Per channel `max |e|` over the tail window.
    pub max_abs_error: Vec<f64>,
    /// Per channel `max |x - x0|` over the tail window.
    pub max_abs_tracking: Vec<f64>,
    /// Per channel `delta_hi * rho_inf`.
    pub bound: Vec<f64>,
    pub within_bound: bool,
}

/// Integrator state.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub x: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub sigma_hat: Vec<f64>,
}

/// Pipeline outputs at the start of a step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub errors: Vec<f64>,
    pub transformed: Vec<f64>,
    pub controls: Vec<f64>,
    pub rho: Vec<f64>,
    pub violations: Vec<ViolationEvent>,
}

#[derive(Debug, Clone)]
struct Workspace {
    x0: Vec<f64>,
    xt: Vec<f64>,
    e: Vec<f64>,
    eps: Vec<f64>,
    r: Vec<f64>,
    rho: Vec<f64>,
    u: Vec<f64>,
    clamped: Vec<bool>,
    ratio: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Deriv {
    dx: Vec<f64>,
    dth: Vec<f64>,
    dsg: Vec<f64>,
}

impl Deriv {
    fn zeros(len: usize) -> Self {
        Deriv {
            dx: vec![0.0; len],
            dth: vec![0.0; len],
            dsg: vec![0.0; len],
        }
    }
}

/// A scenario prepared for integration.
#[derive(Debug, Clone)]
pub struct Simulator {
    scenario: Scenario,
    gm: GraphMatrices,
    known: Vec<KnownModel>,
    gain_report: GainReport,
    frozen: Vec<Option<ErrorSign>>,
    n: usize,
    m: usize,
}

impl Simulator {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let gm = build_matrices(&scenario.digraph)?;
        let known = scenario
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| a.known(i))
            .collect::<Result<Vec<_>, _>>()?;
        let gain_report = check_gain_conditions(
            &gm,
            &scenario.gains,
            &scenario.bounds,
            scenario.digraph.adjacency(),
        );
        let n = scenario.n_agents();
        let m = scenario.state_dim();
        let mut sim = Simulator {
            scenario,
            gm,
            known,
            gain_report,
            frozen: vec![None; n * m],
            n,
            m,
        };
        if sim.scenario.transform.variant() == TransformVariant::InitialSign {
            let mut ws = sim.workspace();
            sim.errors_into(0.0, &sim.scenario.x_init, &mut ws);
            sim.frozen = ws.e.iter().map(|&e| Some(ErrorSign::of(e))).collect();
        }
        Ok(sim)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn graph_matrices(&self) -> &GraphMatrices {
        &self.gm
    }

    pub fn gain_report(&self) -> &GainReport {
        &self.gain_report
    }

    /// Branch signs fixed from `e(0)`; only populated for `InitialSign`.
    pub fn frozen_signs(&self) -> &[Option<ErrorSign>] {
        &self.frozen
    }

    pub fn initial_state(&self) -> SimState {
        SimState {
            t: 0.0,
            x: self.scenario.x_init.clone(),
            theta_hat: self.scenario.theta_init.clone(),
            sigma_hat: self.scenario.sigma_init.clone(),
        }
    }

    fn workspace(&self) -> Workspace {
        let len = self.n * self.m;
        Workspace {
            x0: vec![0.0; self.m],
            xt: vec![0.0; len],
            e: vec![0.0; len],
            eps: vec![0.0; len],
            r: vec![0.0; len],
            rho: vec![0.0; len],
            u: vec![0.0; len],
            clamped: vec![false; len],
            ratio: vec![0.0; len],
        }
    }

    fn errors_into(&self, t: f64, x: &[f64], ws: &mut Workspace) {
        self.scenario.leader.state_into(t, &mut ws.x0);
        for (k, xt) in ws.xt.iter_mut().enumerate() {
            *xt = x[k] - ws.x0[k % self.m];
        }
        self.gm.global_error_into(x, &ws.x0, &mut ws.e);
    }

    /// Full pipeline at `(t, x, theta_hat, sigma_hat)`.
    fn evaluate(
        &self,
        t: f64,
        x: &[f64],
        th: &[f64],
        sg: &[f64],
        ws: &mut Workspace,
        out: &mut Deriv,
    ) {
        let (n, m) = (self.n, self.m);
        let spec = &self.scenario.transform;
        let gains = &self.scenario.gains;
        self.errors_into(t, x, ws);
        for k in 0..n * m {
            let rho = self.scenario.performance[k].rho_at(t);
            let tr = evaluate_clamped(spec, ws.e[k], rho, self.frozen[k]);
            ws.rho[k] = rho;
            ws.eps[k] = tr.eps;
            ws.r[k] = tr.r;
            ws.clamped[k] = tr.clamped;
            ws.ratio[k] = ws.e[k] / rho;
        }
        for i in 0..n {
            let s = i * m..(i + 1) * m;
            control_signal_into(
                &self.known[i],
                &ws.eps[s.clone()],
                &ws.xt[s.clone()],
                &x[s.clone()],
                &th[s.clone()],
                &sg[s.clone()],
                gains.c,
                &mut ws.u[s.clone()],
            );
            adaptive_derivatives_into(
                &ws.eps[s.clone()],
                &x[s.clone()],
                self.gm.p(i) * self.gm.d_plus_b(i),
                &ws.r[s.clone()],
                &th[s.clone()],
                &sg[s.clone()],
                gains.gamma[i],
                gains.k,
                &mut out.dth[s.clone()],
                &mut out.dsg[s.clone()],
            );
            self.scenario.agents[i].derivative_into(
                &x[s.clone()],
                &ws.u[s.clone()],
                t,
                &mut out.dx[s],
            );
        }
    }

    /// One RK4 step from `state`; `k1` must already hold the derivative at `state`.
    #[allow(clippy::too_many_arguments)]
    fn rk4_advance(
        &self,
        state: &mut SimState,
        dt: f64,
        k1: &Deriv,
        ws: &mut Workspace,
        stage: &mut SimState,
        k: &mut [Deriv; 3],
        clamped_any: &mut [Option<f64>],
    ) {
        let len = state.x.len();
        let coeffs = [0.5 * dt, 0.5 * dt, dt];
        for s in 0..3 {
            let prev = if s == 0 { k1 } else { &k[s - 1] };
            let h = coeffs[s];
            for j in 0..len {
                stage.x[j] = state.x[j] + h * prev.dx[j];
                stage.theta_hat[j] = state.theta_hat[j] + h * prev.dth[j];
                stage.sigma_hat[j] = state.sigma_hat[j] + h * prev.dsg[j];
            }
            let ts = state.t + h;
            self.evaluate(ts, &stage.x, &stage.theta_hat, &stage.sigma_hat, ws, &mut k[s]);
            for (j, c) in ws.clamped.iter().enumerate() {
                if *c && clamped_any[j].is_none() {
                    clamped_any[j] = Some(ws.ratio[j]);
                }
            }
        }
        let w = dt / 6.0;
        for j in 0..len {
            state.x[j] += w * (k1.dx[j] + 2.0 * k[0].dx[j] + 2.0 * k[1].dx[j] + k[2].dx[j]);
            state.theta_hat[j] +=
                w * (k1.dth[j] + 2.0 * k[0].dth[j] + 2.0 * k[1].dth[j] + k[2].dth[j]);
            state.sigma_hat[j] +=
                w * (k1.dsg[j] + 2.0 * k[0].dsg[j] + 2.0 * k[1].dsg[j] + k[2].dsg[j]);
        }
    }

    /// One RK4 step of the coupled plant and estimate dynamics.
    ///
    /// The returned log holds the pipeline values at the start of the step and
    /// every clamp that occurred in any of its four stages.
    pub fn step(&self, state: &SimState, dt: f64) -> Result<(SimState, StepLog), SimError> {
        let len = self.n * self.m;
        let mut ws = self.workspace();
        let mut k1 = Deriv::zeros(len);
        self.evaluate(state.t, &state.x, &state.theta_hat, &state.sigma_hat, &mut ws, &mut k1);
        let mut clamped_any: Vec<Option<f64>> = ws
            .clamped
            .iter()
            .zip(&ws.ratio)
            .map(|(&c, &r)| c.then_some(r))
            .collect();
        let log_e = ws.e.clone();
        let log_eps = ws.eps.clone();
        let log_u = ws.u.clone();
        let log_rho = ws.rho.clone();
        let mut next = state.clone();
        let mut stage = state.clone();
        let mut k = [Deriv::zeros(len), Deriv::zeros(len), Deriv::zeros(len)];
        self.rk4_advance(&mut next, dt, &k1, &mut ws, &mut stage, &mut k, &mut clamped_any);
        next.t = state.t + dt;
        let violations = self.collect_violations(state.t, &clamped_any);
        if let Some(t) = self.diverged(&next) {
            let mut partial = self.empty_run();
            partial.completed = false;
            partial.divergence_time = Some(t);
            return Err(SimError::Diverged {
                t,
                partial: Box::new(partial),
            });
        }
        Ok((
            next,
            StepLog {
                errors: log_e,
                transformed: log_eps,
                controls: log_u,
                rho: log_rho,
                violations,
            },
        ))
    }

    fn collect_violations(&self, t: f64, clamped_any: &[Option<f64>]) -> Vec<ViolationEvent> {
        clamped_any
            .iter()
            .enumerate()
            .filter_map(|(k, r)| {
                r.map(|ratio| ViolationEvent {
                    t,
                    agent: k / self.m,
                    channel: k % self.m,
                    ratio,
                })
            })
            .collect()
    }

    fn diverged(&self, s: &SimState) -> Option<f64> {
        let bound = self.scenario.divergence_bound;
        let bad = s.x.iter().any(|v| !(v.abs() <= bound))
            || s.theta_hat.iter().any(|v| !v.is_finite())
            || s.sigma_hat.iter().any(|v| !v.is_finite());
        bad.then_some(s.t)
    }

    fn empty_run(&self) -> SimRun {
        let len = self.n * self.m;
        let sc = &self.scenario;
        SimRun {
            scenario_name: sc.name.clone(),
            seed: sc.seed,
            variant: sc.transform.variant(),
            n_agents: self.n,
            state_dim: self.m,
            dt: sc.dt,
            horizon: sc.horizon,
            record_every: sc.record_every,
            t_grid: Vec::new(),
            states: Trajectory::new(len),
            leader: Trajectory::new(self.m),
            theta_hat: Trajectory::new(len),
            sigma_hat: Trajectory::new(len),
            controls: Trajectory::new(len),
            errors: Trajectory::new(len),
            transformed: Trajectory::new(len),
            rho_values: Trajectory::new(len),
            lyapunov: Vec::new(),
            violations: Vec::new(),
            violation_count: 0,
            envelope_breaches: 0,
            tail_bounds: sc
                .performance
                .iter()
                .map(|pf| sc.transform.delta_hi() * pf.rho_inf())
                .collect(),
            gain_report: self.gain_report.clone(),
            completed: false,
            divergence_time: None,
        }
    }

    fn lyapunov(&self, t: f64, state: &SimState, eps: &[f64]) -> f64 {
        let m = self.m;
        let mut v = 0.0;
        for i in 0..self.n {
            let s = i * m..(i + 1) * m;
            let (theta, sigma) = self.scenario.agents[i].true_parameters(&state.x[s.clone()], t);
            let inv_gamma = 1.0 / self.scenario.gains.gamma[i];
            for ch in 0..m {
                let idx = i * m + ch;
                let th = theta[ch] - state.theta_hat[idx];
                let sg = sigma[ch] - state.sigma_hat[idx];
                v += 0.5 * self.gm.p(i) * eps[idx] * eps[idx]
                    + 0.5 * inv_gamma * (th * th + sg * sg);
            }
        }
        v
    }

    /// Integrates over `[0, horizon]`.
    pub fn run(&self) -> Result<SimRun, SimError> {
        let sc = &self.scenario;
        let len = self.n * self.m;
        let dt = sc.dt;
        let n_steps = sc.n_steps();
        let mut run = self.empty_run();
        let mut state = self.initial_state();
        let mut ws = self.workspace();
        let mut k1 = Deriv::zeros(len);
        let mut k = [Deriv::zeros(len), Deriv::zeros(len), Deriv::zeros(len)];
        let mut stage = state.clone();
        let mut clamped_any: Vec<Option<f64>> = vec![None; len];

        for step in 0..=n_steps {
            let t = step as f64 * dt;
            state.t = t;
            self.evaluate(t, &state.x, &state.theta_hat, &state.sigma_hat, &mut ws, &mut k1);

            for j in 0..len {
                let frozen = self.frozen[j];
                if !sc.transform.within_envelope(ws.e[j], ws.rho[j], frozen) {
                    run.envelope_breaches += 1;
                }
            }

            if step % sc.record_every == 0 || step == n_steps {
                run.t_grid.push(t);
                run.states.push(&state.x);
                run.leader.push(&ws.x0);
                run.theta_hat.push(&state.theta_hat);
                run.sigma_hat.push(&state.sigma_hat);
                run.controls.push(&ws.u);
                run.errors.push(&ws.e);
                run.transformed.push(&ws.eps);
                run.rho_values.push(&ws.rho);
                let v = self.lyapunov(t, &state, &ws.eps);
                run.lyapunov.push(v);
            }

            if step == n_steps {
                // Clamps at the final logged point still count.
                for (j, &c) in ws.clamped.iter().enumerate() {
                    if c {
                        clamped_any[j] = Some(ws.ratio[j]);
                    }
                }
                self.push_violations(&mut run, t, &mut clamped_any);
                break;
            }

            for (j, &c) in ws.clamped.iter().enumerate() {
                clamped_any[j] = c.then_some(ws.ratio[j]);
            }
            self.rk4_advance(&mut state, dt, &k1, &mut ws, &mut stage, &mut k, &mut clamped_any);
            self.push_violations(&mut run, t, &mut clamped_any);

            state.t = (step + 1) as f64 * dt;
            if let Some(td) = self.diverged(&state) {
                run.divergence_time = Some(td);
                return Err(SimError::Diverged {
                    t: td,
                    partial: Box::new(run),
                });
            }
        }
        run.completed = true;
        Ok(run)
    }

    fn push_violations(&self, run: &mut SimRun, t: f64, clamped_any: &mut [Option<f64>]) {
        for (j, slot) in clamped_any.iter_mut().enumerate() {
            if let Some(ratio) = slot.take() {
                run.violation_count += 1;
                if run.violations.len() < MAX_STORED_VIOLATIONS {
                    run.violations.push(ViolationEvent {
                        t,
                        agent: j / self.m,
                        channel: j % self.m,
                        ratio,
                    });
                }
            }
        }
    }
}

/// Builds and runs a scenario.
pub fn run(scenario: Scenario) -> Result<SimRun, SimError> {
    Simulator::new(scenario)?.run()
}

/// Per-channel total variation and largest single-step jump of the logged control.
pub fn chattering(run: &SimRun) -> Result<ChatterMetric, SimError> {
    let points = run.controls.len();
    if points < 2 {
        return Err(SimError::TooShort { points });
    }
    let w = run.controls.width();
    let mut tv = vec![0.0; w];
    let mut jump = vec![0.0f64; w];
    for k in 1..points {
        let (a, b) = (run.controls.row(k - 1), run.controls.row(k));
        for j in 0..w {
            let d = (b[j] - a[j]).abs();
            tv[j] += d;
            jump[j] = jump[j].max(d);
        }
    }
    Ok(ChatterMetric {
        total_variation_per_channel: tv,
        max_step_jump: jump,
    })
}

/// Largest `|e|` and `|x - x0|` per channel over the final `tail_fraction` of the run.
pub fn steady_state_report(run: &SimRun, tail_fraction: f64) -> Result<SteadyStateReport, SimError> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(SimError::InvalidTailFraction(tail_fraction));
    }
    let points = run.t_grid.len();
    if points == 0 {
        return Err(SimError::TooShort { points });
    }
    let t0 = run.t_grid[0];
    let t_end = run.t_grid[points - 1];
    let window_start = t_end - tail_fraction * (t_end - t0);
    let w = run.errors.width();
    let m = run.state_dim.max(1);
    let mut max_e = vec![0.0f64; w];
    let mut max_x = vec![0.0f64; w];
    // Tolerate rounding in the window edge.
    let edge = window_start - 1e-9 * run.dt.max(f64::MIN_POSITIVE);
    for (k, &t) in run.t_grid.iter().enumerate() {
        if t < edge {
            continue;
        }
        let (e, x, x0) = (run.errors.row(k), run.states.row(k), run.leader.row(k));
        for j in 0..w {
            max_e[j] = max_e[j].max(e[j].abs());
            max_x[j] = max_x[j].max((x[j] - x0[j % m]).abs());
        }
    }
    let within_bound = max_e.iter().zip(&run.tail_bounds).all(|(e, b)| e <= b);
    Ok(SteadyStateReport {
        tail_fraction,
        window_start,
        max_abs_error: max_e,
        max_abs_tracking: max_x,
        bound: run.tail_bounds.clone(),
        within_bound,
    })
}
