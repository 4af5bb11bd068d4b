//! Trajectory CSV, run report and phase-plane export.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::controller::GainReport;
use crate::sim::{chattering, steady_state_report, ChatterMetric, SimRun, SteadyStateReport, ViolationEvent};

/// Number of `#` metadata lines preceding the CSV column header.
pub const CSV_HEADER_LINES: usize = 8;

/// Violation events copied into a report.
pub const REPORT_VIOLATION_LIMIT: usize = 100;

pub const DEFAULT_TAIL_FRACTION: f64 = 0.2;

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn channel_names(prefix: &str, n: usize, m: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).flat_map(move |i| {
        (0..m).map(move |ch| {
            if m == 1 {
                format!("{prefix}_{}", i + 1)
            } else {
                format!("{prefix}_{}_{}", i + 1, ch + 1)
            }
        })
    })
}

fn status(run: &SimRun) -> String {
    match run.divergence_time {
        Some(t) => format!("diverged at t = {}", num(t)),
        None if run.completed => "completed".into(),
        None => "incomplete".into(),
    }
}

pub fn csv_metadata(run: &SimRun) -> [String; CSV_HEADER_LINES] {
    [
        "# ppsync trajectory".into(),
        format!("# scenario: {}", run.scenario_name),
        format!(
            "# seed: {}",
            run.seed.map_or_else(|| "none".into(), |s| s.to_string())
        ),
        format!("# variant: {}", run.variant.as_str()),
        format!("# agents: {}, state_dim: {}", run.n_agents, run.state_dim),
        format!(
            "# dt: {}, horizon: {}, record_every: {}",
            num(run.dt),
            num(run.horizon),
            run.record_every
        ),
        format!(
            "# status: {}, violations: {}",
            status(run),
            run.violation_count
        ),
        "# V is a diagnostic computed from plant truth; the controller never sees it".into(),
    ]
}

pub fn csv_columns(run: &SimRun) -> Vec<String> {
    let (n, m) = (run.n_agents, run.state_dim);
    let mut cols = vec!["t".to_string()];
    for prefix in ["x", "u", "e", "eps", "rho"] {
        cols.extend(channel_names(prefix, n, m));
    }
    cols.push("V".into());
    cols
}

/// Wide CSV: `t`, then `x`, `u`, `e`, `eps`, `rho` for every agent channel, then `V`.
pub fn write_trajectory_csv<W: Write>(run: &SimRun, mut w: W) -> io::Result<()> {
    for line in csv_metadata(run) {
        writeln!(w, "{line}")?;
    }
    writeln!(w, "{}", csv_columns(run).join(","))?;
    let mut line = String::new();
    for (k, &t) in run.t_grid.iter().enumerate() {
        line.clear();
        line.push_str(&num(t));
        for traj in [
            &run.states,
            &run.controls,
            &run.errors,
            &run.transformed,
            &run.rho_values,
        ] {
            for &v in traj.row(k) {
                line.push(',');
                line.push_str(&num(v));
            }
        }
        line.push(',');
        line.push_str(&num(run.lyapunov[k]));
        writeln!(w, "{line}")?;
    }
    w.flush()
}

/// State-space trajectory for phase-plane plots: `t`, every `x`, then the leader.
pub fn write_phase_plane_csv<W: Write>(run: &SimRun, label: &str, mut w: W) -> io::Result<()> {
    let mut meta = csv_metadata(run);
    meta[0] = format!("# ppsync phase plane: {label}");
    for line in meta {
        writeln!(w, "{line}")?;
    }
    let mut cols = vec!["t".to_string()];
    cols.extend(channel_names("x", run.n_agents, run.state_dim));
    cols.extend((0..run.state_dim).map(|ch| format!("x0_{}", ch + 1)));
    writeln!(w, "{}", cols.join(","))?;
    for (k, &t) in run.t_grid.iter().enumerate() {
        let mut fields = vec![num(t)];
        fields.extend(run.states.row(k).iter().map(|&v| num(v)));
        fields.extend(run.leader.row(k).iter().map(|&v| num(v)));
        writeln!(w, "{}", fields.join(","))?;
    }
    w.flush()
}

/// Structured summary of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: Option<u64>,
    pub variant: String,
    pub status: String,
    pub completed: bool,
    pub divergence_time: Option<f64>,
    pub dt: f64,
    pub horizon: f64,
    pub logged_points: usize,
    pub gain_conditions: GainReport,
    pub violation_count: usize,
    pub violations: Vec<ViolationEvent>,
    pub envelope_breaches: usize,
    pub chatter: Option<ChatterMetric>,
    pub steady_state: Option<SteadyStateReport>,
    pub final_state: Vec<f64>,
    /// Fields derived from plant truth, unavailable to the controller.
    pub diagnostic_only: Vec<String>,
    pub lyapunov_initial: Option<f64>,
    pub lyapunov_max: Option<f64>,
    pub lyapunov_tail_mean: Option<f64>,
}

impl RunReport {
    pub fn from_run(run: &SimRun, tail_fraction: f64) -> Self {
        let lyap_tail = steady_state_report(run, tail_fraction).ok().and_then(|s| {
            let vals: Vec<f64> = run
                .t_grid
                .iter()
                .zip(&run.lyapunov)
                .filter(|(t, _)| **t >= s.window_start)
                .map(|(_, v)| *v)
                .collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        });
        RunReport {
            scenario: run.scenario_name.clone(),
            seed: run.seed,
            variant: run.variant.as_str().into(),
            status: status(run),
            completed: run.completed,
            divergence_time: run.divergence_time,
            dt: run.dt,
            horizon: run.horizon,
            logged_points: run.t_grid.len(),
            gain_conditions: run.gain_report.clone(),
            violation_count: run.violation_count,
            violations: run
                .violations
                .iter()
                .take(REPORT_VIOLATION_LIMIT)
                .copied()
                .collect(),
            envelope_breaches: run.envelope_breaches,
            chatter: chattering(run).ok(),
            steady_state: steady_state_report(run, tail_fraction).ok(),
            final_state: run.states.last().map(<[f64]>::to_vec).unwrap_or_default(),
            diagnostic_only: vec![
                "lyapunov_initial".into(),
                "lyapunov_max".into(),
                "lyapunov_tail_mean".into(),
            ],
            lyapunov_initial: run.lyapunov.first().copied(),
            lyapunov_max: run.lyapunov.iter().copied().reduce(f64::max),
            lyapunov_tail_mean: lyap_tail,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Plain-text recipe mapping CSV columns to the usual figures.
pub fn plot_script(run: &SimRun, csv_name: &str) -> String {
    let (n, m) = (run.n_agents, run.state_dim);
    let group = |p: &str| channel_names(p, n, m).collect::<Vec<_>>().join(", ");
    format!(
        "# Plot recipe for {csv_name}\n\
         # Skip the first {CSV_HEADER_LINES} lines (metadata starting with '#'); the next line holds column names.\n\
         # x-axis for every panel: t\n\
         states:            {}\n\
         control inputs:    {}\n\
         sync errors:       {}\n\
         envelope:          +/- (delta_hi or delta_lo) * [{}]\n\
         transformed error: {}\n\
         lyapunov (diag):   V\n",
        group("x"),
        group("u"),
        group("e"),
        group("rho"),
        group("eps"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::scenario_example2;
    use crate::sim::run;

    fn short_run() -> SimRun {
        let mut sc = scenario_example2();
        sc.horizon = 0.01;
        sc.record_every = 20;
        run(sc).unwrap()
    }

    #[test]
    fn csv_shape() {
        let r = short_run();
        let mut buf = Vec::new();
        write_trajectory_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[..CSV_HEADER_LINES].iter().all(|l| l.starts_with('#')));
        let cols: Vec<&str> = lines[CSV_HEADER_LINES].split(',').collect();
        assert_eq!(cols.len(), 1 + 5 * 15 + 1);
        assert_eq!(cols[1], "x_1_1");
        assert_eq!(lines.len(), CSV_HEADER_LINES + 1 + r.t_grid.len());
        let first: Vec<f64> = lines[CSV_HEADER_LINES + 1]
            .split(',')
            .map(|s| s.parse().unwrap())
            .collect();
        assert_eq!(first[1], 1.6399);
    }

    #[test]
    fn full_precision_round_trips() {
        let v = 0.1 + 0.2;
        assert_eq!(num(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn report_json_has_sections() {
        let r = short_run();
        let json = RunReport::from_run(&r, DEFAULT_TAIL_FRACTION).to_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in ["gain_conditions", "violations", "chatter", "steady_state", "diagnostic_only"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
}
