use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ppsync_core::config::load_scenario;
use ppsync_core::export::{
    plot_script, write_phase_plane_csv, write_trajectory_csv, DEFAULT_TAIL_FRACTION,
};
use ppsync_core::{
    Override, RunReport, ScenarioFile, SimError, SimRun, Simulator, TransformVariant,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::args::{Cli, Command, Common, Emit};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_IO: i32 = 4;

const DEFAULT_OUT: &str = "ppsync-out";

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Diverged(String),
    Io(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Diverged(_) => EXIT_DIVERGED,
            Failure::Io(_) => EXIT_IO,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration: {m}"),
            Failure::Diverged(m) => write!(f, "divergence: {m}"),
            Failure::Io(m) => write!(f, "i/o: {m}"),
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Run { common, emit } => cmd_run(common, emit),
        Command::Compare { common, emit } => cmd_compare(common, emit),
        Command::Check { common } => cmd_check(common),
        Command::PhasePlane {
            common,
            perturbations,
            scale,
            perturbation_seed,
        } => cmd_phase_plane(common, *perturbations, *scale, *perturbation_seed),
        Command::DumpScenario { common } => cmd_dump(common),
    }
}

/// Resolves the scenario with all overrides applied and checks that it can be simulated.
fn load(common: &Common) -> Result<(ScenarioFile, Simulator), Failure> {
    let mut overrides = common.set.clone();
    for (key, v) in [("sim.dt", common.dt), ("sim.horizon", common.horizon)] {
        if let Some(v) = v {
            overrides.push(Override {
                key: key.into(),
                raw: format!("{v:?}"),
            });
        }
    }
    let file = load_scenario(&common.scenario, common.seed, &overrides)
        .map_err(|e| Failure::Config(e.to_string()))?;
    let scenario = file
        .clone()
        .into_scenario()
        .map_err(|e| Failure::Config(e.to_string()))?;
    let sim = Simulator::new(scenario).map_err(|e| Failure::Config(e.to_string()))?;
    Ok((file, sim))
}

/// Runs to completion or divergence; the flag is true for a diverged run.
fn simulate(sim: &Simulator) -> Result<(SimRun, bool), Failure> {
    match sim.run() {
        Ok(r) => Ok((r, false)),
        Err(SimError::Diverged { partial, .. }) => Ok((*partial, true)),
        Err(e) => Err(Failure::Config(e.to_string())),
    }
}

fn out_dir(common: &Common) -> Result<PathBuf, Failure> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    fs::create_dir_all(&dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn write_file<F>(path: &Path, body: F) -> Result<(), Failure>
where
    F: FnOnce(&mut BufWriter<File>) -> io::Result<()>,
{
    let io_err = |e: io::Error| Failure::Io(format!("{}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    body(&mut w).and_then(|_| w.flush()).map_err(io_err)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

fn describe(run: &SimRun) -> String {
    let status = match run.divergence_time {
        Some(t) => format!("diverged at t = {t:.4}"),
        None => "completed".into(),
    };
    let tail = ppsync_core::steady_state_report(run, DEFAULT_TAIL_FRACTION)
        .map(|s| {
            let worst = s.max_abs_error.iter().copied().fold(0.0, f64::max);
            format!(", tail max|e| = {worst:.4e}")
        })
        .unwrap_or_default();
    format!(
        "{} ({}): {status}, {} clamp events{tail}",
        run.scenario_name,
        run.variant.as_str(),
        run.violation_count
    )
}

fn emit_run(run: &SimRun, dir: &Path, stem: &str, emit: &[Emit]) -> Result<Vec<PathBuf>, Failure> {
    let mut written = Vec::new();
    let csv_name = format!("{stem}.csv");
    for e in emit {
        let path = match e {
            Emit::Trajectories => {
                let p = dir.join(&csv_name);
                write_file(&p, |w| write_trajectory_csv(run, w))?;
                p
            }
            Emit::Report => {
                let p = dir.join(format!("{stem}_report.json"));
                let report = RunReport::from_run(run, DEFAULT_TAIL_FRACTION);
                write_file(&p, |w| writeln!(w, "{}", report.to_json()))?;
                p
            }
            Emit::PhasePlane => {
                let p = dir.join(format!("{stem}_phase.csv"));
                write_file(&p, |w| write_phase_plane_csv(run, "nominal", w))?;
                p
            }
            Emit::PlotScript => {
                let p = dir.join(format!("{stem}_plot.txt"));
                write_file(&p, |w| w.write_all(plot_script(run, &csv_name).as_bytes()))?;
                p
            }
        };
        if !written.contains(&path) {
            written.push(path);
        }
    }
    Ok(written)
}

fn cmd_run(common: &Common, emit: &[Emit]) -> Result<(), Failure> {
    let (_, sim) = load(common)?;
    let started = Instant::now();
    let (run, diverged) = simulate(&sim)?;
    let elapsed = started.elapsed();
    let dir = out_dir(common)?;
    let stem = format!("{}_{}", file_stem(&run.scenario_name), run.variant.as_str());
    let written = emit_run(&run, &dir, &stem, emit)?;
    println!("{} in {:.2} s", describe(&run), elapsed.as_secs_f64());
    for p in &written {
        println!("wrote {}", p.display());
    }
    if diverged {
        return Err(Failure::Diverged(describe(&run)));
    }
    Ok(())
}

fn cmd_compare(common: &Common, emit: &[Emit]) -> Result<(), Failure> {
    let (_, base) = load(common)?;
    let variants = [TransformVariant::SignSwitched, TransformVariant::ErfSmoothed];
    let sims = variants
        .iter()
        .map(|&v| {
            let mut sc = base.scenario().clone();
            sc.transform = sc.transform.with_variant(v);
            Simulator::new(sc).map_err(|e| Failure::Config(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let runs = std::thread::scope(|s| {
        let handles: Vec<_> = sims.iter().map(|sim| s.spawn(move || simulate(sim))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect::<Result<Vec<_>, _>>()
    })?;

    let reports: Vec<RunReport> = runs
        .iter()
        .map(|(r, _)| RunReport::from_run(r, DEFAULT_TAIL_FRACTION))
        .collect();
    let tv = |k: usize| {
        reports[k]
            .chatter
            .as_ref()
            .map(|c| c.total_variation_per_channel.clone())
            .unwrap_or_default()
    };
    let (tv_sign, tv_erf) = (tv(0), tv(1));
    let ratio: Vec<f64> = tv_sign.iter().zip(&tv_erf).map(|(s, e)| s / e).collect();
    let erf_smaller = !tv_erf.is_empty() && tv_sign.iter().zip(&tv_erf).all(|(s, e)| e < s);
    let summary = json!({
        "scenario": base.scenario().name,
        "seed": base.scenario().seed,
        "sign_switched": reports[0],
        "erf_smoothed": reports[1],
        "total_variation_ratio_sign_over_erf": ratio,
        "erf_smaller_on_every_channel": erf_smaller,
    });

    let dir = out_dir(common)?;
    let name = file_stem(&base.scenario().name);
    let mut written = Vec::new();
    for (run, _) in &runs {
        let stem = format!("{name}_{}", run.variant.as_str());
        let per_run: Vec<Emit> = emit.iter().copied().filter(|e| *e != Emit::Report).collect();
        written.extend(emit_run(run, &dir, &stem, &per_run)?);
    }
    if emit.contains(&Emit::Report) {
        let p = dir.join(format!("{name}_compare.json"));
        write_json(&p, &summary)?;
        written.push(p);
    }

    for (run, _) in &runs {
        println!("{}", describe(run));
    }
    for (ch, ((s, e), r)) in tv_sign.iter().zip(&tv_erf).zip(&ratio).enumerate() {
        println!("channel {:>2}: TV sign {s:.4e}  erf {e:.4e}  ratio {r:.3}", ch + 1);
    }
    println!("erf smaller on every channel: {erf_smaller}");
    for p in &written {
        println!("wrote {}", p.display());
    }
    let diverged: Vec<String> = runs.iter().filter(|(_, d)| *d).map(|(r, _)| describe(r)).collect();
    if !diverged.is_empty() {
        return Err(Failure::Diverged(diverged.join("; ")));
    }
    Ok(())
}

fn cmd_check(common: &Common) -> Result<(), Failure> {
    let (_, sim) = load(common)?;
    let sc = sim.scenario();
    let value = json!({
        "scenario": sc.name,
        "gains": { "c": sc.gains.c, "k": sc.gains.k, "gamma": sc.gains.gamma },
        "conditions": sim.gain_report(),
        "strongly_connected": ppsync_core::is_strongly_connected(&sc.digraph),
    });
    let text = serde_json::to_string_pretty(&value).expect("report serializes");
    println!("{text}");
    let dir = out_dir(common)?;
    let p = dir.join(format!("{}_check.json", file_stem(&sc.name)));
    write_json(&p, &value)?;
    println!("wrote {}", p.display());
    Ok(())
}

fn cmd_phase_plane(common: &Common, perturbations: usize, scale: f64, seed: u64) -> Result<(), Failure> {
    if !(scale.is_finite() && scale >= 0.0) {
        return Err(Failure::Config(format!("scale = {scale} must be a nonnegative number")));
    }
    let (_, base) = load(common)?;
    let nominal = base.scenario().x_init.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inits = vec![nominal.clone()];
    for _ in 0..perturbations {
        inits.push(
            nominal
                .iter()
                .map(|x| x + rng.random_range(-scale..=scale))
                .collect(),
        );
    }
    let sims = inits
        .iter()
        .map(|x| {
            let mut sc = base.scenario().clone();
            sc.x_init = x.clone();
            Simulator::new(sc).map_err(|e| Failure::Config(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(sims.len());
    let chunk = sims.len().div_ceil(workers.max(1));
    let runs = std::thread::scope(|s| {
        let handles: Vec<_> = sims
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(simulate).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("simulation thread panicked"))
            .collect::<Result<Vec<_>, _>>()
    })?;

    let dir = out_dir(common)?;
    let stem = format!(
        "{}_{}_phase",
        file_stem(&base.scenario().name),
        base.scenario().transform.variant().as_str()
    );
    let mut entries = Vec::new();
    for (k, ((run, _), x)) in runs.iter().zip(&inits).enumerate() {
        let label = if k == 0 { "nominal".to_string() } else { format!("perturbation {k}") };
        let p = dir.join(format!("{stem}_{k:02}.csv"));
        write_file(&p, |w| write_phase_plane_csv(run, &label, w))?;
        println!("{label}: {} -> {}", describe(run), p.display());
        let tail = ppsync_core::steady_state_report(run, DEFAULT_TAIL_FRACTION).ok();
        entries.push(json!({
            "label": label,
            "file": p.file_name().map(|f| f.to_string_lossy().into_owned()),
            "x_init": x,
            "completed": run.completed,
            "divergence_time": run.divergence_time,
            "violation_count": run.violation_count,
            "steady_state": tail,
        }));
    }
    let p = dir.join(format!("{stem}_summary.json"));
    write_json(
        &p,
        &json!({ "perturbation_seed": seed, "scale": scale, "runs": entries }),
    )?;
    println!("wrote {}", p.display());
    let diverged = runs.iter().filter(|(_, d)| *d).count();
    if diverged > 0 {
        return Err(Failure::Diverged(format!("{diverged} of {} runs diverged", runs.len())));
    }
    Ok(())
}

fn cmd_dump(common: &Common) -> Result<(), Failure> {
    let (file, sim) = load(common)?;
    let text = file.to_toml_string().map_err(|e| Failure::Config(e.to_string()))?;
    match &common.out {
        None => print!("{text}"),
        Some(_) => {
            let dir = out_dir(common)?;
            let p = dir.join(format!("{}.toml", file_stem(&sim.scenario().name)));
            write_file(&p, |w| w.write_all(text.as_bytes()))?;
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}
