//! Scenario file format (TOML) and key-path overrides.
//!
//! ```toml
//! schema_version = 1
//! name = "example1"
//! seed = 20190417            # optional, informational
//!
//! [sim]
//! dt = 1e-4
//! horizon = 10.0
//! record_every = 1            # optional, default 1
//! divergence_bound = 1e6      # optional
//!
//! [graph]
//! adjacency = [[0.0, 1.0], [1.0, 0.0]]   # a_ij: weight of the edge j -> i
//! pinning = [1.0, 0.0]
//!
//! [performance]              # scalar (broadcast) or one value per agent channel
//! rho0 = 7.0
//! rho_inf = 0.05
//! ell = 7.0
//!
//! [transform]
//! variant = "erf_smoothed"   # initial_sign | sign_switched | erf_smoothed
//! delta_hi = 7.0
//! delta_lo = 1.0
//! xi = 20.0
//!
//! [gains]
//! c = 100.0
//! k = 0.8
//! gamma = 150.0              # scalar or one value per agent
//!
//! [bounds]
//! x_m = 2.0
//! theta_m = 1.0
//! sigma_m = 1.0
//! d_theta = 1.0
//! d_sigma = 1.0
//! f_m = 1.0
//!
//! [leader]
//! kind = "constant"          # or "cosine" with amplitude / frequency arrays
//! value = [2.0]
//!
//! [[agents]]
//! a_m = [[0.0]]
//! b_m = [[1.0]]
//! plant = { kind = "polynomial", coeff = 1.0, power = 3, amplitude = 0.5, frequency = 1.0 }
//!
//! [initial]
//! x = [0.8, -0.9]
//! theta_hat = 0.0            # optional, scalar or per channel
//! sigma_hat = 0.0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ControllerGains, ModelBounds};
use crate::dynamics::{
    builtin, scenario_example1_seeded, AgentModel, DynamicsError, LeaderModel, Scenario,
    BUILTIN_NAMES, DEFAULT_DIVERGENCE_BOUND,
};
use crate::graph::Digraph;
use crate::ppf::{PerformanceFunction, TransformSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read scenario file {path}: {msg}")]
    Read { path: String, msg: String },
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("unsupported schema_version {0} (this build reads version {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("unknown key '{0}'")]
    UnknownKey(String),
    #[error("invalid value for '{key}': {msg}")]
    InvalidValue { key: String, msg: String },
    #[error("malformed override '{0}', expected key=value")]
    MalformedOverride(String),
    #[error(transparent)]
    Scenario(#[from] DynamicsError),
}

/// A scalar broadcast to every channel, or one value per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerChannel {
    Scalar(f64),
    List(Vec<f64>),
}

impl PerChannel {
    fn expand(&self, len: usize, key: &str) -> Result<Vec<f64>, ConfigError> {
        match self {
            PerChannel::Scalar(v) => Ok(vec![*v; len]),
            PerChannel::List(v) if v.len() == len => Ok(v.clone()),
            PerChannel::List(v) => Err(ConfigError::InvalidValue {
                key: key.into(),
                msg: format!("expected 1 or {len} values, got {}", v.len()),
            }),
        }
    }

    fn compact(values: &[f64]) -> Self {
        match values.first() {
            Some(&first) if values.iter().all(|&v| v == first) => PerChannel::Scalar(first),
            _ => PerChannel::List(values.to_vec()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub horizon: f64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default = "default_divergence_bound")]
    pub divergence_bound: f64,
}

fn default_record_every() -> usize {
    1
}

fn default_divergence_bound() -> f64 {
    DEFAULT_DIVERGENCE_BOUND
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub adjacency: Vec<Vec<f64>>,
    pub pinning: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerformanceSection {
    pub rho0: PerChannel,
    pub rho_inf: PerChannel,
    pub ell: PerChannel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSection {
    pub c: f64,
    pub k: f64,
    pub gamma: PerChannel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_hat: Option<PerChannel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_hat: Option<PerChannel>,
}

/// On-disk scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub sim: SimSection,
    pub graph: GraphSection,
    pub performance: PerformanceSection,
    pub transform: TransformSpec,
    pub gains: GainsSection,
    pub bounds: ModelBounds,
    pub leader: LeaderModel,
    pub agents: Vec<AgentModel>,
    pub initial: InitialSection,
}

impl ScenarioFile {
    pub fn from_scenario(s: &Scenario) -> Self {
        let opt = |v: &[f64]| {
            if v.iter().all(|&a| a == 0.0) {
                None
            } else {
                Some(PerChannel::compact(v))
            }
        };
        let pick = |f: fn(&PerformanceFunction) -> f64| {
            PerChannel::compact(&s.performance.iter().map(f).collect::<Vec<_>>())
        };
        ScenarioFile {
            schema_version: SCHEMA_VERSION,
            name: s.name.clone(),
            seed: s.seed,
            sim: SimSection {
                dt: s.dt,
                horizon: s.horizon,
                record_every: s.record_every,
                divergence_bound: s.divergence_bound,
            },
            graph: GraphSection {
                adjacency: s.digraph.adjacency_rows(),
                pinning: s.digraph.pinning().iter().copied().collect(),
            },
            performance: PerformanceSection {
                rho0: pick(PerformanceFunction::rho0),
                rho_inf: pick(PerformanceFunction::rho_inf),
                ell: pick(PerformanceFunction::ell),
            },
            transform: s.transform,
            gains: GainsSection {
                c: s.gains.c,
                k: s.gains.k,
                gamma: PerChannel::compact(&s.gains.gamma),
            },
            bounds: s.bounds,
            leader: s.leader.clone(),
            agents: s.agents.clone(),
            initial: InitialSection {
                x: s.x_init.clone(),
                theta_hat: opt(&s.theta_init),
                sigma_hat: opt(&s.sigma_init),
            },
        }
    }

    pub fn into_scenario(self) -> Result<Scenario, ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Schema(self.schema_version));
        }
        let n = self.graph.pinning.len();
        let m = self.leader.state_dim();
        let nm = n * m;
        let digraph = Digraph::from_rows(&self.graph.adjacency, &self.graph.pinning)
            .map_err(|e| invalid("graph", e))?;
        let rho0 = self.performance.rho0.expand(nm, "performance.rho0")?;
        let rho_inf = self.performance.rho_inf.expand(nm, "performance.rho_inf")?;
        let ell = self.performance.ell.expand(nm, "performance.ell")?;
        let performance = (0..nm)
            .map(|k| PerformanceFunction::new(rho0[k], rho_inf[k], ell[k]))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| invalid("performance", e))?;
        let gamma = self.gains.gamma.expand(n, "gains.gamma")?;
        let gains = ControllerGains::new(self.gains.c, self.gains.k, gamma)
            .map_err(|e| invalid("gains", e))?;
        let zero = PerChannel::Scalar(0.0);
        let theta_init = self
            .initial
            .theta_hat
            .as_ref()
            .unwrap_or(&zero)
            .expand(nm, "initial.theta_hat")?;
        let sigma_init = self
            .initial
            .sigma_hat
            .as_ref()
            .unwrap_or(&zero)
            .expand(nm, "initial.sigma_hat")?;
        let scenario = Scenario {
            name: self.name,
            seed: self.seed,
            digraph,
            agents: self.agents,
            leader: self.leader,
            performance,
            transform: self.transform,
            gains,
            bounds: self.bounds,
            x_init: self.initial.x,
            theta_init,
            sigma_init,
            horizon: self.sim.horizon,
            dt: self.sim.dt,
            record_every: self.sim.record_every,
            divergence_bound: self.sim.divergence_bound,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_value(&self) -> Result<toml::Value, ConfigError> {
        toml::Value::try_from(self).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn from_value(v: toml::Value) -> Result<Self, ConfigError> {
        v.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let value: toml::Value =
            toml::from_str(text).map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        check_schema(&value)?;
        ScenarioFile::from_value(value)
    }
}

fn invalid(key: &str, e: impl std::fmt::Display) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.into(),
        msg: e.to_string(),
    }
}

fn check_schema(value: &toml::Value) -> Result<(), ConfigError> {
    match value.get("schema_version") {
        Some(toml::Value::Integer(v)) if *v == SCHEMA_VERSION as i64 => Ok(()),
        Some(toml::Value::Integer(v)) => Err(ConfigError::Schema((*v).max(0) as u32)),
        _ => Err(ConfigError::InvalidValue {
            key: "schema_version".into(),
            msg: "missing or not an integer".into(),
        }),
    }
}

/// A `key.path=value` override.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub key: String,
    pub raw: String,
}

impl std::str::FromStr for Override {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        let (key, raw) = s
            .split_once('=')
            .ok_or_else(|| ConfigError::MalformedOverride(s.to_string()))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::MalformedOverride(s.to_string()));
        }
        Ok(Override {
            key: key.to_string(),
            raw: raw.trim().to_string(),
        })
    }
}

/// Parses an override value as a TOML value, falling back to a bare string.
pub fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn kind(v: &toml::Value) -> &'static str {
    match v {
        toml::Value::String(_) => "string",
        toml::Value::Integer(_) | toml::Value::Float(_) => "number",
        toml::Value::Boolean(_) => "boolean",
        toml::Value::Datetime(_) => "datetime",
        toml::Value::Array(_) => "array",
        toml::Value::Table(_) => "table",
    }
}

/// Looks up a dotted key path; numeric segments index arrays.
pub fn lookup<'a>(root: &'a toml::Value, key: &str) -> Option<&'a toml::Value> {
    key.split('.').try_fold(root, |node, seg| match node {
        toml::Value::Table(t) => t.get(seg),
        toml::Value::Array(a) => seg.parse::<usize>().ok().and_then(|i| a.get(i)),
        _ => None,
    })
}

fn lookup_mut<'a>(root: &'a mut toml::Value, key: &str) -> Option<&'a mut toml::Value> {
    key.split('.').try_fold(root, |node, seg| match node {
        toml::Value::Table(t) => t.get_mut(seg),
        toml::Value::Array(a) => seg.parse::<usize>().ok().and_then(move |i| a.get_mut(i)),
        _ => None,
    })
}

/// Replaces the value at an existing key path.
pub fn apply_override(root: &mut toml::Value, ov: &Override) -> Result<(), ConfigError> {
    let slot = lookup_mut(root, &ov.key).ok_or_else(|| ConfigError::UnknownKey(ov.key.clone()))?;
    let mut new = parse_value(&ov.raw);
    let (old_kind, new_kind) = (kind(slot), kind(&new));
    let compatible = old_kind == new_kind
        || matches!((old_kind, new_kind), ("number", "array") | ("array", "number"));
    if !compatible {
        return Err(ConfigError::InvalidValue {
            key: ov.key.clone(),
            msg: format!("expected a {old_kind}, got '{}'", ov.raw),
        });
    }
    if let (toml::Value::Float(_), toml::Value::Integer(i)) = (&*slot, &new) {
        new = toml::Value::Float(*i as f64);
    }
    *slot = new;
    Ok(())
}

/// Where a scenario comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioSource {
    Builtin(String),
    File(String),
}

impl ScenarioSource {
    pub fn parse(reference: &str) -> Self {
        if BUILTIN_NAMES.contains(&reference) {
            ScenarioSource::Builtin(reference.to_string())
        } else {
            ScenarioSource::File(reference.to_string())
        }
    }
}

/// Loads a scenario by builtin name or file path, reseeding and overriding as requested.
///
/// `seed` (or an override of the key `seed`) regenerates the random constants of
/// a builtin scenario; for files it only replaces the recorded seed.
pub fn load_scenario(
    reference: &str,
    seed: Option<u64>,
    overrides: &[Override],
) -> Result<ScenarioFile, ConfigError> {
    let mut seed = seed;
    let mut rest = Vec::with_capacity(overrides.len());
    for ov in overrides {
        if ov.key == "seed" {
            seed = Some(ov.raw.parse().map_err(|_| ConfigError::InvalidValue {
                key: "seed".into(),
                msg: format!("'{}' is not a nonnegative integer", ov.raw),
            })?);
        } else {
            rest.push(ov.clone());
        }
    }
    let mut file = match ScenarioSource::parse(reference) {
        ScenarioSource::Builtin(name) => {
            let sc = match (name.as_str(), seed) {
                ("example1", Some(s)) => scenario_example1_seeded(s),
                _ => builtin(&name)?,
            };
            ScenarioFile::from_scenario(&sc)
        }
        ScenarioSource::File(path) => read_scenario_file(Path::new(&path))?,
    };
    if let Some(s) = seed {
        file.seed = Some(s);
    }
    apply_overrides(file, &rest)
}

pub fn apply_overrides(file: ScenarioFile, overrides: &[Override]) -> Result<ScenarioFile, ConfigError> {
    if overrides.is_empty() {
        return Ok(file);
    }
    let mut value = file.to_value()?;
    for ov in overrides {
        apply_override(&mut value, ov)?;
    }
    ScenarioFile::from_value(value).map_err(|e| {
        let keys: Vec<&str> = overrides.iter().map(|o| o.key.as_str()).collect();
        ConfigError::InvalidValue {
            key: keys.join(", "),
            msg: e.to_string(),
        }
    })
}

pub fn read_scenario_file(path: &Path) -> Result<ScenarioFile, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    ScenarioFile::parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{scenario_example1, scenario_example2};
    use crate::ppf::TransformVariant;

    #[test]
    fn builtins_round_trip_through_toml() {
        for sc in [scenario_example1(), scenario_example2()] {
            let text = ScenarioFile::from_scenario(&sc).to_toml_string().unwrap();
            let back = ScenarioFile::parse(&text).unwrap().into_scenario().unwrap();
            assert_eq!(back, sc);
        }
    }

    #[test]
    fn override_reads_back_exactly() {
        let ovs: Vec<Override> = ["transform.variant=sign_switched", "gains.c=250", "sim.dt=2e-4"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect();
        let file = load_scenario("example1", None, &ovs).unwrap();
        let v = file.to_value().unwrap();
        assert_eq!(lookup(&v, "gains.c"), Some(&toml::Value::Float(250.0)));
        assert_eq!(lookup(&v, "sim.dt"), Some(&toml::Value::Float(2e-4)));
        let sc = file.into_scenario().unwrap();
        assert_eq!(sc.transform.variant(), TransformVariant::SignSwitched);
        assert_eq!(sc.gains.c, 250.0);
        assert_eq!(sc.dt, 2e-4);
    }

    #[test]
    fn per_channel_arrays_and_indexed_keys() {
        let ovs: Vec<Override> = [
            "gains.gamma=[1.0, 2.0, 3.0, 4.0, 5.0]",
            "agents.1.plant.amplitude=0.25",
        ]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
        let sc = load_scenario("example1", None, &ovs).unwrap().into_scenario().unwrap();
        assert_eq!(sc.gains.gamma, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        match sc.agents[1].plant {
            crate::dynamics::PlantTruth::Polynomial { amplitude, .. } => assert_eq!(amplitude, 0.25),
            _ => unreachable!(),
        }
    }

    #[test]
    fn bad_overrides_name_the_key() {
        let ov: Override = "gains.nope=1".parse().unwrap();
        let err = load_scenario("example1", None, &[ov]).unwrap_err();
        assert!(err.to_string().contains("gains.nope"));
        let ov: Override = "gains.c=fast".parse().unwrap();
        let err = load_scenario("example1", None, &[ov]).unwrap_err();
        assert!(err.to_string().contains("gains.c"));
        let ov: Override = "transform.variant=bogus".parse().unwrap();
        let err = load_scenario("example1", None, &[ov]).unwrap_err();
        assert!(err.to_string().contains("transform.variant"));
        assert!("novalue".parse::<Override>().is_err());
    }

    #[test]
    fn seed_regenerates_builtin_amplitudes() {
        let a = load_scenario("example1", Some(1), &[]).unwrap();
        let b = load_scenario("example1", None, &["seed=1".parse().unwrap()]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.seed, Some(1));
        assert_ne!(a.agents, load_scenario("example1", None, &[]).unwrap().agents);
    }

    #[test]
    fn missing_file_and_bad_schema() {
        assert!(matches!(
            load_scenario("definitely-missing.toml", None, &[]),
            Err(ConfigError::Read { .. })
        ));
        let text = ScenarioFile::from_scenario(&scenario_example1())
            .to_toml_string()
            .unwrap()
            .replace("schema_version = 1", "schema_version = 9");
        assert!(matches!(ScenarioFile::parse(&text), Err(ConfigError::Schema(9))));
    }

    #[test]
    fn wrong_length_per_channel_is_rejected() {
        let ov: Override = "performance.rho0=[7.0, 7.0]".parse().unwrap();
        let err = load_scenario("example1", None, &[ov]).unwrap().into_scenario().unwrap_err();
        assert!(err.to_string().contains("performance.rho0"));
    }
}
