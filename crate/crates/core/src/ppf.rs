//! Prescribed performance envelopes and the error transformation.
//!
//! A channel's synchronization error `e` is kept inside a shrinking funnel
//! `rho(t)`. The transformation maps the normalized error `z = e / rho` from the
//! bounded interval onto the real line; the controller works on the
//! transformed error `eps` instead of `e`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative margin inside `delta_hi` at which the normalized error is clamped.
pub const CLAMP_MARGIN: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PpfError {
    #[error("time {0} is negative")]
    NegativeTime(f64),
    #[error("invalid performance function: {0}")]
    InvalidPerformance(String),
    #[error("invalid transform: {0}")]
    InvalidTransform(String),
    #[error("normalized error {ratio} is outside the admissible envelope")]
    BoundViolation { ratio: f64 },
}

/// `rho(t) = (rho0 - rho_inf) exp(-ell t) + rho_inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PerformanceRepr", into = "PerformanceRepr")]
pub struct PerformanceFunction {
    rho0: f64,
    rho_inf: f64,
    ell: f64,
}

#[derive(Serialize, Deserialize)]
struct PerformanceRepr {
    rho0: f64,
    rho_inf: f64,
    ell: f64,
}

impl TryFrom<PerformanceRepr> for PerformanceFunction {
    type Error = PpfError;
    fn try_from(r: PerformanceRepr) -> Result<Self, PpfError> {
        PerformanceFunction::new(r.rho0, r.rho_inf, r.ell)
    }
}

impl From<PerformanceFunction> for PerformanceRepr {
    fn from(p: PerformanceFunction) -> Self {
        PerformanceRepr {
            rho0: p.rho0,
            rho_inf: p.rho_inf,
            ell: p.ell,
        }
    }
}

impl PerformanceFunction {
    pub fn new(rho0: f64, rho_inf: f64, ell: f64) -> Result<Self, PpfError> {
        if !(rho_inf > 0.0 && rho0 > rho_inf && rho0.is_finite()) {
            return Err(PpfError::InvalidPerformance(format!(
                "need rho0 > rho_inf > 0, got rho0 = {rho0}, rho_inf = {rho_inf}"
            )));
        }
        if !(ell > 0.0 && ell.is_finite()) {
            return Err(PpfError::InvalidPerformance(format!(
                "decay rate ell = {ell} must be positive"
            )));
        }
        Ok(PerformanceFunction { rho0, rho_inf, ell })
    }

    pub fn rho0(&self) -> f64 {
        self.rho0
    }

    pub fn rho_inf(&self) -> f64 {
        self.rho_inf
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }

    pub fn rho(&self, t: f64) -> Result<f64, PpfError> {
        if t < 0.0 {
            return Err(PpfError::NegativeTime(t));
        }
        Ok(self.rho_at(t))
    }

    pub(crate) fn rho_at(&self, t: f64) -> f64 {
        (self.rho0 - self.rho_inf) * (-self.ell * t).exp() + self.rho_inf
    }

    pub fn rho_dot(&self, t: f64) -> Result<f64, PpfError> {
        if t < 0.0 {
            return Err(PpfError::NegativeTime(t));
        }
        Ok(-self.ell * (self.rho0 - self.rho_inf) * (-self.ell * t).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformVariant {
    /// Roles of `delta_hi` / `delta_lo` fixed by the sign of `e(0)` and never switched.
    InitialSign,
    /// Roles switched with `sign(e)`; discontinuous at `e = 0`.
    SignSwitched,
    /// `sign(e)` replaced by `erf(xi e / rho)` with a `1 / (2 sqrt(pi))` gain.
    ErfSmoothed,
}

impl TransformVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            TransformVariant::InitialSign => "initial_sign",
            TransformVariant::SignSwitched => "sign_switched",
            TransformVariant::ErfSmoothed => "erf_smoothed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformRepr", into = "TransformRepr")]
pub struct TransformSpec {
    delta_hi: f64,
    delta_lo: f64,
    variant: TransformVariant,
    xi: f64,
    normalize_erf_gain: bool,
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    variant: TransformVariant,
    delta_hi: f64,
    delta_lo: f64,
    xi: f64,
    #[serde(default)]
    normalize_erf_gain: bool,
}

impl TryFrom<TransformRepr> for TransformSpec {
    type Error = PpfError;
    fn try_from(r: TransformRepr) -> Result<Self, PpfError> {
        TransformSpec::new(r.delta_hi, r.delta_lo, r.variant, r.xi)
            .map(|s| s.with_normalized_erf_gain(r.normalize_erf_gain))
    }
}

impl From<TransformSpec> for TransformRepr {
    fn from(s: TransformSpec) -> Self {
        TransformRepr {
            variant: s.variant,
            delta_hi: s.delta_hi,
            delta_lo: s.delta_lo,
            xi: s.xi,
            normalize_erf_gain: s.normalize_erf_gain,
        }
    }
}

/// Sign of a channel's error, used to freeze the `InitialSign` branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorSign {
    NonNegative,
    Negative,
}

impl ErrorSign {
    pub fn of(e: f64) -> Self {
        if e < 0.0 {
            ErrorSign::Negative
        } else {
            ErrorSign::NonNegative
        }
    }
}

/// Result of the clamped pipeline evaluation used inside the simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transformed {
    pub eps: f64,
    pub r: f64,
    /// The normalized error sat on or beyond the admissible boundary and was clamped.
    pub clamped: bool,
}

impl TransformSpec {
    pub fn new(
        delta_hi: f64,
        delta_lo: f64,
        variant: TransformVariant,
        xi: f64,
    ) -> Result<Self, PpfError> {
        if !(delta_lo > 0.0 && delta_hi > delta_lo && delta_hi.is_finite()) {
            return Err(PpfError::InvalidTransform(format!(
                "need delta_hi > delta_lo > 0, got delta_hi = {delta_hi}, delta_lo = {delta_lo}"
            )));
        }
        if delta_lo > 1.0 {
            return Err(PpfError::InvalidTransform(format!(
                "delta_lo = {delta_lo} must not exceed 1"
            )));
        }
        if !(xi > 0.0 && xi.is_finite()) {
            return Err(PpfError::InvalidTransform(format!("xi = {xi} must be positive")));
        }
        Ok(TransformSpec {
            delta_hi,
            delta_lo,
            variant,
            xi,
            normalize_erf_gain: false,
        })
    }

    /// Rescale the erf variant by `sqrt(pi)` so its saturated amplitude matches
    /// the sign-switched transform.
    pub fn with_normalized_erf_gain(mut self, on: bool) -> Self {
        self.normalize_erf_gain = on;
        self
    }

    pub fn with_variant(mut self, variant: TransformVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn delta_hi(&self) -> f64 {
        self.delta_hi
    }

    pub fn delta_lo(&self) -> f64 {
        self.delta_lo
    }

    pub fn variant(&self) -> TransformVariant {
        self.variant
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn normalize_erf_gain(&self) -> bool {
        self.normalize_erf_gain
    }

    /// Width of the erf transition region, `2 / xi`.
    pub fn smoothing_threshold(&self) -> f64 {
        2.0 / self.xi
    }

    /// `(lower, upper)` admissible interval for `z = e / rho`.
    ///
    /// The switched variants admit `|z| < delta_hi`; `InitialSign` admits
    /// `(-delta_lo, delta_hi)` or `(-delta_hi, delta_lo)` depending on the frozen sign.
    pub fn admissible_interval(&self, frozen: Option<ErrorSign>) -> (f64, f64) {
        match (self.variant, frozen) {
            (TransformVariant::InitialSign, Some(ErrorSign::NonNegative)) => {
                (-self.delta_lo, self.delta_hi)
            }
            (TransformVariant::InitialSign, Some(ErrorSign::Negative)) => {
                (-self.delta_hi, self.delta_lo)
            }
            _ => (-self.delta_hi, self.delta_hi),
        }
    }

    /// Strict envelope membership `lower * rho < e < upper * rho`.
    pub fn within_envelope(&self, e: f64, rho_t: f64, frozen: Option<ErrorSign>) -> bool {
        let (lo, hi) = self.admissible_interval(frozen);
        let z = e / rho_t;
        z > lo && z < hi
    }
}

/// `sign(x)` with `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `S(eps) = (delta_hi e^eps - delta_lo e^-eps) / (e^eps + e^-eps)`.
pub fn smooth_s(spec: &TransformSpec, eps: f64) -> f64 {
    let (hi, lo) = (spec.delta_hi, spec.delta_lo);
    if eps >= 0.0 {
        hi - (hi + lo) / (1.0 + (2.0 * eps).exp())
    } else {
        -lo + (hi + lo) / (1.0 + (-2.0 * eps).exp())
    }
}

fn log_ratio(spec: &TransformSpec, abs_z: f64) -> f64 {
    ((spec.delta_lo + abs_z) / (spec.delta_hi - abs_z)).ln()
}

fn check_ratio(spec: &TransformSpec, z: f64, frozen: Option<ErrorSign>) -> Result<(), PpfError> {
    let (lo, hi) = spec.admissible_interval(frozen);
    let keep = 1.0 - CLAMP_MARGIN;
    if z >= hi * keep || z <= lo * keep || z.is_nan() {
        return Err(PpfError::BoundViolation { ratio: z });
    }
    Ok(())
}

fn check_rho(rho_t: f64) -> Result<(), PpfError> {
    if rho_t > 0.0 && rho_t.is_finite() {
        Ok(())
    } else {
        Err(PpfError::InvalidPerformance(format!("rho = {rho_t} must be positive")))
    }
}

/// Transformed error `eps` for a normalized error already inside the admissible interval.
fn eps_unchecked(spec: &TransformSpec, z: f64, frozen: Option<ErrorSign>) -> f64 {
    match spec.variant {
        TransformVariant::SignSwitched => 0.5 * sign(z) * log_ratio(spec, z.abs()),
        TransformVariant::ErfSmoothed => {
            let gain = if spec.normalize_erf_gain {
                0.5
            } else {
                1.0 / (2.0 * PI.sqrt())
            };
            gain * erf(spec.xi * z) * log_ratio(spec, z.abs())
        }
        TransformVariant::InitialSign => {
            let (a, b) = initial_sign_roles(spec, frozen, z);
            0.5 * ((a + z) / (b - z)).ln()
        }
    }
}

fn r_unchecked(spec: &TransformSpec, z: f64, rho_t: f64, frozen: Option<ErrorSign>) -> f64 {
    match spec.variant {
        TransformVariant::InitialSign => {
            let (a, b) = initial_sign_roles(spec, frozen, z);
            (1.0 / (a + z) + 1.0 / (b - z)) / (2.0 * rho_t)
        }
        _ => {
            let az = z.abs();
            (1.0 / (spec.delta_lo + az) + 1.0 / (spec.delta_hi - az)) / (2.0 * rho_t)
        }
    }
}

/// `(added, subtracted)` deltas for the fixed-role transform.
fn initial_sign_roles(spec: &TransformSpec, frozen: Option<ErrorSign>, z: f64) -> (f64, f64) {
    match frozen.unwrap_or(ErrorSign::of(z)) {
        ErrorSign::NonNegative => (spec.delta_lo, spec.delta_hi),
        ErrorSign::Negative => (spec.delta_hi, spec.delta_lo),
    }
}

/// Transformed error `eps` of `e` under the envelope `rho_t`.
///
/// For `InitialSign` the branch is taken from the sign of `e` itself; use
/// [`transform_frozen`] to supply the sign of `e(0)`.
pub fn transform(spec: &TransformSpec, e: f64, rho_t: f64) -> Result<f64, PpfError> {
    transform_frozen(spec, e, rho_t, None)
}

pub fn transform_frozen(
    spec: &TransformSpec,
    e: f64,
    rho_t: f64,
    frozen: Option<ErrorSign>,
) -> Result<f64, PpfError> {
    check_rho(rho_t)?;
    let z = e / rho_t;
    let frozen = frozen.or(Some(ErrorSign::of(z)));
    check_ratio(spec, z, frozen)?;
    Ok(eps_unchecked(spec, z, frozen))
}

/// `r = (1 / 2 rho) [1 / (delta_lo + |e|/rho) + 1 / (delta_hi - |e|/rho)]`.
pub fn r_factor(spec: &TransformSpec, e: f64, rho_t: f64) -> Result<f64, PpfError> {
    check_rho(rho_t)?;
    let z = e / rho_t;
    let frozen = Some(ErrorSign::of(z));
    check_ratio(spec, z, frozen)?;
    Ok(r_unchecked(spec, z, rho_t, frozen))
}

/// Clamp-and-continue evaluation of `(eps, r)`.
///
/// When the normalized error reaches the admissible boundary it is pulled back
/// to `boundary * (1 - CLAMP_MARGIN)` and `clamped` is set so the caller can log it.
pub fn evaluate_clamped(
    spec: &TransformSpec,
    e: f64,
    rho_t: f64,
    frozen: Option<ErrorSign>,
) -> Transformed {
    let mut z = e / rho_t;
    let frozen = match spec.variant {
        TransformVariant::InitialSign => frozen.or(Some(ErrorSign::of(z))),
        _ => None,
    };
    let (lo, hi) = spec.admissible_interval(frozen);
    let keep = 1.0 - CLAMP_MARGIN;
    let mut clamped = false;
    if z >= hi * keep {
        z = hi * keep;
        clamped = true;
    } else if z <= lo * keep {
        z = lo * keep;
        clamped = true;
    }
    Transformed {
        eps: eps_unchecked(spec, z, frozen),
        r: r_unchecked(spec, z, rho_t, frozen),
        clamped,
    }
}

/// Error function, Abramowitz & Stegun 7.1.26 (|error| <= 1.5e-7), extended
/// as an odd function so that `erf(0) = 0` exactly.
pub fn erf(x: f64) -> f64 {
    const P: f64 = 0.327_591_1;
    const A: [f64; 5] = [
        0.254_829_592,
        -0.284_496_736,
        1.421_413_741,
        -1.453_152_027,
        1.061_405_429,
    ];
    if x == 0.0 || x.is_nan() {
        return x;
    }
    let ax = x.abs();
    let t = 1.0 / (1.0 + P * ax);
    let poly = t * (A[0] + t * (A[1] + t * (A[2] + t * (A[3] + t * A[4]))));
    let y = 1.0 - poly * (-ax * ax).exp();
    y.copysign(x)
}
