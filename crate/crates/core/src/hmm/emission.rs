use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Wraps an angle into `(-pi, pi]`; values already in range are returned unchanged.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = a - 2.0 * PI * ((a + PI) / (2.0 * PI)).floor();
    if r <= -PI {
        r + 2.0 * PI
    } else {
        r
    }
}

/// Distribution family of one observation channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    Gamma,
    VonMises,
}

/// State-dependent distribution of one channel, in the user-facing
/// parameterisation (gamma uses mean/sd, converted internally to shape/scale).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Emission {
    Gaussian { mean: f64, sd: f64 },
    Gamma { mean: f64, sd: f64 },
    VonMises { mean: f64, kappa: f64 },
}

impl Emission {
    pub fn family(&self) -> Family {
        match self {
            Emission::Gaussian { .. } => Family::Gaussian,
            Emission::Gamma { .. } => Family::Gamma,
            Emission::VonMises { .. } => Family::VonMises,
        }
    }

    /// Location parameter: mean, or mean direction for von Mises.
    pub fn location(&self) -> f64 {
        match *self {
            Emission::Gaussian { mean, .. }
            | Emission::Gamma { mean, .. }
            | Emission::VonMises { mean, .. } => mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Emission::Gaussian { mean, sd } => {
                if !mean.is_finite() || !(sd > 0.0 && sd.is_finite()) {
                    return Err(Error::input(format!(
                        "gaussian emission needs finite mean and sd > 0 (mean={mean}, sd={sd})"
                    )));
                }
            }
            Emission::Gamma { mean, sd } => {
                if !(mean > 0.0 && mean.is_finite()) || !(sd > 0.0 && sd.is_finite()) {
                    return Err(Error::input(format!(
                        "gamma emission needs mean > 0 and sd > 0 (mean={mean}, sd={sd})"
                    )));
                }
            }
            Emission::VonMises { mean, kappa } => {
                if !(mean > -PI && mean <= PI) || !(kappa >= 0.0 && kappa.is_finite()) {
                    return Err(Error::input(format!(
                        "von Mises emission needs mean in (-pi, pi] and kappa >= 0 (mean={mean}, kappa={kappa})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn in_support(&self, x: f64) -> bool {
        match self {
            Emission::Gaussian { .. } => x.is_finite(),
            Emission::Gamma { .. } => x > 0.0 && x.is_finite(),
            Emission::VonMises { .. } => x > -PI && x <= PI,
        }
    }

    /// Log density at `x`; `-inf` outside the support.
    pub fn log_density(&self, x: f64) -> f64 {
        if !self.in_support(x) {
            return f64::NEG_INFINITY;
        }
        match *self {
            Emission::Gaussian { mean, sd } => {
                let u = (x - mean) / sd;
                -0.5 * u * u - sd.ln() - LN_SQRT_2PI
            }
            Emission::Gamma { mean, sd } => {
                let shape = mean * mean / (sd * sd);
                let scale = sd * sd / mean;
                (shape - 1.0) * x.ln() - x / scale - ln_gamma(shape) - shape * scale.ln()
            }
            Emission::VonMises { mean, kappa } => {
                kappa * (x - mean).cos() - (2.0 * PI).ln() - ln_bessel_i0(kappa)
            }
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        self.log_density(x).exp()
    }
}

/// `ln I0(x)` for the modified Bessel function of the first kind, order zero.
///
/// Power series below 20, asymptotic expansion above; both are accurate to
/// around 1e-14 relative in the log.
pub fn ln_bessel_i0(x: f64) -> f64 {
    let x = x.abs();
    if x <= 20.0 {
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        loop {
            term *= q / (k * k);
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
            k += 1.0;
        }
        sum.ln()
    } else {
        // I0(x) ~ e^x / sqrt(2 pi x) * sum_k ((2k-1)!!)^2 / (k! (8x)^k)
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..=30 {
            let kf = k as f64;
            let next = term * (2.0 * kf - 1.0).powi(2) / (kf * 8.0 * x);
            if next >= term {
                break;
            }
            term = next;
            sum += term;
            if term < 1e-17 {
                break;
            }
        }
        x - 0.5 * (2.0 * PI * x).ln() + sum.ln()
    }
}

/// Per-state, per-channel emission distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EmissionRepr", into = "EmissionRepr")]
pub struct EmissionSpec {
    states: Vec<Vec<Emission>>,
}

#[derive(Serialize, Deserialize)]
struct EmissionRepr {
    states: Vec<Vec<Emission>>,
}

impl From<EmissionSpec> for EmissionRepr {
    fn from(e: EmissionSpec) -> Self {
        EmissionRepr { states: e.states }
    }
}

impl TryFrom<EmissionRepr> for EmissionSpec {
    type Error = Error;
    fn try_from(r: EmissionRepr) -> Result<Self> {
        EmissionSpec::new(r.states)
    }
}

impl EmissionSpec {
    /// `states[i][c]` is the distribution of channel `c` in state `i`.
    pub fn new(states: Vec<Vec<Emission>>) -> Result<Self> {
        let Some(first) = states.first() else {
            return Err(Error::input("emission spec has no states"));
        };
        if first.is_empty() {
            return Err(Error::input("emission spec has no channels"));
        }
        for (i, s) in states.iter().enumerate() {
            if s.len() != first.len() {
                return Err(Error::Dimension {
                    what: "emission channels",
                    expected: first.len(),
                    actual: s.len(),
                });
            }
            for (c, (e, f)) in s.iter().zip(first).enumerate() {
                if e.family() != f.family() {
                    return Err(Error::input(format!(
                        "state {} channel {} uses {:?} but state 1 uses {:?}",
                        i + 1,
                        c + 1,
                        e.family(),
                        f.family()
                    )));
                }
                e.validate()?;
            }
        }
        Ok(Self { states })
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_channels(&self) -> usize {
        self.states[0].len()
    }

    pub fn families(&self) -> Vec<Family> {
        self.states[0].iter().map(Emission::family).collect()
    }

    pub fn get(&self, state: usize, channel: usize) -> &Emission {
        &self.states[state][channel]
    }

    pub fn state(&self, state: usize) -> &[Emission] {
        &self.states[state]
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            states: perm.iter().map(|&k| self.states[k].clone()).collect(),
        }
    }

    /// Sum of channel log densities; missing cells contribute 0.
    #[inline]
    pub fn log_density_row(&self, state: usize, x: &[Option<f64>]) -> f64 {
        self.states[state]
            .iter()
            .zip(x)
            .filter_map(|(e, v)| v.map(|v| e.log_density(v)))
            .sum()
    }

    /// First channel whose non-missing value lies outside its family support.
    pub fn support_violation(&self, state: usize, x: &[Option<f64>]) -> Option<usize> {
        self.states[state]
            .iter()
            .zip(x)
            .position(|(e, v)| matches!(v, Some(v) if !e.in_support(*v)))
    }
}

/// Joint density of an observation row under `state`.
///
/// Missing channels contribute a factor of 1. Values outside a family's
/// support give density 0; use [`EmissionSpec::support_violation`] to find
/// the offending channel.
pub fn emission_density(spec: &EmissionSpec, state: usize, x: &[Option<f64>]) -> Result<f64> {
    if state >= spec.n_states() {
        return Err(Error::input(format!(
            "state index {state} out of range for {} states",
            spec.n_states()
        )));
    }
    if x.len() != spec.n_channels() {
        return Err(Error::Dimension {
            what: "observation row",
            expected: spec.n_channels(),
            actual: x.len(),
        });
    }
    if let Some(c) = spec.support_violation(state, x) {
        log::debug!("channel {c} value {:?} outside support", x[c]);
        return Ok(0.0);
    }
    Ok(spec.log_density_row(state, x).exp())
}
