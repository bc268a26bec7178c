//! Analytical post-selected signals S_N.
//!
//! Given N detected atoms, the number i of atoms actually excited in that
//! pulse follows a known conditional law: N + Poisson(n̄(1−T)) for weak
//! excitation and N + Binomial(N₀−N, n̄(1−T)/(N₀−n̄T)) for strong
//! excitation. S_N is the average of the per-atom 37P population ρ_i under
//! that law. [`Kernel`] holds the conditional weights; the full, reduced,
//! and closed forms below are built on it.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::statistics::{
    binomial_pmf, detected_pmf, excitation_pmf, ln_binomial, poisson_truncation, xlogy, DetectionModel,
    ExcitationModel, Regime, POISSON_TAIL,
};

/// Source of the resonant parts ρ_i^res.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spectra {
    /// ρ_i^res for i = 1, 2, … (index 0 holds i = 1).
    Explicit(Vec<f64>),
    /// ρ_i^res = (i − 1) ρ₂^res.
    Linear { rho2: f64 },
}

impl Spectra {
    fn max_value(&self) -> f64 {
        match self {
            Spectra::Explicit(v) => v.iter().copied().fold(0.0, f64::max),
            // unbounded in i; checked per evaluated term instead
            Spectra::Linear { .. } => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalInputs {
    pub excitation: ExcitationModel,
    pub detection: DetectionModel,
    pub rho1: f64,
    pub spectra: Spectra,
    /// Number of laser pulses Z.
    pub pulses: u64,
    /// Extend a short explicit list with the linear rule instead of failing.
    pub extrapolate: bool,
}

impl SignalInputs {
    pub fn new(
        excitation: ExcitationModel,
        detection: DetectionModel,
        rho1: f64,
        spectra: Spectra,
        pulses: u64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho1) {
            return Err(domain(format!("background rho1 must lie in [0, 1], got {rho1}")));
        }
        if pulses < 1 {
            return Err(domain("number of pulses Z must be >= 1"));
        }
        if rho1 + spectra.max_value() > 1.0 {
            return Err(domain("rho1 + max rho_res exceeds 1"));
        }
        if let Spectra::Explicit(v) = &spectra {
            if v.iter().any(|&r| r < 0.0) {
                return Err(domain("resonant spectra must be non-negative"));
            }
        }
        Ok(Self {
            excitation,
            detection,
            rho1,
            spectra,
            pulses,
            extrapolate: false,
        })
    }

    pub fn with_extrapolation(mut self, on: bool) -> Self {
        self.extrapolate = on;
        self
    }

    pub fn with_spectra(&self, spectra: Spectra) -> Self {
        Self {
            spectra,
            ..self.clone()
        }
    }

    /// ρ_i^res.
    pub fn rho_res(&self, i: u64) -> Result<f64> {
        match &self.spectra {
            Spectra::Linear { rho2 } => Ok(i.saturating_sub(1) as f64 * rho2),
            Spectra::Explicit(v) => match v.get(i as usize - 1) {
                Some(&r) => Ok(r),
                None if self.extrapolate && v.len() >= 2 => Ok((i - 1) as f64 * v[1]),
                None => Err(Error::TruncationInsufficient {
                    available: v.len(),
                    required: i as usize,
                }),
            },
        }
    }

    /// ρ_i = ρ₁ + ρ_i^res.
    pub fn rho(&self, i: u64) -> Result<f64> {
        Ok(self.rho1 + self.rho_res(i)?)
    }
}

/// Conditional weights of i given N detected atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub detected: u64,
    /// weights[k] is the weight of i = detected + k.
    pub weights: Vec<f64>,
}

impl Kernel {
    pub fn new(excitation: &ExcitationModel, detection: &DetectionModel, detected: u64) -> Result<Self> {
        if detected < 1 {
            return Err(domain("post-selected atom number must be >= 1"));
        }
        let t = detection.efficiency();
        let nbar = excitation.mean();
        let x = nbar * (1.0 - t);
        let weights = match excitation.regime() {
            Regime::Weak => {
                let k_max = poisson_truncation(x, POISSON_TAIL);
                let mut w = Vec::with_capacity(k_max as usize + 1);
                let mut term = (-x).exp();
                for k in 0..=k_max {
                    if k > 0 {
                        term *= x / k as f64;
                    }
                    w.push(term);
                }
                w
            }
            Regime::Strong => {
                let n0 = excitation.ground_atoms();
                if detected > n0 {
                    return Err(domain(format!("N = {detected} exceeds N0 = {n0}")));
                }
                let n0f = n0 as f64;
                if nbar * t >= n0f {
                    return Err(domain("strong-regime kernel requires n̄T < N0"));
                }
                let m = n0 - detected;
                let ln_norm = (m as f64) * (n0f - nbar * t).ln();
                let mut w = Vec::new();
                let mut sum = 0.0;
                let mode = (m as f64 * x / (n0f - nbar * t)).ceil() as u64;
                for k in 0..=m {
                    let ln = ln_binomial(m, k) + xlogy(k as f64, x) + xlogy((m - k) as f64, n0f - nbar) - ln_norm;
                    let term = ln.exp();
                    w.push(term);
                    sum += term;
                    if k > mode && term < 1e-18 * sum {
                        break;
                    }
                }
                w
            }
        };
        Ok(Self { detected, weights })
    }

    pub fn max_excited(&self) -> u64 {
        self.detected + self.weights.len() as u64 - 1
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.weights
            .iter()
            .enumerate()
            .map(move |(k, &w)| (self.detected + k as u64, w))
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

fn check_unit_interval(v: f64) -> Result<f64> {
    if (-1e-12..=1.0 + 1e-12).contains(&v) {
        Ok(v.clamp(0.0, 1.0))
    } else {
        Err(domain(format!("signal {v} left [0, 1]; rho1 + rho_res must stay <= 1")))
    }
}

/// S_N from an arbitrary list of full populations, `rho[i - 1]` = ρ_i.
pub fn s_n_full_from(
    excitation: &ExcitationModel,
    detection: &DetectionModel,
    rho: &[f64],
    detected: u64,
) -> Result<f64> {
    let kernel = Kernel::new(excitation, detection, detected)?;
    if (kernel.max_excited() as usize) > rho.len() {
        return Err(Error::TruncationInsufficient {
            available: rho.len(),
            required: kernel.max_excited() as usize,
        });
    }
    Ok(kernel.iter().map(|(i, w)| w * rho[i as usize - 1]).sum())
}

/// S_N as the weighted sum of full populations ρ_i = ρ₁ + ρ_i^res.
pub fn s_n_full(inputs: &SignalInputs, detected: u64) -> Result<f64> {
    let kernel = Kernel::new(&inputs.excitation, &inputs.detection, detected)?;
    let mut s = 0.0;
    for (i, w) in kernel.iter() {
        s += w * inputs.rho(i)?;
    }
    check_unit_interval(s)
}

/// S_N = ρ₁ + weighted sum of ρ_i^res.
pub fn s_n_reduced(inputs: &SignalInputs, detected: u64) -> Result<f64> {
    let kernel = Kernel::new(&inputs.excitation, &inputs.detection, detected)?;
    let mut s = 0.0;
    for (i, w) in kernel.iter() {
        s += w * inputs.rho_res(i)?;
    }
    check_unit_interval(inputs.rho1 + s)
}

/// Closed form of S_N under the linear rule ρ_i^res = (i − 1) ρ₂^res.
///
/// Weak: ρ₁ + ρ₂[N − 1 + n̄(1−T)].
/// Strong: ρ₁ + ρ₂[N − 1 + n̄(1−T)(1 − N/N₀)/(1 − n̄T/N₀)], which is the
/// conditional mean of i − N under the binomial kernel.
pub fn s_n_closed(inputs: &SignalInputs, detected: u64) -> Result<f64> {
    let rho2 = match inputs.spectra {
        Spectra::Linear { rho2 } => rho2,
        Spectra::Explicit(_) => return Err(domain("closed form needs the linear spectra rule")),
    };
    if detected < 1 {
        return Err(domain("post-selected atom number must be >= 1"));
    }
    let offset = undetected_mean(&inputs.excitation, &inputs.detection, detected)?;
    Ok(inputs.rho1 + rho2 * ((detected - 1) as f64 + offset))
}

/// Expected number of undetected excited atoms given `detected` detected ones.
pub fn undetected_mean(excitation: &ExcitationModel, detection: &DetectionModel, detected: u64) -> Result<f64> {
    let t = detection.efficiency();
    let x = excitation.mean() * (1.0 - t);
    match excitation.regime() {
        Regime::Weak => Ok(x),
        Regime::Strong => {
            let n0 = excitation.ground_atoms() as f64;
            let nt = excitation.mean() * t;
            if nt >= n0 {
                return Err(domain("closed strong form requires n̄T < N0"));
            }
            Ok(x * (1.0 - detected as f64 / n0) / (1.0 - nt / n0))
        }
    }
}

/// The strong-regime offset with the (1 − n̄/N₀) numerator factor. It agrees
/// with [`undetected_mean`] only when N = n̄ or N₀ → ∞; kept for comparison.
pub fn closed_strong_printed(excitation: &ExcitationModel, detection: &DetectionModel) -> f64 {
    let n0 = excitation.ground_atoms() as f64;
    let nbar = excitation.mean();
    let t = detection.efficiency();
    nbar * (1.0 - t) * (1.0 - nbar / n0) / (1.0 - nbar * t / n0)
}

/// Expected accumulated counts for N detected atoms over Z pulses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedCounts {
    /// n_N(37P).
    pub transferred: f64,
    /// n_N(37S) + n_N(36P).
    pub remaining: f64,
}

impl ExpectedCounts {
    pub fn total(&self) -> f64 {
        self.transferred + self.remaining
    }

    pub fn signal(&self) -> f64 {
        self.transferred / self.total()
    }
}

/// Accumulated counts summed directly over excitation probabilities P_i and
/// binomial detection factors.
pub fn expected_counts(inputs: &SignalInputs, detected: u64) -> Result<ExpectedCounts> {
    let kernel = Kernel::new(&inputs.excitation, &inputs.detection, detected)?;
    let t = inputs.detection.efficiency();
    let z = inputs.pulses as f64;
    let nf = detected as f64;
    let mut counts = ExpectedCounts {
        transferred: 0.0,
        remaining: 0.0,
    };
    for i in detected..=kernel.max_excited() {
        let weight = z * nf * excitation_pmf(&inputs.excitation, i) * binomial_pmf(i, detected, t);
        let rho = inputs.rho(i)?;
        counts.transferred += weight * rho;
        counts.remaining += weight * (1.0 - rho);
    }
    Ok(counts)
}

/// Z·N·P̄_N, the total number of atoms recorded in the N-atom channel.
pub fn expected_total(inputs: &SignalInputs, detected: u64) -> f64 {
    inputs.pulses as f64 * detected as f64 * detected_pmf(&inputs.excitation, &inputs.detection, detected)
}
