//! Recovering n̄ and T from measured spectra and pulse-height histograms.
//!
//! α = (S₁−ρ₁)/(S₂−ρ₁) = n̄(1−T)/(1+n̄(1−T)) fixes n̄(1−T) = α/(1−α), and
//! β = n̄T is the mean detected atom number per pulse. Together they give
//! n̄ = α/(1−α) + β and T = β/n̄. Uncertainties are propagated to first order.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::peakfit::{fit_peak, PeakFit, PeakModel};
use crate::spectrum::SpectrumGrid;

/// A value with its 1σ uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub value: f64,
    pub sigma: f64,
}

impl Measurement {
    pub fn new(value: f64, sigma: f64) -> Self {
        Self { value, sigma }
    }

    pub fn exact(value: f64) -> Self {
        Self { value, sigma: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub alpha: Measurement,
    pub beta: Measurement,
    pub nbar: Measurement,
    pub efficiency: Measurement,
    pub rho2: Option<Measurement>,
}

/// α = A₁/A₂ with A_N = S_N − ρ₁.
pub fn alpha_from_amplitudes(a1: Measurement, a2: Measurement) -> Result<Measurement> {
    if !(a2.value > 0.0) {
        return Err(Error::Inconsistent(format!(
            "two-atom resonance amplitude must be positive, got {}",
            a2.value
        )));
    }
    if a1.value < 0.0 {
        return Err(Error::Inconsistent(format!(
            "single-atom resonance amplitude is negative ({})",
            a1.value
        )));
    }
    let alpha = a1.value / a2.value;
    if alpha >= 1.0 {
        return Err(Error::Inconsistent(format!(
            "alpha = {alpha:.4} >= 1; the model requires the single-atom resonance to be weaker than the two-atom one"
        )));
    }
    let sigma = ((a1.sigma / a2.value).powi(2) + (a1.value * a2.sigma / (a2.value * a2.value)).powi(2)).sqrt();
    Ok(Measurement::new(alpha, sigma))
}

/// α predicted from n̄ and T.
pub fn alpha_forward(nbar: f64, efficiency: f64) -> f64 {
    let x = nbar * (1.0 - efficiency);
    x / (1.0 + x)
}

/// Result of reading β off the peak integrals P̄₁, P̄₂, ….
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaEstimate {
    pub beta: Measurement,
    /// Indices k (1-based) for which P̄_{k+1}/P̄_k disagrees with β/(k+1) by more than 3σ.
    pub inconsistent_ratios: Vec<usize>,
}

/// β = 2 P̄₂/P̄₁ from integrated peak counts (Poisson counting errors).
pub fn beta_from_integrals(integrals: &[f64]) -> Result<BetaEstimate> {
    let (p1, p2) = match integrals {
        [p1, p2, ..] => (*p1, *p2),
        _ => return Err(Error::Underdetermined("need at least the one- and two-atom peak integrals".into())),
    };
    if !(p1 > 0.0) {
        return Err(Error::Inconsistent("single-atom peak integral must be positive".into()));
    }
    if p2 == 0.0 {
        return Ok(BetaEstimate {
            beta: Measurement::new(0.0, 2.0 / p1),
            inconsistent_ratios: Vec::new(),
        });
    }
    let beta = 2.0 * p2 / p1;
    let sigma = beta * (1.0 / p1 + 1.0 / p2).sqrt();

    let mut inconsistent = Vec::new();
    for k in 2..integrals.len() {
        let (a, b) = (integrals[k - 1], integrals[k]);
        if a <= 0.0 || b <= 0.0 {
            continue;
        }
        let ratio = b / a;
        let expected = beta / (k + 1) as f64;
        let ratio_sigma = ratio * (1.0 / a + 1.0 / b).sqrt();
        let expected_sigma = sigma / (k + 1) as f64;
        let combined = (ratio_sigma.powi(2) + expected_sigma.powi(2)).sqrt();
        if (ratio - expected).abs() > 3.0 * combined {
            warn!("peak ratio P{}/P{} = {ratio:.4} departs from Poisson value {expected:.4}", k + 1, k);
            inconsistent.push(k);
        }
    }
    Ok(BetaEstimate {
        beta: Measurement::new(beta, sigma),
        inconsistent_ratios: inconsistent,
    })
}

/// n̄ = α/(1−α) + β, T = β/n̄.
pub fn invert(alpha: Measurement, beta: Measurement) -> Result<EstimateResult> {
    let a = alpha.value;
    let b = beta.value;
    if !(a < 1.0) {
        return Err(Error::Inconsistent(format!("alpha = {a} must be < 1")));
    }
    if b < 0.0 {
        return Err(Error::Inconsistent(format!("beta = {b} must be >= 0")));
    }
    if b == 0.0 {
        return Err(Error::Indeterminate("beta = 0: no detected atoms, T cannot be determined".into()));
    }
    let undetected = a / (1.0 - a);
    let nbar = undetected + b;
    let t = b / nbar;
    if t > 1.0 {
        return Err(Error::Inconsistent(format!(
            "recovered efficiency T = {t:.4} exceeds 1 (alpha = {a} is negative)"
        )));
    }
    let dn_da = 1.0 / (1.0 - a).powi(2);
    let nbar_sigma = ((dn_da * alpha.sigma).powi(2) + beta.sigma.powi(2)).sqrt();
    let dt_da = -b / (nbar * nbar) * dn_da;
    let dt_db = undetected / (nbar * nbar);
    let t_sigma = ((dt_da * alpha.sigma).powi(2) + (dt_db * beta.sigma).powi(2)).sqrt();
    Ok(EstimateResult {
        alpha,
        beta,
        nbar: Measurement::new(nbar, nbar_sigma),
        efficiency: Measurement::new(t, t_sigma),
        rho2: None,
    })
}

/// Fit of ρ₂^res from resonance amplitudes A_N.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rho2Fit {
    pub rho2: Measurement,
    /// A_N minus the fitted prediction, in input order.
    pub residuals: Vec<f64>,
}

/// Least squares of A_N = ρ₂[N − 1 + n̄(1−T)] with the offset fixed by (n̄, T).
/// `amplitudes` are (N, A_N) pairs; their σ weight the fit when positive.
pub fn rho2_from_signals(amplitudes: &[(u32, Measurement)], nbar: f64, efficiency: f64) -> Result<Rho2Fit> {
    let offset = nbar * (1.0 - efficiency);
    let weighted = amplitudes.iter().all(|(_, a)| a.sigma > 0.0);
    let rows: Vec<(f64, f64, f64)> = amplitudes
        .iter()
        .map(|&(n, a)| {
            let w = if weighted { 1.0 / (a.sigma * a.sigma) } else { 1.0 };
            ((n as f64 - 1.0) + offset, a.value, w)
        })
        .collect();
    let sxx: f64 = rows.iter().map(|(x, _, w)| w * x * x).sum();
    if rows.is_empty() || !(sxx > 0.0) {
        return Err(Error::Underdetermined(
            "need at least one amplitude with N − 1 + n̄(1−T) > 0".into(),
        ));
    }
    let sxy: f64 = rows.iter().map(|(x, y, w)| w * x * y).sum();
    let slope = sxy / sxx;
    let residuals: Vec<f64> = rows.iter().map(|(x, y, _)| y - slope * x).collect();
    let sigma = if weighted {
        (1.0 / sxx).sqrt()
    } else if rows.len() > 1 {
        let ss: f64 = residuals.iter().map(|r| r * r).sum();
        (ss / (rows.len() - 1) as f64 / sxx).sqrt()
    } else {
        0.0
    };
    Ok(Rho2Fit {
        rho2: Measurement::new(slope, sigma),
        residuals,
    })
}

/// Straight line y = intercept + slope·x with parameter errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: Measurement,
    pub intercept: Measurement,
    pub chi2: f64,
}

/// Weighted straight-line fit; points are (x, y, σ_y). With any σ ≤ 0 the
/// fit is unweighted and errors come from the residual scatter.
pub fn fit_line(points: &[(f64, f64, f64)]) -> Result<LineFit> {
    if points.len() < 2 {
        return Err(Error::Underdetermined("a line needs two points".into()));
    }
    let weighted = points.iter().all(|p| p.2 > 0.0);
    let w = |s: f64| if weighted { 1.0 / (s * s) } else { 1.0 };
    let (mut s, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y, sig) in points {
        let wi = w(sig);
        s += wi;
        sx += wi * x;
        sy += wi * y;
        sxx += wi * x * x;
        sxy += wi * x * y;
    }
    let det = s * sxx - sx * sx;
    if !(det.abs() > 0.0) {
        return Err(Error::Underdetermined("all x values coincide".into()));
    }
    let slope = (s * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    let chi2: f64 = points
        .iter()
        .map(|&(x, y, sig)| w(sig) * (y - intercept - slope * x).powi(2))
        .sum();
    let scale = if weighted {
        1.0
    } else if points.len() > 2 {
        chi2 / (points.len() - 2) as f64
    } else {
        0.0
    };
    Ok(LineFit {
        slope: Measurement::new(slope, (s / det * scale).sqrt()),
        intercept: Measurement::new(intercept, (sxx / det * scale).sqrt()),
        chi2,
    })
}

/// Resonance amplitudes extracted from a measured spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAmplitudes {
    pub fits: Vec<(u32, PeakFit)>,
}

impl ChannelAmplitudes {
    pub fn amplitude(&self, atoms: u32) -> Option<Measurement> {
        self.fits
            .iter()
            .find(|(n, _)| *n == atoms)
            .map(|(_, f)| Measurement::new(f.amplitude, f.errors[0]))
    }
}

/// Fits every channel of `grid` and reads the amplitude above background at
/// the fitted center. When `rho1` is given it replaces the fitted background.
pub fn channel_amplitudes(grid: &SpectrumGrid, model: PeakModel, rho1: Option<f64>) -> Result<ChannelAmplitudes> {
    let mut fits = Vec::new();
    for ch in &grid.channels {
        let mut fit = fit_peak(&grid.axis, &ch.values, ch.errors.as_deref(), model)?;
        if let Some(r) = rho1 {
            fit.amplitude += fit.background - r;
            fit.background = r;
        }
        fits.push((ch.atoms, fit));
    }
    Ok(ChannelAmplitudes { fits })
}

/// Full inversion from spectra amplitudes and histogram peak integrals.
pub fn estimate(amplitudes: &ChannelAmplitudes, integrals: &[f64]) -> Result<EstimateResult> {
    let a1 = amplitudes
        .amplitude(1)
        .ok_or_else(|| Error::Underdetermined("spectra lack the N = 1 channel".into()))?;
    let a2 = amplitudes
        .amplitude(2)
        .ok_or_else(|| Error::Underdetermined("spectra lack the N = 2 channel".into()))?;
    let alpha = alpha_from_amplitudes(a1, a2)?;
    let beta = beta_from_integrals(integrals)?.beta;
    let mut result = invert(alpha, beta)?;
    let pairs: Vec<(u32, Measurement)> = amplitudes
        .fits
        .iter()
        .map(|(n, f)| (*n, Measurement::new(f.amplitude, f.errors[0])))
        .collect();
    result.rho2 = Some(rho2_with_offset_errors(&pairs, result.nbar.value, result.efficiency.value)?.rho2);
    Ok(result)
}

/// [`rho2_from_signals`] with σ(ρ₂) that also carries the uncertainty of the
/// offset, which is estimated from the same A₁ and A₂.
pub fn rho2_with_offset_errors(amplitudes: &[(u32, Measurement)], nbar: f64, efficiency: f64) -> Result<Rho2Fit> {
    let mut fit = rho2_from_signals(amplitudes, nbar, efficiency)?;
    if let Some(sigma) = rho2_sigma_with_offset(amplitudes)? {
        fit.rho2.sigma = sigma;
    }
    Ok(fit)
}

/// σ of ρ₂ when the offset n̄(1−T) = A₁/(A₂ − A₁) comes from the same
/// amplitudes as the fit. Central differences over every A_N with the fit
/// weights held fixed. `None` without errors or without both N = 1 and 2.
fn rho2_sigma_with_offset(pairs: &[(u32, Measurement)]) -> Result<Option<f64>> {
    let has = |n: u32| pairs.iter().any(|(m, _)| *m == n);
    if !pairs.iter().all(|(_, a)| a.sigma > 0.0) || !has(1) || !has(2) {
        return Ok(None);
    }
    let value_of = |n: u32, v: &[f64]| pairs.iter().position(|(m, _)| *m == n).map(|k| v[k]);
    let slope = |v: &[f64]| -> Result<f64> {
        let (Some(a1), Some(a2)) = (value_of(1, v), value_of(2, v)) else {
            return Err(Error::Underdetermined("spectra lack the N = 1 or N = 2 channel".into()));
        };
        let rows: Vec<(u32, Measurement)> = pairs
            .iter()
            .zip(v)
            .map(|(&(n, a), &y)| (n, Measurement::new(y, a.sigma)))
            .collect();
        // n̄ = x + 1, T = 1/n̄ reproduces the offset x exactly
        let x = a1 / (a2 - a1);
        Ok(rho2_from_signals(&rows, x + 1.0, 1.0 / (x + 1.0))?.rho2.value)
    };
    let base: Vec<f64> = pairs.iter().map(|(_, a)| a.value).collect();
    let mut var = 0.0;
    for (k, (_, a)) in pairs.iter().enumerate() {
        let h = 1e-3 * a.sigma;
        let mut up = base.clone();
        let mut down = base.clone();
        up[k] += h;
        down[k] -= h;
        let d = (slope(&up)? - slope(&down)?) / (2.0 * h);
        var += (d * a.sigma).powi(2);
    }
    Ok(Some(var.sqrt()))
}
