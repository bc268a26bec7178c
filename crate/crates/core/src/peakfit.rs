//! Single-peak nonlinear least squares (Levenberg–Marquardt).

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::interaction::{half_max_width, sinc, SINC2_HALF_POINT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeakModel {
    /// Frozen-gas line: sinc² of the detuning.
    Sinc2,
    Lorentzian,
    /// Two-sided exponential with a pointed top.
    Cusp,
}

impl PeakModel {
    /// Peak shape normalized to 1 at the center and 1/2 at ±fwhm/2.
    pub fn shape(&self, x: f64, center: f64, fwhm: f64) -> f64 {
        let u = (x - center) / fwhm;
        match self {
            PeakModel::Sinc2 => {
                let s = sinc(2.0 * SINC2_HALF_POINT * u);
                s * s
            }
            PeakModel::Lorentzian => 1.0 / (1.0 + 4.0 * u * u),
            PeakModel::Cusp => (-2.0 * std::f64::consts::LN_2 * u.abs()).exp(),
        }
    }

    pub fn eval(&self, x: f64, p: &[f64; 4]) -> f64 {
        p[3] + p[0] * self.shape(x, p[1], p[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakFit {
    pub model: PeakModel,
    /// Height above background.
    pub amplitude: f64,
    pub center: f64,
    pub fwhm: f64,
    pub background: f64,
    /// 1σ errors in the order amplitude, center, fwhm, background.
    pub errors: [f64; 4],
    pub chi2: f64,
    pub dof: usize,
    pub iterations: usize,
}

const MAX_ITERATIONS: usize = 500;

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let s: f64 = (row + 1..4).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

fn invert4(a: [[f64; 4]; 4]) -> Option<[[f64; 4]; 4]> {
    let mut inv = [[0.0; 4]; 4];
    for col in 0..4 {
        let mut e = [0.0; 4];
        e[col] = 1.0;
        let x = solve4(a, e)?;
        for row in 0..4 {
            inv[row][col] = x[row];
        }
    }
    Some(inv)
}

struct Problem<'a> {
    model: PeakModel,
    x: &'a [f64],
    y: &'a [f64],
    w: &'a [f64],
}

impl Problem<'_> {
    fn chi2(&self, p: &[f64; 4]) -> f64 {
        self.x
            .iter()
            .zip(self.y)
            .zip(self.w)
            .map(|((&x, &y), &w)| {
                let r = y - self.model.eval(x, p);
                w * r * r
            })
            .sum()
    }

    fn normal_equations(&self, p: &[f64; 4], scale: &[f64; 4]) -> ([[f64; 4]; 4], [f64; 4]) {
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        let steps: [f64; 4] = std::array::from_fn(|j| 1e-7 * p[j].abs().max(scale[j]));
        for ((&x, &y), &w) in self.x.iter().zip(self.y).zip(self.w) {
            let r = y - self.model.eval(x, p);
            let grad: [f64; 4] = std::array::from_fn(|j| {
                let mut up = *p;
                let mut dn = *p;
                up[j] += steps[j];
                dn[j] -= steps[j];
                (self.model.eval(x, &up) - self.model.eval(x, &dn)) / (2.0 * steps[j])
            });
            for a in 0..4 {
                jtr[a] += w * grad[a] * r;
                for b in 0..4 {
                    jtj[a][b] += w * grad[a] * grad[b];
                }
            }
        }
        (jtj, jtr)
    }
}

/// Fits one peak plus constant background. Points with `None` values are
/// skipped; `errors`, when given, weight points by 1/σ² and the reported
/// parameter errors are then unscaled, otherwise they are scaled by the
/// reduced χ².
pub fn fit_peak(
    axis: &[f64],
    values: &[Option<f64>],
    errors: Option<&[Option<f64>]>,
    model: PeakModel,
) -> Result<PeakFit> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut w = Vec::new();
    for (k, (&ax, v)) in axis.iter().zip(values).enumerate() {
        let Some(v) = *v else { continue };
        let weight = match errors {
            Some(e) => match e.get(k).copied().flatten() {
                Some(s) if s > 0.0 => 1.0 / (s * s),
                _ => continue,
            },
            None => 1.0,
        };
        x.push(ax);
        y.push(v);
        w.push(weight);
    }
    if x.len() < 5 {
        return Err(Error::Underdetermined(format!("{} usable points for a 4-parameter peak", x.len())));
    }

    // initial guess from the raw data
    let n_edge = (x.len() / 5).max(1);
    let background = (y[..n_edge].iter().sum::<f64>() + y[y.len() - n_edge..].iter().sum::<f64>()) / (2 * n_edge) as f64;
    let (top, &ymax) = y.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let span = x[x.len() - 1] - x[0];
    let lifted: Vec<f64> = y.iter().map(|v| v - background).collect();
    let width = half_max_width(&x, &lifted).unwrap_or(span / 4.0);
    let mut p = [ymax - background, x[top], width, background];
    let scale = [ymax.abs().max(1e-12), span, span, ymax.abs().max(1e-12)];

    let problem = Problem {
        model,
        x: &x,
        y: &y,
        w: &w,
    };
    let mut chi2 = problem.chi2(&p);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (jtj, jtr) = problem.normal_equations(&p, &scale);
        let mut improved = false;
        while lambda < 1e16 {
            let mut damped = jtj;
            for k in 0..4 {
                damped[k][k] += lambda * jtj[k][k].max(1e-300);
            }
            let Some(step) = solve4(damped, jtr) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = p;
            for k in 0..4 {
                trial[k] += step[k];
            }
            trial[2] = trial[2].abs();
            let trial_chi2 = problem.chi2(&trial);
            if trial_chi2.is_finite() && trial_chi2 <= chi2 {
                let small_step = (0..4).all(|k| step[k].abs() <= 1e-10 * (p[k].abs() + scale[k] * 1e-6));
                let gain = chi2 - trial_chi2;
                p = trial;
                let old = chi2;
                chi2 = trial_chi2;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if small_step || gain <= 1e-14 * old || chi2 < 1e-28 * scale[0] * scale[0] {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged || !improved {
            converged = converged || !improved && lambda >= 1e16;
            break;
        }
    }
    if !converged {
        return Err(Error::FitFailure {
            iterations,
            chi2,
            reason: "iteration limit reached".into(),
        });
    }
    if !(p[2] > 0.0) {
        return Err(Error::FitFailure {
            iterations,
            chi2,
            reason: "width collapsed to zero".into(),
        });
    }
    if span < 2.0 * p[2] {
        return Err(domain(format!(
            "grid span {span:.4e} covers less than twice the fitted FWHM {:.4e}",
            p[2]
        )));
    }

    let dof = x.len().saturating_sub(4).max(1);
    let (jtj, _) = problem.normal_equations(&p, &scale);
    let cov_scale = if errors.is_some() { 1.0 } else { chi2 / dof as f64 };
    let errors = match invert4(jtj) {
        Some(inv) => std::array::from_fn(|k| (inv[k][k] * cov_scale).max(0.0).sqrt()),
        None => [f64::NAN; 4],
    };
    Ok(PeakFit {
        model,
        amplitude: p[0],
        center: p[1],
        fwhm: p[2],
        background: p[3],
        errors,
        chi2,
        dof,
        iterations,
    })
}
