//! Channeltron pulse-height response.
//!
//! A pulse produced by k simultaneously detected atoms has a Gaussian
//! amplitude around the k-th of a set of equidistant centers. Atom numbers
//! are assigned by amplitude windows; overlapping Gaussians cause
//! misassignment, quantified by [`misassignment_matrix`].

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WidthScaling {
    /// Every peak has the base width.
    Constant,
    /// Width grows as √k.
    Sqrt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramModel {
    centers: Vec<f64>,
    widths: Vec<f64>,
    weights: Vec<f64>,
    windows: Vec<(f64, f64)>,
}

impl HistogramModel {
    /// Peak `k` (1-based) has `centers[k-1]`, `widths[k-1]` and is assigned
    /// through `windows[k-1]` (half-open, volts). Weights are normalized.
    pub fn new(centers: Vec<f64>, widths: Vec<f64>, weights: Vec<f64>, windows: Vec<(f64, f64)>) -> Result<Self> {
        let k = centers.len();
        if k == 0 || widths.len() != k || weights.len() != k || windows.len() != k {
            return Err(domain("histogram model needs equal, non-zero numbers of centers, widths, weights and windows"));
        }
        if widths.iter().any(|&w| !(w >= 0.0)) {
            return Err(domain("peak widths must be >= 0"));
        }
        if windows.iter().any(|&(lo, hi)| !(hi > lo)) {
            return Err(domain("assignment windows must have hi > lo"));
        }
        if windows.windows(2).any(|w| w[1].0 < w[0].1) {
            return Err(domain("assignment windows must be disjoint and ordered"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|&w| w < 0.0) {
            return Err(domain("peak weights must be non-negative with a positive sum"));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self {
            centers,
            widths,
            weights,
            windows,
        })
    }

    /// Centers at k·spacing, windows bounded by midpoints between centers.
    pub fn equidistant(max_atoms: u32, spacing: f64, width: f64, scaling: WidthScaling) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(domain("peak spacing must be positive"));
        }
        let ks = 1..=max_atoms;
        let centers: Vec<f64> = ks.clone().map(|k| k as f64 * spacing).collect();
        let widths = ks
            .clone()
            .map(|k| match scaling {
                WidthScaling::Constant => width,
                WidthScaling::Sqrt => width * (k as f64).sqrt(),
            })
            .collect();
        let bounds: Vec<f64> = (0..=max_atoms).map(|k| (k as f64 + 0.5) * spacing).collect();
        let windows = bounds.windows(2).map(|b| (b[0], b[1])).collect();
        Self::new(centers, widths, vec![1.0; max_atoms as usize], windows)
    }

    /// Five peaks 0.4 V apart (single-atom window 0.2–0.6 V, two-atom
    /// 0.6–1.0 V), base width 0.1 V growing as √k.
    pub fn channeltron_preset() -> Self {
        Self::equidistant(5, 0.4, 0.1, WidthScaling::Sqrt).expect("valid preset")
    }

    /// Zero-width peaks: every pulse lands on its center.
    pub fn delta(max_atoms: u32, spacing: f64) -> Result<Self> {
        Self::equidistant(max_atoms, spacing, 0.0, WidthScaling::Constant)
    }

    pub fn with_weights(self, weights: Vec<f64>) -> Result<Self> {
        Self::new(self.centers, self.widths, weights, self.windows)
    }

    pub fn max_atoms(&self) -> u32 {
        self.centers.len() as u32
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn windows(&self) -> &[(f64, f64)] {
        &self.windows
    }

    /// Center and width for `k` atoms; beyond the modeled range the last
    /// spacing and width are carried forward.
    pub fn peak(&self, k: u32) -> (f64, f64) {
        let n = self.centers.len();
        let idx = k as usize;
        if idx >= 1 && idx <= n {
            return (self.centers[idx - 1], self.widths[idx - 1]);
        }
        let step = if n >= 2 {
            self.centers[n - 1] - self.centers[n - 2]
        } else {
            self.centers[0]
        };
        let extra = idx as f64 - n as f64;
        (self.centers[n - 1] + extra * step, self.widths[n - 1])
    }

    pub fn sample_amplitude<R: Rng + ?Sized>(&self, k: u32, rng: &mut R) -> f64 {
        let (c, w) = self.peak(k);
        if w == 0.0 {
            c
        } else {
            Normal::new(c, w).expect("finite width").sample(rng)
        }
    }

    /// Mixture density Σ_k w_k N(x; c_k, σ_k); zero-width peaks are skipped.
    pub fn density(&self, x: f64) -> f64 {
        self.centers
            .iter()
            .zip(&self.widths)
            .zip(&self.weights)
            .filter(|((_, &s), _)| s > 0.0)
            .map(|((&c, &s), &w)| {
                let z = (x - c) / s;
                w * (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
            })
            .sum()
    }
}

/// Window lookup; `None` when the amplitude falls outside every window.
pub fn assign_n(amplitude: f64, model: &HistogramModel) -> Option<u32> {
    model
        .windows
        .iter()
        .position(|&(lo, hi)| amplitude >= lo && amplitude < hi)
        .map(|k| k as u32 + 1)
}

/// P(X < x) for X ~ N(c, σ); a step function when σ = 0.
fn normal_cdf(x: f64, c: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return if x > c { 1.0 } else { 0.0 };
    }
    0.5 * erfc(-(x - c) / (sigma * std::f64::consts::SQRT_2))
}

/// Row k−1 gives P(assigned = N | true = k) for N = 1..=K, followed by the
/// probability of landing outside every window.
pub fn misassignment_matrix(model: &HistogramModel) -> Vec<Vec<f64>> {
    let k_max = model.max_atoms();
    (1..=k_max)
        .map(|k| {
            let (c, s) = model.peak(k);
            let mass = |lo: f64, hi: f64| normal_cdf(hi, c, s) - normal_cdf(lo, c, s);
            let mut row: Vec<f64> = model.windows.iter().map(|&(lo, hi)| mass(lo, hi)).collect();
            let first = model.windows[0].0;
            let last = model.windows[model.windows.len() - 1].1;
            let gaps: f64 = model.windows.windows(2).map(|w| mass(w[0].1, w[1].0)).sum();
            let outside = normal_cdf(first, c, s) + gaps + (1.0 - normal_cdf(last, c, s));
            row.push(outside);
            row
        })
        .collect()
}

/// Estimated true counts per atom number from observed window counts,
/// undoing the spill between overlapping peaks: solves Σ_k x_k M[k→j] = obs_j.
/// Events with more atoms than the model holds are neglected.
pub fn unfold_window_counts(observed: &[f64], model: &HistogramModel) -> Result<Vec<f64>> {
    let k = model.max_atoms() as usize;
    if observed.len() != k {
        return Err(domain(format!("{} window counts for a {k}-peak model", observed.len())));
    }
    let m = misassignment_matrix(model);
    // a[j][i] = M[i→j]
    let mut a: Vec<Vec<f64>> = (0..k).map(|j| (0..k).map(|i| m[i][j]).collect()).collect();
    let mut b = observed.to_vec();
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() < 1e-12 {
            return Err(domain("misassignment matrix is singular; peaks overlap too strongly to unfold"));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..k {
            let f = a[row][col] / a[col][col];
            for c in col..k {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; k];
    for row in (0..k).rev() {
        let s: f64 = (row + 1..k).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Ok(x)
}

/// Fixed-width binned amplitude histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedHistogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl BinnedHistogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(hi > lo) || bins == 0 {
            return Err(domain("histogram range must be non-empty with at least one bin"));
        }
        Ok(Self {
            lo,
            hi,
            counts: vec![0; bins],
        })
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn edges(&self, bin: usize) -> (f64, f64) {
        let w = self.bin_width();
        (self.lo + w * bin as f64, self.lo + w * (bin + 1) as f64)
    }

    /// Amplitudes outside `[lo, hi)` are dropped.
    pub fn fill(&mut self, x: f64) {
        if x >= self.lo && x < self.hi {
            let k = ((x - self.lo) / self.bin_width()) as usize;
            let k = k.min(self.counts.len() - 1);
            self.counts[k] += 1;
        }
    }

    /// Sum of bins whose centers lie in `[lo, hi)`.
    pub fn integral(&self, lo: f64, hi: f64) -> u64 {
        (0..self.counts.len())
            .filter(|&k| {
                let (a, b) = self.edges(k);
                let mid = 0.5 * (a + b);
                mid >= lo && mid < hi
            })
            .map(|k| self.counts[k])
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds the counts of a histogram with identical binning.
    pub fn merge(&mut self, other: &BinnedHistogram) -> Result<()> {
        if self.lo != other.lo || self.hi != other.hi || self.counts.len() != other.counts.len() {
            return Err(domain("cannot merge histograms with different binning"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Draws one amplitude per non-empty detection event and bins it.
pub fn synthesize_histogram<I, R>(
    detected_counts: I,
    model: &HistogramModel,
    rng: &mut R,
    mut hist: BinnedHistogram,
) -> BinnedHistogram
where
    I: IntoIterator<Item = u64>,
    R: Rng + ?Sized,
{
    for k in detected_counts {
        if k > 0 {
            hist.fill(model.sample_amplitude(k as u32, rng));
        }
    }
    hist
}

/// Integrated counts within each assignment window.
pub fn peak_integrals(hist: &BinnedHistogram, model: &HistogramModel) -> Vec<u64> {
    model.windows.iter().map(|&(lo, hi)| hist.integral(lo, hi)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::aux_stream;
    use crate::statistics::poisson_pmf;
    use rand_distr::Poisson;

    #[test]
    fn unfolding_inverts_the_misassignment_matrix() {
        let m = HistogramModel::channeltron_preset();
        let truth = [1000.0, 600.0, 220.0, 60.0, 13.0];
        let mat = misassignment_matrix(&m);
        let observed: Vec<f64> = (0..5).map(|j| (0..5).map(|k| truth[k] * mat[k][j]).sum()).collect();
        let back = unfold_window_counts(&observed, &m).unwrap();
        for (b, t) in back.iter().zip(&truth) {
            assert!((b - t).abs() < 1e-9, "{b} vs {t}");
        }
        assert!(unfold_window_counts(&observed[..3], &m).is_err());
    }

    #[test]
    fn unfolding_removes_overlap_bias_in_peak_ratio() {
        let m = HistogramModel::channeltron_preset();
        let mut rng = aux_stream(31, 0);
        let pois = Poisson::new(0.6).unwrap();
        let counts: Vec<u64> = (0..400_000).map(|_| pois.sample(&mut rng) as u64).collect();
        let hist = synthesize_histogram(counts, &m, &mut rng, BinnedHistogram::new(0.0, 2.6, 130).unwrap());
        let raw: Vec<f64> = peak_integrals(&hist, &m).iter().map(|&c| c as f64).collect();
        let unfolded = unfold_window_counts(&raw, &m).unwrap();
        let beta = 2.0 * unfolded[1] / unfolded[0];
        let sigma = beta * (1.0 / unfolded[0] + 1.0 / unfolded[1]).sqrt();
        assert!((beta - 0.6).abs() < 4.0 * sigma, "{beta}");
    }

    #[test]
    fn preset_windows_match_channeltron_split() {
        let m = HistogramModel::channeltron_preset();
        let w = m.windows();
        assert!((w[0].0 - 0.2).abs() < 1e-12 && (w[0].1 - 0.6).abs() < 1e-12);
        assert!((w[1].0 - 0.6).abs() < 1e-12 && (w[1].1 - 1.0).abs() < 1e-12);
        assert_eq!(assign_n(0.4, &m), Some(1));
        assert_eq!(assign_n(0.8, &m), Some(2));
        assert_eq!(assign_n(0.1, &m), None);
        assert_eq!(assign_n(5.0, &m), None);
    }

    #[test]
    fn center_assigns_to_own_peak() {
        let m = HistogramModel::channeltron_preset();
        for k in 1..=5 {
            assert_eq!(assign_n(m.peak(k).0, &m), Some(k));
        }
    }

    #[test]
    fn preset_fidelities() {
        let m = misassignment_matrix(&HistogramModel::channeltron_preset());
        assert!(m[0][0] > 0.90, "{}", m[0][0]);
        assert!(m[1][1] > 0.80, "{}", m[1][1]);
    }

    #[test]
    fn rows_sum_to_one() {
        let windows = vec![(0.2, 0.55), (0.65, 1.0), (1.1, 1.3)];
        let m = HistogramModel::new(vec![0.4, 0.8, 1.2], vec![0.1, 0.2, 0.3], vec![1.0; 3], windows).unwrap();
        for row in misassignment_matrix(&m) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "{s}");
        }
    }

    #[test]
    fn zero_width_gives_identity() {
        let m = misassignment_matrix(&HistogramModel::delta(4, 0.4).unwrap());
        for (k, row) in m.iter().enumerate() {
            for (n, &v) in row.iter().enumerate() {
                assert_eq!(v, if k == n { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn width_equal_to_spacing_mixes_strongly() {
        let m = HistogramModel::equidistant(5, 0.4, 0.4, WidthScaling::Constant).unwrap();
        let mat = misassignment_matrix(&m);
        // erf(0.5/√2) oracle
        let oracle = 1.0 - erfc(0.5 / std::f64::consts::SQRT_2);
        assert!((mat[2][2] - oracle).abs() < 1e-12);
        assert!(mat.iter().enumerate().all(|(k, r)| r[k] < 0.7));
    }

    #[test]
    fn fidelity_decreases_with_width() {
        let mut last = 1.0;
        for step in 1..40 {
            let w = 0.01 * step as f64;
            let m = HistogramModel::equidistant(5, 0.4, w, WidthScaling::Sqrt).unwrap();
            let f = misassignment_matrix(&m)[0][0];
            assert!(f <= last);
            last = f;
        }
        assert!(last < 0.5);
    }

    #[test]
    fn rejects_overlapping_windows() {
        let r = HistogramModel::new(vec![1.0, 2.0], vec![0.1; 2], vec![1.0; 2], vec![(0.5, 1.6), (1.5, 2.5)]);
        assert!(r.is_err());
    }

    #[test]
    fn unimodal_histogram_for_single_atoms() {
        let m = HistogramModel::channeltron_preset();
        let mut rng = aux_stream(3, 0);
        let h = synthesize_histogram(std::iter::repeat_n(1u64, 20_000), &m, &mut rng, BinnedHistogram::new(0.0, 2.4, 48).unwrap());
        let (peak_bin, _) = h.counts.iter().enumerate().max_by_key(|(_, &c)| c).unwrap();
        let (a, b) = h.edges(peak_bin);
        assert!(a <= 0.45 && b >= 0.35);
        // strictly falls off beyond the neighbouring bins
        let far = h.integral(1.0, 2.4);
        assert!(far < 20);
    }

    #[test]
    fn peak_integrals_follow_poisson_ratios() {
        let m = HistogramModel::delta(8, 0.4).unwrap();
        let mut rng = aux_stream(11, 0);
        let poisson = Poisson::new(2.2).unwrap();
        let counts: Vec<u64> = (0..400_000).map(|_| poisson.sample(&mut rng) as u64).collect();
        let h = synthesize_histogram(counts, &m, &mut rng, BinnedHistogram::new(0.0, 4.0, 200).unwrap());
        let integrals = peak_integrals(&h, &m);
        for k in 1..4usize {
            let (a, b) = (integrals[k - 1] as f64, integrals[k] as f64);
            let ratio = b / a;
            let expected = poisson_pmf(2.2, k as u64 + 1) / poisson_pmf(2.2, k as u64);
            let sigma = ratio * (1.0 / a + 1.0 / b).sqrt();
            assert!((ratio - expected).abs() < 3.0 * sigma, "k={k}: {ratio} vs {expected}");
        }
    }

    #[test]
    fn mixture_density_integrates_to_one() {
        let m = HistogramModel::channeltron_preset();
        let dx = 1e-4;
        let total: f64 = (0..40_000).map(|k| m.density(-1.0 + dx * (k as f64 + 0.5)) * dx).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }
}
