//! Shot-level simulation of excitation, pair transfer, detection and
//! post-selection.
//!
//! Each shot samples the excited atom number, gives every excited atom a
//! 37P probability ρ₁ + Σ_m |a_nm|², realizes the populations, thins them
//! by the detection efficiency and assigns an atom number from the pulse
//! height. Shots are grouped into fixed-size shards that run in parallel;
//! every shot owns a counter-addressed random stream and the accumulators
//! hold exact integer sums, so results do not depend on the thread count.

use log::warn;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{assign_n, BinnedHistogram, HistogramModel};
use crate::error::{domain, Result};
use crate::interaction::{
    constant_pair_probability, BeamCoupling, BeamParameters, EnsembleGeometry, Motion, PairKinematics, Shape,
};
use crate::quadrature::Tolerance;
use crate::rng::{shot_stream, ShotRng};
use crate::statistics::{sample_excited_count, thin_count, ExcitationModel};
use crate::units::K_B;

/// Default number of shots per parallel work unit.
pub const DEFAULT_SHARD_SIZE: u64 = 4096;

/// Upper bound on detailed shot records returned by [`shot_log`].
pub const SHOT_LOG_LIMIT: u64 = 1_000_000;

/// Placement attempts per atom before the hard-core constraint is dropped.
const PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingModel {
    /// Every pair carries the ensemble mean-square coupling.
    Averaged,
    /// Atoms are placed at random and every pair coupling is computed from
    /// its separation (and, in a beam, its relative motion).
    Positions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub excitation: ExcitationModel,
    /// Detection efficiency in [0, 1]; 0 is allowed here.
    pub efficiency: f64,
    /// Background 37P probability per atom.
    pub rho1: f64,
    /// Interaction time t₀, s.
    pub interaction_time: f64,
    pub motion: Motion,
    pub coupling: CouplingModel,
    /// Mean-square pair coupling Ω², rad²/s² (averaged mode).
    pub omega_sq: f64,
    /// Pair coupling at the mean spacing, rad/s (positions mode).
    pub omega0: f64,
    pub geometry: EnsembleGeometry,
    /// Hard-core pair distance, m.
    pub min_distance: f64,
    pub beam: BeamParameters,
    pub detector: HistogramModel,
    /// When false the assigned N is the detected count.
    pub use_detector: bool,
    pub histogram_bins: usize,
    pub shard_size: u64,
}

impl McConfig {
    /// Frozen gas with averaged coupling and an ideal counting detector.
    pub fn frozen(
        excitation: ExcitationModel,
        efficiency: f64,
        rho1: f64,
        interaction_time: f64,
        omega_sq: f64,
        geometry: EnsembleGeometry,
    ) -> Self {
        Self {
            excitation,
            efficiency,
            rho1,
            interaction_time,
            motion: Motion::Frozen,
            coupling: CouplingModel::Averaged,
            omega_sq,
            omega0: 0.0,
            geometry,
            min_distance: geometry.mean_spacing(),
            beam: BeamParameters::sodium(600.0),
            detector: HistogramModel::channeltron_preset(),
            use_detector: false,
            histogram_bins: 130,
            shard_size: DEFAULT_SHARD_SIZE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(domain("detection efficiency must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.rho1) {
            return Err(domain("background probability must lie in [0, 1]"));
        }
        if !(self.interaction_time > 0.0) {
            return Err(domain("interaction time must be positive"));
        }
        if !(self.omega_sq >= 0.0 && self.omega0 >= 0.0) {
            return Err(domain("couplings must be non-negative"));
        }
        if !(self.min_distance > 0.0) {
            return Err(domain("minimum pair distance must be positive"));
        }
        if self.shard_size == 0 || self.histogram_bins == 0 {
            return Err(domain("shard size and histogram bins must be positive"));
        }
        Ok(())
    }

    /// Amplitude range of the pulse-height histogram: from 0 to one window
    /// width past the last window, so equidistant windows fall on bin edges
    /// when the bin count is a multiple of the number of spacings.
    pub fn histogram_range(&self) -> (f64, f64) {
        let &(lo, hi) = self.detector.windows().last().expect("model has a window");
        (0.0, hi + (hi - lo))
    }

    fn empty_histogram(&self) -> BinnedHistogram {
        let (lo, hi) = self.histogram_range();
        BinnedHistogram::new(lo, hi, self.histogram_bins).expect("positive range")
    }
}

/// Per-grid-point quantities shared by every shot.
#[derive(Debug, Clone, Copy)]
struct PointPlan {
    detuning: f64,
    /// Per-pair transfer probability in averaged mode.
    pair_probability: f64,
}

/// Pair transfer probability with the ensemble mean-square coupling: Ω²t₀²sinc²
/// in a frozen gas; in a beam, one representative fly-by at speed v₀ with
/// impact parameter R₀ and closest approach mid-pulse.
pub fn mean_pair_probability(cfg: &McConfig, detuning: f64) -> f64 {
    let t0 = cfg.interaction_time;
    match cfg.motion {
        Motion::Frozen => constant_pair_probability(cfg.omega_sq, t0, detuning),
        Motion::Beam => {
            let r0 = cfg.geometry.mean_spacing();
            let kin = PairKinematics {
                speed: cfg.beam.most_probable_speed(),
                impact: r0,
                peak_time: 0.5 * t0,
            };
            BeamCoupling::new(kin, cfg.omega_sq.sqrt(), r0)
                .expect("positive spacing")
                .amplitude(detuning, t0, pair_tolerance())
                .norm_sqr()
        }
    }
}

fn plan_point(cfg: &McConfig, detuning: f64) -> PointPlan {
    let pair_probability = match cfg.coupling {
        CouplingModel::Averaged => mean_pair_probability(cfg, detuning),
        CouplingModel::Positions => 0.0,
    };
    PointPlan {
        detuning,
        pair_probability,
    }
}

fn pair_tolerance() -> Tolerance {
    Tolerance {
        relative: 1e-6,
        absolute: 1e-9,
        max_intervals: 2000,
    }
}

/// Everything realized in one shot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub shot: u64,
    pub excited: u64,
    /// Atom positions, m (positions mode with detail only).
    pub positions: Vec<[f64; 3]>,
    /// Atom velocities, m/s (beam positions mode with detail only).
    pub velocities: Vec<[f64; 3]>,
    /// |a_nm|² for n < m (positions mode with detail only).
    pub pair_probabilities: Vec<f64>,
    /// Mean per-atom 37P probability in this shot, before clamping.
    pub rho: f64,
    /// Excited atoms that ended in 37P.
    pub transferred: u64,
    pub detected_37p: u64,
    pub detected_other: u64,
    pub amplitude: Option<f64>,
    pub assigned: Option<u32>,
    pub clamped: bool,
}

impl ShotRecord {
    pub fn detected(&self) -> u64 {
        self.detected_37p + self.detected_other
    }
}

fn uniform_point<R: Rng + ?Sized>(geom: &EnsembleGeometry, rng: &mut R) -> [f64; 3] {
    let l = geom.extent();
    match geom.shape() {
        Shape::Cube => [rng.random::<f64>() * l, rng.random::<f64>() * l, rng.random::<f64>() * l],
        Shape::Sphere => loop {
            let p = [
                (2.0 * rng.random::<f64>() - 1.0) * l,
                (2.0 * rng.random::<f64>() - 1.0) * l,
                (2.0 * rng.random::<f64>() - 1.0) * l,
            ];
            if p.iter().map(|c| c * c).sum::<f64>() <= l * l {
                break p;
            }
        },
    }
}

fn dist_sq(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

fn place_atoms<R: Rng + ?Sized>(cfg: &McConfig, count: usize, rng: &mut R) -> Vec<[f64; 3]> {
    let r2 = cfg.min_distance * cfg.min_distance;
    let mut atoms: Vec<[f64; 3]> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut p = uniform_point(&cfg.geometry, rng);
        for _ in 1..PLACEMENT_ATTEMPTS {
            if atoms.iter().all(|a| dist_sq(a, &p) >= r2) {
                break;
            }
            p = uniform_point(&cfg.geometry, rng);
        }
        atoms.push(p);
    }
    atoms
}

/// |a_nm|² for every unordered pair, in (0,1), (0,2), …, (1,2), … order.
fn pair_probabilities<R: Rng + ?Sized>(
    cfg: &McConfig,
    detuning: f64,
    positions: &[[f64; 3]],
    velocities: &[[f64; 3]],
    rng: &mut R,
) -> Vec<f64> {
    let n = positions.len();
    let r0 = cfg.geometry.mean_spacing();
    let t0 = cfg.interaction_time;
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for a in 0..n {
        for b in a + 1..n {
            let r = dist_sq(&positions[a], &positions[b]).sqrt().max(cfg.min_distance);
            let p = match cfg.motion {
                Motion::Frozen => {
                    let omega = cfg.omega0 * (r0 / r).powi(3);
                    constant_pair_probability(omega * omega, t0, detuning)
                }
                Motion::Beam => {
                    let rel: Vec<f64> = (0..3).map(|k| positions[b][k] - positions[a][k]).collect();
                    let vel: Vec<f64> = (0..3).map(|k| velocities[b][k] - velocities[a][k]).collect();
                    let speed = vel.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let impact = if speed > 0.0 {
                        let c = [
                            rel[1] * vel[2] - rel[2] * vel[1],
                            rel[2] * vel[0] - rel[0] * vel[2],
                            rel[0] * vel[1] - rel[1] * vel[0],
                        ];
                        c.iter().map(|x| x * x).sum::<f64>().sqrt() / speed
                    } else {
                        r
                    };
                    let kin = PairKinematics {
                        speed,
                        impact: impact.max(cfg.min_distance),
                        peak_time: rng.random::<f64>() * t0,
                    };
                    BeamCoupling::new(kin, cfg.omega0, r0)
                        .expect("impact floored at a positive distance")
                        .amplitude(detuning, t0, pair_tolerance())
                        .norm_sqr()
                }
            };
            out.push(p);
        }
    }
    out
}

fn run_shot_planned(cfg: &McConfig, plan: &PointPlan, shot: u64, rng: &mut ShotRng, detail: bool) -> ShotRecord {
    let excited = sample_excited_count(&cfg.excitation, rng);
    let mut record = ShotRecord {
        shot,
        excited,
        positions: Vec::new(),
        velocities: Vec::new(),
        pair_probabilities: Vec::new(),
        rho: cfg.rho1,
        transferred: 0,
        detected_37p: 0,
        detected_other: 0,
        amplitude: None,
        assigned: None,
        clamped: false,
    };

    let transferred = match cfg.coupling {
        CouplingModel::Averaged => {
            let q = cfg.rho1 + excited.saturating_sub(1) as f64 * plan.pair_probability;
            record.rho = q;
            let q = if q > 1.0 {
                record.clamped = true;
                1.0
            } else {
                q
            };
            if excited == 0 || q == 0.0 {
                0
            } else {
                Binomial::new(excited, q).expect("probability in [0, 1]").sample(rng)
            }
        }
        CouplingModel::Positions => {
            let n = excited as usize;
            let positions = place_atoms(cfg, n, rng);
            let velocities = if cfg.motion == Motion::Beam {
                let s = (K_B * cfg.beam.temperature / cfg.beam.mass).sqrt();
                let normal = Normal::new(0.0, s).expect("positive thermal speed");
                (0..n)
                    .map(|_| [normal.sample(rng), normal.sample(rng), normal.sample(rng)])
                    .collect()
            } else {
                Vec::new()
            };
            let pairs = pair_probabilities(cfg, plan.detuning, &positions, &velocities, rng);
            let mut per_atom = vec![cfg.rho1; n];
            let mut k = 0;
            for a in 0..n {
                for b in a + 1..n {
                    per_atom[a] += pairs[k];
                    per_atom[b] += pairs[k];
                    k += 1;
                }
            }
            if n > 0 {
                record.rho = per_atom.iter().sum::<f64>() / n as f64;
            }
            let mut count = 0;
            for q in per_atom {
                if q > 1.0 {
                    record.clamped = true;
                }
                if rng.random::<f64>() < q.min(1.0) {
                    count += 1;
                }
            }
            if detail {
                record.positions = positions;
                record.velocities = velocities;
                record.pair_probabilities = pairs;
            }
            count
        }
    };
    record.transferred = transferred;
    record.detected_37p = thin_count(transferred, cfg.efficiency, rng);
    record.detected_other = thin_count(excited - transferred, cfg.efficiency, rng);

    let detected = record.detected();
    if detected > 0 {
        let amp = cfg.detector.sample_amplitude(detected as u32, rng);
        record.amplitude = Some(amp);
        record.assigned = if cfg.use_detector {
            assign_n(amp, &cfg.detector)
        } else {
            Some(detected as u32)
        };
    }
    record
}

/// Simulates shot `shot` at grid point `grid_index` (detuning `detuning`, rad/s).
pub fn run_shot(cfg: &McConfig, detuning: f64, seed: u64, grid_index: u64, shot: u64) -> ShotRecord {
    let plan = plan_point(cfg, detuning);
    let mut rng = shot_stream(seed, grid_index, shot);
    run_shot_planned(cfg, &plan, shot, &mut rng, true)
}

/// Integer sums behind a ratio estimate Σx/Σd over shots.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatioSums {
    pub shots: u64,
    pub numerator: u64,
    pub denominator: u64,
    pub numerator_sq: u128,
    pub denominator_sq: u128,
    pub cross: u128,
}

impl RatioSums {
    pub fn add(&mut self, x: u64, d: u64) {
        self.shots += 1;
        self.numerator += x;
        self.denominator += d;
        self.numerator_sq += (x as u128) * (x as u128);
        self.denominator_sq += (d as u128) * (d as u128);
        self.cross += (x as u128) * (d as u128);
    }

    pub fn merge(&mut self, other: &RatioSums) {
        self.shots += other.shots;
        self.numerator += other.numerator;
        self.denominator += other.denominator;
        self.numerator_sq += other.numerator_sq;
        self.denominator_sq += other.denominator_sq;
        self.cross += other.cross;
    }

    /// Σx/Σd, or `None` when no denominator was accumulated.
    pub fn ratio(&self) -> Option<f64> {
        (self.denominator > 0).then(|| self.numerator as f64 / self.denominator as f64)
    }

    /// Delta-method standard error of the ratio from the shot-to-shot
    /// scatter of x − R d. Needs at least two shots.
    pub fn standard_error(&self) -> Option<f64> {
        let r = self.ratio()?;
        if self.shots < 2 {
            return None;
        }
        let k = self.shots as f64;
        let mean_d = self.denominator as f64 / k;
        let ss = self.numerator_sq as f64 - 2.0 * r * self.cross as f64 + r * r * self.denominator_sq as f64;
        let var = ss.max(0.0) / (k - 1.0);
        Some((var / k).sqrt() / mean_d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalEstimate {
    pub value: f64,
    pub stderr: Option<f64>,
    pub shots: u64,
}

/// Post-selected 37P fractions at one grid point.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostSelectedAccumulator {
    /// Index N − 1: detected 37P atoms over all detected atoms, for shots assigned N.
    channels: Vec<RatioSums>,
    /// Detected-count frequencies, index = detected atoms (including 0).
    detected_counts: Vec<u64>,
    /// Transferred over excited atoms, all shots.
    excited: RatioSums,
    shots: u64,
    unassigned: u64,
    clamped: u64,
}

impl PostSelectedAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, shot: &ShotRecord) {
        self.shots += 1;
        let d = shot.detected() as usize;
        if self.detected_counts.len() <= d {
            self.detected_counts.resize(d + 1, 0);
        }
        self.detected_counts[d] += 1;
        self.excited.add(shot.transferred, shot.excited);
        if shot.clamped {
            self.clamped += 1;
        }
        match shot.assigned {
            Some(n) if n > 0 => {
                let idx = n as usize - 1;
                if self.channels.len() <= idx {
                    self.channels.resize(idx + 1, RatioSums::default());
                }
                self.channels[idx].add(shot.detected_37p, shot.detected());
            }
            _ if d > 0 => self.unassigned += 1,
            _ => {}
        }
    }

    pub fn merge(&mut self, other: &PostSelectedAccumulator) {
        if self.channels.len() < other.channels.len() {
            self.channels.resize(other.channels.len(), RatioSums::default());
        }
        for (a, b) in self.channels.iter_mut().zip(&other.channels) {
            a.merge(b);
        }
        if self.detected_counts.len() < other.detected_counts.len() {
            self.detected_counts.resize(other.detected_counts.len(), 0);
        }
        for (a, b) in self.detected_counts.iter_mut().zip(&other.detected_counts) {
            *a += b;
        }
        self.excited.merge(&other.excited);
        self.shots += other.shots;
        self.unassigned += other.unassigned;
        self.clamped += other.clamped;
    }

    /// S_N, or `None` when no shot was assigned N.
    pub fn signal(&self, atoms: u32) -> Option<SignalEstimate> {
        let sums = self.channel_sums(atoms)?;
        Some(SignalEstimate {
            value: sums.ratio()?,
            stderr: sums.standard_error(),
            shots: sums.shots,
        })
    }

    pub fn channel_sums(&self, atoms: u32) -> Option<&RatioSums> {
        if atoms == 0 {
            return None;
        }
        self.channels.get(atoms as usize - 1).filter(|s| s.shots > 0)
    }

    /// Largest N with at least one assigned shot.
    pub fn max_assigned(&self) -> u32 {
        self.channels.iter().rposition(|s| s.shots > 0).map_or(0, |k| k as u32 + 1)
    }

    /// Mean 37P fraction over all excited atoms, before detection.
    pub fn excited_fraction(&self) -> Option<SignalEstimate> {
        Some(SignalEstimate {
            value: self.excited.ratio()?,
            stderr: self.excited.standard_error(),
            shots: self.excited.shots,
        })
    }

    pub fn detected_counts(&self) -> &[u64] {
        &self.detected_counts
    }

    pub fn total_detected(&self) -> u64 {
        self.detected_counts.iter().enumerate().map(|(d, &c)| d as u64 * c).sum()
    }

    pub fn shots(&self) -> u64 {
        self.shots
    }

    pub fn unassigned(&self) -> u64 {
        self.unassigned
    }

    pub fn clamped(&self) -> u64 {
        self.clamped
    }
}

/// Per-grid-point accumulators plus the pulse-height histogram of all shots.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub detunings: Vec<f64>,
    pub points: Vec<PostSelectedAccumulator>,
    pub histogram: BinnedHistogram,
    pub shots_per_point: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeRow {
    pub atoms: u32,
    /// S_N − ρ₁ at the grid point nearest zero detuning.
    pub amplitude: f64,
    pub stderr: Option<f64>,
    pub shots: u64,
}

impl SweepResult {
    /// S_N over the grid; `None` where no shot was assigned N.
    pub fn channel(&self, atoms: u32) -> Vec<Option<SignalEstimate>> {
        self.points.iter().map(|p| p.signal(atoms)).collect()
    }

    pub fn max_assigned(&self) -> u32 {
        self.points.iter().map(|p| p.max_assigned()).max().unwrap_or(0)
    }

    pub fn clamped(&self) -> u64 {
        self.points.iter().map(|p| p.clamped()).sum()
    }

    /// Index of the grid point closest to resonance.
    pub fn resonance_index(&self) -> Option<usize> {
        (0..self.detunings.len()).min_by(|&a, &b| self.detunings[a].abs().total_cmp(&self.detunings[b].abs()))
    }

    /// Resonance amplitude S_N − ρ₁ for N = 1..=max_atoms.
    pub fn amplitude_table(&self, rho1: f64, max_atoms: u32) -> Vec<AmplitudeRow> {
        let Some(k) = self.resonance_index() else {
            return Vec::new();
        };
        (1..=max_atoms)
            .filter_map(|n| {
                let s = self.points[k].signal(n)?;
                Some(AmplitudeRow {
                    atoms: n,
                    amplitude: s.value - rho1,
                    stderr: s.stderr,
                    shots: s.shots,
                })
            })
            .collect()
    }
}

fn run_shard(cfg: &McConfig, plan: &PointPlan, seed: u64, grid: u64, first: u64, count: u64) -> (PostSelectedAccumulator, BinnedHistogram) {
    let mut acc = PostSelectedAccumulator::new();
    let mut hist = cfg.empty_histogram();
    for shot in first..first + count {
        let mut rng = shot_stream(seed, grid, shot);
        let rec = run_shot_planned(cfg, plan, shot, &mut rng, false);
        if let Some(a) = rec.amplitude {
            hist.fill(a);
        }
        acc.add(&rec);
    }
    (acc, hist)
}

/// Runs `shots` shots at every detuning (rad/s) on the current rayon pool.
pub fn sweep(cfg: &McConfig, detunings: &[f64], shots: u64, seed: u64) -> Result<SweepResult> {
    cfg.validate()?;
    let plans: Vec<PointPlan> = detunings.iter().map(|&d| plan_point(cfg, d)).collect();
    let shard = cfg.shard_size;
    let shards_per_point = shots.div_ceil(shard);
    let tasks: Vec<(usize, u64)> = (0..plans.len())
        .flat_map(|g| (0..shards_per_point).map(move |s| (g, s)))
        .collect();
    let parts: Vec<(usize, PostSelectedAccumulator, BinnedHistogram)> = tasks
        .into_par_iter()
        .map(|(g, s)| {
            let first = s * shard;
            let count = shard.min(shots - first);
            let (acc, hist) = run_shard(cfg, &plans[g], seed, g as u64, first, count);
            (g, acc, hist)
        })
        .collect();

    let mut points = vec![PostSelectedAccumulator::new(); plans.len()];
    let mut histogram = cfg.empty_histogram();
    for (g, acc, hist) in &parts {
        points[*g].merge(acc);
        histogram.merge(hist)?;
    }
    let result = SweepResult {
        detunings: detunings.to_vec(),
        points,
        histogram,
        shots_per_point: shots,
        seed,
    };
    let clamped = result.clamped();
    if clamped > 0 {
        warn!("{clamped} shots had a 37P probability above 1 and were clamped; the perturbative model is breaking down");
    }
    Ok(result)
}

/// Detailed records for every shot; refuses more than [`SHOT_LOG_LIMIT`] records.
pub fn shot_log(cfg: &McConfig, detunings: &[f64], shots: u64, seed: u64) -> Result<Vec<(usize, ShotRecord)>> {
    cfg.validate()?;
    let total = shots.saturating_mul(detunings.len() as u64);
    if total > SHOT_LOG_LIMIT {
        return Err(domain(format!(
            "shot log would hold {total} records, more than the limit of {SHOT_LOG_LIMIT}"
        )));
    }
    let mut out = Vec::with_capacity(total as usize);
    for (g, &d) in detunings.iter().enumerate() {
        let plan = plan_point(cfg, d);
        for shot in 0..shots {
            let mut rng = shot_stream(seed, g as u64, shot);
            out.push((g, run_shot_planned(cfg, &plan, shot, &mut rng, true)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interaction::frozen_value;
    use crate::signal::{s_n_closed, SignalInputs, Spectra};
    use crate::statistics::{detected_pmf, poisson_pmf, DetectionModel};
    use crate::units::per_cm3;

    fn geometry() -> EnsembleGeometry {
        EnsembleGeometry::new(per_cm3(8e10), Shape::Cube, 50e-6).unwrap()
    }

    fn frozen_config(nbar: f64, t: f64, rho1: f64, rho2: f64) -> McConfig {
        let t0 = 3e-6;
        let geom = geometry();
        let exc = ExcitationModel::weak(nbar, geom.ground_atoms().round() as u64).unwrap();
        McConfig::frozen(exc, t, rho1, t0, rho2 / (t0 * t0), geom)
    }

    fn record(assigned: Option<u32>, x: u64, other: u64) -> ShotRecord {
        ShotRecord {
            shot: 0,
            excited: x + other,
            positions: Vec::new(),
            velocities: Vec::new(),
            pair_probabilities: Vec::new(),
            rho: 0.0,
            transferred: x,
            detected_37p: x,
            detected_other: other,
            amplitude: None,
            assigned,
            clamped: false,
        }
    }

    #[test]
    fn zero_efficiency_never_detects() {
        let cfg = frozen_config(3.0, 0.0, 0.1, 0.02);
        for shot in 0..2000 {
            let r = run_shot(&cfg, 0.0, 5, 0, shot);
            assert_eq!(r.detected(), 0);
            assert_eq!(r.assigned, None);
        }
    }

    #[test]
    fn single_atoms_only_see_background() {
        let mut cfg = frozen_config(3.0, 1.0, 0.0, 0.05);
        cfg.coupling = CouplingModel::Positions;
        cfg.omega0 = 1e9;
        cfg.excitation = ExcitationModel::strong(1, 1.0).unwrap();
        for shot in 0..500 {
            let r = run_shot(&cfg, 0.0, 1, 0, shot);
            assert_eq!(r.excited, 1);
            assert_eq!(r.transferred, 0);
        }
    }

    #[test]
    fn detected_never_exceeds_excited() {
        let mut cfg = frozen_config(4.0, 0.6, 0.05, 0.02);
        cfg.use_detector = true;
        for shot in 0..3000 {
            let r = run_shot(&cfg, 1e5, 2, 1, shot);
            assert!(r.detected() <= r.excited);
            assert!(r.transferred <= r.excited);
        }
    }

    #[test]
    fn accumulator_bookkeeping() {
        let mut acc = PostSelectedAccumulator::new();
        for _ in 0..3 {
            acc.add(&record(Some(2), 1, 1));
        }
        acc.add(&record(Some(2), 0, 2));
        acc.add(&record(Some(1), 1, 0));
        acc.add(&record(None, 0, 0));
        let s2 = acc.signal(2).unwrap();
        assert_eq!(s2.value, 3.0 / 8.0);
        assert_eq!(s2.shots, 4);
        assert_eq!(acc.signal(1).unwrap().value, 1.0);
        assert!(acc.signal(3).is_none());
        assert_eq!(acc.total_detected(), 9);
        assert_eq!(acc.detected_counts(), &[1, 1, 4]);
    }

    #[test]
    fn empty_bins_are_missing() {
        let mut acc = PostSelectedAccumulator::new();
        for _ in 0..10 {
            acc.add(&record(None, 0, 0));
        }
        assert!((1..6).all(|n| acc.signal(n).is_none()));
    }

    #[test]
    fn merge_is_order_independent() {
        let recs: Vec<ShotRecord> = (0..40u64).map(|k| record(Some(1 + (k % 3) as u32), k % 2, k % 3)).collect();
        let mut whole = PostSelectedAccumulator::new();
        recs.iter().for_each(|r| whole.add(r));
        let mut a = PostSelectedAccumulator::new();
        let mut b = PostSelectedAccumulator::new();
        recs[..17].iter().for_each(|r| a.add(r));
        recs[17..].iter().for_each(|r| b.add(r));
        let mut ba = b.clone();
        ba.merge(&a);
        a.merge(&b);
        assert_eq!(a, whole);
        assert_eq!(ba, whole);
    }

    #[test]
    fn ratio_standard_error_matches_iid_binomial_case() {
        // one detected atom per shot: the ratio SE reduces to √(p(1−p)/(K−1))·√((K−1)/K)
        let mut s = RatioSums::default();
        for k in 0..1000u64 {
            s.add(u64::from(k % 4 == 0), 1);
        }
        let p: f64 = 0.25;
        let expect = (p * (1.0 - p) / 1000.0 * 1000.0 / 999.0).sqrt();
        assert!((s.standard_error().unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn excited_fraction_matches_mixture() {
        let (nbar, rho1, rho2) = (2.0, 0.01, 0.02);
        let cfg = frozen_config(nbar, 0.5, rho1, rho2);
        let res = sweep(&cfg, &[0.0], 1_000_000, 77).unwrap();
        let est = res.points[0].excited_fraction().unwrap();
        // Σ i P_i ρ_i / n̄ with ρ_i = ρ₁ + (i−1)ρ₂
        let oracle: f64 = (1..60u64)
            .map(|i| i as f64 * poisson_pmf(nbar, i) * (rho1 + (i - 1) as f64 * rho2))
            .sum::<f64>()
            / nbar;
        assert!((est.value - oracle).abs() < 3.0 * est.stderr.unwrap(), "{} vs {oracle}", est.value);
    }

    #[test]
    fn ideal_detector_frozen_signals_follow_pair_count() {
        let (nbar, rho1, rho2) = (2.0, 0.01, 0.02);
        let cfg = frozen_config(nbar, 1.0, rho1, rho2);
        let res = sweep(&cfg, &[0.0], 400_000, 3).unwrap();
        for n in 1..=4u32 {
            let s = res.points[0].signal(n).unwrap();
            let expect = rho1 + frozen_value(cfg.omega_sq, n, cfg.interaction_time, 0.0);
            assert!((s.value - expect).abs() < 3.0 * s.stderr.unwrap(), "N={n}: {} vs {expect}", s.value);
        }
    }

    #[test]
    fn finite_efficiency_matches_analytic_signal() {
        let (nbar, t, rho1, rho2) = (2.0, 0.5, 0.01, 0.02);
        let cfg = frozen_config(nbar, t, rho1, rho2);
        let res = sweep(&cfg, &[0.0], 300_000, 11).unwrap();
        let inputs = SignalInputs::new(
            cfg.excitation,
            DetectionModel::new(t).unwrap(),
            rho1,
            Spectra::Linear { rho2 },
            1,
        )
        .unwrap();
        for n in 1..=3u32 {
            let s = res.points[0].signal(n).unwrap();
            let expect = s_n_closed(&inputs, n as u64).unwrap();
            assert!((s.value - expect).abs() < 3.0 * s.stderr.unwrap(), "N={n}");
        }
    }

    #[test]
    fn detected_marginal_matches_thinned_pmf() {
        let cfg = frozen_config(2.5, 0.4, 0.0, 0.0);
        let res = sweep(&cfg, &[0.0], 200_000, 9).unwrap();
        let counts = res.points[0].detected_counts();
        let total = res.points[0].shots() as f64;
        let det = DetectionModel::new(0.4).unwrap();
        let mut chi2 = 0.0;
        let mut dof = 0;
        for (d, &c) in counts.iter().enumerate() {
            let e = total * detected_pmf(&cfg.excitation, &det, d as u64);
            if e > 5.0 {
                chi2 += (c as f64 - e).powi(2) / e;
                dof += 1;
            }
        }
        // 99th percentile of χ² with ≤ 8 degrees of freedom is below 21
        assert!(dof >= 4 && chi2 < 21.0, "chi2 {chi2} dof {dof}");
    }

    #[test]
    fn zero_coupling_gives_flat_background() {
        let mut cfg = frozen_config(3.0, 0.7, 0.05, 0.0);
        cfg.coupling = CouplingModel::Positions;
        cfg.omega0 = 0.0;
        let res = sweep(&cfg, &[-1e6, 0.0, 1e6], 20_000, 4).unwrap();
        for p in &res.points {
            for n in 1..=3 {
                let s = p.signal(n).unwrap();
                assert!((s.value - 0.05).abs() < 4.0 * s.stderr.unwrap());
            }
        }
    }

    #[test]
    fn disabled_detector_bins_by_detected_count() {
        let mut cfg = frozen_config(3.0, 0.7, 0.05, 0.01);
        cfg.detector = HistogramModel::channeltron_preset();
        cfg.use_detector = false;
        for shot in 0..2000 {
            let r = run_shot(&cfg, 0.0, 8, 0, shot);
            if r.detected() > 0 {
                assert_eq!(r.assigned, Some(r.detected() as u32));
            }
        }
    }

    #[test]
    fn deterministic_across_shard_sizes_and_threads() {
        let cfg = frozen_config(3.0, 0.5, 0.02, 0.02);
        let grid = [-2e6, 0.0, 2e6];
        let a = sweep(&cfg, &grid, 10_000, 42).unwrap();
        let mut small = cfg.clone();
        small.shard_size = 333;
        let b = sweep(&small, &grid, 10_000, 42).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| sweep(&cfg, &grid, 10_000, 42).unwrap());
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn positions_mode_frozen_mean_matches_averaged_coupling() {
        // uniform placement with hard core R₀ gives ⟨Ω_nm²⟩ = Ω₀²/N₀ up to edge effects
        let geom = geometry();
        let t0 = 3e-6;
        let n0 = geom.ground_atoms();
        let omega0 = 0.03f64.sqrt() / t0 * n0.sqrt();
        let exc = ExcitationModel::weak(3.0, n0.round() as u64).unwrap();
        let mut cfg = McConfig::frozen(exc, 1.0, 0.0, t0, 0.0, geom);
        cfg.coupling = CouplingModel::Positions;
        cfg.omega0 = omega0;
        let log = shot_log(&cfg, &[0.0], 100_000, 13).unwrap();
        let (mut sum, mut count) = (0.0, 0usize);
        for (_, r) in &log {
            sum += r.pair_probabilities.iter().sum::<f64>();
            count += r.pair_probabilities.len();
        }
        let mean = sum / count as f64;
        assert!((mean - 0.03).abs() / 0.03 < 0.1, "{mean}");
    }

    #[test]
    fn beam_averaged_pair_probability_near_collision_estimate() {
        let geom = geometry();
        let beam = BeamParameters::sodium(600.0);
        let tau = beam.collision_time(geom.mean_spacing());
        let exc = ExcitationModel::weak(2.0, 10_000).unwrap();
        let mut cfg = McConfig::frozen(exc, 1.0, 0.0, 20e-6, 0.0, geom);
        cfg.motion = Motion::Beam;
        cfg.omega_sq = 0.03 / (tau * tau);
        cfg.beam = beam;
        let p = plan_point(&cfg, 0.0).pair_probability;
        assert!((p - 0.03).abs() / 0.03 < 1e-3, "{p}");
    }

    #[test]
    fn shot_log_is_size_guarded() {
        let cfg = frozen_config(2.0, 0.5, 0.0, 0.01);
        assert!(shot_log(&cfg, &[0.0, 1.0], SHOT_LOG_LIMIT, 0).is_err());
    }
}
