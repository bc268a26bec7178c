//! Resonant dipole-dipole coupling of Rydberg pairs.
//!
//! Covers the pair interaction energy at the mean spacing, its ensemble
//! mean square, the perturbative two-atom transfer amplitude, and the
//! resulting N-atom resonance profiles for a frozen gas and an atomic beam.

use std::f64::consts::PI;

use log::warn;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::quadrature::{self, Tolerance};
use crate::units::{AU_DIPOLE, DEFAULT_ANGULAR_FACTOR, EPSILON_0, HBAR, K_B, SODIUM_MASS};

/// Pair transfer probability above which first-order perturbation theory is suspect.
pub const PERTURBATIVE_LIMIT: f64 = 0.1;

/// Root of sinc²(u) = 1/2.
pub const SINC2_HALF_POINT: f64 = 1.391_557_378_251_510_2;

/// Ground-state atom number below which the mean-square averaging is not meaningful.
pub const MIN_AVERAGING_ATOMS: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipoleConstants {
    /// Radial matrix element of the first transition, atomic units.
    pub radial_1: f64,
    /// Radial matrix element of the second transition, atomic units.
    pub radial_2: f64,
    pub angular_factor: f64,
}

impl DipoleConstants {
    pub fn new(radial_1: f64, radial_2: f64, angular_factor: f64) -> Result<Self> {
        if !(radial_1 > 0.0 && radial_2 > 0.0) {
            return Err(domain("radial dipole moments must be positive"));
        }
        if !(angular_factor > 0.0 && angular_factor <= 1.0) {
            return Err(domain(format!("angular factor must lie in (0, 1], got {angular_factor}")));
        }
        Ok(Self {
            radial_1,
            radial_2,
            angular_factor,
        })
    }

    /// Na 37S–36P and 37S–37P: 1372 and 1439 a.u. radial, √2/3 angular.
    pub fn sodium_37s() -> Self {
        Self {
            radial_1: 1372.0,
            radial_2: 1439.0,
            angular_factor: DEFAULT_ANGULAR_FACTOR,
        }
    }

    /// Product of the two full dipole moments in SI units, C² m².
    pub fn product_si(&self) -> f64 {
        let d1 = self.radial_1 * self.angular_factor * AU_DIPOLE;
        let d2 = self.radial_2 * self.angular_factor * AU_DIPOLE;
        d1 * d2
    }
}

impl Default for DipoleConstants {
    fn default() -> Self {
        Self::sodium_37s()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    /// Cube; `extent` is the side length.
    Cube,
    /// Sphere; `extent` is the radius.
    Sphere,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleGeometry {
    density: f64,
    shape: Shape,
    extent: f64,
}

impl EnsembleGeometry {
    /// `density` in m⁻³, `extent` in m.
    pub fn new(density: f64, shape: Shape, extent: f64) -> Result<Self> {
        if !(density > 0.0 && extent > 0.0) {
            return Err(domain("density and extent must be positive"));
        }
        let geom = Self {
            density,
            shape,
            extent,
        };
        if geom.mean_spacing() >= extent {
            return Err(domain(format!(
                "mean spacing {:.3e} m is not small compared to extent {extent:.3e} m",
                geom.mean_spacing()
            )));
        }
        if geom.ground_atoms() < 2.0 {
            return Err(domain("ensemble must hold at least two ground-state atoms"));
        }
        Ok(geom)
    }

    pub fn density(&self) -> f64 {
        self.density
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    /// R₀ = (4π n₀ / 3)^(−1/3).
    pub fn mean_spacing(&self) -> f64 {
        (4.0 * PI * self.density / 3.0).powf(-1.0 / 3.0)
    }

    pub fn volume(&self) -> f64 {
        match self.shape {
            Shape::Cube => self.extent.powi(3),
            Shape::Sphere => 4.0 * PI * self.extent.powi(3) / 3.0,
        }
    }

    /// N₀ = n₀ V.
    pub fn ground_atoms(&self) -> f64 {
        self.density * self.volume()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamParameters {
    /// Oven temperature, K.
    pub temperature: f64,
    /// Atomic mass, kg.
    pub mass: f64,
}

impl BeamParameters {
    pub fn new(temperature: f64, mass: f64) -> Result<Self> {
        if !(temperature > 0.0 && mass > 0.0) {
            return Err(domain("beam temperature and atomic mass must be positive"));
        }
        Ok(Self { temperature, mass })
    }

    pub fn sodium(temperature: f64) -> Self {
        Self {
            temperature,
            mass: SODIUM_MASS,
        }
    }

    /// v₀ = √(2 k_B T / M).
    pub fn most_probable_speed(&self) -> f64 {
        (2.0 * K_B * self.temperature / self.mass).sqrt()
    }

    /// Mean collision time τ = 2R₀ / v₀.
    pub fn collision_time(&self, mean_spacing: f64) -> f64 {
        collision_time(mean_spacing, self.most_probable_speed())
    }
}

pub fn collision_time(mean_spacing: f64, speed: f64) -> f64 {
    2.0 * mean_spacing / speed
}

/// Resonance width estimate for the beam, Γ = 1/τ in rad/s.
pub fn beam_width(tau: f64) -> f64 {
    1.0 / tau
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motion {
    Frozen,
    Beam,
}

/// ρ_N^res sampled on a detuning grid (rad/s).
#[derive(Debug, Clone, PartialEq)]
pub struct ResonanceProfile {
    pub detunings: Vec<f64>,
    pub values: Vec<f64>,
    pub atoms: u32,
    pub motion: Motion,
}

impl ResonanceProfile {
    pub fn peak(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Value at zero detuning by linear interpolation on the grid.
    pub fn at(&self, detuning: f64) -> f64 {
        interpolate(&self.detunings, &self.values, detuning)
    }

    /// Full width at half maximum, by linear interpolation of the half-maximum
    /// crossings either side of the highest sample.
    pub fn fwhm(&self) -> Option<f64> {
        half_max_width(&self.detunings, &self.values)
    }

    /// True when the largest value exceeds 1, which no population can.
    pub fn exceeds_unity(&self) -> bool {
        self.peak() > 1.0
    }
}

pub(crate) fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    match xs.iter().position(|&v| v >= x) {
        None => *ys.last().unwrap_or(&0.0),
        Some(0) => ys[0],
        Some(k) => {
            let (x0, x1) = (xs[k - 1], xs[k]);
            let w = (x - x0) / (x1 - x0);
            ys[k - 1] * (1.0 - w) + ys[k] * w
        }
    }
}

pub(crate) fn half_max_width(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let (top, &peak) = ys.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    if peak <= 0.0 {
        return None;
    }
    let half = 0.5 * peak;
    let cross = |k0: usize, k1: usize| xs[k0] + (half - ys[k0]) * (xs[k1] - xs[k0]) / (ys[k1] - ys[k0]);
    let left = (1..=top).rev().find(|&k| ys[k - 1] < half).map(|k| cross(k - 1, k))?;
    let right = (top..xs.len() - 1).find(|&k| ys[k + 1] < half).map(|k| cross(k, k + 1))?;
    Some(right - left)
}

/// Pair interaction at the mean spacing, ħΩ₀ = d₁d₂ / (4πε₀R₀³), returned as Ω₀ in rad/s.
pub fn omega0(dip: &DipoleConstants, geom: &EnsembleGeometry) -> f64 {
    omega0_at_spacing(dip, geom.mean_spacing())
}

pub fn omega0_at_spacing(dip: &DipoleConstants, spacing: f64) -> f64 {
    dip.product_si() / (4.0 * PI * EPSILON_0 * spacing.powi(3)) / HBAR
}

/// Mean-square pair coupling Ω² for `ground_atoms` atoms in the ensemble:
/// Ω₀²/N₀ in a frozen gas, Ω₀²/N₀^(2/3) in a beam.
pub fn mean_square_coupling(omega0: f64, ground_atoms: f64, motion: Motion) -> f64 {
    if ground_atoms < MIN_AVERAGING_ATOMS {
        warn!("mean-square coupling averaged over only {ground_atoms} atoms; the estimate assumes N0 >> 1");
    }
    match motion {
        Motion::Frozen => omega0 * omega0 / ground_atoms,
        Motion::Beam => omega0 * omega0 / ground_atoms.powf(2.0 / 3.0),
    }
}

/// The shell integral (n₀/N₀)∫_{R₀}^{R} Ω₀²R₀⁶/r⁶ 4πr² dr for a sphere of radius
/// `radius`, without dropping the R₀/R correction: Ω₀²/N₀ · (1 − (R₀/R)³).
pub fn mean_square_coupling_shell(omega0: f64, spacing: f64, radius: f64) -> f64 {
    let ratio = (spacing / radius).powi(3);
    // N₀ = (R/R₀)³ since 4πn₀R₀³/3 = 1
    omega0 * omega0 * ratio * (1.0 - ratio)
}

/// a(t₀) = −i ∫₀^{t₀} Ω(t) e^{−iΔt} dt.
pub fn pair_amplitude<F: Fn(f64) -> f64>(coupling: F, detuning: f64, t0: f64) -> Complex64 {
    pair_amplitude_with(coupling, detuning, t0, &[], Tolerance::default())
}

/// [`pair_amplitude`] with explicit breakpoints (e.g. the time of closest
/// approach) and quadrature tolerance.
pub fn pair_amplitude_with<F: Fn(f64) -> f64>(
    coupling: F,
    detuning: f64,
    t0: f64,
    breakpoints: &[f64],
    tol: Tolerance,
) -> Complex64 {
    let integrand = |t: f64| Complex64::from_polar(coupling(t), -detuning * t);
    let r = quadrature::integrate(integrand, 0.0, t0, breakpoints, tol);
    if !r.converged {
        warn!("pair amplitude quadrature stopped at error {:.3e}", r.error);
    }
    let a = Complex64::new(0.0, -1.0) * r.value;
    if a.norm_sqr() > PERTURBATIVE_LIMIT {
        warn!("pair transfer probability {:.3} exceeds the perturbative limit", a.norm_sqr());
    }
    a
}

/// sin(x)/x with the removable singularity filled in.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Per-pair transfer probability for constant coupling: Ω² t₀² sinc²(t₀Δ/2).
pub fn constant_pair_probability(omega_sq: f64, t0: f64, detuning: f64) -> f64 {
    let s = sinc(0.5 * t0 * detuning);
    omega_sq * t0 * t0 * s * s
}

/// Frozen-gas ρ_N^res(Δ) = (N − 1) Ω² t₀² sinc²(t₀Δ/2).
pub fn frozen_value(omega_sq: f64, atoms: u32, t0: f64, detuning: f64) -> f64 {
    if atoms < 2 {
        return 0.0;
    }
    (atoms - 1) as f64 * constant_pair_probability(omega_sq, t0, detuning)
}

pub fn frozen_profile(omega_sq: f64, atoms: u32, t0: f64, detunings: &[f64]) -> ResonanceProfile {
    let values = detunings
        .iter()
        .map(|&d| frozen_value(omega_sq, atoms, t0, d))
        .collect();
    ResonanceProfile {
        detunings: detunings.to_vec(),
        values,
        atoms,
        motion: Motion::Frozen,
    }
}

/// Beam resonance amplitude at zero detuning, (N − 1) Ω²_beam τ².
pub fn beam_profile_peak(omega_sq_beam: f64, tau: f64, atoms: u32) -> f64 {
    if atoms < 2 {
        return 0.0;
    }
    (atoms - 1) as f64 * omega_sq_beam * tau * tau
}

/// Straight-line fly-by of two atoms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairKinematics {
    /// Relative speed, m/s.
    pub speed: f64,
    /// Impact parameter, m.
    pub impact: f64,
    /// Time of closest approach, s.
    pub peak_time: f64,
}

/// Ω_nm(t) = Ω₀ R₀³ / [v²(t − t_nm)² + b²]^{3/2}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamCoupling {
    pub omega0: f64,
    pub spacing: f64,
    pub kinematics: PairKinematics,
}

impl BeamCoupling {
    pub fn new(kinematics: PairKinematics, omega0: f64, spacing: f64) -> Result<Self> {
        if !(kinematics.impact > 0.0) {
            return Err(domain("impact parameter must be positive"));
        }
        Ok(Self {
            omega0,
            spacing,
            kinematics,
        })
    }

    pub fn at(&self, t: f64) -> f64 {
        let k = &self.kinematics;
        let dt = t - k.peak_time;
        let r_sq = k.speed * k.speed * dt * dt + k.impact * k.impact;
        self.omega0 * self.spacing.powi(3) / (r_sq * r_sq.sqrt())
    }

    pub fn peak(&self) -> f64 {
        self.omega0 * (self.spacing / self.kinematics.impact).powi(3)
    }

    /// Time between the half-maximum points, 2b√(2^{2/3} − 1)/v.
    pub fn half_max_duration(&self) -> f64 {
        let k = &self.kinematics;
        2.0 * k.impact * (2f64.powf(2.0 / 3.0) - 1.0).sqrt() / k.speed
    }

    /// Perturbative amplitude over `[0, t0]`, split at the closest approach.
    pub fn amplitude(&self, detuning: f64, t0: f64, tol: Tolerance) -> Complex64 {
        let k = self.kinematics;
        let w = if k.speed > 0.0 { k.impact / k.speed } else { t0 };
        let cuts = [k.peak_time - 4.0 * w, k.peak_time, k.peak_time + 4.0 * w];
        pair_amplitude_with(|t| self.at(t), detuning, t0, &cuts, tol)
    }
}

/// Samples Ω_nm(t) on `times`.
pub fn beam_coupling_history(
    kinematics: PairKinematics,
    omega0: f64,
    spacing: f64,
    times: &[f64],
) -> Result<Vec<f64>> {
    let c = BeamCoupling::new(kinematics, omega0, spacing)?;
    Ok(times.iter().map(|&t| c.at(t)).collect())
}

/// ρ_N^res = (N − 1) ρ_2^res, pointwise.
pub fn profile_scaling(two_atom: &ResonanceProfile, atoms: u32) -> ResonanceProfile {
    let factor = atoms.saturating_sub(1) as f64;
    ResonanceProfile {
        detunings: two_atom.detunings.clone(),
        values: two_atom.values.iter().map(|v| v * factor).collect(),
        atoms,
        motion: two_atom.motion,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::per_cm3;

    fn reference_geometry() -> EnsembleGeometry {
        EnsembleGeometry::new(per_cm3(8e10), Shape::Cube, 50e-6).unwrap()
    }

    #[test]
    fn mean_spacing_and_atom_number() {
        let g = reference_geometry();
        assert!((g.mean_spacing() - 1.44e-6).abs() / 1.44e-6 < 0.01);
        assert!((g.ground_atoms() - 1e4).abs() < 1.0);
    }

    #[test]
    fn omega0_near_150_mhz() {
        let w = omega0(&DipoleConstants::sodium_37s(), &reference_geometry());
        let f = w / (2.0 * PI);
        assert!((f - 150e6).abs() / 150e6 < 0.10, "{f}");
    }

    #[test]
    fn omega0_hand_computed_in_si() {
        // independent unit chain: e a₀ = 1.602176634e-19 C × 5.29177210903e-11 m
        let ea0 = 1.602_176_634e-19 * 5.291_772_109_03e-11;
        let ang = 2f64.sqrt() / 3.0;
        let d1 = 1372.0 * ang * ea0;
        let d2 = 1439.0 * ang * ea0;
        let r0 = (4.0 * PI * 8e16 / 3.0).powf(-1.0 / 3.0);
        let energy = d1 * d2 / (4.0 * PI * 8.854_187_812_8e-12 * r0.powi(3));
        let hand = energy / 1.054_571_817e-34;
        let w = omega0(&DipoleConstants::sodium_37s(), &reference_geometry());
        assert!((w - hand).abs() / hand < 1e-8);
        assert!((1.3e8..1.6e8).contains(&(hand / (2.0 * PI))));
    }

    #[test]
    fn omega0_scales_as_inverse_cube() {
        let d = DipoleConstants::sodium_37s();
        let r = 1.44e-6;
        let ratio = omega0_at_spacing(&d, r) / omega0_at_spacing(&d, 2.0 * r);
        assert!((ratio - 8.0).abs() < 1e-12);
    }

    #[test]
    fn mean_square_coupling_cases() {
        let w0 = 2.0 * PI * 150e6;
        let frozen = mean_square_coupling(w0, 1e4, Motion::Frozen).sqrt();
        assert!((frozen / (2.0 * PI) - 1.5e6).abs() < 1.0);
        assert_eq!(mean_square_coupling(w0, 1.0, Motion::Frozen), w0 * w0);
        let w0 = 2.0 * PI * 143e6;
        let beam = mean_square_coupling(w0, 1e4, Motion::Beam).sqrt();
        let cube_root = 1e4f64.powf(1.0 / 3.0);
        assert!((cube_root - 21.544).abs() < 1e-3);
        assert!((beam - w0 / cube_root).abs() / beam < 1e-12);
    }

    #[test]
    fn shell_integral_matches_quadrature() {
        let (w0, r0, r) = (1.0f64, 1.0f64, 20.0f64);
        let n0 = (r / r0).powi(3);
        let density = 3.0 / (4.0 * PI * r0.powi(3));
        let integral = crate::quadrature::integrate(
            |x: f64| Complex64::new(w0 * w0 * r0.powi(6) / x.powi(6) * 4.0 * PI * x * x, 0.0),
            r0,
            r,
            &[2.0, 5.0],
            Tolerance {
                relative: 1e-12,
                ..Tolerance::default()
            },
        );
        let numeric = density / n0 * integral.value.re;
        assert!((numeric - mean_square_coupling_shell(w0, r0, r)).abs() < 1e-12);
        assert!((mean_square_coupling_shell(w0, r0, r) * n0 - 1.0).abs() < 2e-4);
    }

    #[test]
    fn amplitude_of_zero_coupling_vanishes() {
        let a = pair_amplitude(|_| 0.0, 1e6, 3e-6);
        assert_eq!(a.norm(), 0.0);
    }

    #[test]
    fn constant_coupling_amplitude_matches_closed_form() {
        let (omega, t0) = (2.0e4, 3e-6);
        let a = pair_amplitude(|_| omega, 0.0, t0);
        assert!((a.norm_sqr() - omega * omega * t0 * t0).abs() < 1e-15);
        for delta in [1e5, 1.3e6, -4.0e6] {
            let a = pair_amplitude(|_| omega, delta, t0);
            let half = delta / 2.0;
            let closed = omega * omega * (t0 * half).sin().powi(2) / (half * half);
            assert!((a.norm_sqr() - closed).abs() <= 1e-6 * closed.max(1e-12), "{delta}");
        }
    }

    #[test]
    fn frozen_profile_basics() {
        let (omega_sq, t0) = (1e9, 3e-6);
        let grid: Vec<f64> = (-50..=50).map(|k| k as f64 * 5e4).collect();
        let single = frozen_profile(omega_sq, 1, t0, &grid);
        assert!(single.values.iter().all(|&v| v == 0.0));
        let pair = frozen_profile(omega_sq, 2, t0, &grid);
        assert_eq!(pair.at(0.0), omega_sq * t0 * t0);
        for (k, &d) in grid.iter().enumerate() {
            let mirrored = frozen_value(omega_sq, 2, t0, -d);
            assert!((pair.values[k] - mirrored).abs() < 1e-15);
            assert!(pair.values[k] <= pair.at(0.0));
        }
    }

    #[test]
    fn sinc2_half_point_is_root() {
        // bisection oracle
        let (mut lo, mut hi) = (1.0f64, 2.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if sinc(mid).powi(2) > 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((lo - SINC2_HALF_POINT).abs() < 1e-15);
    }

    #[test]
    fn frozen_fwhm() {
        let t0 = 3e-6;
        let expected = 4.0 * SINC2_HALF_POINT / t0;
        assert!((expected * t0 - 5.566).abs() < 1e-3);
        let grid: Vec<f64> = (-4000..=4000).map(|k| k as f64 * 2.0 / t0 * 1e-3).collect();
        let profile = frozen_profile(1e9, 2, t0, &grid);
        let width = profile.fwhm().unwrap();
        assert!((width - expected).abs() / expected < 1e-4);
    }

    #[test]
    fn beam_peak_and_width_against_reported_values() {
        let r0 = 1.44e-6;
        let v0 = 680.0;
        let tau = collision_time(r0, v0);
        assert!((tau - 4.235e-9).abs() < 1e-12);
        let omega_beam = 2.0 * PI * 143e6 / 1e4f64.powf(1.0 / 3.0);
        let peak = beam_profile_peak(omega_beam * omega_beam, tau, 2);
        assert!((peak - 0.03).abs() / 0.03 < 0.15, "{peak}");
        assert_eq!(beam_profile_peak(omega_beam * omega_beam, tau, 1), 0.0);
        let width_hz = beam_width(tau) / (2.0 * PI);
        assert!((width_hz - v0 / (4.0 * PI * r0)).abs() < 1e-3);
        assert!((width_hz - 40e6).abs() / 40e6 < 0.10, "{width_hz}");
    }

    #[test]
    fn sodium_beam_speed() {
        let v0 = BeamParameters::sodium(650.0).most_probable_speed();
        assert!((v0 - 680.0).abs() < 10.0, "{v0}");
    }

    #[test]
    fn beam_coupling_shape() {
        let r0 = 1.44e-6;
        let kin = PairKinematics {
            speed: 500.0,
            impact: r0,
            peak_time: 1e-6,
        };
        let c = BeamCoupling::new(kin, 1e9, r0).unwrap();
        assert!((c.at(1e-6) - 1e9).abs() < 1e-3);
        // half maximum is reached after half the stated duration
        let half = c.half_max_duration() / 2.0;
        assert!((c.at(1e-6 + half) - 0.5e9).abs() / 0.5e9 < 1e-12);
        assert!((c.at(1e-6 - half) - 0.5e9).abs() / 0.5e9 < 1e-12);
        // same order as 2b/v
        let ratio = c.half_max_duration() / (2.0 * kin.impact / kin.speed);
        assert!((0.5..1.0).contains(&ratio));

        let slow = PairKinematics {
            speed: 0.0,
            impact: 2.0 * r0,
            peak_time: 0.0,
        };
        let hist = beam_coupling_history(slow, 1e9, r0, &[0.0, 1e-6, 2e-6]).unwrap();
        assert!(hist.iter().all(|&w| (w - 1e9 / 8.0).abs() < 1e-3));
        assert!(BeamCoupling::new(PairKinematics { impact: 0.0, ..kin }, 1e9, r0).is_err());
    }

    #[test]
    fn beam_amplitude_at_resonance() {
        // full fly-by inside the window: |a|² → (2Ω₀R₀³/(v b²))²
        let r0 = 1.44e-6;
        let kin = PairKinematics {
            speed: 680.0,
            impact: r0,
            peak_time: 1.5e-6,
        };
        let omega = 2.0 * PI * 6.64e6;
        let c = BeamCoupling::new(kin, omega, r0).unwrap();
        let a = c.amplitude(0.0, 3e-6, Tolerance::default());
        let tau = 2.0 * r0 / 680.0;
        let expected = (omega * tau).powi(2);
        assert!((a.norm_sqr() - expected).abs() / expected < 1e-5);
    }

    #[test]
    fn profile_scaling_rules() {
        let grid = [-1e6, 0.0, 1e6];
        let two = frozen_profile(1e9, 2, 3e-6, &grid);
        assert_eq!(profile_scaling(&two, 2).values, two.values);
        assert!(profile_scaling(&two, 1).values.iter().all(|&v| v == 0.0));
        let peaked = ResonanceProfile {
            detunings: vec![0.0],
            values: vec![0.02],
            atoms: 2,
            motion: Motion::Beam,
        };
        assert!((profile_scaling(&peaked, 5).values[0] - 0.08).abs() < 1e-15);
    }
}
