//! Experiment configuration: TOML text in, validated model objects out.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::{HistogramModel, WidthScaling};
use crate::error::{Error, Result};
use crate::interaction::{
    mean_square_coupling, omega0, BeamParameters, DipoleConstants, EnsembleGeometry, Motion, Shape,
};
use crate::montecarlo::{CouplingModel, McConfig, DEFAULT_SHARD_SIZE};
use crate::signal::{SignalInputs, Spectra};
use crate::spectrum::{linspace, AxisKind};
use crate::statistics::{DetectionModel, ExcitationModel, Regime};
use crate::units::{per_cm3, AMU, DEFAULT_ANGULAR_FACTOR, DEFAULT_FIELD_COEFFICIENT};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub excitation: ExcitationSection,
    pub detection: DetectionSection,
    pub signal: SignalSection,
    pub geometry: GeometrySection,
    pub dipole: DipoleSection,
    pub beam: BeamSection,
    pub grid: GridSection,
    pub detector: DetectorSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub motion: Motion,
    pub coupling: CouplingModel,
    pub seed: u64,
    /// Shots per grid point.
    pub shots: u64,
    pub shard_size: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExcitationSection {
    pub statistics: Regime,
    /// Mean excited atom number n̄.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    /// Per-atom excitation probability (strong regime, instead of `mean`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
    /// N₀; defaults to density × volume.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_atoms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionSection {
    pub efficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalSection {
    pub rho1: f64,
    pub interaction_time_s: f64,
    /// Two-atom resonance amplitude at zero detuning; when set it fixes the
    /// coupling instead of the dipole constants.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho2_peak: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub density_cm3: f64,
    pub shape: Shape,
    /// Cube side or sphere radius, m.
    pub extent_m: f64,
    /// Hard-core pair distance, m; defaults to the mean spacing.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_distance_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DipoleSection {
    pub radial_1: f64,
    pub radial_2: f64,
    pub angular_factor: f64,
    /// Overrides the pair coupling at the mean spacing, rad/s.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega0_rad_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamSection {
    pub temperature_k: f64,
    pub mass_amu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub axis: AxisKind,
    /// Axis start and stop, in V/cm (field) or rad/s (detuning).
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    pub center_field_v_cm: f64,
    /// Detuning per unit field, rad/s per V/cm.
    pub field_coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub enabled: bool,
    pub max_atoms: u32,
    pub spacing_v: f64,
    pub width_v: f64,
    pub width_scaling: WidthScaling,
    pub histogram_bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: String,
    /// Highest post-selected atom number written.
    pub max_atoms: u32,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            motion: Motion::Frozen,
            coupling: CouplingModel::Averaged,
            seed: 1,
            shots: 100_000,
            shard_size: DEFAULT_SHARD_SIZE,
        }
    }
}

impl Default for ExcitationSection {
    fn default() -> Self {
        Self {
            statistics: Regime::Weak,
            mean: Some(2.0),
            probability: None,
            ground_atoms: None,
        }
    }
}

impl Default for DetectionSection {
    fn default() -> Self {
        Self { efficiency: 0.5 }
    }
}

impl Default for SignalSection {
    fn default() -> Self {
        Self {
            rho1: 0.01,
            interaction_time_s: 3e-6,
            rho2_peak: None,
        }
    }
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self {
            density_cm3: 8e10,
            shape: Shape::Cube,
            extent_m: 50e-6,
            min_distance_m: None,
        }
    }
}

impl Default for DipoleSection {
    fn default() -> Self {
        let d = DipoleConstants::sodium_37s();
        Self {
            radial_1: d.radial_1,
            radial_2: d.radial_2,
            angular_factor: DEFAULT_ANGULAR_FACTOR,
            omega0_rad_s: None,
        }
    }
}

impl Default for BeamSection {
    fn default() -> Self {
        Self {
            temperature_k: 600.0,
            mass_amu: 22.989_769_28,
        }
    }
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            axis: AxisKind::Detuning,
            start: -4e6,
            stop: 4e6,
            points: 21,
            center_field_v_cm: 0.0,
            field_coefficient: DEFAULT_FIELD_COEFFICIENT,
        }
    }
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            enabled: false,
            max_atoms: 5,
            spacing_v: 0.4,
            width_v: 0.1,
            width_scaling: WidthScaling::Sqrt,
            histogram_bins: 130,
        }
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: "out".into(),
            max_atoms: 5,
        }
    }
}

/// Model objects derived from a validated configuration.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub mc: McConfig,
    pub geometry: EnsembleGeometry,
    pub excitation: ExcitationModel,
    /// Pair coupling at the mean spacing, rad/s.
    pub omega0: f64,
    /// Ensemble mean-square pair coupling, rad²/s².
    pub omega_sq: f64,
    pub axis: Vec<f64>,
    pub detunings: Vec<f64>,
}

/// 1-based line of `key` inside `[section]`, or of the section header when
/// the key is absent.
pub fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let header = format!("[{section}]");
    let mut in_section = false;
    let mut header_line = None;
    for (k, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.starts_with('[') {
            in_section = t == header;
            if in_section {
                header_line = Some(k + 1);
            }
            continue;
        }
        if in_section {
            if let Some((lhs, _)) = t.split_once('=') {
                if lhs.trim() == key {
                    return Some(k + 1);
                }
            }
        }
    }
    header_line
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// A semantic problem tied to a config key.
struct Issue {
    section: &'static str,
    key: &'static str,
    message: String,
}

fn issue(section: &'static str, key: &'static str, message: impl Into<String>) -> Issue {
    Issue {
        section,
        key,
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// Parses and validates; errors carry the offending line.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config {
            line: e.span().map_or(1, |s| line_of_offset(text, s.start)),
            message: e.message().to_string(),
        })?;
        if let Err(i) = cfg.check() {
            return Err(Error::Config {
                line: locate(text, i.section, i.key).unwrap_or(1),
                message: format!("{}.{}: {}", i.section, i.key, i.message),
            });
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Fills derived defaults so that the emitted text fully determines a run.
    pub fn normalized(&self) -> Result<Self> {
        let mut cfg = self.clone();
        if cfg.excitation.ground_atoms.is_none() {
            cfg.excitation.ground_atoms = Some(self.geometry()?.ground_atoms().round() as u64);
        }
        if cfg.geometry.min_distance_m.is_none() {
            cfg.geometry.min_distance_m = Some(self.geometry()?.mean_spacing());
        }
        if cfg.excitation.statistics == Regime::Weak {
            cfg.excitation.probability = None;
        }
        Ok(cfg)
    }

    /// SHA-256 of the normalized TOML text.
    pub fn hash(&self) -> Result<String> {
        let text = self.normalized()?.to_toml();
        let digest = Sha256::digest(text.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    fn check(&self) -> std::result::Result<(), Issue> {
        let t = self.detection.efficiency;
        if !(0.0..=1.0).contains(&t) {
            return Err(issue("detection", "efficiency", format!("{t} is not in [0, 1]")));
        }
        let r = self.signal.rho1;
        if !(0.0..=1.0).contains(&r) {
            return Err(issue("signal", "rho1", format!("{r} is not in [0, 1]")));
        }
        let t0 = self.signal.interaction_time_s;
        if !(t0 > 0.0 && t0 < 1.0) {
            return Err(issue("signal", "interaction_time_s", format!("{t0} s is not a plausible interaction time")));
        }
        if let Some(p) = self.signal.rho2_peak {
            if !(0.0..=1.0).contains(&p) {
                return Err(issue("signal", "rho2_peak", format!("{p} is not in [0, 1]")));
            }
        }
        match (self.excitation.statistics, self.excitation.mean, self.excitation.probability) {
            (Regime::Weak, None, _) => return Err(issue("excitation", "mean", "weak excitation needs a mean")),
            (Regime::Strong, None, None) => {
                return Err(issue("excitation", "probability", "strong excitation needs a probability or a mean"))
            }
            (Regime::Strong, Some(_), Some(_)) => {
                return Err(issue("excitation", "probability", "give either mean or probability, not both"))
            }
            _ => {}
        }
        if let Some(m) = self.excitation.mean {
            if !(m >= 0.0 && m.is_finite()) {
                return Err(issue("excitation", "mean", format!("{m} must be a finite non-negative number")));
            }
        }
        if let Some(p) = self.excitation.probability {
            if !(0.0..=1.0).contains(&p) {
                return Err(issue("excitation", "probability", format!("{p} is not in [0, 1]")));
            }
        }
        let n = self.geometry.density_cm3;
        if !(n > 0.0) {
            return Err(issue("geometry", "density_cm3", "density must be positive"));
        }
        let l = self.geometry.extent_m;
        if !(l > 0.0 && l < 1.0) {
            return Err(issue("geometry", "extent_m", format!("{l} m is not a plausible ensemble size")));
        }
        if let Some(d) = self.geometry.min_distance_m {
            if !(d > 0.0 && d < l) {
                return Err(issue("geometry", "min_distance_m", "must be positive and below the extent"));
            }
        }
        if let Err(e) = self.geometry() {
            return Err(issue("geometry", "extent_m", e.to_string()));
        }
        if let Err(e) = self.dipoles() {
            return Err(issue("dipole", "radial_1", e.to_string()));
        }
        if let Some(w) = self.dipole.omega0_rad_s {
            if !(w >= 0.0) {
                return Err(issue("dipole", "omega0_rad_s", "must be non-negative"));
            }
        }
        if !(self.beam.temperature_k > 0.0) {
            return Err(issue("beam", "temperature_k", "must be positive"));
        }
        if !(self.beam.mass_amu > 0.0) {
            return Err(issue("beam", "mass_amu", "must be positive"));
        }
        if self.grid.points == 0 {
            return Err(issue("grid", "points", "need at least one grid point"));
        }
        if self.grid.points > 1 && !(self.grid.stop > self.grid.start) {
            return Err(issue("grid", "stop", "stop must exceed start"));
        }
        if !(self.grid.field_coefficient > 0.0) {
            return Err(issue("grid", "field_coefficient", "must be positive"));
        }
        if self.run.shots == 0 {
            return Err(issue("run", "shots", "must be positive"));
        }
        if self.run.shard_size == 0 {
            return Err(issue("run", "shard_size", "must be positive"));
        }
        if self.detector.max_atoms == 0 {
            return Err(issue("detector", "max_atoms", "must be positive"));
        }
        if !(self.detector.spacing_v > 0.0) {
            return Err(issue("detector", "spacing_v", "must be positive"));
        }
        if !(self.detector.width_v >= 0.0) {
            return Err(issue("detector", "width_v", "must be non-negative"));
        }
        if self.detector.histogram_bins == 0 {
            return Err(issue("detector", "histogram_bins", "must be positive"));
        }
        if self.output.max_atoms == 0 {
            return Err(issue("output", "max_atoms", "must be positive"));
        }
        if let Err(e) = self.excitation_model() {
            return Err(issue("excitation", "mean", e.to_string()));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<EnsembleGeometry> {
        EnsembleGeometry::new(per_cm3(self.geometry.density_cm3), self.geometry.shape, self.geometry.extent_m)
    }

    pub fn dipoles(&self) -> Result<DipoleConstants> {
        DipoleConstants::new(self.dipole.radial_1, self.dipole.radial_2, self.dipole.angular_factor)
    }

    pub fn beam(&self) -> Result<BeamParameters> {
        BeamParameters::new(self.beam.temperature_k, self.beam.mass_amu * AMU)
    }

    pub fn excitation_model(&self) -> Result<ExcitationModel> {
        let geom = self.geometry()?;
        let n0 = self
            .excitation
            .ground_atoms
            .unwrap_or_else(|| geom.ground_atoms().round() as u64);
        match self.excitation.statistics {
            Regime::Weak => ExcitationModel::weak(self.excitation.mean.unwrap_or(0.0), n0),
            Regime::Strong => match self.excitation.probability {
                Some(p) => ExcitationModel::strong(n0, p),
                None => ExcitationModel::strong_with_mean(n0, self.excitation.mean.unwrap_or(0.0)),
            },
        }
    }

    pub fn field_map(&self) -> crate::units::FieldMap {
        crate::units::FieldMap::new(self.grid.center_field_v_cm, self.grid.field_coefficient)
    }

    pub fn histogram_model(&self) -> Result<HistogramModel> {
        let d = &self.detector;
        HistogramModel::equidistant(d.max_atoms, d.spacing_v, d.width_v, d.width_scaling)
    }

    /// Signal-model inputs with the linear spectra at a given pair probability.
    pub fn signal_inputs(&self, rho2: f64) -> Result<SignalInputs> {
        SignalInputs::new(
            self.excitation_model()?,
            DetectionModel::new(self.detection.efficiency)?,
            self.signal.rho1,
            Spectra::Linear { rho2 },
            1,
        )
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let geometry = self.geometry()?;
        let excitation = self.excitation_model()?;
        let beam = self.beam()?;
        let t0 = self.signal.interaction_time_s;
        let r0 = geometry.mean_spacing();
        let n0 = geometry.ground_atoms();
        let motion = self.run.motion;
        // time scale of one pair's transfer: t₀ frozen, the collision time in a beam
        let tau = match motion {
            Motion::Frozen => t0,
            Motion::Beam => beam.collision_time(r0),
        };
        let suppression = match motion {
            Motion::Frozen => n0,
            Motion::Beam => n0.powf(2.0 / 3.0),
        };
        let (w0, omega_sq) = match self.signal.rho2_peak {
            Some(p) => {
                let omega_sq = p / (tau * tau);
                ((omega_sq * suppression).sqrt(), omega_sq)
            }
            None => {
                let w0 = self
                    .dipole
                    .omega0_rad_s
                    .map_or_else(|| self.dipoles().map(|d| omega0(&d, &geometry)), Ok)?;
                (w0, mean_square_coupling(w0, n0, motion))
            }
        };
        let mc = McConfig {
            excitation,
            efficiency: self.detection.efficiency,
            rho1: self.signal.rho1,
            interaction_time: t0,
            motion,
            coupling: self.run.coupling,
            omega_sq,
            omega0: w0,
            geometry,
            min_distance: self.geometry.min_distance_m.unwrap_or(r0),
            beam,
            detector: self.histogram_model()?,
            use_detector: self.detector.enabled,
            histogram_bins: self.detector.histogram_bins,
            shard_size: self.run.shard_size,
        };
        let axis = linspace(self.grid.start, self.grid.stop, self.grid.points);
        let map = self.field_map();
        let detunings = match self.grid.axis {
            AxisKind::Detuning => axis.clone(),
            AxisKind::Field => axis.iter().map(|&f| map.detuning(f)).collect(),
        };
        Ok(Resolved {
            mc,
            geometry,
            excitation,
            omega0: w0,
            omega_sq,
            axis,
            detunings,
        })
    }
}
