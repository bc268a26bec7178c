//! Subcommand implementations, independent of argument parsing.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use super::io::{fmt_num, fmt_opt, histogram_table, provenance, read_histogram, read_spectra, spectrum_table, Table};
use crate::detector::unfold_window_counts;
use crate::error::{Error, Result};
use crate::estimator::{
    alpha_from_amplitudes, alpha_forward, beta_from_integrals, channel_amplitudes, invert, rho2_with_offset_errors,
    EstimateResult, Measurement,
};
use crate::montecarlo::{mean_pair_probability, sweep as mc_sweep};
use crate::peakfit::PeakModel;
use crate::signal::s_n_closed;
use crate::spectrum::{AxisKind, SpectrumChannel, SpectrumGrid};
use crate::statistics::{ExcitationModel, Regime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Text,
    Structured,
}

/// Overrides shared by the config-driven subcommands.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub shots: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &ExperimentConfig) -> ExperimentConfig {
        let mut c = cfg.clone();
        if let Some(s) = self.seed {
            c.run.seed = s;
        }
        if let Some(n) = self.shots {
            c.run.shots = n;
        }
        c
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.directory))
    }
}

/// Files written by a command.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub files: Vec<String>,
    pub clamped_shots: u64,
    pub amplitudes: Vec<AmplitudeLine>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AmplitudeLine {
    pub atoms: u32,
    pub amplitude: f64,
    pub stderr: Option<f64>,
}

impl RunSummary {
    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Structured => serde_json::to_string_pretty(self).expect("summary serializes") + "\n",
            Format::Text => {
                let mut s = format!(
                    "{}: seed {} config {}\n",
                    self.command,
                    self.seed,
                    &self.config_hash[..12]
                );
                for a in &self.amplitudes {
                    match a.stderr {
                        Some(e) => s += &format!("  N={} amplitude {:.5} ± {:.5}\n", a.atoms, a.amplitude, e),
                        None => s += &format!("  N={} amplitude {:.5}\n", a.atoms, a.amplitude),
                    }
                }
                if self.clamped_shots > 0 {
                    s += &format!("  {} shots clamped at probability 1\n", self.clamped_shots);
                }
                for f in &self.files {
                    s += &format!("  wrote {f}\n");
                }
                s
            }
        }
    }
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Domain(format!("cannot start {n} worker threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn write_table(dir: &Path, name: &str, table: &Table, files: &mut Vec<String>) -> Result<()> {
    let path = dir.join(name);
    table.write(&path)?;
    files.push(path.display().to_string());
    Ok(())
}

fn empty_grid(cfg: &ExperimentConfig, axis: Vec<f64>) -> Result<SpectrumGrid> {
    SpectrumGrid::new(cfg.grid.axis, axis, cfg.field_map())
}

/// Monte Carlo spectra, pulse-height histogram and resonance amplitudes.
pub fn simulate(cfg: &ExperimentConfig, opts: &Overrides) -> Result<RunSummary> {
    let cfg = opts.apply(cfg).normalized()?;
    let hash = cfg.hash()?;
    let resolved = cfg.resolve()?;
    let seed = cfg.run.seed;
    let result = with_pool(opts.threads, || mc_sweep(&resolved.mc, &resolved.detunings, cfg.run.shots, seed))??;

    let dir = opts.out_dir(&cfg);
    std::fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    write_table_text(&dir, "config.toml", &cfg.to_toml(), &mut files)?;

    let mut grid = empty_grid(&cfg, resolved.axis.clone())?;
    for n in 1..=cfg.output.max_atoms {
        let est = result.channel(n);
        grid.push(SpectrumChannel {
            atoms: n,
            values: est.iter().map(|e| e.map(|e| e.value)).collect(),
            errors: Some(est.iter().map(|e| e.and_then(|e| e.stderr)).collect()),
            shots: Some(est.iter().map(|e| e.map_or(0, |e| e.shots)).collect()),
        })?;
    }
    for ch in &grid.channels {
        let t = provenance(spectrum_table(&grid, ch), Some(seed), &hash, "simulate");
        write_table(&dir, &format!("spectrum_n{}.tsv", ch.atoms), &t, &mut files)?;
    }

    let hist = provenance(
        histogram_table(&result.histogram, &resolved.mc.detector),
        Some(seed),
        &hash,
        "simulate",
    );
    write_table(&dir, "histogram.tsv", &hist, &mut files)?;

    let rows = result.amplitude_table(cfg.signal.rho1, cfg.output.max_atoms);
    let k = result.resonance_index().unwrap_or(0);
    let mut amp = Table::new(&["atoms", "amplitude", "stderr", "shots"]).meta("axis_value", fmt_num(resolved.axis[k]));
    for r in &rows {
        amp.push(vec![r.atoms.to_string(), fmt_num(r.amplitude), fmt_opt(r.stderr), r.shots.to_string()]);
    }
    write_table(&dir, "amplitudes.tsv", &provenance(amp, Some(seed), &hash, "simulate"), &mut files)?;

    Ok(RunSummary {
        command: "simulate".into(),
        config_hash: hash,
        seed,
        files,
        clamped_shots: result.clamped(),
        amplitudes: rows
            .iter()
            .map(|r| AmplitudeLine {
                atoms: r.atoms,
                amplitude: r.amplitude,
                stderr: r.stderr,
            })
            .collect(),
    })
}

fn write_table_text(dir: &Path, name: &str, text: &str, files: &mut Vec<String>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text)?;
    files.push(path.display().to_string());
    Ok(())
}

/// Analytic S_N(Δ) for N = 1..=`max_atoms` from the closed form.
pub fn predicted_grid(cfg: &ExperimentConfig) -> Result<SpectrumGrid> {
    let resolved = cfg.resolve()?;
    let mut columns = vec![Vec::with_capacity(resolved.detunings.len()); cfg.output.max_atoms as usize];
    for &d in &resolved.detunings {
        let inputs = cfg.signal_inputs(mean_pair_probability(&resolved.mc, d))?;
        for (k, col) in columns.iter_mut().enumerate() {
            col.push(s_n_closed(&inputs, k as u64 + 1)?);
        }
    }
    let mut grid = empty_grid(cfg, resolved.axis)?;
    for (k, col) in columns.into_iter().enumerate() {
        grid.push(SpectrumChannel::exact(k as u32 + 1, col))?;
    }
    Ok(grid)
}

pub fn predict(cfg: &ExperimentConfig, opts: &Overrides) -> Result<RunSummary> {
    let cfg = opts.apply(cfg).normalized()?;
    let hash = cfg.hash()?;
    let grid = predicted_grid(&cfg)?;
    let dir = opts.out_dir(&cfg);
    std::fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    for ch in &grid.channels {
        let t = provenance(spectrum_table(&grid, ch), Some(cfg.run.seed), &hash, "predict");
        write_table(&dir, &format!("prediction_n{}.tsv", ch.atoms), &t, &mut files)?;
    }
    let resolved = cfg.resolve()?;
    let inputs = cfg.signal_inputs(mean_pair_probability(&resolved.mc, 0.0))?;
    let mut amplitudes = Vec::new();
    let mut amp = Table::new(&["atoms", "amplitude"]);
    for n in 1..=cfg.output.max_atoms {
        let a = s_n_closed(&inputs, n as u64)? - cfg.signal.rho1;
        amp.push(vec![n.to_string(), fmt_num(a)]);
        amplitudes.push(AmplitudeLine {
            atoms: n,
            amplitude: a,
            stderr: None,
        });
    }
    write_table(&dir, "prediction_amplitudes.tsv", &provenance(amp, Some(cfg.run.seed), &hash, "predict"), &mut files)?;
    Ok(RunSummary {
        command: "predict".into(),
        config_hash: hash,
        seed: cfg.run.seed,
        files,
        clamped_shots: 0,
        amplitudes,
    })
}

/// Inputs to the inversion: spectra files or direct amplitudes, and a
/// histogram file or a direct β.
#[derive(Debug, Clone, Default)]
pub struct EstimateInputs {
    pub spectra: Vec<PathBuf>,
    pub histogram: Option<PathBuf>,
    pub model: Option<PeakModel>,
    pub rho1: Option<f64>,
    pub a1: Option<Measurement>,
    pub a2: Option<Measurement>,
    pub beta: Option<Measurement>,
    /// Use raw window counts even when the histogram carries its peak model.
    pub no_unfold: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PeakLine {
    pub atoms: u32,
    pub amplitude: Measurement,
    pub center: f64,
    pub fwhm: f64,
    /// FWHM as an ordinary frequency, Hz.
    pub fwhm_hz: f64,
    pub background: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub result: EstimateResult,
    pub peaks: Vec<PeakLine>,
    pub peak_integrals: Vec<f64>,
    pub warnings: Vec<String>,
}

impl EstimateReport {
    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Structured => serde_json::to_string_pretty(self).expect("report serializes") + "\n",
            Format::Text => {
                let r = &self.result;
                let line = |name: &str, m: &Measurement| format!("{name:<6} {:.6} ± {:.6}\n", m.value, m.sigma);
                let mut s = String::new();
                s += &line("alpha", &r.alpha);
                s += &line("beta", &r.beta);
                s += &line("nbar", &r.nbar);
                s += &line("T", &r.efficiency);
                if let Some(p) = &r.rho2 {
                    s += &line("rho2", p);
                }
                for p in &self.peaks {
                    s += &format!(
                        "peak N={}: amplitude {:.5} ± {:.5}, center {:.6e}, FWHM {:.6e} ({:.3} MHz)\n",
                        p.atoms,
                        p.amplitude.value,
                        p.amplitude.sigma,
                        p.center,
                        p.fwhm,
                        p.fwhm_hz * 1e-6
                    );
                }
                for w in &self.warnings {
                    s += &format!("warning: {w}\n");
                }
                s
            }
        }
    }
}

pub fn estimate(inputs: &EstimateInputs) -> Result<EstimateReport> {
    let mut warnings = Vec::new();
    let mut peaks = Vec::new();
    let mut pairs: Vec<(u32, Measurement)> = Vec::new();

    let (a1, a2) = if inputs.spectra.is_empty() {
        match (inputs.a1, inputs.a2) {
            (Some(a1), Some(a2)) => {
                pairs.push((1, a1));
                pairs.push((2, a2));
                (a1, a2)
            }
            _ => {
                return Err(Error::Underdetermined(
                    "give spectrum files or both one- and two-atom amplitudes".into(),
                ))
            }
        }
    } else {
        let paths: Vec<&Path> = inputs.spectra.iter().map(PathBuf::as_path).collect();
        let grid = read_spectra(&paths)?;
        if grid.channels.len() < 2 {
            return Err(Error::Underdetermined("need spectra for at least two atom numbers".into()));
        }
        let model = inputs.model.unwrap_or(PeakModel::Sinc2);
        let amps = channel_amplitudes(&grid, model, inputs.rho1)?;
        for (n, f) in &amps.fits {
            let m = Measurement::new(f.amplitude, f.errors[0]);
            pairs.push((*n, m));
            let fwhm_hz = match grid.kind {
                AxisKind::Field => grid.field_map.width_hz(f.fwhm),
                AxisKind::Detuning => crate::units::rad_to_hz(f.fwhm),
            };
            peaks.push(PeakLine {
                atoms: *n,
                amplitude: m,
                center: f.center,
                fwhm: f.fwhm,
                fwhm_hz,
                background: f.background,
            });
        }
        let get = |n: u32| {
            amps.amplitude(n)
                .ok_or_else(|| Error::Underdetermined(format!("spectra lack the N = {n} channel")))
        };
        (get(1)?, get(2)?)
    };

    let mut integrals = Vec::new();
    let beta = match (inputs.beta, &inputs.histogram) {
        (Some(b), _) => b,
        (None, Some(path)) => {
            let file = read_histogram(path)?;
            let raw = file.window_counts();
            integrals = match &file.model {
                Some(model) if !inputs.no_unfold => unfold_window_counts(&raw, model)?,
                _ => raw,
            };
            let b = beta_from_integrals(&integrals)?;
            for k in &b.inconsistent_ratios {
                warnings.push(format!(
                    "peak ratio P{}/P{} departs from the Poisson value by more than 3 sigma",
                    k + 1,
                    k
                ));
            }
            b.beta
        }
        (None, None) => return Err(Error::Underdetermined("give a histogram file or beta".into())),
    };

    let alpha = alpha_from_amplitudes(a1, a2)?;
    let mut result = invert(alpha, beta)?;
    match rho2_with_offset_errors(&pairs, result.nbar.value, result.efficiency.value) {
        Ok(fit) => result.rho2 = Some(fit.rho2),
        Err(e) => warnings.push(format!("rho2 not determined: {e}")),
    }
    Ok(EstimateReport {
        result,
        peaks,
        peak_integrals: integrals,
        warnings,
    })
}

/// `start:stop:points`.
pub fn parse_range(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || Error::Domain(format!("range `{text}` is not start:stop:points"));
    match parts.as_slice() {
        [v] => Ok(vec![v.parse().map_err(|_| bad())?]),
        [a, b, n] => {
            let (a, b): (f64, f64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
            let n: usize = n.parse().map_err(|_| bad())?;
            if n == 0 {
                return Err(bad());
            }
            Ok(crate::spectrum::linspace(a, b, n))
        }
        _ => Err(bad()),
    }
}

/// n̄ and T over an (α, β) grid; cells with no physical solution are `NA`.
pub fn sweep_inverse(alphas: &[f64], betas: &[f64]) -> Table {
    let mut t = Table::new(&["alpha", "beta", "nbar", "efficiency"]).meta("source", "sweep");
    for &a in alphas {
        for &b in betas {
            let r = invert(Measurement::exact(a), Measurement::exact(b)).ok();
            t.push(vec![
                fmt_num(a),
                fmt_num(b),
                fmt_opt(r.as_ref().map(|r| r.nbar.value)),
                fmt_opt(r.as_ref().map(|r| r.efficiency.value)),
            ]);
        }
    }
    t
}

/// α, β and resonance amplitudes S_N − ρ₁ over an (n̄, T) grid, with every
/// other parameter taken from `cfg`.
pub fn sweep_forward(cfg: &ExperimentConfig, nbars: &[f64], efficiencies: &[f64]) -> Result<Table> {
    let cfg = cfg.normalized()?;
    let hash = cfg.hash()?;
    let resolved = cfg.resolve()?;
    let rho2 = mean_pair_probability(&resolved.mc, 0.0);
    let max = cfg.output.max_atoms;
    let mut cols = vec!["nbar".to_string(), "efficiency".into(), "alpha".into(), "beta".into()];
    cols.extend((1..=max).map(|n| format!("amplitude_n{n}")));
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut t = provenance(Table::new(&col_refs), Some(cfg.run.seed), &hash, "sweep");
    let n0 = resolved.excitation.ground_atoms();
    for &nbar in nbars {
        let exc = match cfg.excitation.statistics {
            Regime::Weak => ExcitationModel::weak(nbar, n0)?,
            Regime::Strong => ExcitationModel::strong_with_mean(n0, nbar)?,
        };
        for &eff in efficiencies {
            let mut c = cfg.clone();
            c.detection.efficiency = eff;
            let mut row = vec![fmt_num(nbar), fmt_num(eff), fmt_num(alpha_forward(nbar, eff)), fmt_num(nbar * eff)];
            let inputs = c.signal_inputs(rho2).map(|mut i| {
                i.excitation = exc;
                i
            });
            for n in 1..=max {
                let a = inputs
                    .as_ref()
                    .ok()
                    .and_then(|i| s_n_closed(i, n as u64).ok())
                    .map(|s| s - cfg.signal.rho1);
                row.push(fmt_opt(a));
            }
            t.push(row);
        }
    }
    Ok(t)
}

pub fn render_table(table: &Table, format: Format) -> String {
    match format {
        Format::Text => table.render(),
        Format::Structured => {
            let meta: serde_json::Map<String, serde_json::Value> = table
                .meta
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
                .collect();
            let rows: Vec<Vec<serde_json::Value>> = table
                .rows
                .iter()
                .map(|r| {
                    r.iter()
                        .map(|c| match c.parse::<f64>() {
                            Ok(x) if x.is_finite() => serde_json::json!(x),
                            _ => serde_json::Value::Null,
                        })
                        .collect()
                })
                .collect();
            let v = serde_json::json!({ "meta": meta, "columns": table.columns, "rows": rows });
            serde_json::to_string_pretty(&v).expect("table serializes") + "\n"
        }
    }
}

/// Process exit status for an error: 2 for bad input, 3 for data the model
/// cannot explain, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Format { .. } | Error::Domain(_) => 2,
        Error::Inconsistent(_) | Error::Indeterminate(_) | Error::Underdetermined(_) => 3,
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_parsing() {
        assert_eq!(parse_range("0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_range("2.5").unwrap(), vec![2.5]);
        assert!(parse_range("0:1").is_err());
        assert!(parse_range("0:1:0").is_err());
    }

    #[test]
    fn direct_measured_numbers() {
        let r = estimate(&EstimateInputs {
            a1: Some(Measurement::exact(0.075)),
            a2: Some(Measurement::exact(0.095)),
            beta: Some(Measurement::exact(0.6)),
            ..Default::default()
        })
        .unwrap();
        assert!((r.result.nbar.value - 4.35).abs() < 1e-9);
        assert!((r.result.efficiency.value - 0.6 / 4.35).abs() < 1e-9);
    }

    #[test]
    fn zero_single_atom_amplitude_means_ideal_detector() {
        let r = estimate(&EstimateInputs {
            a1: Some(Measurement::exact(0.0)),
            a2: Some(Measurement::exact(0.05)),
            beta: Some(Measurement::exact(1.3)),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(r.result.efficiency.value, 1.0);
        assert_eq!(r.result.nbar.value, 1.3);
    }

    #[test]
    fn inverse_sweep_alpha_zero_row_is_ideal() {
        let t = sweep_inverse(&[0.0, 0.5], &[0.5, 1.0]);
        for row in t.rows.iter().take(2) {
            assert_eq!(row[3].parse::<f64>().unwrap(), 1.0);
        }
        let r = invert(Measurement::exact(0.5), Measurement::exact(1.0)).unwrap();
        assert_eq!(t.rows[3][2].parse::<f64>().unwrap(), r.nbar.value);
    }

    #[test]
    fn ideal_detector_prediction_is_linear_in_n() {
        let mut cfg = ExperimentConfig::default();
        cfg.detection.efficiency = 1.0;
        cfg.signal.rho2_peak = Some(0.02);
        let g = predicted_grid(&cfg).unwrap();
        let k = g.axis.iter().position(|&x| x == 0.0).unwrap();
        for ch in &g.channels {
            let expect = 0.01 + (ch.atoms - 1) as f64 * 0.02;
            assert!((ch.values[k].unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn weak_and_strong_predictions_agree_for_large_ensembles() {
        let mut weak = ExperimentConfig::default();
        weak.signal.rho2_peak = Some(0.02);
        weak.excitation.ground_atoms = Some(1_000_000);
        let mut strong = weak.clone();
        strong.excitation.statistics = Regime::Strong;
        let (a, b) = (predicted_grid(&weak).unwrap(), predicted_grid(&strong).unwrap());
        for (ca, cb) in a.channels.iter().zip(&b.channels) {
            for (x, y) in ca.values.iter().zip(&cb.values) {
                assert!((x.unwrap() - y.unwrap()).abs() < 1e-4);
            }
        }
    }
}
