//! Per-N spectra on a shared detuning or field axis.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::units::FieldMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisKind {
    /// Angular detuning, rad/s.
    Detuning,
    /// Electric field, V/cm.
    Field,
}

impl AxisKind {
    pub fn unit(&self) -> &'static str {
        match self {
            AxisKind::Detuning => "rad/s",
            AxisKind::Field => "V/cm",
        }
    }
}

/// S_N for one post-selected atom number. `None` marks a point with no shots.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumChannel {
    pub atoms: u32,
    pub values: Vec<Option<f64>>,
    pub errors: Option<Vec<Option<f64>>>,
    pub shots: Option<Vec<u64>>,
}

impl SpectrumChannel {
    pub fn exact(atoms: u32, values: Vec<f64>) -> Self {
        Self {
            atoms,
            values: values.into_iter().map(Some).collect(),
            errors: None,
            shots: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumGrid {
    pub kind: AxisKind,
    pub axis: Vec<f64>,
    pub field_map: FieldMap,
    pub channels: Vec<SpectrumChannel>,
}

impl SpectrumGrid {
    pub fn new(kind: AxisKind, axis: Vec<f64>, field_map: FieldMap) -> Result<Self> {
        if axis.is_empty() {
            return Err(domain("spectrum axis is empty"));
        }
        if axis.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(domain("spectrum axis must be strictly increasing"));
        }
        Ok(Self {
            kind,
            axis,
            field_map,
            channels: Vec::new(),
        })
    }

    pub fn push(&mut self, channel: SpectrumChannel) -> Result<()> {
        if channel.values.len() != self.axis.len() {
            return Err(domain(format!(
                "channel N={} has {} points, axis has {}",
                channel.atoms,
                channel.values.len(),
                self.axis.len()
            )));
        }
        if channel.values.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(domain(format!("channel N={} has a value outside [0, 1]", channel.atoms)));
        }
        self.channels.push(channel);
        Ok(())
    }

    pub fn channel(&self, atoms: u32) -> Option<&SpectrumChannel> {
        self.channels.iter().find(|c| c.atoms == atoms)
    }

    /// Axis converted to angular detuning.
    pub fn detunings(&self) -> Vec<f64> {
        match self.kind {
            AxisKind::Detuning => self.axis.clone(),
            AxisKind::Field => self.axis.iter().map(|&f| self.field_map.detuning(f)).collect(),
        }
    }
}

/// Evenly spaced points from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let step = (stop - start) / (points - 1) as f64;
            (0..points).map(|k| start + step * k as f64).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_must_increase() {
        assert!(SpectrumGrid::new(AxisKind::Field, vec![1.0, 1.0], FieldMap::default()).is_err());
        assert!(SpectrumGrid::new(AxisKind::Field, vec![], FieldMap::default()).is_err());
        assert!(SpectrumGrid::new(AxisKind::Field, vec![1.0, 2.0], FieldMap::default()).is_ok());
    }

    #[test]
    fn channel_checks() {
        let mut g = SpectrumGrid::new(AxisKind::Detuning, vec![0.0, 1.0], FieldMap::default()).unwrap();
        assert!(g.push(SpectrumChannel::exact(1, vec![0.1])).is_err());
        assert!(g.push(SpectrumChannel::exact(1, vec![0.1, 1.2])).is_err());
        g.push(SpectrumChannel::exact(1, vec![0.1, 0.2])).unwrap();
        assert!(g.channel(1).is_some());
        assert!(g.channel(2).is_none());
    }

    #[test]
    fn field_axis_converts() {
        let map = FieldMap::new(6.37, 1e9);
        let g = SpectrumGrid::new(AxisKind::Field, vec![6.36, 6.37], map).unwrap();
        let d = g.detunings();
        assert!((d[0] + 1e7).abs() < 1e-3);
        assert_eq!(d[1], 0.0);
    }

    #[test]
    fn linspace_endpoints() {
        let v = linspace(-1.0, 1.0, 5);
        assert_eq!(v, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(linspace(2.0, 3.0, 1), vec![2.0]);
    }
}
