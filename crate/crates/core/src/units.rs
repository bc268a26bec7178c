//! Physical constants (CODATA 2018) and unit conversions.
//!
//! Everything inside the crate is SI with angular frequencies in rad/s.
//! Atomic-unit dipole moments are converted at the boundary.

use std::f64::consts::PI;

/// Reduced Planck constant, J s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Vacuum permittivity, F/m.
pub const EPSILON_0: f64 = 8.854_187_812_8e-12;
/// Boltzmann constant, J/K.
pub const K_B: f64 = 1.380_649e-23;
/// Atomic unit of electric dipole moment e·a₀, C m.
pub const AU_DIPOLE: f64 = 8.478_353_625_5e-30;
/// Unified atomic mass unit, kg.
pub const AMU: f64 = 1.660_539_066_60e-27;
/// Mass of ²³Na, kg.
pub const SODIUM_MASS: f64 = 22.989_769_28 * AMU;

/// Angular factor of both 37S–nP dipole matrix elements, √2/3.
pub const DEFAULT_ANGULAR_FACTOR: f64 = std::f64::consts::SQRT_2 / 3.0;

/// Default field-to-detuning coefficient: 53 MHz over 35 mV/cm, in rad/s per V/cm.
pub const DEFAULT_FIELD_COEFFICIENT: f64 = 2.0 * PI * 53.0e6 / 0.035;

pub fn hz_to_rad(f: f64) -> f64 {
    2.0 * PI * f
}

pub fn rad_to_hz(w: f64) -> f64 {
    w / (2.0 * PI)
}

/// Number density from cm⁻³ to m⁻³.
pub fn per_cm3(n: f64) -> f64 {
    n * 1e6
}

/// Linear map between electric field (V/cm) and angular detuning (rad/s).
///
/// The resonance sits at `center_field`; detuning grows with the field at
/// `coefficient` rad/s per V/cm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldMap {
    pub center_field: f64,
    pub coefficient: f64,
}

impl FieldMap {
    pub fn new(center_field: f64, coefficient: f64) -> Self {
        Self {
            center_field,
            coefficient,
        }
    }

    pub fn detuning(&self, field: f64) -> f64 {
        (field - self.center_field) * self.coefficient
    }

    pub fn field(&self, detuning: f64) -> f64 {
        self.center_field + detuning / self.coefficient
    }

    /// Converts a field interval (V/cm) into an ordinary frequency interval (Hz).
    pub fn width_hz(&self, field_width: f64) -> f64 {
        rad_to_hz(field_width * self.coefficient)
    }
}

impl Default for FieldMap {
    fn default() -> Self {
        Self::new(0.0, DEFAULT_FIELD_COEFFICIENT)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_coefficient_maps_35_mv_to_53_mhz() {
        let map = FieldMap::default();
        assert!((map.width_hz(0.035) - 53.0e6).abs() < 1e-3);
        // 3 mV/cm uncertainty maps onto ~4.5 MHz
        assert!((map.width_hz(0.003) - 4.542_857e6).abs() < 1.0);
    }

    #[test]
    fn field_detuning_round_trip() {
        let map = FieldMap::new(6.37, DEFAULT_FIELD_COEFFICIENT);
        for f in [6.30, 6.37, 6.41] {
            assert!((map.field(map.detuning(f)) - f).abs() < 1e-12);
        }
        assert_eq!(map.detuning(6.37), 0.0);
    }
}
