//! Physical constants (SI, CODATA 2018).

use std::f64::consts::PI;

/// Speed of light in vacuum (m/s).
pub const C0: f64 = 299_792_458.0;
/// Vacuum permeability (H/m).
pub const MU0: f64 = 1.256_637_062_12e-6;
/// Vacuum permittivity (F/m).
pub const EPS0: f64 = 8.854_187_812_8e-12;

pub const MU0_OVER_4PI: f64 = MU0 / (4.0 * PI);

/// 1 / (4 pi eps0), (m/F).
pub const INV_4PI_EPS0: f64 = 1.0 / (4.0 * PI * EPS0);

/// Free-space wavelength at `frequency` Hz.
pub fn wavelength(frequency: f64) -> f64 {
    C0 / frequency
}

/// Free-space wavenumber k = omega * sqrt(mu0 eps0).
pub fn wavenumber(frequency: f64) -> f64 {
    2.0 * PI * frequency * (MU0 * EPS0).sqrt()
}
