//! Physical constants (CODATA 2018, exact where the SI defines them).

pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
pub const BOLTZMANN: f64 = 1.380_649e-23;
pub const HBAR: f64 = 1.054_571_817e-34;
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
pub const ELECTRON_MASS: f64 = 9.109_383_701_5e-31;

/// Atomic mass of neutral ²⁴Mg in u.
pub const MG24_ATOMIC_MASS_U: f64 = 23.985_041_697;

/// Layout coordinates are micrometres; everything else is SI.
pub const MICRON: f64 = 1e-6;

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
