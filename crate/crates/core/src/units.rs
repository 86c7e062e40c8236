//! Unit conversions used at the I/O boundary.
//!
//! Everything inside the library is SI with angular frequencies (rad/s).
//! Configs and reports quote ordinary frequencies in MHz (`ω/2π`).

use std::f64::consts::PI;

/// Reduced Planck constant in J·s (exact since the 2019 SI redefinition).
pub const HBAR: f64 = 1.054_571_817e-34;

pub const TWO_PI: f64 = 2.0 * PI;

/// `ω = 2π·f` for `f` in MHz.
#[inline]
pub fn mhz(f_mhz: f64) -> f64 {
    TWO_PI * f_mhz * 1e6
}

/// `f = ω/2π` in MHz.
#[inline]
pub fn to_mhz(omega: f64) -> f64 {
    omega / (TWO_PI * 1e6)
}

#[inline]
pub fn ghz(f_ghz: f64) -> f64 {
    TWO_PI * f_ghz * 1e9
}

#[inline]
pub fn us(t_us: f64) -> f64 {
    t_us * 1e-6
}

#[inline]
pub fn to_us(t: f64) -> f64 {
    t * 1e6
}

/// dBm (1 mW reference) to watts; `-inf` maps to zero.
#[inline]
pub fn dbm_to_watts(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

#[inline]
pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * (watts / 1e-3).log10()
}
