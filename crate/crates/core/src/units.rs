//! Unit conventions.
//!
//! All frequencies and rates are angular (rad/s) internally; all times are in
//! seconds. Configuration files and display output use plain Hz and ns, with
//! the 2π conversion confined to these helpers.

use std::f64::consts::TAU;

/// Convert an ordinary frequency in Hz to angular rad/s.
pub fn from_hz(f: f64) -> f64 {
    TAU * f
}

/// Convert an angular frequency in rad/s back to Hz.
pub fn to_hz(omega: f64) -> f64 {
    omega / TAU
}

/// Convert MHz to rad/s.
pub fn from_mhz(f: f64) -> f64 {
    TAU * f * 1e6
}

/// Convert rad/s to MHz.
pub fn to_mhz(omega: f64) -> f64 {
    omega / TAU / 1e6
}

/// One nanosecond in seconds.
pub const NS: f64 = 1e-9;

/// Seconds to nanoseconds.
pub fn to_ns(t: f64) -> f64 {
    t / NS
}
