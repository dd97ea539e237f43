//! Shared fixtures for the benchmarks: the hydrogen reservoir in units of ω_c.

use qaze_core::{discretize, BathDiscretization, GridSpec, PulseParams, SpectralModel};

pub const ETA: f64 = 6.435e-9;
pub const OMEGA_C: f64 = 8.491e18;
pub const OMEGA_2: f64 = 1.55e16;
/// ω₂ in units of ω_c.
pub const W2: f64 = OMEGA_2 / OMEGA_C;

pub fn hydrogen_si() -> SpectralModel {
    SpectralModel::hydrogen(ETA, OMEGA_C).expect("valid constants")
}

/// Coupling-scaled hydrogen bath on the default grid, in units of ω_c.
pub fn hydrogen_bath(modes: usize, scale: f64) -> BathDiscretization {
    let m = SpectralModel::hydrogen(ETA, 1.0)
        .expect("valid constants")
        .with_coupling_scale(scale);
    discretize(&m, &GridSpec::default_for(&m, modes)).expect("grid covers the support")
}

pub fn pulse() -> PulseParams {
    PulseParams::new(400.0, W2, 1.3).expect("valid pulse")
}

/// RK4 step that keeps the fastest mode phase at 0.05 rad per step.
pub fn ode_step(tau: f64) -> f64 {
    tau / (tau * 6.0 / 0.05).ceil()
}
