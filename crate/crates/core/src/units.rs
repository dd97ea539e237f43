//! Conversion between SI quantities and the internal dimensionless system.
//!
//! Internally every angular frequency is divided by a reference frequency
//! `omega_ref` and every time is multiplied by it, so products like `omega * t`
//! are unchanged and typical magnitudes stay near unity. Spectral densities and
//! rates carry units of angular frequency and scale like frequencies.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Units {
    omega_ref: f64,
}

impl Units {
    pub fn new(omega_ref: f64) -> Result<Self> {
        if !(omega_ref.is_finite() && omega_ref > 0.0) {
            return Err(Error::Config(format!(
                "omega_ref must be positive and finite, got {omega_ref}"
            )));
        }
        Ok(Self { omega_ref })
    }

    /// Identity conversion (internal units are SI).
    pub fn si() -> Self {
        Self { omega_ref: 1.0 }
    }

    pub fn omega_ref(&self) -> f64 {
        self.omega_ref
    }

    pub fn frequency_to_internal(&self, omega_si: f64) -> f64 {
        omega_si / self.omega_ref
    }

    pub fn frequency_to_si(&self, omega: f64) -> f64 {
        omega * self.omega_ref
    }

    pub fn time_to_internal(&self, t_si: f64) -> f64 {
        t_si * self.omega_ref
    }

    pub fn time_to_si(&self, t: f64) -> f64 {
        t / self.omega_ref
    }

    /// Rates share the dimension of angular frequency.
    pub fn rate_to_si(&self, rate: f64) -> f64 {
        self.frequency_to_si(rate)
    }

    pub fn rate_to_internal(&self, rate_si: f64) -> f64 {
        self.frequency_to_internal(rate_si)
    }
}

impl Default for Units {
    fn default() -> Self {
        Self::si()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_phase_products() {
        let u = Units::new(8.491e18).unwrap();
        let w = 1.55e16;
        let t = 3.0e-19;
        let wi = u.frequency_to_internal(w);
        let ti = u.time_to_internal(t);
        assert!(((wi * ti) - w * t).abs() < 1e-15);
        assert!((u.frequency_to_si(wi) - w).abs() / w < 1e-15);
        assert!((u.time_to_si(ti) - t).abs() / t < 1e-15);
    }

    #[test]
    fn rejects_nonpositive_reference() {
        assert!(Units::new(0.0).is_err());
        assert!(Units::new(f64::NAN).is_err());
    }
}
