//! The repeated free-decay / π-pulse / emission protocol with photon-sector
//! bookkeeping.
//!
//! Sector `j` holds the amplitudes of all states carrying `j` emitted γ
//! photons. Each cycle evolves every sector freely for τ, pumps each sector's
//! |2⟩ amplitude to |3⟩ and lets it decay into sector `j + 1`. After `n`
//! cycles the sector-`n` |2⟩ amplitude is the never-decayed path `C(t_p)ⁿ`;
//! lower sectors collect paths that decayed and were reabsorbed.

use std::collections::BTreeMap;
use std::io::Write;

use num_complex::Complex64;

use crate::dynamics::{
    emission_map, h_unchecked, promote, pulse_phases, OdePropagator, PulseParams, SectorState, ShortTimePropagator,
};
use crate::error::{Error, Result};
use crate::output::{format_sci, write_preamble};
use crate::spectral::BathDiscretization;
use crate::units::Units;

pub const DEFAULT_VALIDITY_THRESHOLD: f64 = 0.01;

/// Free-evolution propagator used for the τ intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Propagator {
    ShortTime,
    OdeOracle { dt: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolParams {
    pub tau: f64,
    pub pulse: PulseParams,
    pub n_cycles: usize,
    pub propagator: Propagator,
    pub validity_threshold: f64,
}

impl ProtocolParams {
    pub fn new(tau: f64, pulse: PulseParams, n_cycles: usize, propagator: Propagator) -> Result<Self> {
        let p = Self {
            tau,
            pulse,
            n_cycles,
            propagator,
            validity_threshold: DEFAULT_VALIDITY_THRESHOLD,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_validity_threshold(mut self, threshold: f64) -> Self {
        self.validity_threshold = threshold;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.n_cycles == 0 {
            return Err(Error::Config("n_cycles must be at least 1".into()));
        }
        if !(self.validity_threshold > 0.0) {
            return Err(Error::Config(format!(
                "validity threshold must be positive, got {}",
                self.validity_threshold
            )));
        }
        if let Propagator::OdeOracle { dt } = self.propagator {
            if !(dt.is_finite() && dt > 0.0 && dt <= self.tau) {
                return Err(Error::Config(format!("ODE step dt={dt:e} must satisfy 0 < dt <= tau")));
            }
        }
        Ok(())
    }
}

/// State of the run after one cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    /// 1-based cycle index.
    pub cycle: usize,
    /// |2⟩ amplitude per photon count `j = 0..=cycle`.
    pub excited: Vec<Complex64>,
    /// Σ over sectors of Σ_k |β_k|².
    pub ground_weight: f64,
    /// Total squared norm over all sectors.
    pub norm: f64,
}

impl CycleRecord {
    /// |2, γ_m⟩ population after cycle m (photon after every pulse).
    pub fn p2_locked(&self) -> f64 {
        self.excited.last().map_or(0.0, |a| a.norm_sqr())
    }

    /// |2⟩ population summed over photon numbers.
    pub fn p2_traced(&self) -> f64 {
        self.excited.iter().map(|a| a.norm_sqr()).sum()
    }
}

/// Comparison of the two sides of the weak-coupling validity condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidityReport {
    /// |Σ_k [g_k h_τ(x_k)]²|²
    pub lhs: f64,
    /// |Re Σ_k g_k² h_τ(x_k)/x_k|
    pub rhs: f64,
    pub ratio: f64,
    pub threshold: f64,
    pub valid: bool,
}

#[derive(Debug, Clone)]
pub struct CycleHistory {
    pub params: ProtocolParams,
    pub records: Vec<CycleRecord>,
    /// Sector table after the last cycle, keyed by photon count.
    pub sectors: BTreeMap<usize, SectorState>,
    pub validity: ValidityReport,
    /// C(t_p) of the first cycle.
    pub first_promoted: Complex64,
    /// Σ g² |h_τ|² for the bath and interval.
    pub perturbative_weight: f64,
}

impl CycleHistory {
    pub fn cycles(&self) -> usize {
        self.records.len()
    }

    /// P2 after each cycle, photon after every pulse.
    pub fn locked_series(&self) -> Vec<f64> {
        self.records.iter().map(CycleRecord::p2_locked).collect()
    }

    pub fn traced_series(&self) -> Vec<f64> {
        self.records.iter().map(CycleRecord::p2_traced).collect()
    }

    /// CSV with columns `cycle,t_seconds,P2_locked,P2_traced,gap,norm,validity_ratio`.
    pub fn write_csv<W: Write>(&self, mut w: W, units: &Units, comment: Option<&str>) -> Result<()> {
        write_preamble(
            &mut w,
            comment,
            &[
                "cycle",
                "t_seconds",
                "P2_locked",
                "P2_traced",
                "gap",
                "norm",
                "validity_ratio",
            ],
        )?;
        for r in &self.records {
            let locked = r.p2_locked();
            let traced = r.p2_traced();
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.cycle,
                format_sci(units.time_to_si(r.cycle as f64 * self.params.tau)),
                format_sci(locked),
                format_sci(traced),
                format_sci(traced - locked),
                format_sci(r.norm),
                format_sci(self.validity.ratio),
            )?;
        }
        Ok(())
    }
}

enum Stepper {
    Short(ShortTimePropagator),
    Ode(OdePropagator),
}

impl Stepper {
    fn evolve(&self, sectors: &mut BTreeMap<usize, SectorState>) -> Result<()> {
        match self {
            Stepper::Short(p) => sectors.values_mut().try_for_each(|s| p.apply(s)),
            Stepper::Ode(p) => {
                let mut refs: Vec<&mut SectorState> = sectors.values_mut().collect();
                p.apply_all(&mut refs)
            }
        }
    }
}

/// Run `n_cycles` of free evolution, π-pulse and emission from |2, vacuum⟩.
pub fn run_protocol(params: &ProtocolParams, bath: &BathDiscretization) -> Result<CycleHistory> {
    params.validate()?;
    let pulse = &params.pulse;
    let omega2 = pulse.omega2();
    if pulse.duration() > params.tau {
        log::warn!(
            "pulse duration {:e} exceeds the free interval {:e}",
            pulse.duration(),
            params.tau
        );
    }
    let short = ShortTimePropagator::new(bath, omega2, params.tau)?;
    let weight = short.perturbative_weight();
    let stepper = match params.propagator {
        Propagator::ShortTime => Stepper::Short(short),
        Propagator::OdeOracle { dt } => Stepper::Ode(OdePropagator::new(bath, omega2, params.tau, dt)?),
    };
    let phases = pulse_phases(bath, pulse);
    let validity = validity_check(bath, omega2, params.tau, params.validity_threshold)?;

    let modes = bath.len();
    let mut sectors = BTreeMap::from([(0usize, SectorState::excited(modes))]);
    let mut records = Vec::with_capacity(params.n_cycles);
    let mut first_promoted = Complex64::new(0.0, 0.0);

    for cycle in 1..=params.n_cycles {
        stepper.evolve(&mut sectors)?;

        let mut promoted = Vec::with_capacity(sectors.len());
        for (&j, sector) in sectors.iter_mut() {
            promoted.push((j + 1, promote(sector.alpha, pulse)));
            sector.alpha = Complex64::new(0.0, 0.0);
            for (b, p) in sector.betas.iter_mut().zip(&phases) {
                *b *= p;
            }
        }
        for (j, amp) in promoted {
            sectors.entry(j).or_insert_with(|| SectorState::empty(modes)).alpha = emission_map(amp);
        }
        sectors.retain(|_, s| s.norm_sqr() > 0.0);

        if sectors.len() > params.n_cycles + 1 || sectors.keys().any(|&j| j > cycle) {
            return Err(Error::Internal(format!(
                "{} photon sectors after cycle {cycle}",
                sectors.len()
            )));
        }
        if cycle == 1 {
            first_promoted = sectors.get(&1).map_or(Complex64::new(0.0, 0.0), |s| s.alpha);
        }

        let mut excited = vec![Complex64::new(0.0, 0.0); cycle + 1];
        let mut ground_weight = 0.0;
        for (&j, s) in &sectors {
            excited[j] = s.alpha;
            ground_weight += s.ground_norm_sqr();
        }
        let norm = ground_weight + excited.iter().map(|a| a.norm_sqr()).sum::<f64>();
        records.push(CycleRecord {
            cycle,
            excited,
            ground_weight,
            norm,
        });
    }

    Ok(CycleHistory {
        params: *params,
        records,
        sectors,
        validity,
        first_promoted,
        perturbative_weight: weight,
    })
}

fn record(history: &CycleHistory, n: usize) -> Result<&CycleRecord> {
    if n == 0 || n > history.records.len() {
        return Err(Error::OutOfRange {
            what: "cycle",
            index: n,
            max: history.records.len(),
        });
    }
    Ok(&history.records[n - 1])
}

/// Survival probability with a photon emitted after each of the `n` pulses.
pub fn survival_locked(history: &CycleHistory, n: usize) -> Result<f64> {
    let p = record(history, n)?.p2_locked();
    if history.params.propagator == Propagator::ShortTime {
        // The never-decayed path is the n-fold product of the first cycle.
        let log_expected = 2.0 * n as f64 * history.first_promoted.norm().ln();
        let expected = log_expected.exp();
        if expected > 1e-290 && ((p - expected) / expected).abs() > 1e-12 {
            return Err(Error::Internal(format!(
                "sector-{n} population {p:e} differs from |C(t_p)|^(2n) = {expected:e}"
            )));
        }
    }
    Ok(p)
}

/// Survival probability of |2⟩ traced over all photon numbers.
pub fn survival_traced(history: &CycleHistory, n: usize) -> Result<f64> {
    Ok(record(history, n)?.p2_traced())
}

/// `Re[h_τ(x)/x]`, equal to `−|h_τ(x)|²/2`.
fn re_h_over_x(x: f64, tau: f64) -> f64 {
    let z = x * tau;
    if z.abs() < 1e-4 {
        -0.5 * tau * tau * (1.0 - z * z / 12.0)
    } else {
        h_unchecked(x, tau).re / x
    }
}

/// Evaluate both sides of the weak-coupling condition for one interval.
pub fn validity_check(bath: &BathDiscretization, omega2: f64, tau: f64, threshold: f64) -> Result<ValidityReport> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidInput(format!("tau must be positive, got {tau}")));
    }
    let mut square_sum = Complex64::new(0.0, 0.0);
    let mut shift = 0.0;
    for (&w, &g) in bath.omegas().iter().zip(bath.couplings()) {
        let x = omega2 - w;
        let gh = g * h_unchecked(x, tau);
        square_sum += gh * gh;
        shift += g * g * re_h_over_x(x, tau);
    }
    let lhs = square_sum.norm_sqr();
    let rhs = shift.abs();
    let ratio = if rhs > 0.0 {
        lhs / rhs
    } else if lhs > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    Ok(ValidityReport {
        lhs,
        rhs,
        ratio,
        threshold,
        valid: ratio < threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{discretize, GridSpec, SpectralModel};

    fn pulse() -> PulseParams {
        PulseParams::new(40.0, 0.5, 3.0).unwrap()
    }

    fn weak_flat(modes: usize) -> BathDiscretization {
        let m = SpectralModel::flat_band(1e-4, 0.0, 4.0).unwrap();
        discretize(&m, &GridSpec::midpoint(0.0, 4.0, modes)).unwrap()
    }

    #[test]
    fn zero_coupling_keeps_the_atom_excited() {
        let bath = BathDiscretization::from_parts(vec![0.2, 0.7], vec![0.0, 0.0], vec![0.5, 0.5]).unwrap();
        let p = ProtocolParams::new(2.0, pulse(), 6, Propagator::ShortTime).unwrap();
        let h = run_protocol(&p, &bath).unwrap();
        assert_eq!(h.sectors.len(), 1);
        assert!(h.sectors.contains_key(&6));
        for n in 1..=6 {
            assert!((survival_locked(&h, n).unwrap() - 1.0).abs() < 1e-15);
            assert!((survival_traced(&h, n).unwrap() - 1.0).abs() < 1e-15);
        }
        assert_eq!(h.validity.ratio, 0.0);
        assert!(h.validity.valid);
    }

    #[test]
    fn out_of_range_cycles_are_rejected() {
        let p = ProtocolParams::new(1.0, pulse(), 3, Propagator::ShortTime).unwrap();
        let h = run_protocol(&p, &weak_flat(50)).unwrap();
        for n in [0, 4] {
            assert!(matches!(survival_locked(&h, n), Err(Error::OutOfRange { max: 3, .. })));
            assert!(matches!(survival_traced(&h, n), Err(Error::OutOfRange { .. })));
        }
    }

    #[test]
    fn invalid_parameters() {
        assert!(ProtocolParams::new(0.0, pulse(), 3, Propagator::ShortTime).is_err());
        assert!(ProtocolParams::new(1.0, pulse(), 0, Propagator::ShortTime).is_err());
        assert!(ProtocolParams::new(1.0, pulse(), 3, Propagator::OdeOracle { dt: 2.0 }).is_err());
        let p = ProtocolParams::new(1.0, pulse(), 3, Propagator::ShortTime).unwrap();
        assert!(p.with_validity_threshold(0.0).validate().is_err());
        assert!(validity_check(&weak_flat(10), 0.5, -1.0, 0.01).is_err());
    }

    #[test]
    fn sectors_never_exceed_cycle_count() {
        let p = ProtocolParams::new(1.5, pulse(), 5, Propagator::ShortTime).unwrap();
        let h = run_protocol(&p, &weak_flat(80)).unwrap();
        assert!(h.sectors.len() <= 6);
        for r in &h.records {
            assert_eq!(r.excited.len(), r.cycle + 1);
            assert!(r.p2_locked() <= r.p2_traced());
            assert!(r.p2_traced() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn re_h_over_x_identity_and_series() {
        for &(x, t) in &[(1e-9, 2.0), (3e-5, 1.0), (0.4, 3.0), (-2.5, 1.7)] {
            let h = h_unchecked(x, t);
            let lhs = re_h_over_x(x, t);
            assert!((lhs + 0.5 * h.norm_sqr()).abs() < 1e-13 * t * t, "x={x}");
        }
    }

    #[test]
    fn mode_one_period_away_contributes_nothing() {
        // A mode exactly one period away has h = 0; the report then stays vacuous.
        let t = 2.0;
        let x = 2.0 * std::f64::consts::PI / t;
        let bath = BathDiscretization::from_parts(vec![1.0 - x], vec![0.3], vec![1.0]).unwrap();
        let r = validity_check(&bath, 1.0, t, 0.01).unwrap();
        assert!(r.lhs < 1e-28 && r.rhs < 1e-28);
    }

    #[test]
    fn csv_layout() {
        let p = ProtocolParams::new(1.0, pulse(), 2, Propagator::ShortTime).unwrap();
        let h = run_protocol(&p, &weak_flat(20)).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf, &Units::new(2.0).unwrap(), Some("run")).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# run");
        assert_eq!(lines[1], "cycle,t_seconds,P2_locked,P2_traced,gap,norm,validity_ratio");
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("1,5.00000000000e-1,"));
        assert!(lines[3].starts_with("2,1.00000000000e0,"));
    }
}
