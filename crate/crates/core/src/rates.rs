//! Effective decay rate `R(τ) = 2π ∫ F(ω, τ) G(ω) dω`, its limits, rate
//! curves over τ, and exponential fits of simulated survival histories.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;

use crate::cycles::CycleHistory;
use crate::error::{ensure_finite, Error, Result};
use crate::output::{format_sci, write_preamble};
use crate::quadrature::{integrate_from_neg_infinity, integrate_pieces, integrate_to_infinity, QuadResult, Tolerance};
use crate::spectral::{discretize, sinc, BathDiscretization, GridSpec, SpectralModel};
use crate::units::Units;

pub const DEFAULT_RATE_TOLERANCE: f64 = 1e-6;

/// Side lobes integrated per block before testing the averaged tail.
const LOBE_BLOCK: usize = 64;
/// Explicit side lobes per side before giving up.
const MAX_LOBES: usize = 1 << 21;
const PIECE_INTERVALS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuadMode {
    /// Lobe-by-lobe adaptive quadrature to the given relative tolerance.
    Adaptive { tolerance: f64 },
    /// Sum over a discretized bath: Σ_k g_k² τ sinc²(x_k τ/2).
    Grid(GridSpec),
}

impl Default for QuadMode {
    fn default() -> Self {
        QuadMode::Adaptive {
            tolerance: DEFAULT_RATE_TOLERANCE,
        }
    }
}

/// Accumulates piece results and remembers whether all converged.
#[derive(Default)]
struct Tally {
    value: f64,
    error: f64,
    converged: bool,
}

impl Tally {
    fn new() -> Self {
        Self {
            converged: true,
            ..Default::default()
        }
    }

    fn add(&mut self, r: QuadResult) -> f64 {
        self.value += r.value;
        self.error += r.error;
        self.converged &= r.converged;
        r.value
    }
}

struct Overlap<'a, G: Fn(f64) -> f64 + Sync> {
    g: &'a G,
    support: (f64, f64),
    breaks: &'a [f64],
    jumps: &'a [f64],
    scale: f64,
    omega2: f64,
    tau: f64,
    tol: f64,
}

impl<G: Fn(f64) -> f64 + Sync> Overlap<'_, G> {
    fn window(&self, w: f64) -> f64 {
        let s = sinc(0.5 * (self.omega2 - w) * self.tau);
        self.tau / (2.0 * PI) * s * s * (self.g)(w)
    }

    /// sin² replaced by its mean 1/2.
    fn averaged(&self, w: f64) -> f64 {
        let d = w - self.omega2;
        (self.g)(w) / (PI * self.tau * d * d)
    }

    fn pieces(&self, a: f64, b: f64) -> Option<Vec<f64>> {
        let a = a.max(self.support.0);
        let b = b.min(self.support.1);
        if !(b > a) {
            return None;
        }
        let mut pts = vec![a];
        pts.extend(self.breaks.iter().copied().filter(|&p| p > a && p < b));
        pts.push(b);
        Some(pts)
    }

    fn explicit(&self, a: f64, b: f64, tol: Tolerance) -> QuadResult {
        match self.pieces(a, b) {
            Some(pts) => integrate_pieces(&|w| self.window(w), &pts, tol),
            None => QuadResult {
                value: 0.0,
                error: 0.0,
                intervals: 0,
                converged: true,
            },
        }
    }

    fn smooth(&self, a: f64, b: f64, tol: Tolerance) -> QuadResult {
        match self.pieces(a, b) {
            Some(pts) => integrate_pieces(&|w| self.averaged(w), &pts, tol),
            None => QuadResult {
                value: 0.0,
                error: 0.0,
                intervals: 0,
                converged: true,
            },
        }
    }

    /// Averaged integrand from `a` to the end of the support (right side) or
    /// from the start of the support to `a` (left side).
    fn averaged_tail(&self, a: f64, right: bool, tol: Tolerance) -> QuadResult {
        let (lo, hi) = self.support;
        let mut tally = Tally::new();
        if right {
            let last = self
                .breaks
                .iter()
                .copied()
                .filter(|&p| p > a && p < hi)
                .fold(a, f64::max);
            tally.add(self.smooth(a, last, tol));
            if hi.is_finite() {
                tally.add(self.smooth(last.max(a), hi, tol));
            } else {
                let start = last.max(a).max(lo);
                let scale = self.scale.max(start - self.omega2);
                tally.add(integrate_to_infinity(|w| self.averaged(w), start, scale, tol));
            }
        } else {
            let first = self
                .breaks
                .iter()
                .copied()
                .filter(|&p| p < a && p > lo)
                .fold(a, f64::min);
            tally.add(self.smooth(first, a, tol));
            if lo.is_finite() {
                tally.add(self.smooth(lo, first.min(a), tol));
            } else {
                let end = first.min(a).min(hi);
                let scale = self.scale.max(self.omega2 - end);
                tally.add(integrate_from_neg_infinity(|w| self.averaged(w), end, scale, tol));
            }
        }
        QuadResult {
            value: tally.value,
            error: tally.error,
            intervals: 0,
            converged: tally.converged,
        }
    }

    fn jump_beyond(&self, edge: f64, right: bool) -> bool {
        self.jumps.iter().any(|&j| if right { j > edge } else { j < edge })
    }

    fn run(&self) -> Result<f64> {
        let lobe = 2.0 * PI / self.tau;
        let w2 = self.omega2;
        let (lo, hi) = self.support;
        let piece_tol = |floor: f64| Tolerance {
            abs: floor,
            rel: 0.1 * self.tol,
            max_intervals: PIECE_INTERVALS,
        };

        let mut tally = Tally::new();
        let main = tally.add(self.explicit(w2 - lobe, w2 + lobe, piece_tol(0.0)));
        let floor = 1e-3 * self.tol * main.abs();
        let tol = piece_tol(floor);

        // Sides: right (true) and left (false); `done` once the tail is accounted for.
        let mut done = [w2 + lobe >= hi, w2 - lobe <= lo];
        let mut m = 1usize;
        while !(done[0] && done[1]) {
            if m > MAX_LOBES {
                return Err(Error::AccuracyNotReached {
                    estimate: tally.value,
                    error: tally.value.abs().max(tally.error),
                });
            }
            let m_end = m + LOBE_BLOCK;
            for (side, right) in [(0usize, true), (1usize, false)] {
                if done[side] {
                    continue;
                }
                let sign = if right { 1.0 } else { -1.0 };
                let mut block = 0.0;
                for k in m..m_end {
                    let (a, b) = (w2 + sign * k as f64 * lobe, w2 + sign * (k + 1) as f64 * lobe);
                    let (a, b) = if right { (a, b) } else { (b, a) };
                    block += tally.add(self.explicit(a, b, tol));
                }
                let inner = w2 + sign * m as f64 * lobe;
                let outer = w2 + sign * m_end as f64 * lobe;
                if (right && outer >= hi) || (!right && outer <= lo) {
                    done[side] = true;
                    continue;
                }
                if self.jump_beyond(outer, right) {
                    continue;
                }
                let (a, b) = if right { (inner, outer) } else { (outer, inner) };
                let avg = self.smooth(a, b, tol).value;
                if (block - avg).abs() <= 0.1 * self.tol * tally.value.abs() {
                    tally.add(self.averaged_tail(outer, right, tol));
                    done[side] = true;
                }
            }
            m = m_end;
        }

        if tally.converged {
            Ok(tally.value)
        } else {
            Err(Error::AccuracyNotReached {
                estimate: tally.value,
                error: tally.error,
            })
        }
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("tau must be positive, got {tau}")))
    }
}

fn check_tolerance(tolerance: f64) -> Result<()> {
    if tolerance > 0.0 && tolerance < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "tolerance must lie in (0, 1), got {tolerance}"
        )))
    }
}

/// `∫ F(ω, τ) dω` evaluated with the same lobe machinery as the rate; equals 1.
pub fn broadening_mass(omega2: f64, tau: f64, tolerance: f64) -> Result<f64> {
    ensure_finite("omega2", omega2)?;
    check_tau(tau)?;
    check_tolerance(tolerance)?;
    let one = |_: f64| 1.0;
    Overlap {
        g: &one,
        support: (f64::NEG_INFINITY, f64::INFINITY),
        breaks: &[],
        jumps: &[],
        scale: 2.0 * PI / tau,
        omega2,
        tau,
        tol: tolerance,
    }
    .run()
}

fn jump_points(model: &SpectralModel) -> Vec<f64> {
    match model {
        SpectralModel::FlatBand {
            g0_density,
            omega_min,
            omega_max,
        } if *g0_density > 0.0 => vec![*omega_min, *omega_max],
        SpectralModel::Tabulated(t) => {
            let (w, g) = (t.omegas(), t.values());
            let mut j = Vec::new();
            if g[0] != 0.0 {
                j.push(w[0]);
            }
            if g[g.len() - 1] != 0.0 {
                j.push(w[w.len() - 1]);
            }
            j
        }
        _ => Vec::new(),
    }
}

/// `R(τ) = 2π ∫ F(ω, τ) G(ω) dω`.
pub fn decay_rate_quadrature(model: &SpectralModel, omega2: f64, tau: f64, quad: &QuadMode) -> Result<f64> {
    ensure_finite("omega2", omega2)?;
    check_tau(tau)?;
    match quad {
        QuadMode::Adaptive { tolerance } => {
            check_tolerance(*tolerance)?;
            model.validate()?;
            let breaks = model.feature_points();
            let jumps = jump_points(model);
            let g = |w: f64| model.density(w);
            let overlap = Overlap {
                g: &g,
                support: model.support(),
                breaks: &breaks,
                jumps: &jumps,
                scale: model.characteristic_scale(),
                omega2,
                tau,
                tol: *tolerance,
            };
            match overlap.run() {
                Ok(v) => Ok(2.0 * PI * v),
                Err(Error::AccuracyNotReached { estimate, error }) => Err(Error::AccuracyNotReached {
                    estimate: 2.0 * PI * estimate,
                    error: 2.0 * PI * error,
                }),
                Err(e) => Err(e),
            }
        }
        QuadMode::Grid(grid) => {
            let bath = discretize(model, grid)?;
            Ok(discrete_decay_rate(&bath, omega2, tau))
        }
    }
}

/// `Σ_k g_k² τ sinc²((ω₂ − ω_k)τ/2)`: the rate seen by a discrete bath.
pub fn discrete_decay_rate(bath: &BathDiscretization, omega2: f64, tau: f64) -> f64 {
    bath.omegas()
        .iter()
        .zip(bath.couplings())
        .map(|(w, g)| {
            let s = sinc(0.5 * (omega2 - w) * tau);
            g * g * tau * s * s
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoldenRule {
    /// 2π G(ω₂)
    pub rate: f64,
    /// False when ω₂ lies outside the model support (rate is then zero).
    pub in_support: bool,
}

/// Golden-rule rate `2π G(ω₂)`, the τ → ∞ limit of R(τ).
pub fn golden_rule_rate(model: &SpectralModel, omega2: f64) -> Result<GoldenRule> {
    let g = model.evaluate_g(omega2)?;
    let (lo, hi) = model.support();
    let in_support = omega2 > lo && omega2 < hi;
    if !in_support {
        log::warn!("omega2 = {omega2:e} lies outside the model support [{lo:e}, {hi:e}]");
        return Ok(GoldenRule { rate: 0.0, in_support });
    }
    Ok(GoldenRule {
        rate: 2.0 * PI * g,
        in_support,
    })
}

/// Sampled τ → R(τ) with the golden-rule reference.
#[derive(Debug, Clone, PartialEq)]
pub struct RateCurve {
    pub taus: Vec<f64>,
    pub rates: Vec<f64>,
    pub golden_rule: f64,
    pub omega2: f64,
    /// Indices whose quadrature missed the tolerance (best estimate kept).
    pub failures: Vec<usize>,
}

impl RateCurve {
    pub fn ratios(&self) -> Vec<f64> {
        self.rates.iter().map(|r| r / self.golden_rule).collect()
    }

    /// Index of the largest rate.
    pub fn argmax(&self) -> Option<usize> {
        self.rates
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
    }

    /// First τ (log-interpolated) at which R crosses the golden-rule rate
    /// from below.
    pub fn first_crossing(&self) -> Option<f64> {
        let gr = self.golden_rule;
        self.taus
            .windows(2)
            .zip(self.rates.windows(2))
            .find(|(_, r)| r[0] < gr && r[1] >= gr)
            .map(|(t, r)| {
                let f = (gr - r[0]) / (r[1] - r[0]);
                (t[0].ln() + f * (t[1].ln() - t[0].ln())).exp()
            })
    }

    /// CSV with columns `tau_s,R_per_s,R_over_golden_rule`.
    pub fn write_csv<W: Write>(&self, mut w: W, units: &Units, comment: Option<&str>) -> Result<()> {
        write_preamble(&mut w, comment, &["tau_s", "R_per_s", "R_over_golden_rule"])?;
        for (tau, rate) in self.taus.iter().zip(&self.rates) {
            writeln!(
                w,
                "{},{},{}",
                format_sci(units.time_to_si(*tau)),
                format_sci(units.rate_to_si(*rate)),
                format_sci(rate / self.golden_rule),
            )?;
        }
        Ok(())
    }
}

/// Evaluate R(τ) on an increasing τ grid; points are independent and run in parallel.
pub fn rate_curve(model: &SpectralModel, omega2: f64, taus: &[f64], quad: &QuadMode) -> Result<RateCurve> {
    if taus.is_empty() {
        return Err(Error::InvalidInput("rate curve needs at least one tau".into()));
    }
    if taus.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("taus must be strictly increasing".into()));
    }
    let golden_rule = golden_rule_rate(model, omega2)?.rate;
    let results: Vec<Result<f64>> = taus
        .par_iter()
        .map(|&tau| decay_rate_quadrature(model, omega2, tau, quad))
        .collect();
    let mut rates = Vec::with_capacity(taus.len());
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => rates.push(v),
            Err(Error::AccuracyNotReached { estimate, .. }) => {
                log::warn!("rate at tau = {:e} missed its tolerance", taus[i]);
                rates.push(estimate);
                failures.push(i);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(RateCurve {
        taus: taus.to_vec(),
        rates,
        golden_rule,
        omega2,
        failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurvivalKind {
    Locked,
    Traced,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub rate: f64,
    pub intercept: f64,
    /// Largest relative deviation of ln P from the fitted line.
    pub residual: f64,
    pub points: usize,
}

/// Least-squares line through `−ln P` against `t`; values below 1e-300 are skipped.
pub fn fit_decay(times: &[f64], probabilities: &[f64]) -> Result<RateFit> {
    if times.len() != probabilities.len() {
        return Err(Error::InvalidInput("times and probabilities differ in length".into()));
    }
    let mut pts = Vec::with_capacity(times.len());
    for (&t, &p) in times.iter().zip(probabilities) {
        if !(p > 0.0) {
            return Err(Error::FitDomain(format!("nonpositive probability {p} at t = {t:e}")));
        }
        if p >= 1e-300 {
            pts.push((t, -p.ln()));
        }
    }
    if pts.len() < 2 {
        return Err(Error::FitDomain(format!(
            "need at least 2 usable points, have {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let t_mean = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let y_mean = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(sxy, sxx), (t, y)| {
        let dt = t - t_mean;
        (sxy + dt * (y - y_mean), sxx + dt * dt)
    });
    if sxx == 0.0 {
        return Err(Error::FitDomain("all sample times coincide".into()));
    }
    let rate = sxy / sxx;
    let intercept = y_mean - rate * t_mean;
    let residual = pts
        .iter()
        .map(|(t, y)| {
            let dev = (y - (intercept + rate * t)).abs();
            if *y != 0.0 {
                dev / y.abs()
            } else {
                dev
            }
        })
        .fold(0.0, f64::max);
    Ok(RateFit {
        rate,
        intercept,
        residual,
        points: pts.len(),
    })
}

/// Fit the decay rate of a simulated history over `t = mτ`, `m = 1..n`.
pub fn fit_rate(history: &CycleHistory, tau: f64, which: SurvivalKind) -> Result<RateFit> {
    check_tau(tau)?;
    if history.cycles() < 2 {
        return Err(Error::FitDomain(format!(
            "need at least 2 cycles, have {}",
            history.cycles()
        )));
    }
    let probs = match which {
        SurvivalKind::Locked => history.locked_series(),
        SurvivalKind::Traced => history.traced_series(),
    };
    let times: Vec<f64> = (1..=probs.len()).map(|m| m as f64 * tau).collect();
    fit_decay(&times, &probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn curve(taus: Vec<f64>, rates: Vec<f64>) -> RateCurve {
        RateCurve {
            taus,
            rates,
            golden_rule: 2.0,
            omega2: 1.0,
            failures: vec![],
        }
    }

    #[test]
    fn crossing_is_log_interpolated() {
        let c = curve(vec![1.0, 100.0, 1e4], vec![1.0, 3.0, 5.0]);
        assert!((c.first_crossing().unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(c.argmax(), Some(2));
        assert_eq!(c.ratios(), vec![0.5, 1.5, 2.5]);
        assert_eq!(curve(vec![1.0, 2.0], vec![3.0, 4.0]).first_crossing(), None);
    }

    #[test]
    fn discrete_rate_matches_mode_sum() {
        let bath = BathDiscretization::from_parts(vec![0.5, 1.5], vec![0.1, 0.2], vec![1.0, 1.0]).unwrap();
        let tau = 2.0;
        // |h_τ(x)|²/τ for x = ±0.5
        let per_mode = 4.0 * (0.5f64).sin().powi(2) / (0.25 * tau);
        let expected = (0.01 + 0.04) * per_mode;
        assert!((discrete_decay_rate(&bath, 1.0, tau) - expected).abs() < 1e-15);
    }

    #[test]
    fn rate_csv_layout() {
        let c = curve(vec![1.0, 2.0], vec![1.0, 4.0]);
        let mut buf = Vec::new();
        c.write_csv(&mut buf, &Units::new(10.0).unwrap(), None).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "tau_s,R_per_s,R_over_golden_rule\n\
             1.00000000000e-1,1.00000000000e1,5.00000000000e-1\n\
             2.00000000000e-1,4.00000000000e1,2.00000000000e0\n"
        );
    }

    #[test]
    fn fit_needs_two_cycles() {
        let m = SpectralModel::flat_band(1e-4, 0.0, 2.0).unwrap();
        let bath = discretize(&m, &GridSpec::midpoint(0.0, 2.0, 20)).unwrap();
        let pulse = crate::dynamics::PulseParams::new(50.0, 1.0, 2.0).unwrap();
        let p = crate::cycles::ProtocolParams::new(1.0, pulse, 1, crate::cycles::Propagator::ShortTime).unwrap();
        let h = crate::cycles::run_protocol(&p, &bath).unwrap();
        assert!(matches!(
            fit_rate(&h, 1.0, SurvivalKind::Locked),
            Err(Error::FitDomain(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn rate_is_covariant_under_frequency_rescaling(
            factor in 0.05f64..20.0,
            tau in 0.2f64..20.0,
            w2 in 0.5f64..3.0,
        ) {
            let m = SpectralModel::lorentzian(0.3, 1.5, 0.4).unwrap();
            let quad = QuadMode::default();
            let r = decay_rate_quadrature(&m, w2, tau, &quad).unwrap();
            let r2 = decay_rate_quadrature(&m.rescaled(factor), w2 * factor, tau / factor, &quad).unwrap();
            prop_assert!((r2 / (factor * r) - 1.0).abs() < 1e-5);
        }

        #[test]
        fn rate_scales_with_coupling_squared(s in 0.1f64..10.0, tau in 0.5f64..50.0) {
            let m = SpectralModel::hydrogen(1e-3, 1.0).unwrap();
            let quad = QuadMode::default();
            let r = decay_rate_quadrature(&m, 0.3, tau, &quad).unwrap();
            let rs = decay_rate_quadrature(&m.with_coupling_scale(s), 0.3, tau, &quad).unwrap();
            prop_assert!((rs / (s * s * r) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn rate_is_nonnegative_and_bounded_by_total(tau in 1e-3f64..1e3) {
            let m = SpectralModel::hydrogen(1e-3, 1.0).unwrap();
            let r = decay_rate_quadrature(&m, 0.3, tau, &QuadMode::default()).unwrap();
            // F ≤ τ/2π, so R ≤ τ ∫G.
            prop_assert!(r >= 0.0);
            prop_assert!(r <= tau * m.total_weight().unwrap() * (1.0 + 1e-6));
        }
    }
}
