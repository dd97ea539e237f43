//! Elementary evolutions of one photon sector: free decay over an interval,
//! the resonant π-pulse to the auxiliary level, and the fast emission back.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{ensure_finite, Error, Result};
use crate::spectral::BathDiscretization;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Above this first-order weight the short-time propagator is no longer trustworthy.
pub const SHORT_TIME_WEIGHT_LIMIT: f64 = 0.1;

/// Single-excitation amplitudes of one photon sector: `alpha` on |2⟩⊗vacuum,
/// `betas[k]` on |1, k⟩.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorState {
    pub alpha: Complex64,
    pub betas: Vec<Complex64>,
}

impl SectorState {
    /// Atom excited, reservoir empty.
    pub fn excited(modes: usize) -> Self {
        Self {
            alpha: Complex64::new(1.0, 0.0),
            betas: vec![Complex64::new(0.0, 0.0); modes],
        }
    }

    pub fn empty(modes: usize) -> Self {
        Self {
            alpha: Complex64::new(0.0, 0.0),
            betas: vec![Complex64::new(0.0, 0.0); modes],
        }
    }

    pub fn with_alpha(alpha: Complex64, modes: usize) -> Self {
        Self {
            alpha,
            betas: vec![Complex64::new(0.0, 0.0); modes],
        }
    }

    pub fn modes(&self) -> usize {
        self.betas.len()
    }

    pub fn ground_norm_sqr(&self) -> f64 {
        self.betas.iter().map(|b| b.norm_sqr()).sum()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.alpha.norm_sqr() + self.ground_norm_sqr()
    }

    fn check_bath(&self, bath: &BathDiscretization) -> Result<()> {
        if self.betas.len() != bath.len() {
            return Err(Error::LengthMismatch {
                expected: bath.len(),
                got: self.betas.len(),
            });
        }
        Ok(())
    }
}

/// Drive parameters for the |2⟩ ↔ |3⟩ transition, driven on resonance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseParams {
    rabi: f64,
    omega2: f64,
    omega3: f64,
}

impl PulseParams {
    pub fn new(rabi: f64, omega2: f64, omega3: f64) -> Result<Self> {
        if !(rabi.is_finite() && rabi > 0.0) {
            return Err(Error::InvalidInput(format!(
                "Rabi frequency must be positive, got {rabi}"
            )));
        }
        ensure_finite("omega2", omega2)?;
        ensure_finite("omega3", omega3)?;
        Ok(Self { rabi, omega2, omega3 })
    }

    pub fn rabi(&self) -> f64 {
        self.rabi
    }

    pub fn omega2(&self) -> f64 {
        self.omega2
    }

    pub fn omega3(&self) -> f64 {
        self.omega3
    }

    /// Δ = ω₃ − ω₂, also the drive frequency.
    pub fn detuning(&self) -> f64 {
        self.omega3 - self.omega2
    }

    /// π-pulse duration t_p = π/Ω.
    pub fn duration(&self) -> f64 {
        PI / self.rabi
    }
}

/// `h_t(ω) = (e^{iωt} − 1)/ω`, with its limit `it` at ω = 0.
pub fn h_kernel(omega: f64, t: f64) -> Result<Complex64> {
    ensure_finite("omega", omega)?;
    ensure_finite("t", t)?;
    if t < 0.0 {
        return Err(Error::InvalidInput(format!("t must be >= 0, got {t}")));
    }
    Ok(h_unchecked(omega, t))
}

#[inline]
pub(crate) fn h_unchecked(omega: f64, t: f64) -> Complex64 {
    let z = omega * t;
    if z.abs() < 1e-4 {
        // it·(1 + iz/2 − z²/6 − iz³/24 + z⁴/120)
        let z2 = z * z;
        let re = 1.0 - z2 / 6.0 + z2 * z2 / 120.0;
        let im = z / 2.0 - z * z2 / 24.0;
        I * t * Complex64::new(re, im)
    } else {
        let s = (0.5 * z).sin();
        Complex64::new(-2.0 * s * s, z.sin()) / omega
    }
}

/// `(h_t(x) − it)/x`, finite at x = 0 where it tends to `−t²/2`.
pub fn detuned_shift(x: f64, t: f64) -> Complex64 {
    let z = x * t;
    let e = if z.abs() < 0.5 {
        // Σ_{n≥2} iⁿ zⁿ⁻² / n!
        let mut sum = Complex64::new(0.0, 0.0);
        let mut term = Complex64::new(-0.5, 0.0);
        let mut n = 2.0;
        for _ in 0..24 {
            sum += term;
            if term.norm() < 1e-18 {
                break;
            }
            n += 1.0;
            term *= I * z / n;
        }
        sum
    } else {
        let s = (0.5 * z).sin();
        Complex64::new(-2.0 * s * s, z.sin() - z) / (z * z)
    };
    e * (t * t)
}

/// First-order weight Σ_k g_k² |h_τ(ω₂ − ω_k)|² leaked to the reservoir in one interval.
pub fn perturbative_weight(bath: &BathDiscretization, omega2: f64, tau: f64) -> f64 {
    bath.omegas()
        .iter()
        .zip(bath.couplings())
        .map(|(w, g)| g * g * h_unchecked(omega2 - w, tau).norm_sqr())
        .sum()
}

/// Precomputed short-time map for a fixed (bath, ω₂, τ).
///
/// α' = [α(1 + Σ g²(h − iτ)/x) − Σ g β h] e^{−iω₂τ},
/// β'_k = β_k e^{−iω_kτ} − α g_k h e^{−iω₂τ},
/// with x = ω₂ − ω_k and h = h_τ(x). The cycle engine applies it to every
/// sector, so the O(K) kernels are evaluated once.
#[derive(Debug, Clone)]
pub struct ShortTimePropagator {
    /// g_k h_τ(x_k) e^{−iω₂τ}
    emit: Vec<Complex64>,
    /// g_k h_τ(x_k)
    absorb: Vec<Complex64>,
    free_phase: Vec<Complex64>,
    excited_phase: Complex64,
    /// 1 + Σ g² (h − iτ)/x
    self_energy: Complex64,
    weight: f64,
}

impl ShortTimePropagator {
    pub fn new(bath: &BathDiscretization, omega2: f64, tau: f64) -> Result<Self> {
        ensure_finite("omega2", omega2)?;
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidInput(format!("tau must be positive, got {tau}")));
        }
        let excited_phase = Complex64::from_polar(1.0, -omega2 * tau);
        let k = bath.len();
        let mut emit = Vec::with_capacity(k);
        let mut absorb = Vec::with_capacity(k);
        let mut free_phase = Vec::with_capacity(k);
        let mut shift = Complex64::new(0.0, 0.0);
        let mut weight = 0.0;
        for (&w, &g) in bath.omegas().iter().zip(bath.couplings()) {
            let x = omega2 - w;
            let h = h_unchecked(x, tau);
            absorb.push(g * h);
            emit.push(g * h * excited_phase);
            free_phase.push(Complex64::from_polar(1.0, -w * tau));
            shift += g * g * detuned_shift(x, tau);
            weight += g * g * h.norm_sqr();
        }
        if weight > SHORT_TIME_WEIGHT_LIMIT {
            log::warn!(
                "short-time weight {weight:.3e} exceeds {SHORT_TIME_WEIGHT_LIMIT}; first-order propagator is unreliable"
            );
        }
        Ok(Self {
            emit,
            absorb,
            free_phase,
            excited_phase,
            self_energy: Complex64::new(1.0, 0.0) + shift,
            weight,
        })
    }

    /// Σ_k g_k² |h_τ|²; also 1 − |α(τ)|² to second order for α(0) = 1.
    pub fn perturbative_weight(&self) -> f64 {
        self.weight
    }

    pub fn modes(&self) -> usize {
        self.free_phase.len()
    }

    pub fn apply(&self, state: &mut SectorState) -> Result<()> {
        if state.betas.len() != self.modes() {
            return Err(Error::LengthMismatch {
                expected: self.modes(),
                got: state.betas.len(),
            });
        }
        let alpha0 = state.alpha;
        let mut feed = Complex64::new(0.0, 0.0);
        for ((beta, &absorb), (&emit, &phase)) in state
            .betas
            .iter_mut()
            .zip(&self.absorb)
            .zip(self.emit.iter().zip(&self.free_phase))
        {
            feed += absorb * *beta;
            *beta = *beta * phase - alpha0 * emit;
        }
        state.alpha = (alpha0 * self.self_energy - feed) * self.excited_phase;
        Ok(())
    }
}

/// Short-time (first order in the coupling) free evolution over `tau`.
pub fn free_evolve_short(state: &SectorState, bath: &BathDiscretization, omega2: f64, tau: f64) -> Result<SectorState> {
    state.check_bath(bath)?;
    let prop = ShortTimePropagator::new(bath, omega2, tau)?;
    let mut out = state.clone();
    prop.apply(&mut out)?;
    Ok(out)
}

/// Fixed-step RK4 integrator of the amplitude equations in the slowly-varying
/// frame `α' = α e^{iω₂t}`, `β'_k = β_k e^{iω_kt}`, where
/// `iα̇' = Σ g_k β'_k e^{ix_kt}` and `iβ̇'_k = g_k α' e^{−ix_kt}`.
/// The free phases are restored exactly at the end.
#[derive(Debug, Clone)]
pub struct OdePropagator {
    detunings: Vec<f64>,
    couplings: Vec<f64>,
    out_phase: Vec<Complex64>,
    excited_phase: Complex64,
    steps: usize,
    step: f64,
}

/// Largest allowed `dt · max(|ω_k|, |ω₂|)`.
pub const ODE_MAX_PHASE_STEP: f64 = 0.1;

impl OdePropagator {
    pub fn new(bath: &BathDiscretization, omega2: f64, tau: f64, dt: f64) -> Result<Self> {
        ensure_finite("omega2", omega2)?;
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidInput(format!("tau must be positive, got {tau}")));
        }
        if !(dt.is_finite() && dt > 0.0 && dt <= tau) {
            return Err(Error::Config(format!(
                "ODE step dt={dt:e} must satisfy 0 < dt <= tau={tau:e}"
            )));
        }
        let fastest = bath.max_abs_frequency().max(omega2.abs());
        if dt * fastest > ODE_MAX_PHASE_STEP {
            return Err(Error::Config(format!(
                "ODE step dt={dt:e} does not resolve the fastest frequency {fastest:e} (dt*omega = {:.3} > {ODE_MAX_PHASE_STEP})",
                dt * fastest
            )));
        }
        let steps = (tau / dt).ceil().max(1.0) as usize;
        Ok(Self {
            detunings: bath.omegas().iter().map(|w| omega2 - w).collect(),
            couplings: bath.couplings().to_vec(),
            out_phase: bath
                .omegas()
                .iter()
                .map(|w| Complex64::from_polar(1.0, -w * tau))
                .collect(),
            excited_phase: Complex64::from_polar(1.0, -omega2 * tau),
            steps,
            step: tau / steps as f64,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn modes(&self) -> usize {
        self.couplings.len()
    }

    /// Evolve every state in `states` over the full interval; phasors are shared.
    pub fn apply_all(&self, states: &mut [&mut SectorState]) -> Result<()> {
        let k = self.modes();
        for s in states.iter() {
            if s.betas.len() != k {
                return Err(Error::LengthMismatch {
                    expected: k,
                    got: s.betas.len(),
                });
            }
        }
        // Slowly-varying frame at t = 0 coincides with the lab frame.
        let h = self.step;
        let mut e0: Vec<Complex64> = vec![Complex64::new(1.0, 0.0); k];
        let mut em = vec![Complex64::new(0.0, 0.0); k];
        let mut e1 = vec![Complex64::new(0.0, 0.0); k];
        let mut work = RkWork::new(k);

        for n in 0..self.steps {
            let t0 = n as f64 * h;
            for j in 0..k {
                let x = self.detunings[j];
                em[j] = Complex64::from_polar(1.0, x * (t0 + 0.5 * h));
                e1[j] = Complex64::from_polar(1.0, x * (t0 + h));
            }
            for s in states.iter_mut() {
                work.step(&self.couplings, s, h, &e0, &em, &e1);
            }
            std::mem::swap(&mut e0, &mut e1);
        }

        for s in states.iter_mut() {
            s.alpha *= self.excited_phase;
            for (b, p) in s.betas.iter_mut().zip(&self.out_phase) {
                *b *= p;
            }
        }
        Ok(())
    }

    pub fn apply(&self, state: &mut SectorState) -> Result<()> {
        self.apply_all(&mut [state])
    }
}

struct RkWork {
    kb: [Vec<Complex64>; 4],
    tmp: Vec<Complex64>,
}

impl RkWork {
    fn new(k: usize) -> Self {
        let z = vec![Complex64::new(0.0, 0.0); k];
        Self {
            kb: [z.clone(), z.clone(), z.clone(), z.clone()],
            tmp: z,
        }
    }

    /// Derivatives: da = −i Σ g b e, db_k = −i g_k a conj(e_k).
    fn deriv(g: &[f64], a: Complex64, b: &[Complex64], e: &[Complex64], db: &mut [Complex64]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..g.len() {
            acc += g[j] * b[j] * e[j];
            db[j] = -I * g[j] * a * e[j].conj();
        }
        -I * acc
    }

    fn step(&mut self, g: &[f64], s: &mut SectorState, h: f64, e0: &[Complex64], em: &[Complex64], e1: &[Complex64]) {
        let [k1, k2, k3, k4] = &mut self.kb;
        let tmp = &mut self.tmp;
        let a = s.alpha;
        let b = &s.betas;

        let ka1 = Self::deriv(g, a, b, e0, k1);
        for j in 0..g.len() {
            tmp[j] = b[j] + 0.5 * h * k1[j];
        }
        let ka2 = Self::deriv(g, a + 0.5 * h * ka1, tmp, em, k2);
        for j in 0..g.len() {
            tmp[j] = b[j] + 0.5 * h * k2[j];
        }
        let ka3 = Self::deriv(g, a + 0.5 * h * ka2, tmp, em, k3);
        for j in 0..g.len() {
            tmp[j] = b[j] + h * k3[j];
        }
        let ka4 = Self::deriv(g, a + h * ka3, tmp, e1, k4);

        let w = h / 6.0;
        s.alpha += w * (ka1 + 2.0 * ka2 + 2.0 * ka3 + ka4);
        for j in 0..g.len() {
            s.betas[j] += w * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
}

/// Free evolution by direct integration of the amplitude equations.
pub fn free_evolve_ode(
    state: &SectorState,
    bath: &BathDiscretization,
    omega2: f64,
    tau: f64,
    dt: f64,
) -> Result<SectorState> {
    state.check_bath(bath)?;
    let prop = OdePropagator::new(bath, omega2, tau, dt)?;
    let mut out = state.clone();
    prop.apply(&mut out)?;
    Ok(out)
}

/// Resonant Rabi rotation of the (|2⟩, |3⟩) amplitudes over time `t`.
pub fn rabi_evolve(a: Complex64, c: Complex64, t: f64, pulse: &PulseParams) -> (Complex64, Complex64) {
    debug_assert!(t >= 0.0);
    let half = 0.5 * pulse.rabi * t;
    let (sin, cos) = half.sin_cos();
    let a_t = (a * cos - I * c * sin) * Complex64::from_polar(1.0, -pulse.omega2 * t);
    let c_t = (c * cos - I * a * sin) * Complex64::from_polar(1.0, -pulse.omega3 * t);
    (a_t, c_t)
}

/// Result of a π-pulse on one sector.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseOutcome {
    /// Amplitude now on |3⟩ ⊗ vacuum.
    pub promoted: Complex64,
    /// Ground amplitudes, rephased over t_p; `alpha` is zero.
    pub ground: SectorState,
}

/// Per-mode phases e^{−iω_k t_p} accrued by the ground amplitudes during a pulse.
pub fn pulse_phases(bath: &BathDiscretization, pulse: &PulseParams) -> Vec<Complex64> {
    let tp = pulse.duration();
    bath.omegas()
        .iter()
        .map(|w| Complex64::from_polar(1.0, -w * tp))
        .collect()
}

/// Promotion amplitude `−i α e^{−iω₃ t_p}` of a full π-pulse.
#[inline]
pub fn promote(alpha: Complex64, pulse: &PulseParams) -> Complex64 {
    -I * alpha * Complex64::from_polar(1.0, -pulse.omega3 * pulse.duration())
}

/// π-pulse on a sector whose auxiliary level starts empty.
pub fn pulse_map(state: &SectorState, bath: &BathDiscretization, pulse: &PulseParams) -> Result<PulseOutcome> {
    state.check_bath(bath)?;
    let betas = state
        .betas
        .iter()
        .zip(pulse_phases(bath, pulse))
        .map(|(b, p)| b * p)
        .collect();
    Ok(PulseOutcome {
        promoted: promote(state.alpha, pulse),
        ground: SectorState {
            alpha: Complex64::new(0.0, 0.0),
            betas,
        },
    })
}

/// Fast |3, v⟩ → |2, γ⟩ decay: the amplitude moves unchanged to the next
/// photon sector (the caller does the bookkeeping).
#[inline]
pub fn emission_map(promoted: Complex64) -> Complex64 {
    promoted
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{discretize, sinc, GridSpec, SpectralModel};
    use proptest::prelude::*;

    /// ω₂ of the 2p level in units of ω_c.
    const W2: f64 = 1.55e16 / 8.491e18;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Hydrogen bath in units of ω_c, couplings scaled by `scale`.
    fn hydrogen_bath(modes: usize, scale: f64) -> BathDiscretization {
        let m = SpectralModel::hydrogen(6.435e-9, 1.0).unwrap();
        discretize(&m, &GridSpec::midpoint(0.0, 6.0, modes))
            .unwrap()
            .with_coupling_scale(scale)
    }

    fn max_diff(a: &SectorState, b: &SectorState) -> f64 {
        a.betas
            .iter()
            .zip(&b.betas)
            .map(|(x, y)| (x - y).norm())
            .fold((a.alpha - b.alpha).norm(), f64::max)
    }

    #[test]
    fn h_kernel_limits() {
        assert_eq!(h_kernel(0.0, 2.0).unwrap(), c(0.0, 2.0));
        assert_eq!(h_kernel(3.7, 0.0).unwrap(), c(0.0, 0.0));
        assert!(h_kernel(1.0, -1.0).is_err());
        assert!(h_kernel(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn h_kernel_continuous_across_series_switch() {
        let t = 1.3;
        for z in [1e-4 * (1.0 - 1e-9), 1e-4 * (1.0 + 1e-9)] {
            let omega = z / t;
            let closed = (Complex64::from_polar(1.0, z) - 1.0) / omega;
            let got = h_unchecked(omega, t);
            assert!((got - closed).norm() / closed.norm() < 1e-12);
        }
        let below = h_unchecked(0.99999999e-4 / t, t);
        let above = h_unchecked(1.00000001e-4 / t, t);
        assert!((below - above).norm() / above.norm() < 1e-7);
    }

    #[test]
    fn detuned_shift_limit_and_continuity() {
        let t = 2.5;
        let d0 = detuned_shift(0.0, t);
        assert!((d0 - c(-t * t / 2.0, 0.0)).norm() < 1e-15);
        // Closed form at moderate z is accurate; compare across the switch.
        for z in [0.3, 0.49999, 0.50001, 2.0, -0.7] {
            let x = z / t;
            let closed = (h_unchecked(x, t) - I * t) / x;
            let got = detuned_shift(x, t);
            assert!((got - closed).norm() / closed.norm() < 1e-13, "z={z}");
        }
    }

    proptest! {
        #[test]
        fn h_kernel_modulus_identity(omega in -50.0..50.0f64, t in 0.0..5.0f64) {
            let h = h_kernel(omega, t).unwrap();
            let s = sinc(0.5 * omega * t);
            let expected = t * t * s * s;
            prop_assert!((h.norm_sqr() - expected).abs() <= 1e-12 * expected.max(1e-300) + 1e-300);
        }

        #[test]
        fn rabi_rotation_is_unitary(ar in -1.0..1.0f64, ai in -1.0..1.0f64, cr in -1.0..1.0f64,
                                   ci in -1.0..1.0f64, t in 0.0..10.0f64, rabi in 0.1..5.0f64) {
            let pulse = PulseParams::new(rabi, 0.3, 7.0).unwrap();
            let (a, cc) = (c(ar, ai), c(cr, ci));
            let (a1, c1) = rabi_evolve(a, cc, t, &pulse);
            let n0 = a.norm_sqr() + cc.norm_sqr();
            prop_assert!((a1.norm_sqr() + c1.norm_sqr() - n0).abs() <= 1e-14 * n0.max(1.0));
        }

        #[test]
        fn emission_preserves_modulus(re in -1.0..1.0f64, im in -1.0..1.0f64) {
            let z = c(re, im);
            prop_assert_eq!(emission_map(z).norm(), z.norm());
        }
    }

    #[test]
    fn uncoupled_short_evolution_is_free_phase() {
        let bath = hydrogen_bath(64, 0.0);
        let mut s = SectorState::excited(64);
        s.betas[5] = c(0.0, 0.0);
        let tau = 0.4;
        let out = free_evolve_short(&s, &bath, W2, tau).unwrap();
        assert!((out.alpha - Complex64::from_polar(1.0, -W2 * tau)).norm() < 1e-15);
        assert!(out.betas.iter().all(|b| b.norm() == 0.0));

        let mut g = SectorState::empty(64);
        g.betas[7] = c(0.6, 0.0);
        let out = free_evolve_short(&g, &bath, W2, tau).unwrap();
        let w7 = bath.omegas()[7];
        assert!((out.betas[7] - 0.6 * Complex64::from_polar(1.0, -w7 * tau)).norm() < 1e-15);
        assert_eq!(out.alpha, c(0.0, 0.0));
    }

    #[test]
    fn short_time_loss_matches_sinc_sum() {
        let bath = hydrogen_bath(2001, 1.0);
        let tau = 0.5;
        let out = free_evolve_short(&SectorState::excited(2001), &bath, W2, tau).unwrap();
        let loss = 1.0 - out.alpha.norm_sqr();
        let oracle: f64 = bath
            .omegas()
            .iter()
            .zip(bath.couplings())
            .map(|(w, g)| {
                let s = sinc(0.5 * (W2 - w) * tau);
                g * g * tau * tau * s * s
            })
            .sum();
        assert!((loss / oracle - 1.0).abs() < 1e-3, "loss {loss:e} oracle {oracle:e}");
    }

    #[test]
    fn single_mode_feeds_alpha() {
        let bath = hydrogen_bath(32, 100.0);
        let k0 = 11;
        let mut s = SectorState::empty(32);
        s.betas[k0] = c(1.0, 0.0);
        let tau = 0.8;
        let out = free_evolve_short(&s, &bath, W2, tau).unwrap();
        let g = bath.couplings()[k0];
        let expected = -g * h_unchecked(W2 - bath.omegas()[k0], tau) * Complex64::from_polar(1.0, -W2 * tau);
        assert!((out.alpha - expected).norm() <= 1e-15 * expected.norm().max(1e-300));
    }

    #[test]
    fn length_mismatch_is_reported() {
        let bath = hydrogen_bath(16, 1.0);
        let s = SectorState::excited(15);
        assert!(matches!(
            free_evolve_short(&s, &bath, W2, 1.0),
            Err(Error::LengthMismatch { expected: 16, got: 15 })
        ));
        assert!(free_evolve_ode(&s, &bath, W2, 1.0, 0.01).is_err());
        let pulse = PulseParams::new(1e3, W2, 0.5).unwrap();
        assert!(pulse_map(&s, &bath, &pulse).is_err());
    }

    #[test]
    fn short_time_norm_error_is_fourth_order() {
        let tau = 0.6;
        // From |2, vacuum⟩ the dropped terms enter the norm at fourth order.
        let s = SectorState::excited(400);
        let norm_err = |scale: f64| {
            let bath = hydrogen_bath(400, scale);
            let out = free_evolve_short(&s, &bath, W2, tau).unwrap();
            (out.norm_sqr() - 1.0).abs()
        };
        let big = 3e3;
        let ratio = norm_err(big) / norm_err(big / 2.0);
        assert!((ratio / 16.0 - 1.0).abs() < 0.3, "ratio {ratio}");
    }

    #[test]
    fn ode_uncoupled_is_exact() {
        let bath = hydrogen_bath(50, 0.0);
        let mut s = SectorState::excited(50);
        s.betas[3] = c(0.1, 0.2);
        let tau = 0.3;
        let out = free_evolve_ode(&s, &bath, W2, tau, 0.01).unwrap();
        assert!((out.alpha - Complex64::from_polar(1.0, -W2 * tau)).norm() < 1e-15);
        let w3 = bath.omegas()[3];
        assert!((out.betas[3] - c(0.1, 0.2) * Complex64::from_polar(1.0, -w3 * tau)).norm() < 1e-15);
    }

    #[test]
    fn ode_step_must_resolve_fastest_mode() {
        let bath = hydrogen_bath(50, 1.0);
        let s = SectorState::excited(50);
        assert!(matches!(
            free_evolve_ode(&s, &bath, W2, 1.0, 0.05),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            free_evolve_ode(&s, &bath, W2, 0.01, 0.02),
            Err(Error::Config(_))
        ));
        assert!(free_evolve_ode(&s, &bath, W2, 1.0, 0.016).is_ok());
    }

    #[test]
    fn ode_conserves_norm() {
        let bath = hydrogen_bath(501, 2e3);
        let mut s = SectorState::excited(501);
        s.alpha = c(0.6, 0.0);
        s.betas[100] = c(0.0, 0.8);
        let out = free_evolve_ode(&s, &bath, W2, 0.5, 0.015).unwrap();
        assert!((out.norm_sqr() - 1.0).abs() < 1e-9, "{}", out.norm_sqr());
        assert!((s.alpha - out.alpha).norm() > 1e-6, "coupling had no effect");
    }

    #[test]
    fn ode_agrees_with_short_time_at_weak_coupling() {
        let tau = 0.5;
        let probe = hydrogen_bath(801, 1.0);
        let w = perturbative_weight(&probe, W2, tau);
        let bath = probe.with_coupling_scale((1e-3 / w).sqrt());
        assert!((perturbative_weight(&bath, W2, tau) - 1e-3).abs() < 1e-12);

        let s = SectorState::excited(801);
        let short = free_evolve_short(&s, &bath, W2, tau).unwrap();
        let ode = free_evolve_ode(&s, &bath, W2, tau, 0.015).unwrap();
        let scale = ode.betas.iter().fold(ode.alpha.norm(), |m, b| m.max(b.norm()));
        assert!(max_diff(&short, &ode) <= 1e-3 * scale);
        // β carries the weight, so compare it mode by mode too.
        for (a, b) in short.betas.iter().zip(&ode.betas) {
            if b.norm() > 1e-12 {
                assert!((a - b).norm() / b.norm() < 1e-2);
            }
        }
    }

    #[test]
    fn rabi_pi_and_two_pi_pulses() {
        let pulse = PulseParams::new(50.0, 0.4, 9.0).unwrap();
        let tp = pulse.duration();
        assert!((tp * pulse.rabi() - PI).abs() <= 2.0 * f64::EPSILON * PI);
        let (a, cc) = rabi_evolve(c(1.0, 0.0), c(0.0, 0.0), tp, &pulse);
        assert!(a.norm() < 1e-15);
        let expected = -I * Complex64::from_polar(1.0, -pulse.omega3() * tp);
        assert!((cc - expected).norm() < 1e-15);

        let t = 2.0 * PI / pulse.rabi();
        let (a0, c0) = (c(0.6, 0.1), c(-0.2, 0.7));
        let (a1, c1) = rabi_evolve(a0, c0, t, &pulse);
        assert!((a1 + a0 * Complex64::from_polar(1.0, -pulse.omega2() * t)).norm() < 1e-14);
        assert!((c1 + c0 * Complex64::from_polar(1.0, -pulse.omega3() * t)).norm() < 1e-14);
    }

    #[test]
    fn pulse_params_validation() {
        assert!(PulseParams::new(0.0, 1.0, 2.0).is_err());
        assert!(PulseParams::new(-1.0, 1.0, 2.0).is_err());
        let p = PulseParams::new(2.0, 1.0, 3.5).unwrap();
        assert_eq!(p.detuning(), 2.5);
    }

    #[test]
    fn pulse_map_cases() {
        let bath = hydrogen_bath(40, 10.0);
        let pulse = PulseParams::new(200.0, W2, 1.3).unwrap();
        let tp = pulse.duration();

        let mut ground = SectorState::empty(40);
        ground.betas[4] = c(0.3, -0.4);
        let out = pulse_map(&ground, &bath, &pulse).unwrap();
        assert_eq!(out.promoted, c(0.0, 0.0));
        let w4 = bath.omegas()[4];
        assert!((out.ground.betas[4] - c(0.3, -0.4) * Complex64::from_polar(1.0, -w4 * tp)).norm() < 1e-15);

        let out = pulse_map(&SectorState::excited(40), &bath, &pulse).unwrap();
        let expected = -I * Complex64::from_polar(1.0, -pulse.omega3() * tp);
        assert!((out.promoted - expected).norm() < 1e-15);
        assert!((out.promoted.norm() - 1.0).abs() < 1e-15);
        assert_eq!(out.ground.alpha, c(0.0, 0.0));

        // Agrees with the general Rabi map at t_p.
        let (_, c_tp) = rabi_evolve(c(0.6, 0.3), c(0.0, 0.0), tp, &pulse);
        assert!((promote(c(0.6, 0.3), &pulse) - c_tp).norm() < 1e-15);
    }

    #[test]
    fn pulse_map_preserves_norm_and_ignores_omega3_magnitude() {
        let bath = hydrogen_bath(40, 10.0);
        let mut s = SectorState::empty(40);
        s.alpha = c(0.5, 0.5);
        for (k, b) in s.betas.iter_mut().enumerate() {
            *b = c(0.01 * k as f64, -0.005 * k as f64);
        }
        let norm = s.norm_sqr();
        let a = pulse_map(&s, &bath, &PulseParams::new(100.0, W2, 0.9).unwrap()).unwrap();
        let b = pulse_map(&s, &bath, &PulseParams::new(100.0, W2, 3.7).unwrap()).unwrap();
        let out_norm = a.promoted.norm_sqr() + a.ground.ground_norm_sqr();
        assert!((out_norm - norm).abs() < 1e-14);
        assert!((a.promoted.norm() - b.promoted.norm()).abs() < 1e-15);
        assert!((a.promoted - b.promoted).norm() > 1e-3);
    }
}
