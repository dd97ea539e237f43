//! Spectral-density models G(ω), the interrogation broadening window F(ω, τ)
//! and discretization of the continuum into bath modes.

use std::f64::consts::PI;
use std::io::Read;
use std::path::Path;

use crate::error::{ensure_finite, Error, Result};

/// Interacting spectral distribution G(ω) (squared-coupling density).
///
/// All parameters with frequency dimension (including G itself) share one
/// unit system; see [`SpectralModel::rescaled`].
#[derive(Debug, Clone, PartialEq)]
pub enum SpectralModel {
    /// `G(ω) = η ω / [1 + (ω/ω_c)²]⁴` for ω > 0, zero otherwise.
    Hydrogen2p1s { eta: f64, omega_c: f64 },
    /// `G(ω) = s · w² / ((ω − ω₀)² + w²)` on the whole real line, `w` the half width.
    Lorentzian { strength: f64, center: f64, width: f64 },
    /// Constant density on `[omega_min, omega_max]`.
    FlatBand {
        g0_density: f64,
        omega_min: f64,
        omega_max: f64,
    },
    /// Linear interpolation of sampled values, zero outside the table.
    Tabulated(Table),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    omegas: Vec<f64>,
    values: Vec<f64>,
}

impl Table {
    pub fn new(omegas: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if omegas.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "table has {} frequencies but {} values",
                omegas.len(),
                values.len()
            )));
        }
        if omegas.len() < 2 {
            return Err(Error::InvalidInput("table needs at least two samples".into()));
        }
        for (w, g) in omegas.iter().zip(&values) {
            ensure_finite("table frequency", *w)?;
            ensure_finite("table value", *g)?;
            if *g < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "spectral density must be nonnegative, got {g} at {w}"
                )));
            }
        }
        if omegas.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::InvalidInput(
                "table frequencies must be strictly increasing".into(),
            ));
        }
        Ok(Self { omegas, values })
    }

    /// Two-column CSV (ω, G); `#` lines are comments.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(false)
            .from_reader(reader);
        let mut omegas = Vec::new();
        let mut values = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != 2 {
                return Err(Error::InvalidInput(format!(
                    "record {}: expected 2 columns, found {}",
                    line + 1,
                    record.len()
                )));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::InvalidInput(format!("record {}: cannot parse {s:?}: {e}", line + 1)))
            };
            omegas.push(parse(&record[0])?);
            values.push(parse(&record[1])?);
        }
        Self::new(omegas, values)
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn interpolate(&self, omega: f64) -> f64 {
        let w = &self.omegas;
        if omega < w[0] || omega > w[w.len() - 1] {
            return 0.0;
        }
        let idx = w.partition_point(|&x| x <= omega);
        if idx == w.len() {
            return self.values[w.len() - 1];
        }
        let (i0, i1) = (idx - 1, idx);
        let frac = (omega - w[i0]) / (w[i1] - w[i0]);
        self.values[i0] + frac * (self.values[i1] - self.values[i0])
    }

    fn trapezoid(&self) -> f64 {
        self.omegas
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(w, g)| 0.5 * (w[1] - w[0]) * (g[0] + g[1]))
            .sum()
    }

    fn scaled(&self, freq: f64, density: f64) -> Self {
        Self {
            omegas: self.omegas.iter().map(|w| w * freq).collect(),
            values: self.values.iter().map(|g| g * density).collect(),
        }
    }
}

impl SpectralModel {
    pub fn hydrogen(eta: f64, omega_c: f64) -> Result<Self> {
        let m = Self::Hydrogen2p1s { eta, omega_c };
        m.validate()?;
        Ok(m)
    }

    /// Hydrogen 2p→1s constants: η = 6.435e-9, ω_c = 8.491e18 rad/s.
    pub fn hydrogen_2p1s_si() -> Self {
        Self::Hydrogen2p1s {
            eta: 6.435e-9,
            omega_c: 8.491e18,
        }
    }

    pub fn lorentzian(strength: f64, center: f64, width: f64) -> Result<Self> {
        let m = Self::Lorentzian {
            strength,
            center,
            width,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn flat_band(g0_density: f64, omega_min: f64, omega_max: f64) -> Result<Self> {
        let m = Self::FlatBand {
            g0_density,
            omega_min,
            omega_max,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn tabulated(omegas: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Ok(Self::Tabulated(Table::new(omegas, values)?))
    }

    pub fn load_tabulated_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())
            .map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))?;
        Ok(Self::Tabulated(Table::from_csv_reader(file)?))
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{name} must be finite and > 0, got {v}")))
            }
        };
        match self {
            Self::Hydrogen2p1s { eta, omega_c } => {
                nonneg("eta", *eta)?;
                positive("omega_c", *omega_c)
            }
            Self::Lorentzian {
                strength,
                center,
                width,
            } => {
                nonneg("strength", *strength)?;
                ensure_finite("center", *center)?;
                positive("width", *width)
            }
            Self::FlatBand {
                g0_density,
                omega_min,
                omega_max,
            } => {
                nonneg("g0_density", *g0_density)?;
                if omega_min.is_nan() || omega_max.is_nan() || omega_max <= omega_min {
                    return Err(Error::InvalidInput(format!(
                        "flat band needs omega_min < omega_max, got [{omega_min}, {omega_max}]"
                    )));
                }
                Ok(())
            }
            Self::Tabulated(t) => Table::new(t.omegas.clone(), t.values.clone()).map(|_| ()),
        }
    }

    /// G(ω), rejecting non-finite ω.
    pub fn evaluate_g(&self, omega: f64) -> Result<f64> {
        ensure_finite("omega", omega)?;
        Ok(self.density(omega))
    }

    /// Unchecked G(ω) for inner loops.
    pub fn density(&self, omega: f64) -> f64 {
        match self {
            Self::Hydrogen2p1s { eta, omega_c } => {
                if omega <= 0.0 {
                    return 0.0;
                }
                let x = omega / omega_c;
                let d = 1.0 + x * x;
                let d2 = d * d;
                eta * omega / (d2 * d2)
            }
            Self::Lorentzian {
                strength,
                center,
                width,
            } => {
                let dx = omega - center;
                strength * width * width / (dx * dx + width * width)
            }
            Self::FlatBand {
                g0_density,
                omega_min,
                omega_max,
            } => {
                if omega >= *omega_min && omega <= *omega_max {
                    *g0_density
                } else {
                    0.0
                }
            }
            Self::Tabulated(t) => t.interpolate(omega),
        }
    }

    /// Closed interval outside which G vanishes (possibly infinite).
    pub fn support(&self) -> (f64, f64) {
        match self {
            Self::Hydrogen2p1s { .. } => (0.0, f64::INFINITY),
            Self::Lorentzian { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            Self::FlatBand {
                omega_min, omega_max, ..
            } => (*omega_min, *omega_max),
            Self::Tabulated(t) => (t.omegas[0], t.omegas[t.omegas.len() - 1]),
        }
    }

    /// Frequency scale on which G varies.
    pub fn characteristic_scale(&self) -> f64 {
        match self {
            Self::Hydrogen2p1s { omega_c, .. } => *omega_c,
            Self::Lorentzian { width, .. } => *width,
            Self::FlatBand {
                omega_min, omega_max, ..
            } => {
                if omega_max.is_finite() && omega_min.is_finite() {
                    omega_max - omega_min
                } else {
                    omega_min.abs().max(omega_max.abs()).max(1.0)
                }
            }
            Self::Tabulated(t) => t.omegas[t.omegas.len() - 1] - t.omegas[0],
        }
    }

    /// Points where G has kinks, peaks or changes scale.
    pub fn feature_points(&self) -> Vec<f64> {
        match self {
            Self::Hydrogen2p1s { omega_c, .. } => {
                vec![0.0, omega_c / 7f64.sqrt(), *omega_c, 3.0 * omega_c, 6.0 * omega_c]
            }
            Self::Lorentzian { center, width, .. } => [-25.0, -5.0, -1.0, 0.0, 1.0, 5.0, 25.0]
                .iter()
                .map(|k| center + k * width)
                .collect(),
            Self::FlatBand {
                omega_min, omega_max, ..
            } => [*omega_min, *omega_max].into_iter().filter(|w| w.is_finite()).collect(),
            Self::Tabulated(t) => t.omegas.clone(),
        }
    }

    /// Default discretization window.
    pub fn default_grid_extent(&self) -> (f64, f64) {
        match self {
            Self::Hydrogen2p1s { omega_c, .. } => (0.0, 6.0 * omega_c),
            Self::Lorentzian { center, width, .. } => (center - 1000.0 * width, center + 1000.0 * width),
            _ => self.support(),
        }
    }

    /// ∫ G(ω) dω, analytic for every variant.
    pub fn total_weight(&self) -> Result<f64> {
        match self {
            Self::Hydrogen2p1s { eta, omega_c } => Ok(eta * omega_c * omega_c / 6.0),
            Self::Lorentzian { strength, width, .. } => Ok(PI * strength * width),
            Self::FlatBand {
                g0_density,
                omega_min,
                omega_max,
            } => {
                if *g0_density == 0.0 {
                    Ok(0.0)
                } else if omega_min.is_finite() && omega_max.is_finite() {
                    Ok(g0_density * (omega_max - omega_min))
                } else {
                    Err(Error::Unsupported(
                        "flat band with infinite support has divergent total weight".into(),
                    ))
                }
            }
            Self::Tabulated(t) => Ok(t.trapezoid()),
        }
    }

    /// Rescale every frequency-dimensioned quantity by `factor`
    /// (`G'(factor·ω) = factor·G(ω)`), e.g. `1/ω_ref` for internal units.
    pub fn rescaled(&self, factor: f64) -> Self {
        match self {
            Self::Hydrogen2p1s { eta, omega_c } => Self::Hydrogen2p1s {
                eta: *eta,
                omega_c: omega_c * factor,
            },
            Self::Lorentzian {
                strength,
                center,
                width,
            } => Self::Lorentzian {
                strength: strength * factor,
                center: center * factor,
                width: width * factor,
            },
            Self::FlatBand {
                g0_density,
                omega_min,
                omega_max,
            } => Self::FlatBand {
                g0_density: g0_density * factor,
                omega_min: omega_min * factor,
                omega_max: omega_max * factor,
            },
            Self::Tabulated(t) => Self::Tabulated(t.scaled(factor, factor)),
        }
    }

    /// Multiply every coupling g_k by `scale` (G by `scale²`).
    pub fn with_coupling_scale(&self, scale: f64) -> Self {
        let s2 = scale * scale;
        match self {
            Self::Hydrogen2p1s { eta, omega_c } => Self::Hydrogen2p1s {
                eta: eta * s2,
                omega_c: *omega_c,
            },
            Self::Lorentzian {
                strength,
                center,
                width,
            } => Self::Lorentzian {
                strength: strength * s2,
                center: *center,
                width: *width,
            },
            Self::FlatBand {
                g0_density,
                omega_min,
                omega_max,
            } => Self::FlatBand {
                g0_density: g0_density * s2,
                omega_min: *omega_min,
                omega_max: *omega_max,
            },
            Self::Tabulated(t) => Self::Tabulated(t.scaled(1.0, s2)),
        }
    }
}

/// sin(x)/x with the removable singularity filled in.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 * (1.0 - x2 / 20.0)
    } else {
        x.sin() / x
    }
}

/// Broadening window `F(ω, τ) = (τ/2π)·sinc²[(ω₂ − ω)τ/2]`.
pub fn broadening_f(omega: f64, tau: f64, omega2: f64) -> Result<f64> {
    ensure_finite("omega", omega)?;
    ensure_finite("omega2", omega2)?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidInput(format!("tau must be positive, got {tau}")));
    }
    Ok(broadening_unchecked(omega, tau, omega2))
}

pub(crate) fn broadening_unchecked(omega: f64, tau: f64, omega2: f64) -> f64 {
    let s = sinc(0.5 * (omega2 - omega) * tau);
    tau / (2.0 * PI) * s * s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridScheme {
    /// Endpoint-inclusive nodes with trapezoid widths.
    Uniform,
    /// Cell midpoints with equal widths.
    MidpointUniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub omega_lo: f64,
    pub omega_hi: f64,
    pub modes: usize,
    pub scheme: GridScheme,
}

impl GridSpec {
    pub fn midpoint(omega_lo: f64, omega_hi: f64, modes: usize) -> Self {
        Self {
            omega_lo,
            omega_hi,
            modes,
            scheme: GridScheme::MidpointUniform,
        }
    }

    /// The model's default window with `modes` midpoint cells.
    pub fn default_for(model: &SpectralModel, modes: usize) -> Self {
        let (lo, hi) = model.default_grid_extent();
        Self::midpoint(lo, hi, modes)
    }
}

/// Discrete reservoir: mode frequencies, real couplings and quadrature widths.
#[derive(Debug, Clone, PartialEq)]
pub struct BathDiscretization {
    omegas: Vec<f64>,
    couplings: Vec<f64>,
    weights: Vec<f64>,
    captured_fraction: Option<f64>,
}

impl BathDiscretization {
    /// Build a bath from explicit modes. Weights are informational.
    pub fn from_parts(omegas: Vec<f64>, couplings: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if omegas.len() != couplings.len() || omegas.len() != weights.len() {
            return Err(Error::InvalidInput(format!(
                "bath arrays differ in length: {} / {} / {}",
                omegas.len(),
                couplings.len(),
                weights.len()
            )));
        }
        if omegas.is_empty() {
            return Err(Error::InvalidInput("bath needs at least one mode".into()));
        }
        if omegas.iter().chain(&couplings).chain(&weights).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("bath values must be finite".into()));
        }
        if omegas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(
                "mode frequencies must be strictly increasing".into(),
            ));
        }
        if couplings.iter().any(|g| *g < 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidInput("couplings and widths must be nonnegative".into()));
        }
        Ok(Self {
            omegas,
            couplings,
            weights,
            captured_fraction: None,
        })
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn couplings(&self) -> &[f64] {
        &self.couplings
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Σ g_k² over ∫G dω, when the model's total is finite and nonzero.
    pub fn captured_fraction(&self) -> Option<f64> {
        self.captured_fraction
    }

    pub fn coupling_sq_sum(&self) -> f64 {
        self.couplings.iter().map(|g| g * g).sum()
    }

    pub fn max_abs_frequency(&self) -> f64 {
        self.omegas.iter().fold(0.0, |m, w| m.max(w.abs()))
    }

    /// Copy with every coupling multiplied by `scale`.
    pub fn with_coupling_scale(&self, scale: f64) -> Self {
        Self {
            couplings: self.couplings.iter().map(|g| g * scale.abs()).collect(),
            ..self.clone()
        }
    }
}

/// Discretize `model` on `grid` with `g_k = sqrt(G(ω_k) Δω_k)`.
pub fn discretize(model: &SpectralModel, grid: &GridSpec) -> Result<BathDiscretization> {
    model.validate()?;
    let GridSpec {
        omega_lo: lo,
        omega_hi: hi,
        modes,
        scheme,
    } = *grid;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Config(format!(
            "grid needs finite omega_lo < omega_hi, got [{lo}, {hi}]"
        )));
    }
    if modes < 2 {
        return Err(Error::Config(format!("grid needs at least 2 modes, got {modes}")));
    }
    let (s_lo, s_hi) = model.support();
    if hi <= s_lo || lo >= s_hi {
        return Err(Error::Config(format!(
            "grid [{lo:e}, {hi:e}] does not overlap the model support [{s_lo:e}, {s_hi:e}]"
        )));
    }

    let (omegas, weights): (Vec<f64>, Vec<f64>) = match scheme {
        GridScheme::MidpointUniform => {
            let dw = (hi - lo) / modes as f64;
            (0..modes).map(|k| (lo + (k as f64 + 0.5) * dw, dw)).unzip()
        }
        GridScheme::Uniform => {
            let dw = (hi - lo) / (modes - 1) as f64;
            (0..modes)
                .map(|k| {
                    let w = if k == 0 || k == modes - 1 { 0.5 * dw } else { dw };
                    (lo + k as f64 * dw, w)
                })
                .unzip()
        }
    };
    let couplings = omegas
        .iter()
        .zip(&weights)
        .map(|(&w, &dw)| (model.density(w) * dw).sqrt())
        .collect();
    let mut bath = BathDiscretization::from_parts(omegas, couplings, weights)?;

    if let Ok(total) = model.total_weight() {
        if total > 0.0 {
            let frac = bath.coupling_sq_sum() / total;
            if frac < 0.999 {
                log::warn!(
                    "bath grid [{lo:e}, {hi:e}] captures only {:.4}% of the spectral weight",
                    100.0 * frac
                );
            }
            bath.captured_fraction = Some(frac);
        }
    }
    Ok(bath)
}
