//! Run configuration: a strict TOML schema in SI units, normalized to
//! internal units of `omega_ref` on load.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use qaze_core::rates::DEFAULT_RATE_TOLERANCE;
use qaze_core::{GridScheme, GridSpec, PulseParams, QuadMode, SpectralModel, Units, DEFAULT_VALIDITY_THRESHOLD};

use crate::CliError;

const DEFAULT_MODES: usize = 4001;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Internal frequency unit [rad/s]; defaults to the model's characteristic scale.
    pub omega_ref: Option<f64>,
    pub validity_threshold: Option<f64>,
    pub model: ModelSection,
    pub bath: Option<BathSection>,
    pub atom: Option<AtomSection>,
    pub protocol: Option<ProtocolSection>,
    pub rates: Option<RatesSection>,
    pub output: Option<OutputSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSection {
    Hydrogen {
        eta: f64,
        omega_c: f64,
    },
    Lorentzian {
        strength: f64,
        center: f64,
        width: f64,
    },
    FlatBand {
        g0_density: f64,
        omega_min: f64,
        omega_max: f64,
    },
    /// Two-column CSV `omega,G` in SI; relative paths resolve against the config file.
    Tabulated {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathSection {
    pub omega_lo: Option<f64>,
    pub omega_hi: Option<f64>,
    pub modes: Option<usize>,
    pub scheme: Option<Scheme>,
    /// Global factor on every coupling g_k (G scales by its square).
    pub coupling_scale: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Uniform,
    Midpoint,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSection {
    pub omega2: f64,
    pub omega3: Option<f64>,
    pub rabi: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    pub tau: Option<f64>,
    pub tau_sweep: Option<Sweep>,
    pub n_cycles: usize,
    pub propagator: Option<PropagatorKind>,
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum PropagatorKind {
    ShortTime,
    OdeOracle,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    #[serde(default)]
    pub spacing: Spacing,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Log,
    Linear,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSection {
    pub tau_start: f64,
    pub tau_stop: f64,
    pub points: usize,
    #[serde(default)]
    pub spacing: Spacing,
    pub quad: Option<QuadKind>,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum QuadKind {
    Adaptive,
    Grid,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub directory: Option<PathBuf>,
    pub prefix: Option<String>,
}

/// Parsed configuration plus the SHA-256 of its raw bytes.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub sha256: String,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str(&text, base)
    }

    pub fn from_str(text: &str, base_dir: PathBuf) -> Result<Self, CliError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        Ok(Self {
            config,
            sha256: hex::encode(Sha256::digest(text.as_bytes())),
            base_dir,
        })
    }

    /// Header comment carried by every CSV artifact.
    pub fn header(&self) -> String {
        format!("config_sha256={}", self.sha256)
    }

    pub fn resolve(&self, out_override: Option<&Path>) -> Result<Resolved, CliError> {
        Resolved::new(self, out_override)
    }
}

/// Everything in internal units, ready for the core library.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub units: Units,
    /// Coupling-scaled model in internal units.
    pub model: SpectralModel,
    pub grid: GridSpec,
    pub validity_threshold: f64,
    pub omega2: Option<f64>,
    pub pulse: Option<PulseParams>,
    pub protocol: Option<ResolvedProtocol>,
    pub rates: Option<ResolvedRates>,
    pub out_dir: PathBuf,
    pub prefix: String,
}

#[derive(Debug, Clone)]
pub struct ResolvedProtocol {
    pub taus: Vec<f64>,
    pub n_cycles: usize,
    pub propagator: PropagatorKind,
    pub dt: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ResolvedRates {
    pub taus: Vec<f64>,
    pub quad: QuadMode,
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

fn sweep(name: &str, start: f64, stop: f64, points: usize, spacing: Spacing) -> Result<Vec<f64>, CliError> {
    positive(&format!("{name} start"), start)?;
    positive(&format!("{name} stop"), stop)?;
    if points == 0 {
        return Err(CliError::Config(format!("{name} needs at least one point")));
    }
    if points == 1 {
        return Ok(vec![start]);
    }
    if stop <= start {
        return Err(CliError::Config(format!("{name} stop must exceed start")));
    }
    let last = (points - 1) as f64;
    Ok((0..points)
        .map(|i| {
            let f = i as f64 / last;
            match spacing {
                Spacing::Log => 10f64.powf(start.log10() + f * (stop.log10() - start.log10())),
                Spacing::Linear => start + f * (stop - start),
            }
        })
        .collect())
}

impl Resolved {
    fn new(loaded: &LoadedConfig, out_override: Option<&Path>) -> Result<Self, CliError> {
        let c = &loaded.config;
        let model_si = match &c.model {
            ModelSection::Hydrogen { eta, omega_c } => SpectralModel::hydrogen(*eta, *omega_c),
            ModelSection::Lorentzian {
                strength,
                center,
                width,
            } => SpectralModel::lorentzian(*strength, *center, *width),
            ModelSection::FlatBand {
                g0_density,
                omega_min,
                omega_max,
            } => SpectralModel::flat_band(*g0_density, *omega_min, *omega_max),
            ModelSection::Tabulated { path } => SpectralModel::load_tabulated_csv(loaded.base_dir.join(path)),
        }
        .map_err(|e| CliError::Config(format!("model: {e}")))?;

        let omega_ref = match c.omega_ref {
            Some(w) => positive("omega_ref", w)?,
            None => model_si.characteristic_scale(),
        };
        let units = Units::new(omega_ref).map_err(|e| CliError::Config(e.to_string()))?;
        let f = |w: f64| units.frequency_to_internal(w);
        let t = |x: f64| units.time_to_internal(x);

        let bath = c.bath.clone().unwrap_or_default();
        let scale = bath.coupling_scale.unwrap_or(1.0);
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(CliError::Config(format!(
                "bath.coupling_scale must be nonnegative, got {scale}"
            )));
        }
        let model = model_si.rescaled(1.0 / omega_ref).with_coupling_scale(scale);
        let (lo, hi) = model_si.default_grid_extent();
        let grid = GridSpec {
            omega_lo: f(bath.omega_lo.unwrap_or(lo)),
            omega_hi: f(bath.omega_hi.unwrap_or(hi)),
            modes: bath.modes.unwrap_or(DEFAULT_MODES),
            scheme: match bath.scheme.unwrap_or(Scheme::Midpoint) {
                Scheme::Uniform => GridScheme::Uniform,
                Scheme::Midpoint => GridScheme::MidpointUniform,
            },
        };
        if !(grid.omega_hi > grid.omega_lo) || grid.modes == 0 {
            return Err(CliError::Config("bath needs omega_hi > omega_lo and modes >= 1".into()));
        }

        let validity_threshold = positive(
            "validity_threshold",
            c.validity_threshold.unwrap_or(DEFAULT_VALIDITY_THRESHOLD),
        )?;

        let omega2 = c.atom.as_ref().map(|a| f(a.omega2));
        let pulse = match &c.atom {
            Some(AtomSection {
                omega2,
                omega3: Some(w3),
                rabi: Some(r),
            }) => Some(
                PulseParams::new(f(positive("atom.rabi", *r)?), f(*omega2), f(*w3))
                    .map_err(|e| CliError::Config(format!("atom: {e}")))?,
            ),
            _ => None,
        };

        let protocol = match &c.protocol {
            None => None,
            Some(p) => {
                let taus_si = match (p.tau, p.tau_sweep) {
                    (Some(tau), None) => vec![positive("protocol.tau", tau)?],
                    (None, Some(s)) => sweep("protocol.tau_sweep", s.start, s.stop, s.points, s.spacing)?,
                    _ => {
                        return Err(CliError::Config(
                            "protocol needs exactly one of tau or tau_sweep".into(),
                        ))
                    }
                };
                let propagator = p.propagator.unwrap_or(PropagatorKind::ShortTime);
                let dt = match (propagator, p.dt) {
                    (PropagatorKind::OdeOracle, None) => {
                        return Err(CliError::Config("protocol.dt is required for ode_oracle".into()))
                    }
                    (_, dt) => dt.map(|d| positive("protocol.dt", d).map(t)).transpose()?,
                };
                Some(ResolvedProtocol {
                    taus: taus_si.into_iter().map(t).collect(),
                    n_cycles: p.n_cycles,
                    propagator,
                    dt,
                })
            }
        };

        let rates = match &c.rates {
            None => None,
            Some(r) => {
                let taus = sweep("rates", r.tau_start, r.tau_stop, r.points, r.spacing)?;
                let quad = match r.quad.unwrap_or(QuadKind::Adaptive) {
                    QuadKind::Adaptive => QuadMode::Adaptive {
                        tolerance: positive("rates.tolerance", r.tolerance.unwrap_or(DEFAULT_RATE_TOLERANCE))?,
                    },
                    QuadKind::Grid => QuadMode::Grid(grid),
                };
                Some(ResolvedRates {
                    taus: taus.into_iter().map(t).collect(),
                    quad,
                })
            }
        };

        let output = c.output.clone().unwrap_or_default();
        let out_dir = match out_override {
            Some(p) => p.to_path_buf(),
            None => match output.directory {
                Some(d) if d.is_relative() => loaded.base_dir.join(d),
                Some(d) => d,
                None => PathBuf::from("."),
            },
        };

        Ok(Self {
            units,
            model,
            grid,
            validity_threshold,
            omega2,
            pulse,
            protocol,
            rates,
            out_dir,
            prefix: output.prefix.unwrap_or_default(),
        })
    }

    pub fn require_omega2(&self) -> Result<f64, CliError> {
        self.omega2
            .ok_or_else(|| CliError::Config("missing [atom] section with omega2".into()))
    }

    pub fn require_pulse(&self) -> Result<PulseParams, CliError> {
        self.pulse
            .ok_or_else(|| CliError::Config("[atom] needs omega2, omega3 and rabi for simulate".into()))
    }

    pub fn require_protocol(&self) -> Result<&ResolvedProtocol, CliError> {
        self.protocol
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [protocol] section".into()))
    }

    pub fn require_rates(&self) -> Result<&ResolvedRates, CliError> {
        self.rates
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [rates] section".into()))
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.out_dir.join(format!("{}{name}.csv", self.prefix))
    }
}
