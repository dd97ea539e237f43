//! Subcommand implementations. Each writes its CSV artifact first and then
//! reports to `out`; a failed check still leaves the artifact on disk.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use qaze_core::output::format_sci;
use qaze_core::{
    decay_rate_quadrature, discretize, fit_rate, rate_curve, run_protocol, validity_check, BathDiscretization,
    CycleHistory, Propagator, ProtocolParams, QuadMode, SurvivalKind,
};

use crate::config::{LoadedConfig, PropagatorKind, Resolved};
use crate::{Cli, CliError, Command};

/// Load the configuration named by `cli` and run its subcommand.
pub fn run<W: Write>(cli: &Cli, out: &mut W) -> Result<(), CliError> {
    if cli.seed.is_some() {
        log::warn!("--seed is ignored: the computation is deterministic");
    }
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let loaded = LoadedConfig::from_path(path)?;
    let resolved = loaded.resolve(cli.out.as_deref())?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Internal(e.to_string()))?;

    let mut report = Vec::new();
    let result = pool.install(|| match cli.command {
        Command::RateCurve => cmd_rate_curve(&loaded, &resolved, &mut report),
        Command::Simulate => cmd_simulate(&loaded, &resolved, &mut report),
        Command::Validate => cmd_validate(&resolved, &mut report),
    });
    out.write_all(&report)?;
    out.flush()?;
    result
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    let f = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

fn bath(r: &Resolved) -> Result<BathDiscretization, CliError> {
    Ok(discretize(&r.model, &r.grid)?)
}

pub fn cmd_rate_curve<W: Write>(loaded: &LoadedConfig, r: &Resolved, out: &mut W) -> Result<(), CliError> {
    let omega2 = r.require_omega2()?;
    let rates = r.require_rates()?;
    let curve = rate_curve(&r.model, omega2, &rates.taus, &rates.quad)?;

    let path = r.artifact("rate_curve");
    let mut w = create(&path)?;
    curve.write_csv(&mut w, &r.units, Some(&loaded.header()))?;
    w.flush()?;

    let u = &r.units;
    writeln!(out, "wrote {}", path.display())?;
    let (argmax_tau, max_ratio) = match curve.argmax() {
        Some(i) => (u.time_to_si(curve.taus[i]), curve.rates[i] / curve.golden_rule),
        None => (f64::NAN, f64::NAN),
    };
    writeln!(
        out,
        "golden_rule_per_s={} argmax_tau_s={} max_R_over_golden_rule={} crossing_tau_s={}",
        format_sci(u.rate_to_si(curve.golden_rule)),
        format_sci(argmax_tau),
        format_sci(max_ratio),
        curve
            .first_crossing()
            .map_or_else(|| "none".to_string(), |t| format_sci(u.time_to_si(t))),
    )?;
    if !curve.failures.is_empty() {
        let taus: Vec<String> = curve
            .failures
            .iter()
            .map(|&i| format_sci(u.time_to_si(curve.taus[i])))
            .collect();
        return Err(CliError::Accuracy(format!(
            "tolerance missed at tau_s = {}",
            taus.join(", ")
        )));
    }
    Ok(())
}

struct SimulateRow {
    history: CycleHistory,
    quadrature: Result<f64, qaze_core::Error>,
}

fn simulate_one(r: &Resolved, bath: &BathDiscretization, tau: f64) -> Result<SimulateRow, CliError> {
    let p = r.require_protocol()?;
    let propagator = match p.propagator {
        PropagatorKind::ShortTime => Propagator::ShortTime,
        PropagatorKind::OdeOracle => Propagator::OdeOracle {
            dt: p
                .dt
                .ok_or_else(|| CliError::Config("protocol.dt is required for ode_oracle".into()))?,
        },
    };
    let params = ProtocolParams::new(tau, r.require_pulse()?, p.n_cycles, propagator)?
        .with_validity_threshold(r.validity_threshold);
    let history = run_protocol(&params, bath)?;
    let quadrature = decay_rate_quadrature(&r.model, params.pulse.omega2(), tau, &QuadMode::default());
    Ok(SimulateRow { history, quadrature })
}

fn fit_summary(history: &CycleHistory, tau: f64, kind: SurvivalKind) -> Result<Option<f64>, CliError> {
    if history.cycles() < 2 {
        return Ok(None);
    }
    Ok(Some(fit_rate(history, tau, kind)?.rate))
}

pub fn cmd_simulate<W: Write>(loaded: &LoadedConfig, r: &Resolved, out: &mut W) -> Result<(), CliError> {
    let protocol = r.require_protocol()?;
    r.require_pulse()?;
    let bath = bath(r)?;
    let rows: Vec<Result<SimulateRow, CliError>> = protocol
        .taus
        .par_iter()
        .map(|&tau| simulate_one(r, &bath, tau))
        .collect();

    let u = &r.units;
    let many = protocol.taus.len() > 1;
    let mut invalid = Vec::new();
    let mut inaccurate = Vec::new();
    for (i, (row, &tau)) in rows.into_iter().zip(&protocol.taus).enumerate() {
        let row = row?;
        let h = &row.history;
        let name = if many {
            format!("simulate_{i:03}")
        } else {
            "simulate".to_string()
        };
        let path = r.artifact(&name);
        let mut comment = loaded.header();
        if !h.validity.valid {
            comment.push_str(&format!(
                "\nvalidity=violated ratio={} threshold={}",
                format_sci(h.validity.ratio),
                format_sci(h.validity.threshold)
            ));
        }
        let mut w = create(&path)?;
        h.write_csv(&mut w, u, Some(&comment))?;
        w.flush()?;

        let tau_si = u.time_to_si(tau);
        let quad = match row.quadrature {
            Ok(v) => Some(v),
            Err(qaze_core::Error::AccuracyNotReached { estimate, .. }) => {
                inaccurate.push(format_sci(tau_si));
                Some(estimate)
            }
            Err(e) => return Err(e.into()),
        };
        let fmt_rate = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format_sci(u.rate_to_si(x)));
        let gap = |v: Option<f64>| match (v, quad) {
            (Some(x), Some(q)) if q != 0.0 => format_sci((x - q) / q),
            _ => "n/a".to_string(),
        };
        let locked = fit_summary(h, tau, SurvivalKind::Locked)?;
        let traced = fit_summary(h, tau, SurvivalKind::Traced)?;
        writeln!(out, "wrote {}", path.display())?;
        writeln!(
            out,
            "tau_s={} R_quadrature_per_s={} R_locked_per_s={} gap_locked={} R_traced_per_s={} gap_traced={} validity_ratio={} valid={}",
            format_sci(tau_si),
            fmt_rate(quad),
            fmt_rate(locked),
            gap(locked),
            fmt_rate(traced),
            gap(traced),
            format_sci(h.validity.ratio),
            h.validity.valid,
        )?;
        if !h.validity.valid {
            invalid.push(format_sci(tau_si));
        }
    }
    if !invalid.is_empty() {
        return Err(CliError::Validity(format!(
            "ratio above threshold at tau_s = {}",
            invalid.join(", ")
        )));
    }
    if !inaccurate.is_empty() {
        return Err(CliError::Accuracy(format!(
            "quadrature tolerance missed at tau_s = {}",
            inaccurate.join(", ")
        )));
    }
    Ok(())
}

pub fn cmd_validate<W: Write>(r: &Resolved, out: &mut W) -> Result<(), CliError> {
    let omega2 = r.require_omega2()?;
    let protocol = r.require_protocol()?;
    let bath = bath(r)?;
    let mut invalid = Vec::new();
    for &tau in &protocol.taus {
        let v = validity_check(&bath, omega2, tau, r.validity_threshold)?;
        let tau_si = r.units.time_to_si(tau);
        writeln!(
            out,
            "tau_s={} lhs={} rhs={} ratio={} threshold={} verdict={}",
            format_sci(tau_si),
            format_sci(v.lhs),
            format_sci(v.rhs),
            format_sci(v.ratio),
            format_sci(v.threshold),
            if v.valid { "valid" } else { "invalid" },
        )?;
        if !v.valid {
            invalid.push(format_sci(tau_si));
        }
    }
    writeln!(
        out,
        "# lhs = |sum_k (g_k h_k)^2|^2, rhs = |Re sum_k g_k^2 h_k / x_k|; both dimensionless"
    )?;
    if !invalid.is_empty() {
        return Err(CliError::Validity(format!(
            "ratio above threshold at tau_s = {}",
            invalid.join(", ")
        )));
    }
    Ok(())
}
