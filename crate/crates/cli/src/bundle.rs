//! End-to-end scenario runs and the files they leave behind.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dsteer_core::ensemble::{run_discrete, EnsembleState};
use dsteer_core::moments::empirical_moments;
use dsteer_core::planner::{last_control_sensitivity, plan, CostSpec, SensitivityReport, SteeringPlan};
use dsteer_core::realization::{
    realize_with_options, Density, DensityEstimate, Realization, RealizationOptions, ReferenceDensity,
};
use dsteer_core::MomentVector;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";
pub const STATE_MOMENTS: &str = "state_moments.csv";
pub const CONTROL_MOMENTS: &str = "control_moments.csv";
pub const SENSITIVITY: &str = "sensitivity.csv";
pub const ENSEMBLE: &str = "ensemble.csv";
/// Points in each density grid file.
pub const DENSITY_POINTS: usize = 4001;

pub fn density_file(k: usize) -> String {
    format!("density_k{k}.csv")
}

/// Seventeen significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Diagnostics of the realization at one controlled step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRealization {
    pub step: usize,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub max_residual: f64,
    pub min_denominator: f64,
    pub reference: ReferenceDensity,
    pub truncation: f64,
}

impl StepRealization {
    fn new(step: usize, r: &Realization) -> Self {
        Self {
            step,
            iterations: r.report.iterations,
            gradient_norm: r.report.gradient_norm,
            max_residual: r.residuals.iter().fold(0.0, |m, v| m.max(v.abs())),
            min_denominator: r.probe_min_denominator.min(r.report.min_denominator),
            reference: r.estimate.reference,
            truncation: r.estimate.truncation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub seed: u64,
    pub agents: usize,
    /// Empirical moments of the terminal positions, orders `1..=2n`.
    pub terminal_moments: Vec<f64>,
}

/// Run record written next to the CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub order: usize,
    pub horizon: usize,
    pub cost: CostSpec,
    pub system_seed: Option<u64>,
    pub coefficients: Vec<f64>,
    pub k0: usize,
    pub omega: Vec<f64>,
    pub total_energy: f64,
    pub cost_value: f64,
    pub state_certificates: Vec<f64>,
    pub control_certificates: Vec<f64>,
    pub optimizer_iterations: usize,
    pub optimizer_converged: bool,
    pub realization_options: RealizationOptions,
    pub realizations: Vec<StepRealization>,
    pub sensitivity: Option<SensitivityReport>,
    pub ensemble: Option<EnsembleSummary>,
    pub files: Vec<String>,
}

/// Everything a scenario run produced, in memory.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub plan: SteeringPlan,
    pub densities: Vec<DensityEstimate>,
    pub manifest: Manifest,
    pub dir: PathBuf,
}

pub fn moments_csv(rows: &[MomentVector], order: usize) -> String {
    let mut s = String::from("k");
    for l in 1..=2 * order {
        let _ = write!(s, ",m{l}");
    }
    s.push('\n');
    for (k, m) in rows.iter().enumerate() {
        let _ = write!(s, "{k}");
        for v in m.as_slice() {
            let _ = write!(s, ",{}", num(*v));
        }
        s.push('\n');
    }
    s
}

/// Density on `DENSITY_POINTS` probe points of its domain.
pub fn density_csv(est: &DensityEstimate) -> String {
    let mut s = String::from("u,density\n");
    for u in est.probe_nodes(DENSITY_POINTS) {
        let _ = writeln!(s, "{},{}", num(u), num(est.pdf(u)));
    }
    s
}

fn sensitivity_csv(r: &SensitivityReport) -> String {
    let mut s = String::from("order,finite_difference,approximation,relative_error\n");
    for (i, ((fd, ap), re)) in r
        .finite_difference
        .iter()
        .zip(&r.approximation)
        .zip(&r.relative_error)
        .enumerate()
    {
        let _ = writeln!(s, "{},{},{},{}", i + 1, num(*fd), num(*ap), num(*re));
    }
    s
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(CliError::io(path))
}

/// Runs `build` into `<output>.partial` and moves the result into place,
/// leaving nothing behind on failure. An existing output directory is only
/// replaced if it holds a previous bundle.
pub fn write_atomically<T>(output: &Path, build: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
    let mut partial = OsString::from(output.as_os_str());
    partial.push(".partial");
    let partial = PathBuf::from(partial);
    if partial.exists() {
        fs::remove_dir_all(&partial).map_err(CliError::io(&partial))?;
    }
    fs::create_dir_all(&partial).map_err(CliError::io(&partial))?;
    let finish = |value: T| -> Result<T> {
        if output.exists() {
            if !output.join(MANIFEST).is_file() {
                return Err(CliError::OutputExists(output.to_path_buf()));
            }
            fs::remove_dir_all(output).map_err(CliError::io(output))?;
        }
        fs::rename(&partial, output).map_err(CliError::io(output))?;
        Ok(value)
    };
    match build(&partial).and_then(finish) {
        Ok(v) => Ok(v),
        Err(e) => {
            let _ = fs::remove_dir_all(&partial);
            Err(e)
        }
    }
}

/// Plans, realizes every control, optionally steers an ensemble, and writes
/// the bundle to `cfg.output`.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<Bundle> {
    cfg.validate()?;
    let schedule = cfg.system.schedule()?;
    let order = cfg.system.order;
    let p = plan(&cfg.initial, &cfg.terminal, &schedule, &cfg.cost, &cfg.plan_options())?;
    let realizations = p
        .controls
        .iter()
        .map(|u| realize_with_options(u, &cfg.realization))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let densities: Vec<DensityEstimate> = realizations.iter().map(|r| r.estimate.clone()).collect();
    let sensitivity = if p.controls.is_empty() {
        None
    } else {
        Some(last_control_sensitivity(&p)?)
    };
    let trajectory = if cfg.ensemble.enabled {
        let init = EnsembleState::sample(&cfg.initial, order, cfg.ensemble.agents, cfg.ensemble.seed)?;
        Some(run_discrete(&p, &densities, init)?)
    } else {
        None
    };

    let mut files = vec![STATE_MOMENTS.to_string(), CONTROL_MOMENTS.to_string()];
    files.extend((p.k0..p.horizon).map(density_file));
    if sensitivity.is_some() {
        files.push(SENSITIVITY.to_string());
    }
    if trajectory.is_some() {
        files.push(ENSEMBLE.to_string());
    }
    let ensemble = match &trajectory {
        Some(t) => Some(EnsembleSummary {
            seed: cfg.ensemble.seed,
            agents: cfg.ensemble.agents,
            terminal_moments: empirical_moments(t.terminal(), order)?.into_vec(),
        }),
        None => None,
    };
    let manifest = Manifest {
        tool: "dsteer".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        order,
        horizon: p.horizon,
        cost: p.cost.clone(),
        system_seed: cfg.system.seed(),
        coefficients: p.coefficients.clone(),
        k0: p.k0,
        omega: p.omega.clone(),
        total_energy: p.total_energy,
        cost_value: p.cost_value,
        state_certificates: p.state_certificates.clone(),
        control_certificates: p.control_certificates.clone(),
        optimizer_iterations: p.optimizer_iterations,
        optimizer_converged: p.optimizer_converged,
        realization_options: cfg.realization,
        realizations: realizations
            .iter()
            .enumerate()
            .map(|(i, r)| StepRealization::new(p.k0 + i, r))
            .collect(),
        sensitivity: sensitivity.clone(),
        ensemble,
        files,
    };

    let controls: Vec<MomentVector> = (0..p.horizon).map(|k| p.control_at(k)).collect();
    write_atomically(&cfg.output, |dir| {
        write(dir, STATE_MOMENTS, &moments_csv(&p.states, order))?;
        write(dir, CONTROL_MOMENTS, &moments_csv(&controls, order))?;
        for (i, est) in densities.iter().enumerate() {
            write(dir, &density_file(p.k0 + i), &density_csv(est))?;
        }
        if let Some(s) = &sensitivity {
            write(dir, SENSITIVITY, &sensitivity_csv(s))?;
        }
        if let Some(t) = &trajectory {
            write(dir, ENSEMBLE, &t.to_csv())?;
        }
        write(dir, MANIFEST, &(serde_json::to_string_pretty(&manifest)? + "\n"))
    })?;
    Ok(Bundle {
        plan: p,
        densities,
        manifest,
        dir: cfg.output.clone(),
    })
}

/// Diagnostics of a single realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationRecord {
    pub moments: Vec<f64>,
    pub lambda: Vec<f64>,
    pub residuals: Vec<f64>,
    pub step: StepRealization,
    pub degenerate: bool,
}

/// Realizes one moment vector into `output/density.csv` and
/// `output/realization.json`.
pub fn run_realize(moments: &MomentVector, opts: &RealizationOptions, output: &Path) -> Result<RealizationRecord> {
    let realizable = dsteer_core::moments::is_realizable(moments);
    if !realizable.member {
        return Err(dsteer_core::SteerError::NotRealizable {
            what: "control",
            min_eigenvalue: realizable.min_eigenvalue,
        }
        .into());
    }
    let r = realize_with_options(moments, opts)?;
    let record = RealizationRecord {
        moments: moments.as_slice().to_vec(),
        lambda: r.estimate.lambda.generator().to_vec(),
        residuals: r.residuals.clone(),
        step: StepRealization::new(0, &r),
        degenerate: r.is_degenerate(),
    };
    write_atomically(output, |dir| {
        write(dir, "density.csv", &density_csv(&r.estimate))?;
        write(dir, MANIFEST, &(serde_json::to_string_pretty(&record)? + "\n"))
    })?;
    Ok(record)
}
