//! Scenario files in TOML.
//!
//! ```toml
//! output = "out/bimodal"
//!
//! [system]
//! horizon = 4
//! order = 2
//! seed = 0              # or: coefficients = [0.4, 0.35, 0.45, 0.32]
//! range = [0.3, 0.5]
//!
//! [initial]
//! family = "gaussian"
//! mean = 0.0
//! variance = 1.0
//!
//! [terminal]
//! family = "mixture"
//! components = [
//!   { weight = 0.5, spec = { family = "laplace", location = 2.0, scale = 1.0 } },
//!   { weight = 0.5, spec = { family = "laplace", location = -3.0, scale = 1.0 } },
//! ]
//!
//! [cost]
//! kind = "smoothness"
//!
//! [solver]
//! tol = 1e-8
//!
//! [realization]
//! family = "gaussian"
//! half_width = 12.0
//!
//! [ensemble]
//! agents = 1000
//! seed = 7
//! ```

use std::ops::Range;
use std::path::PathBuf;

use dsteer_core::dynamics::SystemSchedule;
use dsteer_core::planner::{CostSpec, OptimizerOptions, PlanOptions, DEFAULT_CONTROL_MARGIN};
use dsteer_core::realization::RealizationOptions;
use dsteer_core::DistributionSpec;
use serde::Deserialize;
use toml::Spanned;

use crate::error::{CliError, Result};

/// Uniform range for seeded coefficients when none is given.
pub const DEFAULT_RANGE: [f64; 2] = [0.3, 0.5];

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default = "default_output")]
    output: PathBuf,
    system: RawSystem,
    initial: DistributionSpec,
    terminal: DistributionSpec,
    #[serde(default = "default_cost")]
    cost: CostSpec,
    #[serde(default)]
    solver: SolverConfig,
    #[serde(default)]
    realization: RealizationOptions,
    #[serde(default)]
    ensemble: EnsembleConfig,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    horizon: Spanned<usize>,
    order: Spanned<usize>,
    coefficients: Option<Spanned<Vec<f64>>>,
    seed: Option<Spanned<u64>>,
    range: Option<Spanned<[f64; 2]>>,
}

fn default_output() -> PathBuf {
    PathBuf::from("bundle")
}

fn default_cost() -> CostSpec {
    CostSpec::Smoothness
}

/// Where the system coefficients come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficients {
    Explicit(Vec<f64>),
    Seeded { seed: u64, lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub horizon: usize,
    pub order: usize,
    pub coefficients: Coefficients,
}

impl SystemConfig {
    pub fn schedule(&self) -> Result<SystemSchedule> {
        Ok(match &self.coefficients {
            Coefficients::Explicit(a) => SystemSchedule::new(self.order, a.clone())?,
            Coefficients::Seeded { seed, lo, hi } => {
                SystemSchedule::from_seed(self.order, self.horizon, *seed, *lo, *hi)?
            }
        })
    }

    pub fn seed(&self) -> Option<u64> {
        match self.coefficients {
            Coefficients::Seeded { seed, .. } => Some(seed),
            Coefficients::Explicit(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iterations: usize,
    pub control_margin: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iterations: 10_000,
            control_margin: DEFAULT_CONTROL_MARGIN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub enabled: bool,
    pub agents: usize,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            agents: 1000,
            seed: 0,
        }
    }
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub output: PathBuf,
    pub system: SystemConfig,
    pub initial: DistributionSpec,
    pub terminal: DistributionSpec,
    pub cost: CostSpec,
    pub solver: SolverConfig,
    pub realization: RealizationOptions,
    pub ensemble: EnsembleConfig,
}

impl ScenarioConfig {
    pub fn plan_options(&self) -> PlanOptions {
        PlanOptions {
            optimizer: OptimizerOptions {
                tol: self.solver.tol,
                max_iterations: self.solver.max_iterations,
                control_margin: self.solver.control_margin,
            },
        }
    }

    /// Checks that do not depend on where a value sits in the file.
    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(CliError::Invalid(m));
        if let Coefficients::Explicit(a) = &self.system.coefficients {
            if a.len() != self.system.horizon {
                return invalid(format!("{} coefficients for horizon {}", a.len(), self.system.horizon));
            }
        }
        if let Coefficients::Seeded { lo, hi, .. } = self.system.coefficients {
            check_range(lo, hi).map_err(CliError::Invalid)?;
        }
        if self.system.horizon < 1 || self.system.order < 1 {
            return invalid("horizon and order must be at least 1".into());
        }
        self.initial.validate()?;
        self.terminal.validate()?;
        self.cost.validate(self.system.horizon)?;
        let s = &self.solver;
        if !(s.tol > 0.0) || s.max_iterations == 0 || !(s.control_margin >= 0.0) {
            return invalid("solver needs tol > 0, max_iterations > 0 and control_margin >= 0".into());
        }
        let r = &self.realization;
        if !(r.tol > 0.0) || !(r.inflation > 0.0) || !(r.half_width > 0.0) {
            return invalid("realization needs tol, inflation and half_width > 0".into());
        }
        if self.ensemble.enabled && self.ensemble.agents == 0 {
            return invalid("ensemble needs at least one agent".into());
        }
        Ok(())
    }
}

fn check_range(lo: f64, hi: f64) -> std::result::Result<(), String> {
    if lo > hi {
        return Err(format!("empty coefficient range [{lo}, {hi}]"));
    }
    if !(lo > 0.0 && hi < 1.0) {
        return Err(format!("coefficient range [{lo}, {hi}] must lie inside (0, 1)"));
    }
    Ok(())
}

fn line_of(text: &str, span: Range<usize>) -> usize {
    text[..span.start.min(text.len())].matches('\n').count() + 1
}

/// Parses and validates a scenario, filling defaults.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Config {
        line: e.span().map(|s| line_of(text, s)).unwrap_or(1),
        message: e.message().trim().to_string(),
    })?;
    let at = |span: Range<usize>, message: String| CliError::Config {
        line: line_of(text, span),
        message,
    };
    let sys = raw.system;
    let (horizon, order) = (*sys.horizon.get_ref(), *sys.order.get_ref());
    if horizon < 1 {
        return Err(at(sys.horizon.span(), "horizon must be at least 1".into()));
    }
    if order < 1 {
        return Err(at(sys.order.span(), "order must be at least 1".into()));
    }
    let coefficients = match (sys.coefficients, sys.seed, sys.range) {
        (Some(a), None, None) => {
            if a.get_ref().len() != horizon {
                return Err(at(
                    a.span(),
                    format!("{} coefficients for horizon {horizon}", a.get_ref().len()),
                ));
            }
            Coefficients::Explicit(a.into_inner())
        }
        (None, Some(seed), range) => {
            let [lo, hi] = range.as_ref().map(|r| *r.get_ref()).unwrap_or(DEFAULT_RANGE);
            if let Err(m) = check_range(lo, hi) {
                let span = range.map(|r| r.span()).unwrap_or(seed.span());
                return Err(at(span, m));
            }
            Coefficients::Seeded {
                seed: seed.into_inner(),
                lo,
                hi,
            }
        }
        (Some(a), _, _) => {
            return Err(at(
                a.span(),
                "give either coefficients or seed and range, not both".into(),
            ))
        }
        (None, None, Some(r)) => return Err(at(r.span(), "range needs a seed".into())),
        (None, None, None) => {
            return Err(at(sys.horizon.span(), "system needs coefficients or a seed".into()));
        }
    };
    let cfg = ScenarioConfig {
        output: raw.output,
        system: SystemConfig {
            horizon,
            order,
            coefficients,
        },
        initial: raw.initial,
        terminal: raw.terminal,
        cost: raw.cost,
        solver: raw.solver,
        realization: raw.realization,
        ensemble: raw.ensemble,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub output: Option<PathBuf>,
    pub system_seed: Option<u64>,
    pub ensemble_seed: Option<u64>,
    pub agents: Option<usize>,
    pub ensemble: Option<bool>,
    pub cost: Option<CostSpec>,
    pub tol: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, mut cfg: ScenarioConfig) -> Result<ScenarioConfig> {
        if let Some(o) = &self.output {
            cfg.output = o.clone();
        }
        if let Some(seed) = self.system_seed {
            cfg.system.coefficients = match cfg.system.coefficients {
                Coefficients::Seeded { lo, hi, .. } => Coefficients::Seeded { seed, lo, hi },
                Coefficients::Explicit(_) => {
                    let [lo, hi] = DEFAULT_RANGE;
                    Coefficients::Seeded { seed, lo, hi }
                }
            };
        }
        if let Some(seed) = self.ensemble_seed {
            cfg.ensemble.seed = seed;
        }
        if let Some(n) = self.agents {
            cfg.ensemble.agents = n;
        }
        if let Some(on) = self.ensemble {
            cfg.ensemble.enabled = on;
        }
        if let Some(c) = &self.cost {
            cfg.cost = c.clone();
        }
        if let Some(t) = self.tol {
            cfg.solver.tol = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[system]
horizon = 4
order = 2
seed = 0

[initial]
family = "gaussian"
mean = 0.0
variance = 1.0

[terminal]
family = "laplace"
location = 1.0
scale = 1.0
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.ensemble.agents, 1000);
        assert_eq!(c.solver.tol, 1e-8);
        assert_eq!(c.cost, CostSpec::Smoothness);
        assert_eq!(
            c.system.coefficients,
            Coefficients::Seeded {
                seed: 0,
                lo: 0.3,
                hi: 0.5
            }
        );
    }

    #[test]
    fn reversed_range_is_empty() {
        let text = MINIMAL.replace("seed = 0", "seed = 0\nrange = [0.6, 0.5]");
        let e = parse_config(&text).unwrap_err();
        assert!(e.to_string().contains("empty coefficient range"), "{e}");
        assert!(matches!(e, CliError::Config { line: 6, .. }), "{e:?}");
    }

    #[test]
    fn coefficient_count_must_match_the_horizon() {
        let text = MINIMAL.replace("seed = 0", "coefficients = [0.4, 0.4, 0.4]");
        let e = parse_config(&text).unwrap_err();
        assert!(matches!(e, CliError::Config { line: 5, .. }), "{e:?}");
    }

    #[test]
    fn zero_horizon_is_rejected() {
        assert!(parse_config(&MINIMAL.replace("horizon = 4", "horizon = 0")).is_err());
        assert!(parse_config(&MINIMAL.replace("order = 2", "order = 0")).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_line() {
        let text = MINIMAL.replace("order = 2", "order = 2\nspeed = 3");
        let e = parse_config(&text).unwrap_err();
        assert!(matches!(e, CliError::Config { line: 5, .. }), "{e:?}");
        let text = format!("{MINIMAL}\n[ensemble]\nagent = 5\n");
        assert!(parse_config(&text).is_err());
    }

    #[test]
    fn mixtures_and_costs_parse() {
        let text = format!(
            "{}\n[cost]\nkind = \"energy_plus_state\"\nstate_weight = 0.4\n",
            MINIMAL.replace(
                "family = \"laplace\"\nlocation = 1.0\nscale = 1.0",
                "family = \"mixture\"\ncomponents = [\n  { weight = 0.5, spec = { family = \"laplace\", location = 2.0, scale = 1.0 } },\n  { weight = 0.5, spec = { family = \"laplace\", location = -3.0, scale = 1.0 } },\n]"
            )
        );
        let c = parse_config(&text).unwrap();
        assert_eq!(c.cost, CostSpec::EnergyPlusState { state_weight: 0.4 });
        assert_eq!(c.terminal.moments(2).unwrap().as_slice(), &[-0.5, 8.5, -12.5, 150.5]);
    }

    #[test]
    fn overrides_take_precedence() {
        let c = parse_config(MINIMAL).unwrap();
        let o = Overrides {
            system_seed: Some(9),
            agents: Some(10),
            ensemble: Some(false),
            cost: Some(CostSpec::Energy),
            ..Overrides::default()
        };
        let c = o.apply(c).unwrap();
        assert_eq!(c.system.seed(), Some(9));
        assert_eq!(c.ensemble.agents, 10);
        assert!(!c.ensemble.enabled);
        assert_eq!(c.cost, CostSpec::Energy);
    }
}
