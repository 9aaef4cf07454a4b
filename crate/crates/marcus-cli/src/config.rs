//! Experiment configuration: a TOML file with three sections.
//!
//! ```toml
//! [model]
//! name = "bounded_trig"
//! params = [0.3, 0.4, 0.5]
//!
//! [levy]
//! family = "compound_poisson_normal"
//! params = [1.0, 0.0, 0.5]
//! # delta = 0.001            # small-jump truncation, infinite activity only
//!
//! [run]
//! f_name = "cosine"
//! f_params = [1.0]
//! x0 = 0.5
//! T = 1.0
//! h_list = [0.25, 0.125, 0.0625]
//! n_paths = 100000
//! seed = 42
//! oracle = "reference"       # or "exact_linear" (linear model only)
//! # h_fine = 0.0009765625    # default: min(h_list) / 64
//! # ode_tol = 1e-8
//! # identity_tol = 1e-5
//! # out_dir = "out"
//! ```
//!
//! `resolve` builds the actual model, driver and test function, so every
//! name or parameter problem surfaces as a config error before any
//! simulation starts.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use marcus::coefficients::CoefficientError;
use marcus::generators::GeneratorError;
use marcus::levy::LevyError;
use marcus::montecarlo::Oracle;
use marcus::{CoefficientModel, LevyModel, TestFunction};

pub const DEFAULT_DELTA: f64 = 1e-3;
pub const DEFAULT_ODE_TOL: f64 = 1e-8;
pub const DEFAULT_IDENTITY_TOL: f64 = 1e-5;

#[derive(Error, Debug)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("model: {0}")]
    Model(#[from] CoefficientError),
    #[error("levy: {0}")]
    Levy(#[from] LevyError),
    #[error("test function: {0}")]
    Function(#[from] GeneratorError),
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: String,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevySection {
    pub family: String,
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub f_name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub f_params: Vec<f64>,
    pub x0: f64,
    #[serde(rename = "T")]
    pub total_time: f64,
    pub h_list: Vec<f64>,
    pub n_paths: u64,
    pub seed: u64,
    pub oracle: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_fine: Option<f64>,
    #[serde(default = "default_ode_tol")]
    pub ode_tol: f64,
    #[serde(default = "default_identity_tol")]
    pub identity_tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

fn default_ode_tol() -> f64 {
    DEFAULT_ODE_TOL
}

fn default_identity_tol() -> f64 {
    DEFAULT_IDENTITY_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub levy: LevySection,
    pub run: RunSection,
}

/// A config with every name resolved and every parameter validated.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub model: CoefficientModel,
    pub levy: LevyModel,
    pub f: TestFunction,
    pub oracle: Oracle,
    pub h_fine: f64,
}

pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path)?;
    Ok(toml::from_str(&text)?)
}

impl ExperimentConfig {
    pub fn resolve(self) -> Result<Experiment, ConfigError> {
        let model = CoefficientModel::builtin(&self.model.name, &self.model.params)?;
        let delta = self.levy.delta.unwrap_or(DEFAULT_DELTA);
        let levy = LevyModel::from_name(&self.levy.family, &self.levy.params, delta)?;
        let f = TestFunction::from_name(&self.run.f_name, &self.run.f_params)?;

        let run = &self.run;
        if !(run.total_time > 0.0) || !run.total_time.is_finite() {
            return Err(invalid(format!("T = {} must be positive", run.total_time)));
        }
        if run.h_list.is_empty() {
            return Err(invalid("h_list must not be empty"));
        }
        for pair in run.h_list.windows(2) {
            if !(pair[1] < pair[0]) {
                return Err(invalid(format!(
                    "h_list must be strictly decreasing, got {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        let min_h = *run.h_list.last().expect("nonempty");
        if !(min_h > 0.0) {
            return Err(invalid(format!("steps must be positive, got {min_h}")));
        }
        if run.total_time / min_h > 1e8 {
            return Err(invalid(format!(
                "T/min(h) = {:.3e} exceeds the 1e8 step budget",
                run.total_time / min_h
            )));
        }
        if run.n_paths < 1000 {
            return Err(invalid(format!(
                "n_paths = {} must be at least 1000",
                run.n_paths
            )));
        }
        if !(run.ode_tol > 0.0 && run.ode_tol.is_finite()) {
            return Err(invalid(format!("ode_tol = {} must be positive", run.ode_tol)));
        }
        if !(run.identity_tol > 0.0 && run.identity_tol.is_finite()) {
            return Err(invalid(format!(
                "identity_tol = {} must be positive",
                run.identity_tol
            )));
        }

        let is_linear = model.as_linear().is_some();
        if !f.is_bounded() && !is_linear {
            return Err(invalid(format!(
                "test function '{}' is unbounded and allowed only on the linear model",
                f.name()
            )));
        }

        let h_fine = run.h_fine.unwrap_or(min_h / 64.0);
        if !(h_fine > 0.0) || h_fine > min_h {
            return Err(invalid(format!(
                "h_fine = {h_fine} must lie in (0, min(h_list)]"
            )));
        }
        let oracle = match run.oracle.as_str() {
            "exact_linear" => {
                if !is_linear {
                    return Err(invalid(format!(
                        "oracle 'exact_linear' requires the linear model, got '{}'",
                        self.model.name
                    )));
                }
                Oracle::ExactLinear
            }
            "reference" => {
                for &h in &run.h_list {
                    let levels = (h / h_fine).log2().round();
                    if ((2.0f64).powf(levels) * h_fine - h).abs() > 1e-9 * h {
                        return Err(invalid(format!(
                            "h = {h} is not a power-of-two multiple of h_fine = {h_fine}"
                        )));
                    }
                }
                Oracle::Reference { h_fine }
            }
            other => {
                return Err(invalid(format!(
                    "oracle must be 'exact_linear' or 'reference', got '{other}'"
                )))
            }
        };

        Ok(Experiment {
            config: self,
            model,
            levy,
            f,
            oracle,
            h_fine,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ExperimentConfig {
        ExperimentConfig {
            model: ModelSection {
                name: "bounded_trig".into(),
                params: vec![0.3, 0.4, 0.5],
            },
            levy: LevySection {
                family: "compound_poisson_normal".into(),
                params: vec![1.0, 0.0, 0.5],
                delta: None,
            },
            run: RunSection {
                f_name: "cosine".into(),
                f_params: vec![1.0],
                x0: 0.5,
                total_time: 1.0,
                h_list: vec![0.25, 0.125, 0.0625],
                n_paths: 100_000,
                seed: 42,
                oracle: "reference".into(),
                h_fine: None,
                ode_tol: DEFAULT_ODE_TOL,
                identity_tol: DEFAULT_IDENTITY_TOL,
                out_dir: None,
            },
        }
    }

    #[test]
    fn toml_round_trip_is_identity() {
        let cfg = sample();
        let text = toml::to_string(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn resolves_with_defaults() {
        let exp = sample().resolve().unwrap();
        assert_eq!(exp.model.name(), "bounded_trig");
        assert_eq!(exp.levy.family_name(), "compound_poisson_normal");
        assert_eq!(exp.f.name(), "cosine");
        assert_eq!(exp.h_fine, 0.0625 / 64.0);
        assert_eq!(exp.oracle, Oracle::Reference { h_fine: 0.0625 / 64.0 });
    }

    #[test]
    fn rejects_bad_ladders_and_oracles() {
        let mut cfg = sample();
        cfg.run.h_list = vec![0.125, 0.25];
        assert!(matches!(cfg.resolve(), Err(ConfigError::Invalid(_))));

        let mut cfg = sample();
        cfg.run.oracle = "exact_linear".into();
        assert!(matches!(cfg.resolve(), Err(ConfigError::Invalid(_))));

        let mut cfg = sample();
        cfg.run.h_list = vec![0.25, 0.1];
        assert!(matches!(cfg.resolve(), Err(ConfigError::Invalid(_))));

        let mut cfg = sample();
        cfg.run.n_paths = 10;
        assert!(matches!(cfg.resolve(), Err(ConfigError::Invalid(_))));

        let mut cfg = sample();
        cfg.run.total_time = 1e4;
        cfg.run.h_list = vec![1e-5];
        assert!(matches!(cfg.resolve(), Err(ConfigError::Invalid(_))));

        let mut cfg = sample();
        cfg.model.name = "spline".into();
        assert!(matches!(cfg.resolve(), Err(ConfigError::Model(_))));

        let mut cfg = sample();
        cfg.run.f_name = "identity".into();
        cfg.run.f_params = vec![];
        assert!(matches!(cfg.resolve(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn identity_function_is_accepted_on_the_linear_model() {
        let mut cfg = sample();
        cfg.model.name = "linear".into();
        cfg.model.params = vec![0.05, 0.2, 0.3];
        cfg.run.f_name = "identity".into();
        cfg.run.f_params = vec![];
        cfg.run.oracle = "exact_linear".into();
        let exp = cfg.resolve().unwrap();
        assert_eq!(exp.oracle, Oracle::ExactLinear);
    }

    #[test]
    fn parses_the_documented_layout() {
        let text = r#"
            [model]
            name = "linear"
            params = [0.05, 0.2, 0.3]

            [levy]
            family = "variance_gamma"
            params = [1.0, 9.0, 11.0]
            delta = 0.01

            [run]
            f_name = "gaussian_bump"
            f_params = [0.0, 1.0]
            x0 = 1.0
            T = 1.0
            h_list = [0.5, 0.25]
            n_paths = 1000
            seed = 7
            oracle = "exact_linear"
        "#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.levy.delta, Some(0.01));
        assert_eq!(cfg.run.ode_tol, DEFAULT_ODE_TOL);
        let exp = cfg.resolve().unwrap();
        assert_eq!(exp.levy.delta(), 0.01);
    }
}
