//! Flat `key = value` run configuration.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Keys: `problem` (required), `alpha`, `omega`, `eta`, `n_c`, `epsilon`,
//! `mode` (adaptive | uniform), `uniform_levels`, `formulation`
//! (dtn | iti), `seed_levels`, `output_dir`, `retain_for_update`,
//! `max_iterations`, `max_depth`, `threads`, `reference_levels`.

use std::path::PathBuf;

use hps::problems::PROBLEM_NAMES;
use hps::{HpsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Adaptive,
    Uniform,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Adaptive => "adaptive",
            Mode::Uniform => "uniform",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormulationChoice {
    Dtn,
    Iti,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: String,
    pub alpha: Option<f64>,
    pub omega: Option<f64>,
    pub eta: Option<f64>,
    pub n_c: usize,
    pub epsilon: f64,
    pub mode: Mode,
    /// Quadrant levels of the uniform mesh (`4^levels` leaves).
    pub uniform_levels: Option<usize>,
    /// `None` selects the problem's own formulation.
    pub formulation: Option<FormulationChoice>,
    pub seed_levels: Option<usize>,
    pub output_dir: PathBuf,
    /// `None` selects the mode default (on for adaptive runs).
    pub retain_for_update: Option<bool>,
    pub max_iterations: usize,
    pub max_depth: usize,
    pub threads: usize,
    /// Compare against a uniform solve with this many quadrant levels when
    /// the problem has no exact solution.
    pub reference_levels: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problem: String::new(),
            alpha: None,
            omega: None,
            eta: None,
            n_c: 16,
            epsilon: 1e-5,
            mode: Mode::Adaptive,
            uniform_levels: None,
            formulation: None,
            seed_levels: None,
            output_dir: PathBuf::from("out"),
            retain_for_update: None,
            max_iterations: 20,
            max_depth: hps::meshtree::InterpOptions::default().max_depth,
            threads: 1,
            reference_levels: None,
        }
    }
}

fn err(line: usize, field: &str, message: impl Into<String>) -> HpsError {
    HpsError::Config {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| err(line, key, format!("cannot parse `{v}`")))
}

impl RunConfig {
    /// Parse a configuration file and validate it.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg = Self::parse_unvalidated(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse without the final consistency checks, so that overrides can
    /// still be applied.
    pub fn parse_unvalidated(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| err(line, body, "expected `key = value`"))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(err(line, key, "duplicate key"));
            }
            cfg.set(key, value.trim(), line)?;
        }
        Ok(cfg)
    }

    /// Assign one key. `line` is 0 for command-line overrides.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        match key {
            "problem" => self.problem = value.to_string(),
            "alpha" => self.alpha = Some(num(line, key, value)?),
            "omega" => self.omega = Some(num(line, key, value)?),
            "eta" => self.eta = Some(num(line, key, value)?),
            "n_c" => self.n_c = num(line, key, value)?,
            "epsilon" => self.epsilon = num(line, key, value)?,
            "mode" => {
                self.mode = match value {
                    "adaptive" => Mode::Adaptive,
                    "uniform" => Mode::Uniform,
                    _ => return Err(err(line, key, format!("expected adaptive or uniform, got `{value}`"))),
                }
            }
            "uniform_levels" => self.uniform_levels = Some(num(line, key, value)?),
            "formulation" => {
                self.formulation = Some(match value {
                    "dtn" => FormulationChoice::Dtn,
                    "iti" => FormulationChoice::Iti,
                    _ => return Err(err(line, key, format!("expected dtn or iti, got `{value}`"))),
                })
            }
            "seed_levels" => self.seed_levels = Some(num(line, key, value)?),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "retain_for_update" => self.retain_for_update = Some(num(line, key, value)?),
            "max_iterations" => self.max_iterations = num(line, key, value)?,
            "max_depth" => self.max_depth = num(line, key, value)?,
            "threads" => self.threads = num(line, key, value)?,
            "reference_levels" => self.reference_levels = Some(num(line, key, value)?),
            _ => return Err(err(line, key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.problem.is_empty() {
            return Err(err(0, "problem", "missing required key"));
        }
        if !PROBLEM_NAMES.contains(&self.problem.as_str()) {
            return Err(err(
                0,
                "problem",
                format!("unknown problem `{}` (expected one of {})", self.problem, PROBLEM_NAMES.join(", ")),
            ));
        }
        if self.n_c < 4 {
            return Err(err(0, "n_c", format!("must be at least 4, got {}", self.n_c)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(err(0, "epsilon", format!("must be positive, got {}", self.epsilon)));
        }
        for (name, v) in [("alpha", self.alpha), ("omega", self.omega)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(err(0, name, format!("must be positive, got {v}")));
                }
            }
        }
        if let Some(eta) = self.eta {
            if eta == 0.0 || !eta.is_finite() {
                return Err(err(0, "eta", format!("must be nonzero, got {eta}")));
            }
        }
        if self.mode == Mode::Uniform && self.uniform_levels.is_none() {
            return Err(err(0, "uniform_levels", "required in uniform mode"));
        }
        if self.mode == Mode::Adaptive && self.retain_for_update == Some(false) {
            return Err(err(
                0,
                "retain_for_update",
                "adaptive runs update the solver in place and need retained operators",
            ));
        }
        if self.max_iterations == 0 {
            return Err(err(0, "max_iterations", "must be at least 1"));
        }
        let helmholtz = self.problem.starts_with("helmholtz");
        match (self.formulation, helmholtz) {
            (Some(FormulationChoice::Iti), false) => {
                return Err(err(0, "formulation", "iti needs a Helmholtz problem"));
            }
            (Some(FormulationChoice::Dtn), true) => {
                return Err(err(0, "formulation", "Helmholtz problems use impedance data and need iti"));
            }
            _ => {}
        }
        Ok(())
    }
}
