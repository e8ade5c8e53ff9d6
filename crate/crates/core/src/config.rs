//! Flat key = value run configuration.
//!
//! The file format is one `key = value` pair per line; blank lines and lines
//! starting with `#` are ignored. Unknown keys are rejected. Every setting
//! has a default, and the resolved values (defaults included) are exposed for
//! provenance reporting.

use crate::error::{Error, Result};
use crate::expfam::Family;
use crate::iwls::ScoringOptions;
use crate::sampler::{ChainConfig, ModelSettings};
use crate::synth::Shape;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub enum Beta0Spec {
    /// Derive the prior direction from the data at initialization.
    Auto,
    Given(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub family: Family,
    pub input: Option<String>,
    pub out: Option<String>,
    pub outcome_col: String,
    pub arm_col: String,
    /// Empty means "all columns except outcome and arm".
    pub main_cols: Vec<String>,
    /// Empty means "same as main_cols".
    pub index_cols: Vec<String>,
    pub pi_override: Option<(f64, f64)>,
    pub n_basis: usize,
    pub knot_padding: f64,
    pub rho_grid_min: f64,
    pub rho_grid_max: f64,
    pub rho_grid_points: usize,
    pub scoring_tol: f64,
    pub scoring_max_iter: usize,
    pub lambda_prior: f64,
    pub lambda_prop: f64,
    pub beta0: Beta0Spec,
    pub m_prior_sd: f64,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub n_chains: usize,
    pub seed: u64,
    // synthetic-data keys
    pub synth_n: usize,
    pub synth_p: usize,
    pub synth_shape: Shape,
    pub synth_amplitude: f64,
    pub synth_m_star: Option<Vec<f64>>,
    pub synth_beta_star: Option<Vec<f64>>,
    pub pi1: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            family: Family::bernoulli(),
            input: None,
            out: None,
            outcome_col: "y".into(),
            arm_col: "a".into(),
            main_cols: Vec::new(),
            index_cols: Vec::new(),
            pi_override: None,
            n_basis: 8,
            knot_padding: 0.05,
            rho_grid_min: 1e-4,
            rho_grid_max: 1e4,
            rho_grid_points: 25,
            scoring_tol: 1e-8,
            scoring_max_iter: 50,
            lambda_prior: 300.0,
            lambda_prop: 300.0,
            beta0: Beta0Spec::Auto,
            m_prior_sd: 10.0,
            n_iter: 5000,
            burn_in: 2000,
            thin: 2,
            n_chains: 4,
            seed: 1,
            synth_n: 500,
            synth_p: 5,
            synth_shape: Shape::Sine,
            synth_amplitude: 2.0,
            synth_m_star: None,
            synth_beta_star: None,
            pi1: 0.5,
        }
    }
}

const KNOWN_KEYS: &[&str] = &[
    "family",
    "input",
    "out",
    "outcome_col",
    "arm_col",
    "main_cols",
    "index_cols",
    "pi_override",
    "n_basis",
    "knot_padding",
    "rho_grid_min",
    "rho_grid_max",
    "rho_grid_points",
    "scoring_tol",
    "scoring_max_iter",
    "lambda_prior",
    "lambda_prop",
    "beta0",
    "m_prior_sd",
    "n_iter",
    "burn_in",
    "thin",
    "n_chains",
    "seed",
    "synth_n",
    "synth_p",
    "synth_shape",
    "synth_amplitude",
    "synth_m_star",
    "synth_beta_star",
    "pi1",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("could not parse `{key} = {value}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number in `{key} = {value}`")))
        })
        .collect()
}

fn parse_names(value: &str) -> Vec<String> {
    value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(Error::Config(format!("unknown config key `{key}`")));
            }
            match key {
                "family" => cfg.family = Family::from_name(value)?,
                "input" => cfg.input = Some(value.to_string()),
                "out" => cfg.out = Some(value.to_string()),
                "outcome_col" => cfg.outcome_col = value.to_string(),
                "arm_col" => cfg.arm_col = value.to_string(),
                "main_cols" => cfg.main_cols = parse_names(value),
                "index_cols" => cfg.index_cols = parse_names(value),
                "pi_override" => {
                    let v = parse_list(key, value)?;
                    if v.len() != 2 {
                        return Err(Error::Config("pi_override needs two values".into()));
                    }
                    cfg.pi_override = Some((v[0], v[1]));
                }
                "n_basis" => cfg.n_basis = parse_num(key, value)?,
                "knot_padding" => cfg.knot_padding = parse_num(key, value)?,
                "rho_grid_min" => cfg.rho_grid_min = parse_num(key, value)?,
                "rho_grid_max" => cfg.rho_grid_max = parse_num(key, value)?,
                "rho_grid_points" => cfg.rho_grid_points = parse_num(key, value)?,
                "scoring_tol" => cfg.scoring_tol = parse_num(key, value)?,
                "scoring_max_iter" => cfg.scoring_max_iter = parse_num(key, value)?,
                "lambda_prior" => cfg.lambda_prior = parse_num(key, value)?,
                "lambda_prop" => cfg.lambda_prop = parse_num(key, value)?,
                "beta0" => {
                    cfg.beta0 = if value == "auto" {
                        Beta0Spec::Auto
                    } else {
                        Beta0Spec::Given(parse_list(key, value)?)
                    }
                }
                "m_prior_sd" => cfg.m_prior_sd = parse_num(key, value)?,
                "n_iter" => cfg.n_iter = parse_num(key, value)?,
                "burn_in" => cfg.burn_in = parse_num(key, value)?,
                "thin" => cfg.thin = parse_num(key, value)?,
                "n_chains" => cfg.n_chains = parse_num(key, value)?,
                "seed" => cfg.seed = parse_num(key, value)?,
                "synth_n" => cfg.synth_n = parse_num(key, value)?,
                "synth_p" => cfg.synth_p = parse_num(key, value)?,
                "synth_shape" => cfg.synth_shape = Shape::from_name(value)?,
                "synth_amplitude" => cfg.synth_amplitude = parse_num(key, value)?,
                "synth_m_star" => cfg.synth_m_star = Some(parse_list(key, value)?),
                "synth_beta_star" => cfg.synth_beta_star = Some(parse_list(key, value)?),
                "pi1" => cfg.pi1 = parse_num(key, value)?,
                _ => unreachable!(),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.n_basis < 4 {
            return Err(Error::Config("n_basis must be at least 4".into()));
        }
        if !(self.pi1 > 0.0 && self.pi1 < 1.0) {
            return Err(Error::Config("pi1 must lie in (0, 1)".into()));
        }
        if self.rho_grid_min <= 0.0 || self.rho_grid_max < self.rho_grid_min {
            return Err(Error::Config("rho grid bounds must satisfy 0 < min <= max".into()));
        }
        if self.rho_grid_points == 0 {
            return Err(Error::Config("rho_grid_points must be positive".into()));
        }
        self.chain_config().validate()
    }

    pub fn chain_config(&self) -> ChainConfig {
        ChainConfig {
            n_iter: self.n_iter,
            burn_in: self.burn_in,
            thin: self.thin,
            seed: self.seed,
            n_chains: self.n_chains,
        }
    }

    pub fn model_settings(&self) -> ModelSettings {
        ModelSettings {
            n_basis: self.n_basis,
            knot_padding: self.knot_padding,
            scoring: ScoringOptions { tol: self.scoring_tol, max_iter: self.scoring_max_iter },
            rho_grid_min: self.rho_grid_min,
            rho_grid_max: self.rho_grid_max,
            rho_grid_points: self.rho_grid_points,
        }
    }

    /// Every setting, defaults included, as strings for provenance output.
    pub fn provenance(&self) -> BTreeMap<String, String> {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut map = BTreeMap::new();
        map.insert("family".into(), self.family.kind().name().to_string());
        map.insert("input".into(), self.input.clone().unwrap_or_default());
        map.insert("out".into(), self.out.clone().unwrap_or_default());
        map.insert("outcome_col".into(), self.outcome_col.clone());
        map.insert("arm_col".into(), self.arm_col.clone());
        map.insert("main_cols".into(), self.main_cols.join(","));
        map.insert("index_cols".into(), self.index_cols.join(","));
        map.insert(
            "pi_override".into(),
            self.pi_override.map(|(a, b)| format!("{a},{b}")).unwrap_or_default(),
        );
        map.insert("n_basis".into(), self.n_basis.to_string());
        map.insert("knot_padding".into(), self.knot_padding.to_string());
        map.insert("rho_grid_min".into(), self.rho_grid_min.to_string());
        map.insert("rho_grid_max".into(), self.rho_grid_max.to_string());
        map.insert("rho_grid_points".into(), self.rho_grid_points.to_string());
        map.insert("scoring_tol".into(), self.scoring_tol.to_string());
        map.insert("scoring_max_iter".into(), self.scoring_max_iter.to_string());
        map.insert("lambda_prior".into(), self.lambda_prior.to_string());
        map.insert("lambda_prop".into(), self.lambda_prop.to_string());
        map.insert(
            "beta0".into(),
            match &self.beta0 {
                Beta0Spec::Auto => "auto".to_string(),
                Beta0Spec::Given(v) => join(v),
            },
        );
        map.insert("m_prior_sd".into(), self.m_prior_sd.to_string());
        map.insert("n_iter".into(), self.n_iter.to_string());
        map.insert("burn_in".into(), self.burn_in.to_string());
        map.insert("thin".into(), self.thin.to_string());
        map.insert("n_chains".into(), self.n_chains.to_string());
        map.insert("seed".into(), self.seed.to_string());
        map.insert("synth_n".into(), self.synth_n.to_string());
        map.insert("synth_p".into(), self.synth_p.to_string());
        map.insert(
            "synth_shape".into(),
            match self.synth_shape {
                Shape::Zero => "zero",
                Shape::Linear => "linear",
                Shape::Quadratic => "quadratic",
                Shape::Sine => "sine",
            }
            .to_string(),
        );
        map.insert("synth_amplitude".into(), self.synth_amplitude.to_string());
        map.insert(
            "synth_m_star".into(),
            self.synth_m_star.as_deref().map(join).unwrap_or_default(),
        );
        map.insert(
            "synth_beta_star".into(),
            self.synth_beta_star.as_deref().map(join).unwrap_or_default(),
        );
        map.insert("pi1".into(), self.pi1.to_string());
        map
    }
}
