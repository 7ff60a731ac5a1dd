//! Run configuration: a flat `key = value` file whose keys are the field
//! names below, with command-line overrides applied on top.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::simenv::GateSupervisorConfig;
use crate::toytrain::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct RunConfig {
    pub G: usize,
    pub T_max: usize,
    pub K: usize,
    pub d_L: f64,
    pub tau_H: Option<f64>,
    pub epsilon: f64,
    pub seed: u64,
    pub N_groups: usize,
    pub fp_fraction: f64,
    pub learning_rate: f64,
    pub rollout_temperature: f64,
    pub eval_temperature: f64,
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            G: 8,
            T_max: 30,
            K: 10,
            d_L: 0.12,
            tau_H: None,
            epsilon: crate::grpo::DEFAULT_EPSILON,
            seed: 42,
            N_groups: 100,
            fp_fraction: 0.015,
            learning_rate: 0.5,
            rollout_temperature: 0.7,
            eval_temperature: 0.0,
            seeds: vec![7, 13, 23, 42],
        }
    }
}

fn bad(field: &str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig { field: field.to_string(), reason: reason.into() }
}

fn parse<T: std::str::FromStr>(field: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| bad(field, format!("cannot parse {value:?}")))
}

fn parse_list<T: std::str::FromStr>(field: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(field, s)).collect()
}

impl RunConfig {
    /// Sets one field from its textual value. Range checks happen in
    /// `validate`, after all sources are merged.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "G" => self.G = parse(key, value)?,
            "T_max" => self.T_max = parse(key, value)?,
            "K" => self.K = parse(key, value)?,
            "d_L" => self.d_L = parse(key, value)?,
            "tau_H" => {
                let v = value.trim();
                self.tau_H = if v.is_empty() || v == "none" { None } else { Some(parse(key, v)?) };
            }
            "epsilon" => self.epsilon = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "N_groups" => self.N_groups = parse(key, value)?,
            "fp_fraction" => self.fp_fraction = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "rollout_temperature" => self.rollout_temperature = parse(key, value)?,
            "eval_temperature" => self.eval_temperature = parse(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            _ => return Err(bad(key, "unknown field")),
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.merge_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn merge_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(&format!("line {}", lineno + 1), format!("expected key = value, got {line:?}")))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.G < 2 {
            return Err(bad("G", format!("{} < 2", self.G)));
        }
        if self.T_max < 2 {
            return Err(bad("T_max", format!("{} < 2", self.T_max)));
        }
        if !(1 <= self.K && self.K < self.T_max) {
            return Err(bad("K", format!("need 1 <= K < T_max, got K = {} with T_max = {}", self.K, self.T_max)));
        }
        if !(0.0..=1.0).contains(&self.d_L) {
            return Err(bad("d_L", format!("{} not in [0, 1]", self.d_L)));
        }
        if let Some(t) = self.tau_H {
            if !(0.0..=1.0).contains(&t) {
                return Err(bad("tau_H", format!("{t} not in [0, 1]")));
            }
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(bad("epsilon", format!("{} must be finite and >= 0", self.epsilon)));
        }
        if self.N_groups == 0 {
            return Err(bad("N_groups", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.fp_fraction) {
            return Err(bad("fp_fraction", format!("{} not in [0, 1]", self.fp_fraction)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(bad("learning_rate", format!("{} must be positive", self.learning_rate)));
        }
        for (name, t) in [("rollout_temperature", self.rollout_temperature), ("eval_temperature", self.eval_temperature)] {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(bad(name, format!("{t} must be >= 0")));
            }
        }
        if self.seeds.is_empty() {
            return Err(bad("seeds", "empty list"));
        }
        Ok(())
    }

    /// sha256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn gate(&self) -> GateSupervisorConfig {
        GateSupervisorConfig { enabled: true, k: self.K, d_l: self.d_L, tau_h: self.tau_H }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            g: self.G,
            t_max: self.T_max,
            learning_rate: self.learning_rate,
            epsilon: self.epsilon,
            rollout_temperature: self.rollout_temperature,
            eval_temperature: self.eval_temperature,
            gate: self.gate(),
            ..TrainConfig::default()
        }
    }
}

/// Reads a config file; missing keys keep their defaults.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    load_with_overrides(Some(path), &[])
}

/// File values first, then `overrides` in order; validated once at the end.
pub fn load_with_overrides(path: Option<&Path>, overrides: &[(&str, String)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = path {
        let text = std::fs::read_to_string(p)?;
        cfg.merge_text(&text)?;
    }
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
