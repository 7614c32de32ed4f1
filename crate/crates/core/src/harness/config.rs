use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{AUDIT_TOL, DEFAULT_GRAM_CAP};
use crate::error::{NagError, Result};
use crate::model::{Arch, NetworkShape, ResNetInitConfig};
use crate::optim::{OptimizerKind, TwoSequenceStart};

/// Where η and β come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HyperSource {
    /// The theorem's formula spectrum.
    #[default]
    Theorem,
    /// Extremes of the measured `H_0` in place of the formula spectrum.
    EmpiricalSpectrum,
    Manual { eta: f64, beta: f64 },
}

/// Audits are skipped by default above this width.
pub const AUDIT_DEFAULT_MAX_WIDTH: usize = 512;

fn default_alpha() -> f64 {
    1.0
}

fn default_audit_tol() -> f64 {
    AUDIT_TOL
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub arch: Arch,
    #[serde(rename = "L")]
    pub depth: usize,
    #[serde(rename = "m")]
    pub width: usize,
    pub d_x: usize,
    pub d_y: usize,
    pub n: usize,
    pub r: usize,
    pub cond: f64,
    pub optimizers: Vec<OptimizerKind>,
    pub max_iters: usize,
    pub seeds: Vec<u64>,
    /// Dataset seed shared by all runs; each run uses its own seed when
    /// absent.
    #[serde(default)]
    pub data_seed: Option<u64>,
    #[serde(default)]
    pub hyperparameters: HyperSource,
    /// Defaults to on for widths up to [`AUDIT_DEFAULT_MAX_WIDTH`].
    #[serde(default)]
    pub audit: Option<bool>,
    /// Relative tolerance of the audit identity.
    #[serde(default = "default_audit_tol")]
    pub audit_tol: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_alpha")]
    pub gamma: f64,
    #[serde(default)]
    pub two_sequence_start: TwoSequenceStart,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Theorem hyperparameters, audit left at its default, no output.
    pub fn new(arch: Arch, depth: usize, width: usize, dims: (usize, usize, usize, usize), cond: f64) -> Self {
        let (d_x, d_y, n, r) = dims;
        ExperimentConfig {
            arch,
            depth,
            width,
            d_x,
            d_y,
            n,
            r,
            cond,
            optimizers: vec![OptimizerKind::NagMomentum],
            max_iters: 100,
            seeds: vec![0],
            data_seed: None,
            hyperparameters: HyperSource::Theorem,
            audit: None,
            audit_tol: AUDIT_TOL,
            alpha: 1.0,
            gamma: 1.0,
            two_sequence_start: TwoSequenceStart::Consistent,
            out_dir: None,
        }
    }

    pub fn shape(&self) -> NetworkShape {
        match self.arch {
            Arch::Fc => NetworkShape::fc(self.depth, self.width, self.d_x, self.d_y),
            Arch::ResNet => NetworkShape::resnet(self.depth, self.width, self.d_x, self.d_y),
        }
    }

    pub fn resnet_init(&self) -> ResNetInitConfig {
        ResNetInitConfig { alpha: self.alpha, gamma: self.gamma }
    }

    pub fn audit_enabled(&self) -> bool {
        self.audit.unwrap_or(self.width <= AUDIT_DEFAULT_MAX_WIDTH && self.d_y * self.n <= DEFAULT_GRAM_CAP)
    }

    pub fn validate(&self) -> Result<()> {
        self.shape().validate()?;
        if self.arch == Arch::ResNet {
            self.resnet_init().validate()?;
        }
        if self.n == 0 || self.r == 0 || self.r > self.d_x.min(self.n) {
            return Err(NagError::Precondition(format!(
                "need 1 ≤ r ≤ min(d_x, n), got r = {}, d_x = {}, n = {}",
                self.r, self.d_x, self.n
            )));
        }
        if !(self.cond >= 1.0) {
            return Err(NagError::Precondition(format!("cond must be ≥ 1, got {}", self.cond)));
        }
        if self.max_iters < 2 {
            return Err(NagError::Precondition("max_iters must be at least 2".into()));
        }
        if self.optimizers.is_empty() || self.seeds.is_empty() {
            return Err(NagError::Precondition("need at least one optimizer and one seed".into()));
        }
        if !(self.audit_tol > 0.0) {
            return Err(NagError::Precondition(format!("audit tolerance must be positive, got {}", self.audit_tol)));
        }
        if let HyperSource::Manual { eta, beta } = self.hyperparameters {
            if !(eta > 0.0) || !(0.0..=1.0).contains(&beta) {
                return Err(NagError::Precondition(format!("manual hyperparameters out of range: η = {eta}, β = {beta}")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_json() {
        let cfg = ExperimentConfig::from_json(
            r#"{"arch":"FC","L":2,"m":16,"d_x":3,"d_y":1,"n":3,"r":3,"cond":2.0,
                "optimizers":["GD","NAG_MOMENTUM"],"max_iters":10,"seeds":[1,2],
                "hyperparameters":{"source":"MANUAL","eta":0.01,"beta":0.5}}"#,
        )
        .unwrap();
        assert_eq!(cfg.hyperparameters, HyperSource::Manual { eta: 0.01, beta: 0.5 });
        assert!(cfg.audit_enabled());
        assert_eq!(cfg.alpha, 1.0);
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_rank_and_short_runs() {
        let mut cfg = ExperimentConfig::new(Arch::Fc, 2, 8, (2, 1, 3, 3), 2.0);
        assert!(cfg.validate().is_err());
        cfg.r = 2;
        cfg.validate().unwrap();
        cfg.max_iters = 1;
        assert!(cfg.validate().is_err());
    }
}
