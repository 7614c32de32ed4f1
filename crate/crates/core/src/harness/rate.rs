use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{run_experiment, ExperimentResult};
use crate::dynamics::ResidualPairTrace;
use crate::error::{NagError, Result};
use crate::optim::OptimizerKind;

/// Points below `FLOOR_REL` times the first value are treated as round-off.
pub const FLOOR_REL: f64 = 1e-12;
/// Leading fraction of the run never used in a fit.
pub const TRANSIENT_FRACTION: f64 = 0.1;
pub const DEFAULT_WINDOW_FRACTION: f64 = 0.5;
pub const MIN_FIT_POINTS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub rho_hat: f64,
    pub r_squared: f64,
    /// Inclusive `[t_lo, t_hi]`.
    pub window: (usize, usize),
    pub points: usize,
}

/// Least-squares slope of `log values[t]` against `t` over a window:
/// the last `window_fraction` of the points before the sequence first drops
/// below `FLOOR_REL · values[0]`, never reaching into the first 10%.
/// `rho_hat = exp(slope)`.
pub fn fit_rate_values(values: &[f64], window_fraction: f64) -> Result<RateFit> {
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(NagError::Precondition(format!("window fraction must lie in (0, 1], got {window_fraction}")));
    }
    let v0 = values.first().cloned().unwrap_or(0.0);
    let usable = values
        .iter()
        .position(|&v| !(v > FLOOR_REL * v0) || !v.is_finite())
        .unwrap_or(values.len());
    let skip = (TRANSIENT_FRACTION * values.len() as f64).ceil() as usize;
    let len = ((window_fraction * usable as f64).round() as usize).max(MIN_FIT_POINTS);
    let lo = usable.saturating_sub(len).max(skip);
    if usable < lo + MIN_FIT_POINTS {
        return Err(NagError::InsufficientPoints { needed: MIN_FIT_POINTS, got: usable.saturating_sub(lo) });
    }
    let pts: Vec<(f64, f64)> = (lo..usable).map(|t| (t as f64, values[t].ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
    let r_squared = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    Ok(RateFit { rho_hat: slope.exp(), r_squared, window: (lo, usable - 1), points: pts.len() })
}

/// [`fit_rate_values`] on the trace's pair norms.
pub fn fit_rate(trace: &ResidualPairTrace, window_fraction: f64) -> Result<RateFit> {
    fit_rate_values(&trace.pair_norms(), window_fraction)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmFit {
    pub optimizer: OptimizerKind,
    pub fit: RateFit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedComparison {
    pub seed: u64,
    pub fits: Vec<ArmFit>,
    /// `θ = 1 − 1/(2√κ)` of this seed's bundle.
    pub theta: f64,
    /// `1 − 1/κ`.
    pub gd_anchor: f64,
    /// `rho_hat(NAG) < rho_hat(GD)`; absent unless both arms ran.
    pub nag_faster: Option<bool>,
    pub nag_within_theta: Option<bool>,
    pub gd_above_anchor: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config: ExperimentConfig,
    pub window_fraction: f64,
    pub seeds: Vec<SeedComparison>,
    pub nag_faster_count: usize,
    pub compared: usize,
}

/// Slack on the two theory anchors.
pub const ANCHOR_SLACK: f64 = 0.01;

/// Fits a rate to every arm of a finished experiment and orders NAG
/// against GD per seed.
pub fn compare_result(result: &ExperimentResult, window_fraction: f64) -> Result<ComparisonReport> {
    let cfg = &result.config;
    if cfg.optimizers.len() < 2 {
        return Err(NagError::Precondition("comparison needs at least two optimizers".into()));
    }
    let nag = cfg.optimizers.iter().cloned().find(|k| k.is_nag());
    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let mut fits = Vec::new();
        let mut bundle = None;
        for &kind in &cfg.optimizers {
            let run = result
                .run(kind, seed)
                .ok_or_else(|| NagError::Contract(format!("missing run {kind:?}/{seed}")))?;
            bundle.get_or_insert_with(|| run.summary.bundle.clone());
            fits.push(ArmFit { optimizer: kind, fit: fit_rate(&run.trace, window_fraction)? });
        }
        let bundle = bundle.expect("at least one optimizer");
        let rate = |k: OptimizerKind| fits.iter().find(|f| f.optimizer == k).map(|f| f.fit.rho_hat);
        let nag_rate = nag.and_then(rate);
        let gd_rate = rate(OptimizerKind::Gd);
        let gd_anchor = 1.0 - 1.0 / bundle.kappa;
        seeds.push(SeedComparison {
            seed,
            theta: bundle.theta,
            gd_anchor,
            nag_faster: nag_rate.zip(gd_rate).map(|(n, g)| n < g),
            nag_within_theta: nag_rate.map(|n| n <= bundle.theta + ANCHOR_SLACK),
            gd_above_anchor: gd_rate.map(|g| g >= gd_anchor - ANCHOR_SLACK),
            fits,
        });
    }
    let compared = seeds.iter().filter(|s| s.nag_faster.is_some()).count();
    let nag_faster_count = seeds.iter().filter(|s| s.nag_faster == Some(true)).count();
    Ok(ComparisonReport { config: cfg.clone(), window_fraction, seeds, nag_faster_count, compared })
}

pub fn compare(cfg: &ExperimentConfig) -> Result<ComparisonReport> {
    if cfg.optimizers.len() < 2 {
        return Err(NagError::Precondition("comparison needs at least two optimizers".into()));
    }
    compare_result(&run_experiment(cfg)?, DEFAULT_WINDOW_FRACTION)
}
