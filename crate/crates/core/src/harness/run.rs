use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, HyperSource};
use super::data::gen_dataset;
use crate::dynamics::{plain_row, GramOperator, ResidualAuditor, ResidualPairTrace, DEFAULT_GRAM_CAP};
use crate::error::{NagError, Result};
use crate::model::{forward, init_fc_gaussian, init_resnet, layer_gradients, Arch, Dataset, NetworkParams};
use crate::optim::{step, OptimizerKind, OptimizerState};
use crate::tensor::{spectral_norm, sym_eig_extremes, POWER_ITER_TOL};
use crate::theory::{fc_theory_bundle, min_width_advisory, min_width_advisory_res, res_theory_bundle, ResWidthInputs, TheoryBundle};

/// Failure probability used for the advisory width.
pub const ADVISORY_DELTA: f64 = 0.1;

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "NAGLAB_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    pub holds: bool,
    /// `max_t pair_norm(t) / envelope(t)`.
    pub worst_ratio: f64,
    pub worst_t: usize,
    pub first_violation: Option<usize>,
}

/// Compares each row's pair norm with its `theory_envelope` column.
pub fn envelope_check(trace: &ResidualPairTrace) -> Result<EnvelopeCheck> {
    let mut check = EnvelopeCheck { holds: true, worst_ratio: 0.0, worst_t: 0, first_violation: None };
    for row in &trace.rows {
        let env = row
            .theory_envelope
            .ok_or_else(|| NagError::Precondition("trace has no theory envelope attached".into()))?;
        let ratio = row.pair_norm / env;
        if ratio > check.worst_ratio || ratio.is_nan() {
            check.worst_ratio = ratio;
            check.worst_t = row.t;
        }
        if !(row.pair_norm <= env) {
            check.holds = false;
            check.first_violation.get_or_insert(row.t);
        }
    }
    Ok(check)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub eta: f64,
    pub beta: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub initial_pair_norm: f64,
    pub final_pair_norm: f64,
    pub envelope: EnvelopeCheck,
    /// `max_{t,l} ‖W^l_t − W^l_0‖_F`
    pub max_layer_drift: f64,
    pub drift_radius: f64,
    pub drift_within_radius: bool,
    pub max_identity_residual: Option<f64>,
    pub bundle: TheoryBundle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub summary: RunSummary,
    pub trace: ResidualPairTrace,
    pub final_params: NetworkParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub runs: Vec<RunResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    pub audit: bool,
    pub runs: Vec<RunSummary>,
}

impl ExperimentResult {
    /// The output directory is left out so that reruns into different
    /// directories produce identical summaries.
    pub fn summary(&self) -> ExperimentSummary {
        ExperimentSummary {
            config: ExperimentConfig { out_dir: None, ..self.config.clone() },
            audit: self.config.audit_enabled(),
            runs: self.runs.iter().map(|r| r.summary.clone()).collect(),
        }
    }

    pub fn run(&self, kind: OptimizerKind, seed: u64) -> Option<&RunResult> {
        self.runs.iter().find(|r| r.summary.optimizer == kind && r.summary.seed == seed)
    }
}

/// CSV file name for one (optimizer, seed) arm.
pub fn trace_file_name(kind: OptimizerKind, seed: u64) -> String {
    format!("{}_seed{seed}.csv", kind.label())
}

/// One CSV per run plus `summary.json`.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for run in &result.runs {
        let file = fs::File::create(dir.join(trace_file_name(run.summary.optimizer, run.summary.seed)))?;
        run.trace.write_csv(std::io::BufWriter::new(file))?;
    }
    let json = serde_json::to_string_pretty(&result.summary())?;
    fs::write(dir.join("summary.json"), json + "\n")?;
    Ok(())
}

/// Dataset and initial parameters of one seed.
pub fn setup(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, NetworkParams)> {
    let data = gen_dataset(cfg.data_seed.unwrap_or(seed), cfg.d_x, cfg.d_y, cfg.n, cfg.r, cfg.cond)?;
    let params = match cfg.arch {
        Arch::Fc => init_fc_gaussian(cfg.shape(), seed)?,
        Arch::ResNet => init_resnet(cfg.shape(), cfg.resnet_init(), seed)?,
    };
    Ok((data, params))
}

/// Theory bundle for a run starting at `params0` on `data`, with η and β
/// chosen per `cfg.hyperparameters`.
pub fn bundle_for(cfg: &ExperimentConfig, data: &Dataset, params0: &NetworkParams) -> Result<TheoryBundle> {
    let u0 = forward(params0, &data.x)?;
    let b0 = u0.try_sub(&data.y)?.frobenius_norm();
    let w_star_norm = spectral_norm(&data.w_star, POWER_ITER_TOL)?;
    let mut bundle = match cfg.arch {
        Arch::Fc => {
            let b = fc_theory_bundle(&data.x, cfg.depth, cfg.d_y, b0)?;
            let w = min_width_advisory(&b, data.rank, cfg.d_y, w_star_norm, ADVISORY_DELTA, 1.0)?;
            TheoryBundle { min_width: Some(w), ..b }
        }
        Arch::ResNet => {
            let io = params0
                .io()
                .ok_or_else(|| NagError::Contract("ResNet parameters without A/B".into()))?;
            let b = res_theory_bundle(&data.x, cfg.depth, cfg.width, cfg.alpha, cfg.gamma, &io.a, &io.b)?.with_b0(b0);
            let inp = ResWidthInputs {
                r: data.rank,
                n: cfg.n,
                d_x: cfg.d_x,
                d_y: cfg.d_y,
                w_star_norm,
                alpha: cfg.alpha,
                gamma: cfg.gamma,
                delta: ADVISORY_DELTA,
            };
            let w = min_width_advisory_res(&b, inp, 1.0)?;
            TheoryBundle { min_width: Some(w), ..b }
        }
    };
    bundle = match cfg.hyperparameters {
        HyperSource::Theorem => bundle,
        HyperSource::EmpiricalSpectrum => {
            let op = GramOperator::new(params0, &data.x)?;
            let (hi, lo) = match op.materialize(DEFAULT_GRAM_CAP) {
                Ok(h) => sym_eig_extremes(&h.h)?,
                Err(NagError::SizeGuard { .. }) => op.eig_extremes(POWER_ITER_TOL)?,
                Err(e) => return Err(e),
            };
            bundle.with_empirical_spectrum(lo, hi)?
        }
        HyperSource::Manual { eta, beta } => bundle.with_hyperparameters(eta, beta),
    };
    Ok(bundle)
}

/// Momentum actually used by an arm: zero for GD.
pub fn effective_beta(kind: OptimizerKind, bundle: &TheoryBundle) -> f64 {
    match kind {
        OptimizerKind::Gd => 0.0,
        _ => bundle.beta,
    }
}

/// Trains one (optimizer, seed) arm for `cfg.max_iters` steps.
pub fn run_single(cfg: &ExperimentConfig, seed: u64, kind: OptimizerKind) -> Result<RunResult> {
    let (data, params0) = setup(cfg, seed)?;
    let bundle = bundle_for(cfg, &data, &params0)?;
    let (x, y) = (&data.x, &data.y);
    let eta = bundle.eta;
    let beta = effective_beta(kind, &bundle);
    let grad_fn = |p: &NetworkParams| layer_gradients(p, x, y);
    let mut state = OptimizerState::new(kind, eta, beta, &params0)?.with_two_sequence_start(cfg.two_sequence_start);
    let mut params = params0.clone();

    // The identity holds for NAG and, with β = 0, for GD; heavy ball follows
    // a different recursion.
    let audited = cfg.audit_enabled() && kind != OptimizerKind::HeavyBall;
    let mut trace = if audited {
        let mut auditor = ResidualAuditor::new(x, y, eta, beta).with_tolerance(cfg.audit_tol);
        for _ in 0..cfg.max_iters {
            auditor.observe(&params)?;
            (params, state) = step(&params, &state, &grad_fn)?;
        }
        auditor.observe(&params)?;
        auditor.finish()
    } else {
        let mut rows = Vec::with_capacity(cfg.max_iters + 1);
        for t in 0..=cfg.max_iters {
            let row = plain_row(&params, &params0.hidden, x, y, t, rows.last().map(|r: &crate::dynamics::TraceRow| &r.xi))?;
            rows.push(row);
            if t < cfg.max_iters {
                (params, state) = step(&params, &state, &grad_fn)?;
            }
        }
        ResidualPairTrace { arch: cfg.arch, optimizer: None, seed: None, eta, beta, rows, bundle: None }
    };
    trace.arch = cfg.arch;
    trace.optimizer = Some(kind);
    trace.seed = Some(seed);
    trace.attach_bundle(bundle.clone());

    let first = &trace.rows[0];
    let last = trace.rows.last().expect("max_iters ≥ 1");
    let max_layer_drift = trace.rows.iter().map(|r| r.max_layer_drift()).fold(0.0, f64::max);
    let summary = RunSummary {
        optimizer: kind,
        seed,
        eta,
        beta,
        initial_loss: first.loss,
        final_loss: last.loss,
        initial_pair_norm: first.pair_norm,
        final_pair_norm: last.pair_norm,
        envelope: envelope_check(&trace)?,
        max_layer_drift,
        drift_radius: bundle.drift_radius,
        drift_within_radius: max_layer_drift <= bundle.drift_radius,
        max_identity_residual: trace.max_identity_residual(),
        bundle,
    };
    Ok(RunResult { summary, trace, final_params: params })
}

/// Worker count: `NAGLAB_THREADS` when set to a positive integer, otherwise
/// rayon's default.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

/// Runs every (seed, optimizer) arm. Arms run concurrently; each is
/// single-threaded, so results do not depend on scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let jobs: Vec<(u64, OptimizerKind)> =
        cfg.seeds.iter().flat_map(|&s| cfg.optimizers.iter().map(move |&k| (s, k))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| NagError::Contract(format!("thread pool: {e}")))?;
    let runs = pool.install(|| {
        jobs.par_iter()
            .map(|&(seed, kind)| run_single(cfg, seed, kind))
            .collect::<Result<Vec<_>>>()
    })?;
    let result = ExperimentResult { config: cfg.clone(), runs };
    if let Some(dir) = &cfg.out_dir {
        write_outputs(&result, dir)?;
    }
    Ok(result)
}
