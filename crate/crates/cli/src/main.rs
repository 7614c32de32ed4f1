use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use naglab::dynamics::{power_bound_check, random_spd};
use naglab::harness::{compare, gen_dataset, run_experiment, write_outputs, ExperimentConfig};
use naglab::tensor::{sym_eig_extremes, Matrix};
use naglab::theory::{theorem_beta, validate_init_spectra_fc, validate_init_spectra_res};
use naglab::{Arch, NagError, NetworkShape, ResNetInitConfig};

/// Minimum pass rate for `init-check` and share of seeds for `compare`.
const REQUIRED_RATE: f64 = 0.95;
const REQUIRED_ORDERING: f64 = 0.9;

#[derive(Parser)]
#[command(name = "naglab", version, about = "NAG on deep linear networks: training, audits and spectral checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset with a controlled spectrum and write it as JSON.
    GenData {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        dx: usize,
        #[arg(long)]
        dy: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        rank: usize,
        #[arg(long, default_value_t = 1.0)]
        cond: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment config and write one CSV per run plus summary.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run a config with the residual-dynamics audit forced on.
    Audit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = naglab::dynamics::AUDIT_TOL)]
        tol: f64,
    },
    /// Check the companion-matrix power bound on random SPD matrices.
    SpectralBound {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        lmin: f64,
        #[arg(long)]
        lmax: f64,
        #[arg(long, default_value_t = 300)]
        kmax: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Pass rate of the initialization spectrum bounds over fresh seeds.
    InitCheck {
        #[arg(long)]
        arch: Arch,
        #[arg(long)]
        m: usize,
        #[arg(long = "L")]
        depth: usize,
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        /// Constant in the middle-product bound (FC).
        #[arg(long, default_value_t = 2.0)]
        c: f64,
    },
    /// Fit rates per optimizer and order NAG against GD.
    Compare {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Whether a run passed its checks.
enum Outcome {
    Pass,
    Fail,
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("reading config {}", path.display()))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::GenData { seed, dx, dy, n, rank, cond, out } => {
            let data = gen_dataset(seed, dx, dy, n, rank, cond)?;
            std::fs::write(&out, serde_json::to_string(&data)? + "\n")
                .with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} (d_x={dx}, d_y={dy}, n={n}, rank={rank}, cond={cond})", out.display());
            Ok(Outcome::Pass)
        }
        Command::Train { config, out_dir } => {
            let cfg = load(&config)?;
            let result = run_experiment(&ExperimentConfig { out_dir: None, ..cfg })?;
            write_outputs(&result, &out_dir)?;
            for r in &result.runs {
                let s = &r.summary;
                println!(
                    "{} seed {}: loss {:e} -> {:e}, envelope {}",
                    s.optimizer.label(),
                    s.seed,
                    s.initial_loss,
                    s.final_loss,
                    if s.envelope.holds { "holds" } else { "broken" }
                );
            }
            println!("outputs in {}", out_dir.display());
            Ok(Outcome::Pass)
        }
        Command::Audit { config, tol } => {
            let mut cfg = load(&config)?;
            cfg.audit = Some(true);
            cfg.audit_tol = tol;
            cfg.out_dir = None;
            match run_experiment(&cfg) {
                Ok(result) => {
                    for r in &result.runs {
                        let worst = r.summary.max_identity_residual.map_or("n/a".to_string(), |v| format!("{v:e}"));
                        println!("{} seed {}: max identity residual {worst}", r.summary.optimizer.label(), r.summary.seed);
                    }
                    Ok(Outcome::Pass)
                }
                Err(e @ NagError::AuditFailure { .. }) => {
                    println!("audit failed: {e}");
                    Ok(Outcome::Fail)
                }
                Err(e) => Err(e.into()),
            }
        }
        Command::SpectralBound { dim, lmin, lmax, kmax, trials, seed } => {
            let h = random_spd(dim, lmin, lmax, seed)?;
            let (hi, lo) = sym_eig_extremes(&h)?;
            let report = power_bound_check(&h, 1.0 / (2.0 * hi), theorem_beta(hi / lo), kmax, trials, seed)?;
            print_json(&report)?;
            Ok(if report.passed { Outcome::Pass } else { Outcome::Fail })
        }
        Command::InitCheck { arch, m, depth, seeds, c } => {
            let seeds: Vec<u64> = (0..seeds).collect();
            let report = match arch {
                Arch::Fc => validate_init_spectra_fc(NetworkShape::fc(depth, m, 3, 1), &Matrix::identity(3), &seeds, c)?,
                Arch::ResNet => validate_init_spectra_res(
                    NetworkShape::resnet(depth, m, 2, 1),
                    ResNetInitConfig::default(),
                    &Matrix::identity(2),
                    &seeds,
                )?,
            };
            println!("{arch} m={m} L={depth}: {}/{} seeds pass ({:.3})", report.passed, report.seeds, report.pass_rate);
            for r in report.results.iter().filter(|r| !r.passed) {
                println!("  seed {}: {}", r.seed, r.violations.join("; "));
            }
            Ok(if report.pass_rate >= REQUIRED_RATE { Outcome::Pass } else { Outcome::Fail })
        }
        Command::Compare { config } => {
            let cfg = load(&config)?;
            let report = compare(&ExperimentConfig { out_dir: None, ..cfg })?;
            print_json(&report)?;
            let ok = report.compared > 0 && report.nag_faster_count as f64 >= REQUIRED_ORDERING * report.compared as f64;
            Ok(if ok { Outcome::Pass } else { Outcome::Fail })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            // Numerical failures are check failures; everything else is a
            // problem with the invocation or its inputs.
            let check_failure = matches!(
                err.downcast_ref::<NagError>(),
                Some(NagError::Divergence { .. } | NagError::AuditFailure { .. } | NagError::NoConvergence { .. })
            );
            ExitCode::from(if check_failure { 1 } else { 2 })
        }
    }
}
