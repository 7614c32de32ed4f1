//! Closed-form hyperparameters, rates and radii for NAG on deep linear
//! networks, plus statistical validators for the initialization spectra and
//! the initial loss scale.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::GramOperator;
use crate::error::{NagError, Result};
use crate::model::{forward, init_fc_gaussian, init_resnet, loss, Arch, NetworkParams, NetworkShape, ResNetInitConfig};
use crate::tensor::{chain_product, frobenius_norm, matmul, singular_values, spectral_norm, sym_eig_extremes, Matrix, POWER_ITER_TOL};

/// Singular values below `RANK_TOL · σ_max` count as zero.
pub const RANK_TOL: f64 = 1e-9;

/// Where the bundle's spectrum and step sizes came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BundleSource {
    Theorem,
    EmpiricalSpectrum,
    Manual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryBundle {
    pub arch: Arch,
    pub depth: usize,
    pub d_y: usize,
    pub sigma_min_x: f64,
    pub sigma_max_x: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub kappa: f64,
    pub eta: f64,
    pub beta: f64,
    /// `1 − 1/(2√κ)`
    pub theta: f64,
    /// `1 − 2/(3√κ)`
    pub rho: f64,
    /// `12√κ`, the cap on the power-bound constant.
    pub c_cap: f64,
    /// `24√κ`
    pub envelope_coef: f64,
    pub drift_radius: f64,
    pub b0: Option<f64>,
    /// `‖A‖‖B‖‖X‖` (ResNet only).
    pub a: Option<f64>,
    /// `‖A‖²‖B‖²‖X‖² / (α²γ²m²σ²_max(X))` (ResNet only): how far the
    /// step-size normalization is from the spectrum normalization.
    pub eta_scale_ratio: Option<f64>,
    pub min_width: Option<f64>,
    pub source: BundleSource,
}

/// `β = (3√κ − 2)/(3√κ + 2)`.
pub fn theorem_beta(kappa: f64) -> f64 {
    let s = kappa.sqrt();
    (3.0 * s - 2.0) / (3.0 * s + 2.0)
}

/// Nonzero singular values of `x` (relative threshold [`RANK_TOL`]),
/// descending.
pub fn nonzero_spectrum(x: &Matrix) -> Result<Vec<f64>> {
    let sv = singular_values(x)?;
    let top = sv.first().cloned().unwrap_or(0.0);
    let kept: Vec<f64> = sv.into_iter().filter(|&s| top > 0.0 && s > RANK_TOL * top).collect();
    if kept.is_empty() {
        return Err(NagError::InfeasibleData("X has rank zero".into()));
    }
    Ok(kept)
}

fn x_extremes(x: &Matrix) -> Result<(f64, f64)> {
    let sv = nonzero_spectrum(x)?;
    Ok((sv[0], sv[sv.len() - 1]))
}

impl TheoryBundle {
    /// `envelope_coef · θ^t · p0`.
    pub fn envelope(&self, t: usize, p0: f64) -> f64 {
        self.envelope_coef * self.theta.powi(t as i32) * p0
    }

    fn set_rates(&mut self) {
        let s = self.kappa.sqrt();
        self.theta = 1.0 - 1.0 / (2.0 * s);
        self.rho = 1.0 - 2.0 / (3.0 * s);
        self.c_cap = 12.0 * s;
        self.envelope_coef = 24.0 * s;
    }

    fn set_drift(&mut self) {
        self.drift_radius = match self.arch {
            Arch::Fc => match self.b0 {
                Some(b0) => fc_drift_radius(self.sigma_max_x, self.sigma_min_x, b0, self.depth, self.d_y, self.kappa),
                None => f64::NAN,
            },
            Arch::ResNet => 1.0 / (2000.0 * self.depth as f64 * self.kappa),
        };
    }

    /// Replaces `λ_min`, `λ_max` by measured gram extremes and re-derives
    /// `κ`, `η = 1/(2λ_max)`, `β`, the rates and the drift radius.
    pub fn with_empirical_spectrum(mut self, lambda_min: f64, lambda_max: f64) -> Result<Self> {
        if !(lambda_min > 0.0 && lambda_max >= lambda_min) {
            return Err(NagError::Precondition(format!(
                "empirical spectrum must satisfy 0 < λ_min ≤ λ_max, got [{lambda_min:e}, {lambda_max:e}]"
            )));
        }
        self.lambda_min = lambda_min;
        self.lambda_max = lambda_max;
        self.kappa = lambda_max / lambda_min;
        self.eta = 1.0 / (2.0 * lambda_max);
        self.beta = theorem_beta(self.kappa);
        self.set_rates();
        self.set_drift();
        self.source = BundleSource::EmpiricalSpectrum;
        Ok(self)
    }

    /// Overrides the step size and momentum; the spectrum-derived fields
    /// stay as they were.
    pub fn with_hyperparameters(mut self, eta: f64, beta: f64) -> Self {
        self.eta = eta;
        self.beta = beta;
        self.source = BundleSource::Manual;
        self
    }

    pub fn with_b0(mut self, b0: f64) -> Self {
        self.b0 = Some(b0);
        self.set_drift();
        self
    }
}

/// `R^{lin} = 792 ‖X‖ B_0 √(d_y κ) / (L σ²_min(X))`.
pub fn fc_drift_radius(sigma_max: f64, sigma_min: f64, b0: f64, depth: usize, d_y: usize, kappa: f64) -> f64 {
    792.0 * sigma_max * b0 * (d_y as f64 * kappa).sqrt() / (depth as f64 * sigma_min * sigma_min)
}

/// FC bundle: `λ_min = 0.8⁴ L σ²_min(X)/d_y`, `λ_max = 1.2⁴ L σ²_max(X)/d_y`,
/// `η = 1/(2λ_max)`, `β = (3√κ−2)/(3√κ+2)`.
pub fn fc_theory_bundle(x: &Matrix, depth: usize, d_y: usize, b0_measured: f64) -> Result<TheoryBundle> {
    if depth == 0 || d_y == 0 {
        return Err(NagError::Precondition("depth and d_y must be positive".into()));
    }
    let (smax, smin) = x_extremes(x)?;
    let l = depth as f64;
    let lambda_min = 0.8f64.powi(4) * l * smin * smin / d_y as f64;
    let lambda_max = 1.2f64.powi(4) * l * smax * smax / d_y as f64;
    let kappa = lambda_max / lambda_min;
    let mut b = TheoryBundle {
        arch: Arch::Fc,
        depth,
        d_y,
        sigma_min_x: smin,
        sigma_max_x: smax,
        lambda_min,
        lambda_max,
        kappa,
        eta: 1.0 / (2.0 * lambda_max),
        beta: theorem_beta(kappa),
        theta: 0.0,
        rho: 0.0,
        c_cap: 0.0,
        envelope_coef: 0.0,
        drift_radius: 0.0,
        b0: Some(b0_measured),
        a: None,
        eta_scale_ratio: None,
        min_width: None,
        source: BundleSource::Theorem,
    };
    b.set_rates();
    b.set_drift();
    Ok(b)
}

/// ResNet bundle: `λ_min = 0.9⁴ L α²γ² m² σ²_min(X)`,
/// `λ_max = 1.1⁴ L α²γ² m² σ²_max(X)`, `η = 1/(2L‖A‖²‖B‖²‖X‖²)`,
/// `R^{res} = 1/(2000 L κ)`.
pub fn res_theory_bundle(x: &Matrix, depth: usize, width: usize, alpha: f64, gamma: f64, a: &Matrix, b: &Matrix) -> Result<TheoryBundle> {
    if depth == 0 || width == 0 || !(alpha > 0.0 && gamma > 0.0) {
        return Err(NagError::Precondition("depth, width, α and γ must be positive".into()));
    }
    let (smax, smin) = x_extremes(x)?;
    let l = depth as f64;
    let scale = alpha * alpha * gamma * gamma * (width as f64).powi(2);
    let lambda_min = 0.9f64.powi(4) * l * scale * smin * smin;
    let lambda_max = 1.1f64.powi(4) * l * scale * smax * smax;
    let kappa = lambda_max / lambda_min;
    let na = spectral_norm(a, POWER_ITER_TOL)?;
    let nb = spectral_norm(b, POWER_ITER_TOL)?;
    let abx = na * nb * smax;
    let mut bundle = TheoryBundle {
        arch: Arch::ResNet,
        depth,
        d_y: b.rows(),
        sigma_min_x: smin,
        sigma_max_x: smax,
        lambda_min,
        lambda_max,
        kappa,
        eta: 1.0 / (2.0 * l * abx * abx),
        beta: theorem_beta(kappa),
        theta: 0.0,
        rho: 0.0,
        c_cap: 0.0,
        envelope_coef: 0.0,
        drift_radius: 0.0,
        b0: None,
        a: Some(abx),
        eta_scale_ratio: Some(abx * abx / (scale * smax * smax)),
        min_width: None,
        source: BundleSource::Theorem,
    };
    bundle.set_rates();
    bundle.set_drift();
    Ok(bundle)
}

/// Advisory FC width `c · L · max{r κ⁵ d_y (1+‖W*‖²), r κ⁵ log(r/δ), log L}`.
pub fn min_width_advisory(bundle: &TheoryBundle, r: usize, d_y: usize, w_star_norm: f64, delta: f64, constant: f64) -> Result<f64> {
    check_delta(delta)?;
    let (r, k5) = (r as f64, bundle.kappa.powi(5));
    let l = bundle.depth as f64;
    let terms = [
        r * k5 * d_y as f64 * (1.0 + w_star_norm * w_star_norm),
        r * k5 * (r / delta).ln(),
        l.ln(),
    ];
    Ok(constant * l * terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
}

/// Inputs of the ResNet width advisory beyond the bundle.
#[derive(Clone, Copy, Debug)]
pub struct ResWidthInputs {
    pub r: usize,
    pub n: usize,
    pub d_x: usize,
    pub d_y: usize,
    pub w_star_norm: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub delta: f64,
}

/// Advisory ResNet width
/// `c · max{d_y r κ⁵ log(n/δ), √r κ^{2.5} a ‖W*‖/(αγ), d_x + d_y + log(1/δ)}`.
pub fn min_width_advisory_res(bundle: &TheoryBundle, inp: ResWidthInputs, constant: f64) -> Result<f64> {
    check_delta(inp.delta)?;
    let a = bundle
        .a
        .ok_or_else(|| NagError::Precondition("ResNet width advisory needs a ResNet bundle".into()))?;
    let r = inp.r as f64;
    let terms = [
        inp.d_y as f64 * r * bundle.kappa.powi(5) * (inp.n as f64 / inp.delta).ln(),
        r.sqrt() * bundle.kappa.powf(2.5) * a * inp.w_star_norm / (inp.alpha * inp.gamma),
        (inp.d_x + inp.d_y) as f64 + (1.0 / inp.delta).ln(),
    ];
    Ok(constant * terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(NagError::Precondition(format!("δ must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedCheck {
    pub seed: u64,
    pub passed: bool,
    /// Human-readable description of each violated inequality.
    pub violations: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitSpectraReport {
    pub arch: Arch,
    pub shape: NetworkShape,
    pub seeds: usize,
    pub passed: usize,
    pub pass_rate: f64,
    pub results: Vec<SeedCheck>,
}

impl InitSpectraReport {
    fn from_results(shape: NetworkShape, results: Vec<SeedCheck>) -> Self {
        let passed = results.iter().filter(|r| r.passed).count();
        let seeds = results.len();
        InitSpectraReport {
            arch: shape.arch,
            shape,
            seeds,
            passed,
            pass_rate: if seeds == 0 { 1.0 } else { passed as f64 / seeds as f64 },
            results,
        }
    }
}

struct Checker(Vec<String>);

impl Checker {
    fn le(&mut self, what: String, lhs: f64, rhs: f64) {
        if !(lhs <= rhs) {
            self.0.push(format!("{what}: {lhs:e} > {rhs:e}"));
        }
    }

    fn ge(&mut self, what: String, lhs: f64, rhs: f64) {
        if !(lhs >= rhs) {
            self.0.push(format!("{what}: {lhs:e} < {rhs:e}"));
        }
    }
}

/// Smallest of the first `r` singular values.
fn sigma_r(a: &Matrix, r: usize) -> Result<f64> {
    let sv = singular_values(a)?;
    Ok(sv.get(r.saturating_sub(1)).cloned().unwrap_or(0.0))
}

/// Gram extremes at `params`; `λ_min` is over the whole `d_y n` space.
fn gram_extremes(params: &NetworkParams, x: &Matrix) -> Result<(f64, f64)> {
    let op = GramOperator::new(params, x)?;
    match op.materialize(crate::dynamics::DEFAULT_GRAM_CAP) {
        Ok(h) => sym_eig_extremes(&h.h),
        Err(NagError::SizeGuard { .. }) => op.eig_extremes(POWER_ITER_TOL),
        Err(e) => Err(e),
    }
}

/// Checks one FC initialization:
///
/// * `0.8 m^{(L−i+1)/2} ≤ σ(W^{L:i}_0) ≤ 1.2 m^{(L−i+1)/2}` for `1 < i ≤ L`,
/// * `0.8 m^{j/2} σ_min(X) ≤ σ(W^{j:1}_0 X) ≤ 1.2 m^{j/2} σ_max(X)` for `1 ≤ j < L`,
/// * `‖W^{j:i}_0‖ ≤ c √L m^{(j−i+1)/2}` for `1 < i ≤ j < L`,
/// * `0.8⁴ L σ²_min(X)/d_y ≤ λ(H_0) ≤ 1.2⁴ L σ²_max(X)/d_y`; the lower bound
///   only when `X` has full column rank, since `H_0` is singular otherwise.
pub fn check_fc_init(params: &NetworkParams, x: &Matrix, c: f64) -> Result<Vec<String>> {
    let shape = params.shape;
    let (depth, m) = (shape.depth, shape.width as f64);
    let ws = &params.hidden;
    let xs = nonzero_spectrum(x)?;
    let (smax, smin, r) = (xs[0], xs[xs.len() - 1], xs.len());
    let mut ck = Checker(Vec::new());

    // suffixes W^{L:i}, built right to left
    let mut suffix = ws[depth - 1].clone();
    for i in (2..=depth).rev() {
        if i < depth {
            suffix = matmul(&suffix, &ws[i - 1])?;
        }
        let sv = singular_values(&suffix)?;
        let scale = m.powf((depth - i + 1) as f64 / 2.0);
        ck.le(format!("σ_max(W^{{{depth}:{i}}})"), sv[0], 1.2 * scale);
        ck.ge(format!("σ_min(W^{{{depth}:{i}}})"), sv[sv.len() - 1], 0.8 * scale);
    }
    // prefixes W^{j:1} X
    let mut prefix = x.clone();
    for j in 1..depth {
        prefix = matmul(&ws[j - 1], &prefix)?;
        let scale = m.powf(j as f64 / 2.0);
        let top = singular_values(&prefix)?[0];
        ck.le(format!("σ_max(W^{{{j}:1}}X)"), top, 1.2 * scale * smax);
        ck.ge(format!("σ_min(W^{{{j}:1}}X)"), sigma_r(&prefix, r)?, 0.8 * scale * smin);
    }
    // middle products
    for i in 2..depth {
        for j in i..depth {
            let mid = chain_product(ws, i, j)?;
            let norm = spectral_norm(&mid, POWER_ITER_TOL)?;
            let bound = c * (depth as f64).sqrt() * m.powf((j - i + 1) as f64 / 2.0);
            ck.le(format!("‖W^{{{j}:{i}}}‖"), norm, bound);
        }
    }
    let (hmax, hmin) = gram_extremes(params, x)?;
    let l = depth as f64;
    let dy = shape.d_y as f64;
    ck.le("λ_max(H_0)".into(), hmax, 1.2f64.powi(4) * l * smax * smax / dy);
    if r == x.cols() {
        ck.ge("λ_min(H_0)".into(), hmin, 0.8f64.powi(4) * l * smin * smin / dy);
    }
    Ok(ck.0)
}

/// Pass rate of [`check_fc_init`] over fresh Gaussian initializations, one
/// per seed, evaluated in parallel.
pub fn validate_init_spectra_fc(shape: NetworkShape, x: &Matrix, seeds: &[u64], c: f64) -> Result<InitSpectraReport> {
    if shape.arch != Arch::Fc {
        return Err(NagError::Precondition("validate_init_spectra_fc needs an FC shape".into()));
    }
    let results = seeds
        .par_iter()
        .map(|&seed| {
            let params = init_fc_gaussian(shape, seed)?;
            let violations = check_fc_init(&params, x, c)?;
            Ok(SeedCheck { seed, passed: violations.is_empty(), violations })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InitSpectraReport::from_results(shape, results))
}

/// Checks one ResNet initialization:
///
/// * `0.9 α √m ≤ σ(A) ≤ 1.1 α √m` and `0.9 γ √m ≤ σ(B) ≤ 1.1 γ √m`,
/// * `0.9⁴ L α²γ² m² σ²_min(X) ≤ λ(H_0) ≤ 1.1⁴ L α²γ² m² σ²_max(X)`; the
///   lower bound only when `X` has full column rank.
pub fn check_res_init(params: &NetworkParams, cfg: ResNetInitConfig, x: &Matrix) -> Result<Vec<String>> {
    let io = params
        .io()
        .ok_or_else(|| NagError::Precondition("ResNet check needs A and B".into()))?;
    let m = params.shape.width as f64;
    let xs = nonzero_spectrum(x)?;
    let (smax, smin, r) = (xs[0], xs[xs.len() - 1], xs.len());
    let mut ck = Checker(Vec::new());
    for (name, mat, s) in [("A", &io.a, cfg.alpha), ("B", &io.b, cfg.gamma)] {
        let sv = singular_values(mat)?;
        ck.le(format!("σ_max({name})"), sv[0], 1.1 * s * m.sqrt());
        ck.ge(format!("σ_min({name})"), sv[sv.len() - 1], 0.9 * s * m.sqrt());
    }
    let scale = params.shape.depth as f64 * (cfg.alpha * cfg.gamma * m).powi(2);
    let (hmax, hmin) = gram_extremes(params, x)?;
    ck.le("λ_max(H_0)".into(), hmax, 1.1f64.powi(4) * scale * smax * smax);
    if r == x.cols() {
        ck.ge("λ_min(H_0)".into(), hmin, 0.9f64.powi(4) * scale * smin * smin);
    }
    Ok(ck.0)
}

pub fn validate_init_spectra_res(shape: NetworkShape, cfg: ResNetInitConfig, x: &Matrix, seeds: &[u64]) -> Result<InitSpectraReport> {
    if shape.arch != Arch::ResNet {
        return Err(NagError::Precondition("validate_init_spectra_res needs a RESNET shape".into()));
    }
    let results = seeds
        .par_iter()
        .map(|&seed| {
            let params = init_resnet(shape, cfg, seed)?;
            let violations = check_res_init(&params, cfg, x)?;
            Ok(SeedCheck { seed, passed: violations.is_empty(), violations })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InitSpectraReport::from_results(shape, results))
}

/// Inputs of the initial-loss bound.
#[derive(Clone, Copy, Debug)]
pub struct B0Inputs {
    pub w_star_norm: f64,
    pub delta: f64,
    /// Leading constant of the FC bound, whose value the theory leaves open.
    pub fc_constant: f64,
    /// Scales of `A` and `B`; required for ResNet.
    pub resnet: Option<ResNetInitConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct B0Report {
    pub arch: Arch,
    /// `ℓ(W_0) = ½‖U_0 − Y‖²_F`
    pub loss0: f64,
    /// `√(2ℓ(W_0)) = ‖U_0 − Y‖_F`
    pub b0_measured: f64,
    /// `B_0²`
    pub bound: f64,
    pub passed: bool,
}

/// Compares `ℓ(W_0)` with `B_0²`:
///
/// * FC: `c · max{1, log(r/δ)/d_y, ‖W*‖²} ‖X‖²_F`,
/// * ResNet: `(6.05 α²γ² d_y m log(2n/δ) + ‖W*‖²) ‖X‖²_F`.
pub fn validate_b0(params: &NetworkParams, x: &Matrix, y: &Matrix, inp: B0Inputs) -> Result<B0Report> {
    check_delta(inp.delta)?;
    let u = forward(params, x)?;
    let loss0 = loss(&u, y)?;
    let xf2 = frobenius_norm(x).powi(2);
    let ws2 = inp.w_star_norm * inp.w_star_norm;
    let shape = params.shape;
    let bound = match shape.arch {
        Arch::Fc => {
            let r = nonzero_spectrum(x)?.len() as f64;
            inp.fc_constant * 1.0f64.max((r / inp.delta).ln() / shape.d_y as f64).max(ws2) * xf2
        }
        Arch::ResNet => {
            let cfg = inp
                .resnet
                .ok_or_else(|| NagError::Precondition("ResNet B_0 needs α and γ".into()))?;
            let n = x.cols() as f64;
            let ag = cfg.alpha * cfg.alpha * cfg.gamma * cfg.gamma;
            (6.05 * ag * shape.d_y as f64 * shape.width as f64 * (2.0 * n / inp.delta).ln() + ws2) * xf2
        }
    };
    Ok(B0Report { arch: shape.arch, loss0, b0_measured: (2.0 * loss0).sqrt(), bound, passed: loss0 <= bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{gram, power_bound_check, random_spd};
    use crate::rng::{GaussianStream, Stream};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn fc_bundle_at_identity_data() {
        let b = fc_theory_bundle(&Matrix::identity(2), 3, 1, 1.0).unwrap();
        assert!(close(b.lambda_min, 1.2288, 1e-12));
        assert!(close(b.lambda_max, 6.2208, 1e-12));
        assert!(close(b.kappa, 5.0625, 1e-12));
        assert!(close(b.eta, 1.0 / 12.4416, 1e-12));
        assert!(close(b.beta, 4.75 / 8.75, 1e-12));
        assert!(close(b.theta, 1.0 - 1.0 / 4.5, 1e-12));
        assert!(close(b.envelope_coef, 54.0, 1e-12));
        assert!(close(b.eta * b.lambda_max, 0.5, 1e-15));
        assert!(close(b.theta - b.rho, 1.0 / (6.0 * b.kappa.sqrt()), 1e-12));
        assert!(b.rho < b.theta && b.theta < 1.0 && b.beta > 0.0 && b.beta < 1.0);
    }

    #[test]
    fn fc_kappa_is_constant_for_orthogonal_columns() {
        let q = crate::tensor::orthonormal_columns(&GaussianStream::new(1, Stream::Probe).matrix(6, 4, 1.0)).unwrap();
        let b = fc_theory_bundle(&q.scale(3.7), 2, 3, 1.0).unwrap();
        assert!(close(b.kappa, 5.0625, 1e-10));
    }

    #[test]
    fn fc_drift_radius_scales_inverse_in_depth() {
        let x = Matrix::from_diag(&[2.0, 1.0]);
        let r2 = fc_theory_bundle(&x, 2, 1, 1.5).unwrap().drift_radius;
        let r4 = fc_theory_bundle(&x, 4, 1, 1.5).unwrap().drift_radius;
        assert!(close(r2 / r4, 2.0, 1e-12));
        let b = fc_theory_bundle(&x, 2, 1, 1.5).unwrap();
        let want = 792.0 * 2.0 * 1.5 * b.kappa.sqrt() / 2.0;
        assert!(close(b.drift_radius, want, 1e-12));
    }

    #[test]
    fn res_bundle_values() {
        let a = Matrix::identity(10);
        let b = Matrix::from_fn(1, 10, |_, j| if j == 0 { 1.0 } else { 0.0 });
        let x = Matrix::identity(2);
        let a2 = Matrix::from_fn(10, 2, |i, j| if i == j { 1.0 } else { 0.0 });
        let bundle = res_theory_bundle(&x, 2, 10, 1.0, 1.0, &a2, &b).unwrap();
        assert!(close(bundle.lambda_min, 131.22, 1e-12));
        assert!(close(bundle.lambda_max, 292.82, 1e-12));
        assert!(close(bundle.kappa, (1.1f64 / 0.9).powi(4), 1e-12));
        assert!(close(bundle.drift_radius, 1.0 / (2000.0 * 2.0 * bundle.kappa), 1e-15));
        assert!(close(bundle.drift_radius, 1.1199e-4, 1e-4));
        assert!(close(bundle.eta, 0.25, 1e-12));
        assert!(close(bundle.a.unwrap(), 1.0, 1e-12));
        let wide = res_theory_bundle(&x, 5, 100, 0.3, 2.0, &a2, &b).unwrap();
        assert!(close(wide.kappa, bundle.kappa, 1e-12));
        let _ = a;
    }

    #[test]
    fn rank_zero_x_is_rejected() {
        assert!(fc_theory_bundle(&Matrix::zeros(2, 2), 2, 1, 1.0).is_err());
    }

    #[test]
    fn width_advisory_example() {
        let b = fc_theory_bundle(&Matrix::identity(2), 3, 1, 1.0).unwrap();
        let w = min_width_advisory(&b, 2, 1, 1.0, 0.1, 1.0).unwrap();
        // the log(r/δ) term wins here: log 20 ≈ 3.0 > 1 + ‖W*‖² = 2
        let k5 = 5.0625f64.powi(5);
        assert!(close(w, 3.0 * 2.0 * k5 * 20f64.ln(), 1e-12), "{w}");
        let no_log = min_width_advisory(&b, 2, 1, 1.0, 0.9, 1.0).unwrap();
        assert!(close(no_log, 3.0 * 2.0 * k5 * 2.0, 1e-12), "{no_log}");
        assert!(no_log > 39_900.0 && no_log < 39_910.0);
        assert!(min_width_advisory(&b, 2, 1, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn init_checks_on_fc_and_resnet() {
        let x = Matrix::identity(3);
        let seeds: Vec<u64> = (0..4).collect();
        let report = validate_init_spectra_fc(NetworkShape::fc(3, 256, 3, 1), &x, &seeds, 2.0).unwrap();
        assert_eq!(report.seeds, 4);
        assert!(report.pass_rate >= 0.75, "{report:?}");
        let single = validate_init_spectra_fc(NetworkShape::fc(1, 8, 3, 1), &x, &seeds, 2.0).unwrap();
        assert_eq!(single.pass_rate, 1.0, "{single:?}");
        let res = validate_init_spectra_res(NetworkShape::resnet(2, 256, 2, 1), ResNetInitConfig::default(), &Matrix::identity(2), &seeds).unwrap();
        assert_eq!(res.seeds, 4);
    }

    #[test]
    fn b0_on_exact_fit_is_zero() {
        let p = init_fc_gaussian(NetworkShape::fc(2, 8, 2, 1), 3).unwrap();
        let x = Matrix::identity(2);
        let y = forward(&p, &x).unwrap();
        let inp = B0Inputs { w_star_norm: 1.0, delta: 0.1, fc_constant: 1.0, resnet: None };
        let rep = validate_b0(&p, &x, &y, inp).unwrap();
        assert_eq!(rep.loss0, 0.0);
        assert!(rep.passed);
    }

    #[test]
    fn bundle_hyperparameters_satisfy_power_bound_caps() {
        for seed in 0..5 {
            let b = fc_theory_bundle(&Matrix::from_diag(&[3.0, 2.0, 1.0]), 3, 1, 1.0).unwrap();
            let h = random_spd(4, b.lambda_min, b.lambda_max, seed).unwrap();
            let rep = power_bound_check(&h, b.eta, b.beta, 100, 5, seed).unwrap();
            assert!(rep.rho <= b.rho + 1e-12, "{} vs {}", rep.rho, b.rho);
            assert!(rep.c <= b.c_cap + 1e-12);
            assert!(rep.passed);
        }
    }

    #[test]
    fn empirical_spectrum_rederives() {
        let p = init_fc_gaussian(NetworkShape::fc(2, 64, 2, 1), 1).unwrap();
        let x = Matrix::identity(2);
        let h = gram(&p, &x).unwrap();
        let (hi, lo) = sym_eig_extremes(&h.h).unwrap();
        let b = fc_theory_bundle(&x, 2, 1, 1.0).unwrap().with_empirical_spectrum(lo, hi).unwrap();
        assert_eq!(b.source, BundleSource::EmpiricalSpectrum);
        assert!(close(b.eta * hi, 0.5, 1e-15));
        assert!(close(b.kappa, hi / lo, 1e-15));
    }
}
