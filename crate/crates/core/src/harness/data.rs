use crate::error::{NagError, Result};
use crate::model::Dataset;
use crate::rng::{GaussianStream, Stream};
use crate::tensor::{matmul, orthonormal_columns, Matrix};

/// `r` singular values spaced geometrically from `cond` down to 1.
pub fn geometric_spectrum(r: usize, cond: f64) -> Result<Vec<f64>> {
    if r == 0 {
        return Err(NagError::InfeasibleData("rank must be at least 1".into()));
    }
    if !(cond >= 1.0 && cond.is_finite()) {
        return Err(NagError::InfeasibleData(format!("cond must be a finite number ≥ 1, got {cond}")));
    }
    if r == 1 {
        if cond != 1.0 {
            return Err(NagError::InfeasibleData(format!("a rank-one X has cond 1, asked for {cond}")));
        }
        return Ok(vec![1.0]);
    }
    let last = (r - 1) as f64;
    Ok((0..r).map(|k| cond.powf((last - k as f64) / last)).collect())
}

/// Synthesizes `X = U diag(σ) Vᵀ` with random orthonormal `U` (d_x × r) and
/// `V` (n × r), geometric `σ` from `cond` to 1, a Gaussian teacher `W*`
/// (d_y × d_x) and `Y = W* X`.
pub fn gen_dataset(seed: u64, d_x: usize, d_y: usize, n: usize, r: usize, cond: f64) -> Result<Dataset> {
    let sigmas = geometric_spectrum(r, cond)?;
    gen_dataset_with_spectrum(seed, d_x, d_y, n, &sigmas)
}

/// As [`gen_dataset`] with explicit positive singular values.
pub fn gen_dataset_with_spectrum(seed: u64, d_x: usize, d_y: usize, n: usize, sigmas: &[f64]) -> Result<Dataset> {
    let r = sigmas.len();
    if r == 0 || r > d_x.min(n) {
        return Err(NagError::InfeasibleData(format!("rank {r} needs 1 ≤ r ≤ min(d_x, n) = {}", d_x.min(n))));
    }
    if d_y == 0 {
        return Err(NagError::InfeasibleData("d_y must be positive".into()));
    }
    if sigmas.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(NagError::InfeasibleData(format!("singular values must be positive, got {sigmas:?}")));
    }
    let mut g = GaussianStream::new(seed, Stream::Dataset);
    let u = orthonormal_columns(&g.matrix(d_x, r, 1.0))?;
    let v = orthonormal_columns(&g.matrix(n, r, 1.0))?;
    let w_star = g.matrix(d_y, d_x, 1.0);
    let us = Matrix::from_fn(d_x, r, |i, k| u[(i, k)] * sigmas[k]);
    let x = matmul(&us, &v.transpose())?;
    let y = matmul(&w_star, &x)?;
    Ok(Dataset { x, y, w_star, rank: r })
}
