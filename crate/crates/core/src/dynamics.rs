//! Analysis objects for NAG on deep linear networks.
//!
//! * gram matrices `H_t = Σ_l (P_lᵀ P_l) ⊗ (S_l S_lᵀ)` (materialized or as an
//!   operator),
//! * the companion matrix `G` of the residual recursion,
//! * a streaming audit that rebuilds `[ξ_{t+1}; ξ_t] = G [ξ_t; ξ_{t-1}] +
//!   [φ̂_t + ψ_t + ι_t; 0]` from a parameter trajectory,
//! * an exact checker for `‖G^k v‖ ≤ C ρ^k ‖v‖`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{NagError, Result};
use crate::model::{forward, loss, Arch, Factorization, NetworkParams};
use crate::optim::OptimizerKind;
use crate::rng::{GaussianStream, Stream};
use crate::tensor::{kron, l2_norm, matmul, power_iteration_top, sym_eig_extremes, unvec, vec, Matrix, Vector};
use crate::theory::TheoryBundle;

/// Default materialization cap on `d_y · n`.
pub const DEFAULT_GRAM_CAP: usize = 512;
/// Relative tolerance of the residual-dynamics identity.
pub const AUDIT_TOL: f64 = 1e-8;
/// Relative slack of the power-bound comparison.
pub const POWER_BOUND_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramMatrix {
    pub h: Matrix,
    pub arch: Arch,
    pub t: Option<usize>,
}

/// `H` in factored form: `H vec(E) = Σ_l vec(K_l E Q_l)` with
/// `K_l = S_l S_lᵀ` (d_y × d_y) and `Q_l = P_lᵀ P_l` (n × n).
#[derive(Clone, Debug)]
pub struct GramOperator {
    pub d_y: usize,
    pub n: usize,
    pub arch: Arch,
    terms: Vec<(Matrix, Matrix)>,
}

impl GramOperator {
    pub fn new(params: &NetworkParams, x: &Matrix) -> Result<Self> {
        Self::from_factorization(params.shape.arch, &Factorization::new(params, x)?)
    }

    pub fn from_factorization(arch: Arch, f: &Factorization) -> Result<Self> {
        let depth = f.suffixes.len();
        let mut terms = Vec::with_capacity(depth);
        for l in 1..=depth {
            let s = f.suffix(l);
            let p = f.prefix(l);
            let k = matmul(s, &s.transpose())?;
            let q = matmul(&p.transpose(), p)?;
            terms.push((k, q));
        }
        Ok(GramOperator { d_y: f.output.rows(), n: f.output.cols(), arch, terms })
    }

    pub fn dim(&self) -> usize {
        self.d_y * self.n
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(NagError::dim("gram apply", (self.dim(), 1), (v.len(), 1)));
        }
        let e = unvec(&Vector::new(v.to_vec()), self.d_y, self.n)?;
        let mut out = vec![0.0; self.dim()];
        for (k, q) in &self.terms {
            let term = matmul(&matmul(k, &e)?, q)?;
            out.iter_mut().zip(term.as_slice()).for_each(|(o, t)| *o += t);
        }
        Ok(out)
    }

    pub fn materialize(&self, cap: usize) -> Result<GramMatrix> {
        if self.dim() > cap {
            return Err(NagError::SizeGuard { dim: self.dim(), cap });
        }
        let mut h = Matrix::zeros(self.dim(), self.dim());
        for (k, q) in &self.terms {
            h = h.try_add(&kron(q, k))?;
        }
        Ok(GramMatrix { h, arch: self.arch, t: None })
    }

    /// `(λ_max, λ_min)` by power iteration on `H` and on `λ_max I − H`.
    pub fn eig_extremes(&self, tol: f64) -> Result<(f64, f64)> {
        let top = power_iteration_top(self.dim(), |v| self.apply(v).expect("dims match"), tol)?;
        let shifted = power_iteration_top(
            self.dim(),
            |v| {
                let hv = self.apply(v).expect("dims match");
                v.iter().zip(hv).map(|(a, b)| top * a - b).collect()
            },
            tol,
        )?;
        Ok((top, top - shifted))
    }
}

fn gram_checked(params: &NetworkParams, x: &Matrix, arch: Arch, cap: usize) -> Result<GramMatrix> {
    if params.shape.arch != arch {
        return Err(NagError::Precondition(format!("expected {arch} parameters, got {}", params.shape.arch)));
    }
    let dim = params.shape.d_y * x.cols();
    if dim > cap {
        return Err(NagError::SizeGuard { dim, cap });
    }
    GramOperator::new(params, x)?.materialize(cap)
}

/// `H^{lin} = (m^{L-1} d_y)^{-1} Σ_l (W^{l-1:1}X)ᵀ(W^{l-1:1}X) ⊗ W^{L:l+1}(W^{L:l+1})ᵀ`.
pub fn gram_fc(params: &NetworkParams, x: &Matrix) -> Result<GramMatrix> {
    gram_checked(params, x, Arch::Fc, DEFAULT_GRAM_CAP)
}

pub fn gram_fc_with_cap(params: &NetworkParams, x: &Matrix, cap: usize) -> Result<GramMatrix> {
    gram_checked(params, x, Arch::Fc, cap)
}

/// `H^{res} = Σ_l (W̃^{l-1:1}AX)ᵀ(W̃^{l-1:1}AX) ⊗ (B W̃^{L:l+1})(B W̃^{L:l+1})ᵀ`.
pub fn gram_res(params: &NetworkParams, x: &Matrix) -> Result<GramMatrix> {
    gram_checked(params, x, Arch::ResNet, DEFAULT_GRAM_CAP)
}

pub fn gram_res_with_cap(params: &NetworkParams, x: &Matrix, cap: usize) -> Result<GramMatrix> {
    gram_checked(params, x, Arch::ResNet, cap)
}

pub fn gram(params: &NetworkParams, x: &Matrix) -> Result<GramMatrix> {
    gram_checked(params, x, params.shape.arch, DEFAULT_GRAM_CAP)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompanionMatrix {
    pub g: Matrix,
    pub eta: f64,
    pub beta: f64,
}

/// `G = [(1+β)(I − ηH)  β(−I + ηH); I  0]`.
pub fn companion(h0: &GramMatrix, eta: f64, beta: f64) -> Result<CompanionMatrix> {
    companion_of(&h0.h, eta, beta)
}

pub fn companion_of(h: &Matrix, eta: f64, beta: f64) -> Result<CompanionMatrix> {
    if !(eta > 0.0) {
        return Err(NagError::Precondition(format!("η must be positive, got {eta}")));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(NagError::Precondition(format!("β must lie in [0, 1], got {beta}")));
    }
    let n = h.rows();
    if h.cols() != n {
        return Err(NagError::dim("companion", h.shape(), h.shape()));
    }
    let mut g = Matrix::zeros(2 * n, 2 * n);
    for j in 0..n {
        for i in 0..n {
            let id = if i == j { 1.0 } else { 0.0 };
            let a = id - eta * h[(i, j)];
            g[(i, j)] = (1.0 + beta) * a;
            g[(i, n + j)] = -beta * a;
        }
        g[(n + j, j)] = 1.0;
    }
    Ok(CompanionMatrix { g, eta, beta })
}

impl CompanionMatrix {
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.g.matvec(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationBreakdown {
    pub t: usize,
    pub phi_hat: Vector,
    pub psi: Vector,
    pub iota: Vector,
    pub aggregate: Vector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub xi: Vector,
    pub xi_norm: f64,
    /// `‖[ξ_t; ξ_{t-1}]‖` with `ξ_{-1} = ξ_0`.
    pub pair_norm: f64,
    pub loss: f64,
    /// `‖W^l_t − W^l_0‖_F` per trainable layer.
    pub layer_drift: Vec<f64>,
    /// Decomposition of the step `t → t+1` (audited runs only).
    pub breakdown: Option<PerturbationBreakdown>,
    /// `‖[ξ_{t+1}; ξ_t] − G[ξ_t; ξ_{t-1}] − [φ_t; 0]‖` for the step `t → t+1`.
    pub identity_residual: Option<f64>,
    pub theory_envelope: Option<f64>,
}

impl TraceRow {
    pub fn max_layer_drift(&self) -> f64 {
        self.layer_drift.iter().cloned().fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualPairTrace {
    pub arch: Arch,
    pub optimizer: Option<OptimizerKind>,
    pub seed: Option<u64>,
    pub eta: f64,
    pub beta: f64,
    pub rows: Vec<TraceRow>,
    pub bundle: Option<TheoryBundle>,
}

impl ResidualPairTrace {
    pub fn pair_norms(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.pair_norm).collect()
    }

    /// Fills `theory_envelope(t) = envelope_coef · θ^t · pair_norm(0)` from
    /// the attached bundle.
    pub fn attach_bundle(&mut self, bundle: TheoryBundle) {
        let p0 = self.rows.first().map_or(0.0, |r| r.pair_norm);
        for row in &mut self.rows {
            row.theory_envelope = Some(bundle.envelope(row.t, p0));
        }
        self.bundle = Some(bundle);
    }

    pub fn max_identity_residual(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.identity_residual).reduce(f64::max)
    }

    /// CSV with columns `t, xi_norm, pair_norm, loss, phi_hat_norm, psi_norm,
    /// iota_norm, aggregate_norm, max_layer_drift, theory_envelope`. Missing
    /// values are left empty; numbers use the shortest round-trip form.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "t,xi_norm,pair_norm,loss,phi_hat_norm,psi_norm,iota_norm,aggregate_norm,max_layer_drift,theory_envelope"
        )?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:e}"));
        for r in &self.rows {
            let b = r.breakdown.as_ref();
            writeln!(
                out,
                "{},{:e},{:e},{:e},{},{},{},{},{:e},{}",
                r.t,
                r.xi_norm,
                r.pair_norm,
                r.loss,
                opt(b.map(|b| b.phi_hat.norm())),
                opt(b.map(|b| b.psi.norm())),
                opt(b.map(|b| b.iota.norm())),
                opt(b.map(|b| b.aggregate.norm())),
                r.max_layer_drift(),
                opt(r.theory_envelope),
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

struct Snapshot {
    params: NetworkParams,
    fac: Factorization,
    xi: Vector,
    grads: Vec<Matrix>,
    gram: GramOperator,
}

impl Snapshot {
    fn new(params: NetworkParams, x: &Matrix, y: &Matrix) -> Result<Self> {
        let fac = Factorization::new(&params, x)?;
        let xi = vec(&fac.output.try_sub(y)?);
        let grads = fac.gradients(y)?;
        let gram = GramOperator::from_factorization(params.shape.arch, &fac)?;
        Ok(Snapshot { params, fac, xi, grads, gram })
    }
}

/// Streaming residual-dynamics audit for a NAG trajectory.
///
/// Feed iterates `w_0, w_1, …` to [`observe`](Self::observe). Once
/// `w_{t+1}` arrives the step `t → t+1` is decomposed, with
/// `M_t = w_{t+1} − w_t`, `w_{-1} = w_0`, and gram matrices and gradients
/// recomputed from the parameters alone.
pub struct ResidualAuditor<'a> {
    x: &'a Matrix,
    y: &'a Matrix,
    eta: f64,
    beta: f64,
    tol: f64,
    gram0: Option<GramOperator>,
    g0: Option<CompanionMatrix>,
    w0: Vec<Matrix>,
    prev: Option<Snapshot>,
    cur: Option<Snapshot>,
    rows: Vec<TraceRow>,
    arch: Option<Arch>,
    fail_fast: bool,
    cap: usize,
}

impl<'a> ResidualAuditor<'a> {
    pub fn new(x: &'a Matrix, y: &'a Matrix, eta: f64, beta: f64) -> Self {
        ResidualAuditor {
            x,
            y,
            eta,
            beta,
            tol: AUDIT_TOL,
            gram0: None,
            g0: None,
            w0: Vec::new(),
            prev: None,
            cur: None,
            rows: Vec::new(),
            arch: None,
            fail_fast: true,
            cap: DEFAULT_GRAM_CAP,
        }
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    /// Record identity residuals without erroring on the first violation.
    pub fn report_only(mut self) -> Self {
        self.fail_fast = false;
        self
    }

    pub fn with_gram_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }

    fn row(&self, snap: &Snapshot, t: usize, prev_xi: &Vector) -> Result<TraceRow> {
        let xi_norm = snap.xi.norm();
        let drift = snap
            .params
            .hidden
            .iter()
            .zip(&self.w0)
            .map(|(w, w0)| w.try_sub(w0).map(|d| d.frobenius_norm()))
            .collect::<Result<Vec<_>>>()?;
        Ok(TraceRow {
            t,
            xi: snap.xi.clone(),
            xi_norm,
            pair_norm: (xi_norm * xi_norm + prev_xi.norm().powi(2)).sqrt(),
            loss: 0.5 * xi_norm * xi_norm,
            layer_drift: drift,
            breakdown: None,
            identity_residual: None,
            theory_envelope: None,
        })
    }

    pub fn observe(&mut self, params: &NetworkParams) -> Result<()> {
        let snap = Snapshot::new(params.clone(), self.x, self.y)?;
        let Some(cur) = self.cur.take() else {
            self.arch = Some(params.shape.arch);
            self.w0 = params.hidden.clone();
            if snap.gram.dim() <= self.cap {
                let h0 = snap.gram.materialize(self.cap)?;
                self.g0 = Some(companion(&h0, self.eta, self.beta)?);
            }
            self.gram0 = Some(snap.gram.clone());
            let row = self.row(&snap, 0, &snap.xi)?;
            self.rows.push(row);
            self.cur = Some(snap);
            return Ok(());
        };
        let t = self.rows.len() - 1;
        let prev = self.prev.take();
        let prev_ref = prev.as_ref().unwrap_or(&cur);
        let (breakdown, residual) = self.decompose(t, prev_ref, &cur, &snap)?;
        let last = self.rows.last_mut().expect("row for t exists");
        last.breakdown = Some(breakdown);
        last.identity_residual = Some(residual);
        let row = self.row(&snap, t + 1, &cur.xi)?;
        self.rows.push(row);
        self.prev = Some(cur);
        self.cur = Some(snap);
        let tol = self.tol * (1.0 + self.rows[t + 1].xi_norm);
        if self.fail_fast && !(residual <= tol) {
            return Err(NagError::AuditFailure { t, residual, tolerance: tol });
        }
        Ok(())
    }

    fn decompose(&self, t: usize, prev: &Snapshot, cur: &Snapshot, next: &Snapshot) -> Result<(PerturbationBreakdown, f64)> {
        let (eta, beta) = (self.eta, self.beta);
        let p_cur = &cur.params;
        let depth = p_cur.shape.depth;
        let momentum: Vec<Matrix> = next
            .params
            .hidden
            .iter()
            .zip(&p_cur.hidden)
            .map(|(a, b)| a.try_sub(b))
            .collect::<Result<_>>()?;

        // φ̂: Out · Π(E^l_t + M^l_t) Z − U_t − Σ S_l M^l P_l
        let shifted = p_cur.with_hidden(
            p_cur.hidden.iter().zip(&momentum).map(|(w, m)| w.try_add(m)).collect::<Result<_>>()?,
        );
        let moved = forward(&shifted, self.x)?;
        let first_order = cur.fac.transport(&momentum)?;
        let phi_hat = moved.try_sub(&cur.fac.output)?.try_sub(&first_order)?;

        // ψ: momentum cross terms plus the gradient-transport difference.
        let mut cross: Option<Matrix> = None;
        for l in 1..=depth {
            let inner = prev.params.apply_layer(l, cur.fac.prefix(l))?;
            let term = matmul(cur.fac.suffix(l), &inner)?;
            cross = Some(match cross {
                None => term,
                Some(c) => c.try_add(&term)?,
            });
        }
        let cross = cross.expect("depth >= 1");
        let psi_momentum = cur
            .fac
            .output
            .scale((depth as f64 - 1.0) * beta)
            .try_add(&prev.fac.output.scale(beta))?
            .try_sub(&cross.scale(beta))?;
        let transport_now = cur.fac.transport(&prev.grads)?;
        let transport_then = prev.fac.transport(&prev.grads)?;
        let psi_grad = transport_now.try_sub(&transport_then)?.scale(eta * beta);
        // With w_{-1} = w_0 every ψ term cancels identically; report the
        // exact zero rather than the round-off of the cancellation.
        let psi = if t == 0 { Matrix::zeros(psi_grad.rows(), psi_grad.cols()) } else { psi_momentum.try_add(&psi_grad)? };

        // ι: −η(1+β)(H_t − H_0)ξ_t + ηβ(H_{t-1} − H_0)ξ_{t-1}
        let gram0 = self.gram0.as_ref().expect("initialized on first observe");
        let ht_xi = cur.gram.apply(cur.xi.as_slice())?;
        let h0_xi = gram0.apply(cur.xi.as_slice())?;
        let hp_xip = prev.gram.apply(prev.xi.as_slice())?;
        let h0_xip = gram0.apply(prev.xi.as_slice())?;
        let iota: Vec<f64> = (0..cur.xi.len())
            .map(|i| -eta * (1.0 + beta) * (ht_xi[i] - h0_xi[i]) + eta * beta * (hp_xip[i] - h0_xip[i]))
            .collect();

        let phi_hat = vec(&phi_hat);
        let psi = vec(&psi);
        let iota = Vector::new(iota);
        let aggregate = phi_hat.try_add(&psi)?.try_add(&iota)?;

        // [ξ_{t+1}; ξ_t] − G[ξ_t; ξ_{t-1}] − [φ_t; 0]
        let n = cur.xi.len();
        let mut pair = cur.xi.as_slice().to_vec();
        pair.extend_from_slice(prev.xi.as_slice());
        let g_pair = match &self.g0 {
            Some(g) => g.apply(&pair)?,
            None => {
                let mut top: Vec<f64> = (0..n)
                    .map(|i| (1.0 + beta) * (pair[i] - eta * h0_xi[i]) - beta * (pair[n + i] - eta * h0_xip[i]))
                    .collect();
                top.extend_from_slice(cur.xi.as_slice());
                top
            }
        };
        let mut resid = Vec::with_capacity(2 * n);
        for ((x, g), a) in next.xi.as_slice().iter().zip(&g_pair[..n]).zip(aggregate.as_slice()) {
            resid.push(x - g - a);
        }
        for (x, g) in cur.xi.as_slice().iter().zip(&g_pair[n..]) {
            resid.push(x - g);
        }
        Ok((PerturbationBreakdown { t, phi_hat, psi, iota, aggregate }, l2_norm(&resid)))
    }

    pub fn finish(self) -> ResidualPairTrace {
        ResidualPairTrace {
            arch: self.arch.unwrap_or(Arch::Fc),
            optimizer: None,
            seed: None,
            eta: self.eta,
            beta: self.beta,
            rows: self.rows,
            bundle: None,
        }
    }
}

/// Audits a stored NAG trajectory `w_0, …, w_T` (`T ≥ 1`).
pub fn residual_audit(trajectory: &[NetworkParams], x: &Matrix, y: &Matrix, eta: f64, beta: f64) -> Result<ResidualPairTrace> {
    if trajectory.len() < 2 {
        return Err(NagError::Precondition("the audit needs at least two iterates".into()));
    }
    let mut auditor = ResidualAuditor::new(x, y, eta, beta);
    for p in trajectory {
        auditor.observe(p)?;
    }
    Ok(auditor.finish())
}

/// Trace without the perturbation audit: residuals, losses and drift only.
pub fn plain_row(params: &NetworkParams, w0: &[Matrix], x: &Matrix, y: &Matrix, t: usize, prev_xi: Option<&Vector>) -> Result<TraceRow> {
    let u = forward(params, x)?;
    let xi = vec(&u.try_sub(y)?);
    let xi_norm = xi.norm();
    let prev_norm = prev_xi.map_or(xi_norm, |p| p.norm());
    let layer_drift = params
        .hidden
        .iter()
        .zip(w0)
        .map(|(w, w0)| w.try_sub(w0).map(|d| d.frobenius_norm()))
        .collect::<Result<Vec<_>>>()?;
    Ok(TraceRow {
        t,
        xi,
        xi_norm,
        pair_norm: (xi_norm * xi_norm + prev_norm * prev_norm).sqrt(),
        loss: loss(&u, y)?,
        layer_drift,
        breakdown: None,
        identity_residual: None,
        theory_envelope: None,
    })
}

/// `g(x, y) = 4x(1−y) − [(1+x)(1−y)]²`.
pub fn lemma_g(x: f64, y: f64) -> f64 {
    4.0 * x * (1.0 - y) - ((1.0 + x) * (1.0 - y)).powi(2)
}

/// `(ρ, C)` for the power bound on `G`:
/// `ρ = √(β(1 − ηλ_min))`,
/// `C = (2β(1 − ηλ_min) + 2) / √(min{g(β, ηλ_min), g(β, ηλ_max)})`.
pub fn power_bound_constants(lambda_min: f64, lambda_max: f64, eta: f64, beta: f64) -> (f64, f64) {
    let a = beta * (1.0 - eta * lambda_min);
    let g = lemma_g(beta, eta * lambda_min).min(lemma_g(beta, eta * lambda_max));
    (a.sqrt(), (2.0 * a + 2.0) / g.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralBoundReport {
    pub dim: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub kappa_tilde: f64,
    pub eta: f64,
    pub beta: f64,
    pub rho: f64,
    pub c: f64,
    /// `max ‖G^k v‖ / (C ρ^k ‖v‖)` over every checked `(k, v)`.
    pub max_ratio: f64,
    /// `max(0, max_ratio − 1)`.
    pub max_violation: f64,
    pub worst_k: usize,
    pub worst_trial: usize,
    pub k_max: usize,
    pub trials: usize,
    pub slack: f64,
    pub passed: bool,
}

/// Checks `‖G^k v‖ ≤ C ρ^k ‖v‖ (1 + slack)` for `trials` random unit vectors
/// and every `k ≤ k_max`, after validating the step-size and momentum
/// hypotheses.
pub fn power_bound_check(h: &Matrix, eta: f64, beta: f64, k_max: usize, trials: usize, seed: u64) -> Result<SpectralBoundReport> {
    power_bound_check_with_slack(h, eta, beta, k_max, trials, seed, POWER_BOUND_SLACK)
}

pub fn power_bound_check_with_slack(
    h: &Matrix,
    eta: f64,
    beta: f64,
    k_max: usize,
    trials: usize,
    seed: u64,
    slack: f64,
) -> Result<SpectralBoundReport> {
    let (lambda_max, lambda_min) = sym_eig_extremes(h)?;
    if !(lambda_min > 0.0) {
        return Err(NagError::Precondition(format!("H must be positive definite (λ_min = {lambda_min:e})")));
    }
    if !(eta > 0.0 && eta * lambda_max <= 1.0 + 1e-12) {
        return Err(NagError::Precondition(format!("need 0 < η ≤ 1/λ_max, got η λ_max = {}", eta * lambda_max)));
    }
    let root = (eta * lambda_min).sqrt();
    let beta_floor = (1.0 - root) / (1.0 + root);
    if !(beta < 1.0) || beta < beta_floor - 1e-14 {
        return Err(NagError::Precondition(format!("need {beta_floor} ≤ β < 1, got β = {beta}")));
    }
    let gmin = lemma_g(beta, eta * lambda_min).min(lemma_g(beta, eta * lambda_max));
    if !(gmin > 0.0) {
        return Err(NagError::Precondition(format!("g(β, ηλ) must be positive, got {gmin:e}")));
    }
    let (rho, c) = power_bound_constants(lambda_min, lambda_max, eta, beta);
    let g = companion_of(h, eta, beta)?;
    let dim = h.rows();
    let mut rng = GaussianStream::new(seed, Stream::Probe);
    let (mut max_ratio, mut worst_k, mut worst_trial) = (0.0f64, 0, 0);
    for trial in 0..trials {
        let mut w = rng.unit_vector(2 * dim);
        for k in 0..=k_max {
            let ratio = l2_norm(&w) / (c * rho.powi(k as i32));
            if ratio > max_ratio {
                max_ratio = ratio;
                worst_k = k;
                worst_trial = trial;
            }
            if k < k_max {
                w = g.apply(&w)?;
            }
        }
    }
    Ok(SpectralBoundReport {
        dim,
        lambda_min,
        lambda_max,
        kappa_tilde: lambda_max / lambda_min,
        eta,
        beta,
        rho,
        c,
        max_ratio,
        max_violation: (max_ratio - 1.0).max(0.0),
        worst_k,
        worst_trial,
        k_max,
        trials,
        slack,
        passed: max_ratio <= 1.0 + slack,
    })
}

/// Random symmetric positive definite matrix `Q diag(λ) Qᵀ`. The first two
/// eigenvalues are pinned to `lmin` and `lmax` (when `dim ≥ 2`); the rest
/// are uniform in between.
pub fn random_spd(dim: usize, lmin: f64, lmax: f64, seed: u64) -> Result<Matrix> {
    if dim == 0 || !(lmin > 0.0 && lmax >= lmin) {
        return Err(NagError::Precondition(format!("random_spd needs dim ≥ 1 and 0 < lmin ≤ lmax, got {dim}, {lmin}, {lmax}")));
    }
    let mut rng = GaussianStream::new(seed, Stream::Probe);
    let q = crate::tensor::orthonormal_columns(&rng.matrix(dim, dim, 1.0))?;
    let mut lambdas: Vec<f64> = (0..dim).map(|_| lmin + (lmax - lmin) * rng.uniform()).collect();
    lambdas[0] = lmin;
    if dim > 1 {
        lambdas[1] = lmax;
    }
    let scaled = Matrix::from_fn(dim, dim, |i, j| q[(i, j)] * lambdas[j]);
    let h = matmul(&scaled, &q.transpose())?;
    // symmetrize away round-off
    Ok(Matrix::from_fn(dim, dim, |i, j| 0.5 * (h[(i, j)] + h[(j, i)])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_fc_gaussian, NetworkShape};

    #[test]
    fn gram_single_layer_is_xtx() {
        let x = GaussianStream::new(1, Stream::Probe).matrix(3, 4, 1.0);
        let p = NetworkParams {
            shape: NetworkShape::fc(1, 1, 3, 1),
            hidden: vec![GaussianStream::new(2, Stream::Probe).matrix(1, 3, 1.0)],
            io: None,
            seed: None,
        };
        let h = gram_fc(&p, &x).unwrap().h;
        let xtx = matmul(&x.transpose(), &x).unwrap();
        assert!(h.try_sub(&xtx).unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn gram_size_guard() {
        let p = init_fc_gaussian(NetworkShape::fc(2, 4, 3, 2), 1).unwrap();
        let x = Matrix::zeros(3, 10);
        assert!(matches!(gram_fc_with_cap(&p, &x, 8), Err(NagError::SizeGuard { dim: 20, cap: 8 })));
        assert!(gram_res(&p, &x).is_err());
    }

    #[test]
    fn operator_matches_materialized() {
        let p = init_fc_gaussian(NetworkShape::fc(3, 6, 3, 2), 5).unwrap();
        let x = GaussianStream::new(3, Stream::Probe).matrix(3, 4, 1.0);
        let op = GramOperator::new(&p, &x).unwrap();
        let h = op.materialize(DEFAULT_GRAM_CAP).unwrap().h;
        let v = GaussianStream::new(4, Stream::Probe).vector(8);
        let a = op.apply(&v).unwrap();
        let b = h.matvec(&v).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12 * (1.0 + y.abs()));
        }
        let (hi, lo) = op.eig_extremes(1e-13).unwrap();
        let (dhi, dlo) = sym_eig_extremes(&h).unwrap();
        assert!((hi - dhi).abs() < 1e-8 * dhi);
        assert!((lo - dlo).abs() < 1e-6 * dhi, "{lo} vs {dlo}");
    }

    #[test]
    fn companion_blocks() {
        let h = Matrix::from_rows(&[&[2.0, 0.5], &[0.5, 1.0]]);
        let g = companion_of(&h, 0.1, 0.0).unwrap().g;
        for i in 0..2 {
            for j in 0..2 {
                let id = if i == j { 1.0 } else { 0.0 };
                assert_eq!(g[(i, j)], id - 0.1 * h[(i, j)]);
                assert_eq!(g[(i, 2 + j)], 0.0);
                assert_eq!(g[(2 + i, j)], id);
                assert_eq!(g[(2 + i, 2 + j)], 0.0);
            }
        }
        // H = I, η = 1: the top row vanishes, so G² v = 0.
        let g = companion_of(&Matrix::identity(2), 1.0, 0.4).unwrap();
        let v = [0.3, -1.0, 2.0, 0.7];
        let g2 = g.apply(&g.apply(&v).unwrap()).unwrap();
        assert!(g2.iter().all(|&x| x == 0.0));
        assert!(companion_of(&h, 0.0, 0.5).is_err());
        assert!(companion_of(&h, 0.1, 1.5).is_err());
    }

    #[test]
    fn scalar_companion_matches_momentum_characteristic_roots() {
        let (lambda, eta, beta) = (3.0, 0.1, 0.6);
        let g = companion_of(&Matrix::from_rows(&[&[lambda]]), eta, beta).unwrap().g;
        let q = 1.0 - eta * lambda;
        assert_eq!(g[(0, 0)], (1.0 + beta) * q);
        assert_eq!(g[(0, 1)], -beta * q);
        // roots of z² − (1+β)q z + βq = 0 via the quadratic formula
        let (b, c) = (-(1.0 + beta) * q, beta * q);
        let disc = b * b - 4.0 * c;
        let (sum, prod) = if disc >= 0.0 {
            let r1 = (-b + disc.sqrt()) / 2.0;
            let r2 = (-b - disc.sqrt()) / 2.0;
            (r1 + r2, r1 * r2)
        } else {
            let re = -b / 2.0;
            let im = (-disc).sqrt() / 2.0;
            (2.0 * re, re * re + im * im)
        };
        let trace = g[(0, 0)] + g[(1, 1)];
        let det = g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(1, 0)];
        assert!((trace - sum).abs() < 1e-14);
        assert!((det - prod).abs() < 1e-14);
    }

    #[test]
    fn worked_power_bound_point() {
        let (rho, c) = power_bound_constants(1.0, 1.0, 0.5, 0.2);
        assert!((rho - 0.1f64.sqrt()).abs() < 1e-12);
        assert!((lemma_g(0.2, 0.5) - 0.04).abs() < 1e-15);
        assert!((c - 11.0).abs() < 1e-12);
        assert!(rho <= 1.0 - 2.0 / 3.0);
        assert!(c <= 12.0);
        let report = power_bound_check(&Matrix::identity(3), 0.5, 0.2, 200, 10, 1).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn unit_momentum_is_rejected() {
        let err = power_bound_check(&Matrix::identity(2), 0.5, 1.0, 10, 2, 0).unwrap_err();
        assert!(matches!(err, NagError::Precondition(_)));
        let err = power_bound_check(&Matrix::identity(2), 3.0, 0.5, 10, 2, 0).unwrap_err();
        assert!(matches!(err, NagError::Precondition(_)));
        // β below (1 − √(ηλ_min)) / (1 + √(ηλ_min))
        let err = power_bound_check(&Matrix::identity(2), 0.01, 0.1, 10, 2, 0).unwrap_err();
        assert!(matches!(err, NagError::Precondition(_)));
    }

    #[test]
    fn random_spd_has_requested_spectrum() {
        let h = random_spd(6, 2.0, 40.0, 3).unwrap();
        let (hi, lo) = sym_eig_extremes(&h).unwrap();
        assert!((hi - 40.0).abs() < 1e-10 && (lo - 2.0).abs() < 1e-10);
    }
}
