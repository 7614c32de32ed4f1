//! Gradient descent, Nesterov's accelerated gradient in its two published
//! forms, and heavy-ball momentum, written as pure step functions over the
//! trainable layers of a [`NetworkParams`].
//!
//! Momentum-buffer NAG:
//!
//! ```text
//! M_t     = β M_{t-1} − ηβ (∇ℓ(w_t) − ∇ℓ(w_{t-1})) − η ∇ℓ(w_t)
//! w_{t+1} = w_t + M_t                      with M_{-1} = 0, w_{-1} = w_0
//! ```
//!
//! Two-sequence NAG:
//!
//! ```text
//! v_{t+1} = w_t − η ∇ℓ(w_t)
//! w_{t+1} = v_{t+1} + β (v_{t+1} − v_t)
//! ```
//!
//! The two produce the same `w`-iterates on any loss exactly when
//! `v_0 = w_{-1} − η∇ℓ(w_{-1}) = w_0 − η∇ℓ(w_0)`; that is the default
//! [`TwoSequenceStart::Consistent`]. [`TwoSequenceStart::Literal`] starts
//! from `v_0 = w_0` instead, which agrees with the momentum form only on
//! quadratics and only after re-indexing.

use serde::{Deserialize, Serialize};

use crate::error::{NagError, Result};
use crate::model::NetworkParams;
use crate::tensor::Matrix;

/// Parameter norm beyond which a step reports divergence.
pub const DIVERGENCE_NORM: f64 = 1e12;
pub const STATE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OptimizerKind {
    Gd,
    NagTwoSequence,
    NagMomentum,
    #[serde(rename = "HB")]
    HeavyBall,
}

impl OptimizerKind {
    pub fn is_nag(self) -> bool {
        matches!(self, OptimizerKind::NagTwoSequence | OptimizerKind::NagMomentum)
    }

    pub fn label(self) -> &'static str {
        match self {
            OptimizerKind::Gd => "gd",
            OptimizerKind::NagTwoSequence => "nag2",
            OptimizerKind::NagMomentum => "nag",
            OptimizerKind::HeavyBall => "hb",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwoSequenceStart {
    #[default]
    Consistent,
    Literal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    /// Format version of the serialized state.
    pub v: u32,
    pub kind: OptimizerKind,
    pub eta: f64,
    pub beta: f64,
    pub t: usize,
    /// `w_{t-1}`; equals `w_0` at `t = 0`.
    pub prev_params: Vec<Matrix>,
    /// `M_{t-1}` per layer (momentum form); zero at `t = 0`.
    pub momentum: Vec<Matrix>,
    /// `v_t` for the two-sequence form; `None` until the first step.
    pub aux_v: Option<Vec<Matrix>>,
    /// `∇ℓ(w_{t-1})`, cached by the momentum form.
    pub prev_grad: Option<Vec<Matrix>>,
    #[serde(default)]
    pub two_sequence_start: TwoSequenceStart,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, eta: f64, beta: f64, params: &NetworkParams) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(NagError::Precondition(format!("learning rate must be positive, got {eta}")));
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(NagError::Precondition(format!("momentum must lie in [0, 1], got {beta}")));
        }
        Ok(OptimizerState {
            v: STATE_FORMAT_VERSION,
            kind,
            eta,
            beta,
            t: 0,
            prev_params: params.hidden.clone(),
            momentum: params.hidden.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect(),
            aux_v: None,
            prev_grad: None,
            two_sequence_start: TwoSequenceStart::default(),
        })
    }

    pub fn with_two_sequence_start(mut self, start: TwoSequenceStart) -> Self {
        self.two_sequence_start = start;
        self
    }
}

fn require(state: &OptimizerState, kind: OptimizerKind) -> Result<()> {
    if state.kind != kind {
        return Err(NagError::Precondition(format!("state is {:?}, step expects {kind:?}", state.kind)));
    }
    Ok(())
}

fn check_grads(params: &NetworkParams, grads: &[Matrix]) -> Result<()> {
    if grads.len() != params.hidden.len() {
        return Err(NagError::Contract(format!(
            "{} gradients for {} layers",
            grads.len(),
            params.hidden.len()
        )));
    }
    for (i, (g, w)) in grads.iter().zip(&params.hidden).enumerate() {
        if g.shape() != w.shape() {
            return Err(NagError::dim("gradient", g.shape(), w.shape()));
        }
        if !g.is_finite() {
            return Err(NagError::Divergence { layer: i + 1, reason: "non-finite gradient".into() });
        }
    }
    Ok(())
}

fn guard(layers: &[Matrix]) -> Result<()> {
    for (i, w) in layers.iter().enumerate() {
        let n = w.frobenius_norm();
        if !n.is_finite() || n > DIVERGENCE_NORM {
            return Err(NagError::Divergence { layer: i + 1, reason: format!("parameter norm {n:e}") });
        }
    }
    Ok(())
}

fn zip_layers(a: &[Matrix], b: &[Matrix], f: impl Fn(f64, f64) -> f64 + Copy) -> Vec<Matrix> {
    a.iter().zip(b).map(|(x, y)| x.zip_with(y, f).expect("layer shapes agree")).collect()
}

/// `w_{t+1} = w_t − η ∇ℓ(w_t)`.
pub fn gd_step(params: &NetworkParams, state: &OptimizerState, grads: &[Matrix]) -> Result<(NetworkParams, OptimizerState)> {
    require(state, OptimizerKind::Gd)?;
    check_grads(params, grads)?;
    let eta = state.eta;
    let next = zip_layers(&params.hidden, grads, |w, g| w - eta * g);
    guard(&next)?;
    let mut s = state.clone();
    s.prev_params = params.hidden.clone();
    s.t += 1;
    Ok((params.with_hidden(next), s))
}

pub fn nag_step_two_sequence(
    params: &NetworkParams,
    state: &OptimizerState,
    grad_fn: &dyn Fn(&NetworkParams) -> Result<Vec<Matrix>>,
) -> Result<(NetworkParams, OptimizerState)> {
    require(state, OptimizerKind::NagTwoSequence)?;
    let grads = grad_fn(params)?;
    check_grads(params, &grads)?;
    let (eta, beta) = (state.eta, state.beta);
    let v_next = zip_layers(&params.hidden, &grads, |w, g| w - eta * g);
    let v_prev = match (&state.aux_v, state.two_sequence_start) {
        (Some(v), _) => v.clone(),
        (None, TwoSequenceStart::Consistent) => v_next.clone(),
        (None, TwoSequenceStart::Literal) => params.hidden.clone(),
    };
    let next = zip_layers(&v_next, &v_prev, |vn, vp| vn + beta * (vn - vp));
    guard(&next)?;
    let mut s = state.clone();
    s.prev_params = params.hidden.clone();
    s.aux_v = Some(v_next);
    s.t += 1;
    Ok((params.with_hidden(next), s))
}

pub fn nag_step_momentum(
    params: &NetworkParams,
    state: &OptimizerState,
    grad_fn: &dyn Fn(&NetworkParams) -> Result<Vec<Matrix>>,
) -> Result<(NetworkParams, OptimizerState)> {
    require(state, OptimizerKind::NagMomentum)?;
    let grads = grad_fn(params)?;
    check_grads(params, &grads)?;
    let (eta, beta) = (state.eta, state.beta);
    // ∇ℓ(w_{-1}) = ∇ℓ(w_0) because w_{-1} = w_0.
    let prev_grad = state.prev_grad.as_ref().unwrap_or(&grads);
    let momentum: Vec<Matrix> = state
        .momentum
        .iter()
        .zip(grads.iter().zip(prev_grad))
        .map(|(m, (g, gp))| {
            let corr = g.zip_with(gp, |a, b| a - b).expect("layer shapes agree");
            let mg = m.zip_with(&corr, |mi, ci| beta * mi - eta * beta * ci).expect("layer shapes agree");
            mg.zip_with(g, |x, gi| x - eta * gi).expect("layer shapes agree")
        })
        .collect();
    let next = zip_layers(&params.hidden, &momentum, |w, m| w + m);
    guard(&next)?;
    let mut s = state.clone();
    s.prev_params = params.hidden.clone();
    s.momentum = momentum;
    s.prev_grad = Some(grads);
    s.t += 1;
    Ok((params.with_hidden(next), s))
}

/// `w_{t+1} = w_t − η ∇ℓ(w_t) + β (w_t − w_{t-1})`.
pub fn hb_step(params: &NetworkParams, state: &OptimizerState, grads: &[Matrix]) -> Result<(NetworkParams, OptimizerState)> {
    require(state, OptimizerKind::HeavyBall)?;
    check_grads(params, grads)?;
    let (eta, beta) = (state.eta, state.beta);
    let stepped = zip_layers(&params.hidden, grads, |w, g| w - eta * g);
    let kick = zip_layers(&params.hidden, &state.prev_params, |w, wp| beta * (w - wp));
    let next = zip_layers(&stepped, &kick, |a, b| a + b);
    guard(&next)?;
    let mut s = state.clone();
    s.prev_params = params.hidden.clone();
    s.t += 1;
    Ok((params.with_hidden(next), s))
}

/// Dispatches on `state.kind`.
pub fn step(
    params: &NetworkParams,
    state: &OptimizerState,
    grad_fn: &dyn Fn(&NetworkParams) -> Result<Vec<Matrix>>,
) -> Result<(NetworkParams, OptimizerState)> {
    match state.kind {
        OptimizerKind::Gd => gd_step(params, state, &grad_fn(params)?),
        OptimizerKind::HeavyBall => hb_step(params, state, &grad_fn(params)?),
        OptimizerKind::NagTwoSequence => nag_step_two_sequence(params, state, grad_fn),
        OptimizerKind::NagMomentum => nag_step_momentum(params, state, grad_fn),
    }
}

/// Parameters and optimizer state saved together for resuming a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub v: u32,
    pub params: NetworkParams,
    pub state: OptimizerState,
}

impl Checkpoint {
    pub fn new(params: NetworkParams, state: OptimizerState) -> Self {
        Checkpoint { v: STATE_FORMAT_VERSION, params, state }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NetworkShape, NetworkParams};

    fn scalar(w: f64) -> NetworkParams {
        NetworkParams {
            shape: NetworkShape::fc(1, 1, 1, 1),
            hidden: vec![Matrix::from_rows(&[&[w]])],
            io: None,
            seed: None,
        }
    }

    fn w(p: &NetworkParams) -> f64 {
        p.hidden[0][(0, 0)]
    }

    // ℓ = ½ (w − target)²
    fn quad(target: f64) -> impl Fn(&NetworkParams) -> Result<Vec<Matrix>> {
        move |p| Ok(vec![Matrix::from_rows(&[&[w(p) - target]])])
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-15
    }

    #[test]
    fn gd_scalar() {
        let p0 = scalar(0.0);
        let s0 = OptimizerState::new(OptimizerKind::Gd, 0.5, 0.0, &p0).unwrap();
        let g = quad(1.0);
        let (p1, s1) = gd_step(&p0, &s0, &g(&p0).unwrap()).unwrap();
        assert_eq!(w(&p1), 0.5);
        let (p2, _) = gd_step(&p1, &s1, &g(&p1).unwrap()).unwrap();
        assert_eq!(w(&p2), 0.75);
        let (same, _) = gd_step(&p2, &s0, &[Matrix::zeros(1, 1)]).unwrap();
        assert_eq!(same, p2);
    }

    #[test]
    fn two_sequence_literal_start_matches_hand_iteration() {
        let p0 = scalar(1.0);
        let s0 = OptimizerState::new(OptimizerKind::NagTwoSequence, 0.1, 0.5, &p0)
            .unwrap()
            .with_two_sequence_start(TwoSequenceStart::Literal);
        let (p1, s1) = nag_step_two_sequence(&p0, &s0, &quad(0.0)).unwrap();
        assert!(close(s1.aux_v.as_ref().unwrap()[0][(0, 0)], 0.9));
        assert!(close(w(&p1), 0.85));
    }

    #[test]
    fn momentum_form_matches_hand_iteration() {
        let p0 = scalar(1.0);
        let s0 = OptimizerState::new(OptimizerKind::NagMomentum, 0.1, 0.5, &p0).unwrap();
        let (p1, s1) = nag_step_momentum(&p0, &s0, &quad(0.0)).unwrap();
        assert!(close(w(&p1), 0.9));
        let (p2, s2) = nag_step_momentum(&p1, &s1, &quad(0.0)).unwrap();
        assert!(close(s2.momentum[0][(0, 0)], -0.135));
        assert!(close(w(&p2), 0.765));
    }

    #[test]
    fn consistent_two_sequence_start_reaches_same_second_iterate() {
        let p0 = scalar(1.0);
        let s0 = OptimizerState::new(OptimizerKind::NagTwoSequence, 0.1, 0.5, &p0).unwrap();
        let (p1, s1) = nag_step_two_sequence(&p0, &s0, &quad(0.0)).unwrap();
        assert!(close(w(&p1), 0.9));
        let (p2, _) = nag_step_two_sequence(&p1, &s1, &quad(0.0)).unwrap();
        assert!(close(w(&p2), 0.765));
    }

    #[test]
    fn heavy_ball_scalar() {
        let p0 = scalar(1.0);
        let s0 = OptimizerState::new(OptimizerKind::HeavyBall, 0.1, 0.5, &p0).unwrap();
        let g = quad(0.0);
        let (p1, s1) = hb_step(&p0, &s0, &g(&p0).unwrap()).unwrap();
        assert!(close(w(&p1), 0.9));
        let (p2, _) = hb_step(&p1, &s1, &g(&p1).unwrap()).unwrap();
        assert!(close(w(&p2), 0.76));
    }

    #[test]
    fn heavy_ball_coasts_geometrically_without_gradient() {
        let zero = |_: &NetworkParams| Ok(vec![Matrix::zeros(1, 1)]);
        let mut p = scalar(1.0);
        let mut s = OptimizerState::new(OptimizerKind::HeavyBall, 0.1, 0.5, &p).unwrap();
        s.prev_params = vec![Matrix::from_rows(&[&[0.0]])]; // initial kick of +1
        let mut prev = 0.0;
        for k in 1..10 {
            let before = w(&p);
            let (np, ns) = step(&p, &s, &zero).unwrap();
            p = np;
            s = ns;
            let delta = w(&p) - before;
            assert!(close(delta, 0.5f64.powi(k)), "k={k} delta={delta}");
            prev = delta;
        }
        assert!(prev > 0.0);
    }

    #[test]
    fn zero_momentum_reduces_to_gd_bitwise() {
        let g = |p: &NetworkParams| Ok(vec![Matrix::from_rows(&[&[w(p).powi(3) - 0.3]])]);
        for kind in [OptimizerKind::NagMomentum, OptimizerKind::NagTwoSequence, OptimizerKind::HeavyBall] {
            let (mut a, mut b) = (scalar(1.2), scalar(1.2));
            let mut sa = OptimizerState::new(kind, 0.05, 0.0, &a).unwrap();
            let mut sb = OptimizerState::new(OptimizerKind::Gd, 0.05, 0.0, &b).unwrap();
            for _ in 0..50 {
                (a, sa) = step(&a, &sa, &g).unwrap();
                (b, sb) = step(&b, &sb, &g).unwrap();
                assert_eq!(w(&a), w(&b), "{kind:?}");
            }
        }
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let p = scalar(1.0);
        let s = OptimizerState::new(OptimizerKind::Gd, 0.1, 0.0, &p).unwrap();
        assert!(matches!(nag_step_momentum(&p, &s, &quad(0.0)), Err(NagError::Precondition(_))));
        assert!(OptimizerState::new(OptimizerKind::Gd, 0.0, 0.0, &p).is_err());
        assert!(OptimizerState::new(OptimizerKind::Gd, 0.1, 1.5, &p).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let p = scalar(1.0);
        let s = OptimizerState::new(OptimizerKind::Gd, 1.0, 0.0, &p).unwrap();
        let err = gd_step(&p, &s, &[Matrix::from_rows(&[&[f64::NAN]])]).unwrap_err();
        assert!(matches!(err, NagError::Divergence { layer: 1, .. }));
        let err = gd_step(&p, &s, &[Matrix::from_rows(&[&[-2e12]])]).unwrap_err();
        assert!(matches!(err, NagError::Divergence { layer: 1, .. }));
    }

    #[test]
    fn state_round_trips_through_json() {
        let p0 = scalar(1.0);
        let s0 = OptimizerState::new(OptimizerKind::NagMomentum, 0.1, 0.5, &p0).unwrap();
        let (p1, s1) = nag_step_momentum(&p0, &s0, &quad(0.0)).unwrap();
        let ck = Checkpoint::new(p1, s1);
        let text = serde_json::to_string(&ck).unwrap();
        assert!(text.contains("\"v\":1"));
        let back: Checkpoint = serde_json::from_str(&text).unwrap();
        assert_eq!(back, ck);
    }
}
