//! Deep linear networks: the fully-connected model
//! `U = (m^{L-1} d_y)^{-1/2} · W^L ⋯ W^1 · X` and the linear ResNet
//! `U = B (I + W^L) ⋯ (I + W^1) A X` with `A`, `B` frozen.
//!
//! Both share one factorized form: `U = Out · E^L ⋯ E^1 · Z` where `E^l` is
//! the effective layer (`W^l` or `I + W^l`), `Z` the input (`X` or `A X`)
//! and `Out` the output map (a scalar for FC, `B` for ResNet). Prefix
//! products `P_l = E^{l-1:1} Z` and suffix maps `S_l = Out · E^{L:l+1}` are
//! what gradients, gram matrices and the residual audit are built from.

use serde::{Deserialize, Serialize};

use crate::error::{NagError, Result};
use crate::rng::{GaussianStream, Stream};
use crate::tensor::{matmul, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arch {
    #[serde(rename = "FC")]
    Fc,
    #[serde(rename = "RESNET")]
    ResNet,
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arch::Fc => "FC",
            Arch::ResNet => "RESNET",
        })
    }
}

impl std::str::FromStr for Arch {
    type Err = NagError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FC" => Ok(Arch::Fc),
            "RESNET" | "RES" => Ok(Arch::ResNet),
            other => Err(NagError::Contract(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub arch: Arch,
    /// Number of trainable (hidden) layers `L`.
    #[serde(rename = "L")]
    pub depth: usize,
    /// Width `m`.
    #[serde(rename = "m")]
    pub width: usize,
    pub d_x: usize,
    pub d_y: usize,
}

impl NetworkShape {
    pub fn fc(depth: usize, width: usize, d_x: usize, d_y: usize) -> Self {
        NetworkShape { arch: Arch::Fc, depth, width, d_x, d_y }
    }

    pub fn resnet(depth: usize, width: usize, d_x: usize, d_y: usize) -> Self {
        NetworkShape { arch: Arch::ResNet, depth, width, d_x, d_y }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 || self.d_x == 0 || self.d_y == 0 {
            return Err(NagError::Contract(format!("degenerate network shape {self:?}")));
        }
        Ok(())
    }

    /// `(rows, cols)` of trainable layer `l` (1-based).
    pub fn layer_shape(&self, l: usize) -> (usize, usize) {
        let (m, l_max) = (self.width, self.depth);
        match self.arch {
            Arch::ResNet => (m, m),
            Arch::Fc if l_max == 1 => (self.d_y, self.d_x),
            Arch::Fc if l == 1 => (m, self.d_x),
            Arch::Fc if l == l_max => (self.d_y, m),
            Arch::Fc => (m, m),
        }
    }

    /// FC output scaling `1/√(m^{L-1} d_y)`; 1 for ResNet.
    pub fn fc_scale(&self) -> f64 {
        match self.arch {
            Arch::Fc => 1.0 / ((self.width as f64).powi(self.depth as i32 - 1) * self.d_y as f64).sqrt(),
            Arch::ResNet => 1.0,
        }
    }

    pub fn parameter_count(&self) -> usize {
        (1..=self.depth).map(|l| {
            let (r, c) = self.layer_shape(l);
            r * c
        }).sum()
    }
}

/// Entry standard deviations of the frozen ResNet input (`A`) and output
/// (`B`) maps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResNetInitConfig {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for ResNetInitConfig {
    fn default() -> Self {
        ResNetInitConfig { alpha: 1.0, gamma: 1.0 }
    }
}

impl ResNetInitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.gamma > 0.0) {
            return Err(NagError::Contract(format!("ResNet init scales must be positive, got {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResNetIo {
    /// `m × d_x`
    pub a: Matrix,
    /// `d_y × m`
    pub b: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub shape: NetworkShape,
    pub hidden: Vec<Matrix>,
    pub io: Option<ResNetIo>,
    pub seed: Option<u64>,
}

/// Training data with an exact linear teacher: `Y = W* X`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Matrix,
    pub w_star: Matrix,
    pub rank: usize,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.cols()
    }
}

pub fn init_fc_gaussian(shape: NetworkShape, seed: u64) -> Result<NetworkParams> {
    shape.validate()?;
    if shape.arch != Arch::Fc {
        return Err(NagError::Precondition("init_fc_gaussian needs an FC shape".into()));
    }
    let mut g = GaussianStream::new(seed, Stream::Layers);
    let hidden = (1..=shape.depth)
        .map(|l| {
            let (r, c) = shape.layer_shape(l);
            g.matrix(r, c, 1.0)
        })
        .collect();
    Ok(NetworkParams { shape, hidden, io: None, seed: Some(seed) })
}

/// Zero hidden layers; `A ~ N(0, α²)`, `B ~ N(0, γ²)` entry-wise.
pub fn init_resnet(shape: NetworkShape, cfg: ResNetInitConfig, seed: u64) -> Result<NetworkParams> {
    shape.validate()?;
    cfg.validate()?;
    if shape.arch != Arch::ResNet {
        return Err(NagError::Precondition("init_resnet needs a RESNET shape".into()));
    }
    let m = shape.width;
    let mut g = GaussianStream::new(seed, Stream::ResNetIo);
    let a = g.matrix(m, shape.d_x, cfg.alpha);
    let b = g.matrix(shape.d_y, m, cfg.gamma);
    let hidden = (0..shape.depth).map(|_| Matrix::zeros(m, m)).collect();
    Ok(NetworkParams { shape, hidden, io: Some(ResNetIo { a, b }), seed: Some(seed) })
}

impl NetworkParams {
    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if self.hidden.len() != self.shape.depth {
            return Err(NagError::Contract(format!(
                "expected {} layers, found {}",
                self.shape.depth,
                self.hidden.len()
            )));
        }
        for (i, w) in self.hidden.iter().enumerate() {
            let want = self.shape.layer_shape(i + 1);
            if w.shape() != want {
                return Err(NagError::dim("layer shape", w.shape(), want));
            }
        }
        match (&self.io, self.shape.arch) {
            (None, Arch::Fc) => Ok(()),
            (Some(io), Arch::ResNet) => {
                let m = self.shape.width;
                if io.a.shape() != (m, self.shape.d_x) {
                    return Err(NagError::dim("ResNet A", io.a.shape(), (m, self.shape.d_x)));
                }
                if io.b.shape() != (self.shape.d_y, m) {
                    return Err(NagError::dim("ResNet B", io.b.shape(), (self.shape.d_y, m)));
                }
                Ok(())
            }
            (Some(_), Arch::Fc) => Err(NagError::Contract("FC network carries A/B maps".into())),
            (None, Arch::ResNet) => Err(NagError::Contract("ResNet is missing its A/B maps".into())),
        }
    }

    /// Same architecture and frozen maps, different trainable layers.
    pub fn with_hidden(&self, hidden: Vec<Matrix>) -> NetworkParams {
        NetworkParams { shape: self.shape, hidden, io: self.io.clone(), seed: self.seed }
    }

    pub fn io(&self) -> Option<&ResNetIo> {
        self.io.as_ref()
    }

    /// Effective layer `E^l` applied from the left: `E^l · p`.
    pub(crate) fn apply_layer(&self, l: usize, p: &Matrix) -> Result<Matrix> {
        let wp = matmul(&self.hidden[l - 1], p)?;
        match self.shape.arch {
            Arch::Fc => Ok(wp),
            Arch::ResNet => wp.try_add(p),
        }
    }

    /// Effective layer `E^l` applied from the right: `s · E^l`.
    pub(crate) fn apply_layer_right(&self, s: &Matrix, l: usize) -> Result<Matrix> {
        let sw = matmul(s, &self.hidden[l - 1])?;
        match self.shape.arch {
            Arch::Fc => Ok(sw),
            Arch::ResNet => sw.try_add(s),
        }
    }

    /// Network input `Z`: `X` for FC, `A X` for ResNet.
    pub(crate) fn input_map(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.shape.d_x {
            return Err(NagError::dim("forward input", x.shape(), (self.shape.d_x, x.cols())));
        }
        match &self.io {
            Some(io) => matmul(&io.a, x),
            None => Ok(x.clone()),
        }
    }

    /// The output map `Out` as an explicit matrix: `s·I_{d_y}` or `B`.
    pub(crate) fn output_matrix(&self) -> Matrix {
        match &self.io {
            Some(io) => io.b.clone(),
            None => Matrix::identity(self.shape.d_y).scale(self.shape.fc_scale()),
        }
    }

    /// Applies `Out` to the top of the effective chain.
    pub(crate) fn apply_output(&self, top: &Matrix) -> Result<Matrix> {
        match &self.io {
            Some(io) => matmul(&io.b, top),
            None => Ok(top.scale(self.shape.fc_scale())),
        }
    }

    pub fn factorize(&self, x: &Matrix) -> Result<Factorization> {
        Factorization::new(self, x)
    }
}

/// Prefix and suffix products of a network evaluated on fixed inputs.
#[derive(Clone, Debug)]
pub struct Factorization {
    /// `prefixes[l-1] = E^{l-1:1} Z` for `l = 1..=L+1`.
    pub prefixes: Vec<Matrix>,
    /// `suffixes[l-1] = Out · E^{L:l+1}` for `l = 1..=L`.
    pub suffixes: Vec<Matrix>,
    pub output: Matrix,
}

impl Factorization {
    pub fn new(params: &NetworkParams, x: &Matrix) -> Result<Self> {
        let depth = params.shape.depth;
        let mut prefixes = Vec::with_capacity(depth + 1);
        prefixes.push(params.input_map(x)?);
        for l in 1..=depth {
            let next = params.apply_layer(l, &prefixes[l - 1])?;
            prefixes.push(next);
        }
        let mut suffixes = vec![Matrix::zeros(0, 0); depth];
        suffixes[depth - 1] = params.output_matrix();
        for l in (1..depth).rev() {
            suffixes[l - 1] = params.apply_layer_right(&suffixes[l], l + 1)?;
        }
        let output = params.apply_output(&prefixes[depth])?;
        Ok(Factorization { prefixes, suffixes, output })
    }

    /// `E^{l-1:1} Z`.
    pub fn prefix(&self, l: usize) -> &Matrix {
        &self.prefixes[l - 1]
    }

    /// `Out · E^{L:l+1}`.
    pub fn suffix(&self, l: usize) -> &Matrix {
        &self.suffixes[l - 1]
    }

    /// `Σ_l S_l · D^l · P_l` for per-layer matrices `D^l` shaped like the
    /// trainable layers: the first-order change of `U` along direction `D`.
    pub fn transport(&self, directions: &[Matrix]) -> Result<Matrix> {
        let mut acc: Option<Matrix> = None;
        for (i, d) in directions.iter().enumerate() {
            let l = i + 1;
            let term = matmul(self.suffix(l), &matmul(d, self.prefix(l))?)?;
            acc = Some(match acc {
                None => term,
                Some(a) => a.try_add(&term)?,
            });
        }
        acc.ok_or_else(|| NagError::Contract("transport over zero layers".into()))
    }

    /// Per-layer gradients of `½‖U − Y‖²_F`: `S_lᵀ (U − Y) P_lᵀ`.
    pub fn gradients(&self, y: &Matrix) -> Result<Vec<Matrix>> {
        let resid = self.output.try_sub(y).map_err(|_| NagError::dim("residual", self.output.shape(), y.shape()))?;
        (1..=self.suffixes.len())
            .map(|l| {
                let left = matmul(&self.suffix(l).transpose(), &resid)?;
                matmul(&left, &self.prefix(l).transpose())
            })
            .collect()
    }
}

pub fn forward(params: &NetworkParams, x: &Matrix) -> Result<Matrix> {
    let mut top = params.input_map(x)?;
    for l in 1..=params.shape.depth {
        top = params.apply_layer(l, &top)?;
    }
    params.apply_output(&top)
}

/// `½ ‖U − Y‖²_F`.
pub fn loss(u: &Matrix, y: &Matrix) -> Result<f64> {
    if u.shape() != y.shape() {
        return Err(NagError::dim("loss", u.shape(), y.shape()));
    }
    Ok(0.5 * u.as_slice().iter().zip(y.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
}

/// Gradient of the square loss with respect to each trainable layer, each
/// with exactly that layer's shape (the Frobenius-inner-product gradient).
pub fn layer_gradients(params: &NetworkParams, x: &Matrix, y: &Matrix) -> Result<Vec<Matrix>> {
    if y.shape() != (params.shape.d_y, x.cols()) {
        return Err(NagError::dim("layer_gradients labels", y.shape(), (params.shape.d_y, x.cols())));
    }
    Factorization::new(params, x)?.gradients(y)
}

// JSON document: {arch, L, m, d_x, d_y, layers, A?, B?, seed?}; matrices are
// flat column-major arrays whose shapes follow from the header.
#[derive(Serialize, Deserialize)]
struct ParamsDoc {
    arch: Arch,
    #[serde(rename = "L")]
    depth: usize,
    m: usize,
    d_x: usize,
    d_y: usize,
    layers: Vec<Vec<f64>>,
    #[serde(rename = "A", skip_serializing_if = "Option::is_none", default)]
    a: Option<Vec<f64>>,
    #[serde(rename = "B", skip_serializing_if = "Option::is_none", default)]
    b: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    seed: Option<u64>,
}

impl Serialize for NetworkParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ParamsDoc {
            arch: self.shape.arch,
            depth: self.shape.depth,
            m: self.shape.width,
            d_x: self.shape.d_x,
            d_y: self.shape.d_y,
            layers: self.hidden.iter().map(|w| w.as_slice().to_vec()).collect(),
            a: self.io.as_ref().map(|io| io.a.as_slice().to_vec()),
            b: self.io.as_ref().map(|io| io.b.as_slice().to_vec()),
            seed: self.seed,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for NetworkParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let doc = ParamsDoc::deserialize(d)?;
        let shape = NetworkShape { arch: doc.arch, depth: doc.depth, width: doc.m, d_x: doc.d_x, d_y: doc.d_y };
        let hidden = doc
            .layers
            .into_iter()
            .enumerate()
            .map(|(i, data)| {
                let (r, c) = shape.layer_shape(i + 1);
                Matrix::from_col_major(r, c, data)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        let io = match (doc.a, doc.b) {
            (Some(a), Some(b)) => Some(ResNetIo {
                a: Matrix::from_col_major(doc.m, doc.d_x, a).map_err(D::Error::custom)?,
                b: Matrix::from_col_major(doc.d_y, doc.m, b).map_err(D::Error::custom)?,
            }),
            (None, None) => None,
            _ => return Err(D::Error::custom("A and B must be given together")),
        };
        let params = NetworkParams { shape, hidden, io, seed: doc.seed };
        params.validate().map_err(D::Error::custom)?;
        Ok(params)
    }
}
