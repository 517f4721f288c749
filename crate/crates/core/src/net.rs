//! Network, dataset and loss for `y = H rho(W x)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

/// Default relative tolerance for treating `w . x` as zero.
pub const DEFAULT_TOL_ACT: f64 = 1e-12;

/// Piecewise-linear activation `rho(z) = alpha_plus * z` for `z >= 0`, `alpha_minus * z` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    alpha_plus: f64,
    alpha_minus: f64,
}

impl Activation {
    pub fn new(alpha_plus: f64, alpha_minus: f64) -> Result<Self> {
        if !alpha_plus.is_finite() || !alpha_minus.is_finite() {
            return Err(Error::Contract("activation slopes must be finite".into()));
        }
        if alpha_plus == alpha_minus {
            return Err(Error::Contract("alpha_plus must differ from alpha_minus".into()));
        }
        Ok(Self { alpha_plus, alpha_minus })
    }

    pub fn relu() -> Self {
        Self { alpha_plus: 1.0, alpha_minus: 0.0 }
    }

    pub fn alpha_plus(&self) -> f64 {
        self.alpha_plus
    }

    pub fn alpha_minus(&self) -> f64 {
        self.alpha_minus
    }

    #[inline]
    pub fn rho(&self, z: f64) -> f64 {
        if z >= 0.0 {
            self.alpha_plus * z
        } else {
            self.alpha_minus * z
        }
    }

    /// Slope selected by a sign in {-1, 0, +1}; zero maps to `alpha_plus`
    /// to match the tie rule of [`Activation::rho`].
    #[inline]
    pub fn slope(&self, sign: i8) -> f64 {
        if sign >= 0 {
            self.alpha_plus
        } else {
            self.alpha_minus
        }
    }

    /// `rho` evaluated on the branch chosen by `sign`, falling back to `rho`
    /// itself when `sign` is zero.
    #[inline]
    pub fn rho_on(&self, sign: i8, z: f64) -> f64 {
        match sign {
            1 => self.alpha_plus * z,
            -1 => self.alpha_minus * z,
            _ => self.rho(z),
        }
    }
}

/// One-hidden-layer network. Row `i` of `w` is the input weight of neuron
/// `i`; entry `(j, i)` of `h` is its weight into output `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub(crate) w: Array2<f64>,
    pub(crate) h: Array2<f64>,
    pub(crate) activation: Activation,
}

impl Network {
    pub fn new(w: Array2<f64>, h: Array2<f64>, activation: Activation) -> Result<Self> {
        if w.ncols() < 2 {
            return Err(Error::Contract(format!("input dimension must exceed 1, got {}", w.ncols())));
        }
        if w.nrows() == 0 || h.nrows() == 0 {
            return Err(Error::Contract("network needs at least one hidden neuron and one output".into()));
        }
        if h.ncols() != w.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "H has {} columns but W has {} rows",
                h.ncols(),
                w.nrows()
            )));
        }
        if w.iter().chain(h.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Contract("network entries must be finite".into()));
        }
        Ok(Self { w, h, activation })
    }

    /// Network with every parameter zero.
    pub fn zeros(d: usize, hidden: usize, outputs: usize, activation: Activation) -> Result<Self> {
        Self::new(Array2::zeros((hidden, d)), Array2::zeros((outputs, hidden)), activation)
    }

    pub fn w(&self) -> ArrayView2<'_, f64> {
        self.w.view()
    }

    pub fn h(&self) -> ArrayView2<'_, f64> {
        self.h.view()
    }

    pub fn w_row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.w.row(i)
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.h.nrows()
    }

    /// Parameter count `|I| d + |J| |I|`.
    pub fn param_count(&self) -> usize {
        self.w.len() + self.h.len()
    }

    /// Returns `self + eps * (dw, dh)`.
    pub fn perturbed(&self, dw: ArrayView2<f64>, dh: ArrayView2<f64>, eps: f64) -> Network {
        let mut out = self.clone();
        out.w.scaled_add(eps, &dw);
        out.h.scaled_add(eps, &dh);
        out
    }

    pub fn into_parts(self) -> (Array2<f64>, Array2<f64>, Activation) {
        (self.w, self.h, self.activation)
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let hidden = self.w.dot(&x).mapv(|z| self.activation.rho(z));
        Ok(self.h.dot(&hidden))
    }

    /// Outputs for every row of `x`, shape `|K| x |J|`.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "inputs have {} columns, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        // fixed summation order over neurons: appending a silent neuron leaves outputs bit-identical
        let mut out = Array2::zeros((x.nrows(), self.outputs()));
        for (k, xk) in x.axis_iter(Axis(0)).enumerate() {
            for (i, w) in self.w.axis_iter(Axis(0)).enumerate() {
                let a = self.activation.rho(dot(w, xk));
                for j in 0..self.outputs() {
                    out[[k, j]] += self.h[[j, i]] * a;
                }
            }
        }
        Ok(out)
    }
}

/// Training inputs (rows of `x`) and targets (rows of `y`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub(crate) x: Array2<f64>,
    pub(crate) y: Array2<f64>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array2<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Contract("dataset needs at least one sample".into()));
        }
        if x.nrows() != y.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "X has {} rows but Y has {}",
                x.nrows(),
                y.nrows()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Contract("dataset entries must be finite".into()));
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> ArrayView2<'_, f64> {
        self.y.view()
    }

    pub fn samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.y.ncols()
    }

    pub(crate) fn check(&self, net: &Network) -> Result<()> {
        if self.input_dim() != net.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "dataset input dimension {} differs from network input dimension {}",
                self.input_dim(),
                net.input_dim()
            )));
        }
        if self.outputs() != net.outputs() {
            return Err(Error::DimensionMismatch(format!(
                "dataset has {} targets per sample, network has {} outputs",
                self.outputs(),
                net.outputs()
            )));
        }
        Ok(())
    }
}

/// `e_kj = yhat_kj - y_kj`, shape `|K| x |J|`.
pub fn residuals(net: &Network, data: &Dataset) -> Result<Array2<f64>> {
    data.check(net)?;
    Ok(net.predict(data.x())? - &data.y)
}

/// `0.5 * sum_k |yhat_k - y_k|^2`.
pub fn loss(net: &Network, data: &Dataset) -> Result<f64> {
    let e = residuals(net, data)?;
    Ok(0.5 * e.iter().map(|v| v * v).sum::<f64>())
}

/// Sign of `w_i . x_k` per neuron and sample, with relative zero band.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationPattern {
    signs: Array2<i8>,
}

impl ActivationPattern {
    pub fn sign(&self, i: usize, k: usize) -> i8 {
        self.signs[[i, k]]
    }

    pub fn signs(&self) -> ArrayView2<'_, i8> {
        self.signs.view()
    }

    /// Samples on the boundary of neuron `i`.
    pub fn boundary(&self, i: usize) -> Vec<usize> {
        self.signs
            .row(i)
            .iter()
            .enumerate()
            .filter_map(|(k, &s)| (s == 0).then_some(k))
            .collect()
    }
}

/// Classifies `w . x` with the relative band `|w . x| <= tol * |w| |x|`.
#[inline]
pub fn sign_with_tol(w: ArrayView1<f64>, x: ArrayView1<f64>, tol: f64) -> i8 {
    let z = dot(w, x);
    let band = tol * norm(w) * norm(x);
    if z.abs() <= band || z == 0.0 {
        0
    } else if z > 0.0 {
        1
    } else {
        -1
    }
}

pub fn activation_pattern(net: &Network, data: &Dataset, tol_act: f64) -> ActivationPattern {
    let mut signs = Array2::<i8>::zeros((net.hidden(), data.samples()));
    for (i, w) in net.w.axis_iter(Axis(0)).enumerate() {
        for (k, x) in data.x.axis_iter(Axis(0)).enumerate() {
            signs[[i, k]] = sign_with_tol(w, x, tol_act);
        }
    }
    ActivationPattern { signs }
}

#[derive(Serialize, Deserialize)]
struct CheckpointJson {
    version: u32,
    alpha_plus: f64,
    alpha_minus: f64,
    d: usize,
    #[serde(rename = "I")]
    hidden: usize,
    #[serde(rename = "J")]
    outputs: usize,
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    h: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct DatasetJson {
    #[serde(rename = "X")]
    x: Vec<Vec<f64>>,
    #[serde(rename = "Y")]
    y: Vec<Vec<f64>>,
}

const CHECKPOINT_VERSION: u32 = 1;

fn to_rows(a: ArrayView2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(rows: Vec<Vec<f64>>, cols: usize, what: &'static str) -> Result<Array2<f64>> {
    let n = rows.len();
    let mut flat = Vec::with_capacity(n * cols);
    for (r, row) in rows.into_iter().enumerate() {
        if row.len() != cols {
            return Err(Error::Parse { what, reason: format!("row {r} has {} entries, expected {cols}", row.len()) });
        }
        flat.extend(row);
    }
    Array2::from_shape_vec((n, cols), flat).map_err(|e| Error::Parse { what, reason: e.to_string() })
}

pub fn save_checkpoint(net: &Network) -> Vec<u8> {
    let doc = CheckpointJson {
        version: CHECKPOINT_VERSION,
        alpha_plus: net.activation.alpha_plus,
        alpha_minus: net.activation.alpha_minus,
        d: net.input_dim(),
        hidden: net.hidden(),
        outputs: net.outputs(),
        w: to_rows(net.w()),
        h: to_rows(net.h()),
    };
    serde_json::to_vec(&doc).expect("checkpoint serialization cannot fail for finite values")
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Network> {
    let what = "checkpoint";
    let doc: CheckpointJson =
        serde_json::from_slice(bytes).map_err(|e| Error::Parse { what, reason: e.to_string() })?;
    if doc.version != CHECKPOINT_VERSION {
        return Err(Error::Parse { what, reason: format!("unsupported version {}", doc.version) });
    }
    if doc.w.len() != doc.hidden || doc.h.len() != doc.outputs {
        return Err(Error::Parse { what, reason: "row counts disagree with I/J header".into() });
    }
    let w = from_rows(doc.w, doc.d, what)?;
    let h = from_rows(doc.h, doc.hidden, what)?;
    let act = Activation::new(doc.alpha_plus, doc.alpha_minus)
        .map_err(|e| Error::Parse { what, reason: e.to_string() })?;
    Network::new(w, h, act).map_err(|e| Error::Parse { what, reason: e.to_string() })
}

pub fn save_dataset(data: &Dataset) -> Vec<u8> {
    let doc = DatasetJson { x: to_rows(data.x()), y: to_rows(data.y()) };
    serde_json::to_vec(&doc).expect("dataset serialization cannot fail for finite values")
}

pub fn load_dataset(bytes: &[u8]) -> Result<Dataset> {
    let what = "dataset";
    let doc: DatasetJson = serde_json::from_slice(bytes).map_err(|e| Error::Parse { what, reason: e.to_string() })?;
    let d = doc.x.first().map_or(0, |r| r.len());
    let j = doc.y.first().map_or(0, |r| r.len());
    let x = from_rows(doc.x, d, what)?;
    let y = from_rows(doc.y, j, what)?;
    Dataset::new(x, y).map_err(|e| Error::Parse { what, reason: e.to_string() })
}
