//! First-order one-sided directional derivatives of the loss.
//!
//! Every quantity here is keyed off one [`ActivationPattern`] computed at
//! construction, so a single call sees a single sector assignment.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::net::{activation_pattern, residuals, sign_with_tol, ActivationPattern, Dataset, Network, DEFAULT_TOL_ACT};

/// Tolerance on `|v| = 1` and `v . u = 0` for caller-supplied directions.
pub const DIRECTION_TOL: f64 = 1e-9;

/// Split of an input-weight perturbation into radial and tangential parts.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialTangentialSplit {
    pub delta_r: f64,
    pub delta_s: f64,
    pub u: Option<Array1<f64>>,
    pub v: Option<Array1<f64>>,
}

impl RadialTangentialSplit {
    pub fn reconstruct(&self, d: usize) -> Array1<f64> {
        let mut out = Array1::zeros(d);
        if let Some(u) = &self.u {
            out.scaled_add(self.delta_r, u);
        }
        if let Some(v) = &self.v {
            out.scaled_add(self.delta_s, v);
        }
        out
    }
}

pub fn decompose(w: ArrayView1<f64>, delta_w: ArrayView1<f64>) -> RadialTangentialSplit {
    let wn = norm(w);
    let dn = norm(delta_w);
    if wn == 0.0 {
        if dn == 0.0 {
            return RadialTangentialSplit { delta_r: 0.0, delta_s: 0.0, u: None, v: None };
        }
        return RadialTangentialSplit { delta_r: 0.0, delta_s: dn, u: None, v: Some(&delta_w / dn) };
    }
    let u = &w / wn;
    let delta_r = dot(delta_w, u.view());
    let t = &delta_w - &(&u * delta_r);
    let tn = norm(t.view());
    // below this the leftover is rounding noise from the projection
    if tn <= 1e-15 * dn || dn == 0.0 {
        return RadialTangentialSplit { delta_r, delta_s: 0.0, u: Some(u), v: None };
    }
    RadialTangentialSplit { delta_r, delta_s: tn, u: Some(u), v: Some(t / tn) }
}

/// A direction in parameter space, laid out as `(dW, dH)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub dw: Array2<f64>,
    pub dh: Array2<f64>,
}

impl Direction {
    pub fn zeros(net: &Network) -> Self {
        Self { dw: Array2::zeros(net.w.raw_dim()), dh: Array2::zeros(net.h.raw_dim()) }
    }

    /// Flat layout: `W` row-major followed by `H` row-major.
    pub fn from_flat(net: &Network, flat: &[f64]) -> Result<Self> {
        let nw = net.w.len();
        if flat.len() != nw + net.h.len() {
            return Err(Error::DimensionMismatch(format!(
                "direction has {} entries, network has {} parameters",
                flat.len(),
                net.param_count()
            )));
        }
        let dw = Array2::from_shape_vec(net.w.raw_dim(), flat[..nw].to_vec()).expect("length checked");
        let dh = Array2::from_shape_vec(net.h.raw_dim(), flat[nw..].to_vec()).expect("length checked");
        Ok(Self { dw, dh })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.dw.iter().chain(self.dh.iter()).copied().collect()
    }

    pub fn norm(&self) -> f64 {
        self.dw.iter().chain(self.dh.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.dw.iter().chain(self.dh.iter()).all(|&v| v == 0.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { dw: &self.dw * c, dh: &self.dh * c }
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::Contract("zero direction".into()));
        }
        Ok(self.scaled(1.0 / n))
    }

    /// Uniformly distributed unit direction.
    pub fn random_unit<R: Rng + ?Sized>(net: &Network, rng: &mut R) -> Self {
        loop {
            let flat: Vec<f64> = (0..net.param_count()).map(|_| rng.sample(StandardNormal)).collect();
            let dir = Self::from_flat(net, &flat).expect("length matches");
            if let Ok(unit) = dir.normalized() {
                return unit;
            }
        }
    }

    fn check(&self, net: &Network) -> Result<()> {
        if self.dw.dim() != net.w.dim() || self.dh.dim() != net.h.dim() {
            return Err(Error::DimensionMismatch("direction shape differs from network shape".into()));
        }
        Ok(())
    }
}

/// Residuals and activation pattern at a point, shared by all derivative queries.
#[derive(Debug, Clone)]
pub struct Landscape<'a> {
    net: &'a Network,
    data: &'a Dataset,
    e: Array2<f64>,
    pattern: ActivationPattern,
    tol_act: f64,
}

impl<'a> Landscape<'a> {
    pub fn new(net: &'a Network, data: &'a Dataset, tol_act: f64) -> Result<Self> {
        if !(tol_act >= 0.0) {
            return Err(Error::Validation(format!("tol_act must be nonnegative, got {tol_act}")));
        }
        let e = residuals(net, data)?;
        let pattern = activation_pattern(net, data, tol_act);
        Ok(Self { net, data, e, pattern, tol_act })
    }

    pub fn net(&self) -> &'a Network {
        self.net
    }

    pub fn data(&self) -> &'a Dataset {
        self.data
    }

    pub fn residuals(&self) -> ArrayView2<'_, f64> {
        self.e.view()
    }

    pub fn pattern(&self) -> &ActivationPattern {
        &self.pattern
    }

    pub fn tol_act(&self) -> f64 {
        self.tol_act
    }

    /// `sum_{w.x>0} a+ e_kj x_k + sum_{w.x<0} a- e_kj x_k`; boundary samples excluded.
    pub fn d_vector(&self, j: usize, i: usize) -> Array1<f64> {
        let act = self.net.activation;
        let mut out = Array1::zeros(self.net.input_dim());
        for (k, x) in self.data.x.axis_iter(Axis(0)).enumerate() {
            let s = self.pattern.sign(i, k);
            if s != 0 {
                out.scaled_add(act.slope(s) * self.e[[k, j]], &x);
            }
        }
        out
    }

    /// All `d_ji` for neuron `i`, one row per output.
    pub fn d_matrix(&self, i: usize) -> Array2<f64> {
        let mut out = Array2::zeros((self.net.outputs(), self.net.input_dim()));
        for j in 0..self.net.outputs() {
            out.row_mut(j).assign(&self.d_vector(j, i));
        }
        out
    }

    fn check_tangential(&self, i: usize, v: ArrayView1<f64>) -> Result<()> {
        if v.len() != self.net.input_dim() {
            return Err(Error::DimensionMismatch(format!("v has length {}", v.len())));
        }
        let vn = norm(v);
        if (vn - 1.0).abs() > DIRECTION_TOL {
            return Err(Error::Contract(format!("v must be a unit vector, |v| = {vn}")));
        }
        let w = self.net.w.row(i);
        let wn = norm(w);
        if wn > 0.0 {
            let c = dot(w, v) / wn;
            if c.abs() > DIRECTION_TOL {
                return Err(Error::Contract(format!("v is not tangential to w_{i}: v.u = {c}")));
            }
        }
        Ok(())
    }

    /// `d_ji` plus the boundary samples that `v` pushes to either side.
    pub fn d_vector_limit(&self, j: usize, i: usize, v: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_tangential(i, v)?;
        Ok(self.d_vector_limit_unchecked(j, i, v))
    }

    pub(crate) fn d_vector_limit_unchecked(&self, j: usize, i: usize, v: ArrayView1<f64>) -> Array1<f64> {
        let act = self.net.activation;
        let mut out = self.d_vector(j, i);
        for k in self.pattern.boundary(i) {
            let x = self.data.x.row(k);
            let s = sign_with_tol(v, x, self.tol_act);
            if s != 0 {
                out.scaled_add(act.slope(s) * self.e[[k, j]], &x);
            }
        }
        out
    }

    /// `dL/dh_ji = w_i . d_ji`, exact since the loss is smooth in `H`.
    pub fn grad_h(&self) -> Array2<f64> {
        let mut g = Array2::zeros(self.net.h.raw_dim());
        for i in 0..self.net.hidden() {
            let w = self.net.w.row(i);
            for j in 0..self.net.outputs() {
                g[[j, i]] = dot(w, self.d_vector(j, i).view());
            }
        }
        g
    }

    /// `sum_j h_ji d_ji . u_i`; zero when `w_i = 0`.
    pub fn radial_derivative(&self, i: usize) -> f64 {
        let w = self.net.w.row(i);
        let wn = norm(w);
        if wn == 0.0 {
            return 0.0;
        }
        (0..self.net.outputs())
            .map(|j| self.net.h[[j, i]] * dot(self.d_vector(j, i).view(), w) / wn)
            .sum()
    }

    /// `sum_j h_ji d_ji^v . v`.
    pub fn tangential_derivative(&self, i: usize, v: ArrayView1<f64>) -> Result<f64> {
        self.check_tangential(i, v)?;
        Ok(self.tangential_derivative_unchecked(i, v))
    }

    pub(crate) fn tangential_derivative_unchecked(&self, i: usize, v: ArrayView1<f64>) -> f64 {
        (0..self.net.outputs())
            .map(|j| self.net.h[[j, i]] * dot(self.d_vector_limit_unchecked(j, i, v).view(), v))
            .sum()
    }

    /// `lim (L(P + eps D) - L(P)) / eps` as eps decreases to zero.
    pub fn directional_odd(&self, dir: &Direction) -> Result<f64> {
        dir.check(self.net)?;
        if dir.is_zero() {
            return Err(Error::Contract("zero direction".into()));
        }
        let gh = self.grad_h();
        let mut total: f64 = gh.iter().zip(dir.dh.iter()).map(|(a, b)| a * b).sum();
        for i in 0..self.net.hidden() {
            let split = decompose(self.net.w.row(i), dir.dw.row(i));
            if split.delta_r != 0.0 {
                total += split.delta_r * self.radial_derivative(i);
            }
            if let Some(v) = &split.v {
                total += split.delta_s * self.tangential_derivative_unchecked(i, v.view());
            }
        }
        Ok(total)
    }
}

pub fn d_vector(net: &Network, data: &Dataset, j: usize, i: usize) -> Result<Array1<f64>> {
    Ok(Landscape::new(net, data, DEFAULT_TOL_ACT)?.d_vector(j, i))
}

pub fn d_vector_limit(net: &Network, data: &Dataset, j: usize, i: usize, v: ArrayView1<f64>) -> Result<Array1<f64>> {
    Landscape::new(net, data, DEFAULT_TOL_ACT)?.d_vector_limit(j, i, v)
}

pub fn grad_h(net: &Network, data: &Dataset) -> Result<Array2<f64>> {
    Ok(Landscape::new(net, data, DEFAULT_TOL_ACT)?.grad_h())
}

pub fn radial_derivative(net: &Network, data: &Dataset, i: usize) -> Result<f64> {
    Ok(Landscape::new(net, data, DEFAULT_TOL_ACT)?.radial_derivative(i))
}

pub fn tangential_derivative(net: &Network, data: &Dataset, i: usize, v: ArrayView1<f64>) -> Result<f64> {
    Landscape::new(net, data, DEFAULT_TOL_ACT)?.tangential_derivative(i, v)
}

pub fn directional_odd(net: &Network, data: &Dataset, dir: &Direction) -> Result<f64> {
    Landscape::new(net, data, DEFAULT_TOL_ACT)?.directional_odd(dir)
}

/// `L(P + t D) - L(P)`, computed from output differences to limit cancellation.
pub fn loss_change(net: &Network, data: &Dataset, dir: &Direction, t: f64) -> Result<f64> {
    dir.check(net)?;
    let base = net.predict(data.x())?;
    let moved = net.perturbed(dir.dw.view(), dir.dh.view(), t).predict(data.x())?;
    let mut acc = 0.0;
    for ((a, b), y) in moved.iter().zip(base.iter()).zip(data.y.iter()) {
        let diff = a - b;
        acc += diff * (a - y + b - y);
    }
    Ok(0.5 * acc)
}

const FD_MIN_STEP: f64 = 1e-13;

/// Largest step `<= step`, reached by halving, such that no pre-activation
/// with a nonzero value changes sign on `(0, step]`.
pub fn stable_step(net: &Network, data: &Dataset, dir: &Direction, step: f64) -> Result<f64> {
    dir.check(net)?;
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::Validation(format!("step must be positive, got {step}")));
    }
    let mut crossing = f64::INFINITY;
    for i in 0..net.hidden() {
        let w = net.w.row(i);
        let dw = dir.dw.row(i);
        for x in data.x.axis_iter(Axis(0)) {
            let z = dot(w, x);
            let dz = dot(dw, x);
            if z != 0.0 && dz != 0.0 && -z / dz > 0.0 {
                crossing = crossing.min(-z / dz);
            }
        }
    }
    let mut s = step;
    while s >= crossing {
        s *= 0.5;
        if s < FD_MIN_STEP {
            return Err(Error::OracleInconclusive(format!(
                "step fell below {FD_MIN_STEP:e} before the activation pattern stabilised (nearest crossing at {crossing:e})"
            )));
        }
    }
    Ok(s)
}

/// One-sided difference quotient at the first stable step.
pub fn fd_oracle(net: &Network, data: &Dataset, dir: &Direction, step: f64) -> Result<f64> {
    let s = stable_step(net, data, dir, step)?;
    Ok(loss_change(net, data, dir, s)? / s)
}

/// Richardson extrapolation over four halvings of the stable step. Inside one
/// sector the loss is a quartic in `t`, so the quotient is a cubic and the
/// extrapolation is exact up to rounding.
pub fn fd_richardson(net: &Network, data: &Dataset, dir: &Direction, step: f64) -> Result<f64> {
    let s = stable_step(net, data, dir, step)?;
    let mut row: Vec<f64> = (0..4)
        .map(|m| {
            let t = s / f64::powi(2.0, m);
            loss_change(net, data, dir, t).map(|dl| dl / t)
        })
        .collect::<Result<_>>()?;
    for order in 1..4 {
        let f = f64::powi(2.0, order);
        row = row.windows(2).map(|p| (f * p[1] - p[0]) / (f - 1.0)).collect();
    }
    Ok(row[0])
}
