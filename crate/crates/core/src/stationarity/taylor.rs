//! Directional Taylor coefficients and the second-order escape construction.

use ndarray::{Array2, ArrayView1, Axis};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::net::{sign_with_tol, Dataset, Network};
use crate::odd::{loss_change, Direction, Landscape};

/// One-sided derivatives of orders 1 to 4 of `eps -> L(P + eps D)` at `eps = 0+`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TaylorCoefficients {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl TaylorCoefficients {
    /// `sum_n c_n eps^n / n!`.
    pub fn predict(&self, eps: f64) -> f64 {
        self.c1 * eps + self.c2 * eps.powi(2) / 2.0 + self.c3 * eps.powi(3) / 6.0 + self.c4 * eps.powi(4) / 24.0
    }
}

/// Sector sign of `w_i . x_k` along `D`: the pattern sign when nonzero,
/// otherwise the side that `dw_i` pushes the sample to.
fn sector_signs(land: &Landscape, dir: &Direction) -> Array2<i8> {
    let net = land.net();
    let x = land.data().x();
    let mut s = land.pattern().signs().to_owned();
    for ((i, k), sign) in s.indexed_iter_mut() {
        if *sign == 0 {
            *sign = sign_with_tol(dir.dw.row(i), x.row(k), land.tol_act());
        }
    }
    debug_assert_eq!(s.nrows(), net.hidden());
    s
}

/// Along `D` the outputs inside the selected sector are
/// `yhat + eps A + eps^2 B`, so the loss is an exact quartic in `eps`.
/// `A_kj = sum_i alpha_s (dh_ji z_ik + h_ji dz_ik)` and `B_kj = sum_i alpha_s dh_ji dz_ik`.
pub fn directional_taylor(net: &Network, data: &Dataset, dir: &Direction, tol_act: f64) -> Result<TaylorCoefficients> {
    if dir.dw.dim() != net.w().dim() || dir.dh.dim() != net.h().dim() {
        return Err(Error::DimensionMismatch("direction shape differs from network shape".into()));
    }
    if dir.is_zero() {
        return Err(Error::Contract("zero direction".into()));
    }
    let land = Landscape::new(net, data, tol_act)?;
    let signs = sector_signs(&land, dir);
    let act = net.activation();
    let x = data.x();
    let e = land.residuals();
    let (kk, jj) = (data.samples(), net.outputs());
    let mut a = Array2::<f64>::zeros((kk, jj));
    let mut b = Array2::<f64>::zeros((kk, jj));
    for i in 0..net.hidden() {
        let w = net.w_row(i);
        let dw = dir.dw.row(i);
        for (k, xk) in x.axis_iter(Axis(0)).enumerate() {
            let s = signs[[i, k]];
            if s == 0 {
                continue;
            }
            let alpha = act.slope(s);
            let z = dot(w, xk);
            let dz = dot(dw, xk);
            for j in 0..jj {
                let h = net.h()[[j, i]];
                let dh = dir.dh[[j, i]];
                a[[k, j]] += alpha * (dh * z + h * dz);
                b[[k, j]] += alpha * dh * dz;
            }
        }
    }
    let sum = |f: &dyn Fn(usize, usize) -> f64| -> f64 {
        let mut acc = 0.0;
        for k in 0..kk {
            for j in 0..jj {
                acc += f(k, j);
            }
        }
        acc
    };
    Ok(TaylorCoefficients {
        c1: sum(&|k, j| e[[k, j]] * a[[k, j]]),
        c2: sum(&|k, j| a[[k, j]] * a[[k, j]] + 2.0 * e[[k, j]] * b[[k, j]]),
        c3: 6.0 * sum(&|k, j| a[[k, j]] * b[[k, j]]),
        c4: 12.0 * sum(&|k, j| b[[k, j]] * b[[k, j]]),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EscapeDirection {
    #[serde(skip)]
    pub direction: Direction,
    /// Largest accepted step: `L(P + eps D) < L(P)` was measured here.
    pub eps0: f64,
    /// Measured `L(P + eps0 D) - L(P)`.
    pub loss_change: f64,
    /// Predicted second-order coefficient `c2` of the unit direction; negative.
    pub c2: f64,
    pub halvings: u32,
}

const MAX_HALVINGS: u32 = 60;

/// Scalar-output escape path: move `h_j0i` against the sign of `d^v . v` and
/// turn `w_i` along `v` fast enough that the negative cross term dominates.
pub fn construct_escape_direction(
    net: &Network,
    data: &Dataset,
    i: usize,
    j0: usize,
    v: ArrayView1<f64>,
    tol_act: f64,
) -> Result<EscapeDirection> {
    if net.outputs() != 1 {
        return Err(Error::Contract("escape construction requires a single output".into()));
    }
    if i >= net.hidden() || j0 >= net.outputs() {
        return Err(Error::Contract(format!("witness index ({i}, {j0}) out of range")));
    }
    let land = Landscape::new(net, data, tol_act)?;
    let phi = dot(land.d_vector_limit(j0, i, v)?.view(), v);
    if phi == 0.0 {
        return Err(Error::Contract("invalid witness: d^v . v = 0".into()));
    }
    if net.h()[[j0, i]] != 0.0 {
        return Err(Error::Contract("invalid witness: output weight is nonzero".into()));
    }
    // |V_h|^2 = sum_k rho(w_i . x_k)^2
    let act = net.activation();
    let w = net.w_row(i);
    let vh2: f64 = data.x().axis_iter(Axis(0)).map(|x| act.rho(dot(w, x)).powi(2)).sum();
    let a_coef = 1.0;
    let b_coef = if vh2 == 0.0 { 1.0 } else { vh2 * a_coef / phi.abs() };
    let mut dir = Direction::zeros(net);
    dir.dh[[j0, i]] = -phi.signum() * a_coef;
    dir.dw.row_mut(i).scaled_add(b_coef, &v);
    let scale = dir.norm();
    let dir = dir.scaled(1.0 / scale);
    let c2 = (a_coef * a_coef * vh2 - 2.0 * a_coef * b_coef * phi.abs()) / (scale * scale);

    let mut crossing = f64::INFINITY;
    let dwi = dir.dw.row(i);
    for x in data.x().axis_iter(Axis(0)) {
        let z = dot(w, x);
        let dz = dot(dwi, x);
        if z != 0.0 && dz != 0.0 && -z / dz > 0.0 {
            crossing = crossing.min(-z / dz);
        }
    }
    let mut eps = (0.5 * crossing).min(1.0);
    for halvings in 0..=MAX_HALVINGS {
        let dl = loss_change(net, data, &dir, eps)?;
        if dl < 0.0 {
            return Ok(EscapeDirection { direction: dir, eps0: eps, loss_change: dl, c2, halvings });
        }
        eps *= 0.5;
    }
    Err(Error::Contract(format!("no loss decrease after {MAX_HALVINGS} halvings; witness is not an escape direction")))
}
