//! Cone decomposition of the tangential derivative and its extrema over the
//! tangential unit sphere.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, nnls, norm, orthogonal_complement};
use crate::net::Activation;
use crate::odd::Landscape;

/// Default cap on the number of boundary samples enumerated per neuron.
pub const DEFAULT_CONE_CAP: usize = 20;
/// Default number of directions for the sampling fallback.
pub const DEFAULT_MC_SAMPLES: usize = 100_000;

/// Positively homogeneous piecewise-linear form
/// `f(v) = a . v + sum_k c_k rho(v . x_k)`.
#[derive(Debug, Clone)]
pub struct SlopeForm {
    pub a: Array1<f64>,
    pub xs: Vec<Array1<f64>>,
    pub c: Vec<f64>,
    pub activation: Activation,
}

impl SlopeForm {
    pub fn eval(&self, v: ArrayView1<f64>) -> f64 {
        let mut out = dot(self.a.view(), v);
        for (x, c) in self.xs.iter().zip(&self.c) {
            if *c != 0.0 {
                let t = dot(x.view(), v);
                if t != 0.0 {
                    out += c * self.activation.rho(t);
                }
            }
        }
        out
    }

    /// Linear form active on the cone with sign pattern `mask` (bit set = positive side).
    pub fn gradient(&self, mask: u64) -> Array1<f64> {
        let mut g = self.a.clone();
        for (k, (x, c)) in self.xs.iter().zip(&self.c).enumerate() {
            let s = if mask >> k & 1 == 1 { 1 } else { -1 };
            g.scaled_add(c * self.activation.slope(s), x);
        }
        g
    }

    pub fn negated(&self) -> Self {
        Self { a: -&self.a, xs: self.xs.clone(), c: self.c.iter().map(|c| -c).collect(), activation: self.activation }
    }
}

/// Per-neuron cone data: the non-boundary part of each `d_ji`, the boundary
/// samples and their residuals.
#[derive(Debug, Clone)]
pub struct ConeBundle {
    pub neuron: usize,
    pub boundary: Vec<usize>,
    /// Row `j` is `d_ji` with boundary samples excluded.
    pub a: Array2<f64>,
    boundary_x: Vec<Array1<f64>>,
    /// Row per boundary sample, column per output.
    boundary_e: Array2<f64>,
    h: Array1<f64>,
    activation: Activation,
}

impl ConeBundle {
    pub fn pattern_count(&self) -> u64 {
        1u64 << self.boundary.len()
    }

    /// `g_jσ = a_j + sum_{k in B} alpha^{σ_k} e_kj x_k`.
    pub fn g_j(&self, j: usize, mask: u64) -> Array1<f64> {
        self.output_form(j).gradient(mask)
    }

    /// `g_σ = sum_j h_ji g_jσ`.
    pub fn g(&self, mask: u64) -> Array1<f64> {
        self.slope_form().gradient(mask)
    }

    /// The tangential derivative `v -> dL/ds_i` as a piecewise-linear form.
    pub fn slope_form(&self) -> SlopeForm {
        let a = self.h.dot(&self.a);
        let c = self.boundary_e.dot(&self.h).to_vec();
        SlopeForm { a, xs: self.boundary_x.clone(), c, activation: self.activation }
    }

    /// `v -> d_ji^v . v` for one output.
    pub fn output_form(&self, j: usize) -> SlopeForm {
        SlopeForm {
            a: self.a.row(j).to_owned(),
            xs: self.boundary_x.clone(),
            c: self.boundary_e.column(j).to_vec(),
            activation: self.activation,
        }
    }

    pub fn outputs(&self) -> usize {
        self.h.len()
    }

    pub fn h(&self) -> ArrayView1<'_, f64> {
        self.h.view()
    }
}

pub fn cone_bundle(land: &Landscape, i: usize, cap: usize) -> Result<ConeBundle> {
    let boundary = land.pattern().boundary(i);
    if boundary.len() > cap {
        return Err(Error::CombinatorialBlowup { neuron: i, boundary: boundary.len(), cap });
    }
    Ok(bundle_unchecked(land, i, boundary))
}

pub(crate) fn bundle_unchecked(land: &Landscape, i: usize, boundary: Vec<usize>) -> ConeBundle {
    let net = land.net();
    let data = land.data();
    let e = land.residuals();
    let boundary_x = boundary.iter().map(|&k| data.x().row(k).to_owned()).collect();
    let boundary_e = Array2::from_shape_fn((boundary.len(), net.outputs()), |(b, j)| e[[boundary[b], j]]);
    ConeBundle {
        neuron: i,
        a: land.d_matrix(i),
        boundary,
        boundary_x,
        boundary_e,
        h: net.h().column(i).to_owned(),
        activation: net.activation(),
    }
}

/// How an extremum was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeMethod {
    /// One-dimensional tangential space: two candidate directions.
    Line,
    /// Two-dimensional tangential space: arc endpoints and interior stationary points.
    Circle,
    /// Per-cone projection; exact sign, value clamped at zero from below.
    ConeProjection,
    /// Monte-Carlo directions; an upper bound on the minimum.
    Sampling,
}

#[derive(Debug, Clone)]
pub struct SlopeExtremum {
    pub value: f64,
    pub argmin: Option<Array1<f64>>,
    pub method: SlopeMethod,
    /// False when the value is a sampled bound or was clamped at zero.
    pub exact: bool,
    /// False when the sign of the value may be wrong (sampling, solver failure).
    pub reliable: bool,
}

/// Orthonormal basis of the tangential space at `w`: `u^⊥`, or all of R^d when `w = 0`.
pub fn tangent_basis(w: ArrayView1<f64>) -> Vec<Array1<f64>> {
    let d = w.len();
    if norm(w) == 0.0 {
        return orthogonal_complement(&[], d, 0.0);
    }
    orthogonal_complement(&[w.to_owned()], d, 0.0)
}

#[derive(Debug, Clone, Copy)]
pub struct SlopeOptions {
    pub cap: usize,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for SlopeOptions {
    fn default() -> Self {
        Self { cap: DEFAULT_CONE_CAP, mc_samples: DEFAULT_MC_SAMPLES, seed: 0 }
    }
}

/// Minimum of `form` over unit vectors in the tangential space at `w`.
pub fn min_slope(form: &SlopeForm, w: ArrayView1<f64>, opts: SlopeOptions) -> SlopeExtremum {
    let basis = tangent_basis(w);
    match basis.len() {
        0 => SlopeExtremum { value: 0.0, argmin: None, method: SlopeMethod::Line, exact: true, reliable: true },
        1 => min_on_line(form, &basis[0]),
        2 => min_on_circle(form, &basis),
        _ => {
            let active = active_boundary(form, &basis);
            if active.len() > opts.cap {
                min_by_sampling(form, &basis, opts)
            } else {
                min_by_cones(form, &basis, &active)
            }
        }
    }
}

/// Maximum of `form`, reported with the maximizing direction.
pub fn max_slope(form: &SlopeForm, w: ArrayView1<f64>, opts: SlopeOptions) -> SlopeExtremum {
    let mut r = min_slope(&form.negated(), w, opts);
    r.value = -r.value;
    r
}

pub fn min_tangential_slope(bundle: &ConeBundle, w: ArrayView1<f64>, opts: SlopeOptions) -> SlopeExtremum {
    min_slope(&bundle.slope_form(), w, opts)
}

fn min_on_line(form: &SlopeForm, t: &Array1<f64>) -> SlopeExtremum {
    let plus = form.eval(t.view());
    let minus = form.eval((-t).view());
    let (value, v) = if plus <= minus { (plus, t.clone()) } else { (minus, -t) };
    SlopeExtremum { value, argmin: Some(v), method: SlopeMethod::Line, exact: true, reliable: true }
}

/// Sorted breakpoint angles of the form restricted to the circle spanned by `basis`.
pub(crate) fn circle_breakpoints(form: &SlopeForm, basis: &[Array1<f64>]) -> Vec<f64> {
    use std::f64::consts::{FRAC_PI_2, TAU};
    let mut angles = Vec::new();
    for (x, c) in form.xs.iter().zip(&form.c) {
        if *c == 0.0 {
            continue;
        }
        let p = (dot(x.view(), basis[0].view()), dot(x.view(), basis[1].view()));
        if p.0 == 0.0 && p.1 == 0.0 {
            continue;
        }
        let phi = p.1.atan2(p.0);
        for a in [phi + FRAC_PI_2, phi - FRAC_PI_2] {
            angles.push(a.rem_euclid(TAU));
        }
    }
    angles.sort_by(f64::total_cmp);
    angles.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    angles
}

pub(crate) fn on_circle(basis: &[Array1<f64>], theta: f64) -> Array1<f64> {
    &basis[0] * theta.cos() + &basis[1] * theta.sin()
}

/// Arcs `[start, end]` (end may exceed 2π) covering the circle, each inside one cone.
pub(crate) fn circle_arcs(form: &SlopeForm, basis: &[Array1<f64>]) -> Vec<(f64, f64)> {
    use std::f64::consts::TAU;
    let bps = circle_breakpoints(form, basis);
    if bps.is_empty() {
        return vec![(0.0, TAU)];
    }
    (0..bps.len())
        .map(|m| {
            let start = bps[m];
            let end = if m + 1 < bps.len() { bps[m + 1] } else { bps[0] + TAU };
            (start, end)
        })
        .collect()
}

/// Linear form valid on the interior of the arc, in basis coordinates.
pub(crate) fn arc_gradient(form: &SlopeForm, basis: &[Array1<f64>], arc: (f64, f64)) -> (f64, f64) {
    let mid = on_circle(basis, 0.5 * (arc.0 + arc.1));
    let mut g = form.a.clone();
    for (x, c) in form.xs.iter().zip(&form.c) {
        let t = dot(x.view(), mid.view());
        if t != 0.0 {
            g.scaled_add(c * form.activation.slope(if t > 0.0 { 1 } else { -1 }), x);
        }
    }
    (dot(g.view(), basis[0].view()), dot(g.view(), basis[1].view()))
}

pub(crate) fn angle_in_arc(theta: f64, arc: (f64, f64)) -> bool {
    use std::f64::consts::TAU;
    let t = theta.rem_euclid(TAU);
    (t >= arc.0 && t <= arc.1) || (t + TAU >= arc.0 && t + TAU <= arc.1)
}

fn min_on_circle(form: &SlopeForm, basis: &[Array1<f64>]) -> SlopeExtremum {
    let mut best = (f64::INFINITY, Array1::zeros(form.a.len()));
    let mut consider = |theta: f64| {
        let v = on_circle(basis, theta);
        let val = form.eval(v.view());
        if val < best.0 {
            best = (val, v);
        }
    };
    for arc in circle_arcs(form, basis) {
        consider(arc.0);
        let g = arc_gradient(form, basis, arc);
        if g.0 != 0.0 || g.1 != 0.0 {
            let theta = (-g.1).atan2(-g.0);
            if angle_in_arc(theta, arc) {
                consider(theta);
            }
        }
    }
    SlopeExtremum { value: best.0, argmin: Some(best.1), method: SlopeMethod::Circle, exact: true, reliable: true }
}

/// Boundary samples whose tangential projection is nonzero and whose weight is nonzero.
fn active_boundary(form: &SlopeForm, basis: &[Array1<f64>]) -> Vec<usize> {
    (0..form.xs.len())
        .filter(|&k| form.c[k] != 0.0 && basis.iter().any(|b| dot(b.view(), form.xs[k].view()) != 0.0))
        .collect()
}

fn to_coords(basis: &[Array1<f64>], v: ArrayView1<f64>) -> Array1<f64> {
    Array1::from_iter(basis.iter().map(|b| dot(b.view(), v)))
}

fn from_coords(basis: &[Array1<f64>], c: ArrayView1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(basis[0].len());
    for (b, ci) in basis.iter().zip(c.iter()) {
        out.scaled_add(*ci, b);
    }
    out
}

/// Projection of `q` onto `{v : n . v >= 0 for n in normals}` via the polar cone.
pub(crate) fn project_onto_cone(normals: &[Array1<f64>], q: ArrayView1<f64>) -> Option<Array1<f64>> {
    let lambda = nnls(normals, (-&q).view(), 50 * (normals.len() + 1))?;
    let mut p = q.to_owned();
    for (n, l) in normals.iter().zip(lambda.iter()) {
        if *l != 0.0 {
            p.scaled_add(*l, n);
        }
    }
    Some(p)
}

fn min_by_cones(form: &SlopeForm, basis: &[Array1<f64>], active: &[usize]) -> SlopeExtremum {
    let coords: Vec<Array1<f64>> = active.iter().map(|&k| to_coords(basis, form.xs[k].view())).collect();
    let scale = norm(form.a.view()) + active.iter().map(|&k| form.c[k].abs() * norm(form.xs[k].view())).sum::<f64>();
    let mut best_val = 0.0;
    let mut best_v: Option<Array1<f64>> = None;
    let mut solver_ok = true;
    for mask in 0u64..(1u64 << active.len()) {
        let mut g = form.a.clone();
        let mut normals = Vec::with_capacity(active.len());
        for (b, &k) in active.iter().enumerate() {
            let s = if mask >> b & 1 == 1 { 1i8 } else { -1 };
            g.scaled_add(form.c[k] * form.activation.slope(s), &form.xs[k]);
            normals.push(&coords[b] * f64::from(s));
        }
        let q = -to_coords(basis, g.view());
        let Some(p) = project_onto_cone(&normals, q.view()) else {
            solver_ok = false;
            continue;
        };
        let pn = norm(p.view());
        if pn > 1e-14 * scale.max(f64::MIN_POSITIVE) && -pn < best_val {
            best_val = -pn;
            best_v = Some(from_coords(basis, (&p / pn).view()));
        }
    }
    let negative = best_v.is_some();
    let value = best_v.as_ref().map_or(0.0, |v| form.eval(v.view()));
    SlopeExtremum {
        value,
        argmin: best_v,
        method: SlopeMethod::ConeProjection,
        exact: negative && solver_ok,
        reliable: solver_ok,
    }
}

fn min_by_sampling(form: &SlopeForm, basis: &[Array1<f64>], opts: SlopeOptions) -> SlopeExtremum {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best = (f64::INFINITY, None);
    for _ in 0..opts.mc_samples.max(1) {
        let c = Array1::from_iter((0..basis.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let n = norm(c.view());
        if n == 0.0 {
            continue;
        }
        let v = from_coords(basis, (&c / n).view());
        let val = form.eval(v.view());
        if val < best.0 {
            best = (val, Some(v));
        }
    }
    SlopeExtremum { value: best.0, argmin: best.1, method: SlopeMethod::Sampling, exact: false, reliable: false }
}

/// Random unit vector in the tangential space at `w`.
pub fn random_tangent<R: Rng + ?Sized>(w: ArrayView1<f64>, rng: &mut R) -> Array1<f64> {
    let basis = tangent_basis(w);
    loop {
        let c = Array1::from_iter((0..basis.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let n = norm(c.view());
        if n > 0.0 {
            return from_coords(&basis, (&c / n).view());
        }
    }
}

pub(crate) fn random_in_span<R: Rng + ?Sized>(basis: &[Array1<f64>], rng: &mut R) -> Array1<f64> {
    let c = Array1::from_iter((0..basis.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    from_coords(basis, c.view())
}

pub(crate) fn coords(basis: &[Array1<f64>], v: ArrayView1<f64>) -> Array1<f64> {
    to_coords(basis, v)
}

pub(crate) fn uncoords(basis: &[Array1<f64>], c: ArrayView1<f64>) -> Array1<f64> {
    from_coords(basis, c)
}
