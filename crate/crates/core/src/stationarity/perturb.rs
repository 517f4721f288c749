//! Empirical minimality by random perturbation, and the local-maximum condition.

use ndarray::Axis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::net::{Dataset, Network, DEFAULT_TOL_ACT};
use crate::odd::{loss_change, Direction};

#[derive(Debug, Clone, Copy)]
pub struct PerturbationOptions {
    /// Fraction of the nearest live pre-activation distance allowed for `zeta`.
    pub margin: f64,
    pub bins: usize,
    /// Redraws per trial before giving up on finding a sector-preserving perturbation.
    pub max_redraws: usize,
    /// Pairs with `|w . x| <= boundary_tol |w| |x|` count as lying on their
    /// boundary: they do not limit the cap and may change sign. Points
    /// reached by gradient descent only approach their kinks, so they need a
    /// band well above rounding.
    pub boundary_tol: f64,
}

impl Default for PerturbationOptions {
    fn default() -> Self {
        Self { margin: 0.5, bins: 20, max_redraws: 1000, boundary_tol: DEFAULT_TOL_ACT }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbationReport {
    pub zeta: f64,
    pub cap: f64,
    pub trials: usize,
    pub rejected: usize,
    pub min: f64,
    pub max: f64,
    pub all_nonnegative: bool,
    /// `(lower edge, upper edge, count)` per bin.
    pub histogram: Vec<(f64, f64, usize)>,
    #[serde(skip)]
    pub changes: Vec<f64>,
}

/// `margin * min |w_i . x_k| / |x_k|` over pairs with `rho(w_i . x_k) != 0`
/// that lie off their boundary.
///
/// Pairs on the zero-slope side of the activation are excluded: moving them
/// across the boundary changes the outputs only at second order, and tiny
/// frozen dead neurons would otherwise force the cap down to their scale.
pub fn perturbation_cap(net: &Network, data: &Dataset, margin: f64, boundary_tol: f64) -> f64 {
    let mut best = f64::INFINITY;
    for_live_pairs(net, data, boundary_tol, |_, x, z| {
        best = best.min(z.abs() / norm(x));
        true
    });
    margin * best
}

/// Calls `f(dw row index, x, z)` for live off-boundary pairs until it returns false.
fn for_live_pairs(
    net: &Network,
    data: &Dataset,
    boundary_tol: f64,
    mut f: impl FnMut(usize, ndarray::ArrayView1<f64>, f64) -> bool,
) {
    let act = net.activation();
    for (i, w) in net.w().axis_iter(Axis(0)).enumerate() {
        let nw = norm(w);
        for x in data.x().axis_iter(Axis(0)) {
            let z = dot(w, x);
            if act.rho(z) == 0.0 || z.abs() <= boundary_tol * nw * norm(x) {
                continue;
            }
            if !f(i, x, z) {
                return;
            }
        }
    }
}

fn crosses_live_boundary(net: &Network, data: &Dataset, dir: &Direction, boundary_tol: f64) -> bool {
    let mut crossed = false;
    for_live_pairs(net, data, boundary_tol, |i, x, z| {
        let moved = z + dot(dir.dw.row(i), x);
        crossed = moved.signum() != z.signum() || moved == 0.0;
        !crossed
    });
    crossed
}

/// Draws each parameter change i.i.d. uniform on `(-zeta, zeta)`. Trial `t`
/// uses its own stream `(seed, t)`, so results do not depend on scheduling.
pub fn perturbation_min_test(
    net: &Network,
    data: &Dataset,
    zeta: f64,
    trials: usize,
    seed: u64,
    opts: PerturbationOptions,
) -> Result<PerturbationReport> {
    if !(zeta > 0.0) || !zeta.is_finite() {
        return Err(Error::Validation(format!("zeta must be positive, got {zeta}")));
    }
    if trials == 0 {
        return Err(Error::Validation("trials must be at least 1".into()));
    }
    data.check(net)?;
    let cap = perturbation_cap(net, data, opts.margin, opts.boundary_tol);
    if zeta > cap {
        return Err(Error::PerturbationTooLarge { zeta, cap });
    }
    let np = net.param_count();
    let outcomes: Vec<Result<(f64, usize)>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            for redraw in 0..=opts.max_redraws {
                let flat: Vec<f64> = (0..np).map(|_| rng.random_range(-zeta..zeta)).collect();
                let dir = Direction::from_flat(net, &flat)?;
                if crosses_live_boundary(net, data, &dir, opts.boundary_tol) {
                    continue;
                }
                return Ok((loss_change(net, data, &dir, 1.0)?, redraw));
            }
            Err(Error::Infeasible(format!("trial {t}: every draw crossed a sector boundary")))
        })
        .collect();
    let mut changes = Vec::with_capacity(trials);
    let mut rejected = 0;
    for o in outcomes {
        let (dl, r) = o?;
        changes.push(dl);
        rejected += r;
    }
    let min = changes.iter().copied().fold(f64::INFINITY, f64::min);
    let max = changes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(PerturbationReport {
        zeta,
        cap,
        trials,
        rejected,
        min,
        max,
        all_nonnegative: min >= 0.0,
        histogram: histogram(&changes, min, max, opts.bins.max(1)),
        changes,
    })
}

fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<(f64, f64, usize)> {
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, c)| (lo + width * b as f64, lo + width * (b + 1) as f64, c))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalMaxCheck {
    /// True iff every hidden activation on the data is zero.
    pub candidate: bool,
    /// An active `(i, k)` pair when `candidate` is false.
    pub witness: Option<(usize, usize)>,
}

pub fn local_max_necessary(net: &Network, data: &Dataset) -> Result<LocalMaxCheck> {
    data.check(net)?;
    let act = net.activation();
    for (i, w) in net.w().axis_iter(Axis(0)).enumerate() {
        for (k, x) in data.x().axis_iter(Axis(0)).enumerate() {
            if act.rho(dot(w, x)) != 0.0 {
                return Ok(LocalMaxCheck { candidate: false, witness: Some((i, k)) });
            }
        }
    }
    Ok(LocalMaxCheck { candidate: true, witness: None })
}

/// Step `t` on `h_ji` with `L(P + t e_ji) > L(P)`. The loss is a convex
/// quadratic in `h_ji` with curvature `sum_k rho(w_i . x_k)^2`, which is
/// positive for an active neuron; stepping along the sign of the slope (or
/// either way when flat) increases it.
pub fn increasing_h_perturbation(net: &Network, data: &Dataset, j: usize, i: usize) -> Result<(f64, f64)> {
    let mut dir = Direction::zeros(net);
    dir.dh[[j, i]] = 1.0;
    let slope = crate::odd::grad_h(net, data)?[[j, i]];
    let sign = if slope >= 0.0 { 1.0 } else { -1.0 };
    let mut t = sign;
    for _ in 0..200 {
        let dl = loss_change(net, data, &dir, t)?;
        if dl > 0.0 {
            return Ok((t, dl));
        }
        t *= 2.0;
    }
    Err(Error::Infeasible(format!("no loss increase found along h_{j}{i}")))
}
