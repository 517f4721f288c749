//! Fixture generators shared by the integration targets.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use relu_landscape::linalg::{dot, norm, solve_spd};
use relu_landscape::odd::{loss_change, stable_step};
use relu_landscape::{Activation, Dataset, Direction, Network};

pub fn gaussian<R: Rng>(rng: &mut R, n: usize) -> Array1<f64> {
    Array1::from_iter((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

pub fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal))
}

/// Nonzero multiples of 1/8 in [-2, 2]. Products and sums of a few of these are exact.
pub fn dyadic<R: Rng>(rng: &mut R, n: usize) -> Array1<f64> {
    loop {
        let v = Array1::from_iter((0..n).map(|_| rng.random_range(-16i32..=16) as f64 / 8.0));
        if v.iter().any(|&c| c != 0.0) {
            return v;
        }
    }
}

/// `(w . w) u - (u . w) w` for dyadic `w` and `u`: orthogonal to `w` with no rounding.
pub fn exact_orthogonal<R: Rng>(rng: &mut R, w: &Array1<f64>) -> Array1<f64> {
    loop {
        let u = dyadic(rng, w.len());
        let x = &u * dot(w.view(), w.view()) - w * dot(u.view(), w.view());
        if x.iter().any(|&c| c != 0.0) {
            debug_assert_eq!(dot(w.view(), x.view()), 0.0);
            return x;
        }
    }
}

/// Random network and data where some neurons sit exactly on kinks of some samples.
pub fn boundary_instance<R: Rng>(
    rng: &mut R,
    d: usize,
    outputs: usize,
    hidden: usize,
    samples: usize,
    activation: Activation,
) -> (Network, Dataset) {
    let w = Array2::from_shape_fn((hidden, d), |_| rng.random_range(-16i32..=16) as f64 / 8.0);
    let mut x = gaussian_matrix(rng, samples, d);
    let forced = 1 + rng.random_range(0..samples.min(3));
    for k in 0..forced {
        let i = rng.random_range(0..hidden);
        let wi = w.row(i).to_owned();
        if wi.iter().all(|&c| c == 0.0) {
            continue;
        }
        x.row_mut(k).assign(&exact_orthogonal(rng, &wi));
    }
    let h = gaussian_matrix(rng, outputs, hidden);
    let y = gaussian_matrix(rng, samples, outputs);
    (Network::new(w, h, activation).unwrap(), Dataset::new(x, y).unwrap())
}

/// Generic random instance with Gaussian parameters.
pub fn random_instance<R: Rng>(
    rng: &mut R,
    d: usize,
    outputs: usize,
    hidden: usize,
    samples: usize,
    activation: Activation,
) -> (Network, Dataset) {
    let net = Network::new(gaussian_matrix(rng, hidden, d), gaussian_matrix(rng, outputs, hidden), activation).unwrap();
    let data = Dataset::new(gaussian_matrix(rng, samples, d), gaussian_matrix(rng, samples, outputs)).unwrap();
    (net, data)
}

#[derive(Debug, Clone, Copy)]
pub struct FixtureOptions {
    pub d: usize,
    pub outputs: usize,
    /// Neurons with nonzero weights, in general position with respect to the data.
    pub active: usize,
    /// Exact-kink samples of neuron 0 carrying a residual that makes its
    /// tangential slope positive on one side.
    pub kinks: usize,
    /// Appends a neuron with `w = 0` and `h = 0`, which makes the point a saddle.
    pub zero_neuron: bool,
    /// Fits every output exactly.
    pub zero_residual: bool,
    /// Keeps all samples in an open half-space so negative units exist.
    pub half_space: bool,
}

/// ReLU network at an exactly stationary point.
///
/// Residuals are projected so that `sum_k e_kj x_k` over strictly active
/// samples vanishes for every neuron and output. Kink samples of neuron 0
/// are inactive for every other neuron and get residual `s_b h_0`, so the
/// tangential slope of neuron 0 is `sum_b s_b |h_0|^2 rho(x_b . v) >= 0`.
pub struct StationaryFixture {
    pub net: Network,
    pub data: Dataset,
    /// Neuron 0 has zero tangential slope everywhere.
    pub flat: bool,
}

const MARGIN: f64 = 0.05;

pub fn stationary_fixture<R: Rng>(rng: &mut R, o: FixtureOptions) -> StationaryFixture {
    'outer: loop {
        let w: Vec<Array1<f64>> = (0..o.active).map(|_| dyadic(rng, o.d)).collect();
        let h = Array2::from_shape_fn((o.outputs, o.active), |_| {
            let m: f64 = rng.random_range(0.5..2.0);
            if rng.random_bool(0.5) { m } else { -m }
        });
        let center = gaussian(rng, o.d);
        let center = &center / norm(center.view());
        let clear = |x: &Array1<f64>| -> bool {
            let ok_neurons = w.iter().all(|wi| dot(wi.view(), x.view()).abs() > MARGIN * norm(wi.view()) * norm(x.view()));
            let ok_half = !o.half_space || dot(center.view(), x.view()) > 0.2 * norm(x.view());
            ok_neurons && ok_half
        };
        let free_count = o.active * o.d + 2 + rng.random_range(0..4);
        let mut xs: Vec<Array1<f64>> = Vec::new();
        let mut tries = 0;
        while xs.len() < free_count {
            tries += 1;
            if tries > 10_000 {
                continue 'outer;
            }
            let x = gaussian(rng, o.d);
            if clear(&x) {
                xs.push(x);
            }
        }
        // Each neuron needs at least d strictly active samples for a rich fixture.
        for wi in &w {
            if xs.iter().filter(|x| dot(wi.view(), x.view()) > 0.0).count() < o.d {
                continue 'outer;
            }
        }
        let mut kink_xs: Vec<Array1<f64>> = Vec::new();
        let mut tries = 0;
        while kink_xs.len() < o.kinks {
            tries += 1;
            if tries > 10_000 {
                continue 'outer;
            }
            let x = exact_orthogonal(rng, &w[0]);
            let others_inactive = w[1..].iter().all(|wi| dot(wi.view(), x.view()) < -MARGIN * norm(wi.view()) * norm(x.view()));
            let ok_half = !o.half_space || dot(center.view(), x.view()) > 0.2 * norm(x.view());
            if others_inactive && ok_half {
                kink_xs.push(x);
            }
        }

        let k_free = xs.len();
        let k_all = k_free + kink_xs.len();
        let mut x = Array2::zeros((k_all, o.d));
        for (k, xk) in xs.iter().chain(kink_xs.iter()).enumerate() {
            x.row_mut(k).assign(xk);
        }
        let wm = Array2::from_shape_fn((o.active, o.d), |(i, m)| w[i][m]);
        let mut net_w = wm.clone();
        let mut net_h = h.clone();
        if o.zero_neuron {
            net_w = ndarray::concatenate![ndarray::Axis(0), net_w, Array2::zeros((1, o.d))];
            net_h = ndarray::concatenate![ndarray::Axis(1), net_h, Array2::zeros((o.outputs, 1))];
        }
        let net = Network::new(net_w, net_h, Activation::relu()).unwrap();
        let yhat = net.predict(x.view()).unwrap();

        // Constraint rows: neuron i, coordinate m, over free samples.
        let mut rows: Vec<Array1<f64>> = Vec::new();
        for wi in &w {
            for m in 0..o.d {
                rows.push(Array1::from_iter(xs.iter().map(|xk| if dot(wi.view(), xk.view()) > 0.0 { xk[m] } else { 0.0 })));
            }
        }
        let basis = orthonormal_rows(&rows);
        let mut e = Array2::zeros((k_all, o.outputs));
        if !o.zero_residual {
            for j in 0..o.outputs {
                let mut r = gaussian(rng, k_free) * 0.3;
                for q in &basis {
                    let c = dot(q.view(), r.view());
                    r.scaled_add(-c, q);
                }
                for k in 0..k_free {
                    e[[k, j]] = r[k];
                }
            }
        }
        let flat = o.kinks == 0 || o.zero_residual;
        if !o.zero_residual {
            for b in 0..kink_xs.len() {
                let s: f64 = rng.random_range(0.2..1.0);
                for j in 0..o.outputs {
                    e[[k_free + b, j]] = s * h[[j, 0]];
                }
            }
        }
        // e = yhat - y
        let y = &yhat - &e;
        let data = Dataset::new(x, y).unwrap();
        return StationaryFixture { net, data, flat };
    }
}

fn orthonormal_rows(rows: &[Array1<f64>]) -> Vec<Array1<f64>> {
    let mut basis: Vec<Array1<f64>> = Vec::new();
    for r in rows {
        let mut v = r.clone();
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q.view(), v.view());
                v.scaled_add(-c, q);
            }
        }
        let n = norm(v.view());
        if n > 1e-10 * norm(r.view()).max(1e-300) {
            basis.push(v / n);
        }
    }
    basis
}

/// Samples `eps -> L(P + eps D) - L(P)` on `(0, eps_max]`.
pub fn sweep(net: &Network, data: &Dataset, dir: &Direction, eps_max: f64, points: usize) -> Vec<(f64, f64)> {
    (1..=points)
        .map(|p| {
            let eps = eps_max * p as f64 / points as f64;
            (eps, loss_change(net, data, dir, eps).unwrap())
        })
        .collect()
}

/// Least-squares fit of `sum_{n=1}^{degree} a_n eps^n`, returned as `a_1..a_degree`.
pub fn poly_fit(points: &[(f64, f64)], degree: usize) -> Vec<f64> {
    let scale = points.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
    let mut a = vec![0.0; degree * degree];
    let mut b = vec![0.0; degree];
    for &(eps, v) in points {
        let t = eps / scale;
        let basis: Vec<f64> = (1..=degree).map(|n| t.powi(n as i32)).collect();
        for r in 0..degree {
            b[r] += basis[r] * v;
            for c in 0..degree {
                a[r * degree + c] += basis[r] * basis[c];
            }
        }
    }
    solve_spd(&mut a, &mut b, degree).expect("normal equations are positive definite");
    (0..degree).map(|n| b[n] / scale.powi(n as i32 + 1)).collect()
}

/// Largest step up to `cap` that keeps the activation sector of `D`.
pub fn sector_step(net: &Network, data: &Dataset, dir: &Direction, cap: f64) -> f64 {
    0.5 * stable_step(net, data, dir, cap).unwrap()
}
