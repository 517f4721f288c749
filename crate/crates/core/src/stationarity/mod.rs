//! Directional stationarity, escape neurons and classification.

mod cones;
mod perturb;
mod taylor;

pub use cones::{
    cone_bundle, max_slope, min_slope, min_tangential_slope, random_tangent, tangent_basis, ConeBundle, SlopeExtremum,
    SlopeForm, SlopeMethod, SlopeOptions, DEFAULT_CONE_CAP, DEFAULT_MC_SAMPLES,
};
pub use perturb::{
    increasing_h_perturbation, local_max_necessary, perturbation_cap, perturbation_min_test, LocalMaxCheck,
    PerturbationOptions, PerturbationReport,
};
pub use taylor::{construct_escape_direction, directional_taylor, EscapeDirection, TaylorCoefficients};

use ndarray::{Array1, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::linalg::norm;
use crate::net::{Dataset, Network, DEFAULT_TOL_ACT};
use crate::odd::Landscape;
use cones::{angle_in_arc, arc_gradient, bundle_unchecked, circle_arcs, on_circle, project_onto_cone};

/// Numerical thresholds for stationarity and escape analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Absolute bound on conditions (1) and (2); lower bound `-tol_grad` on (3).
    pub tol_grad: f64,
    /// Relative zero band for `w . x`.
    pub tol_act: f64,
    /// Output weights at or below this magnitude count as zero.
    pub tol_h: f64,
    pub cone_cap: usize,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Tolerances {
    /// For exactly constructed points.
    pub fn exact() -> Self {
        Self {
            tol_grad: 1e-9,
            tol_act: DEFAULT_TOL_ACT,
            tol_h: 0.0,
            cone_cap: DEFAULT_CONE_CAP,
            mc_samples: DEFAULT_MC_SAMPLES,
            seed: 0,
        }
    }

    /// For points reached by gradient descent, which only approach a
    /// stationary point. Calibrated on the registered experiments.
    pub fn proximity() -> Self {
        Self { tol_grad: 1e-5, tol_act: 1e-5, tol_h: 1e-4, ..Self::exact() }
    }

    fn slope_options(&self) -> SlopeOptions {
        SlopeOptions { cap: self.cone_cap, mc_samples: self.mc_samples, seed: self.seed }
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::exact()
    }
}

/// First failing condition of the stationarity test.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "condition", rename_all = "snake_case")]
pub enum Violation {
    /// `dL/dh_ji != 0`.
    OutputWeight { j: usize, i: usize, value: f64 },
    /// `dL/dr_i != 0`.
    Radial { i: usize, value: f64 },
    /// Some tangential direction `v` has negative slope.
    Tangential { i: usize, value: f64, v: Vec<f64> },
}

impl Violation {
    pub fn condition(&self) -> u8 {
        match self {
            Violation::OutputWeight { .. } => 1,
            Violation::Radial { .. } => 2,
            Violation::Tangential { .. } => 3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StationarityCheck {
    pub stationary: bool,
    pub violation: Option<Violation>,
    /// True when some tangential minimum came from sampling.
    pub approximate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EscapeWitness {
    pub i: usize,
    pub j: usize,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Classification {
    NotStationary,
    LocalMinType1,
    NonMinStationary,
    Type2Candidate,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::NotStationary => "NOT_STATIONARY",
            Classification::LocalMinType1 => "LOCAL_MIN_TYPE1",
            Classification::NonMinStationary => "NON_MIN_STATIONARY",
            Classification::Type2Candidate => "TYPE2_CANDIDATE",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StationarityVerdict {
    pub stationary: bool,
    pub classification: Classification,
    pub violating_witness: Option<Violation>,
    pub escape_neurons: Vec<EscapeWitness>,
    pub tolerances: Tolerances,
    pub approximate: bool,
}

impl StationarityVerdict {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("verdict serializes")
    }
}

fn bundle_for(land: &Landscape, i: usize) -> cones::ConeBundle {
    bundle_unchecked(land, i, land.pattern().boundary(i))
}

/// Checks the three stationarity conditions and reports the first failure.
pub fn is_stationary(net: &Network, data: &Dataset, tol: &Tolerances) -> Result<StationarityCheck> {
    let land = Landscape::new(net, data, tol.tol_act)?;
    Ok(check_conditions(&land, tol))
}

pub(crate) fn check_conditions(land: &Landscape, tol: &Tolerances) -> StationarityCheck {
    let net = land.net();
    let gh = land.grad_h();
    for ((j, i), &g) in gh.indexed_iter() {
        if g.abs() > tol.tol_grad {
            return StationarityCheck {
                stationary: false,
                violation: Some(Violation::OutputWeight { j, i, value: g }),
                approximate: false,
            };
        }
    }
    for i in 0..net.hidden() {
        let r = land.radial_derivative(i);
        if r.abs() > tol.tol_grad {
            return StationarityCheck {
                stationary: false,
                violation: Some(Violation::Radial { i, value: r }),
                approximate: false,
            };
        }
    }
    let mut approximate = false;
    for i in 0..net.hidden() {
        if net.h().column(i).iter().all(|&h| h == 0.0) {
            continue;
        }
        let bundle = bundle_for(land, i);
        let m = min_tangential_slope(&bundle, net.w_row(i), tol.slope_options());
        approximate |= !m.reliable;
        if m.value < -tol.tol_grad {
            return StationarityCheck {
                stationary: false,
                violation: Some(Violation::Tangential {
                    i,
                    value: m.value,
                    v: m.argmin.map(|v| v.to_vec()).unwrap_or_default(),
                }),
                approximate,
            };
        }
    }
    StationarityCheck { stationary: true, violation: None, approximate }
}

/// Result of the escape search, with a flag for randomized searches.
#[derive(Debug, Clone)]
pub struct EscapeSearch {
    pub witnesses: Vec<EscapeWitness>,
    pub approximate: bool,
}

/// Neurons admitting a tangential `v` with zero tangential derivative but a
/// nonzero per-output slope `d_j'i^v . v`. One witness per neuron.
pub fn detect_escape_neurons(net: &Network, data: &Dataset, tol: &Tolerances) -> Result<EscapeSearch> {
    let land = Landscape::new(net, data, tol.tol_act)?;
    Ok(escape_search(&land, tol))
}

pub(crate) fn escape_search(land: &Landscape, tol: &Tolerances) -> EscapeSearch {
    let net = land.net();
    let mut witnesses = Vec::new();
    let mut approximate = false;
    for i in 0..net.hidden() {
        let bundle = bundle_for(land, i);
        let w = net.w_row(i);
        let (found, approx) = escape_for_neuron(&bundle, w, tol);
        approximate |= approx;
        if let Some((j, v)) = found {
            witnesses.push(EscapeWitness { i, j, v: v.to_vec() });
        }
    }
    EscapeSearch { witnesses, approximate }
}

/// A witness `(j', v)` for one neuron, and whether the search was randomized.
fn escape_for_neuron(bundle: &ConeBundle, w: ArrayView1<f64>, tol: &Tolerances) -> (Option<(usize, Array1<f64>)>, bool) {
    let opts = tol.slope_options();
    let outputs = bundle.outputs();
    let h_zero = bundle.h().iter().all(|h| h.abs() <= tol.tol_h);
    if h_zero {
        // the tangential derivative vanishes identically; any nonzero per-output slope witnesses
        let mut approximate = false;
        for j in 0..outputs {
            let form = bundle.output_form(j);
            for ext in [min_slope(&form, w, opts), max_slope(&form, w, opts)] {
                approximate |= !ext.reliable;
                if ext.value.abs() > tol.tol_grad {
                    if let Some(v) = ext.argmin {
                        return (Some((j, v)), approximate);
                    }
                }
            }
        }
        return (None, approximate);
    }
    if outputs == 1 {
        // with h != 0 a zero tangential derivative forces d^v . v = 0
        return (None, false);
    }
    let f = bundle.slope_form();
    let forms: Vec<SlopeForm> = (0..outputs).map(|j| bundle.output_form(j)).collect();
    let basis = tangent_basis(w);
    let check = |v: &Array1<f64>| -> Option<usize> {
        if f.eval(v.view()).abs() > tol.tol_grad {
            return None;
        }
        (0..outputs).find(|&j| forms[j].eval(v.view()).abs() > tol.tol_grad)
    };
    match basis.len() {
        1 => {
            for v in [basis[0].clone(), -&basis[0]] {
                if let Some(j) = check(&v) {
                    return (Some((j, v)), false);
                }
            }
            (None, false)
        }
        2 => (escape_on_circle(&f, &basis, check), false),
        _ => (escape_randomized(&f, &basis, tol.seed, check), true),
    }
}

fn escape_on_circle(
    f: &SlopeForm,
    basis: &[Array1<f64>],
    check: impl Fn(&Array1<f64>) -> Option<usize>,
) -> Option<(usize, Array1<f64>)> {
    for arc in circle_arcs(f, basis) {
        let g = arc_gradient(f, basis, arc);
        let gn = (g.0 * g.0 + g.1 * g.1).sqrt();
        let candidates: Vec<f64> = if gn <= f64::EPSILON * norm(f.a.view()).max(1.0) {
            // slope vanishes on the whole arc
            (1..8).map(|m| arc.0 + (arc.1 - arc.0) * f64::from(m) / 8.0).chain([arc.0, arc.1]).collect()
        } else {
            let perp = g.0.atan2(-g.1);
            [perp, perp + std::f64::consts::PI].into_iter().filter(|&t| angle_in_arc(t, arc)).collect()
        };
        for theta in candidates {
            let v = on_circle(basis, theta);
            if let Some(j) = check(&v) {
                return Some((j, v));
            }
        }
    }
    None
}

/// Samples the zero set of each cone by projecting random vectors onto
/// `{v in cone : g . v = 0}`.
fn escape_randomized(
    f: &SlopeForm,
    basis: &[Array1<f64>],
    seed: u64,
    check: impl Fn(&Array1<f64>) -> Option<usize>,
) -> Option<(usize, Array1<f64>)> {
    const DRAWS_PER_CONE: usize = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let active: Vec<usize> = (0..f.xs.len()).filter(|&k| f.c[k] != 0.0).collect();
    let coords: Vec<Array1<f64>> = active.iter().map(|&k| cones::coords(basis, f.xs[k].view())).collect();
    let cone_count = 1u64 << active.len().min(16);
    for mask in 0..cone_count {
        let mut normals: Vec<Array1<f64>> = Vec::with_capacity(active.len() + 2);
        for (b, c) in coords.iter().enumerate() {
            let s = if mask >> b & 1 == 1 { 1.0 } else { -1.0 };
            normals.push(c * s);
        }
        let g = cones::coords(basis, f.gradient(expand_mask(mask, &active, f.xs.len())).view());
        normals.push(g.clone());
        normals.push(-&g);
        for _ in 0..DRAWS_PER_CONE {
            let q = cones::coords(basis, cones::random_in_span(basis, &mut rng).view());
            let Some(p) = project_onto_cone(&normals, q.view()) else { continue };
            let pn = norm(p.view());
            if pn <= 1e-12 * norm(q.view()) {
                continue;
            }
            let v = cones::uncoords(basis, (&p / pn).view());
            if let Some(j) = check(&v) {
                return Some((j, v));
            }
        }
    }
    None
}

fn expand_mask(mask: u64, active: &[usize], total: usize) -> u64 {
    let mut out = 0u64;
    for (b, &k) in active.iter().enumerate() {
        if mask >> b & 1 == 1 && k < total {
            out |= 1 << k;
        }
    }
    out
}

pub fn classify(net: &Network, data: &Dataset, tol: &Tolerances) -> Result<StationarityVerdict> {
    let land = Landscape::new(net, data, tol.tol_act)?;
    let check = check_conditions(&land, tol);
    if !check.stationary {
        return Ok(StationarityVerdict {
            stationary: false,
            classification: Classification::NotStationary,
            violating_witness: check.violation,
            escape_neurons: Vec::new(),
            tolerances: *tol,
            approximate: check.approximate,
        });
    }
    let search = escape_search(&land, tol);
    let classification = if search.witnesses.is_empty() {
        Classification::LocalMinType1
    } else if net.outputs() == 1 {
        Classification::NonMinStationary
    } else {
        Classification::Type2Candidate
    };
    Ok(StationarityVerdict {
        stationary: true,
        classification,
        violating_witness: None,
        escape_neurons: search.witnesses,
        tolerances: *tol,
        approximate: check.approximate || search.approximate,
    })
}

/// Both extrema of the tangential derivative of neuron `i` vanish.
pub fn tangentially_flat(land: &Landscape, i: usize, tol: &Tolerances) -> bool {
    let bundle = bundle_for(land, i);
    let form = bundle.slope_form();
    let w = land.net().w_row(i);
    let lo = min_slope(&form, w, tol.slope_options()).value;
    let hi = max_slope(&form, w, tol.slope_options()).value;
    lo.abs() <= tol.tol_grad && hi.abs() <= tol.tol_grad
}
