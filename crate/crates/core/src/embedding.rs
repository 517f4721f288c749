//! Function-preserving network widening and the preservation predicates.

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, orthogonal_complement};
use crate::net::{Dataset, Network};
use crate::odd::Landscape;
use crate::stationarity::{check_conditions, classify, tangentially_flat, Classification, Tolerances};

/// Allowed deviation of `sum beta * gamma` from 1.
pub const REPLICATION_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicationCoeff {
    pub beta: f64,
    pub gamma: f64,
}

/// Split neuron `i0` into copies `(beta_l w, gamma_l h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSpec {
    pub i0: usize,
    pub coeffs: Vec<ReplicationCoeff>,
}

impl ReplicationSpec {
    pub fn new(i0: usize, coeffs: &[(f64, f64)]) -> Self {
        Self { i0, coeffs: coeffs.iter().map(|&(beta, gamma)| ReplicationCoeff { beta, gamma }).collect() }
    }

    pub fn validate(&self, net: &Network) -> Result<()> {
        if self.i0 >= net.hidden() {
            return Err(Error::Contract(format!("i0 = {} but the network has {} neurons", self.i0, net.hidden())));
        }
        if self.coeffs.is_empty() {
            return Err(Error::Contract("replication needs at least one copy".into()));
        }
        if let Some(c) = self.coeffs.iter().find(|c| !(c.beta > 0.0) || !c.beta.is_finite() || !c.gamma.is_finite()) {
            return Err(Error::Contract(format!("beta must be positive and finite, got {c:?}")));
        }
        let s: f64 = self.coeffs.iter().map(|c| c.beta * c.gamma).sum();
        if (s - 1.0).abs() > REPLICATION_SUM_TOL {
            return Err(Error::Contract(format!("sum of beta * gamma must be 1, got {s}")));
        }
        Ok(())
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::Parse { what: "replication spec", reason: e.to_string() })
    }
}

/// The first copy keeps index `i0`; the others are appended in order.
pub fn unit_replicate(net: &Network, spec: &ReplicationSpec) -> Result<Network> {
    spec.validate(net)?;
    let w0 = net.w_row(spec.i0).to_owned();
    let h0 = net.h().column(spec.i0).to_owned();
    let mut w = net.w().to_owned();
    let mut h = net.h().to_owned();
    let first = spec.coeffs[0];
    w.row_mut(spec.i0).assign(&(&w0 * first.beta));
    h.column_mut(spec.i0).assign(&(&h0 * first.gamma));
    let extra = &spec.coeffs[1..];
    let new_w = Array2::from_shape_fn((extra.len(), net.input_dim()), |(l, m)| extra[l].beta * w0[m]);
    let new_h = Array2::from_shape_fn((net.outputs(), extra.len()), |(j, l)| extra[l].gamma * h0[j]);
    append(net, w, h, new_w.view(), new_h.view())
}

fn append(net: &Network, w: Array2<f64>, h: Array2<f64>, new_w: ArrayView2<f64>, new_h: ArrayView2<f64>) -> Result<Network> {
    let w = concatenate(Axis(0), &[w.view(), new_w]).map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    let h = concatenate(Axis(1), &[h.view(), new_h]).map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    Network::new(w, h, net.activation())
}

#[derive(Debug, Clone, Serialize)]
pub struct PreservationReport {
    pub preserves: bool,
    /// Whether the input satisfied the precondition of the predicate.
    pub precondition_holds: bool,
    pub tangentially_flat: bool,
}

/// Stationarity survives replication iff `i0` is tangentially flat or every `gamma >= 0`.
pub fn replication_preserves_stationarity(
    net: &Network,
    data: &Dataset,
    spec: &ReplicationSpec,
    tol: &Tolerances,
) -> Result<PreservationReport> {
    spec.validate(net)?;
    let land = Landscape::new(net, data, tol.tol_act)?;
    let precondition_holds = check_conditions(&land, tol).stationary;
    let flat = tangentially_flat(&land, spec.i0, tol);
    let preserves = flat || spec.coeffs.iter().all(|c| c.gamma >= 0.0);
    Ok(PreservationReport { preserves, precondition_holds, tangentially_flat: flat })
}

/// Type-1 minimality survives replication iff `i0` is tangentially flat or every `gamma > 0`.
pub fn replication_preserves_type1_min(
    net: &Network,
    data: &Dataset,
    spec: &ReplicationSpec,
    tol: &Tolerances,
) -> Result<PreservationReport> {
    spec.validate(net)?;
    let land = Landscape::new(net, data, tol.tol_act)?;
    let precondition_holds = classify(net, data, tol)?.classification == Classification::LocalMinType1;
    let flat = tangentially_flat(&land, spec.i0, tol);
    let preserves = flat || spec.coeffs.iter().all(|c| c.gamma > 0.0);
    Ok(PreservationReport { preserves, precondition_holds, tangentially_flat: flat })
}

/// Orthonormal basis of `{w : w . x_k = 0 for all k}`.
pub fn input_null_space(data: &Dataset) -> Vec<Array1<f64>> {
    let rows: Vec<Array1<f64>> = data.x().outer_iter().map(|r| r.to_owned()).collect();
    orthogonal_complement(&rows, data.input_dim(), 1e-10)
}

/// Appends `h_values.ncols()` neurons whose input weights cycle through an
/// orthonormal basis of the input null space.
pub fn add_orthogonal_units(net: &Network, data: &Dataset, h_values: ArrayView2<f64>) -> Result<Network> {
    data.check(net)?;
    check_h_block(net, h_values)?;
    let basis = input_null_space(data);
    if basis.is_empty() {
        return Err(Error::Infeasible("training inputs span the input space; no orthogonal direction exists".into()));
    }
    let count = h_values.ncols();
    let new_w = Array2::from_shape_fn((count, net.input_dim()), |(c, m)| basis[c % basis.len()][m]);
    append(net, net.w().to_owned(), net.h().to_owned(), new_w.view(), h_values)
}

fn check_h_block(net: &Network, h_values: ArrayView2<f64>) -> Result<()> {
    if h_values.nrows() != net.outputs() {
        return Err(Error::DimensionMismatch(format!(
            "output-weight block has {} rows, network has {} outputs",
            h_values.nrows(),
            net.outputs()
        )));
    }
    Ok(())
}

/// Appends units with `w . x_k < 0` for every sample. Requires a zero negative slope.
pub fn add_negative_units(
    net: &Network,
    data: &Dataset,
    h_values: ArrayView2<f64>,
    w_candidates: ArrayView2<f64>,
) -> Result<Network> {
    data.check(net)?;
    check_h_block(net, h_values)?;
    if net.activation().alpha_minus() != 0.0 {
        return Err(Error::Contract("negative units require alpha_minus = 0".into()));
    }
    if w_candidates.nrows() != h_values.ncols() || w_candidates.ncols() != net.input_dim() {
        return Err(Error::DimensionMismatch("candidate block does not match output-weight block".into()));
    }
    for (c, w) in w_candidates.outer_iter().enumerate() {
        for (k, x) in data.x().outer_iter().enumerate() {
            if dot(w, x) >= 0.0 {
                return Err(Error::Contract(format!("candidate {c} has w . x_{k} >= 0")));
            }
        }
    }
    append(net, net.w().to_owned(), net.h().to_owned(), w_candidates, h_values)
}

/// Rejection sampling for input weights strictly negative on every sample.
/// Alternates Gaussian draws with random points of the negated conic hull
/// of the inputs; fails after `max_draws`.
pub fn find_negative_candidates(data: &Dataset, count: usize, seed: u64, max_draws: usize) -> Result<Array2<f64>> {
    let d = data.input_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut found: Vec<Array1<f64>> = Vec::with_capacity(count);
    let mut draws = 0;
    while found.len() < count {
        if draws >= max_draws {
            return Err(Error::Infeasible(format!("no strictly negative direction in {max_draws} draws")));
        }
        let w: Array1<f64> = if draws % 2 == 0 {
            Array1::from_iter((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)))
        } else {
            let mut w = Array1::zeros(d);
            for x in data.x().outer_iter() {
                w.scaled_add(-rng.sample::<f64, _>(Exp1), &x);
            }
            w
        };
        draws += 1;
        if data.x().outer_iter().all(|x| dot(w.view(), x) < 0.0) {
            found.push(w);
        }
    }
    let flat: Vec<f64> = found.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((count, d), flat).expect("count rows of length d"))
}

/// Appends neurons with the given input weights and zero output weights.
pub fn add_inactive_propagation(net: &Network, w_list: ArrayView2<f64>) -> Result<Network> {
    if w_list.ncols() != net.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "weights have {} columns, network input dimension is {}",
            w_list.ncols(),
            net.input_dim()
        )));
    }
    let h = Array2::zeros((net.outputs(), w_list.nrows()));
    append(net, net.w().to_owned(), net.h().to_owned(), w_list, h.view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Activation;
    use ndarray::array;

    fn exp1_like() -> (Network, Dataset) {
        let x = array![[-1.0, 1.0], [-0.6, 1.0], [-0.1, 1.0], [0.3, 1.0], [0.7, 1.0]];
        let y = array![[0.28], [-0.1], [0.03], [0.23], [-0.22]];
        let net = Network::new(array![[0.4, 0.2], [-0.3, 0.5]], array![[0.7, -1.1]], Activation::relu()).unwrap();
        (net, Dataset::new(x, y).unwrap())
    }

    #[test]
    fn identity_replication_is_identity() {
        let (net, _) = exp1_like();
        let out = unit_replicate(&net, &ReplicationSpec::new(1, &[(1.0, 1.0)])).unwrap();
        assert_eq!(out, net);
    }

    #[test]
    fn halves_preserve_outputs() {
        let (net, data) = exp1_like();
        let out = unit_replicate(&net, &ReplicationSpec::new(0, &[(1.0, 0.5), (1.0, 0.5)])).unwrap();
        assert_eq!(out.hidden(), 3);
        let a = net.predict(data.x()).unwrap();
        let b = out.predict(data.x()).unwrap();
        assert!((&a - &b).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn spec_validation() {
        let (net, _) = exp1_like();
        assert!(unit_replicate(&net, &ReplicationSpec::new(0, &[(1.0, 0.4)])).is_err());
        assert!(unit_replicate(&net, &ReplicationSpec::new(0, &[(-1.0, -1.0)])).is_err());
        assert!(unit_replicate(&net, &ReplicationSpec::new(5, &[(1.0, 1.0)])).is_err());
        let spec = ReplicationSpec::from_json(br#"{"i0":1,"coeffs":[{"beta":2.0,"gamma":0.25},{"beta":1.0,"gamma":0.5}]}"#)
            .unwrap();
        assert!(spec.validate(&net).is_ok());
    }

    #[test]
    fn full_rank_inputs_have_no_orthogonal_units() {
        let (net, data) = exp1_like();
        let err = add_orthogonal_units(&net, &data, array![[1.0]].view());
        assert!(matches!(err, Err(Error::Infeasible(_))));
    }

    #[test]
    fn planar_inputs_admit_orthogonal_units() {
        let x = array![[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 2.0]];
        let data = Dataset::new(x, array![[0.1], [0.2], [0.3]]).unwrap();
        let net = Network::new(array![[0.3, -0.2, 0.5]], array![[1.5]], Activation::relu()).unwrap();
        let out = add_orthogonal_units(&net, &data, array![[2.0, -3.0]].view()).unwrap();
        assert_eq!(out.hidden(), 3);
        let a = net.predict(data.x()).unwrap();
        let b = out.predict(data.x()).unwrap();
        assert!((&a - &b).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn negative_units_validated() {
        let (net, data) = exp1_like();
        // angle 4.8 rad lies inside the dead cone of these inputs
        let w = array![[4.8f64.cos(), 4.8f64.sin()]];
        assert!(add_negative_units(&net, &data, array![[1.0]].view(), w.view()).is_ok());
        let bad = array![[1.0, 0.0]];
        assert!(add_negative_units(&net, &data, array![[1.0]].view(), bad.view()).is_err());
        let leaky = Network::new(net.w().to_owned(), net.h().to_owned(), Activation::new(1.0, 0.1).unwrap()).unwrap();
        assert!(add_negative_units(&leaky, &data, array![[1.0]].view(), w.view()).is_err());
        let found = find_negative_candidates(&data, 3, 1, 100_000).unwrap();
        assert!(add_negative_units(&net, &data, array![[1.0, 2.0, 3.0]].view(), found.view()).is_ok());
    }
}
