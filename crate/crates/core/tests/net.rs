mod common;

use common::{gaussian, random_instance};
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use relu_landscape::net::{
    activation_pattern, load_checkpoint, load_dataset, loss, residuals, save_checkpoint, save_dataset, DEFAULT_TOL_ACT,
};
use relu_landscape::{Activation, Dataset, Error, Network};

fn instance(seed: u64) -> (Network, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha_minus = (seed % 7) as f64 / 10.0 - 0.3;
    random_instance(&mut rng, 2 + (seed % 4) as usize, 1 + (seed % 2) as usize, 3, 6, Activation::new(1.0, alpha_minus).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rescaling_a_neuron_keeps_outputs(seed in any::<u64>(), c in 0.01f64..100.0) {
        let (net, data) = instance(seed);
        let (mut w, mut h, act) = net.clone().into_parts();
        w.row_mut(0).mapv_inplace(|v| v * c);
        h.column_mut(0).mapv_inplace(|v| v / c);
        let scaled = Network::new(w, h, act).unwrap();
        let a = net.predict(data.x()).unwrap();
        let b = scaled.predict(data.x()).unwrap();
        for (p, q) in a.iter().zip(b.iter()) {
            prop_assert!((p - q).abs() <= 1e-12 * (1.0 + p.abs()));
        }
    }

    #[test]
    fn loss_is_half_squared_residual(seed in any::<u64>()) {
        let (net, data) = instance(seed);
        let e = residuals(&net, &data).unwrap();
        let oracle = 0.5 * e.iter().map(|v| v * v).sum::<f64>();
        let l = loss(&net, &data).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert!((l - oracle).abs() <= 1e-14 * (1.0 + oracle));
    }

    #[test]
    fn predict_rows_match_forward(seed in any::<u64>()) {
        let (net, data) = instance(seed);
        let all = net.predict(data.x()).unwrap();
        for (k, x) in data.x().outer_iter().enumerate() {
            let row = net.forward(x).unwrap();
            for j in 0..net.outputs() {
                prop_assert!((row[j] - all[[k, j]]).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly(seed in any::<u64>()) {
        let (net, data) = instance(seed);
        let back = load_checkpoint(&save_checkpoint(&net)).unwrap();
        prop_assert_eq!(back.w(), net.w());
        prop_assert_eq!(back.h(), net.h());
        prop_assert_eq!(back.activation(), net.activation());
        let d = load_dataset(&save_dataset(&data)).unwrap();
        prop_assert_eq!(d.x(), data.x());
        prop_assert_eq!(d.y(), data.y());
    }

    #[test]
    fn clear_signs_match_preactivations(seed in any::<u64>()) {
        let (net, data) = instance(seed);
        let p = activation_pattern(&net, &data, DEFAULT_TOL_ACT);
        for i in 0..net.hidden() {
            for (k, x) in data.x().outer_iter().enumerate() {
                let z = net.w_row(i).dot(&x);
                let s = p.sign(i, k);
                prop_assert!(s == 0 || (s as f64) * z > 0.0);
            }
        }
    }
}

#[test]
fn leaky_activation_values() {
    let act = Activation::new(2.0, 0.25).unwrap();
    assert_eq!(act.rho(3.0), 6.0);
    assert_eq!(act.rho(-4.0), -1.0);
    assert_eq!(act.rho(0.0), 0.0);
}

#[test]
fn hand_computed_forward() {
    let net = Network::new(array![[1.0, -1.0], [0.5, 0.5]], array![[2.0, -1.0]], Activation::relu()).unwrap();
    // z = (1 - 2, 0.5 + 1) = (-1, 1.5); output = 2 * 0 - 1.5
    assert_eq!(net.forward(array![1.0, 2.0].view()).unwrap()[0], -1.5);
}

#[test]
fn construction_errors() {
    assert!(matches!(Activation::new(f64::NAN, 0.0), Err(Error::Contract(_))));
    assert!(matches!(Activation::new(1.0, 1.0), Err(Error::Contract(_))));
    let bad = Network::new(Array2::zeros((2, 3)), Array2::zeros((1, 4)), Activation::relu());
    assert!(matches!(bad, Err(Error::DimensionMismatch(_))));
    assert!(Dataset::new(Array2::zeros((3, 2)), Array2::zeros((2, 1))).is_err());
    let mut x = Array2::zeros((2, 2));
    x[[0, 0]] = f64::INFINITY;
    assert!(Dataset::new(x, Array2::zeros((2, 1))).is_err());
}

#[test]
fn dataset_dimension_checked_against_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = Network::zeros(3, 2, 1, Activation::relu()).unwrap();
    let data = Dataset::new(Array2::from_shape_fn((4, 2), |_| gaussian(&mut rng, 1)[0]), Array2::zeros((4, 1))).unwrap();
    assert!(matches!(loss(&net, &data), Err(Error::DimensionMismatch(_))));
}
