//! Built-in experiment registry.

use ndarray::{array, Array2};
use serde::Serialize;

use crate::dynamics::{LossReduction, TrainConfig, DEFAULT_EPS_RATE};
use crate::error::{Error, Result};
use crate::net::Dataset;

#[derive(Debug, Clone, Serialize)]
pub struct Experiment {
    pub name: &'static str,
    #[serde(skip)]
    pub dataset: Dataset,
    pub config: TrainConfig,
    /// Plateau threshold for this run's loss curve.
    pub eps_rate: f64,
}

pub const NAMES: [&str; 4] = ["exp1", "exp2", "exp3", "exp4"];

/// Scalar data on the line: inputs `(x, 1)` with the constant coordinate acting as a bias.
fn line_data() -> Dataset {
    let xs = [-1.0, -0.6, -0.1, 0.3, 0.7];
    let ys = [0.28, -0.1, 0.03, 0.23, -0.22];
    let x = Array2::from_shape_fn((5, 2), |(k, m)| if m == 0 { xs[k] } else { 1.0 });
    let y = Array2::from_shape_fn((5, 1), |(k, _)| ys[k]);
    Dataset::new(x, y).expect("registry data is valid")
}

fn relu_config(init_std: f64, epochs: usize, record_every: usize) -> TrainConfig {
    TrainConfig {
        hidden: 50,
        init_std,
        init_seed: 0,
        lr: 0.001,
        epochs,
        record_every,
        alpha_plus: 1.0,
        alpha_minus: 0.0,
        loss_reduction: LossReduction::Mean,
    }
}

pub fn experiment(name: &str) -> Result<Experiment> {
    match name {
        "exp1" => Ok(Experiment {
            name: "exp1",
            dataset: line_data(),
            config: relu_config(5e-6, 500_000, 100),
            eps_rate: DEFAULT_EPS_RATE,
        }),
        "exp2" => Ok(Experiment {
            name: "exp2",
            dataset: line_data(),
            config: relu_config(8.75e-4, 600_000, 100),
            eps_rate: DEFAULT_EPS_RATE,
        }),
        "exp3" => {
            let x = array![
                [-0.3, -0.75, -0.5],
                [-0.2, -0.2, 0.4],
                [-0.6, 1.0, -1.0],
                [-0.4, 0.4, 0.3],
                [0.6, -0.1, -0.7],
                [0.4, -0.9, 0.3],
                [0.2, 0.2, -0.5]
            ];
            let y = array![[-0.5], [0.1], [-0.6], [0.3], [0.8], [-0.3], [-0.1]];
            let dataset = Dataset::new(x, y).expect("registry data is valid");
            // The intermediate plateaus decay at 1e-7 to 4e-7 per epoch, so the
            // default threshold only resolves the first one.
            Ok(Experiment { name: "exp3", dataset, config: relu_config(9.51e-11, 1_500_000, 500), eps_rate: 1e-6 })
        }
        "exp4" => {
            let x = array![[-0.3, 0.5], [1.0, 1.0], [-0.6, -1.0], [0.4, -0.4]];
            let y = array![[0.6, -0.5], [0.5, -1.0], [-0.4, 0.6], [0.8, 0.2]];
            let dataset = Dataset::new(x, y).expect("registry data is valid");
            Ok(Experiment {
                name: "exp4",
                dataset,
                config: relu_config(9.51e-11, 600_000, 100),
                eps_rate: DEFAULT_EPS_RATE,
            })
        }
        other => Err(Error::Validation(format!("unknown experiment '{other}'; expected one of {}", NAMES.join(", ")))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{loss, Activation, Network};

    #[test]
    fn zero_network_loss_on_line_data() {
        let e = experiment("exp1").unwrap();
        let net = Network::zeros(2, 1, 1, Activation::relu()).unwrap();
        // 0.5 * (0.28^2 + 0.1^2 + 0.03^2 + 0.23^2 + 0.22^2)
        let oracle = 0.5 * [0.28f64, -0.1, 0.03, 0.23, -0.22].iter().map(|y| y * y).sum::<f64>();
        assert!((loss(&net, &e.dataset).unwrap() - oracle).abs() < 1e-15);
        assert!((oracle - 0.0953).abs() < 5e-5);
    }

    #[test]
    fn unknown_name_is_validation_error() {
        assert!(matches!(experiment("exp9"), Err(Error::Validation(_))));
    }
}
