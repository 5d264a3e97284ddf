use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{forward, MlpSpec};
use crate::params::Params;
use crate::scalar::Scalar;

/// Top-1 accuracy of `params` on `test`. Every test label must fit the head.
pub fn evaluate<T: Scalar>(params: &Params<T>, spec: &MlpSpec, test: &Dataset<T>) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    if let Some(&y) = test.histogram().classes().last() {
        if y >= spec.num_classes {
            return Err(Error::invalid(
                "test set",
                format!("label {y} outside head of size {}", spec.num_classes),
            ));
        }
    }
    let idx = test.all_indices();
    let logits = forward(params, spec, &test.feature_matrix(&idx))?;
    let correct = logits
        .argmax_rows()
        .iter()
        .zip(test.labels(&idx))
        .filter(|(p, y)| **p == *y)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Average accuracy over tasks and final accuracy, given the overall
/// accuracy measured after each task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub a_avg: f64,
    pub a_last: f64,
}

pub fn summarize(overall_after_task: &[f64]) -> Result<AccuracySummary> {
    let last = *overall_after_task
        .last()
        .ok_or(Error::Empty("accuracy series"))?;
    let a_avg = overall_after_task.iter().sum::<f64>() / overall_after_task.len() as f64;
    Ok(AccuracySummary {
        a_avg,
        a_last: last,
    })
}

/// Inputs to the analytic cost model, all in parameter or sample units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostInputs {
    pub num_clients: u64,
    /// Total communication rounds over the whole stream.
    pub rounds: u64,
    pub local_epochs: u64,
    pub param_count: u64,
    /// Training samples summed over clients.
    pub total_samples: u64,
    pub num_classes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub communication: u128,
    pub client_compute: u128,
    pub server_compute: u128,
    pub total: u128,
}

/// Per round every client downloads and uploads `P` parameters and the
/// server sends two class histograms' worth of metadata; each local epoch
/// costs a forward and backward pass per sample; the server averages
/// `C + 1` models per round and allocates once per class.
pub fn estimate_costs(i: &CostInputs) -> CostEstimate {
    let (c, r, e, p, d, y) = (
        i.num_clients as u128,
        i.rounds as u128,
        i.local_epochs as u128,
        i.param_count as u128,
        i.total_samples as u128,
        i.num_classes as u128,
    );
    let communication = r * (c * p + 2 * y);
    let client_compute = 2 * r * e * d;
    let server_compute = r * (c + 1) * p + y;
    CostEstimate {
        communication,
        client_compute,
        server_compute,
        total: communication + client_compute + server_compute,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabeledSample;

    #[test]
    fn summary_of_series() {
        let s = summarize(&[0.9, 0.6, 0.3]).unwrap();
        assert!((s.a_avg - 0.6).abs() < 1e-12);
        assert_eq!(s.a_last, 0.3);
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn cost_spreadsheet_values() {
        let est = estimate_costs(&CostInputs {
            num_clients: 5,
            rounds: 10,
            local_epochs: 3,
            param_count: 1000,
            total_samples: 500,
            num_classes: 13,
        });
        assert_eq!(est.communication, 50_260);
        assert_eq!(est.client_compute, 30_000);
        assert_eq!(est.server_compute, 60_013);
        assert_eq!(est.total, 140_273);
    }

    #[test]
    fn cost_total_closed_form() {
        for (c, r, e, p, d, y) in [
            (1u64, 1, 1, 1, 1, 1),
            (7, 13, 2, 12345, 999, 40),
            (3, 0, 5, 10, 10, 2),
        ] {
            let est = estimate_costs(&CostInputs {
                num_clients: c,
                rounds: r,
                local_epochs: e,
                param_count: p,
                total_samples: d,
                num_classes: y,
            });
            let (c, r, e, p, d, y) = (
                c as u128, r as u128, e as u128, p as u128, d as u128, y as u128,
            );
            assert_eq!(est.total, r * ((2 * c + 1) * p + 2 * y + 2 * e * d) + y);
        }
    }

    #[test]
    fn evaluate_counts_argmax_hits() {
        // identity layers on non-negative features: predicts the larger coordinate
        let spec = MlpSpec::new(2, vec![2], 2).unwrap();
        let eye = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let p = Params::new([eye, eye].concat(), spec.layer_shapes()).unwrap();
        let samples = vec![
            LabeledSample {
                uid: 0,
                features: vec![1.0, 0.0],
                label: 0,
                domain: 0,
            },
            LabeledSample {
                uid: 1,
                features: vec![0.0, 1.0],
                label: 1,
                domain: 0,
            },
            LabeledSample {
                uid: 2,
                features: vec![2.0, 1.0],
                label: 1,
                domain: 0,
            },
            LabeledSample {
                uid: 3,
                features: vec![0.0, 3.0],
                label: 1,
                domain: 0,
            },
        ];
        let ds = Dataset::new(samples, 2, 2).unwrap();
        assert_eq!(evaluate(&p, &spec, &ds).unwrap(), 0.75);
        assert!(evaluate(&p, &spec, &Dataset::empty(2, 2)).is_err());
        let wide = Dataset::new(
            vec![LabeledSample {
                uid: 0,
                features: vec![1.0, 0.0],
                label: 2,
                domain: 0,
            }],
            3,
            2,
        )
        .unwrap();
        assert!(evaluate(&p, &spec, &wide).is_err());
    }
}
