use serde::{Deserialize, Serialize};

use crate::config::DeviationMetric;
use crate::data::ClassHistogram;
use crate::error::{Error, Result};
use crate::params::Params;
use crate::scalar::Scalar;

/// Per-client model-space (`b`) and data-space (`d`) indices, indexed by
/// client id. Each vector sums to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionIndices {
    pub b: Vec<f64>,
    pub d: Vec<f64>,
}

impl ContributionIndices {
    pub fn uniform(num_clients: usize) -> Self {
        let u = 1.0 / num_clients as f64;
        Self {
            b: vec![u; num_clients],
            d: vec![u; num_clients],
        }
    }

    pub fn num_clients(&self) -> usize {
        self.b.len()
    }

    /// `b_c + d_c`, the weight of each client in the pool split.
    pub fn combined(&self) -> Vec<f64> {
        self.b.iter().zip(&self.d).map(|(b, d)| b + d).collect()
    }
}

fn deviation<T: Scalar>(
    local: &Params<T>,
    global: &Params<T>,
    metric: DeviationMetric,
) -> Result<f64> {
    match metric {
        DeviationMetric::L2 => Ok(local.sub(global)?.l2_norm()?.to_f64_lossy()),
        DeviationMetric::Cosine => {
            let dot = local.dot(global)?.to_f64_lossy();
            let nl = local.l2_norm()?.to_f64_lossy();
            let ng = global.l2_norm()?.to_f64_lossy();
            if nl == 0.0 || ng == 0.0 {
                return Ok(if nl == ng { 0.0 } else { 1.0 });
            }
            Ok((1.0 - dot / (nl * ng)).max(0.0))
        }
    }
}

/// Share of each client in the total deviation of the local models from the
/// previous global model. Uniform when no client moved.
pub fn model_contribution<T: Scalar>(
    locals: &[Params<T>],
    prev_global: &Params<T>,
    metric: DeviationMetric,
) -> Result<Vec<f64>> {
    if locals.is_empty() {
        return Err(Error::Empty("client model list"));
    }
    let devs = locals
        .iter()
        .map(|w| deviation(w, prev_global, metric))
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = devs.iter().sum();
    if total == 0.0 {
        return Ok(vec![1.0 / locals.len() as f64; locals.len()]);
    }
    Ok(devs.into_iter().map(|v| v / total).collect())
}

/// Each client's summed share of every class's global count, normalized
/// over clients. Classes with no samples anywhere are skipped.
pub fn data_contribution(histograms: &[ClassHistogram]) -> Result<Vec<f64>> {
    let global = ClassHistogram::sum(histograms);
    if global.is_empty() {
        return Err(Error::Empty("all client histograms"));
    }
    let raw: Vec<f64> = histograms
        .iter()
        .map(|h| {
            h.iter()
                .map(|(y, n)| n as f64 / global.get(y) as f64)
                .sum::<f64>()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(v: &[f64]) -> Params<f64> {
        Params::flat(v.to_vec()).unwrap()
    }

    #[test]
    fn model_index_examples() {
        let g = flat(&[1.0, 1.0]);
        assert_eq!(
            model_contribution(&[flat(&[5.0, 0.0])], &g, DeviationMetric::L2).unwrap(),
            vec![1.0]
        );
        // deviation norms 1 and 3
        let b = model_contribution(
            &[flat(&[1.0, 2.0]), flat(&[1.0, -2.0])],
            &g,
            DeviationMetric::L2,
        )
        .unwrap();
        assert_eq!(b, vec![0.25, 0.75]);
        let same = vec![g.clone(), g.clone(), g.clone()];
        assert_eq!(
            model_contribution(&same, &g, DeviationMetric::L2).unwrap(),
            vec![1.0 / 3.0; 3]
        );
        assert!(model_contribution::<f64>(&[], &g, DeviationMetric::L2).is_err());
    }

    #[test]
    fn cosine_metric() {
        let g = flat(&[1.0, 0.0]);
        let b = model_contribution(
            &[flat(&[2.0, 0.0]), flat(&[0.0, 1.0])],
            &g,
            DeviationMetric::Cosine,
        )
        .unwrap();
        assert_eq!(b, vec![0.0, 1.0]);
    }

    #[test]
    fn data_index_examples() {
        let one = ClassHistogram::from_counts([(0, 4), (1, 2)]);
        let empty = ClassHistogram::default();
        assert_eq!(
            data_contribution(&[one.clone(), empty.clone()]).unwrap(),
            vec![1.0, 0.0]
        );
        assert_eq!(
            data_contribution(&[one.clone(), one]).unwrap(),
            vec![0.5, 0.5]
        );
        let a = ClassHistogram::from_counts([(0, 9), (1, 1)]);
        let b = ClassHistogram::from_counts([(0, 1), (1, 9)]);
        assert_eq!(data_contribution(&[a, b]).unwrap(), vec![0.5, 0.5]);
        assert!(data_contribution(&[empty.clone(), empty]).is_err());
    }
}
