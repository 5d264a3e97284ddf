//! Loss terms over a batch of logits. Each returns the mean value and the
//! gradient with respect to the logits.

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub ce: T,
    pub kl: T,
    pub mg: T,
    /// `ce + kl + delta * mg`
    pub total: T,
}

/// Row-wise softmax and log-softmax, computed with the max-shift.
pub(crate) fn log_softmax_row<T: Scalar>(row: &[T], out_log: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for &z in row {
        sum += (z - max).exp();
    }
    let lse = max + sum.ln();
    for (o, &z) in out_log.iter_mut().zip(row) {
        *o = z - lse;
    }
}

pub fn softmax<T: Scalar>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        let dst = out.row_mut(r);
        log_softmax_row(logits.row(r), dst);
        for v in dst.iter_mut() {
            *v = v.exp();
        }
    }
    out
}

/// Mean softmax cross-entropy.
pub fn loss_ce<T: Scalar>(logits: &Matrix<T>, labels: &[usize]) -> Result<(T, Matrix<T>)> {
    if labels.len() != logits.rows() {
        return Err(Error::DimensionMismatch {
            context: "labels vs logits rows",
            expected: logits.rows(),
            actual: labels.len(),
        });
    }
    if logits.rows() == 0 {
        return Err(Error::Empty("cross-entropy batch"));
    }
    let k = logits.cols();
    let inv_b = T::one() / T::from_usize_lossy(logits.rows());
    let mut grad = Matrix::zeros(logits.rows(), k);
    let mut value = T::zero();
    let mut logp = vec![T::zero(); k];
    for (r, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::invalid(
                "label",
                format!("label {y} outside head of size {k}"),
            ));
        }
        log_softmax_row(logits.row(r), &mut logp);
        value -= logp[y];
        let g = grad.row_mut(r);
        for j in 0..k {
            g[j] = logp[j].exp() * inv_b;
        }
        g[y] -= inv_b;
    }
    Ok((value * inv_b, grad))
}

/// Output-magnitude penalty `log(1 + ||Z||_F^2) / B` over the batch logit matrix.
pub fn loss_mg<T: Scalar>(logits: &Matrix<T>) -> (T, Matrix<T>) {
    let b = T::from_usize_lossy(logits.rows().max(1));
    let mut sq = T::zero();
    for &z in logits.data() {
        sq += z * z;
    }
    let denom = T::one() + sq;
    let value = denom.ln() / b;
    let coef = T::lit(2.0) / (b * denom);
    let grad = Matrix::from_vec(
        logits.rows(),
        logits.cols(),
        logits.data().iter().map(|&z| coef * z).collect(),
    );
    (value, grad)
}

/// Mean `KL(softmax(teacher) || softmax(student))`; the teacher is constant.
pub fn loss_kl<T: Scalar>(teacher: &Matrix<T>, student: &Matrix<T>) -> Result<(T, Matrix<T>)> {
    if teacher.rows() != student.rows() || teacher.cols() != student.cols() {
        return Err(Error::DimensionMismatch {
            context: "teacher vs student logits",
            expected: teacher.rows() * teacher.cols(),
            actual: student.rows() * student.cols(),
        });
    }
    let k = student.cols();
    let inv_b = T::one() / T::from_usize_lossy(student.rows().max(1));
    let mut grad = Matrix::zeros(student.rows(), k);
    let mut value = T::zero();
    let mut lt = vec![T::zero(); k];
    let mut ls = vec![T::zero(); k];
    for r in 0..student.rows() {
        log_softmax_row(teacher.row(r), &mut lt);
        log_softmax_row(student.row(r), &mut ls);
        let g = grad.row_mut(r);
        for j in 0..k {
            let p = lt[j].exp();
            if p > T::zero() {
                value += p * (lt[j] - ls[j]);
            }
            g[j] = (ls[j].exp() - p) * inv_b;
        }
    }
    // rounding can leave a tiny negative value when the distributions agree
    Ok(((value * inv_b).max(T::zero()), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| rng.random_range(-2.0..2.0))
                .collect(),
        )
    }

    /// Central differences of a scalar function of the logit matrix.
    fn fd_grad(m: &Matrix<f64>, f: impl Fn(&Matrix<f64>) -> f64) -> Vec<f64> {
        let h = 1e-5;
        (0..m.data().len())
            .map(|i| {
                let mut plus = m.clone();
                plus.data_mut()[i] += h;
                let mut minus = m.clone();
                minus.data_mut()[i] -= h;
                (f(&plus) - f(&minus)) / (2.0 * h)
            })
            .collect()
    }

    fn assert_close(analytic: &[f64], numeric: &[f64]) {
        for (a, n) in analytic.iter().zip(numeric) {
            let scale = a.abs().max(n.abs()).max(1e-3);
            assert!((a - n).abs() / scale < 1e-4, "analytic {a} numeric {n}");
        }
    }

    #[test]
    fn ce_uniform_is_ln_k() {
        let logits = Matrix::from_vec(2, 5, vec![0.3; 10]);
        let (v, _) = loss_ce(&logits, &[1, 4]).unwrap();
        assert!((v - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ce_saturated_true_class_goes_to_zero() {
        let logits = Matrix::from_vec(1, 3, vec![0.0, 50.0, 0.0]);
        let (v, _) = loss_ce(&logits, &[1]).unwrap();
        assert!(v < 1e-6);
    }

    #[test]
    fn ce_rejects_out_of_head_labels() {
        let logits = Matrix::from_vec(1, 3, vec![0.0; 3]);
        assert!(loss_ce(&logits, &[3]).is_err());
        assert!(loss_ce(&logits, &[0, 1]).is_err());
    }

    #[test]
    fn ce_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let m = random_matrix(&mut rng, 4, 3);
            let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
            let (_, g) = loss_ce(&m, &labels).unwrap();
            let num = fd_grad(&m, |x| loss_ce(x, &labels).unwrap().0);
            assert_close(g.data(), &num);
        }
    }

    #[test]
    fn mg_values() {
        let z = Matrix::<f64>::zeros(3, 4);
        assert_eq!(loss_mg(&z).0, 0.0);
        let unit = Matrix::from_vec(1, 2, vec![0.6, 0.8]);
        assert!((loss_mg(&unit).0 - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mg_monotone_in_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_matrix(&mut rng, 5, 3);
        let vals: Vec<f64> = [0.5, 1.0, 2.0]
            .iter()
            .map(|&s| {
                let scaled = Matrix::from_vec(5, 3, m.data().iter().map(|v| v * s).collect());
                loss_mg(&scaled).0
            })
            .collect();
        assert!(vals[0] <= vals[1] && vals[1] <= vals[2]);
    }

    #[test]
    fn mg_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let m = random_matrix(&mut rng, 4, 3);
            let (_, g) = loss_mg(&m);
            let num = fd_grad(&m, |x| loss_mg(x).0);
            assert_close(g.data(), &num);
        }
    }

    #[test]
    fn kl_identity_and_hand_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_matrix(&mut rng, 3, 4);
        assert_eq!(loss_kl(&m, &m).unwrap().0, 0.0);

        // teacher uniform over 4, student logits (1, 0, 0, 0)
        let teacher = Matrix::from_vec(1, 4, vec![0.0; 4]);
        let student = Matrix::from_vec(1, 4, vec![1.0, 0.0, 0.0, 0.0]);
        let z = 1f64.exp() + 3.0;
        let s = [1f64.exp() / z, 1.0 / z, 1.0 / z, 1.0 / z];
        let expected: f64 = s.iter().map(|sk| 0.25 * (0.25 / sk).ln()).sum();
        let (v, _) = loss_kl(&teacher, &student).unwrap();
        assert!((v - expected).abs() < 1e-14, "{v} vs {expected}");
    }

    #[test]
    fn kl_positive_on_unequal_and_gradient_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let t = random_matrix(&mut rng, 4, 3);
            let s = random_matrix(&mut rng, 4, 3);
            let (v, g) = loss_kl(&t, &s).unwrap();
            assert!(v > 0.0);
            let num = fd_grad(&s, |x| loss_kl(&t, x).unwrap().0);
            assert_close(g.data(), &num);
        }
        // softmax is shift invariant: equal distributions from different logits
        let a = Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]);
        let b = Matrix::from_vec(1, 3, vec![11.0, 12.0, 13.0]);
        assert!(loss_kl(&a, &b).unwrap().0 < 1e-12);
    }
}
