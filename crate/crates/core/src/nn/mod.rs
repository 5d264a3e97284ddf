//! Rectified-linear multilayer perceptron over flat [`Params`], with
//! hand-written forward and reverse passes.
//!
//! Layer `l` occupies a contiguous block of the parameter vector: its
//! `out x in` weight matrix (row-major) followed by `out` biases.

mod loss;

pub use loss::{loss_ce, loss_kl, loss_mg, softmax, LossBreakdown};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{LayerShape, Params};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    /// Index of the largest entry of each row; the first wins on ties.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|r| {
                let row = self.row(r);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub feature_dim: usize,
    pub hidden: Vec<usize>,
    /// Current head size.
    pub num_classes: usize,
}

impl MlpSpec {
    pub fn new(feature_dim: usize, hidden: Vec<usize>, num_classes: usize) -> Result<Self> {
        let spec = Self {
            feature_dim,
            hidden,
            num_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(Error::invalid(
                "hidden",
                "at least one hidden layer required",
            ));
        }
        if self.feature_dim == 0 || self.num_classes == 0 || self.hidden.contains(&0) {
            return Err(Error::invalid("mlp widths", "all widths must be >= 1"));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.feature_dim);
        w.extend_from_slice(&self.hidden);
        w.push(self.num_classes);
        w
    }

    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        self.widths()
            .windows(2)
            .map(|w| LayerShape::dense(w[1], w[0]))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(LayerShape::size).sum()
    }

    fn check(&self, params: &Params<impl Scalar>) -> Result<()> {
        if params.shapes() != self.layer_shapes().as_slice() {
            return Err(Error::ShapeMismatch {
                left: params.shapes().to_vec(),
                right: self.layer_shapes(),
            });
        }
        Ok(())
    }
}

/// He-normal weights, zero biases.
pub fn init_params<T: Scalar>(spec: &MlpSpec, seed: u64) -> Params<T> {
    let mut rng = stream_rng(seed, Stream::Init, &[]);
    let mut values = Vec::with_capacity(spec.param_count());
    for shape in spec.layer_shapes() {
        let std = (2.0 / shape.cols as f64).sqrt();
        for _ in 0..shape.rows * shape.cols {
            let z: f64 = StandardNormal.sample(&mut rng);
            values.push(T::lit(z * std));
        }
        values.extend(std::iter::repeat_n(T::zero(), shape.bias));
    }
    Params::from_parts(values, spec.layer_shapes())
}

/// Per-layer weight and bias slices of a parameter vector.
fn layer_blocks<'a, T>(values: &'a [T], shapes: &[LayerShape]) -> Vec<(&'a [T], &'a [T])> {
    let mut out = Vec::with_capacity(shapes.len());
    let mut off = 0;
    for s in shapes {
        let w = &values[off..off + s.rows * s.cols];
        let b = &values[off + s.rows * s.cols..off + s.size()];
        out.push((w, b));
        off += s.size();
    }
    out
}

/// `out[b][o] = sum_i w[o][i] * x[b][i] + bias[o]`
fn dense<T: Scalar>(x: &Matrix<T>, w: &[T], bias: &[T], out_dim: usize) -> Matrix<T> {
    let in_dim = x.cols();
    let mut out = Matrix::zeros(x.rows(), out_dim);
    for r in 0..x.rows() {
        let xr = x.row(r);
        let orow = out.row_mut(r);
        for o in 0..out_dim {
            let wr = &w[o * in_dim..(o + 1) * in_dim];
            let mut acc = bias[o];
            for i in 0..in_dim {
                acc += wr[i] * xr[i];
            }
            orow[o] = acc;
        }
    }
    out
}

/// Layer inputs (post-activation) for every layer, plus the final logits.
struct Trace<T> {
    inputs: Vec<Matrix<T>>,
    logits: Matrix<T>,
}

fn forward_trace<T: Scalar>(
    params: &Params<T>,
    spec: &MlpSpec,
    batch: &Matrix<T>,
) -> Result<Trace<T>> {
    spec.check(params)?;
    if batch.cols() != spec.feature_dim {
        return Err(Error::DimensionMismatch {
            context: "batch feature columns",
            expected: spec.feature_dim,
            actual: batch.cols(),
        });
    }
    let shapes = spec.layer_shapes();
    let blocks = layer_blocks(params.values(), &shapes);
    let mut inputs = Vec::with_capacity(shapes.len());
    let mut act = batch.clone();
    let last = shapes.len() - 1;
    for (l, ((w, b), s)) in blocks.iter().zip(&shapes).enumerate() {
        let mut z = dense(&act, w, b, s.rows);
        if l != last {
            for v in z.data_mut() {
                if *v < T::zero() {
                    *v = T::zero();
                }
            }
        }
        inputs.push(std::mem::replace(&mut act, z));
    }
    Ok(Trace {
        inputs,
        logits: act,
    })
}

/// Logits of shape `(batch rows, num_classes)`.
pub fn forward<T: Scalar>(
    params: &Params<T>,
    spec: &MlpSpec,
    batch: &Matrix<T>,
) -> Result<Matrix<T>> {
    Ok(forward_trace(params, spec, batch)?.logits)
}

/// Loss `ce + kl + delta * mg` and its gradient with respect to every
/// parameter. The KL term is skipped when `teacher` is `None`.
pub fn backward<T: Scalar>(
    params: &Params<T>,
    spec: &MlpSpec,
    batch: &Matrix<T>,
    labels: &[usize],
    teacher: Option<&Matrix<T>>,
    delta: T,
) -> Result<(LossBreakdown<T>, Params<T>)> {
    if delta < T::zero() {
        return Err(Error::invalid("delta", "must be non-negative"));
    }
    let trace = forward_trace(params, spec, batch)?;
    let (ce, mut dz) = loss_ce(&trace.logits, labels)?;
    let kl = match teacher {
        Some(t) => {
            let (kl, g) = loss_kl(t, &trace.logits)?;
            for (d, gi) in dz.data_mut().iter_mut().zip(g.data()) {
                *d += *gi;
            }
            kl
        }
        None => T::zero(),
    };
    let (mg, g) = loss_mg(&trace.logits);
    if delta > T::zero() {
        for (d, gi) in dz.data_mut().iter_mut().zip(g.data()) {
            *d += delta * *gi;
        }
    }
    let breakdown = LossBreakdown {
        ce,
        kl,
        mg,
        total: ce + kl + delta * mg,
    };
    Ok((breakdown, backprop(params, spec, &trace, dz)))
}

fn backprop<T: Scalar>(
    params: &Params<T>,
    spec: &MlpSpec,
    trace: &Trace<T>,
    mut dz: Matrix<T>,
) -> Params<T> {
    let shapes = spec.layer_shapes();
    let blocks = layer_blocks(params.values(), &shapes);
    let mut grad = Params::zeros(shapes.clone());
    let offsets: Vec<usize> = shapes
        .iter()
        .scan(0, |off, s| {
            let o = *off;
            *off += s.size();
            Some(o)
        })
        .collect();
    for l in (0..shapes.len()).rev() {
        let s = shapes[l];
        let a = &trace.inputs[l];
        let g = &mut grad.values_mut()[offsets[l]..offsets[l] + s.size()];
        let (gw, gb) = g.split_at_mut(s.rows * s.cols);
        for r in 0..a.rows() {
            let ar = a.row(r);
            let dr = dz.row(r);
            for o in 0..s.rows {
                let d = dr[o];
                gb[o] += d;
                let gwr = &mut gw[o * s.cols..(o + 1) * s.cols];
                for i in 0..s.cols {
                    gwr[i] += d * ar[i];
                }
            }
        }
        if l > 0 {
            let w = blocks[l].0;
            let mut da = Matrix::zeros(a.rows(), s.cols);
            for r in 0..a.rows() {
                let dr = dz.row(r);
                let dar = da.row_mut(r);
                for o in 0..s.rows {
                    let d = dr[o];
                    let wr = &w[o * s.cols..(o + 1) * s.cols];
                    for i in 0..s.cols {
                        dar[i] += d * wr[i];
                    }
                }
                // ReLU: the stored input is the activation, zero where inactive
                for (v, &ai) in dar.iter_mut().zip(a.row(r)) {
                    if ai <= T::zero() {
                        *v = T::zero();
                    }
                }
            }
            dz = da;
        }
    }
    grad
}

/// Squared norm of the single-sample cross-entropy gradient.
pub fn per_sample_grad_sqnorm<T: Scalar>(
    params: &Params<T>,
    spec: &MlpSpec,
    features: &[T],
    label: usize,
) -> Result<T> {
    let x = Matrix::from_vec(1, features.len(), features.to_vec());
    let (_, g) = backward(params, spec, &x, &[label], None, T::zero())?;
    Ok(g.sq_norm())
}

/// Grows the output layer to `new_num_classes`, appending zero rows.
/// Existing parameters are copied bit for bit.
pub fn expand_head<T: Scalar>(
    params: &Params<T>,
    spec: &MlpSpec,
    new_num_classes: usize,
) -> Result<(Params<T>, MlpSpec)> {
    spec.check(params)?;
    if new_num_classes < spec.num_classes {
        return Err(Error::invalid(
            "new_num_classes",
            format!(
                "cannot shrink head from {} to {new_num_classes}",
                spec.num_classes
            ),
        ));
    }
    let new_spec = MlpSpec {
        num_classes: new_num_classes,
        ..spec.clone()
    };
    if new_num_classes == spec.num_classes {
        return Ok((params.clone(), new_spec));
    }
    let shapes = spec.layer_shapes();
    let head = *shapes.last().expect("at least one layer");
    let head_start = params.len() - head.size();
    let (prefix, head_block) = params.values().split_at(head_start);
    let (w, b) = head_block.split_at(head.rows * head.cols);
    let added = new_num_classes - spec.num_classes;
    let mut values = Vec::with_capacity(params.len() + added * (head.cols + 1));
    values.extend_from_slice(prefix);
    values.extend_from_slice(w);
    values.extend(std::iter::repeat_n(T::zero(), added * head.cols));
    values.extend_from_slice(b);
    values.extend(std::iter::repeat_n(T::zero(), added));
    Ok((
        Params::from_parts(values, new_spec.layer_shapes()),
        new_spec,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| rng.random_range(-1.5..1.5))
                .collect(),
        )
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let spec = MlpSpec::new(3, vec![4], 2).unwrap();
        let p = Params::<f64>::zeros(spec.layer_shapes());
        let x = Matrix::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.5, 0.5]);
        assert!(forward(&p, &spec, &x)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn identity_construction_passes_inputs_through() {
        // 2 -> 2 (relu) -> 2 with identity weights on non-negative inputs
        let spec = MlpSpec::new(2, vec![2], 2).unwrap();
        let values = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let p = Params::new(values, spec.layer_shapes()).unwrap();
        let x = Matrix::from_vec(2, 2, vec![0.25, 3.0, 1.5, 0.0]);
        assert_eq!(forward(&p, &spec, &x).unwrap().data(), x.data());
    }

    #[test]
    fn forward_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec = MlpSpec::new(5, vec![7, 4], 3).unwrap();
        let p: Params<f64> = init_params(&spec, 3);
        let x = random_batch(&mut rng, 6, 5);
        let got = forward(&p, &spec, &x).unwrap();

        // independent nested-vector evaluation
        let mut off = 0;
        let mut act: Vec<Vec<f64>> = (0..6).map(|r| x.row(r).to_vec()).collect();
        let shapes = spec.layer_shapes();
        for (l, s) in shapes.iter().enumerate() {
            let w: Vec<Vec<f64>> = (0..s.rows)
                .map(|o| p.values()[off + o * s.cols..off + (o + 1) * s.cols].to_vec())
                .collect();
            let b = &p.values()[off + s.rows * s.cols..off + s.size()];
            off += s.size();
            act = act
                .iter()
                .map(|a| {
                    (0..s.rows)
                        .map(|o| {
                            let z: f64 = b[o] + (0..s.cols).map(|i| w[o][i] * a[i]).sum::<f64>();
                            if l + 1 < shapes.len() {
                                z.max(0.0)
                            } else {
                                z
                            }
                        })
                        .collect()
                })
                .collect();
        }
        for r in 0..6 {
            for c in 0..3 {
                let (a, b) = (got.get(r, c), act[r][c]);
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn forward_rejects_bad_shapes() {
        let spec = MlpSpec::new(3, vec![4], 2).unwrap();
        let p = Params::<f64>::zeros(spec.layer_shapes());
        assert!(forward(&p, &spec, &Matrix::zeros(1, 4)).is_err());
        let other = MlpSpec::new(3, vec![5], 2).unwrap();
        assert!(forward(&p, &other, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn backward_without_extras_is_plain_ce() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let spec = MlpSpec::new(2, vec![16, 8], 3).unwrap();
        let p: Params<f64> = init_params(&spec, 1);
        let x = random_batch(&mut rng, 5, 2);
        let labels = [0, 1, 2, 1, 0];
        let (lb, _) = backward(&p, &spec, &x, &labels, None, 0.0).unwrap();
        let logits = forward(&p, &spec, &x).unwrap();
        assert_eq!(lb.ce, loss_ce(&logits, &labels).unwrap().0);
        assert_eq!(lb.kl, 0.0);
        assert_eq!(lb.total, lb.ce);
    }

    #[test]
    fn teacher_equal_to_student_has_zero_kl() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let spec = MlpSpec::new(2, vec![16, 8], 3).unwrap();
        let p: Params<f64> = init_params(&spec, 2);
        let x = random_batch(&mut rng, 5, 2);
        let labels = [0, 1, 2, 1, 0];
        let teacher = forward(&p, &spec, &x).unwrap();
        let (lb, _) = backward(&p, &spec, &x, &labels, Some(&teacher), 0.1).unwrap();
        assert_eq!(lb.kl, 0.0);
        assert!((lb.total - (lb.ce + 0.1 * lb.mg)).abs() <= 1e-12 * lb.total);
    }

    #[test]
    fn expand_head_preserves_old_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let spec = MlpSpec::new(4, vec![6], 3).unwrap();
        let p: Params<f64> = init_params(&spec, 5);
        let (same, same_spec) = expand_head(&p, &spec, 3).unwrap();
        assert_eq!(same, p);
        assert_eq!(same_spec, spec);

        let (q, spec5) = expand_head(&p, &spec, 5).unwrap();
        assert_eq!(q.len(), p.len() + 2 * 7);
        let x = random_batch(&mut rng, 8, 4);
        let before = forward(&p, &spec, &x).unwrap();
        let after = forward(&q, &spec5, &x).unwrap();
        for r in 0..8 {
            assert_eq!(&after.row(r)[..3], before.row(r));
            assert_eq!(&after.row(r)[3..], &[0.0, 0.0]);
        }
        assert!(expand_head(&p, &spec, 2).is_err());
    }

    #[test]
    fn f32_forward_runs() {
        let spec = MlpSpec::new(3, vec![4], 2).unwrap();
        let p: Params<f32> = init_params(&spec, 0);
        let x = Matrix::from_vec(1, 3, vec![0.1f32, 0.2, 0.3]);
        let z = forward(&p, &spec, &x).unwrap();
        assert_eq!(z.cols(), 2);
        let p64: Params<f64> = init_params(&spec, 0);
        let x64 = Matrix::from_vec(1, 3, x.data().iter().map(|&v| v as f64).collect());
        let z64 = forward(&p64, &spec, &x64).unwrap();
        for (a, b) in z.data().iter().zip(z64.data()) {
            assert!((*a as f64 - b).abs() < 1e-5);
        }
    }
}
