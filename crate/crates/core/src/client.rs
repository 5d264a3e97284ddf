//! Client side of a task: the personal information model that scores replay
//! candidates, per-class exemplar selection, and local training on new data
//! plus cached exemplars.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::alloc::MemoryPlan;
use crate::config::FederationConfig;
use crate::data::{ClassHistogram, Dataset, LabeledSample};
use crate::error::{Error, Result};
use crate::nn::{backward, expand_head, forward, per_sample_grad_sqnorm, MlpSpec};
use crate::params::{param_axpy, Params};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct ClientState<T> {
    pub client_id: usize,
    /// Local model after the most recent round.
    pub params: Params<T>,
    /// Personal information model, carried across tasks.
    pub info_model: Params<T>,
    /// Exemplars kept from earlier tasks.
    pub cache: Vec<LabeledSample<T>>,
    pub current_data: Dataset<T>,
    /// Class counts of `current_data`.
    pub histogram: ClassHistogram,
}

impl<T: Scalar> ClientState<T> {
    pub fn new(client_id: usize, init: &Params<T>, data: Dataset<T>) -> Self {
        let histogram = data.histogram();
        Self {
            client_id,
            params: init.clone(),
            info_model: init.clone(),
            cache: Vec::new(),
            current_data: data,
            histogram,
        }
    }

    pub fn set_task_data(&mut self, data: Dataset<T>) {
        self.histogram = data.histogram();
        self.current_data = data;
    }

    /// Training set of the current task: new data followed by the cache.
    pub fn replay_set(&self) -> Result<Dataset<T>> {
        let cache = Dataset::new(
            self.cache.clone(),
            self.current_data.num_classes(),
            self.current_data.feature_dim(),
        )?;
        self.current_data.union(&cache)
    }

    pub fn replay_len(&self) -> usize {
        self.current_data.len() + self.cache.len()
    }

    /// Class counts of new data plus cache: what the client can draw
    /// exemplars from at the end of the task.
    pub fn replay_histogram(&self) -> ClassHistogram {
        let mut h = self.histogram.clone();
        for s in &self.cache {
            h.add(s.label, 1);
        }
        h
    }

    pub(crate) fn expand_head(&mut self, spec: &MlpSpec, new_num_classes: usize) -> Result<()> {
        self.params = expand_head(&self.params, spec, new_num_classes)?.0;
        self.info_model = expand_head(&self.info_model, spec, new_num_classes)?.0;
        Ok(())
    }
}

/// `q(lambda) = (1 - lambda) / (2 lambda)`.
pub fn momentum_coefficient(lambda: f64) -> f64 {
    (1.0 - lambda) / (2.0 * lambda)
}

/// Replay-candidate score: mean squared per-sample gradient norm over the
/// information-model iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleScore<T> {
    pub uid: u64,
    pub label: usize,
    pub mean_sq_grad_norm: T,
}

#[derive(Debug, Clone, Copy)]
pub struct InfoModelSettings {
    pub eta: f64,
    pub lambda: f64,
    pub iters: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub client: usize,
    pub task: usize,
}

impl InfoModelSettings {
    pub fn from_config(config: &FederationConfig, client: usize, task: usize) -> Self {
        Self {
            eta: config.info_lr,
            lambda: config.momentum_lambda,
            iters: config.info_model_iters,
            batch_size: config.batch_size,
            seed: config.seed,
            client,
            task,
        }
    }
}

/// Mini-batch drawn for information-model iteration `iter`.
fn info_batch(n: usize, s: &InfoModelSettings, iter: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(
        s.seed,
        Stream::InfoBatches,
        &[s.client as u64, s.task as u64, iter as u64],
    ));
    order.truncate(s.batch_size.min(n));
    order
}

/// Runs `iters` steps of
/// `v <- v - eta * sum_i grad CE(v; x_i, y_i) + q(lambda) * (v - w_g)`
/// over seeded mini-batches of `data`, scoring every sample of `data` with
/// the updated `v` after each step.
pub fn update_info_model<T: Scalar>(
    info_model: &Params<T>,
    prev_global: &Params<T>,
    spec: &MlpSpec,
    data: &Dataset<T>,
    s: &InfoModelSettings,
) -> Result<(Params<T>, Vec<SampleScore<T>>)> {
    if data.is_empty() {
        return Err(Error::Empty("information-model data"));
    }
    if !(s.lambda > 0.0 && s.lambda < 1.0) {
        return Err(Error::invalid(
            "momentum_lambda",
            format!("{} not in (0, 1)", s.lambda),
        ));
    }
    if s.iters == 0 {
        return Err(Error::invalid("info_model_iters", "must be positive"));
    }
    info_model.same_shape(prev_global)?;
    let eta = T::lit(s.eta);
    let q = T::lit(momentum_coefficient(s.lambda));
    let mut v = info_model.clone();
    let mut sums = vec![T::zero(); data.len()];
    for iter in 0..s.iters {
        let batch = info_batch(data.len(), s, iter);
        let x = data.feature_matrix(&batch);
        let (_, mean_grad) = backward(&v, spec, &x, &data.labels(&batch), None, T::zero())?;
        // backward averages over the batch; the update sums over samples
        let n_b = T::from_usize_lossy(batch.len());
        let mut next = v.clone();
        for ((nv, &vi), (&g, &wg)) in next
            .values_mut()
            .iter_mut()
            .zip(v.values())
            .zip(mean_grad.values().iter().zip(prev_global.values()))
        {
            *nv = vi - eta * (g * n_b) + q * (vi - wg);
        }
        if next.check_finite().is_err() {
            return Err(Error::Divergence {
                stage: "information model",
                iteration: iter,
            });
        }
        v = next;
        for (acc, sample) in sums.iter_mut().zip(data.samples()) {
            *acc += per_sample_grad_sqnorm(&v, spec, &sample.features, sample.label)?;
        }
    }
    let iters = T::from_usize_lossy(s.iters);
    let scores = data
        .samples()
        .iter()
        .zip(sums)
        .map(|(sample, total)| SampleScore {
            uid: sample.uid,
            label: sample.label,
            mean_sq_grad_norm: total / iters,
        })
        .collect();
    Ok((v, scores))
}

/// Chosen exemplars and, per class, how many the quota asked for beyond
/// what was available.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection<T> {
    pub samples: Vec<LabeledSample<T>>,
    pub shortfall: BTreeMap<usize, usize>,
}

/// Per class, the `quota` samples with the largest score (ascending uid on
/// ties). Output is ordered by class, then rank.
pub fn select_exemplars<T: Scalar>(
    scores: &[SampleScore<T>],
    quotas: &BTreeMap<usize, usize>,
    data: &Dataset<T>,
) -> Result<Selection<T>> {
    let by_uid: BTreeMap<u64, &LabeledSample<T>> =
        data.samples().iter().map(|s| (s.uid, s)).collect();
    let mut by_class: BTreeMap<usize, Vec<&SampleScore<T>>> = BTreeMap::new();
    for sc in scores {
        match by_uid.get(&sc.uid) {
            Some(s) if s.label == sc.label => by_class.entry(sc.label).or_default().push(sc),
            Some(_) => {
                return Err(Error::invalid(
                    "scores",
                    format!("label mismatch for uid {}", sc.uid),
                ))
            }
            None => {
                return Err(Error::invalid(
                    "scores",
                    format!("uid {} not in dataset", sc.uid),
                ))
            }
        }
    }
    let mut samples = Vec::new();
    let mut shortfall = BTreeMap::new();
    for (&y, &quota) in quotas {
        if quota == 0 {
            continue;
        }
        let mut ranked = by_class.remove(&y).unwrap_or_default();
        ranked.sort_by(|a, b| {
            b.mean_sq_grad_norm
                .partial_cmp(&a.mean_sq_grad_norm)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.uid.cmp(&b.uid))
        });
        if ranked.len() < quota {
            shortfall.insert(y, quota - ranked.len());
        }
        samples.extend(ranked.iter().take(quota).map(|sc| by_uid[&sc.uid].clone()));
    }
    Ok(Selection { samples, shortfall })
}

/// Round position, used to key the local shuffle and to decide whether a
/// teacher exists yet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundContext {
    pub task: usize,
    pub round: usize,
}

impl RoundContext {
    /// The very first round has no trained global model to distill from.
    pub fn has_teacher(&self) -> bool {
        !(self.task == 0 && self.round == 0)
    }
}

/// Local SGD on new data plus cache for `local_epochs` epochs, minimizing
/// `CE + KL(global || local) + delta * MG` with the received global model
/// as the frozen teacher. Starts from `global`.
pub fn local_train<T: Scalar>(
    state: &ClientState<T>,
    global: &Params<T>,
    spec: &MlpSpec,
    config: &FederationConfig,
    ctx: RoundContext,
) -> Result<Params<T>> {
    let data = state.replay_set()?;
    if data.is_empty() {
        return Err(Error::Empty("client training data"));
    }
    let lr = T::lit(config.train_lr);
    let delta = T::lit(config.mg_weight);
    let mut params = global.clone();
    let mut step = 0;
    for epoch in 0..config.local_epochs {
        let mut order = data.all_indices();
        order.shuffle(&mut stream_rng(
            config.seed,
            Stream::LocalShuffle,
            &[
                state.client_id as u64,
                ctx.task as u64,
                ctx.round as u64,
                epoch as u64,
            ],
        ));
        for batch in order.chunks(config.batch_size) {
            let x = data.feature_matrix(batch);
            let teacher = if ctx.has_teacher() {
                Some(forward(global, spec, &x)?)
            } else {
                None
            };
            let (loss, grad) = backward(
                &params,
                spec,
                &x,
                &data.labels(batch),
                teacher.as_ref(),
                delta,
            )?;
            if !loss.total.is_finite() {
                return Err(Error::Divergence {
                    stage: "local training",
                    iteration: step,
                });
            }
            params = param_axpy(-lr, &grad, &params)?;
            step += 1;
        }
    }
    if params.check_finite().is_err() {
        return Err(Error::Divergence {
            stage: "local training",
            iteration: step,
        });
    }
    Ok(params)
}

/// Replaces the client's cache from its finished task's data plus old cache,
/// following this client's quotas in `plan`. Returns the updated state and
/// the selection shortfall.
pub fn refresh_cache<T: Scalar>(
    state: &ClientState<T>,
    plan: &MemoryPlan,
    prev_global: &Params<T>,
    spec: &MlpSpec,
    config: &FederationConfig,
    task: usize,
) -> Result<(ClientState<T>, BTreeMap<usize, usize>)> {
    let pool = state.replay_set()?;
    let settings = InfoModelSettings::from_config(config, state.client_id, task);
    let (info_model, scores) =
        update_info_model(&state.info_model, prev_global, spec, &pool, &settings)?;
    let selection = select_exemplars(&scores, plan.client_quotas(state.client_id), &pool)?;
    let mut next = state.clone();
    next.info_model = info_model;
    next.cache = selection.samples;
    Ok((next, selection.shortfall))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_params;
    use crate::scenario::make_gaussian_dataset;

    fn scores_for(ds: &Dataset<f64>, vals: &[f64]) -> Vec<SampleScore<f64>> {
        ds.samples()
            .iter()
            .zip(vals)
            .map(|(s, &v)| SampleScore {
                uid: s.uid,
                label: s.label,
                mean_sq_grad_norm: v,
            })
            .collect()
    }

    #[test]
    fn q_lambda_values() {
        assert_eq!(momentum_coefficient(0.5), 0.5);
        assert!((momentum_coefficient(0.8) - 0.125).abs() < 1e-12);
        for k in 1..10 {
            let l = k as f64 / 10.0;
            assert!((momentum_coefficient(l) - (1.0 - l) / (2.0 * l)).abs() <= 1e-12);
        }
    }

    #[test]
    fn selection_caps_and_empties() {
        let ds: Dataset<f64> = make_gaussian_dataset(2, 3, 2, None, 0).unwrap();
        let scores = scores_for(&ds, &[0.1, 0.5, 0.3, 0.9, 0.2, 0.4]);
        let sel = select_exemplars(&scores, &BTreeMap::from([(0, 5), (1, 1)]), &ds).unwrap();
        assert_eq!(sel.samples.len(), 4);
        assert_eq!(sel.shortfall, BTreeMap::from([(0, 2)]));
        assert_eq!(sel.samples[3].uid, 3);
        let none = select_exemplars(&scores, &BTreeMap::from([(0, 0), (1, 0)]), &ds).unwrap();
        assert!(none.samples.is_empty());
    }

    #[test]
    fn selection_breaks_ties_by_uid() {
        let ds: Dataset<f64> = make_gaussian_dataset(2, 4, 2, None, 0).unwrap();
        let scores = scores_for(&ds, &[1.0, 2.0, 2.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        let sel = select_exemplars(&scores, &BTreeMap::from([(0, 2), (1, 2)]), &ds).unwrap();
        let uids: Vec<u64> = sel.samples.iter().map(|s| s.uid).collect();
        assert_eq!(uids, vec![1, 2, 4, 5]);
    }

    #[test]
    fn selection_rejects_unknown_uid() {
        let ds: Dataset<f64> = make_gaussian_dataset(2, 2, 2, None, 0).unwrap();
        let bad = vec![SampleScore {
            uid: 99,
            label: 0,
            mean_sq_grad_norm: 1.0,
        }];
        assert!(select_exemplars(&bad, &BTreeMap::new(), &ds).is_err());
    }

    #[test]
    fn single_step_on_scalar_surrogate() {
        // One weight, no hidden activation issues: use a 1-1-1 net, take the
        // gradient it reports, and check the update against the closed form.
        let spec = MlpSpec::new(1, vec![1], 1).unwrap();
        // with one class CE is identically zero, so the gradient is zero
        let v: Params<f64> = Params::new(vec![0.7, 0.1, -0.4, 0.2], spec.layer_shapes()).unwrap();
        let wg: Params<f64> = Params::new(vec![0.5, 0.0, -0.5, 0.0], spec.layer_shapes()).unwrap();
        let ds = Dataset::new(
            vec![LabeledSample {
                uid: 0,
                features: vec![1.0],
                label: 0,
                domain: 0,
            }],
            1,
            1,
        )
        .unwrap();
        let s = InfoModelSettings {
            eta: 0.1,
            lambda: 0.5,
            iters: 1,
            batch_size: 4,
            seed: 0,
            client: 0,
            task: 1,
        };
        let (out, scores) = update_info_model(&v, &wg, &spec, &ds, &s).unwrap();
        let q = 0.5;
        for ((o, vi), w) in out.values().iter().zip(v.values()).zip(wg.values()) {
            let g = 0.0;
            assert!((o - (vi - 0.1 * g + q * (vi - w))).abs() < 1e-15);
        }
        assert_eq!(scores[0].mean_sq_grad_norm, 0.0);
    }

    #[test]
    fn saturated_fixed_point() {
        // two well-separated points, a model that classifies both with
        // logit margin 50: the gradient is ~0 and v = w_g stays put
        let spec = MlpSpec::new(2, vec![2], 2).unwrap();
        let vals = vec![
            1.0, 0.0, 0.0, 1.0, 0.0, 0.0, // hidden: identity
            50.0, 0.0, 0.0, 50.0, 0.0, 0.0, // head: scale 50
        ];
        let w: Params<f64> = Params::new(vals, spec.layer_shapes()).unwrap();
        let ds = Dataset::new(
            vec![
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
            ],
            2,
            2,
        )
        .unwrap();
        let s = InfoModelSettings {
            eta: 0.5,
            lambda: 0.4,
            iters: 3,
            batch_size: 2,
            seed: 1,
            client: 0,
            task: 1,
        };
        let (v, scores) = update_info_model(&w, &w, &spec, &ds, &s).unwrap();
        for (a, b) in v.values().iter().zip(w.values()) {
            assert!((a - b).abs() < 1e-18);
        }
        for sc in scores {
            assert!(sc.mean_sq_grad_norm < 1e-6);
        }
    }

    #[test]
    fn scores_are_mean_over_iterations() {
        let spec = MlpSpec::new(3, vec![5], 3).unwrap();
        let ds: Dataset<f64> = make_gaussian_dataset(3, 6, 3, None, 2).unwrap();
        let v0: Params<f64> = init_params(&spec, 1);
        let wg: Params<f64> = init_params(&spec, 2);
        let s = InfoModelSettings {
            eta: 0.01,
            lambda: 0.6,
            iters: 3,
            batch_size: 4,
            seed: 9,
            client: 2,
            task: 1,
        };
        let (_, scores) = update_info_model(&v0, &wg, &spec, &ds, &s).unwrap();
        // recompute: the first k iterations of a longer run equal a k-iteration run
        let mut sums = vec![0.0; ds.len()];
        for k in 1..=3 {
            let (vk, _) =
                update_info_model(&v0, &wg, &spec, &ds, &InfoModelSettings { iters: k, ..s })
                    .unwrap();
            for (acc, sample) in sums.iter_mut().zip(ds.samples()) {
                *acc += per_sample_grad_sqnorm(&vk, &spec, &sample.features, sample.label).unwrap();
            }
        }
        for (sc, total) in scores.iter().zip(sums) {
            assert_eq!(sc.mean_sq_grad_norm, total / 3.0);
        }
    }

    #[test]
    fn zero_epochs_return_global() {
        let spec = MlpSpec::new(2, vec![4], 2).unwrap();
        let ds: Dataset<f64> = make_gaussian_dataset(2, 5, 2, None, 0).unwrap();
        let g: Params<f64> = init_params(&spec, 0);
        let state = ClientState::new(0, &g, ds);
        let config = FederationConfig {
            local_epochs: 0,
            ..Default::default()
        };
        let out = local_train(
            &state,
            &g,
            &spec,
            &config,
            RoundContext { task: 0, round: 0 },
        )
        .unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn replay_histogram_counts_cache() {
        let spec = MlpSpec::new(2, vec![4], 3).unwrap();
        let ds: Dataset<f64> = make_gaussian_dataset(3, 4, 2, None, 0).unwrap();
        let g: Params<f64> = init_params(&spec, 0);
        let mut state = ClientState::new(0, &g, ds.clone());
        state.cache = ds.samples()[..2].to_vec();
        state.set_task_data(Dataset::new(ds.samples()[4..].to_vec(), 3, 2).unwrap());
        let h = state.replay_histogram();
        assert_eq!(h.get(0), 2);
        assert_eq!(h.get(1), 4);
        assert_eq!(h.total(), state.replay_len());
        assert_eq!(state.replay_set().unwrap().histogram(), h);
    }
}
