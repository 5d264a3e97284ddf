//! Synthetic task streams: Gaussian class blobs, class-/domain-incremental
//! task layouts, and Dirichlet label-skew partitioning across clients.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::alloc::largest_remainder;
use crate::data::{Dataset, LabeledSample};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;

/// Distance between neighbouring class means on the lattice.
pub const CLASS_SPACING: f64 = 4.0;
/// Length of the mean translation applied for every non-zero domain.
pub const DOMAIN_SHIFT: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// New disjoint classes each task, one domain.
    Fcil,
    /// Same classes each task, new domain each task.
    Fdil,
    /// New classes each task, domain changes in contiguous blocks of tasks.
    Fcdil,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Fcil => "fcil",
            Scenario::Fdil => "fdil",
            Scenario::Fcdil => "fcdil",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fcil" => Ok(Scenario::Fcil),
            "fdil" => Ok(Scenario::Fdil),
            "fcdil" => Ok(Scenario::Fcdil),
            other => Err(Error::invalid(
                "scenario",
                format!("unknown scenario `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub index: usize,
    /// Classes present in this task, ascending.
    pub classes: Vec<usize>,
    pub domain: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskStream {
    pub scenario: Scenario,
    pub tasks: Vec<TaskSpec>,
    /// Size of the class universe over the whole stream.
    pub num_classes: usize,
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Head size needed once tasks `0..=t` have been seen.
    pub fn classes_through(&self, t: usize) -> usize {
        self.tasks[..=t]
            .iter()
            .flat_map(|task| task.classes.iter())
            .max()
            .map_or(0, |&m| m + 1)
    }
}

/// Lays out the tasks of a scenario.
///
/// * `Fcil`: `class_counts[t]` new classes per task; `num_domains` must be 1.
/// * `Fdil`: `class_counts` is the single universe size; one task per domain.
/// * `Fcdil`: new classes per task as in `Fcil`, and the domain id of task
///   `t` is `t * num_domains / T`.
pub fn build_task_stream(
    scenario: Scenario,
    class_counts: &[usize],
    num_domains: usize,
) -> Result<TaskStream> {
    if class_counts.is_empty() {
        return Err(Error::invalid("class_counts", "at least one task required"));
    }
    if class_counts.contains(&0) {
        return Err(Error::invalid(
            "class_counts",
            "every task needs at least one class",
        ));
    }
    if num_domains == 0 {
        return Err(Error::invalid("num_domains", "must be positive"));
    }
    let incremental = |domain_of: &dyn Fn(usize) -> usize| {
        let mut cursor = 0;
        let tasks: Vec<TaskSpec> = class_counts
            .iter()
            .enumerate()
            .map(|(t, &n)| {
                let classes = (cursor..cursor + n).collect();
                cursor += n;
                TaskSpec {
                    index: t,
                    classes,
                    domain: domain_of(t),
                }
            })
            .collect();
        (tasks, cursor)
    };
    let (tasks, num_classes) = match scenario {
        Scenario::Fcil => {
            if num_domains != 1 {
                return Err(Error::invalid(
                    "num_domains",
                    "class-incremental streams use one domain",
                ));
            }
            incremental(&|_| 0)
        }
        Scenario::Fdil => {
            if class_counts.len() != 1 {
                return Err(Error::invalid(
                    "class_counts",
                    "domain-incremental streams take a single class-universe size",
                ));
            }
            let k = class_counts[0];
            let tasks = (0..num_domains)
                .map(|d| TaskSpec {
                    index: d,
                    classes: (0..k).collect(),
                    domain: d,
                })
                .collect();
            (tasks, k)
        }
        Scenario::Fcdil => {
            let t_total = class_counts.len();
            if num_domains > t_total {
                return Err(Error::invalid(
                    "num_domains",
                    format!("{num_domains} domains for only {t_total} tasks"),
                ));
            }
            incremental(&|t| t * num_domains / t_total)
        }
    };
    Ok(TaskStream {
        scenario,
        tasks,
        num_classes,
    })
}

/// Mean of class `k`: the base-`s` digits of `k` scaled by [`CLASS_SPACING`],
/// where `s` is the smallest base whose `feature_dim`-digit lattice holds
/// `num_classes` points.
pub fn class_mean(class: usize, num_classes: usize, feature_dim: usize) -> Vec<f64> {
    let mut base = 2usize;
    while (base as f64).powi(feature_dim.min(64) as i32) < num_classes as f64 {
        base += 1;
    }
    let mut mean = vec![0.0; feature_dim];
    let mut k = class;
    for m in mean.iter_mut() {
        *m = (k % base) as f64 * CLASS_SPACING;
        k /= base;
    }
    mean
}

/// Constant translation for `domain`; `None` for domain 0.
pub fn domain_shift(domain: usize, feature_dim: usize, seed: u64) -> Option<Vec<f64>> {
    if domain == 0 {
        return None;
    }
    let mut rng = stream_rng(seed, Stream::DomainShift, &[domain as u64]);
    let dir: Vec<f64> = (0..feature_dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    Some(dir.into_iter().map(|v| v / norm * DOMAIN_SHIFT).collect())
}

struct BlobRequest<'a> {
    classes: &'a [usize],
    num_classes: usize,
    per_class: usize,
    feature_dim: usize,
    domain: usize,
    shift: Option<&'a [f64]>,
    seed: u64,
    uid_start: u64,
}

fn sample_blobs<T: Scalar>(req: &BlobRequest<'_>) -> Vec<LabeledSample<T>> {
    let mut samples = Vec::with_capacity(req.classes.len() * req.per_class);
    let mut uid = req.uid_start;
    for &k in req.classes {
        let mut mean = class_mean(k, req.num_classes, req.feature_dim);
        if let Some(s) = req.shift {
            for (m, d) in mean.iter_mut().zip(s) {
                *m += d;
            }
        }
        let mut rng = stream_rng(req.seed, Stream::Features, &[req.domain as u64, k as u64]);
        for _ in 0..req.per_class {
            let features = mean
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    T::lit(m + z)
                })
                .collect();
            samples.push(LabeledSample {
                uid,
                features,
                label: k,
                domain: req.domain,
            });
            uid += 1;
        }
    }
    samples
}

/// `per_class` unit-covariance Gaussian samples around each lattice mean,
/// translated by `domain_shift` when given.
pub fn make_gaussian_dataset<T: Scalar>(
    num_classes: usize,
    per_class: usize,
    feature_dim: usize,
    domain_shift: Option<&[f64]>,
    seed: u64,
) -> Result<Dataset<T>> {
    if num_classes < 2 {
        return Err(Error::invalid("num_classes", "need at least 2 classes"));
    }
    if per_class == 0 {
        return Err(Error::invalid(
            "per_class",
            "need at least 1 sample per class",
        ));
    }
    if feature_dim < 2 {
        return Err(Error::invalid("feature_dim", "need at least 2 features"));
    }
    if let Some(s) = domain_shift {
        if s.len() != feature_dim {
            return Err(Error::DimensionMismatch {
                context: "domain shift",
                expected: feature_dim,
                actual: s.len(),
            });
        }
    }
    let classes: Vec<usize> = (0..num_classes).collect();
    let samples = sample_blobs(&BlobRequest {
        classes: &classes,
        num_classes,
        per_class,
        feature_dim,
        domain: usize::from(domain_shift.is_some()),
        shift: domain_shift,
        seed,
        uid_start: 0,
    });
    Dataset::new(samples, num_classes, feature_dim)
}

/// Normalized Gamma draws; rand_distr's `Dirichlet` is fixed-size.
fn sample_dirichlet(alpha: f64, n: usize, rng: &mut impl rand::Rng) -> Result<Vec<f64>> {
    let gamma =
        Gamma::new(alpha, 1.0).map_err(|e| Error::invalid("dirichlet_alpha", e.to_string()))?;
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        Ok(draws.into_iter().map(|g| g / total).collect())
    } else {
        Ok(vec![1.0 / n as f64; n])
    }
}

/// Label-skew split of `ds` over `num_clients`.
///
/// For every class, client proportions are drawn from `Dir(alpha)` and the
/// class's samples (in a seeded shuffle) are dealt out in largest-remainder
/// counts. A client left with no samples at all takes one sample of the
/// most frequent class from the client holding most of that class.
pub fn dirichlet_partition<T: Scalar>(
    ds: &Dataset<T>,
    num_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<Dataset<T>>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(
            "dirichlet_alpha",
            format!("{alpha} must be positive"),
        ));
    }
    if num_clients == 0 {
        return Err(Error::invalid("num_clients", "must be positive"));
    }
    if ds.len() < num_clients {
        return Err(Error::invalid(
            "num_clients",
            format!("{} samples cannot cover {num_clients} clients", ds.len()),
        ));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in ds.samples().iter().enumerate() {
        by_class.entry(s.label).or_default().push(i);
    }
    // owner[c] = (class -> sample indices)
    let mut owner: Vec<BTreeMap<usize, Vec<usize>>> = vec![BTreeMap::new(); num_clients];
    for (&y, idx) in &by_class {
        let mut idx = idx.clone();
        idx.shuffle(&mut stream_rng(seed, Stream::Assignment, &[y as u64]));
        let props = sample_dirichlet(
            alpha,
            num_clients,
            &mut stream_rng(seed, Stream::Dirichlet, &[y as u64]),
        )?;
        let counts = largest_remainder(&props, idx.len());
        let mut start = 0;
        for (c, n) in counts.into_iter().enumerate() {
            if n > 0 {
                owner[c].insert(y, idx[start..start + n].to_vec());
            }
            start += n;
        }
    }
    let top_class = by_class
        .iter()
        .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(a.0)))
        .map(|(&y, _)| y)
        .expect("non-empty dataset");
    while let Some(empty) = owner.iter().position(|m| m.values().all(Vec::is_empty)) {
        let held = |c: usize, y: usize| owner[c].get(&y).map_or(0, Vec::len);
        let total = |c: usize| owner[c].values().map(Vec::len).sum::<usize>();
        let top_donor = (0..num_clients)
            .max_by(|&a, &b| held(a, top_class).cmp(&held(b, top_class)).then(b.cmp(&a)))
            .expect("at least one client");
        // prefer the most frequent class; otherwise the fullest client's largest class
        let (donor, class) = if held(top_donor, top_class) >= 2 {
            (top_donor, top_class)
        } else {
            let donor = (0..num_clients)
                .max_by(|&a, &b| total(a).cmp(&total(b)).then(b.cmp(&a)))
                .expect("at least one client");
            let class = owner[donor]
                .iter()
                .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(a.0)))
                .map(|(&y, _)| y)
                .expect("donor holds samples");
            (donor, class)
        };
        if total(donor) < 2 {
            return Err(Error::invalid(
                "num_clients",
                "not enough samples to give every client one",
            ));
        }
        let moved = owner[donor]
            .get_mut(&class)
            .and_then(Vec::pop)
            .expect("donor holds class");
        if owner[donor][&class].is_empty() {
            owner[donor].remove(&class);
        }
        owner[empty].entry(class).or_default().push(moved);
    }
    owner
        .into_iter()
        .map(|m| {
            let mut idx: Vec<usize> = m.into_values().flatten().collect();
            idx.sort_unstable();
            let samples = idx.into_iter().map(|i| ds.samples()[i].clone()).collect();
            Dataset::new(samples, ds.num_classes(), ds.feature_dim())
        })
        .collect()
}

/// Client datasets indexed `[task][client]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientPartition<T> {
    pub per_task: Vec<Vec<Dataset<T>>>,
}

impl<T: Scalar> ClientPartition<T> {
    pub fn client_data(&self, task: usize, client: usize) -> &Dataset<T> {
        &self.per_task[task][client]
    }

    pub fn num_clients(&self) -> usize {
        self.per_task.first().map_or(0, Vec::len)
    }
}

/// Everything one experiment consumes: the stream, the client training
/// splits, and a held-out test set per task.
#[derive(Debug, Clone)]
pub struct ScenarioData<T> {
    pub stream: TaskStream,
    pub partition: ClientPartition<T>,
    pub test_sets: Vec<Dataset<T>>,
    pub feature_dim: usize,
}

#[derive(Debug, Clone)]
pub struct ScenarioParams {
    pub per_class: usize,
    pub feature_dim: usize,
    pub test_fraction: f64,
    pub num_clients: usize,
    pub dirichlet_alpha: f64,
    pub seed: u64,
}

/// Draws every task's data, holds out `test_fraction` of each class, and
/// partitions the rest over clients.
pub fn build_scenario<T: Scalar>(
    stream: &TaskStream,
    p: &ScenarioParams,
) -> Result<ScenarioData<T>> {
    if !(0.0..1.0).contains(&p.test_fraction) {
        return Err(Error::invalid("test_fraction", "must lie in [0, 1)"));
    }
    if p.per_class == 0 || p.feature_dim < 2 {
        return Err(Error::invalid(
            "scenario",
            "per_class >= 1 and feature_dim >= 2 required",
        ));
    }
    let k = stream.num_classes;
    let mut uid = 0u64;
    let mut partition = Vec::with_capacity(stream.len());
    let mut test_sets = Vec::with_capacity(stream.len());
    for task in &stream.tasks {
        let shift = domain_shift(task.domain, p.feature_dim, p.seed);
        let samples: Vec<LabeledSample<T>> = sample_blobs(&BlobRequest {
            classes: &task.classes,
            num_classes: k,
            per_class: p.per_class,
            feature_dim: p.feature_dim,
            domain: task.domain,
            shift: shift.as_deref(),
            seed: p.seed,
            uid_start: uid,
        });
        uid += samples.len() as u64;
        let n_test = (p.per_class as f64 * p.test_fraction).round() as usize;
        let mut train = Vec::new();
        let mut test = Vec::new();
        for chunk in samples.chunks(p.per_class) {
            let mut chunk = chunk.to_vec();
            let y = chunk[0].label as u64;
            chunk.shuffle(&mut stream_rng(
                p.seed,
                Stream::Split,
                &[task.index as u64, y],
            ));
            let rest = chunk.split_off(n_test);
            test.extend(chunk);
            train.extend(rest);
        }
        train.sort_by_key(|s| s.uid);
        test.sort_by_key(|s| s.uid);
        let train = Dataset::new(train, k, p.feature_dim)?;
        let part_seed = crate::rng::derive_seed(p.seed, Stream::Dirichlet, &[task.index as u64]);
        partition.push(dirichlet_partition(
            &train,
            p.num_clients,
            p.dirichlet_alpha,
            part_seed,
        )?);
        test_sets.push(Dataset::new(test, k, p.feature_dim)?);
    }
    Ok(ScenarioData {
        stream: stream.clone(),
        partition: ClientPartition {
            per_task: partition,
        },
        test_sets,
        feature_dim: p.feature_dim,
    })
}
