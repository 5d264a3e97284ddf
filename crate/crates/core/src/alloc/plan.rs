use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::apportion::bounded_apportion;
use super::contribution::{data_contribution, model_contribution, ContributionIndices};
use crate::config::{AllocationMode, FederationConfig};
use crate::data::ClassHistogram;
use crate::error::{Error, Result};
use crate::params::Params;
use crate::scalar::Scalar;

/// Exemplar quotas for one task boundary.
///
/// `per_client[c]` is the number of slots the server granted client `c`;
/// `per_class[c]` spreads those slots over the client's classes and sums to
/// `per_client[c] - shortfall[c]`, where the shortfall is the part the client
/// cannot fill from its own samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryPlan {
    pub task: usize,
    pub mode: AllocationMode,
    pub per_client: Vec<usize>,
    pub per_class: Vec<BTreeMap<usize, usize>>,
    pub shortfall: Vec<usize>,
    pub indices: Option<ContributionIndices>,
}

impl MemoryPlan {
    pub fn total_slots(&self) -> usize {
        self.per_client.iter().sum()
    }

    pub fn total_quota(&self) -> usize {
        self.per_class.iter().flat_map(|m| m.values()).sum()
    }

    pub fn total_shortfall(&self) -> usize {
        self.shortfall.iter().sum()
    }

    pub fn client_quotas(&self, client: usize) -> &BTreeMap<usize, usize> {
        &self.per_class[client]
    }
}

/// Divides the pool `M` among clients by `b_c + d_c`, within `[m_min, m_max]`.
/// The result sums to `min(M, C * m_max)`.
pub fn client_memory_split(
    indices: &ContributionIndices,
    pool: usize,
    m_min: usize,
    m_max: usize,
) -> Result<Vec<usize>> {
    let c = indices.num_clients();
    if c == 0 || indices.d.len() != c {
        return Err(Error::invalid(
            "indices",
            "b and d must cover the same non-empty client set",
        ));
    }
    if m_min > m_max {
        return Err(Error::Infeasible(format!(
            "m_min ({m_min}) > m_max ({m_max})"
        )));
    }
    if c * m_min > pool {
        return Err(Error::Infeasible(format!(
            "C * m_min ({c} * {m_min}) > M ({pool})"
        )));
    }
    let weights = indices.combined();
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::invalid(
            "indices",
            "entries must be finite and non-negative",
        ));
    }
    Ok(bounded_apportion(
        &weights,
        pool,
        &vec![m_min; c],
        &vec![m_max; c],
    ))
}

/// Per-class quotas of one client and the slots it cannot fill.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassQuotas {
    pub quotas: BTreeMap<usize, usize>,
    pub shortfall: usize,
}

/// Spreads `m_c` slots over the client's classes by
/// `(1 - a) * N_cy / N_c + a * N_cy / N_y`, normalized.
///
/// With `availability`, a class never receives more slots than the client
/// holds; the surplus flows to the remaining classes by score and whatever
/// still cannot be placed is returned as shortfall.
pub fn class_memory_split(
    client_hist: &ClassHistogram,
    global_hist: &ClassHistogram,
    a: f64,
    m_c: usize,
    availability: Option<&ClassHistogram>,
) -> Result<ClassQuotas> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::invalid("mix_a", format!("{a} not in [0, 1]")));
    }
    let n_c = client_hist.total() as f64;
    let mut classes = Vec::new();
    let mut scores = Vec::new();
    for (y, n) in client_hist.iter() {
        let n_y = global_hist.get(y);
        if n_y < n {
            return Err(Error::invalid(
                "global histogram",
                format!("class {y}: client holds {n} samples, global count is {n_y}"),
            ));
        }
        classes.push(y);
        scores.push((1.0 - a) * n as f64 / n_c + a * n as f64 / n_y as f64);
    }
    Ok(spread(&classes, &scores, m_c, availability))
}

fn spread(
    classes: &[usize],
    weights: &[f64],
    m_c: usize,
    availability: Option<&ClassHistogram>,
) -> ClassQuotas {
    if classes.is_empty() {
        return ClassQuotas {
            quotas: BTreeMap::new(),
            shortfall: m_c,
        };
    }
    let hi: Vec<usize> = classes
        .iter()
        .map(|&y| availability.map_or(m_c, |h| h.get(y)))
        .collect();
    let q = bounded_apportion(weights, m_c, &vec![0; classes.len()], &hi);
    let placed: usize = q.iter().sum();
    ClassQuotas {
        quotas: classes.iter().copied().zip(q).collect(),
        shortfall: m_c - placed,
    }
}

fn equal_class_split(hist: &ClassHistogram, m_c: usize) -> ClassQuotas {
    let classes = hist.classes();
    let weights = vec![1.0; classes.len()];
    spread(&classes, &weights, m_c, Some(hist))
}

fn assemble(
    task: usize,
    mode: AllocationMode,
    per_client: Vec<usize>,
    histograms: &[ClassHistogram],
    config: &FederationConfig,
    indices: Option<ContributionIndices>,
) -> Result<MemoryPlan> {
    let global = ClassHistogram::sum(histograms);
    let mut per_class = Vec::with_capacity(histograms.len());
    let mut shortfall = Vec::with_capacity(histograms.len());
    for (hist, &m_c) in histograms.iter().zip(&per_client) {
        let split = match mode {
            AllocationMode::Dynamic => {
                class_memory_split(hist, &global, config.mix_a, m_c, Some(hist))?
            }
            AllocationMode::FixedEqual => equal_class_split(hist, m_c),
        };
        per_class.push(split.quotas);
        shortfall.push(split.shortfall);
    }
    Ok(MemoryPlan {
        task,
        mode,
        per_client,
        per_class,
        shortfall,
        indices,
    })
}

fn fixed_per_client(config: &FederationConfig) -> Vec<usize> {
    let each = (config.pool_size / config.num_clients).min(config.m_max);
    vec![each; config.num_clients]
}

/// Full plan for the boundary after `task`.
///
/// `histograms[c]` counts the samples client `c` can draw exemplars from;
/// they also bound each class quota. `locals` are the clients' final-round
/// models and `prev_global` the global model those rounds started from.
pub fn build_memory_plan<T: Scalar>(
    task: usize,
    locals: &[Params<T>],
    prev_global: &Params<T>,
    histograms: &[ClassHistogram],
    config: &FederationConfig,
) -> Result<MemoryPlan> {
    if locals.len() != config.num_clients || histograms.len() != config.num_clients {
        return Err(Error::invalid(
            "client set",
            format!(
                "{} models and {} histograms for {} clients",
                locals.len(),
                histograms.len(),
                config.num_clients
            ),
        ));
    }
    match config.allocation_mode {
        AllocationMode::FixedEqual => assemble(
            task,
            AllocationMode::FixedEqual,
            fixed_per_client(config),
            histograms,
            config,
            None,
        ),
        AllocationMode::Dynamic => {
            let indices = ContributionIndices {
                b: model_contribution(locals, prev_global, config.deviation_metric)?,
                d: data_contribution(histograms)?,
            };
            let per_client =
                client_memory_split(&indices, config.pool_size, config.m_min, config.m_max)?;
            assemble(
                task,
                AllocationMode::Dynamic,
                per_client,
                histograms,
                config,
                Some(indices),
            )
        }
    }
}

/// Plan for the first boundary: every client gets an equal slice of the pool.
/// Class-level quotas still follow the configured mode.
pub fn bootstrap_memory_plan(
    task: usize,
    histograms: &[ClassHistogram],
    config: &FederationConfig,
) -> Result<MemoryPlan> {
    if histograms.len() != config.num_clients {
        return Err(Error::invalid(
            "client set",
            "one histogram per client required",
        ));
    }
    match config.allocation_mode {
        AllocationMode::FixedEqual => assemble(
            task,
            AllocationMode::FixedEqual,
            fixed_per_client(config),
            histograms,
            config,
            None,
        ),
        AllocationMode::Dynamic => {
            let indices = ContributionIndices::uniform(config.num_clients);
            let per_client =
                client_memory_split(&indices, config.pool_size, config.m_min, config.m_max)?;
            assemble(
                task,
                AllocationMode::Dynamic,
                per_client,
                histograms,
                config,
                Some(indices),
            )
        }
    }
}
