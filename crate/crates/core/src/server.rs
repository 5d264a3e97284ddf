//! Server-side orchestration: rounds of local training and weighted
//! averaging within a task, exemplar-pool planning between tasks.

use rayon::prelude::*;

use crate::alloc::{bootstrap_memory_plan, build_memory_plan, MemoryPlan};
use crate::client::{local_train, refresh_cache, ClientState, RoundContext};
use crate::config::FederationConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{
    estimate_costs, evaluate, summarize, AccuracySummary, CostEstimate, CostInputs,
};
use crate::nn::{expand_head, init_params, MlpSpec};
use crate::params::Params;
use crate::report::TaskEval;
use crate::scalar::Scalar;
use crate::scenario::ScenarioData;

/// Sample-count-weighted mean `sum_c (n_c / N) w_c`, accumulated in input order.
pub fn fedavg_aggregate<T: Scalar>(updates: &[(Params<T>, usize)]) -> Result<Params<T>> {
    let (first, _) = updates.first().ok_or(Error::Empty("aggregation updates"))?;
    let total: usize = updates.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::invalid("sample counts", "total is zero"));
    }
    let total = T::from_usize_lossy(total);
    let mut acc = vec![T::zero(); first.len()];
    for (w, n) in updates {
        first.same_shape(w)?;
        let weight = T::from_usize_lossy(*n) / total;
        for (a, &v) in acc.iter_mut().zip(w.values()) {
            *a += weight * v;
        }
    }
    Params::new(acc, first.shapes().to_vec())
}

#[derive(Debug, Clone)]
pub struct GlobalState<T> {
    pub params: Params<T>,
    pub spec: MlpSpec,
    pub task_index: usize,
    /// Rounds completed in the current task.
    pub round_index: usize,
    /// One plan per completed task boundary.
    pub plan_history: Vec<MemoryPlan>,
}

/// Global model the last round started from, and what each client returned.
#[derive(Debug, Clone)]
pub struct RoundRecord<T> {
    pub start: Params<T>,
    pub locals: Vec<Params<T>>,
}

/// Server plus clients for one experiment.
#[derive(Debug, Clone)]
pub struct Federation<T> {
    pub global: GlobalState<T>,
    pub clients: Vec<ClientState<T>>,
    pub config: FederationConfig,
    pub last_round: Option<RoundRecord<T>>,
}

impl<T: Scalar> Federation<T> {
    /// Fresh global model seeded from `config.seed`; every client starts from
    /// it, with its information model equal to it as well.
    pub fn new(
        spec: MlpSpec,
        config: FederationConfig,
        first_task: Vec<Dataset<T>>,
    ) -> Result<Self> {
        config.validate()?;
        spec.validate()?;
        if first_task.len() != config.num_clients {
            return Err(Error::DimensionMismatch {
                context: "client datasets",
                expected: config.num_clients,
                actual: first_task.len(),
            });
        }
        let params = init_params(&spec, config.seed);
        let clients = first_task
            .into_iter()
            .enumerate()
            .map(|(c, d)| ClientState::new(c, &params, d))
            .collect();
        Ok(Self {
            global: GlobalState {
                params,
                spec,
                task_index: 0,
                round_index: 0,
                plan_history: Vec::new(),
            },
            clients,
            config,
            last_round: None,
        })
    }

    /// Sends the global model out, trains every client, and averages the
    /// results weighted by each client's training-set size.
    pub fn run_round(&mut self) -> Result<()> {
        let start = self.global.params.clone();
        let ctx = RoundContext {
            task: self.global.task_index,
            round: self.global.round_index,
        };
        let spec = &self.global.spec;
        let config = &self.config;
        let train = |c: &ClientState<T>| local_train(c, &start, spec, config, ctx);
        let locals: Vec<Params<T>> = if config.parallel {
            self.clients.par_iter().map(train).collect::<Result<_>>()?
        } else {
            self.clients.iter().map(train).collect::<Result<_>>()?
        };
        let updates: Vec<(Params<T>, usize)> = locals
            .iter()
            .zip(&self.clients)
            .map(|(w, c)| (w.clone(), c.replay_len()))
            .collect();
        self.global.params = fedavg_aggregate(&updates)?;
        for (c, w) in self.clients.iter_mut().zip(&locals) {
            c.params = w.clone();
        }
        self.global.round_index += 1;
        self.last_round = Some(RoundRecord { start, locals });
        Ok(())
    }

    /// Plans the exemplar pool, refreshes every cache, grows the head to
    /// `next_num_classes`, and hands each client its next-task data.
    pub fn task_boundary(
        &mut self,
        next_num_classes: usize,
        next_data: Vec<Dataset<T>>,
    ) -> Result<&MemoryPlan> {
        if next_data.len() != self.clients.len() {
            return Err(Error::DimensionMismatch {
                context: "client datasets",
                expected: self.clients.len(),
                actual: next_data.len(),
            });
        }
        let record = self.last_round.as_ref().ok_or(Error::invalid(
            "task boundary",
            "no round completed in this task",
        ))?;
        let task = self.global.task_index;
        let histograms: Vec<_> = self
            .clients
            .iter()
            .map(ClientState::replay_histogram)
            .collect();
        let plan = if self.global.plan_history.is_empty() {
            bootstrap_memory_plan(task, &histograms, &self.config)?
        } else {
            build_memory_plan(
                task,
                &record.locals,
                &record.start,
                &histograms,
                &self.config,
            )?
        };

        let global = &self.global.params;
        let spec = &self.global.spec;
        let config = &self.config;
        let refresh =
            |c: &ClientState<T>| refresh_cache(c, &plan, global, spec, config, task).map(|r| r.0);
        self.clients = if config.parallel {
            self.clients
                .par_iter()
                .map(refresh)
                .collect::<Result<_>>()?
        } else {
            self.clients.iter().map(refresh).collect::<Result<_>>()?
        };

        let (params, new_spec) =
            expand_head(&self.global.params, &self.global.spec, next_num_classes)?;
        for (c, d) in self.clients.iter_mut().zip(next_data) {
            c.expand_head(&self.global.spec, next_num_classes)?;
            c.set_task_data(d);
        }
        self.global.params = params;
        self.global.spec = new_spec;
        self.global.task_index += 1;
        self.global.round_index = 0;
        self.last_round = None;
        self.global.plan_history.push(plan);
        Ok(self.global.plan_history.last().expect("just pushed"))
    }
}

/// Everything measured during one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome<T> {
    pub per_task: Vec<TaskEval>,
    pub summary: AccuracySummary,
    pub allocation_trace: Vec<MemoryPlan>,
    pub cost_estimate: CostEstimate,
    pub final_params: Params<T>,
    pub final_spec: MlpSpec,
}

/// Runs every task for `rounds_per_task` rounds. After each task the global
/// model is scored on the union of the test splits seen so far and on each
/// of those splits separately.
pub fn run_experiment<T: Scalar>(
    data: &ScenarioData<T>,
    hidden: &[usize],
    config: &FederationConfig,
) -> Result<ExperimentOutcome<T>> {
    let stream = &data.stream;
    if stream.is_empty() {
        return Err(Error::Empty("task stream"));
    }
    if data.partition.num_clients() != config.num_clients {
        return Err(Error::DimensionMismatch {
            context: "partition clients",
            expected: config.num_clients,
            actual: data.partition.num_clients(),
        });
    }
    let spec = MlpSpec::new(data.feature_dim, hidden.to_vec(), stream.classes_through(0))?;
    let mut fed = Federation::new(spec, config.clone(), data.partition.per_task[0].clone())?;
    let mut per_task = Vec::with_capacity(stream.len());
    let mut seen: Option<Dataset<T>> = None;
    for t in 0..stream.len() {
        for _ in 0..config.rounds_per_task {
            fed.run_round()?;
        }
        let test_t = &data.test_sets[t];
        let cumulative = match seen.take() {
            Some(s) => s.union(test_t)?,
            None => test_t.clone(),
        };
        let params = &fed.global.params;
        let spec = &fed.global.spec;
        let per_subset = data.test_sets[..=t]
            .iter()
            .map(|ts| evaluate(params, spec, ts))
            .collect::<Result<Vec<_>>>()?;
        per_task.push(TaskEval {
            task: t,
            overall_acc: evaluate(params, spec, &cumulative)?,
            per_subset,
        });
        seen = Some(cumulative);
        if t + 1 < stream.len() {
            fed.task_boundary(
                stream.classes_through(t + 1),
                data.partition.per_task[t + 1].clone(),
            )?;
        }
    }
    let overall: Vec<f64> = per_task.iter().map(|e| e.overall_acc).collect();
    let total_samples: usize = data
        .partition
        .per_task
        .iter()
        .flatten()
        .map(Dataset::len)
        .sum();
    let cost_estimate = estimate_costs(&CostInputs {
        num_clients: config.num_clients as u64,
        rounds: (config.rounds_per_task * stream.len()) as u64,
        local_epochs: config.local_epochs as u64,
        param_count: fed.global.spec.param_count() as u64,
        total_samples: total_samples as u64,
        num_classes: stream.num_classes as u64,
    });
    Ok(ExperimentOutcome {
        per_task,
        summary: summarize(&overall)?,
        allocation_trace: fed.global.plan_history,
        cost_estimate,
        final_params: fed.global.params,
        final_spec: fed.global.spec,
    })
}
