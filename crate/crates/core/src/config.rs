use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the server divides the exemplar pool at task boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationMode {
    /// Contribution-weighted client split and distribution-weighted class split.
    Dynamic,
    /// `floor(M / C)` slots per client, spread evenly over the client's classes.
    #[serde(alias = "fixed")]
    FixedEqual,
}

impl AllocationMode {
    pub fn name(self) -> &'static str {
        match self {
            AllocationMode::Dynamic => "dynamic",
            AllocationMode::FixedEqual => "fixed_equal",
        }
    }
}

impl std::str::FromStr for AllocationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dynamic" => Ok(AllocationMode::Dynamic),
            "fixed" | "fixed_equal" => Ok(AllocationMode::FixedEqual),
            other => Err(Error::invalid(
                "allocation_mode",
                format!("unknown mode `{other}` (expected dynamic or fixed)"),
            )),
        }
    }
}

/// Scalar reduction of a local-vs-global parameter delta for the model-space
/// contribution index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationMetric {
    /// `||w_c - w_g||_2`
    L2,
    /// `1 - cos(w_c, w_g)`
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FederationConfig {
    pub num_clients: usize,
    pub rounds_per_task: usize,
    pub local_epochs: usize,
    /// Iterations `e` of the personal information model update.
    pub info_model_iters: usize,
    /// Global exemplar pool `M`, in sample slots.
    pub pool_size: usize,
    pub m_min: usize,
    pub m_max: usize,
    /// Local/global mix `a` of the class-level split.
    pub mix_a: f64,
    /// Momentum parameter `lambda` of the information model, in (0, 1).
    pub momentum_lambda: f64,
    /// Step size `eta` of the information model.
    pub info_lr: f64,
    /// Weight `delta` of the output-magnitude penalty.
    pub mg_weight: f64,
    pub train_lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub allocation_mode: AllocationMode,
    pub deviation_metric: DeviationMetric,
    /// Train clients of a round on the rayon pool. Results do not depend on it.
    pub parallel: bool,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            num_clients: 5,
            rounds_per_task: 5,
            local_epochs: 2,
            info_model_iters: 3,
            pool_size: 1200,
            m_min: 0,
            m_max: 400,
            mix_a: 0.4,
            momentum_lambda: 0.4,
            info_lr: 0.01,
            mg_weight: 0.1,
            train_lr: 0.05,
            batch_size: 64,
            seed: 0,
            allocation_mode: AllocationMode::Dynamic,
            deviation_metric: DeviationMetric::L2,
            parallel: true,
        }
    }
}

impl FederationConfig {
    /// Checks every invariant. The error names the offending field.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_clients", self.num_clients),
            ("rounds_per_task", self.rounds_per_task),
            ("info_model_iters", self.info_model_iters),
            ("m_max", self.m_max),
            ("batch_size", self.batch_size),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::invalid(field, "must be positive"));
            }
        }
        if self.m_min > self.m_max {
            return Err(Error::invalid(
                "m_min",
                format!("m_min ({}) > m_max ({})", self.m_min, self.m_max),
            ));
        }
        if self.num_clients * self.m_min > self.pool_size {
            return Err(Error::invalid(
                "m_min",
                format!(
                    "num_clients * m_min ({} * {}) exceeds pool_size ({})",
                    self.num_clients, self.m_min, self.pool_size
                ),
            ));
        }
        if !(0.0..=1.0).contains(&self.mix_a) {
            return Err(Error::invalid(
                "mix_a",
                format!("{} not in [0, 1]", self.mix_a),
            ));
        }
        if !(self.momentum_lambda > 0.0 && self.momentum_lambda < 1.0) {
            return Err(Error::invalid(
                "momentum_lambda",
                format!("{} not in (0, 1)", self.momentum_lambda),
            ));
        }
        if !(self.info_lr > 0.0 && self.info_lr.is_finite()) {
            return Err(Error::invalid("info_lr", "must be a positive finite real"));
        }
        if !(self.train_lr > 0.0 && self.train_lr.is_finite()) {
            return Err(Error::invalid("train_lr", "must be a positive finite real"));
        }
        if !(self.mg_weight >= 0.0 && self.mg_weight.is_finite()) {
            return Err(Error::invalid(
                "mg_weight",
                "must be a non-negative finite real",
            ));
        }
        Ok(())
    }
}
