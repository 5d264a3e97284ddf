//! Server-side apportionment of the global exemplar pool.
//!
//! The pool is first divided among clients in proportion to the sum of a
//! model-space and a data-space contribution index, clamped to
//! `[m_min, m_max]`. Each client's share is then divided among its classes
//! by a mix of the local and the global class frequencies.

mod apportion;
mod contribution;
mod plan;

pub use apportion::{bounded_apportion, largest_remainder, water_fill};
pub use contribution::{data_contribution, model_contribution, ContributionIndices};
pub use plan::{
    bootstrap_memory_plan, build_memory_plan, class_memory_split, client_memory_split, ClassQuotas,
    MemoryPlan,
};
