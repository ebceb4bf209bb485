//! Newell microsimulation of merge episodes and Monte Carlo evaluation.

pub mod batch;
pub mod episode;
pub mod platoon;

pub use batch::{
    monte_carlo, monte_carlo_on, reduction_percent, sample_costs, sensitivity_sweep, BatchConfig,
    BatchResult, BatchSummary, PolicyKind, PolicySummary, RunRecord, SweepParam, SweepPoint,
};
pub use episode::{
    crossing_time, cumulative_count, saturated_episode, simulate_episode, EpisodeResult,
    EpisodeSetup, MergeRecord, COLLISION_GAP_M,
};
pub use platoon::{Clock, Following, MergerPlan, Platoon, PreMerge, Track, VehicleKind};
