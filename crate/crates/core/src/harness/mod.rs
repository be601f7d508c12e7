//! Experiment orchestration: continual training, adaptive evaluation, full
//! rehearsal, generalization sweeps, the supervised interference demo,
//! metrics, manifests, checkpoints and the config format.

mod checkpoint;
mod config;
mod eval;
mod generalize;
mod interference;
mod metrics;
mod train;

pub use checkpoint::Checkpoint;
pub use config::{
    ExperimentConfig, GeneralizeConfig, InterferenceConfig, Method, RegularizerConfig, ReplayConfig, Selection,
};
pub use eval::{evaluate_task, run_episode, EpisodeOutcome, EvalOutcome, EvalSettings};
pub use generalize::{generalization_eval, random_policy_success, unseen_crossing_seeds, GeneralizationRow};
pub use interference::{interference_demo, InterferenceReport, Variant, VariantReport};
pub use metrics::{
    cumulative_performance, final_performance, write_csv, write_csv_file, EvalRecord, RunManifest,
    SelectionSummary, CSV_HEADER,
};
pub use train::{choose_rehearsal_task, full_rehearsal_step, head_for, train_continual, PhaseInfo, RunOutput};

use crate::bandit::{concentration_run, BanditConfig};
use crate::Result;

/// Fraction of `runs` seeded 3-arm problems (best gain 5x the others) where
/// `p(best) > threshold` after `updates` updates.
pub fn bandit_bench(runs: usize, updates: usize, threshold: f64, config: BanditConfig) -> Result<(usize, usize)> {
    let gains = [0.2, 0.2, 1.0];
    let mut hits = 0;
    for seed in 0..runs as u64 {
        if concentration_run(&gains, updates, config, seed)? > threshold {
            hits += 1;
        }
    }
    Ok((hits, runs))
}
