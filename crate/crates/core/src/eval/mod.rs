//! Experiment execution, results persistence and the comparison statistics.

mod config;
mod method;
mod record;
pub mod report;
mod runner;
mod stats;
mod store;
pub mod synthetic;

pub use config::ExperimentConfig;
pub use method::{Cotraining, Method, Pretraining, Wrapper, COMPONENTS};
pub use record::{derive_seed, fnv1a, splitmix64, trial_seed, MethodRun, RunFailure, RunKey, RunTiming, Setting};
pub use runner::{mean_accuracy, run_benchmark, run_trial, trial_labels, BenchmarkOutput, Job, TrialLabels, TrialOutput};
pub use stats::{
    compare, group_accuracies, ln_gamma, mean, percent_improvement, regularized_incomplete_beta, relative_improvement,
    sample_variance, student_t_two_sided, welch_t_test, win_matrix, BoxPlotEntry, Comparison, DatasetKey,
    RelativeImprovement, SkippedDataset, WelchResult, WinMatrix,
};
pub use store::{read_lines, read_runs, write_runs, ResultsStore, FAILURES_FILE, RESULTS_FILE, TIMINGS_FILE};
