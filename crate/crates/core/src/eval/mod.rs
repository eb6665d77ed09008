//! Metrics, diagnostics and experiment drivers.

pub mod bleu;
pub mod contrastive;
pub mod experiments;
pub mod heatmap;
pub mod muc;
pub mod prune;

pub use bleu::{corpus_bleu, sentence_bleu};
pub use contrastive::{contrastive_accuracy, ContrastiveItem};
pub use experiments::{run_experiment_suite, Experiment, Report, SuiteConfig, SuiteData};
pub use heatmap::attention_heatmap;
pub use muc::{muc_score, MucResult};
pub use prune::prune_clusters;
