//! Downstream evaluation: linear probes, fine-tuning, metrics and sweeps.

pub mod embed;
pub mod finetune;
pub mod linear;
pub mod metrics;
pub mod protocol;

pub use embed::{embed, embed_with, export_embeddings, EmbedMode};
pub use finetune::{finetune, FinetuneConfig};
pub use linear::{linear_eval, ClassifierConfig, LinearClassifier, Scores, Split};
pub use metrics::{accuracy, confusion_matrix, macro_f1};
pub use protocol::{
    finetune_folds, fit_probe, linear_eval_fold, mean_std, pretrain_and_evaluate, sweep_k, sweep_robustness,
    write_table, EvalConfig, EvalReport, FoldScores, SweepRow,
};
