//! Configuration, model assembly, training, evaluation and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod model;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{apply_ablation, AblationFlag, EffectiveArchitecture, ModelConfig, SEED_ENV};
pub use eval::{evaluate, evaluate_model, translate, EvaluationSummary, Prediction, Translation};
pub use model::{build_vocab, GlossModel, LossBreakdown, PreparedSample};
pub use train::{train, train_with_options, StepLoss, TrainOptions, TrainOutcome, TrainState};
