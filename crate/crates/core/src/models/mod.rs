//! Trainable classifiers: the bidirectional recurrent chunk model and the
//! bag-of-words logistic regression baseline.

pub mod gradcheck;
pub mod logreg;
pub mod recurrent;
pub mod train;

pub use gradcheck::{gradient_check, gradient_check_with, GradCheckReport};
pub use logreg::{format_weight, logreg_top_weights, logreg_train, LogRegModel, TopWeights};
pub use recurrent::{ParamLayout, RecurrentChunkModel};
pub use train::{
    fit, predict_chunks, predict_encoded, train_chunk_model, train_encoded, ArchConfig, ChunkPrediction, EncodedSet,
    TrainConfig, TrainingLog,
};
