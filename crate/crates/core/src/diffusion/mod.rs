//! OU forward process, ε-prediction denoiser, training on tilt-resampled
//! data and reverse-time sampling.

mod loss;
mod model;
mod sampler;
mod schedule;
mod train;

pub use loss::{
    empirical_denoiser_loss, score_loss, GaussianMixtureTarget, LossEstimate, LossMode, TrueScore,
};
pub use model::{
    denoiser_forward, denoiser_grad, Activation, Dense, DenoiserModel, Gradient, ModelConfig,
    Standardizer, TimeEmbedding, TimeWarp, TrainBatch,
};
pub use sampler::{
    reverse_sample, reverse_sample_with, score_from_eps, FnScore, ModelScore, ScoreField,
};
pub use schedule::{forward_noise, NoiseSchedule};
pub use train::{fit, sample_batch, train, LossTrace, TrainConfig};
