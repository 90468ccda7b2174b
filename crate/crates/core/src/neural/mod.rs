//! Word-level LSTM language model: embedding, stacked LSTM layers with state
//! reset at every sentence start, and a full-softmax output classifier.
//!
//! Everything is generic over [`Real`] so the same code trains in `f32` and is
//! gradient-checked in `f64`.

mod gradcheck;
mod lstm;
mod model;
mod score;
mod train;

pub use gradcheck::{nn_gradient_check, relative_error, GradCheck, REL_ERROR_FLOOR};
pub use model::{init_params, LstmLayer, NeuralLm, NnArch};
pub use score::{nn_forward, score_sentences, DropoutMode, SentenceScores, StepOutput};
pub use train::{evaluate_perplexity, train_nn, EpochLog, NnTrainConfig};

use ndarray::NdFloat;
use num_traits::FromPrimitive;

/// Floating-point element type of the network.
pub trait Real: NdFloat + FromPrimitive {
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }
}

impl Real for f32 {}
impl Real for f64 {}
