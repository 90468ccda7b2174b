//! The gating network: context features, normalization, LIN/MLP/LSTM gates
//! and their training against frozen experts.

mod data;
mod features;
mod gradcheck;
mod network;
mod normalize;
mod train;

pub use data::{GateData, GateSequence};
pub use features::{
    extract_features, sentence_features, FeatureMode, ALPHA_PAD, FULL_DIM, NG_SLOTS, PROB_PAD,
    SIMPLE_DIM,
};
pub use gradcheck::gate_gradient_check;
pub use network::{
    count_params, init_gate, mixture_loss, mixture_loss_grad, param_shapes, GateArch, GateNet,
    GATE_KIND, LOGIT_LIMIT, LSTM_UNITS, MLP_UNITS,
};
pub use normalize::{fit_normalizer, FeatureNormalizer, STD_FLOOR};
pub use train::{train_gate, GateEval, GateTrainConfig, GateTrainOutcome};
