//! A small pre-norm transformer encoder with reverse-mode autodiff, Adam,
//! and finite-difference gradient checking.

mod gradcheck;
mod graph;
mod mask;
mod mat;
mod model;
mod optim;
mod params;
mod train;
mod vocab;

pub use gradcheck::{grad_check, GradCheck, FD_STEP, REL_FLOOR};
pub use graph::{Graph, Var};
pub use mask::{build_mask, Encoded, MaskKind, MaskSpec, SequenceBuilder, Span};
pub use mat::Mat;
pub use model::{Encoding, Forward, Heads, Linear, MiniModel, ModelConfig};
pub use optim::{Adam, AdamConfig};
pub use params::{Grads, ParamId, ParamStore};
pub use train::{example_grads, mean_loss, train, Objective, TrainConfig, TrainReport};
pub use vocab::{build_vocab, Vocab, BOS, EOS, PAD, SEP, SP1, SP2, SPECIALS, UNK};

pub(crate) use graph::sigmoid;
