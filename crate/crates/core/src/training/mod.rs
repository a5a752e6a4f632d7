//! Classifiers, the SGD loop and the two bilevel trainers.

mod classifier;
mod sgd;
mod trainers;
mod upstream;

pub use classifier::{argmax, log_prob_grad, softmax, softmax_prob, LinearClassifier, LossGrad, LossKind};
pub use sgd::{lr_at, sgd_step, Momentum, SgdConfig};
pub use trainers::{
    accuracy_of, discriminative_encode, end_to_end_sample, train_discriminative_rp, train_end_to_end,
    train_linear_classifier, upstream_encode, DiscriminativeConfig, DiscriminativeFit, EndToEndConfig, EndToEndFit,
    LinearFit, SampleGrad,
};
pub use upstream::{AffineUpstream, UpstreamMap};
