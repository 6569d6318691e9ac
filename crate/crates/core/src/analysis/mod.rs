//! Post-hoc measurement suite: CKA representational similarity (biased and
//! unbiased HSIC, minibatch-accumulated) and layer-normalized Fisher
//! information traces.

mod cka;
mod fisher;

pub use cka::{
    cka, cka_minibatch, gram_linear, hsic_biased, hsic_unbiased, layer_representations,
    CkaAccumulator, CkaEstimator, GramMatrix, RepresentationBlock, RepresentationSource,
};
pub use fisher::{
    fisher_trace, FisherGroup, FisherProfile, GradSource, WeightGroupKind, YMode,
};
