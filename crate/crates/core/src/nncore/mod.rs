//! From-scratch float32 training and inference for the VNN family and the
//! 1D LeNet5 adaptation: layers, backprop, SGD, augmentation, evaluation,
//! parameter/MAC accounting.

mod layer;
mod model;
mod tensor;
mod train;

pub use layer::{
    conv1d_forward, fc_forward, maxpool1d_forward, relu_forward, softmax, softmax_cross_entropy,
    LayerSpec,
};
pub use model::{
    argmax, forward, mac_count, param_count, predict, Arch, FloatModel, LayerParams, ModelSpec,
    SpecBuilder, TrainMeta, NORMALIZATION,
};
pub use tensor::Tensor;
pub use train::{
    accuracy_labeled, augment, dataset_pairs, evaluate, train, train_labeled, Augmentation,
    EvalReport, TrainConfig, TrainHistory,
};

#[allow(unused_imports)]
pub(crate) use model::forward_trace;
