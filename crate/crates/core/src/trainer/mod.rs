//! Optimization: learning-rate schedule, Adam, pre-training and
//! fine-tuning.

mod adam;
mod finetune;
mod pretrain;
mod schedule;

pub use adam::{adam_step, AdamConfig, OptimState};
pub use finetune::{
    accuracy_on, classifier_logits, finetune, predict, Classifier, ClassifierHead, FinetuneConfig,
    FinetuneResult, LabeledExample,
};
pub use pretrain::{
    pretrain, pretrain_loss, pretrain_until, train_step, EncodedTriplet, PretrainData,
    PretrainGraph, PretrainState, StepLosses, TrainConfig,
};
pub use schedule::lr_at;
