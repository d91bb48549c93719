//! Block-list prediction: which multiset of shapes explains a silhouette.

mod classifier;
mod cnn;
mod codebook;

pub use classifier::{
    class_targets, train_classifier, BlockListError, BlockListModel, BlockListPrediction,
    ClassifierConfig, ClassifierMeta, BLOCKLIST_BLOB, BLOCKLIST_META, LOW_CONFIDENCE,
};
pub use cnn::BlockListNet;
pub use codebook::Codebook;
