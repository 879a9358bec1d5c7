//! Transfer-learning head: stored backbone features in, fully-connected
//! layers ending in softmax out, trained by mini-batch SGD on cross-entropy.

mod checkpoint;
mod head;
mod store;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, HEAD_MAGIC, HEAD_VERSION};
pub use head::{loss_and_grad, softmax, ClassifierHead, Dense, Example, Gradients, Prediction};
pub use store::{FeatureRow, FeatureStore, StoreSummary, FEATURE_STORE_MAGIC, FEATURE_STORE_VERSION};
pub use train::{train_examples, train_head, EpochLog, TrainConfig, TrainLog};
