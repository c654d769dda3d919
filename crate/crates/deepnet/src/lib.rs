//! Recurrent sequence models for the g-formula: a multitask covariate
//! network and a discrete-time hazard network, trained from scratch.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod gradcheck;
pub mod modelset;
pub mod network;
pub mod optim;
pub mod search;
pub mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{reference_config, Dist, NetworkConfig, NetworkKind, SearchSpace};
pub use gradcheck::{gradient_check, GradientCheck};
pub use modelset::DeepModelSet;
pub use network::{Architecture, HeadKind, HeadSpec, Network, Sequence, SequenceBatch};
pub use optim::AdamW;
pub use search::{random_search, SearchResult, Trial};
pub use train::{train_covariate_network, train_outcome_network, EpochLog, TrainedNetwork};
