//! Binary containers: datasets and checkpoints.

pub mod binio;
pub mod checkpoint;
pub mod dataset;

pub use checkpoint::Checkpoint;
pub use dataset::{decode_dataset, encode_dataset, load_dataset, save_dataset};
