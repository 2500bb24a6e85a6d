pub mod dists;
pub mod emos;
pub mod mlp;
pub mod ensemble_data;
pub mod error;
pub mod optim;
pub mod pipeline;
pub mod scoring;
pub mod special;
pub mod store;

pub use error::{Error, Result};
