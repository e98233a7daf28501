//! File formats, dataset loading and the `repfuse` command line around
//! [`repfuse_core`].

pub mod checkpoint;
pub mod commands;
pub mod dataset;
pub mod emb;
pub mod error;
pub mod exec;
pub mod manifest;
pub mod synth;

pub use error::{Error, Result};
