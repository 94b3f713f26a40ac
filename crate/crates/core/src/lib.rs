//! Contrastive pretraining of a toy CT-montage/report dual encoder with
//! zero-shot multi-label evaluation.
//!
//! The pipeline runs from raw volumes to metrics: [`montage`] turns a CT
//! volume into 2x2 slice montages, [`textprep`] turns reports into token
//! sequences, [`encoder`] and [`trainer`] fit the dual encoder with a
//! symmetric contrastive loss, and [`zeroshot`] with [`metrics`] scores
//! prompt-based predictions on held-out patients.

pub mod config;
pub mod corpusio;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod montage;
pub mod pipeline;
pub mod textprep;
pub mod synthgen;
pub mod trainer;
pub mod zeroshot;

pub use error::{Error, ErrorClass, Result};
