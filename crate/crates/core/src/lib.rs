//! Federated multimodal regression with uncertainty-aware fusion and
//! reliability-weighted aggregation.
//!
//! Clients hold visual/audio/text features with missing modalities, train
//! a local model whose modality fusion is guided by dropout-based
//! uncertainty, and upload their shared head together with a reliability
//! score. The server averages uploads weighted by reliability.

pub mod config;
pub mod datagen;
pub mod error;
pub mod fedsim;
pub mod fusion;
pub mod harness;
pub mod modality;
pub mod model;
pub mod nn;
pub mod rng;
pub mod uncertainty;

pub use error::{Error, Result};
pub use modality::{Modality, ModalityMask, PerModality};
pub use rng::Rng;
