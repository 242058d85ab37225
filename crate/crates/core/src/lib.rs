//! Black-box token attribution for generative language models.
//!
//! The [`attribution`] module estimates how much each context token matters
//! for a predicted token by repeatedly replacing random subsets of the
//! context and watching the target probability. [`faithfulness`] scores
//! such attributions by soft-masking the input according to them.
//! Backends answer next-token queries either in process ([`backend::ToyLM`])
//! or over HTTP ([`backend::RemoteBackend`], [`protocol`]).

pub mod attribution;
pub mod backend;
pub mod cli;
pub mod error;
pub mod faithfulness;
pub mod numeric;
pub mod proposer;
pub mod protocol;
pub mod records;
pub mod render;
pub mod sequence;

pub use attribution::{Attributor, ImportanceState, ReAGentConfig, TargetAttribution};
pub use backend::{ModelBackend, VocabDistribution};
pub use error::{Error, Result};
pub use sequence::{TokenId, TokenSequence};
