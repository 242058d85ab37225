//! Language-model backends.
//!
//! Everything the attribution loop and the faithfulness metrics know about a
//! model goes through [`ModelBackend`]: full-vocabulary next-token
//! distributions, optionally with per-position Bernoulli masking applied to
//! the token embeddings.

mod remote;
mod toy;

pub use remote::{RemoteBackend, RemoteOptions};
pub use toy::{ConstantLM, KeepMask, PlantedDependencyLM, ToyConfig, ToyLM};

use crate::error::{Error, Result};
use crate::sequence::TokenId;

/// Probability vector over the whole vocabulary for one prediction step.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabDistribution(Vec<f64>);

impl VocabDistribution {
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Backend("empty distribution".into()));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::Backend(format!(
                "invalid probability {p} at index {i}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::Backend(format!("probabilities sum to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn prob(&self, token: TokenId) -> f64 {
        self.0[token as usize]
    }

    /// Number of tokens ranked strictly ahead of `token`; ties go to the
    /// lower token id.
    pub fn rank_of(&self, token: TokenId) -> usize {
        let t = token as usize;
        let p = self.0[t];
        self.0
            .iter()
            .enumerate()
            .filter(|&(j, &q)| q > p || (q == p && j < t))
            .count()
    }

    pub fn in_top_k(&self, token: TokenId, k: usize) -> bool {
        self.rank_of(token) < k
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// A next-token oracle. Implementations must be safe for concurrent
/// read-only queries.
pub trait ModelBackend: Send + Sync {
    fn name(&self) -> &str;

    fn vocab_size(&self) -> usize;

    /// Distribution of the token following `context`.
    fn next_token_distribution(&self, context: &[TokenId]) -> Result<VocabDistribution>;

    /// Like [`next_token_distribution`](Self::next_token_distribution), but
    /// every embedding coordinate of position `i` is kept with probability
    /// `retention[i]` and zeroed otherwise. `seed` fixes the mask.
    fn masked_distribution(
        &self,
        context: &[TokenId],
        retention: &[f64],
        seed: u64,
    ) -> Result<VocabDistribution>;
}

impl<B: ModelBackend + ?Sized> ModelBackend for std::sync::Arc<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn next_token_distribution(&self, context: &[TokenId]) -> Result<VocabDistribution> {
        (**self).next_token_distribution(context)
    }

    fn masked_distribution(
        &self,
        context: &[TokenId],
        retention: &[f64],
        seed: u64,
    ) -> Result<VocabDistribution> {
        (**self).masked_distribution(context, retention, seed)
    }
}

pub(crate) fn validate_retention(retention: &[f64], context_len: usize) -> Result<()> {
    if retention.len() != context_len {
        return Err(Error::LengthMismatch {
            expected: context_len,
            actual: retention.len(),
        });
    }
    if let Some((i, q)) = retention
        .iter()
        .enumerate()
        .find(|(_, q)| !(0.0..=1.0).contains(*q))
    {
        return Err(Error::Validation(format!(
            "retention probability {q} at position {i} is outside [0, 1]"
        )));
    }
    Ok(())
}
