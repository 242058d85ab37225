//! Deterministic desk-scale language models used as test oracles and as the
//! built-in `toy` backend.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};

use super::{validate_retention, ModelBackend, VocabDistribution};
use crate::error::{Error, Result};
use crate::numeric::{seeded_rng, softmax};
use crate::sequence::{validate_tokens, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyConfig {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            embedding_dim: 16,
            seed: 0,
        }
    }
}

/// Per-position, per-coordinate keep decisions for soft perturbation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeepMask {
    width: usize,
    bits: Vec<bool>,
}

impl KeepMask {
    pub fn full(len: usize, width: usize) -> Self {
        Self {
            width,
            bits: vec![true; len * width],
        }
    }

    /// Draws every coordinate independently: position `i` keeps each of its
    /// `width` coordinates with probability `retention[i]`.
    pub fn sample(retention: &[f64], width: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut bits = Vec::with_capacity(retention.len() * width);
        for &q in retention {
            for _ in 0..width {
                bits.push(rng.gen::<f64>() < q);
            }
        }
        Self { width, bits }
    }

    pub fn keep(&self, pos: usize, coord: usize) -> bool {
        self.bits[pos * self.width + coord]
    }
}

/// Embedding lookup, mean-pooled context concatenated with the last-token
/// embedding, one affine map and a softmax.
#[derive(Debug, Clone)]
pub struct ToyLM {
    name: String,
    vocab_size: usize,
    dim: usize,
    embedding: Vec<f64>,
    w_mean: Vec<f64>,
    w_last: Vec<f64>,
    bias: Vec<f64>,
}

impl ToyLM {
    pub fn new(config: ToyConfig) -> Result<Self> {
        let ToyConfig {
            vocab_size,
            embedding_dim: dim,
            seed,
        } = config;
        if vocab_size < 2 || dim == 0 {
            return Err(Error::Config(
                "toy model needs vocab_size >= 2 and embedding_dim >= 1".into(),
            ));
        }
        let mut rng = seeded_rng(seed);
        let scale = 3.0 / (dim as f64).sqrt();
        let mut draw = |n: usize, s: f64| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-1.0..1.0) * s).collect()
        };
        let embedding = draw(vocab_size * dim, 1.0);
        let w_mean = draw(vocab_size * dim, scale);
        let w_last = draw(vocab_size * dim, scale);
        let bias = draw(vocab_size, 1.0);
        Ok(Self {
            name: format!("toy-v{vocab_size}-d{dim}-s{seed}"),
            vocab_size,
            dim,
            embedding,
            w_mean,
            w_last,
            bias,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.dim
    }

    /// Forward pass with the first `embedding_dim` coordinates of `mask`
    /// applied to the token embeddings.
    pub(crate) fn forward(&self, context: &[TokenId], mask: &KeepMask) -> Vec<f64> {
        let d = self.dim;
        let mut mean = vec![0.0; d];
        let mut last = vec![0.0; d];
        for (pos, &tok) in context.iter().enumerate() {
            let row = &self.embedding[tok as usize * d..(tok as usize + 1) * d];
            for c in 0..d {
                let x = if mask.keep(pos, c) { row[c] } else { 0.0 };
                mean[c] += x;
                if pos + 1 == context.len() {
                    last[c] = x;
                }
            }
        }
        let n = context.len().max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);

        let logits: Vec<f64> = (0..self.vocab_size)
            .map(|v| {
                let wm = &self.w_mean[v * d..(v + 1) * d];
                let wl = &self.w_last[v * d..(v + 1) * d];
                let dot: f64 = (0..d).map(|c| wm[c] * mean[c] + wl[c] * last[c]).sum();
                self.bias[v] + dot
            })
            .collect();
        softmax(&logits)
    }

    fn check(&self, context: &[TokenId]) -> Result<()> {
        if context.is_empty() {
            return Err(Error::EmptyContext);
        }
        validate_tokens(context, self.vocab_size)
    }
}

impl ModelBackend for ToyLM {
    fn name(&self) -> &str {
        &self.name
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_token_distribution(&self, context: &[TokenId]) -> Result<VocabDistribution> {
        self.check(context)?;
        let mask = KeepMask::full(context.len(), self.dim);
        VocabDistribution::new(self.forward(context, &mask))
    }

    fn masked_distribution(
        &self,
        context: &[TokenId],
        retention: &[f64],
        seed: u64,
    ) -> Result<VocabDistribution> {
        self.check(context)?;
        validate_retention(retention, context.len())?;
        let mask = KeepMask::sample(retention, self.dim, seed);
        VocabDistribution::new(self.forward(context, &mask))
    }
}

/// A toy model whose prediction of one designated target token is decided
/// by the presence of one designated key token anywhere in the context.
///
/// With the key present the target gets exactly 0.9 of the mass; without it
/// the target gets 0.1 and four fallback tokens take 0.2 each, pushing the
/// target below the top four. The remaining 0.1 is spread over the other
/// tokens following a [`ToyLM`] on the same context, so non-key tokens move
/// the distribution without touching the target's probability.
///
/// The key token carries one extra embedding coordinate; it is "present"
/// only where that coordinate survives masking.
#[derive(Debug, Clone)]
pub struct PlantedDependencyLM {
    base: ToyLM,
    name: String,
    key: TokenId,
    target: TokenId,
    fallbacks: [TokenId; 4],
}

impl PlantedDependencyLM {
    pub const KEY_PRESENT_TARGET_PROB: f64 = 0.9;
    pub const KEY_ABSENT_TARGET_PROB: f64 = 0.1;
    const FALLBACK_PROB: f64 = 0.2;
    const BACKGROUND_MASS: f64 = 0.1;

    pub fn new(config: ToyConfig, key: TokenId, target: TokenId) -> Result<Self> {
        let vocab = config.vocab_size;
        if vocab < 7 {
            return Err(Error::Config(
                "planted-dependency model needs a vocabulary of at least 7 tokens".into(),
            ));
        }
        validate_tokens(&[key, target], vocab)?;
        if key == target {
            return Err(Error::Config("key and target tokens must differ".into()));
        }
        let mut fallbacks = [0; 4];
        let mut free = (0..vocab as TokenId).filter(|&t| t != key && t != target);
        for f in fallbacks.iter_mut() {
            *f = free.next().expect("vocabulary checked above");
        }
        let base = ToyLM::new(config)?;
        Ok(Self {
            name: format!("planted-k{key}-t{target}-{}", base.name),
            base,
            key,
            target,
            fallbacks,
        })
    }

    pub fn key_token(&self) -> TokenId {
        self.key
    }

    pub fn target_token(&self) -> TokenId {
        self.target
    }

    pub fn fallback_tokens(&self) -> [TokenId; 4] {
        self.fallbacks
    }

    /// Draws a context of `len` tokens holding the key exactly once, at
    /// `key_pos`, and never the target.
    pub fn sample_context(
        &self,
        len: usize,
        key_pos: usize,
        rng: &mut dyn RngCore,
    ) -> Vec<TokenId> {
        assert!(key_pos < len, "key position must lie inside the context");
        let pool: Vec<TokenId> = (0..self.base.vocab_size as TokenId)
            .filter(|&t| t != self.key && t != self.target)
            .collect();
        (0..len)
            .map(|i| {
                if i == key_pos {
                    self.key
                } else {
                    *pool.choose(rng).expect("pool is non-empty")
                }
            })
            .collect()
    }

    fn distribution(&self, context: &[TokenId], mask: &KeepMask) -> Result<VocabDistribution> {
        let key_coord = self.base.dim;
        let present = context
            .iter()
            .enumerate()
            .any(|(pos, &tok)| tok == self.key && mask.keep(pos, key_coord));

        let mut probs = self.base.forward(context, mask);
        probs[self.target as usize] = 0.0;
        for &f in &self.fallbacks {
            probs[f as usize] = 0.0;
        }
        let rest: f64 = probs.iter().sum();
        probs
            .iter_mut()
            .for_each(|p| *p *= Self::BACKGROUND_MASS / rest);

        if present {
            probs[self.target as usize] = Self::KEY_PRESENT_TARGET_PROB;
        } else {
            probs[self.target as usize] = Self::KEY_ABSENT_TARGET_PROB;
            for &f in &self.fallbacks {
                probs[f as usize] = Self::FALLBACK_PROB;
            }
        }
        VocabDistribution::new(probs)
    }
}

impl ModelBackend for PlantedDependencyLM {
    fn name(&self) -> &str {
        &self.name
    }

    fn vocab_size(&self) -> usize {
        self.base.vocab_size
    }

    fn next_token_distribution(&self, context: &[TokenId]) -> Result<VocabDistribution> {
        self.base.check(context)?;
        self.distribution(context, &KeepMask::full(context.len(), self.base.dim + 1))
    }

    fn masked_distribution(
        &self,
        context: &[TokenId],
        retention: &[f64],
        seed: u64,
    ) -> Result<VocabDistribution> {
        self.base.check(context)?;
        validate_retention(retention, context.len())?;
        let mask = KeepMask::sample(retention, self.base.dim + 1, seed);
        self.distribution(context, &mask)
    }
}

/// Returns the same distribution whatever the input.
#[derive(Debug, Clone)]
pub struct ConstantLM {
    probs: VocabDistribution,
}

impl ConstantLM {
    pub fn new(probs: VocabDistribution) -> Self {
        Self { probs }
    }

    /// `mass` on `token`, the rest spread uniformly.
    pub fn peaked(vocab_size: usize, token: TokenId, mass: f64) -> Result<Self> {
        validate_tokens(&[token], vocab_size)?;
        if vocab_size < 2 || !(0.0..=1.0).contains(&mass) {
            return Err(Error::Config("invalid peaked distribution".into()));
        }
        let rest = (1.0 - mass) / (vocab_size - 1) as f64;
        let mut probs = vec![rest; vocab_size];
        probs[token as usize] = mass;
        Ok(Self::new(VocabDistribution::new(probs)?))
    }
}

impl ModelBackend for ConstantLM {
    fn name(&self) -> &str {
        "constant"
    }

    fn vocab_size(&self) -> usize {
        self.probs.len()
    }

    fn next_token_distribution(&self, context: &[TokenId]) -> Result<VocabDistribution> {
        validate_tokens(context, self.vocab_size())?;
        Ok(self.probs.clone())
    }

    fn masked_distribution(
        &self,
        context: &[TokenId],
        retention: &[f64],
        _seed: u64,
    ) -> Result<VocabDistribution> {
        validate_tokens(context, self.vocab_size())?;
        validate_retention(retention, context.len())?;
        Ok(self.probs.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ToyLM {
        ToyLM::new(ToyConfig::default()).unwrap()
    }

    fn planted() -> PlantedDependencyLM {
        PlantedDependencyLM::new(ToyConfig::default(), 10, 20).unwrap()
    }

    #[test]
    fn toy_is_deterministic() {
        let a = toy().next_token_distribution(&[1, 2, 3]).unwrap();
        let b = toy().next_token_distribution(&[1, 2, 3]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
        assert!((a.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn different_seeds_give_different_models() {
        let other = ToyLM::new(ToyConfig {
            seed: 1,
            ..ToyConfig::default()
        })
        .unwrap();
        assert_ne!(
            toy().next_token_distribution(&[1, 2]).unwrap(),
            other.next_token_distribution(&[1, 2]).unwrap()
        );
    }

    #[test]
    fn full_retention_is_bit_identical() {
        let m = toy();
        let ctx = [5, 9, 13, 2];
        let full = m.next_token_distribution(&ctx).unwrap();
        let masked = m.masked_distribution(&ctx, &[1.0; 4], 99).unwrap();
        assert_eq!(full.probs(), masked.probs());
    }

    #[test]
    fn zero_retention_ignores_context() {
        let m = toy();
        let a = m.masked_distribution(&[1, 2, 3], &[0.0; 3], 1).unwrap();
        let b = m.masked_distribution(&[40, 41, 42], &[0.0; 3], 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, m.next_token_distribution(&[1, 2, 3]).unwrap());
    }

    #[test]
    fn masked_is_seed_deterministic() {
        let m = toy();
        let r = [0.5, 0.3, 0.9];
        assert_eq!(
            m.masked_distribution(&[1, 2, 3], &r, 4).unwrap(),
            m.masked_distribution(&[1, 2, 3], &r, 4).unwrap()
        );
    }

    #[test]
    fn toy_rejects_bad_inputs() {
        let m = toy();
        assert!(matches!(
            m.next_token_distribution(&[]),
            Err(Error::EmptyContext)
        ));
        assert!(matches!(
            m.next_token_distribution(&[64]),
            Err(Error::InvalidToken { token: 64, .. })
        ));
        assert!(m.masked_distribution(&[1, 2], &[0.5, 1.2], 0).is_err());
        assert!(m.masked_distribution(&[1, 2], &[0.5], 0).is_err());
    }

    #[test]
    fn planted_target_probabilities_are_closed_form() {
        let m = planted();
        let with_key = m.next_token_distribution(&[3, 10, 7, 8]).unwrap();
        assert!((with_key.prob(20) - 0.9).abs() < 1e-15);
        assert_eq!(with_key.rank_of(20), 0);

        let without = m.next_token_distribution(&[3, 11, 7, 8]).unwrap();
        assert!((without.prob(20) - 0.1).abs() < 1e-15);
        assert!(!without.in_top_k(20, 4));
        for f in m.fallback_tokens() {
            assert!((without.prob(f) - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn planted_key_zeroing_drops_target_by_point_eight() {
        let m = planted();
        let ctx = [3, 10, 7, 8];
        let full = m.next_token_distribution(&ctx).unwrap().prob(20);
        let occluded = m
            .masked_distribution(&ctx, &[1.0, 0.0, 1.0, 1.0], 0)
            .unwrap()
            .prob(20);
        assert!((full - occluded - 0.8).abs() < 1e-12);
        let other = m
            .masked_distribution(&ctx, &[1.0, 1.0, 0.0, 1.0], 0)
            .unwrap()
            .prob(20);
        assert_eq!(full, other);
    }

    #[test]
    fn planted_sample_context_places_key_once() {
        let m = planted();
        let mut rng = seeded_rng(3);
        let ctx = m.sample_context(12, 5, &mut rng);
        assert_eq!(ctx.len(), 12);
        assert_eq!(ctx.iter().filter(|&&t| t == 10).count(), 1);
        assert_eq!(ctx[5], 10);
        assert!(!ctx.contains(&20));
    }

    #[test]
    fn planted_rejects_bad_construction() {
        assert!(PlantedDependencyLM::new(ToyConfig::default(), 3, 3).is_err());
        assert!(PlantedDependencyLM::new(ToyConfig::default(), 3, 64).is_err());
        let small = ToyConfig {
            vocab_size: 6,
            ..ToyConfig::default()
        };
        assert!(PlantedDependencyLM::new(small, 0, 1).is_err());
    }

    #[test]
    fn constant_ignores_input() {
        let m = ConstantLM::peaked(8, 3, 0.6).unwrap();
        assert_eq!(
            m.next_token_distribution(&[1]).unwrap(),
            m.masked_distribution(&[1, 2], &[0.0, 0.0], 5).unwrap()
        );
    }
}
