//! Replacement proposers: where substitute tokens for the selected context
//! positions come from.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{seeded_rng, softmax};
use crate::sequence::{validate_tokens, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    MaskedLm,
    RandomVocab,
    PosMatched,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::MaskedLm => "masked-lm",
            Strategy::RandomVocab => "random-vocab",
            Strategy::PosMatched => "pos-matched",
        })
    }
}

/// Substitute tokens for a set of context positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplacementProposal {
    pub substitutions: BTreeMap<usize, TokenId>,
    pub strategy: Strategy,
    /// Set when at least one position had no alternative and kept its
    /// original token.
    pub degenerate: bool,
}

impl ReplacementProposal {
    /// Checks that the proposal covers exactly `positions` within a context
    /// of `context_len` tokens with in-vocabulary ids.
    pub fn validate(
        &self,
        positions: &[usize],
        context_len: usize,
        vocab_size: usize,
    ) -> Result<()> {
        for &p in positions {
            if !self.substitutions.contains_key(&p) {
                return Err(Error::MalformedProposal {
                    position: p,
                    reason: "has no substitute",
                });
            }
        }
        for (&p, &tok) in &self.substitutions {
            if p >= context_len {
                return Err(Error::MalformedProposal {
                    position: p,
                    reason: "lies outside the context",
                });
            }
            if !positions.contains(&p) {
                return Err(Error::MalformedProposal {
                    position: p,
                    reason: "was not selected for replacement",
                });
            }
            validate_tokens(&[tok], vocab_size)?;
        }
        Ok(())
    }

    /// The context with every substitution applied.
    pub fn apply(&self, context: &[TokenId]) -> Vec<TokenId> {
        let mut out = context.to_vec();
        for (&p, &tok) in &self.substitutions {
            out[p] = tok;
        }
        out
    }
}

pub trait ReplacementProposer: Send + Sync {
    fn strategy(&self) -> Strategy;

    /// Proposes substitutes for `positions` (distinct, within `context`).
    fn propose(
        &self,
        context: &[TokenId],
        positions: &[usize],
        rng: &mut dyn RngCore,
    ) -> Result<ReplacementProposal>;
}

/// A masked language model: predicts tokens for several masked positions
/// at once, in the explained model's vocabulary.
pub trait FillModel: Send + Sync {
    /// Top-1 fill for each position, all positions masked simultaneously.
    fn fill(&self, context: &[TokenId], positions: &[usize]) -> Result<BTreeMap<usize, TokenId>>;

    /// Per-position fill scores (unnormalised log-probabilities over the
    /// vocabulary), for sources that expose them.
    fn fill_scores(
        &self,
        _context: &[TokenId],
        _positions: &[usize],
    ) -> Option<Result<Vec<Vec<f64>>>> {
        None
    }
}

impl<F: FillModel + ?Sized> FillModel for Arc<F> {
    fn fill(&self, context: &[TokenId], positions: &[usize]) -> Result<BTreeMap<usize, TokenId>> {
        (**self).fill(context, positions)
    }

    fn fill_scores(
        &self,
        context: &[TokenId],
        positions: &[usize],
    ) -> Option<Result<Vec<Vec<f64>>>> {
        (**self).fill_scores(context, positions)
    }
}

/// Seeded lookup-table stand-in for a masked LM. A masked position is
/// scored from its nearest unmasked neighbours on each side (or a boundary
/// marker); the original token is never proposed.
#[derive(Debug, Clone)]
pub struct ToyFillModel {
    vocab_size: usize,
    left: Vec<f64>,
    right: Vec<f64>,
}

impl ToyFillModel {
    pub fn new(vocab_size: usize, seed: u64) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::Config("fill model needs at least two tokens".into()));
        }
        let mut rng = seeded_rng(seed);
        let n = (vocab_size + 1) * vocab_size;
        let left = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let right = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        Ok(Self {
            vocab_size,
            left,
            right,
        })
    }

    fn scores_for(&self, context: &[TokenId], masked: &[bool], pos: usize) -> Vec<f64> {
        let v = self.vocab_size;
        let boundary = v;
        let left = (0..pos)
            .rev()
            .find(|&i| !masked[i])
            .map_or(boundary, |i| context[i] as usize);
        let right = (pos + 1..context.len())
            .find(|&i| !masked[i])
            .map_or(boundary, |i| context[i] as usize);
        let mut scores: Vec<f64> = (0..v)
            .map(|t| self.left[left * v + t] + self.right[right * v + t])
            .collect();
        scores[context[pos] as usize] = f64::NEG_INFINITY;
        scores
    }

    fn check(&self, context: &[TokenId], positions: &[usize]) -> Result<Vec<bool>> {
        validate_tokens(context, self.vocab_size)?;
        let mut masked = vec![false; context.len()];
        for &p in positions {
            if p >= context.len() {
                return Err(Error::Validation(format!(
                    "mask position {p} is outside a context of length {}",
                    context.len()
                )));
            }
            masked[p] = true;
        }
        Ok(masked)
    }
}

impl FillModel for ToyFillModel {
    fn fill(&self, context: &[TokenId], positions: &[usize]) -> Result<BTreeMap<usize, TokenId>> {
        let masked = self.check(context, positions)?;
        Ok(positions
            .iter()
            .map(|&p| {
                let scores = self.scores_for(context, &masked, p);
                (p, argmax(&scores) as TokenId)
            })
            .collect())
    }

    fn fill_scores(
        &self,
        context: &[TokenId],
        positions: &[usize],
    ) -> Option<Result<Vec<Vec<f64>>>> {
        Some(self.check(context, positions).map(|masked| {
            positions
                .iter()
                .map(|&p| self.scores_for(context, &masked, p))
                .collect()
        }))
    }
}

// First index of the maximum.
fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| {
            if x > best.1 {
                (i, x)
            } else {
                best
            }
        })
        .0
}

/// Replaces positions with masked-LM predictions: top-1 by default, or
/// sampled from the fill scores at `temperature`.
pub struct MaskedLmProposer {
    fill: Arc<dyn FillModel>,
    vocab_size: usize,
    temperature: Option<f64>,
}

impl MaskedLmProposer {
    pub fn new(fill: Arc<dyn FillModel>, vocab_size: usize) -> Self {
        Self {
            fill,
            vocab_size,
            temperature: None,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        self.temperature = Some(temperature);
        Ok(self)
    }
}

impl ReplacementProposer for MaskedLmProposer {
    fn strategy(&self) -> Strategy {
        Strategy::MaskedLm
    }

    fn propose(
        &self,
        context: &[TokenId],
        positions: &[usize],
        rng: &mut dyn RngCore,
    ) -> Result<ReplacementProposal> {
        if positions.is_empty() {
            return Ok(ReplacementProposal {
                substitutions: BTreeMap::new(),
                strategy: Strategy::MaskedLm,
                degenerate: false,
            });
        }
        let substitutions = match self.temperature {
            None => self.fill.fill(context, positions)?,
            Some(t) => {
                let scores = self.fill.fill_scores(context, positions).ok_or_else(|| {
                    Error::StrategyUnavailable(
                        "fill source does not expose scores for sampling".into(),
                    )
                })??;
                positions
                    .iter()
                    .zip(scores)
                    .map(|(&p, s)| {
                        let scaled: Vec<f64> = s.iter().map(|x| x / t).collect();
                        (p, sample_categorical(&softmax(&scaled), rng) as TokenId)
                    })
                    .collect()
            }
        };
        let proposal = ReplacementProposal {
            substitutions,
            strategy: Strategy::MaskedLm,
            degenerate: false,
        };
        proposal.validate(positions, context.len(), self.vocab_size)?;
        Ok(proposal)
    }
}

fn sample_categorical(probs: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Uniform draws from the whole vocabulary.
#[derive(Debug, Clone)]
pub struct RandomVocabProposer {
    vocab_size: usize,
}

impl RandomVocabProposer {
    pub fn new(vocab_size: usize) -> Self {
        Self { vocab_size }
    }
}

impl ReplacementProposer for RandomVocabProposer {
    fn strategy(&self) -> Strategy {
        Strategy::RandomVocab
    }

    fn propose(
        &self,
        context: &[TokenId],
        positions: &[usize],
        rng: &mut dyn RngCore,
    ) -> Result<ReplacementProposal> {
        let substitutions = positions
            .iter()
            .map(|&p| (p, rng.gen_range(0..self.vocab_size) as TokenId))
            .collect();
        let proposal = ReplacementProposal {
            substitutions,
            strategy: Strategy::RandomVocab,
            degenerate: false,
        };
        proposal.validate(positions, context.len(), self.vocab_size)?;
        Ok(proposal)
    }
}

/// Part-of-speech tag for every vocabulary id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PosTagTable {
    names: Vec<String>,
    tag_of: Vec<usize>,
    members: Vec<Vec<TokenId>>,
}

impl PosTagTable {
    const TOY_TAGS: [&'static str; 8] =
        ["NOUN", "VERB", "ADJ", "ADV", "DET", "PRON", "ADP", "PUNCT"];

    pub fn from_tags(tags: Vec<String>) -> Result<Self> {
        if tags.is_empty() {
            return Err(Error::Validation("empty part-of-speech table".into()));
        }
        let mut names: Vec<String> = Vec::new();
        let mut tag_of = Vec::with_capacity(tags.len());
        let mut members: Vec<Vec<TokenId>> = Vec::new();
        for (tok, tag) in tags.iter().enumerate() {
            let idx = match names.iter().position(|n| n == tag) {
                Some(i) => i,
                None => {
                    names.push(tag.clone());
                    members.push(Vec::new());
                    names.len() - 1
                }
            };
            tag_of.push(idx);
            members[idx].push(tok as TokenId);
        }
        Ok(Self {
            names,
            tag_of,
            members,
        })
    }

    /// Seeded random tagging over a small universal tag set.
    pub fn toy(vocab_size: usize, seed: u64) -> Result<Self> {
        let mut rng = seeded_rng(seed);
        let tags = (0..vocab_size)
            .map(|_| {
                Self::TOY_TAGS
                    .choose(&mut rng)
                    .expect("non-empty")
                    .to_string()
            })
            .collect();
        Self::from_tags(tags)
    }

    pub fn vocab_size(&self) -> usize {
        self.tag_of.len()
    }

    pub fn tag(&self, token: TokenId) -> &str {
        &self.names[self.tag_of[token as usize]]
    }

    /// Tokens sharing `token`'s tag, including `token` itself.
    pub fn class_of(&self, token: TokenId) -> &[TokenId] {
        &self.members[self.tag_of[token as usize]]
    }

    /// One tag name per vocabulary id.
    pub fn tag_names(&self) -> Vec<String> {
        self.tag_of.iter().map(|&i| self.names[i].clone()).collect()
    }
}

/// Uniform draws among tokens sharing the original token's tag. The
/// original is excluded unless it is alone in its class, in which case it
/// is kept and the proposal is marked degenerate.
#[derive(Debug, Clone)]
pub struct PosMatchedProposer {
    tags: Arc<PosTagTable>,
}

impl PosMatchedProposer {
    pub fn new(tags: Arc<PosTagTable>) -> Self {
        Self { tags }
    }
}

impl ReplacementProposer for PosMatchedProposer {
    fn strategy(&self) -> Strategy {
        Strategy::PosMatched
    }

    fn propose(
        &self,
        context: &[TokenId],
        positions: &[usize],
        rng: &mut dyn RngCore,
    ) -> Result<ReplacementProposal> {
        let vocab = self.tags.vocab_size();
        validate_tokens(context, vocab)?;
        let mut degenerate = false;
        let mut substitutions = BTreeMap::new();
        for &p in positions {
            let original = *context.get(p).ok_or(Error::MalformedProposal {
                position: p,
                reason: "lies outside the context",
            })?;
            let class = self.tags.class_of(original);
            let replacement = if class.len() == 1 {
                degenerate = true;
                original
            } else {
                // Draw from the class with the original removed.
                let i = rng.gen_range(0..class.len() - 1);
                let own = class
                    .iter()
                    .position(|&t| t == original)
                    .expect("token is in its class");
                class[if i >= own { i + 1 } else { i }]
            };
            substitutions.insert(p, replacement);
        }
        let proposal = ReplacementProposal {
            substitutions,
            strategy: Strategy::PosMatched,
            degenerate,
        };
        proposal.validate(positions, context.len(), vocab)?;
        Ok(proposal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_vocab_covers_exactly_the_positions() {
        let p = RandomVocabProposer::new(16);
        let mut rng = seeded_rng(1);
        let prop = p.propose(&[1, 2, 3, 4, 5], &[1, 3], &mut rng).unwrap();
        assert_eq!(
            prop.substitutions.keys().copied().collect::<Vec<_>>(),
            vec![1, 3]
        );
        assert!(prop.substitutions.values().all(|&t| t < 16));
        assert_eq!(prop.strategy, Strategy::RandomVocab);
    }

    #[test]
    fn pos_matched_singleton_class_is_degenerate() {
        let tags = PosTagTable::from_tags(
            ["NOUN", "NOUN", "PUNCT", "NOUN", "VERB", "VERB"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        )
        .unwrap();
        assert_eq!(tags.class_of(2), &[2]);
        let p = PosMatchedProposer::new(Arc::new(tags));
        let mut rng = seeded_rng(0);
        let prop = p.propose(&[0, 2, 4], &[1], &mut rng).unwrap();
        assert_eq!(prop.substitutions[&1], 2);
        assert!(prop.degenerate);

        for seed in 0..20 {
            let mut rng = seeded_rng(seed);
            let prop = p.propose(&[0, 2, 4], &[0, 2], &mut rng).unwrap();
            assert!(!prop.degenerate);
            assert!([1, 3].contains(&prop.substitutions[&0]));
            assert_eq!(prop.substitutions[&2], 5);
        }
    }

    #[test]
    fn toy_fill_is_deterministic_and_never_echoes() {
        let fill = ToyFillModel::new(32, 5).unwrap();
        let ctx = [3, 7, 11, 2, 9];
        let a = fill.fill(&ctx, &[1, 2]).unwrap();
        let b = ToyFillModel::new(32, 5)
            .unwrap()
            .fill(&ctx, &[1, 2])
            .unwrap();
        assert_eq!(a, b);
        assert_ne!(a[&1], 7);
        assert_ne!(a[&2], 11);
    }

    #[test]
    fn toy_fill_masks_positions_jointly() {
        let fill = ToyFillModel::new(32, 5).unwrap();
        let ctx = [3, 7, 11, 2, 9];
        // Position 2 sees 3 on its left when 1 is masked too, and 7 otherwise.
        let joint = fill.fill_scores(&ctx, &[1, 2]).unwrap().unwrap();
        let single = fill.fill_scores(&ctx, &[2]).unwrap().unwrap();
        assert_ne!(joint[1], single[0]);
    }

    #[test]
    fn masked_lm_sampling_needs_scores() {
        struct TopOnly;
        impl FillModel for TopOnly {
            fn fill(&self, _: &[TokenId], positions: &[usize]) -> Result<BTreeMap<usize, TokenId>> {
                Ok(positions.iter().map(|&p| (p, 0)).collect())
            }
        }
        let p = MaskedLmProposer::new(Arc::new(TopOnly), 4)
            .with_temperature(1.0)
            .unwrap();
        let mut rng = seeded_rng(0);
        assert!(matches!(
            p.propose(&[1, 2], &[0], &mut rng),
            Err(Error::StrategyUnavailable(_))
        ));
    }

    #[test]
    fn masked_lm_sampling_is_seeded() {
        let fill = Arc::new(ToyFillModel::new(32, 1).unwrap());
        let p = MaskedLmProposer::new(fill, 32)
            .with_temperature(2.0)
            .unwrap();
        let ctx = [1, 2, 3, 4];
        let a = p.propose(&ctx, &[0, 2], &mut seeded_rng(9)).unwrap();
        let b = p.propose(&ctx, &[0, 2], &mut seeded_rng(9)).unwrap();
        assert_eq!(a, b);
        assert!(
            MaskedLmProposer::new(Arc::new(ToyFillModel::new(4, 0).unwrap()), 4)
                .with_temperature(0.0)
                .is_err()
        );
    }

    #[test]
    fn proposal_validation_catches_gaps() {
        let prop = ReplacementProposal {
            substitutions: [(0, 1)].into_iter().collect(),
            strategy: Strategy::RandomVocab,
            degenerate: false,
        };
        assert!(matches!(
            prop.validate(&[0, 1], 3, 8),
            Err(Error::MalformedProposal { position: 1, .. })
        ));
        assert!(prop.validate(&[0], 3, 8).is_ok());
        assert!(prop.validate(&[0], 3, 1).is_err());
        assert_eq!(prop.apply(&[5, 5, 5]), vec![1, 5, 5]);
    }

    #[test]
    fn toy_tags_cover_vocab() {
        let t = PosTagTable::toy(64, 3).unwrap();
        assert_eq!(t.vocab_size(), 64);
        assert_eq!(t.tag_names().len(), 64);
        for tok in 0..64 {
            assert!(t.class_of(tok).contains(&tok));
        }
    }
}
