//! Recursive attribution: the importance-update loop.
//!
//! For one target token the loop keeps a logit score per context position.
//! Each iteration replaces a random subset `R` of the context, measures the
//! drop `Δp` in the target's probability and adds
//! `logit((±Δp + 1) / 2)` to the logits (`+` inside `R`, `−` outside). The
//! importance distribution is the softmax of the accumulated logits. The
//! loop ends once replacing the least important positions still leaves the
//! target among the model's top-k predictions.

use rand::seq::index;
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::ModelBackend;
use crate::error::{Error, Result};
use crate::numeric::{centered_logit, derive_seed, seeded_rng, softmax};
use crate::proposer::{ReplacementProposal, ReplacementProposer};
use crate::sequence::{TokenId, TokenSequence};

/// Tolerance for the unit-sum invariant on importance scores.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReAGentConfig {
    /// Fraction of the context replaced per iteration.
    pub replace_ratio: f64,
    /// Fraction of least-important positions replaced by the stopping check.
    pub stop_replace_fraction: f64,
    /// Absolute number of positions for the stopping check; overrides the
    /// fraction when set.
    #[serde(default)]
    pub stop_replace_count: Option<usize>,
    /// The target must be within this many top predictions to stop.
    pub tolerance_k: usize,
    pub max_steps: usize,
    pub num_runs: usize,
    pub logit_clamp_epsilon: f64,
    pub seed: u64,
}

impl Default for ReAGentConfig {
    fn default() -> Self {
        Self {
            replace_ratio: 0.3,
            stop_replace_fraction: 0.7,
            stop_replace_count: None,
            tolerance_k: 3,
            max_steps: 1000,
            num_runs: 3,
            logit_clamp_epsilon: 1e-4,
            seed: 0,
        }
    }
}

impl ReAGentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.replace_ratio > 0.0 && self.replace_ratio <= 1.0) {
            return bad(format!(
                "replace ratio must be in (0, 1], got {}",
                self.replace_ratio
            ));
        }
        if !(self.stop_replace_fraction > 0.0 && self.stop_replace_fraction < 1.0) {
            return bad(format!(
                "stop replace fraction must be in (0, 1), got {}",
                self.stop_replace_fraction
            ));
        }
        if self.tolerance_k == 0 {
            return bad("tolerance k must be at least 1".into());
        }
        if self.max_steps == 0 {
            return bad("max steps must be at least 1".into());
        }
        if self.num_runs == 0 {
            return bad("number of runs must be at least 1".into());
        }
        if !(self.logit_clamp_epsilon > 0.0 && self.logit_clamp_epsilon < 0.5) {
            return bad(format!(
                "logit clamp epsilon must be in (0, 0.5), got {}",
                self.logit_clamp_epsilon
            ));
        }
        Ok(())
    }

    /// Positions replaced by the stopping check for a context of `len`.
    pub fn stop_replace_size(&self, len: usize) -> usize {
        match self.stop_replace_count {
            Some(n) => n.min(len),
            None => ((self.stop_replace_fraction * len as f64) + 1e-9).floor() as usize,
        }
    }
}

/// Importance over context positions: accumulated logits and their softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceState {
    pub logits: Vec<f64>,
    pub scores: Vec<f64>,
    pub step_count: usize,
    pub converged: bool,
}

impl ImportanceState {
    /// Logits drawn uniformly from [-1, 1].
    pub fn random(len: usize, rng: &mut dyn RngCore) -> Result<Self> {
        if len == 0 {
            return Err(Error::EmptyContext);
        }
        let logits: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        Ok(Self::from_logits(logits))
    }

    pub fn from_logits(logits: Vec<f64>) -> Self {
        let scores = softmax(&logits);
        Self {
            logits,
            scores,
            step_count: 0,
            converged: false,
        }
    }

    /// The distribution over a single position; nothing to rank.
    pub fn trivial() -> Self {
        Self {
            logits: vec![0.0],
            scores: vec![1.0],
            step_count: 0,
            converged: true,
        }
    }

    /// Builds a state from a probability vector (logits are `ln(score)`,
    /// floored at the smallest normal float).
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let logits = scores
            .iter()
            .map(|&s| s.max(f64::MIN_POSITIVE).ln())
            .collect();
        Self {
            logits,
            scores,
            step_count: 0,
            converged: false,
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn is_on_simplex(&self) -> bool {
        let sum: f64 = self.scores.iter().sum();
        self.scores.iter().all(|&s| s >= 0.0) && (sum - 1.0).abs() <= SIMPLEX_TOLERANCE
    }

    /// Applies one update for a measured `delta_p` with replaced set `set`.
    pub fn update(&mut self, delta_p: f64, set: &ReplacementSet, clamp_eps: f64) {
        let inc = logit_increments(delta_p, set, self.len(), clamp_eps);
        for (l, d) in self.logits.iter_mut().zip(inc) {
            *l += d;
        }
        self.scores = softmax(&self.logits);
        self.step_count += 1;
    }

    /// Positions ordered from least to most important; ties by lower index.
    pub fn ascending_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[a].total_cmp(&self.scores[b]).then(a.cmp(&b)));
        idx
    }

    /// The `n` most important positions; ties by lower index.
    pub fn top_positions(&self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        idx.truncate(n);
        idx
    }

    pub fn argmax(&self) -> usize {
        self.top_positions(1)[0]
    }
}

/// Random initial state for a context of `len` positions.
pub fn init_importance(len: usize, seed: u64) -> Result<ImportanceState> {
    ImportanceState::random(len, &mut seeded_rng(seed))
}

/// Per-position logit increments for one update: `logit((Δp+1)/2)` on `R`,
/// `logit((1−Δp)/2)` elsewhere, arguments clamped to `[eps, 1−eps]`.
pub fn logit_increments(
    delta_p: f64,
    set: &ReplacementSet,
    len: usize,
    clamp_eps: f64,
) -> Vec<f64> {
    let up = centered_logit(delta_p, clamp_eps);
    let down = centered_logit(-delta_p, clamp_eps);
    let mut inc = vec![down; len];
    for &p in &set.positions {
        inc[p] = up;
    }
    inc
}

/// Context positions chosen for replacement in one iteration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplacementSet {
    positions: Vec<usize>,
}

impl ReplacementSet {
    /// Size of a set drawn at `ratio` from `len` positions.
    pub fn size_for(len: usize, ratio: f64) -> usize {
        ((ratio * len as f64).round() as usize).clamp(1, len)
    }

    /// Uniform subset without replacement of `size_for(len, ratio)` positions.
    pub fn sample(len: usize, ratio: f64, rng: &mut dyn RngCore) -> Result<Self> {
        if len == 0 {
            return Err(Error::EmptyContext);
        }
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::Config(format!(
                "replace ratio must be in (0, 1], got {ratio}"
            )));
        }
        let mut positions = index::sample(rng, len, Self::size_for(len, ratio)).into_vec();
        positions.sort_unstable();
        Ok(Self { positions })
    }

    pub fn from_positions(mut positions: Vec<usize>, len: usize) -> Result<Self> {
        positions.sort_unstable();
        positions.dedup();
        if let Some(&p) = positions.iter().find(|&&p| p >= len) {
            return Err(Error::Validation(format!(
                "position {p} is outside a context of length {len}"
            )));
        }
        Ok(Self { positions })
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn contains(&self, pos: usize) -> bool {
        self.positions.binary_search(&pos).is_ok()
    }
}

/// Seeded draw of a replacement set.
pub fn select_replacement_set(len: usize, ratio: f64, seed: u64) -> Result<ReplacementSet> {
    ReplacementSet::sample(len, ratio, &mut seeded_rng(seed))
}

/// `p(target | context) − p(target | context with the proposal applied)`.
pub fn compute_predictive_delta(
    backend: &dyn ModelBackend,
    context: &[TokenId],
    target: TokenId,
    set: &ReplacementSet,
    proposal: &ReplacementProposal,
) -> Result<f64> {
    let original = backend.next_token_distribution(context)?.prob(target);
    predictive_delta_from(backend, original, context, target, set, proposal)
}

fn predictive_delta_from(
    backend: &dyn ModelBackend,
    original: f64,
    context: &[TokenId],
    target: TokenId,
    set: &ReplacementSet,
    proposal: &ReplacementProposal,
) -> Result<f64> {
    proposal.validate(set.positions(), context.len(), backend.vocab_size())?;
    if set.is_empty() {
        return Ok(0.0);
    }
    let replaced = backend
        .next_token_distribution(&proposal.apply(context))?
        .prob(target);
    Ok((original - replaced).clamp(-1.0, 1.0))
}

/// The stopping condition: replace the least important positions and check
/// whether the target is still among the top `tolerance_k` predictions.
pub fn check_stop(
    backend: &dyn ModelBackend,
    proposer: &dyn ReplacementProposer,
    context: &[TokenId],
    target: TokenId,
    state: &ImportanceState,
    config: &ReAGentConfig,
    rng: &mut dyn RngCore,
) -> Result<bool> {
    if state.len() != context.len() {
        return Err(Error::LengthMismatch {
            expected: context.len(),
            actual: state.len(),
        });
    }
    let n = config.stop_replace_size(context.len());
    let mut least: Vec<usize> = state.ascending_order().into_iter().take(n).collect();
    least.sort_unstable();
    let probe = if least.is_empty() {
        context.to_vec()
    } else {
        let proposal = proposer.propose(context, &least, rng)?;
        proposal.validate(&least, context.len(), backend.vocab_size())?;
        proposal.apply(context)
    };
    Ok(backend
        .next_token_distribution(&probe)?
        .in_top_k(target, config.tolerance_k))
}

/// Outcome of one run, kept for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub converged: bool,
    pub step_count: usize,
}

/// Averaged importance for one target position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetAttribution {
    pub target_pos: usize,
    pub target_token: TokenId,
    pub state: ImportanceState,
    pub runs: Vec<RunSummary>,
}

/// Mean of the converged runs' scores (all runs if none converged),
/// renormalised to sum to one. `step_count` is the total over the runs
/// that were averaged.
pub fn average_runs(states: &[ImportanceState]) -> Result<ImportanceState> {
    let first = states
        .first()
        .ok_or_else(|| Error::Validation("no runs to average".into()))?;
    if let Some(s) = states.iter().find(|s| s.len() != first.len()) {
        return Err(Error::LengthMismatch {
            expected: first.len(),
            actual: s.len(),
        });
    }
    let converged: Vec<&ImportanceState> = states.iter().filter(|s| s.converged).collect();
    let any_converged = !converged.is_empty();
    let pool: Vec<&ImportanceState> = if any_converged {
        converged
    } else {
        states.iter().collect()
    };
    let n = pool.len() as f64;
    let mut mean = vec![0.0; first.len()];
    for s in &pool {
        for (m, v) in mean.iter_mut().zip(&s.scores) {
            *m += v / n;
        }
    }
    let total: f64 = mean.iter().sum();
    mean.iter_mut().for_each(|m| *m /= total);
    let mut out = ImportanceState::from_scores(mean);
    out.converged = any_converged;
    out.step_count = pool.iter().map(|s| s.step_count).sum();
    Ok(out)
}

/// Runs the attribution loop against a backend with a replacement proposer.
pub struct Attributor<'a> {
    backend: &'a dyn ModelBackend,
    proposer: &'a dyn ReplacementProposer,
    config: ReAGentConfig,
}

impl<'a> Attributor<'a> {
    pub fn new(
        backend: &'a dyn ModelBackend,
        proposer: &'a dyn ReplacementProposer,
        config: ReAGentConfig,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            backend,
            proposer,
            config,
        })
    }

    pub fn config(&self) -> &ReAGentConfig {
        &self.config
    }

    /// Seed of the generator stream owned by one run at one position.
    pub fn run_seed(&self, target_pos: usize, run_index: usize) -> u64 {
        derive_seed(self.config.seed, &[target_pos as u64, run_index as u64])
    }

    fn check_vocab(&self, seq: &TokenSequence) -> Result<()> {
        if seq.vocab_size() != self.backend.vocab_size() {
            return Err(Error::VocabularyMismatch {
                expected: self.backend.vocab_size(),
                actual: seq.vocab_size(),
            });
        }
        Ok(())
    }

    /// One run of the loop for the token at `target_pos`.
    pub fn attribute_position(
        &self,
        seq: &TokenSequence,
        target_pos: usize,
        run_index: usize,
    ) -> Result<ImportanceState> {
        self.check_vocab(seq)?;
        let context = seq.context(target_pos)?;
        let target = seq.target(target_pos)?;
        if context.len() == 1 {
            return Ok(ImportanceState::trivial());
        }

        let cfg = &self.config;
        let mut rng = seeded_rng(self.run_seed(target_pos, run_index));
        let mut state = ImportanceState::random(context.len(), &mut rng)?;
        let original = self.backend.next_token_distribution(context)?.prob(target);

        while state.step_count < cfg.max_steps {
            if check_stop(
                self.backend,
                self.proposer,
                context,
                target,
                &state,
                cfg,
                &mut rng,
            )? {
                state.converged = true;
                return Ok(state);
            }
            let set = ReplacementSet::sample(context.len(), cfg.replace_ratio, &mut rng)?;
            let proposal = self.proposer.propose(context, set.positions(), &mut rng)?;
            let delta_p =
                predictive_delta_from(self.backend, original, context, target, &set, &proposal)?;
            state.update(delta_p, &set, cfg.logit_clamp_epsilon);
        }
        log::debug!(
            "target position {target_pos}, run {run_index}: no stop after {} steps",
            cfg.max_steps
        );
        Ok(state)
    }

    /// `num_runs` independent runs, averaged.
    pub fn attribute_target(
        &self,
        seq: &TokenSequence,
        target_pos: usize,
    ) -> Result<TargetAttribution> {
        let states = (0..self.config.num_runs)
            .map(|run| self.attribute_position(seq, target_pos, run))
            .collect::<Result<Vec<_>>>()?;
        let runs = states
            .iter()
            .map(|s| RunSummary {
                converged: s.converged,
                step_count: s.step_count,
            })
            .collect();
        Ok(TargetAttribution {
            target_pos,
            target_token: seq.target(target_pos)?,
            state: average_runs(&states)?,
            runs,
        })
    }

    /// Attributions at target positions `1, 1 + stride, 1 + 2·stride, ...`.
    pub fn attribute_sequence(
        &self,
        seq: &TokenSequence,
        stride: usize,
    ) -> Result<Vec<TargetAttribution>> {
        let positions = target_positions(seq.len(), stride)?;
        self.attribute_positions(seq, &positions)
    }

    /// Attributions at the given target positions, computed in parallel.
    pub fn attribute_positions(
        &self,
        seq: &TokenSequence,
        positions: &[usize],
    ) -> Result<Vec<TargetAttribution>> {
        positions
            .par_iter()
            .map(|&pos| self.attribute_target(seq, pos))
            .collect()
    }
}

/// Target positions evaluated for a sequence of `len` tokens at `stride`.
pub fn target_positions(len: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }
    if len < 2 {
        return Err(Error::Validation(
            "sequence needs at least two tokens".into(),
        ));
    }
    Ok((1..len).step_by(stride).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ConstantLM, PlantedDependencyLM, ToyConfig, ToyLM};
    use crate::proposer::{RandomVocabProposer, Strategy};
    use std::collections::BTreeMap;

    const LN_1_5: f64 = 0.405_465_108_108_164_4; // ln(0.6 / 0.4)

    #[test]
    fn init_is_seeded_and_on_simplex() {
        assert_eq!(
            init_importance(3, 11).unwrap(),
            init_importance(3, 11).unwrap()
        );
        assert_eq!(init_importance(1, 5).unwrap().scores, vec![1.0]);
        let s = init_importance(4, 7).unwrap();
        assert!(s.scores.iter().all(|&v| v > 0.0));
        assert!(s.is_on_simplex());
        assert!(s.logits.iter().all(|l| (-1.0..=1.0).contains(l)));
        assert_eq!(s.step_count, 0);
        assert!(!s.converged);
        assert!(matches!(init_importance(0, 1), Err(Error::EmptyContext)));
    }

    #[test]
    fn replacement_set_sizes() {
        let s = select_replacement_set(10, 0.3, 1).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.positions().iter().all(|&p| p < 10));
        assert_eq!(select_replacement_set(2, 0.3, 1).unwrap().len(), 1);
        assert_eq!(
            select_replacement_set(5, 1.0, 1).unwrap().positions(),
            &[0, 1, 2, 3, 4]
        );
        assert!(matches!(
            select_replacement_set(5, 0.0, 1),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            select_replacement_set(5, 1.5, 1),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            select_replacement_set(0, 0.5, 1),
            Err(Error::EmptyContext)
        ));
    }

    #[test]
    fn replacement_sets_are_fresh_per_draw() {
        let mut rng = seeded_rng(4);
        let draws: Vec<_> = (0..10)
            .map(|_| ReplacementSet::sample(20, 0.3, &mut rng).unwrap())
            .collect();
        assert!(draws.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn neutral_update_changes_nothing() {
        let mut s = init_importance(4, 3).unwrap();
        let before = s.clone();
        let set = ReplacementSet::from_positions(vec![1, 2], 4).unwrap();
        s.update(0.0, &set, 1e-4);
        assert_eq!(s.logits, before.logits);
        assert_eq!(s.scores, before.scores);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn update_increment_for_delta_point_two() {
        let set = ReplacementSet::from_positions(vec![0, 2], 4).unwrap();
        let inc = logit_increments(0.2, &set, 4, 1e-4);
        let expected = [LN_1_5, -LN_1_5, LN_1_5, -LN_1_5];
        for (a, b) in inc.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn update_increment_is_clamped_at_one() {
        let set = ReplacementSet::from_positions(vec![0], 2).unwrap();
        let inc = logit_increments(1.0, &set, 2, 1e-4);
        assert!((inc[0] - 9.210_240_366_975_85).abs() < 1e-9);
        assert!(inc.iter().all(|v| v.is_finite()));
        assert_eq!(inc[1], -inc[0]);
    }

    #[test]
    fn stop_size_floors() {
        let cfg = ReAGentConfig::default();
        assert_eq!(cfg.stop_replace_size(10), 7);
        assert_eq!(cfg.stop_replace_size(8), 5);
        assert_eq!(cfg.stop_replace_size(1), 0);
        let cfg = ReAGentConfig {
            stop_replace_count: Some(5),
            ..cfg
        };
        assert_eq!(cfg.stop_replace_size(10), 5);
        assert_eq!(cfg.stop_replace_size(3), 3);
    }

    #[test]
    fn config_validation() {
        let ok = ReAGentConfig::default();
        assert!(ok.validate().is_ok());
        for cfg in [
            ReAGentConfig {
                replace_ratio: 0.0,
                ..ok.clone()
            },
            ReAGentConfig {
                replace_ratio: 1.01,
                ..ok.clone()
            },
            ReAGentConfig {
                stop_replace_fraction: 1.0,
                ..ok.clone()
            },
            ReAGentConfig {
                stop_replace_fraction: 0.0,
                ..ok.clone()
            },
            ReAGentConfig {
                tolerance_k: 0,
                ..ok.clone()
            },
            ReAGentConfig {
                max_steps: 0,
                ..ok.clone()
            },
            ReAGentConfig {
                num_runs: 0,
                ..ok.clone()
            },
            ReAGentConfig {
                logit_clamp_epsilon: 0.5,
                ..ok.clone()
            },
            ReAGentConfig {
                replace_ratio: f64::NAN,
                ..ok.clone()
            },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn delta_is_zero_for_empty_proposal() {
        let m = ToyLM::new(ToyConfig::default()).unwrap();
        let set = ReplacementSet::from_positions(vec![], 3).unwrap();
        let proposal = ReplacementProposal {
            substitutions: BTreeMap::new(),
            strategy: Strategy::RandomVocab,
            degenerate: false,
        };
        assert_eq!(
            compute_predictive_delta(&m, &[1, 2, 3], 4, &set, &proposal).unwrap(),
            0.0
        );
    }

    #[test]
    fn delta_on_planted_key() {
        let m = PlantedDependencyLM::new(ToyConfig::default(), 10, 20).unwrap();
        let set = ReplacementSet::from_positions(vec![1], 3).unwrap();
        let proposal = ReplacementProposal {
            substitutions: [(1, 11)].into_iter().collect(),
            strategy: Strategy::RandomVocab,
            degenerate: false,
        };
        let d = compute_predictive_delta(&m, &[3, 10, 5], 20, &set, &proposal).unwrap();
        assert!((d - 0.8).abs() < 1e-12);
    }

    #[test]
    fn delta_rejects_incomplete_proposal() {
        let m = ToyLM::new(ToyConfig::default()).unwrap();
        let set = ReplacementSet::from_positions(vec![0, 1], 3).unwrap();
        let proposal = ReplacementProposal {
            substitutions: [(0, 9)].into_iter().collect(),
            strategy: Strategy::RandomVocab,
            degenerate: false,
        };
        assert!(matches!(
            compute_predictive_delta(&m, &[1, 2, 3], 4, &set, &proposal),
            Err(Error::MalformedProposal { position: 1, .. })
        ));
    }

    #[test]
    fn stop_when_target_always_first() {
        let m = ConstantLM::peaked(16, 5, 0.9).unwrap();
        let p = RandomVocabProposer::new(16);
        let state = init_importance(6, 0).unwrap();
        let cfg = ReAGentConfig::default();
        let mut rng = seeded_rng(0);
        assert!(check_stop(&m, &p, &[1, 2, 3, 4, 6, 7], 5, &state, &cfg, &mut rng).unwrap());
    }

    #[test]
    fn unreachable_target_runs_to_max_steps() {
        let m = ConstantLM::peaked(16, 5, 0.9).unwrap();
        let p = RandomVocabProposer::new(16);
        let cfg = ReAGentConfig {
            max_steps: 25,
            ..ReAGentConfig::default()
        };
        let seq = TokenSequence::new(vec![1, 2, 3, 4, 9], 16).unwrap();
        let a = Attributor::new(&m, &p, cfg).unwrap();
        let s = a.attribute_position(&seq, 4, 0).unwrap();
        assert!(!s.converged);
        assert_eq!(s.step_count, 25);
        assert!(s.is_on_simplex());
    }

    #[test]
    fn stop_check_replaces_the_lowest_positions() {
        // Records the positions handed to the proposer.
        struct Recorder(std::sync::Mutex<Vec<usize>>);
        impl ReplacementProposer for Recorder {
            fn strategy(&self) -> Strategy {
                Strategy::RandomVocab
            }
            fn propose(
                &self,
                _: &[TokenId],
                positions: &[usize],
                _: &mut dyn RngCore,
            ) -> Result<ReplacementProposal> {
                *self.0.lock().unwrap() = positions.to_vec();
                Ok(ReplacementProposal {
                    substitutions: positions.iter().map(|&p| (p, 0)).collect(),
                    strategy: Strategy::RandomVocab,
                    degenerate: false,
                })
            }
        }
        let m = ConstantLM::peaked(16, 5, 0.9).unwrap();
        let rec = Recorder(Default::default());
        // Scores increase with position; ties at the front broken by index.
        let state =
            ImportanceState::from_logits(vec![0.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let ctx: Vec<TokenId> = (1..=10).collect();
        let mut rng = seeded_rng(0);
        check_stop(
            &m,
            &rec,
            &ctx,
            5,
            &state,
            &ReAGentConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(*rec.0.lock().unwrap(), vec![0, 1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn single_token_context_is_trivial() {
        let m = ToyLM::new(ToyConfig::default()).unwrap();
        let p = RandomVocabProposer::new(64);
        let seq = TokenSequence::new(vec![3, 4], 64).unwrap();
        let a = Attributor::new(&m, &p, ReAGentConfig::default()).unwrap();
        let s = a.attribute_position(&seq, 1, 0).unwrap();
        assert_eq!(s.scores, vec![1.0]);
        assert!(s.converged);
    }

    #[test]
    fn vocabulary_must_match() {
        let m = ToyLM::new(ToyConfig::default()).unwrap();
        let p = RandomVocabProposer::new(64);
        let seq = TokenSequence::new(vec![3, 4, 5], 32).unwrap();
        let a = Attributor::new(&m, &p, ReAGentConfig::default()).unwrap();
        assert!(matches!(
            a.attribute_position(&seq, 2, 0),
            Err(Error::VocabularyMismatch { .. })
        ));
    }

    #[test]
    fn averaging() {
        let mk = |scores: Vec<f64>, converged| ImportanceState {
            converged,
            ..ImportanceState::from_scores(scores)
        };
        let same = vec![mk(vec![0.2, 0.8], true); 3];
        assert_eq!(average_runs(&same).unwrap().scores, vec![0.2, 0.8]);

        let avg = average_runs(&[mk(vec![1.0, 0.0], true), mk(vec![0.0, 1.0], true)]).unwrap();
        assert_eq!(avg.scores, vec![0.5, 0.5]);

        let avg = average_runs(&[
            mk(vec![0.6, 0.4], true),
            mk(vec![0.2, 0.8], true),
            mk(vec![1.0, 0.0], false),
        ])
        .unwrap();
        assert!((avg.scores[0] - 0.4).abs() < 1e-15);
        assert!(avg.converged);

        let avg = average_runs(&[mk(vec![0.6, 0.4], false), mk(vec![0.2, 0.8], false)]).unwrap();
        assert!((avg.scores[0] - 0.4).abs() < 1e-15);
        assert!(!avg.converged);

        assert!(average_runs(&[]).is_err());
        assert!(average_runs(&[mk(vec![1.0], true), mk(vec![0.5, 0.5], true)]).is_err());
    }

    #[test]
    fn target_position_progression() {
        assert_eq!(target_positions(12, 5).unwrap(), vec![1, 6, 11]);
        assert_eq!(target_positions(3, 1).unwrap(), vec![1, 2]);
        assert!(target_positions(3, 0).is_err());
    }

    #[test]
    fn rankings_break_ties_by_index() {
        let s = ImportanceState::from_scores(vec![0.25, 0.25, 0.5]);
        assert_eq!(s.ascending_order(), vec![0, 1, 2]);
        assert_eq!(s.top_positions(2), vec![2, 0]);
        assert_eq!(s.argmax(), 2);
    }
}
