//! Faithfulness metrics for importance distributions over a generative
//! model's context.
//!
//! Changes in the model's prediction are measured as the Hellinger distance
//! between full-vocabulary next-token distributions. Inputs are perturbed
//! softly: every embedding coordinate of position `i` survives with a
//! probability derived from its importance score. Both metrics are
//! normalised by the distance obtained when the whole input is zeroed
//! (`ΔP₀`):
//!
//! * Soft-NS (sufficiency) retains with `q_i = s_i` and reports
//!   `max(0, ΔP₀ − ΔP') / ΔP₀`.
//! * Soft-NC (comprehensiveness) retains with `q_i = 1 − s_i` and reports
//!   `ΔP' / ΔP₀`; it is not capped at one.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{ImportanceState, TargetAttribution};
use crate::backend::{ModelBackend, VocabDistribution};
use crate::error::{Error, Result};
use crate::numeric::{derive_seed, seeded_rng};
use crate::sequence::{TokenId, TokenSequence};

/// Mask samples per metric and position unless configured otherwise.
pub const DEFAULT_SAMPLES: usize = 30;

/// Zero-input distances at or below this are treated as degenerate.
pub const DEGENERATE_BASELINE_EPS: f64 = 1e-9;

/// Longest context the brute-force occlusion oracle accepts.
pub const OCCLUSION_MAX_CONTEXT: usize = 16;

// Stream tags for derived seeds.
const ZERO_STREAM: u64 = 0x5A;
const NS_STREAM: u64 = 0x15;
const NC_STREAM: u64 = 0x1C;
const RANDOM_STREAM: u64 = 0x4A;

/// Hellinger distance, `sqrt(Σ (√p − √q)² / 2)`, in `[0, 1]`.
pub fn hellinger(p: &VocabDistribution, q: &VocabDistribution) -> Result<f64> {
    hellinger_slices(p.probs(), q.probs())
}

pub fn hellinger_slices(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::VocabularyMismatch {
            expected: p.len(),
            actual: q.len(),
        });
    }
    let sum: f64 = p
        .iter()
        .zip(q)
        .map(|(a, b)| {
            let d = a.sqrt() - b.sqrt();
            d * d
        })
        .sum();
    Ok((sum / 2.0).sqrt().min(1.0))
}

/// Everything a soft metric needs for one target position.
struct Probe<'a> {
    backend: &'a dyn ModelBackend,
    context: &'a [TokenId],
    target_pos: usize,
    full: VocabDistribution,
    zero_distance: f64,
}

impl<'a> Probe<'a> {
    fn new(
        backend: &'a dyn ModelBackend,
        seq: &'a TokenSequence,
        target_pos: usize,
        seed: u64,
    ) -> Result<Self> {
        let context = seq.context(target_pos)?;
        let full = backend.next_token_distribution(context)?;
        let zeroed = backend.masked_distribution(
            context,
            &vec![0.0; context.len()],
            derive_seed(seed, &[ZERO_STREAM, target_pos as u64]),
        )?;
        let zero_distance = hellinger(&full, &zeroed)?;
        if zero_distance <= DEGENERATE_BASELINE_EPS {
            return Err(Error::DegenerateBaseline { target_pos });
        }
        Ok(Self {
            backend,
            context,
            target_pos,
            full,
            zero_distance,
        })
    }

    fn mean_distance(
        &self,
        retention: &[f64],
        samples: usize,
        seed: u64,
        stream: u64,
    ) -> Result<f64> {
        let mut total = 0.0;
        for k in 0..samples {
            let s = derive_seed(seed, &[stream, self.target_pos as u64, k as u64]);
            let perturbed = self
                .backend
                .masked_distribution(self.context, retention, s)?;
            total += hellinger(&self.full, &perturbed)?;
        }
        Ok(total / samples as f64)
    }

    fn soft_ns(&self, scores: &[f64], samples: usize, seed: u64) -> Result<f64> {
        let retention = retention_from(scores, self.context.len(), false)?;
        let d = self.mean_distance(&retention, samples, seed, NS_STREAM)?;
        Ok(((self.zero_distance - d).max(0.0) / self.zero_distance).min(1.0))
    }

    fn soft_nc(&self, scores: &[f64], samples: usize, seed: u64) -> Result<f64> {
        let retention = retention_from(scores, self.context.len(), true)?;
        let d = self.mean_distance(&retention, samples, seed, NC_STREAM)?;
        Ok(d / self.zero_distance)
    }
}

fn retention_from(scores: &[f64], len: usize, remove: bool) -> Result<Vec<f64>> {
    if scores.len() != len {
        return Err(Error::LengthMismatch {
            expected: len,
            actual: scores.len(),
        });
    }
    Ok(scores
        .iter()
        .map(|&s| {
            let s = s.clamp(0.0, 1.0);
            if remove {
                1.0 - s
            } else {
                s
            }
        })
        .collect())
}

fn check_samples(samples: usize) -> Result<()> {
    if samples == 0 {
        return Err(Error::Config(
            "at least one perturbation sample is required".into(),
        ));
    }
    Ok(())
}

/// Hellinger distance between the intact and the fully zeroed context.
pub fn delta_p_zero(
    backend: &dyn ModelBackend,
    seq: &TokenSequence,
    target_pos: usize,
    seed: u64,
) -> Result<f64> {
    Probe::new(backend, seq, target_pos, seed).map(|p| p.zero_distance)
}

pub fn soft_ns(
    backend: &dyn ModelBackend,
    seq: &TokenSequence,
    target_pos: usize,
    state: &ImportanceState,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    check_samples(samples)?;
    Probe::new(backend, seq, target_pos, seed)?.soft_ns(&state.scores, samples, seed)
}

pub fn soft_nc(
    backend: &dyn ModelBackend,
    seq: &TokenSequence,
    target_pos: usize,
    state: &ImportanceState,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    check_samples(samples)?;
    Probe::new(backend, seq, target_pos, seed)?.soft_nc(&state.scores, samples, seed)
}

/// The random attribution baseline: softmax of uniform logits.
pub fn random_baseline_scores(len: usize, seed: u64) -> Result<ImportanceState> {
    if len == 1 {
        return Ok(ImportanceState::trivial());
    }
    ImportanceState::random(len, &mut seeded_rng(seed))
}

/// A metric expressed as `ln(value / random)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Option<LogRatioRepr>", into = "Option<LogRatioRepr>")]
pub enum LogRatio {
    Value(f64),
    /// The metric itself was zero.
    NegInfinity,
    /// The random baseline was zero, so no ratio exists.
    Undefined,
}

impl LogRatio {
    pub fn as_f64(&self) -> f64 {
        match self {
            LogRatio::Value(v) => *v,
            LogRatio::NegInfinity => f64::NEG_INFINITY,
            LogRatio::Undefined => f64::NAN,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LogRatioRepr {
    Number(f64),
    Text(String),
}

impl TryFrom<Option<LogRatioRepr>> for LogRatio {
    type Error = String;

    fn try_from(v: Option<LogRatioRepr>) -> std::result::Result<Self, String> {
        match v {
            None => Ok(LogRatio::Undefined),
            Some(LogRatioRepr::Number(x)) => Ok(LogRatio::Value(x)),
            Some(LogRatioRepr::Text(s)) if s == "-inf" => Ok(LogRatio::NegInfinity),
            Some(LogRatioRepr::Text(s)) => Err(format!("unknown log-ratio marker {s:?}")),
        }
    }
}

impl From<LogRatio> for Option<LogRatioRepr> {
    fn from(v: LogRatio) -> Self {
        match v {
            LogRatio::Value(x) => Some(LogRatioRepr::Number(x)),
            LogRatio::NegInfinity => Some(LogRatioRepr::Text("-inf".into())),
            LogRatio::Undefined => None,
        }
    }
}

/// `ln(fa_value / random_value)`.
pub fn normalize_vs_random(fa_value: f64, random_value: f64) -> Result<LogRatio> {
    if !(random_value > 0.0 && random_value.is_finite()) {
        return Err(Error::DegenerateRandomBaseline(random_value));
    }
    if !(fa_value >= 0.0 && fa_value.is_finite()) {
        return Err(Error::Validation(format!(
            "metric value must be non-negative, got {fa_value}"
        )));
    }
    if fa_value == 0.0 {
        return Ok(LogRatio::NegInfinity);
    }
    Ok(LogRatio::Value((fa_value / random_value).ln()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionScore {
    pub target_pos: usize,
    pub soft_ns: f64,
    pub soft_nc: f64,
    pub random_soft_ns: f64,
    pub random_soft_nc: f64,
}

impl PositionScore {
    pub fn nc_above_one(&self) -> bool {
        self.soft_nc > 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRatioPair {
    pub soft_ns: LogRatio,
    pub soft_nc: LogRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessReport {
    pub per_position: Vec<PositionScore>,
    /// Positions whose zero-input baseline was degenerate.
    pub skipped_positions: Vec<usize>,
    pub sequence_soft_ns: f64,
    pub sequence_soft_nc: f64,
    pub random_soft_ns: f64,
    pub random_soft_nc: f64,
    pub log_ratio_vs_random: LogRatioPair,
    pub num_perturbation_samples: usize,
    pub seed: u64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

/// Soft-NS/NC for every attributed position, plus the same metrics for a
/// random baseline under the same mask seeds, averaged over the sequence.
pub fn evaluate_sequence(
    backend: &dyn ModelBackend,
    seq: &TokenSequence,
    attributions: &[(usize, ImportanceState)],
    samples: usize,
    seed: u64,
) -> Result<FaithfulnessReport> {
    check_samples(samples)?;
    if attributions.is_empty() {
        return Err(Error::Validation("no attributions to evaluate".into()));
    }
    let outcomes: Vec<(usize, Result<PositionScore>)> = attributions
        .par_iter()
        .map(|(pos, state)| {
            (
                *pos,
                evaluate_position(backend, seq, *pos, state, samples, seed),
            )
        })
        .collect();

    let mut per_position = Vec::new();
    let mut skipped_positions = Vec::new();
    for (pos, outcome) in outcomes {
        match outcome {
            Ok(score) => per_position.push(score),
            Err(Error::DegenerateBaseline { .. }) => {
                log::warn!("skipping target position {pos}: degenerate zero-input baseline");
                skipped_positions.push(pos);
            }
            Err(e) => return Err(e),
        }
    }
    if per_position.is_empty() {
        return Err(Error::EmptyReport {
            skipped: skipped_positions.len(),
        });
    }

    let sequence_soft_ns = mean(per_position.iter().map(|p| p.soft_ns));
    let sequence_soft_nc = mean(per_position.iter().map(|p| p.soft_nc));
    let random_soft_ns = mean(per_position.iter().map(|p| p.random_soft_ns));
    let random_soft_nc = mean(per_position.iter().map(|p| p.random_soft_nc));
    let ratio = |fa, rnd| normalize_vs_random(fa, rnd).unwrap_or(LogRatio::Undefined);
    Ok(FaithfulnessReport {
        log_ratio_vs_random: LogRatioPair {
            soft_ns: ratio(sequence_soft_ns, random_soft_ns),
            soft_nc: ratio(sequence_soft_nc, random_soft_nc),
        },
        per_position,
        skipped_positions,
        sequence_soft_ns,
        sequence_soft_nc,
        random_soft_ns,
        random_soft_nc,
        num_perturbation_samples: samples,
        seed,
    })
}

/// Convenience wrapper over [`evaluate_sequence`] for attribution output.
pub fn evaluate_attributions(
    backend: &dyn ModelBackend,
    seq: &TokenSequence,
    attributions: &[TargetAttribution],
    samples: usize,
    seed: u64,
) -> Result<FaithfulnessReport> {
    let pairs: Vec<(usize, ImportanceState)> = attributions
        .iter()
        .map(|a| (a.target_pos, a.state.clone()))
        .collect();
    evaluate_sequence(backend, seq, &pairs, samples, seed)
}

fn evaluate_position(
    backend: &dyn ModelBackend,
    seq: &TokenSequence,
    target_pos: usize,
    state: &ImportanceState,
    samples: usize,
    seed: u64,
) -> Result<PositionScore> {
    let probe = Probe::new(backend, seq, target_pos, seed)?;
    let random = random_baseline_scores(
        target_pos,
        derive_seed(seed, &[RANDOM_STREAM, target_pos as u64]),
    )?;
    Ok(PositionScore {
        target_pos,
        soft_ns: probe.soft_ns(&state.scores, samples, seed)?,
        soft_nc: probe.soft_nc(&state.scores, samples, seed)?,
        random_soft_ns: probe.soft_ns(&random.scores, samples, seed)?,
        random_soft_nc: probe.soft_nc(&random.scores, samples, seed)?,
    })
}

/// Ground-truth positions for one annotated item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementAnnotation {
    pub antecedent_positions: BTreeSet<usize>,
    pub distractor_positions: BTreeSet<usize>,
    pub rationale_length: usize,
}

impl AgreementAnnotation {
    pub fn new(
        antecedent_positions: BTreeSet<usize>,
        distractor_positions: BTreeSet<usize>,
        rationale_length: usize,
        context_len: usize,
    ) -> Result<Self> {
        let a = Self {
            antecedent_positions,
            distractor_positions,
            rationale_length,
        };
        a.validate(context_len)?;
        Ok(a)
    }

    pub fn validate(&self, context_len: usize) -> Result<()> {
        if self.rationale_length == 0 {
            return Err(Error::Validation(
                "rationale length must be positive".into(),
            ));
        }
        if let Some(p) = self
            .antecedent_positions
            .intersection(&self.distractor_positions)
            .next()
        {
            return Err(Error::Validation(format!(
                "position {p} is both antecedent and distractor"
            )));
        }
        if let Some(p) = self
            .antecedent_positions
            .iter()
            .chain(&self.distractor_positions)
            .find(|&&p| p >= context_len)
        {
            return Err(Error::Validation(format!(
                "annotated position {p} is outside a context of length {context_len}"
            )));
        }
        Ok(())
    }
}

/// The `length` highest-scoring positions; ties by lower index.
pub fn extract_rationale(state: &ImportanceState, length: usize) -> Vec<usize> {
    state.top_positions(length)
}

/// Fraction of rationales hitting an antecedent, and fraction avoiding
/// every distractor.
pub fn agreement_ratios(
    rationales: &[Vec<usize>],
    annotations: &[AgreementAnnotation],
) -> Result<(f64, f64)> {
    if rationales.len() != annotations.len() {
        return Err(Error::LengthMismatch {
            expected: annotations.len(),
            actual: rationales.len(),
        });
    }
    if rationales.is_empty() {
        return Err(Error::Validation("no annotated items".into()));
    }
    let n = rationales.len() as f64;
    let (mut ante, mut no_d) = (0usize, 0usize);
    for (r, a) in rationales.iter().zip(annotations) {
        if r.iter().any(|p| a.antecedent_positions.contains(p)) {
            ante += 1;
        }
        if !r.iter().any(|p| a.distractor_positions.contains(p)) {
            no_d += 1;
        }
    }
    Ok((ante as f64 / n, no_d as f64 / n))
}

/// Leave-one-out occlusion: drop in the target's probability when each
/// position's embedding is zeroed. Unnormalised.
pub fn brute_force_occlusion(
    backend: &dyn ModelBackend,
    context: &[TokenId],
    target: TokenId,
) -> Result<Vec<f64>> {
    if context.len() > OCCLUSION_MAX_CONTEXT {
        return Err(Error::OracleScale {
            len: context.len(),
            max: OCCLUSION_MAX_CONTEXT,
        });
    }
    if context.is_empty() {
        return Err(Error::EmptyContext);
    }
    let full = backend.next_token_distribution(context)?.prob(target);
    (0..context.len())
        .map(|i| {
            let mut retention = vec![1.0; context.len()];
            retention[i] = 0.0;
            let p = backend
                .masked_distribution(context, &retention, 0)?
                .prob(target);
            Ok(full - p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ConstantLM, PlantedDependencyLM, ToyConfig, ToyLM};

    fn dist(p: &[f64]) -> VocabDistribution {
        VocabDistribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn hellinger_closed_forms() {
        let p = dist(&[0.2, 0.3, 0.5]);
        assert_eq!(hellinger(&p, &p).unwrap(), 0.0);
        assert_eq!(
            hellinger(&dist(&[1.0, 0.0]), &dist(&[0.0, 1.0])).unwrap(),
            1.0
        );
        // (1/√2)·√(2 − √2)
        let h = hellinger(&dist(&[0.5, 0.5]), &dist(&[1.0, 0.0])).unwrap();
        assert!((h - 0.541_196_100_146_197).abs() < 1e-12, "{h}");
        assert!(matches!(
            hellinger(&dist(&[1.0]), &dist(&[0.5, 0.5])),
            Err(Error::VocabularyMismatch { .. })
        ));
    }

    #[test]
    fn log_ratio() {
        assert_eq!(normalize_vs_random(0.3, 0.3).unwrap(), LogRatio::Value(0.0));
        let e = std::f64::consts::E;
        match normalize_vs_random(e * 0.2, 0.2).unwrap() {
            LogRatio::Value(v) => assert!((v - 1.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        assert_eq!(
            normalize_vs_random(0.0, 0.2).unwrap(),
            LogRatio::NegInfinity
        );
        assert!(matches!(
            normalize_vs_random(0.1, 0.0),
            Err(Error::DegenerateRandomBaseline(_))
        ));
        assert!(normalize_vs_random(-0.1, 0.5).is_err());
    }

    #[test]
    fn log_ratio_serialisation() {
        let pair = LogRatioPair {
            soft_ns: LogRatio::NegInfinity,
            soft_nc: LogRatio::Undefined,
        };
        let text = serde_json::to_string(&pair).unwrap();
        assert_eq!(text, r#"{"soft_ns":"-inf","soft_nc":null}"#);
        assert_eq!(serde_json::from_str::<LogRatioPair>(&text).unwrap(), pair);
        assert!(serde_json::from_str::<LogRatio>(r#""inf""#).is_err());
        assert_eq!(
            serde_json::from_str::<LogRatio>("1.5").unwrap(),
            LogRatio::Value(1.5)
        );
    }

    #[test]
    fn insensitive_backend_is_degenerate() {
        let m = ConstantLM::peaked(8, 1, 0.5).unwrap();
        let seq = TokenSequence::new(vec![1, 2, 3], 8).unwrap();
        assert!(matches!(
            delta_p_zero(&m, &seq, 2, 0),
            Err(Error::DegenerateBaseline { target_pos: 2 })
        ));
        let s = ImportanceState::from_scores(vec![0.5, 0.5]);
        assert!(soft_ns(&m, &seq, 2, &s, 4, 0).is_err());
        assert!(matches!(
            evaluate_sequence(&m, &seq, &[(2, s)], 4, 0),
            Err(Error::EmptyReport { skipped: 1 })
        ));
    }

    #[test]
    fn zero_baseline_is_positive_on_toy() {
        let m = ToyLM::new(ToyConfig::default()).unwrap();
        let seq = TokenSequence::new(vec![4, 8, 15, 16, 23, 42], 64).unwrap();
        for pos in 1..6 {
            let d0 = delta_p_zero(&m, &seq, pos, 0).unwrap();
            assert!(d0 > 0.0 && d0 <= 1.0);
        }
    }

    #[test]
    fn soft_metric_extremes() {
        let m = ToyLM::new(ToyConfig::default()).unwrap();
        let seq = TokenSequence::new(vec![4, 8, 15, 16], 64).unwrap();
        // Retaining everything reproduces the full distribution.
        let all = ImportanceState::from_scores(vec![1.0, 1.0, 1.0]);
        assert_eq!(soft_ns(&m, &seq, 3, &all, 3, 0).unwrap(), 1.0);
        // Removal with q = 1 − 1 = 0 reproduces the zero input.
        let nc = soft_nc(&m, &seq, 3, &all, 3, 0).unwrap();
        assert!((nc - 1.0).abs() < 1e-12);
        let none = ImportanceState::from_scores(vec![0.0, 0.0, 0.0]);
        assert_eq!(soft_nc(&m, &seq, 3, &none, 3, 0).unwrap(), 0.0);
        assert_eq!(soft_ns(&m, &seq, 3, &none, 3, 0).unwrap(), 0.0);
        assert!(soft_ns(&m, &seq, 3, &none, 0, 0).is_err());
    }

    #[test]
    fn report_means_and_skips() {
        let m = ToyLM::new(ToyConfig::default()).unwrap();
        let seq = TokenSequence::new(vec![4, 8, 15, 16, 23], 64).unwrap();
        let attrs = vec![
            (2, ImportanceState::from_scores(vec![1.0, 0.0])),
            (4, ImportanceState::from_scores(vec![0.25; 4])),
        ];
        let r = evaluate_sequence(&m, &seq, &attrs, 5, 1).unwrap();
        assert_eq!(r.per_position.len(), 2);
        let mean_ns = (r.per_position[0].soft_ns + r.per_position[1].soft_ns) / 2.0;
        assert_eq!(r.sequence_soft_ns, mean_ns);
        assert!(r.skipped_positions.is_empty());

        let single = evaluate_sequence(&m, &seq, &attrs[..1], 5, 1).unwrap();
        assert_eq!(single.sequence_soft_nc, single.per_position[0].soft_nc);
        assert!(evaluate_sequence(&m, &seq, &[], 5, 1).is_err());
    }

    #[test]
    fn random_baseline() {
        assert_eq!(
            random_baseline_scores(5, 3).unwrap(),
            random_baseline_scores(5, 3).unwrap()
        );
        assert!(random_baseline_scores(5, 3).unwrap().is_on_simplex());
        assert_eq!(random_baseline_scores(1, 3).unwrap().scores, vec![1.0]);
    }

    #[test]
    fn agreement() {
        let ann = |a: &[usize], d: &[usize], l| {
            AgreementAnnotation::new(
                a.iter().copied().collect(),
                d.iter().copied().collect(),
                l,
                10,
            )
            .unwrap()
        };
        let anns = vec![ann(&[1], &[5, 6], 2), ann(&[2], &[7], 2)];
        let (ante, no_d) = agreement_ratios(&[vec![1, 3], vec![2, 7]], &anns).unwrap();
        assert_eq!(ante, 1.0);
        assert_eq!(no_d, 0.5);
        let (_, no_d) = agreement_ratios(&[vec![5], vec![7]], &anns).unwrap();
        assert_eq!(no_d, 0.0);
        assert!(agreement_ratios(&[vec![1]], &anns).is_err());

        assert!(AgreementAnnotation::new([1].into(), [1].into(), 2, 10).is_err());
        assert!(AgreementAnnotation::new([11].into(), [].into(), 2, 10).is_err());
        assert!(AgreementAnnotation::new([1].into(), [].into(), 0, 10).is_err());
    }

    #[test]
    fn rationale_extraction_ties() {
        let s = ImportanceState::from_scores(vec![0.3, 0.1, 0.3, 0.3]);
        assert_eq!(extract_rationale(&s, 2), vec![0, 2]);
    }

    #[test]
    fn occlusion_on_planted() {
        let m = PlantedDependencyLM::new(ToyConfig::default(), 10, 20).unwrap();
        let drops = brute_force_occlusion(&m, &[3, 5, 10, 7], 20).unwrap();
        assert!((drops[2] - 0.8).abs() < 1e-12);
        for i in [0, 1, 3] {
            assert_eq!(drops[i], 0.0);
        }
        assert_eq!(
            drops,
            brute_force_occlusion(&m, &[3, 5, 10, 7], 20).unwrap()
        );
        assert!(matches!(
            brute_force_occlusion(&m, &[1; 17], 20),
            Err(Error::OracleScale { len: 17, .. })
        ));
    }
}
