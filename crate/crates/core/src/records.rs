//! Line-delimited JSON formats read and written by the CLI.
//!
//! Input, one object per line:
//!
//! ```json
//! {"id": "ex1", "tokens": [5, 9, 2, 7], "surfaces": ["a", "b", "c", "d"],
//!  "annotations": {"antecedent": [1], "distractor": [2], "rationale_length": 2, "target_pos": 3}}
//! ```
//!
//! `surfaces` and `annotations` are optional; `annotations.target_pos`
//! defaults to the last token.
//!
//! Attribution file: one [`AttributionRecord`] per input record. Report
//! file: [`ReportLine`]s tagged by `"record"`: a `position` line per
//! evaluated target, one `summary` line per input record, `failure` lines
//! for records that could not be evaluated, and a trailing `agreement` line
//! when annotated records were present.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::attribution::{ImportanceState, ReAGentConfig, RunSummary, TargetAttribution};
use crate::error::{Error, Result};
use crate::faithfulness::{AgreementAnnotation, FaithfulnessReport, LogRatioPair, PositionScore};
use crate::proposer::Strategy;
use crate::sequence::{TokenId, TokenSequence};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputAnnotations {
    pub antecedent: BTreeSet<usize>,
    #[serde(default)]
    pub distractor: BTreeSet<usize>,
    pub rationale_length: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_pos: Option<usize>,
}

impl InputAnnotations {
    pub fn target_pos_for(&self, seq_len: usize) -> usize {
        self.target_pos.unwrap_or(seq_len - 1)
    }

    pub fn to_annotation(&self, seq_len: usize) -> Result<AgreementAnnotation> {
        let target = self.target_pos_for(seq_len);
        if target == 0 || target >= seq_len {
            return Err(Error::Validation(format!(
                "annotation target {target} is outside a sequence of length {seq_len}"
            )));
        }
        AgreementAnnotation::new(
            self.antecedent.clone(),
            self.distractor.clone(),
            self.rationale_length,
            target,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    pub id: String,
    pub tokens: Vec<TokenId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surfaces: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<InputAnnotations>,
}

impl InputRecord {
    pub fn to_sequence(&self, vocab_size: usize) -> Result<TokenSequence> {
        let seq = TokenSequence::new(self.tokens.clone(), vocab_size)?;
        let seq = match &self.surfaces {
            Some(s) => seq.with_surfaces(s.clone())?,
            None => seq,
        };
        if let Some(a) = &self.annotations {
            a.to_annotation(seq.len())?;
        }
        Ok(seq)
    }
}

/// A line that could not be used, with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedLine {
    pub line: usize,
    pub reason: String,
}

/// Parses input records from arbitrary bytes. Blank lines are ignored;
/// bad lines are reported and never stop the remaining ones.
pub fn parse_input(bytes: &[u8]) -> (Vec<InputRecord>, Vec<MalformedLine>) {
    let mut records = Vec::new();
    let mut malformed = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line = i + 1;
        let text = match std::str::from_utf8(raw) {
            Ok(t) => t.trim(),
            Err(e) => {
                malformed.push(MalformedLine {
                    line,
                    reason: format!("not UTF-8: {e}"),
                });
                continue;
            }
        };
        if text.is_empty() {
            continue;
        }
        match serde_json::from_str::<InputRecord>(text) {
            Ok(r) if r.id.is_empty() => malformed.push(MalformedLine {
                line,
                reason: "empty id".into(),
            }),
            Ok(r) if !seen.insert(r.id.clone()) => malformed.push(MalformedLine {
                line,
                reason: format!("duplicate id {:?}", r.id),
            }),
            Ok(r) => records.push(r),
            Err(e) => malformed.push(MalformedLine {
                line,
                reason: e.to_string(),
            }),
        }
    }
    (records, malformed)
}

/// Attribution for one target position as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionRecord {
    pub target_pos: usize,
    pub target_token: TokenId,
    pub scores: Vec<f64>,
    pub logits: Vec<f64>,
    pub converged: bool,
    pub step_count: usize,
    pub runs: Vec<RunSummary>,
}

impl From<&TargetAttribution> for PositionRecord {
    fn from(a: &TargetAttribution) -> Self {
        Self {
            target_pos: a.target_pos,
            target_token: a.target_token,
            scores: a.state.scores.clone(),
            logits: a.state.logits.clone(),
            converged: a.state.converged,
            step_count: a.state.step_count,
            runs: a.runs.clone(),
        }
    }
}

impl From<&PositionRecord> for TargetAttribution {
    fn from(p: &PositionRecord) -> Self {
        Self {
            target_pos: p.target_pos,
            target_token: p.target_token,
            state: ImportanceState {
                logits: p.logits.clone(),
                scores: p.scores.clone(),
                step_count: p.step_count,
                converged: p.converged,
            },
            runs: p.runs.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub id: String,
    pub config_hash: String,
    pub backend: String,
    pub strategy: Strategy,
    pub config: ReAGentConfig,
    pub stride: usize,
    pub tokens: Vec<TokenId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surfaces: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<InputAnnotations>,
    pub positions: Vec<PositionRecord>,
}

impl AttributionRecord {
    pub fn attributions(&self) -> Vec<TargetAttribution> {
        self.positions.iter().map(TargetAttribution::from).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ReportLine {
    Position {
        id: String,
        #[serde(flatten)]
        score: PositionScore,
        nc_above_one: bool,
    },
    Summary {
        id: String,
        sequence_soft_ns: f64,
        sequence_soft_nc: f64,
        random_soft_ns: f64,
        random_soft_nc: f64,
        log_ratio_vs_random: LogRatioPair,
        skipped_positions: Vec<usize>,
        num_perturbation_samples: usize,
        seed: u64,
    },
    Failure {
        id: String,
        error: String,
    },
    Agreement {
        ante_ratio: f64,
        no_d_ratio: f64,
        items: usize,
    },
}

/// Position lines followed by the summary line for one record.
pub fn report_lines(id: &str, report: &FaithfulnessReport) -> Vec<ReportLine> {
    let mut lines: Vec<ReportLine> = report
        .per_position
        .iter()
        .map(|p| ReportLine::Position {
            id: id.to_string(),
            score: p.clone(),
            nc_above_one: p.nc_above_one(),
        })
        .collect();
    lines.push(ReportLine::Summary {
        id: id.to_string(),
        sequence_soft_ns: report.sequence_soft_ns,
        sequence_soft_nc: report.sequence_soft_nc,
        random_soft_ns: report.random_soft_ns,
        random_soft_nc: report.random_soft_nc,
        log_ratio_vs_random: report.log_ratio_vs_random,
        skipped_positions: report.skipped_positions.clone(),
        num_perturbation_samples: report.num_perturbation_samples,
        seed: report.seed,
    });
    lines
}

/// Parsed contents of a report file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedReport {
    pub reports: BTreeMap<String, FaithfulnessReport>,
    pub failures: BTreeMap<String, String>,
    pub agreement: Option<(f64, f64, usize)>,
}

/// Reassembles per-record reports from report lines.
pub fn parse_report(text: &str) -> Result<ParsedReport> {
    let mut out = ParsedReport::default();
    let mut pending: BTreeMap<String, Vec<PositionScore>> = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str::<ReportLine>(line)? {
            ReportLine::Position { id, score, .. } => pending.entry(id).or_default().push(score),
            ReportLine::Summary {
                id,
                sequence_soft_ns,
                sequence_soft_nc,
                random_soft_ns,
                random_soft_nc,
                log_ratio_vs_random,
                skipped_positions,
                num_perturbation_samples,
                seed,
            } => {
                let per_position = pending.remove(&id).unwrap_or_default();
                out.reports.insert(
                    id,
                    FaithfulnessReport {
                        per_position,
                        skipped_positions,
                        sequence_soft_ns,
                        sequence_soft_nc,
                        random_soft_ns,
                        random_soft_nc,
                        log_ratio_vs_random,
                        num_perturbation_samples,
                        seed,
                    },
                );
            }
            ReportLine::Failure { id, error } => {
                out.failures.insert(id, error);
            }
            ReportLine::Agreement {
                ante_ratio,
                no_d_ratio,
                items,
            } => out.agreement = Some((ante_ratio, no_d_ratio, items)),
        }
    }
    if let Some(id) = pending.keys().next() {
        return Err(Error::Validation(format!(
            "position lines for {id:?} have no summary"
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faithfulness::LogRatio;

    #[test]
    fn parses_good_lines_and_reports_bad_ones() {
        let text = b"{\"id\":\"a\",\"tokens\":[1,2,3]}\n\nnot json\n{\"id\":\"b\",\"tokens\":[4,5],\"surfaces\":[\"x\",\"y\"]}\n\xff\xfe\n{\"id\":\"a\",\"tokens\":[1,2]}\n";
        let (records, bad) = parse_input(text);
        assert_eq!(records.len(), 2);
        assert_eq!(records[1].surfaces.as_ref().unwrap()[0], "x");
        assert_eq!(
            bad.iter().map(|m| m.line).collect::<Vec<_>>(),
            vec![3, 5, 6]
        );
    }

    #[test]
    fn annotations_are_validated_against_the_context() {
        let rec: InputRecord = serde_json::from_str(
            r#"{"id":"a","tokens":[1,2,3,4],"annotations":{"antecedent":[1],"distractor":[2],"rationale_length":1}}"#,
        )
        .unwrap();
        assert!(rec.to_sequence(8).is_ok());
        let bad: InputRecord = serde_json::from_str(
            r#"{"id":"a","tokens":[1,2,3,4],"annotations":{"antecedent":[3],"rationale_length":1}}"#,
        )
        .unwrap();
        assert!(bad.to_sequence(8).is_err());
    }

    #[test]
    fn report_round_trip() {
        let report = FaithfulnessReport {
            per_position: vec![PositionScore {
                target_pos: 1,
                soft_ns: 0.123_456_789_012_345_67,
                soft_nc: 1.5,
                random_soft_ns: 0.1,
                random_soft_nc: 0.7,
            }],
            skipped_positions: vec![6],
            sequence_soft_ns: 0.123_456_789_012_345_67,
            sequence_soft_nc: 1.5,
            random_soft_ns: 0.1,
            random_soft_nc: 0.7,
            log_ratio_vs_random: LogRatioPair {
                soft_ns: LogRatio::Value(0.2107),
                soft_nc: LogRatio::NegInfinity,
            },
            num_perturbation_samples: 30,
            seed: 9,
        };
        let text: String = report_lines("r1", &report)
            .iter()
            .map(|l| serde_json::to_string(l).unwrap() + "\n")
            .collect();
        assert!(text.contains("\"nc_above_one\":true"));
        let parsed = parse_report(&text).unwrap();
        assert_eq!(parsed.reports["r1"], report);
    }
}
