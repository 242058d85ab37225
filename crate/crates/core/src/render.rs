//! Heatmap rendering of importance scores over context tokens.
//!
//! Intensity is linear in the score, with the largest score mapped to full
//! saturation and zero to none.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::attribution::TargetAttribution;
use crate::error::{Error, Result};
use crate::sequence::TokenSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RenderFormat {
    Ansi,
    Html,
}

impl RenderFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            RenderFormat::Ansi => "ansi",
            RenderFormat::Html => "html",
        }
    }
}

/// Scores scaled into `[0, 1]` by the maximum score.
pub fn intensities(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return vec![0.0; scores.len()];
    }
    scores
        .iter()
        .map(|&s| (s.max(0.0) / max).min(1.0))
        .collect()
}

fn channel(intensity: f64) -> u8 {
    (255.0 * (1.0 - intensity)).round() as u8
}

fn ansi_span(out: &mut String, label: &str, intensity: f64) {
    let c = channel(intensity);
    let _ = write!(out, "\x1b[48;2;255;{c};{c}m\x1b[38;2;0;0;0m{label}\x1b[0m");
}

fn html_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn html_span(out: &mut String, label: &str, intensity: f64, score: f64) {
    let c = channel(intensity);
    let _ = write!(
        out,
        "<span title=\"{score:.6}\" style=\"background-color:rgb(255,{c},{c});color:#000;padding:0 2px;margin:0 1px;border-radius:2px;\">{}</span>",
        html_escape(label)
    );
}

/// One heatmap line: `labels[i]` coloured by `scores[i]`.
pub fn render_heatmap(labels: &[String], scores: &[f64], format: RenderFormat) -> Result<String> {
    if labels.len() != scores.len() {
        return Err(Error::LengthMismatch {
            expected: labels.len(),
            actual: scores.len(),
        });
    }
    let mut out = String::new();
    for (i, (label, &intensity)) in labels.iter().zip(&intensities(scores)).enumerate() {
        if i > 0 {
            out.push(' ');
        }
        match format {
            RenderFormat::Ansi => ansi_span(&mut out, label, intensity),
            RenderFormat::Html => html_span(&mut out, label, intensity, scores[i]),
        }
    }
    Ok(out)
}

/// A complete document for one sequence: one heatmap per target position,
/// followed by the target token. HTML output is a standalone page with
/// inline styles only.
pub fn render_document(
    title: &str,
    seq: &TokenSequence,
    attributions: &[TargetAttribution],
    format: RenderFormat,
) -> Result<String> {
    let mut out = String::new();
    match format {
        RenderFormat::Ansi => {
            let _ = writeln!(out, "\x1b[1m{title}\x1b[0m");
            for a in attributions {
                let labels: Vec<String> = (0..a.target_pos).map(|i| seq.surface(i)).collect();
                let line = render_heatmap(&labels, &a.state.scores, format)?;
                let _ = writeln!(
                    out,
                    "[{}] {line} => \x1b[1m{}\x1b[0m",
                    a.target_pos,
                    seq.surface(a.target_pos)
                );
            }
        }
        RenderFormat::Html => {
            let title = html_escape(title);
            let _ = write!(
                out,
                "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{title}</title></head>\n\
                 <body style=\"font-family:monospace;line-height:1.8;\">\n<h3>{title}</h3>\n"
            );
            for a in attributions {
                let labels: Vec<String> = (0..a.target_pos).map(|i| seq.surface(i)).collect();
                let line = render_heatmap(&labels, &a.state.scores, format)?;
                let _ = writeln!(
                    out,
                    "<div><span style=\"color:#666;\">[{}]</span> {line} &rArr; <b>{}</b></div>",
                    a.target_pos,
                    html_escape(&seq.surface(a.target_pos))
                );
            }
            out.push_str("</body></html>\n");
        }
    }
    Ok(out)
}
