//! Command-line driver: attribution and evaluation over line-delimited input
//! files, plus a protocol server for the toy model.
//!
//! Output layout under `--out`:
//!
//! ```text
//! {stem}.{hash}.attributions.jsonl   one AttributionRecord per input record
//! {stem}.{hash}.report.jsonl         ReportLines (see crate::records)
//! heatmaps/{id}.{hash}.{ansi|html}   rendered importance per record
//! ```
//!
//! `stem` is the input file name without extensions and `hash` a digest of
//! every setting that affects the result. Reruns with the same settings
//! reuse completed records; changed settings write new files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::attribution::{target_positions, Attributor, ReAGentConfig, TargetAttribution};
use crate::backend::{ModelBackend, RemoteBackend, RemoteOptions, ToyConfig, ToyLM};
use crate::error::{Error, Result};
use crate::faithfulness::{agreement_ratios, evaluate_attributions, extract_rationale};
use crate::proposer::{
    FillModel, MaskedLmProposer, PosMatchedProposer, PosTagTable, RandomVocabProposer,
    ReplacementProposer, Strategy, ToyFillModel,
};
use crate::protocol::{serve_blocking, ServedModel};
use crate::records::{
    parse_input, report_lines, AttributionRecord, InputRecord, PositionRecord, ReportLine,
};
use crate::render::{render_document, RenderFormat};
use crate::sequence::TokenSequence;

/// Environment variable holding the bearer token for remote backends.
pub const AUTH_TOKEN_ENV: &str = "REAGENT_API_TOKEN";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    Failure = 1,
    Unreachable = 2,
    MissingInputs = 3,
    InvalidConfig = 4,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }

    fn for_error(err: &Error) -> Self {
        match err {
            Error::Transport { .. } | Error::Remote { .. } => ExitStatus::Unreachable,
            Error::Config(_) | Error::StrategyUnavailable(_) => ExitStatus::InvalidConfig,
            _ => ExitStatus::Failure,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "reagent",
    version,
    about = "Model-agnostic token attribution for language models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Attribute every record of an input file.
    Attribute(RunArgs),
    /// Score existing attributions with Soft-NS/Soft-NC against a random baseline.
    Evaluate(RunArgs),
    /// Serve the toy model over the HTTP protocol.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// `toy`, `toy:<seed>`, or an http(s) endpoint URL.
    #[arg(long, default_value = "toy")]
    pub backend: String,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.3)]
    pub replace_ratio: f64,
    #[arg(long, default_value_t = 0.7)]
    pub stop_fraction: f64,
    /// Absolute number of positions replaced by the stopping check.
    #[arg(long)]
    pub stop_count: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub tolerance_k: usize,
    #[arg(long, default_value_t = 1000)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 3)]
    pub runs: usize,
    #[arg(long, default_value_t = 5)]
    pub stride: usize,
    #[arg(long, default_value_t = 30)]
    pub samples: usize,
    #[arg(long, value_enum, default_value_t = Strategy::MaskedLm)]
    pub strategy: Strategy,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "html")]
    pub render: Vec<RenderFormat>,
    /// Records processed concurrently. Defaults to the number of CPUs.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// `toy` or `toy:<seed>`.
    #[arg(long, default_value = "toy")]
    pub backend: String,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendDescriptor {
    Toy { seed: u64 },
    Remote { url: String },
}

impl FromStr for BackendDescriptor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "toy" {
            return Ok(BackendDescriptor::Toy { seed: 0 });
        }
        if let Some(seed) = s.strip_prefix("toy:") {
            let seed = seed
                .parse()
                .map_err(|_| Error::Config(format!("bad toy seed in backend {s:?}")))?;
            return Ok(BackendDescriptor::Toy { seed });
        }
        if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(BackendDescriptor::Remote { url: s.to_string() });
        }
        Err(Error::Config(format!(
            "backend must be `toy`, `toy:<seed>` or an http(s) URL, got {s:?}"
        )))
    }
}

impl BackendDescriptor {
    fn descriptor(&self) -> String {
        match self {
            BackendDescriptor::Toy { seed } => format!("toy:{seed}"),
            BackendDescriptor::Remote { url } => url.trim_end_matches('/').to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub backend: BackendDescriptor,
    pub reagent: ReAGentConfig,
    pub stride: usize,
    pub samples: usize,
    pub strategy: Strategy,
    pub render: Vec<RenderFormat>,
    pub workers: Option<usize>,
    pub input: PathBuf,
    pub out: PathBuf,
    pub auth_token: Option<String>,
}

impl RunConfig {
    pub fn from_args(args: &RunArgs, auth_token: Option<String>) -> Result<Self> {
        let cfg = Self {
            backend: args.backend.parse()?,
            reagent: ReAGentConfig {
                replace_ratio: args.replace_ratio,
                stop_replace_fraction: args.stop_fraction,
                stop_replace_count: args.stop_count,
                tolerance_k: args.tolerance_k,
                max_steps: args.max_steps,
                num_runs: args.runs,
                seed: args.seed,
                ..ReAGentConfig::default()
            },
            stride: args.stride,
            samples: args.samples,
            strategy: args.strategy,
            render: args.render.clone(),
            workers: args.workers,
            input: args.input.clone(),
            out: args.out.clone(),
            auth_token,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults for everything but the backend and paths.
    pub fn new(
        backend: BackendDescriptor,
        input: impl Into<PathBuf>,
        out: impl Into<PathBuf>,
    ) -> Self {
        Self {
            backend,
            reagent: ReAGentConfig::default(),
            stride: 5,
            samples: 30,
            strategy: Strategy::MaskedLm,
            render: vec![RenderFormat::Html],
            workers: None,
            input: input.into(),
            out: out.into(),
            auth_token: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.reagent.validate()?;
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if self.samples == 0 {
            return Err(Error::Config("samples must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    /// Input file name up to its first dot.
    pub fn stem(&self) -> String {
        let name = self
            .input
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let stem = name.split('.').next().unwrap_or_default();
        if stem.is_empty() {
            "input".into()
        } else {
            sanitize(stem)
        }
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn digest<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("plain data serializes");
    Sha256::digest(&bytes)
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// A backend ready for use together with the proposer actually selected.
pub struct ResolvedBackend {
    pub backend: Arc<dyn ModelBackend>,
    pub proposer: Box<dyn ReplacementProposer>,
    pub strategy: Strategy,
    pub descriptor: String,
}

impl ResolvedBackend {
    pub fn connect(cfg: &RunConfig) -> Result<Self> {
        let descriptor = cfg.backend.descriptor();
        match &cfg.backend {
            BackendDescriptor::Toy { seed } => {
                let lm = ToyLM::new(ToyConfig {
                    seed: *seed,
                    ..ToyConfig::default()
                })?;
                let vocab = lm.vocab_size();
                let proposer: Box<dyn ReplacementProposer> = match cfg.strategy {
                    Strategy::MaskedLm => Box::new(MaskedLmProposer::new(
                        Arc::new(ToyFillModel::new(vocab, *seed)?),
                        vocab,
                    )),
                    Strategy::RandomVocab => Box::new(RandomVocabProposer::new(vocab)),
                    Strategy::PosMatched => Box::new(PosMatchedProposer::new(Arc::new(
                        PosTagTable::toy(vocab, *seed)?,
                    ))),
                };
                Ok(Self {
                    backend: Arc::new(lm),
                    proposer,
                    strategy: cfg.strategy,
                    descriptor,
                })
            }
            BackendDescriptor::Remote { url } => {
                let remote = Arc::new(RemoteBackend::connect(
                    url,
                    RemoteOptions {
                        auth_token: cfg.auth_token.clone(),
                        ..RemoteOptions::default()
                    },
                )?);
                let vocab = remote.vocab_size();
                let (proposer, strategy): (Box<dyn ReplacementProposer>, Strategy) =
                    match cfg.strategy {
                        Strategy::MaskedLm => match remote.fill(&[0, 0], &[1]) {
                            Ok(_) => (
                                Box::new(MaskedLmProposer::new(remote.clone(), vocab)),
                                Strategy::MaskedLm,
                            ),
                            Err(Error::StrategyUnavailable(why)) => {
                                log::warn!("{why}; falling back to random-vocab replacement");
                                (
                                    Box::new(RandomVocabProposer::new(vocab)),
                                    Strategy::RandomVocab,
                                )
                            }
                            Err(e) => return Err(e),
                        },
                        Strategy::RandomVocab => (
                            Box::new(RandomVocabProposer::new(vocab)),
                            Strategy::RandomVocab,
                        ),
                        Strategy::PosMatched => (
                            Box::new(PosMatchedProposer::new(Arc::new(remote.pos_tag_table()?))),
                            Strategy::PosMatched,
                        ),
                    };
                Ok(Self {
                    backend: remote,
                    proposer,
                    strategy,
                    descriptor,
                })
            }
        }
    }

    /// Digest of every setting that determines attribution output.
    pub fn attribution_hash(&self, cfg: &RunConfig) -> String {
        digest(&serde_json::json!({
            "backend": self.descriptor,
            "model": self.backend.name(),
            "strategy": self.strategy,
            "config": cfg.reagent,
            "stride": cfg.stride,
        }))
    }

    /// Digest of the attribution settings plus the evaluation settings.
    pub fn report_hash(&self, cfg: &RunConfig) -> String {
        digest(&serde_json::json!({
            "attribution": self.attribution_hash(cfg),
            "samples": cfg.samples,
            "seed": cfg.reagent.seed,
        }))
    }
}

pub fn attribution_path(cfg: &RunConfig, hash: &str) -> PathBuf {
    cfg.out
        .join(format!("{}.{hash}.attributions.jsonl", cfg.stem()))
}

pub fn report_path(cfg: &RunConfig, hash: &str) -> PathBuf {
    cfg.out.join(format!("{}.{hash}.report.jsonl", cfg.stem()))
}

pub fn heatmap_path(cfg: &RunConfig, id: &str, hash: &str, format: RenderFormat) -> PathBuf {
    cfg.out
        .join("heatmaps")
        .join(format!("{}.{hash}.{}", sanitize(id), format.extension()))
}

/// Failures that end a command, with the exit status they map to.
#[derive(Debug)]
pub struct CommandError {
    pub status: ExitStatus,
    pub error: Error,
}

impl CommandError {
    fn new(status: ExitStatus, error: Error) -> Self {
        Self { status, error }
    }
}

impl From<Error> for CommandError {
    fn from(error: Error) -> Self {
        Self {
            status: ExitStatus::for_error(&error),
            error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeSummary {
    pub path: PathBuf,
    pub written: usize,
    pub reused: usize,
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvaluateSummary {
    pub path: PathBuf,
    pub evaluated: usize,
    pub failed: Vec<String>,
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

fn is_fatal(err: &Error) -> bool {
    matches!(
        err,
        Error::Transport { .. } | Error::Remote { .. } | Error::Backend(_) | Error::Io(_)
    )
}

/// Runs `work` over `items` on the pool and hands results to `sink` on the
/// calling thread in item order. A fatal error stops new items from
/// starting; results already produced are still delivered in order.
fn ordered_for_each<T, R, W, S>(
    pool: &rayon::ThreadPool,
    items: &[T],
    work: W,
    mut sink: S,
) -> Result<()>
where
    T: Sync,
    R: Send,
    W: Fn(&T) -> Result<R> + Sync,
    S: FnMut(usize, Result<R>) -> Result<()>,
{
    let abort = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, Option<Result<R>>)>();
    let mut fatal = None;
    std::thread::scope(|scope| -> Result<()> {
        let abort = &abort;
        let work = &work;
        scope.spawn(move || {
            pool.install(|| {
                items
                    .par_iter()
                    .enumerate()
                    .for_each_with(tx, |tx, (i, item)| {
                        if abort.load(Ordering::SeqCst) {
                            let _ = tx.send((i, None));
                            return;
                        }
                        let out = work(item);
                        if matches!(&out, Err(e) if is_fatal(e)) {
                            abort.store(true, Ordering::SeqCst);
                        }
                        let _ = tx.send((i, Some(out)));
                    });
            });
        });
        let mut pending = BTreeMap::new();
        let mut next = 0;
        for (i, out) in rx {
            pending.insert(i, out);
            while let Some(out) = pending.remove(&next) {
                next += 1;
                match out {
                    Some(Err(e)) if is_fatal(&e) => {
                        if fatal.is_none() {
                            fatal = Some(e);
                        }
                    }
                    Some(out) => sink(next - 1, out)?,
                    None => {}
                }
            }
        }
        Ok(())
    })?;
    match fatal {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn read_input(path: &Path) -> std::result::Result<Vec<InputRecord>, CommandError> {
    let bytes = fs::read(path).map_err(|e| {
        CommandError::new(
            ExitStatus::MissingInputs,
            Error::Validation(format!("cannot read input {}: {e}", path.display())),
        )
    })?;
    let (records, malformed) = parse_input(&bytes);
    for m in &malformed {
        log::warn!(
            "{}:{}: skipping malformed line: {}",
            path.display(),
            m.line,
            m.reason
        );
    }
    if records.is_empty() {
        return Err(CommandError::new(
            ExitStatus::MissingInputs,
            Error::Validation(format!("no usable records in {}", path.display())),
        ));
    }
    Ok(records)
}

fn load_existing(path: &Path, hash: &str) -> BTreeMap<String, AttributionRecord> {
    let Ok(text) = fs::read_to_string(path) else {
        return BTreeMap::new();
    };
    text.lines()
        .filter_map(|l| serde_json::from_str::<AttributionRecord>(l).ok())
        .filter(|r| r.config_hash == hash)
        .map(|r| (r.id.clone(), r))
        .collect()
}

fn positions_for(record: &InputRecord, seq: &TokenSequence, stride: usize) -> Result<Vec<usize>> {
    let mut positions: BTreeSet<usize> = target_positions(seq.len(), stride)?.into_iter().collect();
    if let Some(a) = &record.annotations {
        positions.insert(a.target_pos_for(seq.len()));
    }
    Ok(positions.into_iter().collect())
}

fn write_atomically(path: &Path, lines: &[String]) -> Result<()> {
    let tmp = path.with_extension("jsonl.partial");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        for line in lines {
            w.write_all(line.as_bytes())?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Attributes every input record, reusing records already present in the
/// output file under the same settings.
pub fn run_attribute(cfg: &RunConfig) -> std::result::Result<AttributeSummary, CommandError> {
    cfg.validate()?;
    let records = read_input(&cfg.input)?;
    let resolved = ResolvedBackend::connect(cfg)?;
    let hash = resolved.attribution_hash(cfg);
    fs::create_dir_all(cfg.out.join("heatmaps")).map_err(Error::from)?;
    let path = attribution_path(cfg, &hash);
    let existing = load_existing(&path, &hash);
    let attributor = Attributor::new(&*resolved.backend, &*resolved.proposer, cfg.reagent.clone())?;
    let vocab = resolved.backend.vocab_size();

    let work = |record: &InputRecord| -> Result<(AttributionRecord, bool)> {
        let seq = record.to_sequence(vocab)?;
        if let Some(prev) = existing.get(&record.id) {
            if prev.tokens == record.tokens
                && prev.surfaces == record.surfaces
                && prev.annotations == record.annotations
            {
                return Ok((prev.clone(), true));
            }
        }
        let positions = positions_for(record, &seq, cfg.stride)?;
        let attributions = attributor.attribute_positions(&seq, &positions)?;
        Ok((
            AttributionRecord {
                id: record.id.clone(),
                config_hash: hash.clone(),
                backend: resolved.backend.name().to_string(),
                strategy: resolved.strategy,
                config: cfg.reagent.clone(),
                stride: cfg.stride,
                tokens: record.tokens.clone(),
                surfaces: record.surfaces.clone(),
                annotations: record.annotations.clone(),
                positions: attributions.iter().map(PositionRecord::from).collect(),
            },
            false,
        ))
    };

    let mut lines = Vec::new();
    let mut summary = AttributeSummary {
        path: path.clone(),
        written: 0,
        reused: 0,
        skipped: Vec::new(),
    };
    let outcome = ordered_for_each(&pool(cfg.workers)?, &records, work, |i, out| {
        match out {
            Ok((rec, reused)) => {
                let seq = TokenSequence::new(rec.tokens.clone(), vocab)?;
                let seq = match &rec.surfaces {
                    Some(s) => seq.with_surfaces(s.clone())?,
                    None => seq,
                };
                for &format in &cfg.render {
                    let doc = render_document(&rec.id, &seq, &rec.attributions(), format)?;
                    fs::write(heatmap_path(cfg, &rec.id, &hash, format), doc)?;
                }
                lines.push(serde_json::to_string(&rec)?);
                summary.written += 1;
                summary.reused += usize::from(reused);
            }
            Err(e) => {
                log::warn!("skipping record {:?}: {e}", records[i].id);
                summary.skipped.push(records[i].id.clone());
            }
        }
        Ok(())
    });
    write_atomically(&path, &lines)?;
    outcome?;
    if summary.written == 0 {
        return Err(CommandError::new(
            ExitStatus::MissingInputs,
            Error::Validation("every input record was invalid".into()),
        ));
    }
    Ok(summary)
}

/// Scores the attribution file matching the current settings.
pub fn run_evaluate(cfg: &RunConfig) -> std::result::Result<EvaluateSummary, CommandError> {
    cfg.validate()?;
    let resolved = ResolvedBackend::connect(cfg)?;
    let attr_hash = resolved.attribution_hash(cfg);
    let attr_path = attribution_path(cfg, &attr_hash);
    let missing =
        |why: String| CommandError::new(ExitStatus::MissingInputs, Error::Validation(why));
    let text = fs::read_to_string(&attr_path).map_err(|e| {
        missing(format!(
            "cannot read attributions {}: {e}",
            attr_path.display()
        ))
    })?;
    let mut records = Vec::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        match serde_json::from_str::<AttributionRecord>(line) {
            Ok(r) if !r.positions.is_empty() => records.push(r),
            Ok(r) => log::warn!("attribution record {:?} has no positions", r.id),
            Err(e) => log::warn!(
                "{}:{}: skipping malformed record: {e}",
                attr_path.display(),
                i + 1
            ),
        }
    }
    if records.is_empty() {
        return Err(missing(format!(
            "no attribution records in {}",
            attr_path.display()
        )));
    }

    let vocab = resolved.backend.vocab_size();
    let backend = &*resolved.backend;
    let work = |rec: &AttributionRecord| {
        let seq = TokenSequence::new(rec.tokens.clone(), vocab)?;
        evaluate_attributions(
            backend,
            &seq,
            &rec.attributions(),
            cfg.samples,
            cfg.reagent.seed,
        )
    };

    let path = report_path(cfg, &resolved.report_hash(cfg));
    let mut lines = Vec::new();
    let mut summary = EvaluateSummary {
        path: path.clone(),
        evaluated: 0,
        failed: Vec::new(),
    };
    let outcome = ordered_for_each(&pool(cfg.workers)?, &records, work, |i, out| {
        let id = &records[i].id;
        let rendered: Vec<ReportLine> = match out {
            Ok(report) => {
                summary.evaluated += 1;
                report_lines(id, &report)
            }
            Err(e) => {
                log::warn!("cannot evaluate record {id:?}: {e}");
                summary.failed.push(id.clone());
                vec![ReportLine::Failure {
                    id: id.clone(),
                    error: e.to_string(),
                }]
            }
        };
        for line in rendered {
            lines.push(serde_json::to_string(&line)?);
        }
        Ok(())
    });
    if outcome.is_ok() {
        if let Some(line) = agreement_line(&records)? {
            lines.push(serde_json::to_string(&line).map_err(Error::from)?);
        }
    }
    write_atomically(&path, &lines)?;
    outcome?;
    Ok(summary)
}

fn agreement_line(records: &[AttributionRecord]) -> Result<Option<ReportLine>> {
    let mut rationales = Vec::new();
    let mut annotations = Vec::new();
    for rec in records {
        let Some(ann) = &rec.annotations else {
            continue;
        };
        let target = ann.target_pos_for(rec.tokens.len());
        let Some(pos) = rec.positions.iter().find(|p| p.target_pos == target) else {
            log::warn!(
                "record {:?} has no attribution at annotated position {target}",
                rec.id
            );
            continue;
        };
        let annotation = match ann.to_annotation(rec.tokens.len()) {
            Ok(a) => a,
            Err(e) => {
                log::warn!("record {:?}: {e}", rec.id);
                continue;
            }
        };
        let attribution = TargetAttribution::from(pos);
        rationales.push(extract_rationale(
            &attribution.state,
            annotation.rationale_length,
        ));
        annotations.push(annotation);
    }
    if annotations.is_empty() {
        return Ok(None);
    }
    let (ante_ratio, no_d_ratio) = agreement_ratios(&rationales, &annotations)?;
    Ok(Some(ReportLine::Agreement {
        ante_ratio,
        no_d_ratio,
        items: annotations.len(),
    }))
}

fn finish<T>(
    result: std::result::Result<T, CommandError>,
    describe: impl FnOnce(&T) -> String,
) -> ExitStatus {
    match result {
        Ok(v) => {
            log::info!("{}", describe(&v));
            ExitStatus::Success
        }
        Err(CommandError { status, error }) => {
            eprintln!("error: {error}");
            status
        }
    }
}

pub fn cmd_attribute(cfg: &RunConfig) -> ExitStatus {
    finish(run_attribute(cfg), |s| {
        format!(
            "wrote {} attribution records ({} reused, {} skipped) to {}",
            s.written,
            s.reused,
            s.skipped.len(),
            s.path.display()
        )
    })
}

pub fn cmd_evaluate(cfg: &RunConfig) -> ExitStatus {
    finish(run_evaluate(cfg), |s| {
        format!(
            "evaluated {} records ({} failed) into {}",
            s.evaluated,
            s.failed.len(),
            s.path.display()
        )
    })
}

pub fn cmd_serve(args: &ServeArgs) -> ExitStatus {
    let seed = match args.backend.parse() {
        Ok(BackendDescriptor::Toy { seed }) => seed,
        Ok(BackendDescriptor::Remote { .. }) => {
            eprintln!("error: only the toy backend can be served");
            return ExitStatus::InvalidConfig;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitStatus::InvalidConfig;
        }
    };
    let model = (|| -> Result<ServedModel> {
        let lm = ToyLM::new(ToyConfig {
            seed,
            ..ToyConfig::default()
        })?;
        let vocab = lm.vocab_size();
        let fill: Arc<dyn FillModel> = Arc::new(ToyFillModel::new(vocab, seed)?);
        Ok(ServedModel {
            backend: Arc::new(lm),
            fill: Some(fill),
            tags: Some(Arc::new(PosTagTable::toy(vocab, seed)?)),
        })
    })();
    let result = model.and_then(|m| {
        log::info!("serving on http://{}", args.addr);
        serve_blocking(m, args.addr)
    });
    finish(result.map_err(CommandError::from), |_| {
        "server stopped".into()
    })
}

/// Dispatches a parsed command line and returns the process exit status.
pub fn run(cli: Cli) -> ExitStatus {
    let (args, attribute) = match cli.command {
        Command::Serve(args) => return cmd_serve(&args),
        Command::Attribute(args) => (args, true),
        Command::Evaluate(args) => (args, false),
    };
    let cfg = match RunConfig::from_args(&args, std::env::var(AUTH_TOKEN_ENV).ok()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitStatus::InvalidConfig;
        }
    };
    if attribute {
        cmd_attribute(&cfg)
    } else {
        cmd_evaluate(&cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backend_descriptors_parse() {
        assert_eq!(
            "toy".parse::<BackendDescriptor>().unwrap(),
            BackendDescriptor::Toy { seed: 0 }
        );
        assert_eq!(
            "toy:7".parse::<BackendDescriptor>().unwrap(),
            BackendDescriptor::Toy { seed: 7 }
        );
        assert!(matches!(
            "http://localhost:1/".parse::<BackendDescriptor>().unwrap(),
            BackendDescriptor::Remote { .. }
        ));
        assert!("toy:x".parse::<BackendDescriptor>().is_err());
        assert!("ftp://x".parse::<BackendDescriptor>().is_err());
    }

    #[test]
    fn hash_tracks_settings() {
        let cfg = RunConfig::new(BackendDescriptor::Toy { seed: 0 }, "in.jsonl", "out");
        let resolved = ResolvedBackend::connect(&cfg).unwrap();
        let a = resolved.attribution_hash(&cfg);
        assert_eq!(a, resolved.attribution_hash(&cfg.clone()));
        let mut other = cfg.clone();
        other.reagent.replace_ratio = 0.2;
        assert_ne!(a, resolved.attribution_hash(&other));
        let mut more_samples = cfg.clone();
        more_samples.samples = 60;
        assert_eq!(a, resolved.attribution_hash(&more_samples));
        assert_ne!(
            resolved.report_hash(&cfg),
            resolved.report_hash(&more_samples)
        );
    }

    #[test]
    fn stem_and_ids_are_file_safe() {
        let cfg = RunConfig::new(
            BackendDescriptor::Toy { seed: 0 },
            "/data/my prompts.v2.jsonl",
            "o",
        );
        assert_eq!(cfg.stem(), "my_prompts");
        let p = heatmap_path(&cfg, "../x/y", "ab", RenderFormat::Ansi);
        assert_eq!(p, Path::new("o/heatmaps/___x_y.ab.ansi"));
    }

    #[test]
    fn invalid_settings_map_to_config_exit() {
        let mut cfg = RunConfig::new(BackendDescriptor::Toy { seed: 0 }, "x", "y");
        cfg.stride = 0;
        let err = run_attribute(&cfg).unwrap_err();
        assert_eq!(err.status, ExitStatus::InvalidConfig);
    }
}
