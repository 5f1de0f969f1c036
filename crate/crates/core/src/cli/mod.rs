//! The `teachmix` command-line front end.
//!
//! Every subcommand reads one TOML config (see [`RunConfig`]), works inside
//! the run directory `output_dir`, and writes `manifests/<command>.json`
//! recording the config digest, input and output file digests, and counts.
//!
//! Run directory layout:
//!
//! ```text
//! config.toml                 snapshot of the effective config
//! manifests/<command>.json
//! signals/cot.jsonl           TeachingSignal per line
//! signals/pcot.jsonl
//! signals/skill_artifacts.jsonl
//! decisions/errors_cot.json   validation errors per skill
//! decisions/errors_pcot.json
//! decisions/decisions.jsonl   MixingDecision per line
//! exports/teaching_<variant>.jsonl
//! exports/test_inputs.jsonl   stage-1 inputs for student inference
//! reports/                    corpus stats, eval reports
//! cache/completions.jsonl     teacher completion cache
//! ```
//!
//! Exit codes: 0 success, 1 unexpected I/O failure, 2 config or input error,
//! 3 partial failure (pending work recorded in the manifest), 4 fatal backend
//! error.

mod config;

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::DateTime;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use config::{Overrides, RunConfig};

use crate::corpus::{ingest_corpus, Corpus, Split, PROBLEMS_FILE};
use crate::demo::{demo_student, FIXTURE_PROBLEMS};
use crate::digest::Digest;
use crate::eval::{load_predictions, score, ClassColumn};
use crate::generate::{
    generate_qa_cot, generate_qa_pcot, generate_skill_artifacts, GenerationOptions, PendingItem,
    RunSummary,
};
use crate::jsonl;
use crate::mixing::{
    annotated_records, assemble_mixed, assemble_single_kind, blend_with_annotated,
    cover_training_skills, evaluate_signal_errors, language_input, load_decisions, load_records,
    save_decisions, save_records, select_per_skill, AnswerModel, KindPredictions, RationaleReader,
    ScriptedOracle, TeachingRecord,
};
use crate::signals::{load_artifacts, save_artifacts, SignalKind, SignalSet};
use crate::teacher::{build_backend, CompletionCache, FixedClock, TeacherClient, TeacherError};

pub const COT_SIGNALS: &str = "signals/cot.jsonl";
pub const PCOT_SIGNALS: &str = "signals/pcot.jsonl";
pub const SKILL_ARTIFACTS: &str = "signals/skill_artifacts.jsonl";
pub const ERRORS_COT: &str = "decisions/errors_cot.json";
pub const ERRORS_PCOT: &str = "decisions/errors_pcot.json";
pub const DECISIONS: &str = "decisions/decisions.jsonl";
pub const MIXED_EXPORT: &str = "exports/teaching_mixed.jsonl";
pub const TEST_INPUTS: &str = "exports/test_inputs.jsonl";

#[derive(Debug, Parser)]
#[command(
    name = "teachmix",
    version,
    about = "Generate, mix and evaluate teacher rationales"
)]
pub struct Cli {
    /// Run configuration (TOML). Required by every command except `demo`.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub corpus_root: Option<PathBuf>,
    /// Override `backend_id`.
    #[arg(long, global = true)]
    pub backend: Option<String>,
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate the corpus and print split and class statistics.
    Ingest,
    /// Generate answer-hinted CoT rationales.
    GenCot {
        #[arg(long, value_delimiter = ',', default_value = "train,val")]
        splits: Vec<Split>,
    },
    /// Generate a lecture and a plan for every training skill.
    GenSkillArtifacts,
    /// Generate plan-based rationales from the skill artifacts.
    GenPcot {
        #[arg(long, value_delimiter = ',', default_value = "train,val")]
        splits: Vec<Split>,
    },
    /// Score both rationale kinds on val, pick one per skill, and export the mix.
    Mix {
        /// JSON `{"COT": {id: index|null}, "PCOT": {...}}` of answer-model
        /// predictions. Without it the answer stated in each rationale is used.
        #[arg(long)]
        answers: Option<PathBuf>,
    },
    /// Replace all but a proportion `p` of the mixed records with annotated ones.
    Blend {
        #[arg(long)]
        p: f64,
    },
    /// Write a teaching dataset variant and the test-split inference inputs.
    Export {
        #[arg(long, value_enum, default_value_t = Variant::Mixed)]
        variant: Variant,
    },
    /// Score a predictions file `{id: index | text | null}`.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// End-to-end run on the bundled 20-example corpus with the mock teacher.
    Demo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    Mixed,
    Cot,
    Pcot,
    Annotated,
}

impl Variant {
    fn as_str(self) -> &'static str {
        match self {
            Variant::Mixed => "mixed",
            Variant::Cot => "cot",
            Variant::Pcot => "pcot",
            Variant::Annotated => "annotated",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(Vec<String>),
    Input(String),
    Backend(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Backend(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(errs) => {
                writeln!(f, "invalid configuration:")?;
                for e in errs {
                    writeln!(f, "  {e}")?;
                }
                Ok(())
            }
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Backend(m) => write!(f, "backend error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<TeacherError> for CliError {
    fn from(e: TeacherError) -> Self {
        CliError::Backend(e.to_string())
    }
}

impl From<jsonl::JsonlError> for CliError {
    fn from(e: jsonl::JsonlError) -> Self {
        match e {
            jsonl::JsonlError::Io { .. } => CliError::Io(e.to_string()),
            jsonl::JsonlError::Parse { .. } => CliError::Input(e.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Complete,
    Partial,
    Failed,
}

impl Status {
    fn exit_code(self) -> i32 {
        match self {
            Status::Complete => 0,
            Status::Partial => 3,
            Status::Failed => 4,
        }
    }

    fn of(summary: &RunSummary) -> Self {
        if !summary.failed.is_empty() {
            Status::Failed
        } else if !summary.pending.is_empty() {
            Status::Partial
        } else {
            Status::Complete
        }
    }
}

/// Written to `manifests/<command>.json` after every command.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub status: Status,
    pub config_digest: Digest,
    pub inputs: BTreeMap<String, Digest>,
    pub outputs: BTreeMap<String, Digest>,
    pub counts: BTreeMap<String, usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backend_calls: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_hits: Option<u64>,
    pub pending: Vec<PendingItem>,
    pub failed: Vec<PendingItem>,
}

/// A run directory bound to its configuration.
struct Run {
    cfg: RunConfig,
    dir: PathBuf,
    manifest: Manifest,
}

impl Run {
    fn start(cfg: RunConfig, command: &str) -> Result<Self, CliError> {
        let dir = cfg.output_dir.clone();
        std::fs::create_dir_all(&dir).map_err(|e| {
            CliError::Config(vec![format!(
                "output_dir: cannot create {}: {e}",
                dir.display()
            )])
        })?;
        let snapshot = dir.join("config.toml");
        std::fs::write(&snapshot, cfg.to_toml()).map_err(|e| {
            CliError::Config(vec![format!(
                "output_dir: not writable ({}): {e}",
                snapshot.display()
            )])
        })?;
        let manifest = Manifest {
            command: command.to_string(),
            status: Status::Complete,
            config_digest: cfg.digest(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            counts: BTreeMap::new(),
            backend_calls: None,
            cache_hits: None,
            pending: Vec::new(),
            failed: Vec::new(),
        };
        Ok(Run { cfg, dir, manifest })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn load_corpus(&mut self) -> Result<Corpus, CliError> {
        let root = &self.cfg.corpus_root;
        let corpus = ingest_corpus(root, self.cfg.schema)
            .map_err(|e| CliError::Input(format!("{}: {e}", root.display())))?;
        let file = root.join(PROBLEMS_FILE);
        let bytes = std::fs::read(&file).map_err(io_err(&file))?;
        self.manifest
            .inputs
            .insert("corpus".into(), Digest::of(bytes));
        Ok(corpus)
    }

    fn note_input(&mut self, rel: &str) -> Result<(), CliError> {
        let path = self.path(rel);
        if path.exists() {
            let bytes = std::fs::read(&path).map_err(io_err(&path))?;
            self.manifest
                .inputs
                .insert(rel.to_string(), Digest::of(bytes));
        }
        Ok(())
    }

    fn note_output(&mut self, rel: &str) -> Result<(), CliError> {
        let path = self.path(rel);
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        self.manifest
            .outputs
            .insert(rel.to_string(), Digest::of(bytes));
        Ok(())
    }

    fn write_output(&mut self, rel: &str, contents: &str) -> Result<(), CliError> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        std::fs::write(&path, contents).map_err(io_err(&path))?;
        self.note_output(rel)
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("report serializes");
        text.push('\n');
        self.write_output(rel, &text)
    }

    fn count(&mut self, key: &str, n: usize) {
        self.manifest.counts.insert(key.to_string(), n);
    }

    fn client(&self) -> Result<TeacherClient, CliError> {
        let spec = self
            .cfg
            .backend_spec()
            .expect("validated config names a registered backend");
        let backend = build_backend(spec)?;
        let cache = CompletionCache::open(&self.cfg.cache_dir())?;
        let mut client = TeacherClient::new(cache)
            .with_backend(spec.id.clone(), backend)
            .with_retry(self.cfg.retry);
        if self.cfg.fixed_timestamps {
            client = client.with_clock(Arc::new(FixedClock(DateTime::UNIX_EPOCH)));
        }
        Ok(client)
    }

    fn options(&self) -> GenerationOptions {
        GenerationOptions {
            backend_id: self.cfg.backend_id.clone(),
            decoding: self.cfg.decoding,
            parallelism: self.cfg.parallelism,
        }
    }

    fn record_summary(&mut self, summary: RunSummary, client: &TeacherClient) {
        let stats = client.stats();
        self.manifest.backend_calls = Some(stats.backend_calls);
        self.manifest.cache_hits = Some(stats.cache_hits);
        self.manifest.status = Status::of(&summary);
        self.count("completed", summary.completed);
        self.count("skipped", summary.skipped);
        self.count("pending", summary.pending.len());
        self.count("failed", summary.failed.len());
        self.manifest.pending = summary.pending;
        self.manifest.failed = summary.failed;
    }

    fn finish(self) -> Result<i32, CliError> {
        let rel = format!("manifests/{}.json", self.manifest.command);
        let path = self.dir.join(&rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let mut text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(io_err(&path))?;
        match self.manifest.status {
            Status::Complete => {}
            Status::Partial => eprintln!(
                "{}: {} item(s) pending; rerun to resume (see {rel})",
                self.manifest.command,
                self.manifest.pending.len()
            ),
            Status::Failed => eprintln!(
                "{}: {} item(s) failed with fatal backend errors (see {rel})",
                self.manifest.command,
                self.manifest.failed.len()
            ),
        }
        Ok(self.manifest.status.exit_code())
    }
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprint!("{e}");
            if !matches!(e, CliError::Config(_)) {
                eprintln!();
            }
            e.exit_code()
        }
    }
}

fn overrides(cli: &Cli) -> Overrides {
    Overrides {
        corpus_root: cli.corpus_root.clone(),
        backend_id: cli.backend.clone(),
        parallelism: cli.parallelism,
        seed: cli.seed,
        output_dir: cli.output_dir.clone(),
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match (&cli.config, &cli.command) {
        (Some(path), _) => RunConfig::load(path).map_err(CliError::Config)?,
        (None, Command::Demo) => {
            let out = cli
                .output_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("teachmix-demo"));
            RunConfig::demo(&out)
        }
        (None, _) => {
            return Err(CliError::Config(
                vec!["config: --config is required".into()],
            ))
        }
    };
    cfg.apply(&overrides(cli));
    cfg.validate().map_err(CliError::Config)?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<i32, CliError> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Ingest => cmd_ingest(cfg),
        Command::GenCot { splits } => cmd_gen_signals(cfg, SignalKind::Cot, splits),
        Command::GenSkillArtifacts => cmd_gen_skill_artifacts(cfg),
        Command::GenPcot { splits } => cmd_gen_signals(cfg, SignalKind::Pcot, splits),
        Command::Mix { answers } => cmd_mix(cfg, answers.as_deref()),
        Command::Blend { p } => cmd_blend(cfg, *p),
        Command::Export { variant } => cmd_export(cfg, *variant),
        Command::Eval { predictions, split } => cmd_eval(cfg, predictions, *split),
        Command::Demo => cmd_demo(cfg),
    }
}

#[derive(Serialize)]
struct CorpusStats {
    total: usize,
    splits: BTreeMap<Split, usize>,
    skills: usize,
    classes: BTreeMap<ClassColumn, usize>,
    rejected: usize,
}

fn cmd_ingest(cfg: RunConfig) -> Result<i32, CliError> {
    let mut run = Run::start(cfg, "ingest")?;
    let corpus = run.load_corpus()?;
    let mut classes: BTreeMap<ClassColumn, usize> =
        ClassColumn::ALL.iter().map(|c| (*c, 0)).collect();
    for ex in corpus.examples() {
        for col in ClassColumn::of(ex) {
            *classes.get_mut(&col).expect("all columns present") += 1;
        }
    }
    let skills: std::collections::BTreeSet<&str> =
        corpus.examples().iter().map(|e| e.skill.as_str()).collect();
    let stats = CorpusStats {
        total: corpus.len(),
        splits: Split::ALL
            .iter()
            .map(|s| (*s, corpus.split_count(*s)))
            .collect(),
        skills: skills.len(),
        classes,
        rejected: corpus.rejected().len(),
    };

    println!("examples: {}", stats.total);
    for (split, n) in &stats.splits {
        println!("  {split:<5} {n}");
    }
    println!("skills: {}", stats.skills);
    let row: Vec<String> = stats
        .classes
        .iter()
        .map(|(c, n)| format!("{}={n}", c.name()))
        .collect();
    println!("classes: {}", row.join(" "));
    if stats.rejected > 0 {
        println!("rejected records: {}", stats.rejected);
    }

    for (split, n) in &stats.splits {
        run.count(split.as_str(), *n);
    }
    run.count("rejected", stats.rejected);
    run.write_json("reports/corpus_stats.json", &stats)?;
    run.finish()
}

fn cmd_gen_signals(cfg: RunConfig, kind: SignalKind, splits: &[Split]) -> Result<i32, CliError> {
    let (command, rel) = match kind {
        SignalKind::Cot => ("gen-cot", COT_SIGNALS),
        SignalKind::Pcot => ("gen-pcot", PCOT_SIGNALS),
    };
    let mut run = Run::start(cfg, command)?;
    let corpus = run.load_corpus()?;
    let client = run.client()?;
    let opts = run.options();
    run.note_input(rel)?;
    let mut signals = SignalSet::load(&run.path(rel))?;
    let artifacts = if kind == SignalKind::Pcot {
        run.note_input(SKILL_ARTIFACTS)?;
        let a = load_artifacts(&run.path(SKILL_ARTIFACTS))?;
        if a.is_empty() {
            return Err(CliError::Input(format!(
                "{SKILL_ARTIFACTS} is missing or empty; run gen-skill-artifacts first"
            )));
        }
        a
    } else {
        Default::default()
    };

    let mut summary = RunSummary::default();
    let mut splits = splits.to_vec();
    splits.sort();
    splits.dedup();
    for split in splits {
        let s = match kind {
            SignalKind::Cot => generate_qa_cot(
                &corpus,
                split,
                &client,
                &run.cfg.prompt,
                &opts,
                &mut signals,
            ),
            SignalKind::Pcot => generate_qa_pcot(
                &corpus,
                split,
                &artifacts,
                &client,
                &run.cfg.prompt,
                &opts,
                &mut signals,
            ),
        }
        .map_err(|e| CliError::Config(vec![format!("prompt: {e}")]))?;
        summary.merge(s);
    }
    signals.save(&run.path(rel))?;
    run.note_output(rel)?;
    run.count("signals", signals.len());
    run.record_summary(summary, &client);
    run.finish()
}

fn cmd_gen_skill_artifacts(cfg: RunConfig) -> Result<i32, CliError> {
    let mut run = Run::start(cfg, "gen-skill-artifacts")?;
    let corpus = run.load_corpus()?;
    let client = run.client()?;
    let opts = run.options();
    run.note_input(SKILL_ARTIFACTS)?;
    let mut artifacts = load_artifacts(&run.path(SKILL_ARTIFACTS))?;
    let summary =
        generate_skill_artifacts(&corpus, &client, &run.cfg.prompt, &opts, &mut artifacts)
            .map_err(|e| CliError::Config(vec![format!("prompt: {e}")]))?;
    save_artifacts(&run.path(SKILL_ARTIFACTS), &artifacts)?;
    run.note_output(SKILL_ARTIFACTS)?;
    run.count("skills", artifacts.len());
    run.record_summary(summary, &client);
    run.finish()
}

fn load_signals(run: &mut Run) -> Result<SignalSet, CliError> {
    let mut signals = SignalSet::new();
    for rel in [COT_SIGNALS, PCOT_SIGNALS] {
        run.note_input(rel)?;
        signals.extend(SignalSet::load(&run.path(rel))?);
    }
    Ok(signals)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn cmd_mix(cfg: RunConfig, answers: Option<&Path>) -> Result<i32, CliError> {
    let mut run = Run::start(cfg, "mix")?;
    let corpus = run.load_corpus()?;
    let signals = load_signals(&mut run)?;
    let val: Vec<_> = corpus.split(Split::Val).collect();
    let train: Vec<_> = corpus.split(Split::Train).collect();

    let model: Box<dyn AnswerModel> = match answers {
        Some(path) => {
            let preds: KindPredictions = read_json(path)?;
            let bytes = std::fs::read(path).map_err(io_err(path))?;
            run.manifest
                .inputs
                .insert("answers".into(), Digest::of(bytes));
            Box::new(
                ScriptedOracle::from_predictions(&preds, &signals)
                    .map_err(|e| CliError::Input(e.to_string()))?,
            )
        }
        None => Box::new(RationaleReader::new(corpus.examples())),
    };

    let input_err = |e: crate::mixing::MixingError| CliError::Input(e.to_string());
    let cot = evaluate_signal_errors(&val, &signals, SignalKind::Cot, model.as_ref())
        .map_err(input_err)?;
    let pcot = evaluate_signal_errors(&val, &signals, SignalKind::Pcot, model.as_ref())
        .map_err(input_err)?;
    run.write_json(ERRORS_COT, &cot)?;
    run.write_json(ERRORS_PCOT, &pcot)?;

    let mut decisions = select_per_skill(&cot, &pcot).map_err(input_err)?;
    cover_training_skills(&mut decisions, &train);
    save_decisions(&run.path(DECISIONS), &decisions)?;
    run.note_output(DECISIONS)?;

    let records = assemble_mixed(&train, &signals, &decisions).map_err(input_err)?;
    save_records(&run.path(MIXED_EXPORT), &records)?;
    run.note_output(MIXED_EXPORT)?;

    let n_pcot = decisions
        .values()
        .filter(|d| d.chosen == SignalKind::Pcot)
        .count();
    println!(
        "{} skills: {} PCoT, {} CoT; {} teaching records",
        decisions.len(),
        n_pcot,
        decisions.len() - n_pcot,
        records.len()
    );
    run.count("skills", decisions.len());
    run.count("skills_pcot", n_pcot);
    run.count("records", records.len());
    run.finish()
}

fn cmd_blend(cfg: RunConfig, p: f64) -> Result<i32, CliError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(CliError::Config(vec![format!(
            "--p: {p} is outside [0, 1]"
        )]));
    }
    let mut run = Run::start(cfg, "blend")?;
    let corpus = run.load_corpus()?;
    run.note_input(MIXED_EXPORT)?;
    let mixed = load_records(&run.path(MIXED_EXPORT))?;
    if mixed.is_empty() {
        return Err(CliError::Input(format!(
            "{MIXED_EXPORT} is missing or empty; run mix first"
        )));
    }
    let train: Vec<_> = corpus.split(Split::Train).collect();
    let annotated = annotated_records(&train).map_err(|e| CliError::Input(e.to_string()))?;
    let blended = blend_with_annotated(&mixed, &annotated, p, run.cfg.seed)
        .map_err(|e| CliError::Input(e.to_string()))?;
    let rel = format!(
        "exports/teaching_blend_p{}.jsonl",
        (p * 100.0).round() as u32
    );
    save_records(&run.path(&rel), &blended)?;
    run.note_output(&rel)?;
    let kept = blended.iter().zip(&mixed).filter(|(b, m)| b == m).count();
    println!(
        "{rel}: {kept} generated, {} annotated",
        blended.len() - kept
    );
    run.count("records", blended.len());
    run.count("generated", kept);
    run.finish()
}

#[derive(Serialize)]
struct InferenceInput<'a> {
    example_id: &'a str,
    stage1_input: String,
    options: &'a [String],
    image_ref: Option<&'a str>,
}

fn cmd_export(cfg: RunConfig, variant: Variant) -> Result<i32, CliError> {
    let mut run = Run::start(cfg, &format!("export-{}", variant.as_str()))?;
    let corpus = run.load_corpus()?;
    let train: Vec<_> = corpus.split(Split::Train).collect();
    let input_err = |e: crate::mixing::MixingError| CliError::Input(e.to_string());
    let records: Vec<TeachingRecord> = match variant {
        Variant::Mixed => {
            let signals = load_signals(&mut run)?;
            run.note_input(DECISIONS)?;
            let decisions = load_decisions(&run.path(DECISIONS))?;
            assemble_mixed(&train, &signals, &decisions).map_err(input_err)?
        }
        Variant::Cot | Variant::Pcot => {
            let (kind, rel) = if variant == Variant::Cot {
                (SignalKind::Cot, COT_SIGNALS)
            } else {
                (SignalKind::Pcot, PCOT_SIGNALS)
            };
            run.note_input(rel)?;
            let signals = SignalSet::load(&run.path(rel))?;
            assemble_single_kind(&train, &signals, kind).map_err(input_err)?
        }
        Variant::Annotated => annotated_records(&train).map_err(input_err)?,
    };
    let rel = format!("exports/teaching_{}.jsonl", variant.as_str());
    save_records(&run.path(&rel), &records)?;
    run.note_output(&rel)?;

    let inputs: Vec<InferenceInput<'_>> = corpus
        .split(Split::Test)
        .map(|ex| InferenceInput {
            example_id: &ex.id,
            stage1_input: language_input(ex),
            options: &ex.options,
            image_ref: ex.image_ref.as_deref(),
        })
        .collect();
    run.write_output(TEST_INPUTS, &jsonl::to_string(&inputs))?;
    println!(
        "{rel}: {} records; {TEST_INPUTS}: {} inputs",
        records.len(),
        inputs.len()
    );
    run.count("records", records.len());
    run.count("test_inputs", inputs.len());
    run.finish()
}

fn cmd_eval(cfg: RunConfig, predictions: &Path, split: Split) -> Result<i32, CliError> {
    let mut run = Run::start(cfg, "eval")?;
    let corpus = run.load_corpus()?;
    let preds =
        load_predictions(predictions, &corpus).map_err(|e| CliError::Input(e.to_string()))?;
    let bytes = std::fs::read(predictions).map_err(io_err(predictions))?;
    run.manifest
        .inputs
        .insert("predictions".into(), Digest::of(bytes));
    eval_into(&mut run, &corpus, &preds, split)?;
    run.finish()
}

fn eval_into(
    run: &mut Run,
    corpus: &Corpus,
    preds: &HashMap<String, Option<usize>>,
    split: Split,
) -> Result<(), CliError> {
    let report = score(corpus.split(split), preds).map_err(|e| CliError::Input(e.to_string()))?;
    let table = report.render_table();
    print!("{table}");
    run.write_json(&format!("reports/eval_{split}.json"), &report)?;
    run.write_output(&format!("reports/eval_{split}.txt"), &table)?;
    run.count("n", report.n);
    run.count("correct", report.correct);
    Ok(())
}

/// Every stage in sequence, stopping at the first nonzero exit.
fn cmd_demo(cfg: RunConfig) -> Result<i32, CliError> {
    let corpus_file = cfg.corpus_root.join(PROBLEMS_FILE);
    std::fs::create_dir_all(&cfg.corpus_root).map_err(io_err(&cfg.corpus_root))?;
    std::fs::write(&corpus_file, FIXTURE_PROBLEMS).map_err(io_err(&corpus_file))?;

    type Step = Box<dyn Fn(RunConfig) -> Result<i32, CliError>>;
    let train_val = [Split::Train, Split::Val];
    let steps: Vec<(&str, Step)> = vec![
        ("ingest", Box::new(cmd_ingest)),
        (
            "gen-cot",
            Box::new(move |c| cmd_gen_signals(c, SignalKind::Cot, &train_val)),
        ),
        ("gen-skill-artifacts", Box::new(cmd_gen_skill_artifacts)),
        (
            "gen-pcot",
            Box::new(move |c| cmd_gen_signals(c, SignalKind::Pcot, &train_val)),
        ),
        ("mix", Box::new(|c| cmd_mix(c, None))),
        ("export cot", Box::new(|c| cmd_export(c, Variant::Cot))),
        ("export pcot", Box::new(|c| cmd_export(c, Variant::Pcot))),
        (
            "export annotated",
            Box::new(|c| cmd_export(c, Variant::Annotated)),
        ),
        ("export mixed", Box::new(|c| cmd_export(c, Variant::Mixed))),
        ("blend", Box::new(|c| cmd_blend(c, 0.5))),
    ];
    for (name, step) in steps {
        println!("== {name}");
        let code = step(cfg.clone())?;
        if code != 0 {
            return Ok(code);
        }
    }

    println!("== eval (stand-in student)");
    let mut run = Run::start(cfg, "demo")?;
    let corpus = run.load_corpus()?;
    let preds = demo_student(corpus.split(Split::Test));
    let as_json: BTreeMap<&String, &Option<usize>> = preds.iter().collect();
    run.write_json("reports/predictions_demo.json", &as_json)?;
    eval_into(&mut run, &corpus, &preds, Split::Test)?;
    run.finish()
}
