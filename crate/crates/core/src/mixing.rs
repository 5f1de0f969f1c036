//! Per-skill choice between CoT and plan-based rationales, and assembly of the
//! two-stage teaching records.
//!
//! An [`AnswerModel`] answers every validation example twice, once with each
//! kind of rationale. For each skill the kind with strictly fewer errors wins;
//! ties go to CoT. Every training example of the skill then carries the
//! winning kind's rationale.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::QAExample;
use crate::eval::extract_answer;
use crate::jsonl::{self, JsonlError};
use crate::prompt::{option_letter, qa_block};
use crate::signals::{SignalKind, SignalSet};

/// Line placed between the question block and the rationale in stage-2 inputs.
pub const SOLUTION_SEPARATOR: &str = "\nSolution:\n";

/// What the answer model sees for one example.
#[derive(Debug, Clone, Copy)]
pub struct AnswerQuery<'a> {
    pub example_id: &'a str,
    /// Question, context and options, as in [`TeachingRecord::stage1_input`].
    pub language_input: &'a str,
    pub image_ref: Option<&'a str>,
    pub rationale: &'a str,
}

/// Predicts an option index from a question and a rationale. `None` means no
/// answer could be produced and counts as an error.
pub trait AnswerModel: Sync {
    fn predict(&self, query: &AnswerQuery<'_>) -> Option<usize>;
}

/// Reads the answer stated in the rationale itself.
#[derive(Debug, Clone)]
pub struct RationaleReader {
    options: HashMap<String, Vec<String>>,
}

impl RationaleReader {
    pub fn new<'a>(examples: impl IntoIterator<Item = &'a QAExample>) -> Self {
        RationaleReader {
            options: examples
                .into_iter()
                .map(|e| (e.id.clone(), e.options.clone()))
                .collect(),
        }
    }
}

impl AnswerModel for RationaleReader {
    fn predict(&self, query: &AnswerQuery<'_>) -> Option<usize> {
        let options = self.options.get(query.example_id)?;
        extract_answer(query.rationale, options)
    }
}

/// Fixed predictions keyed by example id and rationale text; anything not
/// scripted falls back to `default`.
#[derive(Debug, Clone, Default)]
pub struct ScriptedOracle {
    table: HashMap<(String, String), Option<usize>>,
    default: Option<usize>,
}

impl ScriptedOracle {
    pub fn new(default: Option<usize>) -> Self {
        ScriptedOracle {
            table: HashMap::new(),
            default,
        }
    }

    pub fn script(&mut self, example_id: &str, rationale: &str, prediction: Option<usize>) {
        self.table
            .insert((example_id.to_string(), rationale.to_string()), prediction);
    }

    /// Build from a per-kind prediction table (e.g. a student's answers file),
    /// resolving each kind to the rationale text stored in `signals`.
    pub fn from_predictions(
        predictions: &KindPredictions,
        signals: &SignalSet,
    ) -> Result<Self, MixingError> {
        let mut oracle = ScriptedOracle::new(None);
        let mut missing = Vec::new();
        for (kind, preds) in predictions {
            for (id, pred) in preds {
                match signals.get(id, *kind) {
                    Some(sig) => oracle.script(id, &sig.rationale, *pred),
                    None => missing.push(format!("{id}/{kind}")),
                }
            }
        }
        if !missing.is_empty() {
            return Err(MixingError::MissingSignals(missing));
        }
        Ok(oracle)
    }
}

impl AnswerModel for ScriptedOracle {
    fn predict(&self, query: &AnswerQuery<'_>) -> Option<usize> {
        self.table
            .get(&(query.example_id.to_string(), query.rationale.to_string()))
            .copied()
            .unwrap_or(self.default)
    }
}

/// `{"COT": {id: index|null}, "PCOT": {...}}`
pub type KindPredictions = BTreeMap<SignalKind, BTreeMap<String, Option<usize>>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillErrors {
    pub errors: usize,
    pub n_val: usize,
}

/// Validation errors per skill for one signal kind.
pub type ErrorTable = BTreeMap<String, SkillErrors>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixingDecision {
    pub skill: String,
    pub chosen: SignalKind,
    pub cot_errors: usize,
    pub pcot_errors: usize,
    pub n_val: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RecordKind {
    Cot,
    Pcot,
    Annotated,
}

impl From<SignalKind> for RecordKind {
    fn from(k: SignalKind) -> Self {
        match k {
            SignalKind::Cot => RecordKind::Cot,
            SignalKind::Pcot => RecordKind::Pcot,
        }
    }
}

/// One exported training row. Field order here is the JSONL field order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeachingRecord {
    pub example_id: String,
    pub skill: String,
    pub kind: RecordKind,
    /// Question, context and options.
    pub stage1_input: String,
    /// The rationale.
    pub stage1_target: String,
    /// `stage1_input + SOLUTION_SEPARATOR + stage1_target`
    pub stage2_input: String,
    /// `The answer is (X).`
    pub stage2_target: String,
    pub image_ref: Option<String>,
}

impl TeachingRecord {
    pub fn build(example: &QAExample, kind: RecordKind, rationale: &str) -> Self {
        let stage1_input = language_input(example);
        let stage1_target = rationale.trim().to_string();
        TeachingRecord {
            example_id: example.id.clone(),
            skill: example.skill.clone(),
            kind,
            stage2_input: stage2_input(&stage1_input, &stage1_target),
            stage1_input,
            stage1_target,
            stage2_target: answer_target(example.answer_index),
            image_ref: example.image_ref.clone(),
        }
    }
}

/// Student-side text input for an example.
pub fn language_input(example: &QAExample) -> String {
    qa_block(example)
}

pub fn stage2_input(stage1_input: &str, rationale: &str) -> String {
    format!("{stage1_input}{SOLUTION_SEPARATOR}{rationale}")
}

pub fn answer_target(answer_index: usize) -> String {
    format!("The answer is ({}).", option_letter(answer_index))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MixingError {
    #[error("missing signals for: {}", .0.join(", "))]
    MissingSignals(Vec<String>),
    #[error("error tables disagree on skills (only CoT: {only_cot:?}; only PCoT: {only_pcot:?})")]
    KeyMismatch {
        only_cot: Vec<String>,
        only_pcot: Vec<String>,
    },
    #[error("skill {skill:?}: validation sizes differ ({cot} vs {pcot})")]
    SizeMismatch {
        skill: String,
        cot: usize,
        pcot: usize,
    },
    #[error("no mixing decision for skills: {}", .0.join(", "))]
    UncoveredSkills(Vec<String>),
    #[error("examples without annotated lecture or solution: {}", .0.join(", "))]
    MissingAnnotation(Vec<String>),
    #[error("record sets differ in example ids")]
    IdMismatch,
    #[error("proportion {0} outside [0, 1]")]
    BadProportion(f64),
}

/// Count, per skill, validation examples the model gets wrong when given the
/// `kind` rationale.
pub fn evaluate_signal_errors(
    val: &[&QAExample],
    signals: &SignalSet,
    kind: SignalKind,
    model: &dyn AnswerModel,
) -> Result<ErrorTable, MixingError> {
    let missing: Vec<String> = val
        .iter()
        .filter(|e| signals.get(&e.id, kind).is_none())
        .map(|e| e.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(MixingError::MissingSignals(missing));
    }
    let mut table = ErrorTable::new();
    for ex in val {
        let sig = signals.get(&ex.id, kind).expect("checked above");
        let input = language_input(ex);
        let predicted = model.predict(&AnswerQuery {
            example_id: &ex.id,
            language_input: &input,
            image_ref: ex.image_ref.as_deref(),
            rationale: &sig.rationale,
        });
        let row = table.entry(ex.skill.clone()).or_insert(SkillErrors {
            errors: 0,
            n_val: 0,
        });
        row.n_val += 1;
        if predicted != Some(ex.answer_index) {
            row.errors += 1;
        }
    }
    Ok(table)
}

/// PCoT iff it made strictly fewer errors; otherwise CoT.
pub fn select_per_skill(
    cot: &ErrorTable,
    pcot: &ErrorTable,
) -> Result<BTreeMap<String, MixingDecision>, MixingError> {
    let cot_keys: BTreeSet<&String> = cot.keys().collect();
    let pcot_keys: BTreeSet<&String> = pcot.keys().collect();
    if cot_keys != pcot_keys {
        return Err(MixingError::KeyMismatch {
            only_cot: cot_keys
                .difference(&pcot_keys)
                .map(|s| s.to_string())
                .collect(),
            only_pcot: pcot_keys
                .difference(&cot_keys)
                .map(|s| s.to_string())
                .collect(),
        });
    }
    let mut out = BTreeMap::new();
    for (skill, c) in cot {
        let p = pcot[skill];
        if c.n_val != p.n_val {
            return Err(MixingError::SizeMismatch {
                skill: skill.clone(),
                cot: c.n_val,
                pcot: p.n_val,
            });
        }
        let chosen = if p.errors < c.errors {
            SignalKind::Pcot
        } else {
            SignalKind::Cot
        };
        out.insert(
            skill.clone(),
            MixingDecision {
                skill: skill.clone(),
                chosen,
                cot_errors: c.errors,
                pcot_errors: p.errors,
                n_val: c.n_val,
            },
        );
    }
    Ok(out)
}

/// Add a CoT decision (zero errors, zero validation examples) for every
/// training skill that had no validation examples.
pub fn cover_training_skills(
    decisions: &mut BTreeMap<String, MixingDecision>,
    train: &[&QAExample],
) {
    for ex in train {
        decisions
            .entry(ex.skill.clone())
            .or_insert_with(|| MixingDecision {
                skill: ex.skill.clone(),
                chosen: SignalKind::Cot,
                cot_errors: 0,
                pcot_errors: 0,
                n_val: 0,
            });
    }
}

/// One record per training example, carrying its skill's chosen rationale.
pub fn assemble_mixed(
    train: &[&QAExample],
    signals: &SignalSet,
    decisions: &BTreeMap<String, MixingDecision>,
) -> Result<Vec<TeachingRecord>, MixingError> {
    let uncovered: BTreeSet<String> = train
        .iter()
        .filter(|e| !decisions.contains_key(&e.skill))
        .map(|e| e.skill.clone())
        .collect();
    if !uncovered.is_empty() {
        return Err(MixingError::UncoveredSkills(
            uncovered.into_iter().collect(),
        ));
    }
    let missing: Vec<String> = train
        .iter()
        .flat_map(|e| {
            [SignalKind::Cot, SignalKind::Pcot]
                .into_iter()
                .filter(|k| signals.get(&e.id, *k).is_none())
                .map(|k| format!("{}/{k}", e.id))
        })
        .collect();
    if !missing.is_empty() {
        return Err(MixingError::MissingSignals(missing));
    }
    Ok(train
        .iter()
        .map(|ex| {
            let kind = decisions[&ex.skill].chosen;
            let sig = signals.get(&ex.id, kind).expect("checked above");
            TeachingRecord::build(ex, kind.into(), &sig.rationale)
        })
        .collect())
}

/// Records built from a single signal kind, for the CoT-only and PCoT-only baselines.
pub fn assemble_single_kind(
    train: &[&QAExample],
    signals: &SignalSet,
    kind: SignalKind,
) -> Result<Vec<TeachingRecord>, MixingError> {
    let missing: Vec<String> = train
        .iter()
        .filter(|e| signals.get(&e.id, kind).is_none())
        .map(|e| format!("{}/{kind}", e.id))
        .collect();
    if !missing.is_empty() {
        return Err(MixingError::MissingSignals(missing));
    }
    Ok(train
        .iter()
        .map(|ex| {
            let sig = signals.get(&ex.id, kind).expect("checked above");
            TeachingRecord::build(ex, kind.into(), &sig.rationale)
        })
        .collect())
}

/// Records from the human-written lecture and solution.
pub fn annotated_records(train: &[&QAExample]) -> Result<Vec<TeachingRecord>, MixingError> {
    let mut missing = Vec::new();
    let mut out = Vec::with_capacity(train.len());
    for ex in train {
        let parts: Vec<&str> = [
            ex.annotated_lecture.as_deref(),
            ex.annotated_solution.as_deref(),
        ]
        .into_iter()
        .flatten()
        .map(str::trim)
        .collect();
        if parts.is_empty() {
            missing.push(ex.id.clone());
            continue;
        }
        out.push(TeachingRecord::build(
            ex,
            RecordKind::Annotated,
            &parts.join(" "),
        ));
    }
    if !missing.is_empty() {
        return Err(MixingError::MissingAnnotation(missing));
    }
    Ok(out)
}

/// Keep exactly `round(p * N)` generated records, chosen uniformly with a
/// seeded sampler, and take the annotated record for the rest. Output follows
/// the order of `generated`.
pub fn blend_with_annotated(
    generated: &[TeachingRecord],
    annotated: &[TeachingRecord],
    p: f64,
    seed: u64,
) -> Result<Vec<TeachingRecord>, MixingError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(MixingError::BadProportion(p));
    }
    let by_id: HashMap<&str, &TeachingRecord> = annotated
        .iter()
        .map(|r| (r.example_id.as_str(), r))
        .collect();
    let gen_ids: BTreeSet<&str> = generated.iter().map(|r| r.example_id.as_str()).collect();
    if generated.len() != annotated.len()
        || by_id.len() != annotated.len()
        || gen_ids.len() != generated.len()
        || gen_ids.iter().any(|id| !by_id.contains_key(id))
    {
        return Err(MixingError::IdMismatch);
    }
    let n = generated.len();
    let keep = (p * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: BTreeSet<usize> = rand::seq::index::sample(&mut rng, n, keep.min(n))
        .into_iter()
        .collect();
    Ok(generated
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if chosen.contains(&i) {
                r.clone()
            } else {
                (*by_id[r.example_id.as_str()]).clone()
            }
        })
        .collect())
}

pub fn save_decisions(
    path: &Path,
    decisions: &BTreeMap<String, MixingDecision>,
) -> Result<(), JsonlError> {
    jsonl::write(path, decisions.values())
}

pub fn load_decisions(path: &Path) -> Result<BTreeMap<String, MixingDecision>, JsonlError> {
    Ok(jsonl::read::<MixingDecision>(path)?
        .into_iter()
        .map(|d| (d.skill.clone(), d))
        .collect())
}

pub fn save_records(path: &Path, records: &[TeachingRecord]) -> Result<(), JsonlError> {
    jsonl::write(path, records)
}

pub fn load_records(path: &Path) -> Result<Vec<TeachingRecord>, JsonlError> {
    jsonl::read(path)
}
