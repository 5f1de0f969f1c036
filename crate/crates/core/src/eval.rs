//! Answer extraction and accuracy reports.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{classify, ContextClass, Corpus, GradeClass, QAExample, SubjectClass};
use crate::prompt::letter_index;

static ANSWER_IS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)answer\s+is:?\s*\(([a-z])\)").unwrap());
static STANDALONE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\(([A-Z])\)").unwrap());

/// Find the option a piece of generated text commits to.
///
/// Priority: the last `answer is (X)` (any case), then the last bare `(X)`,
/// then the whole text equal to one option's text. Letters beyond the option
/// count are ignored.
pub fn extract_answer(generated: &str, options: &[String]) -> Option<usize> {
    let valid = |caps: regex::Captures<'_>| {
        let letter = caps[1].chars().next()?;
        letter_index(letter).filter(|&i| i < options.len())
    };
    if let Some(i) = ANSWER_IS.captures_iter(generated).filter_map(valid).last() {
        return Some(i);
    }
    if let Some(i) = STANDALONE.captures_iter(generated).filter_map(valid).last() {
        return Some(i);
    }
    let norm = |s: &str| s.trim().trim_end_matches('.').trim().to_lowercase();
    let target = norm(generated);
    if target.is_empty() {
        return None;
    }
    options.iter().position(|o| norm(o) == target)
}

/// One column of the subject / context / grade breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassColumn {
    #[serde(rename = "NAT")]
    Nat,
    #[serde(rename = "SOC")]
    Soc,
    #[serde(rename = "LAN")]
    Lan,
    #[serde(rename = "TXT")]
    Txt,
    #[serde(rename = "IMG")]
    Img,
    #[serde(rename = "NO")]
    No,
    #[serde(rename = "G1-6")]
    G1To6,
    #[serde(rename = "G7-12")]
    G7To12,
}

impl ClassColumn {
    pub const ALL: [ClassColumn; 8] = [
        ClassColumn::Nat,
        ClassColumn::Soc,
        ClassColumn::Lan,
        ClassColumn::Txt,
        ClassColumn::Img,
        ClassColumn::No,
        ClassColumn::G1To6,
        ClassColumn::G7To12,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClassColumn::Nat => "NAT",
            ClassColumn::Soc => "SOC",
            ClassColumn::Lan => "LAN",
            ClassColumn::Txt => "TXT",
            ClassColumn::Img => "IMG",
            ClassColumn::No => "NO",
            ClassColumn::G1To6 => "G1-6",
            ClassColumn::G7To12 => "G7-12",
        }
    }

    /// The three columns an example falls into.
    pub fn of(example: &QAExample) -> [ClassColumn; 3] {
        let label = classify(example);
        [
            match label.subject {
                SubjectClass::Nat => ClassColumn::Nat,
                SubjectClass::Soc => ClassColumn::Soc,
                SubjectClass::Lan => ClassColumn::Lan,
            },
            match label.context {
                ContextClass::Txt => ClassColumn::Txt,
                ContextClass::Img => ClassColumn::Img,
                ContextClass::No => ClassColumn::No,
            },
            match label.grade {
                GradeClass::Lower => ClassColumn::G1To6,
                GradeClass::Upper => ClassColumn::G7To12,
            },
        ]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub correct: usize,
    pub total: usize,
    /// `None` when the class has no examples.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub correct: usize,
    pub overall_accuracy: f64,
    pub per_class: BTreeMap<ClassColumn, ClassScore>,
    pub per_skill_errors: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("no prediction for: {}", .0.join(", "))]
    MissingPredictions(Vec<String>),
    #[error("predictions mention unknown example ids: {}", .0.join(", "))]
    UnknownIds(Vec<String>),
    #[error("prediction for {id} is neither an index, text, nor null")]
    BadValue { id: String },
    #[error("{0}")]
    Io(String),
}

fn ratio(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

/// Accuracy over `examples`; a missing answer (`None`) counts as wrong.
pub fn score<'a>(
    examples: impl IntoIterator<Item = &'a QAExample>,
    predictions: &HashMap<String, Option<usize>>,
) -> Result<EvalReport, EvalError> {
    let examples: Vec<&QAExample> = examples.into_iter().collect();
    let missing: Vec<String> = examples
        .iter()
        .filter(|e| !predictions.contains_key(&e.id))
        .map(|e| e.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingPredictions(missing));
    }

    let mut per_class: BTreeMap<ClassColumn, ClassScore> = ClassColumn::ALL
        .iter()
        .map(|c| (*c, ClassScore::default()))
        .collect();
    let mut per_skill_errors = BTreeMap::new();
    let mut correct = 0;
    for ex in &examples {
        let right = predictions[&ex.id] == Some(ex.answer_index);
        let skill_errors = per_skill_errors.entry(ex.skill.clone()).or_insert(0);
        if right {
            correct += 1;
        } else {
            *skill_errors += 1;
        }
        for col in ClassColumn::of(ex) {
            let s = per_class.get_mut(&col).expect("all columns present");
            s.total += 1;
            if right {
                s.correct += 1;
            }
        }
    }
    for s in per_class.values_mut() {
        s.accuracy = (s.total > 0).then(|| ratio(s.correct, s.total));
    }
    Ok(EvalReport {
        n: examples.len(),
        correct,
        overall_accuracy: ratio(correct, examples.len()),
        per_class,
        per_skill_errors,
    })
}

impl EvalReport {
    /// Percentages laid out as NAT SOC LAN TXT IMG NO G1-6 G7-12 Avg, followed
    /// by the skills with the most errors.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let mut header = String::new();
        let mut row = String::new();
        for col in ClassColumn::ALL {
            let _ = write!(header, "{:>8}", col.name());
            let cell = match self.per_class.get(&col).and_then(|s| s.accuracy) {
                Some(a) => format!("{:.2}", a * 100.0),
                None => "-".to_string(),
            };
            let _ = write!(row, "{cell:>8}");
        }
        let _ = write!(header, "{:>8}", "Avg");
        let _ = write!(row, "{:>8.2}", self.overall_accuracy * 100.0);
        let _ = writeln!(out, "{header}");
        let _ = writeln!(out, "{row}");
        let _ = writeln!(out, "n = {}, correct = {}", self.n, self.correct);

        let mut worst: Vec<(&String, &usize)> = self
            .per_skill_errors
            .iter()
            .filter(|(_, e)| **e > 0)
            .collect();
        worst.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        if !worst.is_empty() {
            let _ = writeln!(out, "errors by skill:");
            for (skill, errors) in worst.iter().take(20) {
                let _ = writeln!(out, "  {errors:>5}  {skill}");
            }
        }
        out
    }
}

/// Read a predictions file: a JSON object mapping example id to an option
/// index, to raw generated text (run through [`extract_answer`]), or to null.
pub fn load_predictions(
    path: &Path,
    corpus: &Corpus,
) -> Result<HashMap<String, Option<usize>>, EvalError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    let raw: BTreeMap<String, serde_json::Value> = serde_json::from_str(&text)
        .map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    parse_predictions(raw, corpus)
}

pub fn parse_predictions(
    raw: BTreeMap<String, serde_json::Value>,
    corpus: &Corpus,
) -> Result<HashMap<String, Option<usize>>, EvalError> {
    let unknown: Vec<String> = raw
        .keys()
        .filter(|id| corpus.get(id).is_none())
        .cloned()
        .collect();
    if !unknown.is_empty() {
        return Err(EvalError::UnknownIds(unknown));
    }
    let mut out = HashMap::with_capacity(raw.len());
    for (id, value) in raw {
        let ex = corpus.get(&id).expect("checked above");
        let pred = match &value {
            serde_json::Value::Null => None,
            serde_json::Value::Number(n) => match n.as_u64() {
                Some(i) => Some(i as usize),
                None => return Err(EvalError::BadValue { id }),
            },
            serde_json::Value::String(s) => extract_answer(s, &ex.options),
            _ => return Err(EvalError::BadValue { id }),
        };
        out.insert(id, pred);
    }
    Ok(out)
}
