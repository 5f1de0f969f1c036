//! Corpus data model and ingestion of ScienceQA-style problem files.
//!
//! The on-disk layout is a directory holding `problems.json`: one JSON object
//! keyed by example id, each value carrying `question`, `choices`, `answer`,
//! `hint`, `image`, `grade`, `subject`, `topic`, `category`, `skill`,
//! `lecture`, `solution` and `split`. Unknown fields are ignored, so the public
//! release file can be read as is. Images, when present, live under
//! `images/<split>/<id>/<file>`; only the path is recorded.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

pub const PROBLEMS_FILE: &str = "problems.json";

/// Records that fail to parse are tolerated up to this fraction of the file.
const MAX_MALFORMED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subject {
    NaturalScience,
    SocialScience,
    LanguageScience,
}

impl Subject {
    /// Spelling used by the release file.
    pub fn release_name(self) -> &'static str {
        match self {
            Subject::NaturalScience => "natural science",
            Subject::SocialScience => "social science",
            Subject::LanguageScience => "language science",
        }
    }
}

impl FromStr for Subject {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', " ").as_str() {
            "natural science" => Ok(Subject::NaturalScience),
            "social science" => Ok(Subject::SocialScience),
            "language science" => Ok(Subject::LanguageScience),
            _ => Err(format!("unknown subject {s:?}")),
        }
    }
}

/// One multiple-choice problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAExample {
    pub id: String,
    pub question: String,
    /// Textual context; `None` when the release hint is empty.
    pub context: Option<String>,
    pub options: Vec<String>,
    pub answer_index: usize,
    pub skill: String,
    pub subject: Subject,
    pub topic: String,
    pub category: String,
    pub grade: u8,
    /// Relative path of the image under the corpus root.
    pub image_ref: Option<String>,
    pub annotated_lecture: Option<String>,
    pub annotated_solution: Option<String>,
    pub split: Split,
}

impl QAExample {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.options.is_empty() {
            return Err("no options".into());
        }
        if let Some(i) = self.options.iter().position(|o| o.trim().is_empty()) {
            return Err(format!("option {i} is empty"));
        }
        if self.answer_index >= self.options.len() {
            return Err(format!(
                "answer index {} out of range for {} options",
                self.answer_index,
                self.options.len()
            ));
        }
        if !(1..=12).contains(&self.grade) {
            return Err(format!("grade {} outside 1..=12", self.grade));
        }
        if self.skill.trim().is_empty() {
            return Err("empty skill".into());
        }
        Ok(())
    }

    pub fn answer_text(&self) -> &str {
        &self.options[self.answer_index]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SubjectClass {
    #[serde(rename = "NAT")]
    Nat,
    #[serde(rename = "SOC")]
    Soc,
    #[serde(rename = "LAN")]
    Lan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ContextClass {
    #[serde(rename = "TXT")]
    Txt,
    #[serde(rename = "IMG")]
    Img,
    #[serde(rename = "NO")]
    No,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GradeClass {
    #[serde(rename = "G1-6")]
    Lower,
    #[serde(rename = "G7-12")]
    Upper,
}

/// Position of an example in the subject / context / grade taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassLabel {
    pub subject: SubjectClass,
    pub context: ContextClass,
    pub grade: GradeClass,
}

/// Image takes precedence over text: an example with both counts as IMG.
pub fn classify(example: &QAExample) -> ClassLabel {
    let subject = match example.subject {
        Subject::NaturalScience => SubjectClass::Nat,
        Subject::SocialScience => SubjectClass::Soc,
        Subject::LanguageScience => SubjectClass::Lan,
    };
    let context = if example.image_ref.is_some() {
        ContextClass::Img
    } else if example.context.is_some() {
        ContextClass::Txt
    } else {
        ContextClass::No
    };
    let grade = if example.grade <= 6 {
        GradeClass::Lower
    } else {
        GradeClass::Upper
    };
    ClassLabel {
        subject,
        context,
        grade,
    }
}

/// Partition the examples of `split` by skill, keeping corpus order inside each group.
pub fn group_by_skill(corpus: &Corpus, split: Split) -> BTreeMap<&str, Vec<&QAExample>> {
    let mut groups: BTreeMap<&str, Vec<&QAExample>> = BTreeMap::new();
    for ex in corpus.split(split) {
        groups.entry(ex.skill.as_str()).or_default().push(ex);
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RejectedRecord {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("problems file not found: {0}")]
    MissingFile(PathBuf),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path} is not a JSON object keyed by example id: {source}")]
    Layout {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate example id {0:?}")]
    DuplicateId(String),
    #[error("{malformed} of {total} records are malformed (first: {first:?})")]
    TooManyMalformed {
        malformed: usize,
        total: usize,
        first: Vec<RejectedRecord>,
    },
    #[error("example {id}: {reason}")]
    InvalidExample { id: String, reason: String },
    #[error("unknown corpus schema {0:?} (expected \"scienceqa\")")]
    UnknownSchema(String),
}

/// Supported problems-file layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusSchema {
    #[default]
    ScienceQa,
}

impl FromStr for CorpusSchema {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "scienceqa" => Ok(CorpusSchema::ScienceQa),
            _ => Err(CorpusError::UnknownSchema(s.to_string())),
        }
    }
}

/// An immutable, validated set of examples.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    examples: Vec<QAExample>,
    index: HashMap<String, usize>,
    split_counts: BTreeMap<Split, usize>,
    rejected: Vec<RejectedRecord>,
}

impl Corpus {
    /// Build a corpus from already-parsed examples, checking every invariant.
    pub fn from_examples(examples: Vec<QAExample>) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(examples.len());
        let mut split_counts = BTreeMap::new();
        for (i, ex) in examples.iter().enumerate() {
            ex.validate()
                .map_err(|reason| CorpusError::InvalidExample {
                    id: ex.id.clone(),
                    reason,
                })?;
            if index.insert(ex.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(ex.id.clone()));
            }
            *split_counts.entry(ex.split).or_insert(0) += 1;
        }
        Ok(Corpus {
            examples,
            index,
            split_counts,
            rejected: Vec::new(),
        })
    }

    pub fn examples(&self) -> &[QAExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&QAExample> {
        self.index.get(id).map(|&i| &self.examples[i])
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &QAExample> + '_ {
        self.examples.iter().filter(move |e| e.split == split)
    }

    pub fn split_count(&self, split: Split) -> usize {
        self.split_counts.get(&split).copied().unwrap_or(0)
    }

    pub fn split_counts(&self) -> &BTreeMap<Split, usize> {
        &self.split_counts
    }

    /// Records skipped during ingestion, with the reason for each.
    pub fn rejected(&self) -> &[RejectedRecord] {
        &self.rejected
    }

    /// Render the corpus back into the release layout, in corpus order.
    pub fn to_problems_json(&self) -> String {
        let entries = OrderedProblems(
            self.examples
                .iter()
                .map(|e| (e.id.clone(), RawProblem::from_example(e)))
                .collect(),
        );
        serde_json::to_string_pretty(&entries).expect("corpus serializes")
    }
}

/// Load `<root>/problems.json`.
pub fn ingest_corpus(root: &Path, schema: CorpusSchema) -> Result<Corpus, CorpusError> {
    let CorpusSchema::ScienceQa = schema;
    let path = root.join(PROBLEMS_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(CorpusError::MissingFile(path))
        }
        Err(source) => return Err(CorpusError::Io { path, source }),
    };
    parse_problems(&text, &path)
}

pub(crate) fn parse_problems(text: &str, path: &Path) -> Result<Corpus, CorpusError> {
    if text.trim().is_empty() {
        tracing::warn!(path = %path.display(), "problems file is empty");
        return Ok(Corpus::default());
    }
    let OrderedEntries(entries) =
        serde_json::from_str(text).map_err(|source| CorpusError::Layout {
            path: path.to_path_buf(),
            source,
        })?;
    if entries.is_empty() {
        tracing::warn!(path = %path.display(), "problems file has no records");
    }

    let total = entries.len();
    let mut seen = HashSet::with_capacity(total);
    let mut examples = Vec::with_capacity(total);
    let mut rejected = Vec::new();
    for (id, value) in entries {
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId(id));
        }
        match parse_record(&id, value) {
            Ok(ex) => examples.push(ex),
            Err(reason) => {
                tracing::warn!(%id, %reason, "skipping malformed record");
                rejected.push(RejectedRecord { id, reason });
            }
        }
    }
    if !rejected.is_empty() && rejected.len() as f64 > MAX_MALFORMED_FRACTION * total as f64 {
        return Err(CorpusError::TooManyMalformed {
            malformed: rejected.len(),
            total,
            first: rejected.into_iter().take(5).collect(),
        });
    }

    let mut corpus = Corpus::from_examples(examples)?;
    corpus.rejected = rejected;
    Ok(corpus)
}

fn parse_record(id: &str, value: serde_json::Value) -> Result<QAExample, String> {
    let raw: RawProblem = serde_json::from_value(value).map_err(|e| e.to_string())?;
    let split: Split = raw.split.parse()?;
    let grade = parse_grade(&raw.grade)?;
    let subject: Subject = raw.subject.parse()?;
    let answer_index =
        usize::try_from(raw.answer).map_err(|_| format!("negative answer {}", raw.answer))?;
    let image_ref = raw
        .image
        .filter(|s| !s.trim().is_empty())
        .map(|file| format!("images/{split}/{id}/{file}"));
    let ex = QAExample {
        id: id.to_string(),
        question: raw.question,
        context: non_blank(raw.hint),
        options: raw.choices,
        answer_index,
        skill: raw.skill,
        subject,
        topic: raw.topic,
        category: raw.category,
        grade,
        image_ref,
        annotated_lecture: non_blank(raw.lecture),
        annotated_solution: non_blank(raw.solution),
        split,
    };
    ex.validate()?;
    Ok(ex)
}

fn parse_grade(s: &str) -> Result<u8, String> {
    s.trim()
        .strip_prefix("grade")
        .and_then(|n| n.parse::<u8>().ok())
        .ok_or_else(|| format!("unparseable grade {s:?}"))
}

fn non_blank(s: String) -> Option<String> {
    if s.trim().is_empty() {
        None
    } else {
        Some(s)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawProblem {
    question: String,
    choices: Vec<String>,
    answer: i64,
    #[serde(default)]
    hint: String,
    #[serde(default)]
    image: Option<String>,
    grade: String,
    subject: String,
    #[serde(default)]
    topic: String,
    #[serde(default)]
    category: String,
    skill: String,
    #[serde(default)]
    lecture: String,
    #[serde(default)]
    solution: String,
    split: String,
}

impl RawProblem {
    fn from_example(e: &QAExample) -> Self {
        RawProblem {
            question: e.question.clone(),
            choices: e.options.clone(),
            answer: e.answer_index as i64,
            hint: e.context.clone().unwrap_or_default(),
            image: e
                .image_ref
                .as_deref()
                .and_then(|p| Path::new(p).file_name())
                .map(|f| f.to_string_lossy().into_owned()),
            grade: format!("grade{}", e.grade),
            subject: e.subject.release_name().to_string(),
            topic: e.topic.clone(),
            category: e.category.clone(),
            skill: e.skill.clone(),
            lecture: e.annotated_lecture.clone().unwrap_or_default(),
            solution: e.annotated_solution.clone().unwrap_or_default(),
            split: e.split.to_string(),
        }
    }
}

/// Top-level object read as an ordered list so duplicate keys stay visible.
struct OrderedEntries(Vec<(String, serde_json::Value)>);

impl<'de> Deserialize<'de> for OrderedEntries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EntriesVisitor;

        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = OrderedEntries;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an object keyed by example id")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut out = Vec::with_capacity(map.size_hint().unwrap_or(0));
                while let Some((k, v)) = map.next_entry::<String, serde_json::Value>()? {
                    out.push((k, v));
                }
                Ok(OrderedEntries(out))
            }
        }

        deserializer.deserialize_map(EntriesVisitor)
    }
}

struct OrderedProblems(Vec<(String, RawProblem)>);

impl Serialize for OrderedProblems {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_map(self.0.iter().map(|(k, v)| (k, v)))
    }
}
