//! Generated teaching signals and per-skill lecture/plan artifacts.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::jsonl::{self, JsonlError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SignalKind {
    Cot,
    Pcot,
}

impl SignalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SignalKind::Cot => "COT",
            SignalKind::Pcot => "PCOT",
        }
    }
}

impl fmt::Display for SignalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SignalKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "COT" => Ok(SignalKind::Cot),
            "PCOT" => Ok(SignalKind::Pcot),
            _ => Err(format!("unknown signal kind {s:?}")),
        }
    }
}

/// Where a teacher completion came from. Kept free of latency and cache
/// status so persisted artifacts do not change between reruns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub backend_id: String,
    pub prompt_digest: Digest,
    pub created_at: DateTime<Utc>,
}

/// One generated rationale for one example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeachingSignal {
    pub example_id: String,
    pub kind: SignalKind,
    pub rationale: String,
    pub prompt_digest: Digest,
    pub backend_id: String,
    pub created_at: DateTime<Utc>,
}

/// Lecture and plan generated once per skill.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillArtifacts {
    pub skill: String,
    pub lecture: String,
    pub plan: String,
    pub lecture_provenance: Provenance,
    pub plan_provenance: Provenance,
}

impl SkillArtifacts {
    pub fn validate(&self) -> Result<(), String> {
        if self.lecture.trim().is_empty() {
            return Err(format!("skill {:?}: empty lecture", self.skill));
        }
        if self.plan.trim().is_empty() {
            return Err(format!("skill {:?}: empty plan", self.skill));
        }
        if !self.plan.contains("1.") {
            return Err(format!(
                "skill {:?}: plan has no enumerated step",
                self.skill
            ));
        }
        Ok(())
    }
}

/// Signals keyed by `(example_id, kind)`; inserting a second signal for the
/// same key replaces the first.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SignalSet {
    signals: BTreeMap<(String, SignalKind), TeachingSignal>,
}

impl SignalSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, signal: TeachingSignal) -> Option<TeachingSignal> {
        self.signals
            .insert((signal.example_id.clone(), signal.kind), signal)
    }

    pub fn get(&self, example_id: &str, kind: SignalKind) -> Option<&TeachingSignal> {
        self.signals.get(&(example_id.to_string(), kind))
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TeachingSignal> {
        self.signals.values()
    }

    pub fn of_kind(&self, kind: SignalKind) -> impl Iterator<Item = &TeachingSignal> {
        self.signals.values().filter(move |s| s.kind == kind)
    }

    pub fn extend(&mut self, other: SignalSet) {
        self.signals.extend(other.signals);
    }

    pub fn to_jsonl(&self) -> String {
        jsonl::to_string(self.iter())
    }

    pub fn load(path: &Path) -> Result<Self, JsonlError> {
        Ok(jsonl::read::<TeachingSignal>(path)?.into_iter().collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), JsonlError> {
        jsonl::write(path, self.iter())
    }
}

impl FromIterator<TeachingSignal> for SignalSet {
    fn from_iter<I: IntoIterator<Item = TeachingSignal>>(iter: I) -> Self {
        let mut set = SignalSet::new();
        for s in iter {
            set.insert(s);
        }
        set
    }
}

pub type ArtifactMap = BTreeMap<String, SkillArtifacts>;

pub fn load_artifacts(path: &Path) -> Result<ArtifactMap, JsonlError> {
    Ok(jsonl::read::<SkillArtifacts>(path)?
        .into_iter()
        .map(|a| (a.skill.clone(), a))
        .collect())
}

pub fn save_artifacts(path: &Path, artifacts: &ArtifactMap) -> Result<(), JsonlError> {
    jsonl::write(path, artifacts.values())
}
