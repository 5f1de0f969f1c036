use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusSchema;
use crate::digest::Digest;
use crate::prompt::PromptConfig;
use crate::teacher::{BackendKind, BackendSpec, Decoding, RetryPolicy};

/// The run configuration file.
///
/// ```toml
/// corpus_root = "data/scienceqa"
/// backend_id = "chat"
/// parallelism = 8
/// seed = 42
/// output_dir = "runs/main"
///
/// [prompt]
/// cot_instruction = "appendix"
/// max_examples_per_skill_prompt = 5
///
/// [[backends]]
/// id = "chat"
/// kind = "remote"
/// base_url = "https://api.openai.com/v1"
/// model_name = "gpt-3.5-turbo"
/// api_key_env = "OPENAI_API_KEY"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus_root: PathBuf,
    #[serde(default)]
    pub schema: CorpusSchema,
    pub backend_id: String,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Stamp every new completion with the Unix epoch instead of the wall
    /// clock, so that fresh runs are byte-identical.
    #[serde(default)]
    pub fixed_timestamps: bool,
    #[serde(default)]
    pub prompt: PromptConfig,
    #[serde(default)]
    pub decoding: Decoding,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub backends: Vec<BackendSpec>,
}

fn default_parallelism() -> usize {
    4
}

/// Command-line values that replace config file fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub corpus_root: Option<PathBuf>,
    pub backend_id: Option<String>,
    pub parallelism: Option<usize>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Vec<String>> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| vec![format!("config: cannot read {}: {e}", path.display())])?;
        toml::from_str(&text).map_err(|e| vec![format!("config: {}: {e}", path.display())])
    }

    /// Configuration for `teachmix demo`: the bundled corpus and the mock teacher.
    pub fn demo(output_dir: &Path) -> Self {
        RunConfig {
            corpus_root: output_dir.join("corpus"),
            schema: CorpusSchema::ScienceQa,
            backend_id: "mock".into(),
            parallelism: 4,
            seed: 0,
            output_dir: output_dir.to_path_buf(),
            cache_dir: None,
            fixed_timestamps: true,
            prompt: PromptConfig::default(),
            decoding: Decoding::default(),
            retry: RetryPolicy::immediate(1),
            backends: vec![BackendSpec {
                id: "mock".into(),
                kind: BackendKind::Mock,
                base_url: None,
                model_name: None,
                api_style: Default::default(),
                api_key_env: None,
            }],
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.corpus_root {
            self.corpus_root = v.clone();
        }
        if let Some(v) = &o.backend_id {
            self.backend_id = v.clone();
        }
        if let Some(v) = o.parallelism {
            self.parallelism = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.output_dir {
            self.output_dir = v.clone();
        }
    }

    /// Every problem found, one `field: message` line each.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if self.corpus_root.as_os_str().is_empty() {
            errs.push("corpus_root: must not be empty".to_string());
        }
        if self.output_dir.as_os_str().is_empty() {
            errs.push("output_dir: must not be empty".to_string());
        }
        if self.parallelism == 0 {
            errs.push("parallelism: must be at least 1".to_string());
        }
        if let Err(e) = self.prompt.validate() {
            errs.push(format!("prompt.max_examples_per_skill_prompt: {e}"));
        }
        if !(self.decoding.temperature.is_finite() && self.decoding.temperature >= 0.0) {
            errs.push("decoding.temperature: must be a finite non-negative number".to_string());
        }
        if self.decoding.max_output_tokens == 0 {
            errs.push("decoding.max_output_tokens: must be at least 1".to_string());
        }
        if self.retry.max_attempts == 0 {
            errs.push("retry.max_attempts: must be at least 1".to_string());
        }
        if !(self.retry.multiplier.is_finite() && self.retry.multiplier >= 1.0) {
            errs.push("retry.multiplier: must be at least 1".to_string());
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, b) in self.backends.iter().enumerate() {
            if !seen.insert(b.id.as_str()) {
                errs.push(format!("backends[{i}].id: duplicate id {:?}", b.id));
            }
            if b.kind == BackendKind::Remote {
                for (field, value) in [
                    ("base_url", &b.base_url),
                    ("model_name", &b.model_name),
                    ("api_key_env", &b.api_key_env),
                ] {
                    if value.as_deref().is_none_or(|v| v.trim().is_empty()) {
                        errs.push(format!(
                            "backends[{i}].{field}: required for remote backends"
                        ));
                    }
                }
            }
        }
        if !self.backends.iter().any(|b| b.id == self.backend_id) {
            errs.push(format!(
                "backend_id: no entry in [[backends]] has id {:?}",
                self.backend_id
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    pub fn backend_spec(&self) -> Option<&BackendSpec> {
        self.backends.iter().find(|b| b.id == self.backend_id)
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .unwrap_or_else(|| self.output_dir.join("cache"))
    }

    /// Digest of everything that affects outputs. Location fields are left
    /// out; the corpus content is digested separately.
    pub fn digest(&self) -> Digest {
        let mut canon = self.clone();
        canon.corpus_root = PathBuf::new();
        canon.output_dir = PathBuf::new();
        canon.cache_dir = None;
        Digest::of(serde_json::to_vec(&canon).expect("config serializes"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}
