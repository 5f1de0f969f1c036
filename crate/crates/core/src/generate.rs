//! Corpus-scale generation of teaching signals.
//!
//! Three generators share one pattern: render a prompt per unit of work, skip
//! units whose persisted output already matches the prompt digest, send the
//! rest through [`TeacherClient::complete_batch`], and report per-unit
//! failures in a [`RunSummary`] instead of aborting.
//!
//! Skill artifacts are produced in two barriers: every lecture request is
//! resolved before any plan request is issued, and a skill whose lecture
//! failed gets no plan.

use serde::Serialize;

use crate::corpus::{group_by_skill, Corpus, QAExample, Split};
use crate::prompt::{
    render_cot_prompt, render_lecture_prompt, render_pcot_prompt, render_plan_prompt, PromptConfig,
    PromptError, RenderedPrompt,
};
use crate::signals::{ArtifactMap, SignalKind, SignalSet, SkillArtifacts, TeachingSignal};
use crate::teacher::{
    CompletionRequest, CompletionResult, Decoding, ErrorClass, TeacherClient, TeacherError,
};

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOptions {
    pub backend_id: String,
    pub decoding: Decoding,
    pub parallelism: usize,
}

impl GenerationOptions {
    pub fn new(backend_id: impl Into<String>) -> Self {
        GenerationOptions {
            backend_id: backend_id.into(),
            decoding: Decoding::default(),
            parallelism: 1,
        }
    }

    fn request(&self, prompt: &RenderedPrompt) -> CompletionRequest {
        CompletionRequest::new(prompt.text.clone(), self.backend_id.clone(), self.decoding)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Cot,
    Lecture,
    Plan,
    Pcot,
}

/// A unit of work that did not produce output in this run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PendingItem {
    /// Example id, or skill name for lecture/plan work.
    pub id: String,
    pub stage: Stage,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub completed: usize,
    pub skipped: usize,
    /// Retryable on a later run.
    pub pending: Vec<PendingItem>,
    /// Fatal backend errors.
    pub failed: Vec<PendingItem>,
}

impl RunSummary {
    pub fn is_complete(&self) -> bool {
        self.pending.is_empty() && self.failed.is_empty()
    }

    pub fn merge(&mut self, other: RunSummary) {
        self.completed += other.completed;
        self.skipped += other.skipped;
        self.pending.extend(other.pending);
        self.failed.extend(other.failed);
    }

    fn record_error(&mut self, id: &str, stage: Stage, err: &TeacherError) {
        let item = PendingItem {
            id: id.to_string(),
            stage,
            reason: err.to_string(),
        };
        match err.class() {
            ErrorClass::Retryable => self.pending.push(item),
            ErrorClass::Fatal => self.failed.push(item),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

fn signal_from(example: &QAExample, kind: SignalKind, res: CompletionResult) -> TeachingSignal {
    TeachingSignal {
        example_id: example.id.clone(),
        kind,
        rationale: res.text,
        prompt_digest: res.prompt_digest,
        backend_id: res.backend_id,
        created_at: res.created_at,
    }
}

fn is_current(
    signals: &SignalSet,
    ex: &QAExample,
    kind: SignalKind,
    prompt: &RenderedPrompt,
    opts: &GenerationOptions,
) -> bool {
    signals
        .get(&ex.id, kind)
        .is_some_and(|s| s.prompt_digest == prompt.digest && s.backend_id == opts.backend_id)
}

fn run_signal_batch(
    work: Vec<(&QAExample, RenderedPrompt)>,
    kind: SignalKind,
    client: &TeacherClient,
    opts: &GenerationOptions,
    signals: &mut SignalSet,
    summary: &mut RunSummary,
) {
    let reqs: Vec<CompletionRequest> = work.iter().map(|(_, p)| opts.request(p)).collect();
    let stage = match kind {
        SignalKind::Cot => Stage::Cot,
        SignalKind::Pcot => Stage::Pcot,
    };
    for ((ex, _), res) in work
        .iter()
        .zip(client.complete_batch(&reqs, opts.parallelism))
    {
        match res {
            Ok(res) => {
                signals.insert(signal_from(ex, kind, res));
                summary.completed += 1;
            }
            Err(e) => {
                tracing::warn!(id = %ex.id, %kind, error = %e, "generation failed");
                summary.record_error(&ex.id, stage, &e);
            }
        }
    }
}

/// One answer-hinted CoT rationale per example of `split`, added to `signals`.
pub fn generate_qa_cot(
    corpus: &Corpus,
    split: Split,
    client: &TeacherClient,
    cfg: &PromptConfig,
    opts: &GenerationOptions,
    signals: &mut SignalSet,
) -> Result<RunSummary, GenerateError> {
    cfg.validate()?;
    let mut summary = RunSummary::default();
    let mut work = Vec::new();
    for ex in corpus.split(split) {
        let prompt = render_cot_prompt(ex, cfg);
        if is_current(signals, ex, SignalKind::Cot, &prompt, opts) {
            summary.skipped += 1;
        } else {
            work.push((ex, prompt));
        }
    }
    run_signal_batch(work, SignalKind::Cot, client, opts, signals, &mut summary);
    Ok(summary)
}

/// Lecture then plan for every skill of the training split.
pub fn generate_skill_artifacts(
    corpus: &Corpus,
    client: &TeacherClient,
    cfg: &PromptConfig,
    opts: &GenerationOptions,
    artifacts: &mut ArtifactMap,
) -> Result<RunSummary, GenerateError> {
    cfg.validate()?;
    let mut summary = RunSummary::default();
    let groups = group_by_skill(corpus, Split::Train);

    let mut lecture_work = Vec::new();
    for (skill, examples) in &groups {
        let lecture_prompt = render_lecture_prompt(skill, examples, cfg)?;
        if let Some(existing) = artifacts.get(*skill) {
            let plan_prompt = render_plan_prompt(skill, &existing.lecture, examples, cfg)?;
            if existing.lecture_provenance.prompt_digest == lecture_prompt.digest
                && existing.plan_provenance.prompt_digest == plan_prompt.digest
                && existing.lecture_provenance.backend_id == opts.backend_id
            {
                summary.skipped += 1;
                continue;
            }
        }
        lecture_work.push((*skill, lecture_prompt));
    }

    // Step 1: lectures.
    let reqs: Vec<_> = lecture_work.iter().map(|(_, p)| opts.request(p)).collect();
    let mut lectures = Vec::new();
    for ((skill, _), res) in lecture_work
        .iter()
        .zip(client.complete_batch(&reqs, opts.parallelism))
    {
        match res {
            Ok(res) => lectures.push((*skill, res)),
            Err(e) => summary.record_error(skill, Stage::Lecture, &e),
        }
    }

    // Step 2: plans, conditioned on the lectures just produced.
    let mut plan_work = Vec::new();
    for (skill, lecture) in lectures {
        let prompt = render_plan_prompt(skill, &lecture.text, &groups[skill], cfg)?;
        plan_work.push((skill, lecture, prompt));
    }
    let reqs: Vec<_> = plan_work.iter().map(|(_, _, p)| opts.request(p)).collect();
    for ((skill, lecture, _), res) in plan_work
        .into_iter()
        .zip(client.complete_batch(&reqs, opts.parallelism))
    {
        let plan = match res {
            Ok(plan) => plan,
            Err(e) => {
                summary.record_error(skill, Stage::Plan, &e);
                continue;
            }
        };
        let art = SkillArtifacts {
            skill: skill.to_string(),
            lecture: lecture.text.clone(),
            plan: plan.text.clone(),
            lecture_provenance: lecture.provenance(),
            plan_provenance: plan.provenance(),
        };
        match art.validate() {
            Ok(()) => {
                artifacts.insert(skill.to_string(), art);
                summary.completed += 1;
            }
            Err(reason) => summary.pending.push(PendingItem {
                id: skill.to_string(),
                stage: Stage::Plan,
                reason,
            }),
        }
    }
    Ok(summary)
}

/// One plan-based rationale per example of `split`, using its skill's artifacts.
pub fn generate_qa_pcot(
    corpus: &Corpus,
    split: Split,
    artifacts: &ArtifactMap,
    client: &TeacherClient,
    cfg: &PromptConfig,
    opts: &GenerationOptions,
    signals: &mut SignalSet,
) -> Result<RunSummary, GenerateError> {
    cfg.validate()?;
    let mut summary = RunSummary::default();
    let mut work = Vec::new();
    for ex in corpus.split(split) {
        let Some(art) = artifacts.get(&ex.skill) else {
            summary.pending.push(PendingItem {
                id: ex.id.clone(),
                stage: Stage::Pcot,
                reason: format!("no lecture/plan for skill {:?}", ex.skill),
            });
            continue;
        };
        let prompt = render_pcot_prompt(ex, art, cfg)?;
        if is_current(signals, ex, SignalKind::Pcot, &prompt, opts) {
            summary.skipped += 1;
        } else {
            work.push((ex, prompt));
        }
    }
    run_signal_batch(work, SignalKind::Pcot, client, opts, signals, &mut summary);
    Ok(summary)
}
