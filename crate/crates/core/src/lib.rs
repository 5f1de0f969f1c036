//! Teaching-data pipeline for multiple-choice science QA.
//!
//! A teacher LLM writes two kinds of rationales for every training and
//! validation example: a direct chain-of-thought (CoT) explanation, and a
//! plan-based rationale (PCoT) built from a per-skill lecture and plan. An
//! answer model then scores both kinds on the validation split, and each skill
//! keeps whichever kind produced fewer errors. The result is exported as a
//! two-stage teaching dataset (input to rationale, input plus rationale to
//! answer) for a student model, and an evaluation harness scores student
//! predictions with a subject/context/grade breakdown.
//!
//! Module map:
//!
//! - [`corpus`]: data model, ingestion of the problems file, class taxonomy.
//! - [`prompt`]: the four teacher prompt templates.
//! - [`teacher`]: completion backends, disk cache, retry, bounded batches.
//! - [`signals`] and [`generate`]: rationale generation and persistence.
//! - [`mixing`]: per-skill selection and teaching-record assembly.
//! - [`eval`]: answer extraction and accuracy reports.
//! - [`cli`]: the `teachmix` command-line front end.

pub mod cli;
pub mod corpus;
pub mod demo;
pub mod digest;
pub mod eval;
pub mod generate;
pub mod jsonl;
pub mod mixing;
pub mod prompt;
pub mod signals;
pub mod teacher;

pub use corpus::{classify, group_by_skill, ClassLabel, Corpus, QAExample, Split, Subject};
pub use digest::Digest;
pub use eval::{extract_answer, score, EvalReport};
pub use mixing::{AnswerModel, MixingDecision, TeachingRecord};
pub use prompt::{PromptConfig, RenderedPrompt, TemplateId};
pub use signals::{SignalKind, SignalSet, SkillArtifacts, TeachingSignal};
pub use teacher::{CompletionRequest, CompletionResult, TeacherClient};
