//! Teacher prompt templates.
//!
//! Four templates are rendered here: the answer-hinted CoT prompt, and the
//! three plan-based prompts (skill lecture, skill plan, per-example rationale).
//! Rendering is pure. Line endings are normalized to `\n`, trailing
//! whitespace is stripped from every line, and the text always ends with a
//! single newline, so a prompt's digest only depends on its content.
//!
//! Blocks are separated by one blank line:
//!
//! ```text
//! Here are some problems about "<skill>"
//!
//! Question: ...
//! Context: ...
//! Options: (A) ... (B) ...
//!
//! Based on the problems above, please give a general lecture on ...
//! ```

use serde::{Deserialize, Serialize};

use crate::corpus::QAExample;
use crate::digest::Digest;
use crate::signals::SkillArtifacts;

pub const NO_CONTEXT: &str = "N/A";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TemplateId {
    Cot,
    Lecture,
    Plan,
    Pcot,
}

/// Closing sentence of the CoT prompt. Two phrasings of it are in circulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CotInstruction {
    /// "Please give me a detailed explanation."
    Body,
    /// "Please give a detailed explanation."
    #[default]
    Appendix,
}

impl CotInstruction {
    pub fn text(self) -> &'static str {
        match self {
            CotInstruction::Body => "Please give me a detailed explanation.",
            CotInstruction::Appendix => "Please give a detailed explanation.",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub cot_instruction: CotInstruction,
    pub max_examples_per_skill_prompt: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            cot_instruction: CotInstruction::Appendix,
            max_examples_per_skill_prompt: 5,
        }
    }
}

impl PromptConfig {
    pub fn validate(&self) -> Result<(), PromptError> {
        if self.max_examples_per_skill_prompt == 0 {
            return Err(PromptError::ZeroExampleCap);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("skill {0:?}: no examples to build the prompt from")]
    NoExamples(String),
    #[error("skill {skill:?}: example {example_id} belongs to skill {found:?}")]
    SkillMismatch {
        skill: String,
        example_id: String,
        found: String,
    },
    #[error("skill {0:?}: lecture is empty")]
    EmptyLecture(String),
    #[error("max_examples_per_skill_prompt must be at least 1")]
    ZeroExampleCap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub template_id: TemplateId,
    pub digest: Digest,
    pub source_ids: Vec<String>,
}

impl RenderedPrompt {
    fn new(template_id: TemplateId, raw: String, source_ids: Vec<String>) -> Self {
        let text = normalize(&raw);
        RenderedPrompt {
            digest: Digest::of(&text),
            text,
            template_id,
            source_ids,
        }
    }
}

/// `0 -> 'A'`, `1 -> 'B'`, ...
pub fn option_letter(index: usize) -> char {
    assert!(index < 26, "option index {index} has no letter");
    (b'A' + index as u8) as char
}

/// Inverse of [`option_letter`].
pub fn letter_index(letter: char) -> Option<usize> {
    let up = letter.to_ascii_uppercase();
    up.is_ascii_uppercase().then(|| (up as u8 - b'A') as usize)
}

/// `(A) first (B) second ...`
pub fn format_options(options: &[String]) -> String {
    options
        .iter()
        .enumerate()
        .map(|(i, o)| format!("({}) {}", option_letter(i), o.trim()))
        .collect::<Vec<_>>()
        .join(" ")
}

/// `(B) armored catfish`
pub fn format_answer(example: &QAExample) -> String {
    format!(
        "({}) {}",
        option_letter(example.answer_index),
        example.answer_text().trim()
    )
}

/// Question, context and options lines of one example.
pub fn qa_block(example: &QAExample) -> String {
    format!(
        "Question: {}\nContext: {}\nOptions: {}",
        example.question.trim(),
        example
            .context
            .as_deref()
            .map(str::trim)
            .unwrap_or(NO_CONTEXT),
        format_options(&example.options)
    )
}

fn qa_block_with_answer(example: &QAExample) -> String {
    format!(
        "{}\nCorrect Answer: {}",
        qa_block(example),
        format_answer(example)
    )
}

pub fn render_cot_prompt(example: &QAExample, cfg: &PromptConfig) -> RenderedPrompt {
    let raw = format!(
        "{}\n{}",
        qa_block_with_answer(example),
        cfg.cot_instruction.text()
    );
    RenderedPrompt::new(TemplateId::Cot, raw, vec![example.id.clone()])
}

/// Examples actually shown in a skill prompt: the first `cap`, in the given order.
fn skill_examples<'a>(
    skill: &str,
    examples: &[&'a QAExample],
    cfg: &PromptConfig,
) -> Result<Vec<&'a QAExample>, PromptError> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(PromptError::NoExamples(skill.to_string()));
    }
    if let Some(bad) = examples.iter().find(|e| e.skill != skill) {
        return Err(PromptError::SkillMismatch {
            skill: skill.to_string(),
            example_id: bad.id.clone(),
            found: bad.skill.clone(),
        });
    }
    Ok(examples
        .iter()
        .take(cfg.max_examples_per_skill_prompt)
        .copied()
        .collect())
}

fn join_blocks(blocks: &[String]) -> String {
    blocks.join("\n\n")
}

pub fn render_lecture_prompt(
    skill: &str,
    examples: &[&QAExample],
    cfg: &PromptConfig,
) -> Result<RenderedPrompt, PromptError> {
    let shown = skill_examples(skill, examples, cfg)?;
    let mut blocks = vec![format!("Here are some problems about \"{skill}\"")];
    blocks.extend(shown.iter().map(|e| qa_block(e)));
    blocks.push(format!(
        "Based on the problems above, please give a general lecture on the \"{skill}\" type of question in one sentence."
    ));
    Ok(RenderedPrompt::new(
        TemplateId::Lecture,
        join_blocks(&blocks),
        shown.iter().map(|e| e.id.clone()).collect(),
    ))
}

pub fn render_plan_prompt(
    skill: &str,
    lecture: &str,
    examples: &[&QAExample],
    cfg: &PromptConfig,
) -> Result<RenderedPrompt, PromptError> {
    if lecture.trim().is_empty() {
        return Err(PromptError::EmptyLecture(skill.to_string()));
    }
    let shown = skill_examples(skill, examples, cfg)?;
    let mut blocks = vec![
        format!("Here are some problems about \"{skill}\""),
        format!("The lecture about \"{skill}\" is \"{}\"", lecture.trim()),
    ];
    blocks.extend(shown.iter().map(|e| qa_block(e)));
    blocks.push(
        "Based on the lecture above and these problems, let's understand these problems and devise a general and brief plan step by step to solve these problems (begin with 1, 2, 3...)."
            .to_string(),
    );
    Ok(RenderedPrompt::new(
        TemplateId::Plan,
        join_blocks(&blocks),
        shown.iter().map(|e| e.id.clone()).collect(),
    ))
}

pub fn render_pcot_prompt(
    example: &QAExample,
    artifacts: &SkillArtifacts,
    _cfg: &PromptConfig,
) -> Result<RenderedPrompt, PromptError> {
    if artifacts.skill != example.skill {
        return Err(PromptError::SkillMismatch {
            skill: artifacts.skill.clone(),
            example_id: example.id.clone(),
            found: example.skill.clone(),
        });
    }
    let skill = &example.skill;
    let blocks = [
        format!("Here is a problem about \"{skill}\""),
        format!("The lecture about \"{skill}\" is \"{}\"", artifacts.lecture.trim()),
        format!("The plan to solve \"{skill}\" problem is \"{}\"", artifacts.plan.trim()),
        qa_block_with_answer(example),
        "Based on the lecture, the plan and the problem, please carry out the plan and solve the problem step by step (begin with 1, 2, 3...)."
            .to_string(),
    ];
    Ok(RenderedPrompt::new(
        TemplateId::Pcot,
        join_blocks(&blocks),
        vec![example.id.clone()],
    ))
}

/// `\r\n` and `\r` become `\n`, trailing whitespace is dropped from each line,
/// and the result ends with exactly one newline.
pub fn normalize(raw: &str) -> String {
    let unified = raw.replace("\r\n", "\n").replace('\r', "\n");
    let mut out = String::with_capacity(unified.len() + 1);
    for line in unified.trim_end().split('\n') {
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}
