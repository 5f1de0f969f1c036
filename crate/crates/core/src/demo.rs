//! Offline stand-ins for the teacher and the student, used by `teachmix demo`,
//! the `mock` backend kind, and tests.
//!
//! The mock teacher recognizes the four prompt templates and writes short,
//! deterministic responses. To give the mixing step something to choose
//! between, some rationales deliberately commit to a wrong option: a CoT
//! rationale is wrong when the first byte of its prompt digest is divisible by
//! 3, a PCoT rationale when the second byte is divisible by 4.

use std::collections::HashMap;
use std::sync::LazyLock;

use regex::Regex;

use crate::corpus::QAExample;
use crate::digest::Digest;
use crate::prompt::option_letter;
use crate::teacher::{BackendError, MockBackend};

/// The bundled 20-example corpus, in the release `problems.json` format.
pub const FIXTURE_PROBLEMS: &str = include_str!("../fixtures/corpus/problems.json");

static QUOTED_SKILL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"^Here (?:are some problems|is a problem) about "(.*)""#).unwrap()
});
static OPTION_MARK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\(([A-Z])\) ").unwrap());
static CORRECT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^Correct Answer: \(([A-Z])\) (.*)$").unwrap());

pub fn demo_teacher() -> MockBackend {
    MockBackend::new().with_fallback(respond)
}

fn respond(prompt: &str) -> Result<String, BackendError> {
    let digest = Digest::of(prompt);
    if prompt.contains("give a general lecture on the") {
        let skill = skill_of(prompt)?;
        return Ok(format!(
            "Questions about \"{skill}\" are solved by applying one general idea about {} to the details each question provides.",
            skill.to_lowercase()
        ));
    }
    if prompt.contains("devise a general and brief plan") {
        let skill = skill_of(prompt)?;
        return Ok(format!(
            "1. Read the question and any context carefully. \
             2. Recall the general idea behind \"{skill}\". \
             3. Check each option against that idea. \
             4. Choose the option that fits best."
        ));
    }
    let (letter, n_options, answer_text) = answer_of(prompt)?;
    let correct = (letter as u8 - b'A') as usize;
    if prompt.starts_with("Here is a problem about") {
        let pick = if digest.as_bytes()[1].is_multiple_of(4) {
            (correct + 1) % n_options
        } else {
            correct
        };
        return Ok(format!(
            "1. The question asks about {}. \
             2. The lecture and plan point to the option that matches the key idea. \
             3. Comparing the options, ({}) fits best. \
             Therefore, the answer is ({}).",
            answer_text.to_lowercase(),
            option_letter(pick),
            option_letter(pick)
        ));
    }
    if prompt.starts_with("Question:") {
        let pick = if digest.as_bytes()[0].is_multiple_of(3) {
            (correct + 1) % n_options
        } else {
            correct
        };
        return Ok(format!(
            "Looking at the question and the options, the best match is option ({}). The answer is ({}).",
            option_letter(pick),
            option_letter(pick)
        ));
    }
    Err(BackendError::Fatal(
        "demo teacher does not recognize this prompt".into(),
    ))
}

fn skill_of(prompt: &str) -> Result<&str, BackendError> {
    QUOTED_SKILL
        .captures(prompt)
        .and_then(|c| c.get(1))
        .map(|m| m.as_str())
        .ok_or_else(|| BackendError::Fatal("prompt names no skill".into()))
}

fn answer_of(prompt: &str) -> Result<(char, usize, &str), BackendError> {
    let caps = CORRECT
        .captures(prompt)
        .ok_or_else(|| BackendError::Fatal("prompt has no answer line".into()))?;
    let letter = caps[1].chars().next().expect("one letter");
    let n_options = prompt
        .lines()
        .find(|l| l.starts_with("Options: "))
        .map(|l| OPTION_MARK.find_iter(l).count())
        .unwrap_or(0)
        .max((letter as u8 - b'A') as usize + 1);
    Ok((letter, n_options, caps.get(2).expect("text group").as_str()))
}

/// Stand-in student predictions: right unless the first byte of the digest of
/// the example id is divisible by 4, in which case the next option is chosen.
pub fn demo_student<'a>(
    examples: impl IntoIterator<Item = &'a QAExample>,
) -> HashMap<String, Option<usize>> {
    examples
        .into_iter()
        .map(|ex| {
            let pred = if Digest::of(&ex.id).as_bytes()[0].is_multiple_of(4) {
                (ex.answer_index + 1) % ex.options.len()
            } else {
                ex.answer_index
            };
            (ex.id.clone(), Some(pred))
        })
        .collect()
}
