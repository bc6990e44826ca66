//! Deterministic offline provider.
//!
//! Query generation turns the original question into numbered rephrasings
//! from a fixed template list. Answer synthesis echoes the first sentence of
//! every `Document i (chunk_id): ...` block in the prompt, so end-to-end tests
//! can check which evidence reached the model.

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{CallSite, Completion, LlmError, LlmProvider, LlmRequest};

pub const NO_EVIDENCE: &str = "NO_EVIDENCE";
pub const DOCUMENT_HEADER: &str = "Document ";

const DEFAULT_QUERY_COUNT: usize = 4;

const LEADING_FILLER: &[&str] = &[
    "tell", "me", "about", "what", "whats", "is", "are", "the", "a", "an", "how", "does", "do",
    "can", "could", "please", "explain", "describe", "give", "show",
];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockConfig {
    #[serde(default)]
    pub query_generation_delay_ms: u64,
    #[serde(default)]
    pub answer_synthesis_delay_ms: u64,
}

impl MockConfig {
    /// Same artificial delay at both call sites.
    pub fn with_delay(ms: u64) -> Self {
        Self {
            query_generation_delay_ms: ms,
            answer_synthesis_delay_ms: ms,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockProvider {
    config: MockConfig,
}

impl MockProvider {
    pub fn new(config: MockConfig) -> Self {
        Self { config }
    }

    /// The response text, without the artificial delay.
    pub fn respond(request: &LlmRequest) -> String {
        match request.call_site {
            CallSite::QueryGeneration => generate_queries(&request.user_prompt),
            CallSite::AnswerSynthesis => synthesize(&request.user_prompt),
        }
    }
}

#[async_trait]
impl LlmProvider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    async fn complete(&self, request: &LlmRequest) -> Result<Completion, LlmError> {
        let delay = match request.call_site {
            CallSite::QueryGeneration => self.config.query_generation_delay_ms,
            CallSite::AnswerSynthesis => self.config.answer_synthesis_delay_ms,
        };
        if delay > 0 {
            tokio::time::sleep(Duration::from_millis(delay)).await;
        }
        Ok(Completion {
            text: Self::respond(request),
            token_counts: None,
        })
    }
}

/// Reads `n` from "Generate {n} ..." and the question after "question:".
fn parse_generation_prompt(prompt: &str) -> (usize, &str) {
    let n = prompt
        .find("Generate ")
        .map(|i| &prompt[i + "Generate ".len()..])
        .and_then(|rest| {
            let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
            digits.parse().ok()
        })
        .filter(|n| *n > 0)
        .unwrap_or(DEFAULT_QUERY_COUNT);
    let question = prompt
        .find("question:")
        .map(|i| &prompt[i + "question:".len()..])
        .unwrap_or(prompt);
    (n, question.trim())
}

/// The question with leading request words and trailing punctuation removed.
pub(crate) fn content_phrase(question: &str) -> String {
    let trimmed = question.trim().trim_end_matches(['?', '.', '!']).trim();
    let words: Vec<&str> = trimmed.split_whitespace().collect();
    let skip = words
        .iter()
        .take_while(|w| {
            let bare: String = w
                .chars()
                .filter(|c| c.is_alphanumeric())
                .collect::<String>()
                .to_lowercase();
            LEADING_FILLER.contains(&bare.as_str())
        })
        .count();
    if skip >= words.len() {
        trimmed.to_string()
    } else {
        words[skip..].join(" ")
    }
}

fn looks_plural(phrase: &str) -> bool {
    phrase
        .split_whitespace()
        .last()
        .is_some_and(|w| w.len() > 3 && w.ends_with('s') && !w.ends_with("ss"))
}

fn generate_queries(prompt: &str) -> String {
    let (n, question) = parse_generation_prompt(prompt);
    let q = content_phrase(question);
    let verb = if looks_plural(&q) { "are" } else { "is" };
    let templates = [
        format!("What {verb} {q}?"),
        format!("{q} explained."),
        format!("Advantages and limitations of {q}."),
        format!("How does {q} work in practice?"),
    ];
    (0..n)
        .map(|i| format!("{}. {}", i + 1, templates[i % templates.len()]))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Splits `Document {i} ({chunk_id}): {text}` blocks out of a prompt. A block
/// runs until the next header line or the end of the prompt.
pub(crate) fn document_blocks(prompt: &str) -> Vec<String> {
    let mut blocks: Vec<String> = Vec::new();
    let mut current: Option<String> = None;
    for line in prompt.lines() {
        if let Some(body) = header_body(line) {
            if let Some(done) = current.take() {
                blocks.push(done);
            }
            current = Some(body.to_string());
        } else if let Some(block) = current.as_mut() {
            block.push('\n');
            block.push_str(line);
        }
    }
    blocks.extend(current);
    blocks
}

fn header_body(line: &str) -> Option<&str> {
    let rest = line.strip_prefix(DOCUMENT_HEADER)?;
    let digits = rest.chars().take_while(char::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = rest[digits..].strip_prefix(" (")?;
    let close = rest.find("): ")?;
    Some(&rest[close + 3..])
}

/// First sentence of the block, ignoring markdown heading lines.
fn first_sentence(text: &str) -> String {
    let body: Vec<&str> = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .collect();
    let collapsed = body.join(" ").split_whitespace().collect::<Vec<_>>().join(" ");
    let mut chars = collapsed.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|(_, n)| *n == ' ') {
            return collapsed[..i + c.len_utf8()].to_string();
        }
    }
    collapsed
}

fn synthesize(prompt: &str) -> String {
    let blocks = document_blocks(prompt);
    if blocks.is_empty() {
        return NO_EVIDENCE.to_string();
    }
    let sentences: Vec<String> = blocks.iter().map(|b| first_sentence(b)).collect();
    format!("ANSWER({}): {}", blocks.len(), sentences.join(" "))
}
