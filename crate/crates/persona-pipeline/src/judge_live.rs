//! Model-backed judge.
//!
//! [`LiveJudge`] turns a chat transport into the core [`Judge`] seam: it
//! renders the alignment and truthfulness rubrics with the persona and its
//! evidence, sends them, and parses the structured verdicts back out of the
//! reply. Malformed replies are re-requested up to the configured retry
//! budget before surfacing as an unparseable-verdict error, which the core
//! sanitizers then convert into a flagged zero score.

use std::fmt::Write as _;

use persona_core::domain::{IntentMemory, Persona};
use persona_core::judge::{AlignmentVerdict, Judge, JudgeConfig, JudgeError, TruthVerdict};
use serde::Deserialize;

use crate::cassette::{Cassette, CassetteChat};
use crate::chat::{ChatMessage, ChatRequest, ChatTransport, HttpChat, TransportError};
use crate::prompts;

/// A judge that asks a chat model to grade personas.
pub struct LiveJudge {
    chat: Box<dyn ChatTransport>,
    model: String,
    temperature: f64,
    max_retries: u32,
}

#[derive(Deserialize)]
struct AlignmentReply {
    score: f64,
    #[serde(default)]
    aligned_evidence_ids: Vec<u32>,
    #[serde(default)]
    non_aligned_evidence_ids: Vec<u32>,
}

#[derive(Deserialize)]
struct TruthReply {
    persona: TruthLabelReply,
    #[serde(default)]
    descriptions: Vec<TruthDescriptionReply>,
}

#[derive(Deserialize)]
struct TruthLabelReply {
    score: f64,
    #[serde(default)]
    overclaim_phrases: Vec<String>,
}

#[derive(Deserialize)]
struct TruthDescriptionReply {
    id: u32,
    score: f64,
    #[serde(default)]
    overclaim_phrases: Vec<String>,
}

impl LiveJudge {
    pub fn new(
        chat: Box<dyn ChatTransport>,
        model: &str,
        temperature: f64,
        max_retries: u32,
    ) -> Self {
        LiveJudge {
            chat,
            model: model.to_owned(),
            temperature,
            max_retries,
        }
    }

    /// Builds the judge from connection settings, optionally threading the
    /// transport through a cassette (replay mode needs no live endpoint).
    pub fn from_config(
        config: &JudgeConfig,
        cassette: Option<std::sync::Arc<Cassette>>,
    ) -> Result<Self, TransportError> {
        let live: Option<Box<dyn ChatTransport>> = if config.endpoint.is_empty() {
            None
        } else {
            Some(Box::new(HttpChat::new(
                &config.endpoint,
                config.max_retries,
                config.timeout_secs,
            )?))
        };
        let chat: Box<dyn ChatTransport> = match cassette {
            Some(tape) => Box::new(CassetteChat::new(tape, live)),
            None => live.ok_or(TransportError::NoEndpoint)?,
        };
        Ok(LiveJudge::new(chat, &config.model, config.temperature, config.max_retries))
    }

    /// The persona-plus-evidence block both rubrics receive: the label, the
    /// numbered descriptions (ids the truthfulness reply refers back to),
    /// and each evidence memory as `id. label: description`.
    fn input_block(persona: &Persona, evidence: &[IntentMemory]) -> String {
        let mut block = String::new();
        let _ = writeln!(block, "Persona: {}", persona.label);
        let _ = writeln!(block, "Descriptions:");
        for (index, description) in persona.descriptions.iter().enumerate() {
            let _ = writeln!(block, "{}. {}", index + 1, description);
        }
        let _ = writeln!(block, "Evidence intent memories:");
        for memory in evidence {
            let _ = writeln!(block, "{}. {}: {}", memory.id, memory.label, memory.description);
        }
        block
    }

    /// Sends the rendered rubric and parses the reply with `decode`,
    /// re-requesting on malformed replies until the retry budget runs out.
    fn ask<T>(
        &self,
        prompt: String,
        decode: &dyn Fn(&str) -> Result<T, String>,
    ) -> Result<T, JudgeError> {
        let request = ChatRequest {
            model: self.model.clone(),
            messages: vec![ChatMessage::user(&prompt)],
            temperature: self.temperature,
            top_p: None,
            sample_index: None,
        };
        let attempts = self.max_retries + 1;
        let mut last = String::new();
        for _ in 0..attempts {
            let reply = self.chat.complete(&request).map_err(|e| JudgeError::Transport {
                message: e.to_string(),
            })?;
            match decode(&reply) {
                Ok(verdict) => return Ok(verdict),
                Err(message) => last = message,
            }
        }
        Err(JudgeError::Unparseable { message: last, attempts })
    }
}

/// Extracts the first balanced JSON object from free-form reply text,
/// ignoring code fences and surrounding prose.
fn extract_json_object(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, &byte) in bytes[start..].iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if byte == b'\\' {
                escaped = true;
            } else if byte == b'"' {
                in_string = false;
            }
            continue;
        }
        match byte {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..=start + offset]);
                }
            }
            _ => {}
        }
    }
    None
}

fn decode_alignment(reply: &str) -> Result<AlignmentVerdict, String> {
    let object = extract_json_object(reply).ok_or("no JSON object in reply")?;
    let parsed: AlignmentReply =
        serde_json::from_str(object).map_err(|e| format!("bad alignment object: {e}"))?;
    Ok(AlignmentVerdict {
        score: parsed.score,
        aligned_ids: parsed.aligned_evidence_ids,
        non_aligned_ids: parsed.non_aligned_evidence_ids,
        flagged: false,
    })
}

fn decode_truth(reply: &str) -> Result<TruthVerdict, String> {
    let object = extract_json_object(reply).ok_or("no JSON object in reply")?;
    let parsed: TruthReply =
        serde_json::from_str(object).map_err(|e| format!("bad truthfulness object: {e}"))?;
    // Replies refer to descriptions by their 1-based number; order by it and
    // let the sanitizer pad or truncate against the actual count.
    let mut by_id = parsed.descriptions;
    by_id.sort_by_key(|d| d.id);
    let description_scores: Vec<f64> = by_id.iter().map(|d| d.score).collect();
    let mut overclaim_phrases = parsed.persona.overclaim_phrases;
    for description in &by_id {
        overclaim_phrases.extend(description.overclaim_phrases.iter().cloned());
    }
    let mean_desc = if description_scores.is_empty() {
        0.0
    } else {
        description_scores.iter().sum::<f64>() / description_scores.len() as f64
    };
    Ok(TruthVerdict {
        label_score: parsed.persona.score,
        description_scores,
        overclaim_phrases,
        combined: 0.5 * (parsed.persona.score + mean_desc),
        flagged: false,
    })
}

impl Judge for LiveJudge {
    fn alignment(
        &self,
        persona: &Persona,
        evidence: &[IntentMemory],
    ) -> Result<AlignmentVerdict, JudgeError> {
        let block = Self::input_block(persona, evidence);
        let prompt = prompts::render(prompts::JUDGE_ALIGNMENT, &[("input", &block)])
            .map_err(|e| JudgeError::Transport { message: e.to_string() })?;
        self.ask(prompt, &decode_alignment)
    }

    fn truthfulness(
        &self,
        persona: &Persona,
        evidence: &[IntentMemory],
    ) -> Result<TruthVerdict, JudgeError> {
        let block = Self::input_block(persona, evidence);
        let prompt = prompts::render(prompts::JUDGE_TRUTHFULNESS, &[("input", &block)])
            .map_err(|e| JudgeError::Transport { message: e.to_string() })?;
        self.ask(prompt, &decode_truth)
    }
}
