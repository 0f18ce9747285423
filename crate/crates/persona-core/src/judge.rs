//! Judge abstractions for alignment and truthfulness scoring.
//!
//! A [`Judge`] turns a persona and its evidence memories into verdicts. The
//! live HTTP judge lives in the pipeline crate; this module defines the
//! trait, the verdict types, the sanitizing wrappers [`judge_alignment`] and
//! [`judge_truthfulness`] that enforce score ranges and combining formulas
//! regardless of judge quality, and [`MockJudge`] — a deterministic
//! token-overlap judge for tests and offline runs.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::domain::{IntentMemory, Persona, PersonaSet, Window};
use crate::mathx;
use crate::quality::JudgeScores;

/// Alignment verdict: which evidence memories support the persona.
///
/// `aligned_ids` and `non_aligned_ids` partition the persona's evidence;
/// when the partition is known, `score` equals
/// `|aligned| / (|aligned| + |non_aligned|)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentVerdict {
    pub score: f64,
    pub aligned_ids: Vec<u32>,
    pub non_aligned_ids: Vec<u32>,
    /// True when the judge reply was unusable and the score was imputed.
    #[serde(default)]
    pub flagged: bool,
}

/// Truthfulness verdict: support for the label and each description.
///
/// `combined` is `½·(label_score + mean(description_scores))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthVerdict {
    pub label_score: f64,
    pub description_scores: Vec<f64>,
    pub overclaim_phrases: Vec<String>,
    pub combined: f64,
    /// True when scores were imputed (unusable reply, missing entries, or a
    /// persona with no descriptions).
    #[serde(default)]
    pub flagged: bool,
}

/// Connection settings for a live judge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgeConfig {
    pub endpoint: String,
    pub model: String,
    pub max_retries: u32,
    pub temperature: f64,
    pub timeout_secs: u64,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        JudgeConfig {
            endpoint: String::new(),
            model: String::new(),
            max_retries: 2,
            temperature: 0.0,
            timeout_secs: 60,
        }
    }
}

/// Judge failures. `Unparseable` is absorbed by the sanitizing wrappers
/// (scored as zero and flagged); transport failures propagate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum JudgeError {
    #[error("judge reply unparseable after {attempts} attempts: {message}")]
    Unparseable { message: String, attempts: u32 },
    #[error("judge transport failed: {message}")]
    Transport { message: String },
}

/// A scorer of personas against their evidence. Implementations may be
/// remote models or deterministic stand-ins; they return raw verdicts which
/// the wrapper functions sanitize.
pub trait Judge: Send + Sync {
    fn alignment(
        &self,
        persona: &Persona,
        evidence: &[IntentMemory],
    ) -> Result<AlignmentVerdict, JudgeError>;

    fn truthfulness(
        &self,
        persona: &Persona,
        evidence: &[IntentMemory],
    ) -> Result<TruthVerdict, JudgeError>;
}

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Score persona–evidence alignment through `judge`, then sanitize:
///
/// * the id lists are restricted to the persona's evidence, deduplicated,
///   and completed (ids the judge did not mention count as non-aligned);
/// * when the partition is nonempty the score is recomputed as the aligned
///   fraction, otherwise the judge's score is clamped to `[0,1]`;
/// * an unparseable reply (after the judge's own retries) yields a flagged
///   zero verdict instead of an error.
pub fn judge_alignment(
    persona: &Persona,
    evidence: &[IntentMemory],
    judge: &dyn Judge,
) -> Result<AlignmentVerdict, JudgeError> {
    let raw = match judge.alignment(persona, evidence) {
        Ok(v) => v,
        Err(JudgeError::Unparseable { .. }) => {
            return Ok(AlignmentVerdict {
                score: 0.0,
                aligned_ids: Vec::new(),
                non_aligned_ids: persona.evidence_ids.iter().copied().collect(),
                flagged: true,
            });
        }
        Err(e) => return Err(e),
    };

    let aligned: BTreeSet<u32> = raw
        .aligned_ids
        .iter()
        .copied()
        .filter(|id| persona.evidence_ids.contains(id))
        .collect();
    let mentioned_non: BTreeSet<u32> = raw
        .non_aligned_ids
        .iter()
        .copied()
        .filter(|id| persona.evidence_ids.contains(id) && !aligned.contains(id))
        .collect();
    let partition_known = !aligned.is_empty() || !mentioned_non.is_empty();

    if partition_known && !persona.evidence_ids.is_empty() {
        // Complete the partition: unmentioned ids count as non-aligned.
        let non_aligned: Vec<u32> = persona
            .evidence_ids
            .iter()
            .copied()
            .filter(|id| !aligned.contains(id))
            .collect();
        let aligned: Vec<u32> = aligned.into_iter().collect();
        let score = aligned.len() as f64 / persona.evidence_ids.len() as f64;
        Ok(AlignmentVerdict {
            score,
            aligned_ids: aligned,
            non_aligned_ids: non_aligned,
            flagged: raw.flagged,
        })
    } else {
        // Score-only reply: keep the lists empty rather than fabricating a
        // partition that would disagree with the clamped score.
        Ok(AlignmentVerdict {
            score: clamp01(raw.score),
            aligned_ids: Vec::new(),
            non_aligned_ids: Vec::new(),
            flagged: raw.flagged,
        })
    }
}

/// Score persona truthfulness through `judge`, then sanitize:
///
/// * label and description scores are clamped to `[0,1]`;
/// * the description list is padded with zeros or truncated to the
///   persona's description count (flagged when adjusted);
/// * `combined` is always recomputed as `½·(label + mean(descriptions))`;
/// * a persona with no descriptions is recorded as combined 0, flagged;
/// * an unparseable reply yields a flagged zero verdict.
pub fn judge_truthfulness(
    persona: &Persona,
    evidence: &[IntentMemory],
    judge: &dyn Judge,
) -> Result<TruthVerdict, JudgeError> {
    if persona.descriptions.is_empty() {
        return Ok(TruthVerdict {
            label_score: 0.0,
            description_scores: Vec::new(),
            overclaim_phrases: Vec::new(),
            combined: 0.0,
            flagged: true,
        });
    }
    let raw = match judge.truthfulness(persona, evidence) {
        Ok(v) => v,
        Err(JudgeError::Unparseable { .. }) => {
            return Ok(TruthVerdict {
                label_score: 0.0,
                description_scores: alloc::vec![0.0; persona.descriptions.len()],
                overclaim_phrases: Vec::new(),
                combined: 0.0,
                flagged: true,
            });
        }
        Err(e) => return Err(e),
    };

    let k = persona.descriptions.len();
    let mut description_scores: Vec<f64> =
        raw.description_scores.iter().map(|&s| clamp01(s)).collect();
    let mut flagged = raw.flagged;
    if description_scores.len() != k {
        flagged = true;
        description_scores.truncate(k);
        while description_scores.len() < k {
            description_scores.push(0.0);
        }
    }
    let label_score = clamp01(raw.label_score);
    let combined = 0.5 * (label_score + mathx::mean(&description_scores));
    Ok(TruthVerdict {
        label_score,
        description_scores,
        overclaim_phrases: raw.overclaim_phrases,
        combined,
        flagged,
    })
}

/// Judges every persona of a set against its evidence from `window`,
/// returning `(alignment score, combined truthfulness)` pairs in persona
/// order — the shape [`crate::quality::score_candidate`] consumes.
///
/// Evidence ids missing from the window are skipped when assembling the
/// evidence slice (a validated candidate has none).
pub fn judge_candidate(
    set: &PersonaSet,
    window: &Window,
    judge: &dyn Judge,
) -> Result<Vec<JudgeScores>, JudgeError> {
    set.personas
        .iter()
        .map(|persona| {
            let evidence: Vec<IntentMemory> = persona
                .evidence_ids
                .iter()
                .filter_map(|id| window.memory(*id).cloned())
                .collect();
            let align = judge_alignment(persona, &evidence, judge)?;
            let truth = judge_truthfulness(persona, &evidence, judge)?;
            Ok(JudgeScores { align: align.score, truth: truth.combined })
        })
        .collect()
}

/// Deterministic token-overlap judge.
///
/// Alignment: the fraction of evidence memories whose description shares at
/// least one content token (lowercase alphanumeric run of length ≥ 4) with
/// the persona's label and descriptions. Truthfulness: for the label and
/// each description, the fraction of its content tokens found in the
/// evidence bag-of-tokens, quantized to the guideline anchors
/// {0, 0.3, 0.7, 1.0} (ties round up). Pure function of (persona, evidence,
/// seed); the seed is identity only — scoring itself is rule-based.
#[derive(Debug, Clone, Copy)]
pub struct MockJudge {
    #[allow(dead_code)]
    seed: u64,
}

/// Build the deterministic mock judge.
pub fn mock_judge(seed: u64) -> MockJudge {
    MockJudge { seed }
}

/// Lowercase alphanumeric tokens of length ≥ 4.
pub fn content_tokens(text: &str) -> BTreeSet<String> {
    let mut tokens = BTreeSet::new();
    let lower = text.to_lowercase();
    for raw in lower.split(|c: char| !c.is_alphanumeric()) {
        if raw.chars().count() >= 4 {
            tokens.insert(raw.to_string());
        }
    }
    tokens
}

/// Snap a fraction in [0,1] to the nearest of {0, 0.3, 0.7, 1.0}; ties go
/// to the larger anchor.
pub fn quantize_to_anchors(x: f64) -> f64 {
    const ANCHORS: [f64; 4] = [0.0, 0.3, 0.7, 1.0];
    let mut best = ANCHORS[0];
    let mut best_d = f64::INFINITY;
    for &a in &ANCHORS {
        let d = mathx::abs(x - a);
        if d < best_d || (d == best_d && a > best) {
            best = a;
            best_d = d;
        }
    }
    best
}

impl MockJudge {
    fn persona_tokens(persona: &Persona) -> BTreeSet<String> {
        let mut t = content_tokens(&persona.label);
        for d in &persona.descriptions {
            t.extend(content_tokens(d));
        }
        t
    }

    fn evidence_bag(evidence: &[IntentMemory]) -> BTreeSet<String> {
        let mut bag = BTreeSet::new();
        for m in evidence {
            bag.extend(content_tokens(&m.label));
            bag.extend(content_tokens(&m.description));
        }
        bag
    }

    fn overlap_fraction(text: &str, bag: &BTreeSet<String>) -> f64 {
        let tokens = content_tokens(text);
        if tokens.is_empty() {
            return 0.0;
        }
        let hits = tokens.iter().filter(|t| bag.contains(*t)).count();
        hits as f64 / tokens.len() as f64
    }
}

impl Judge for MockJudge {
    fn alignment(
        &self,
        persona: &Persona,
        evidence: &[IntentMemory],
    ) -> Result<AlignmentVerdict, JudgeError> {
        let ptokens = Self::persona_tokens(persona);
        let mut aligned = Vec::new();
        let mut non_aligned = Vec::new();
        for m in evidence {
            let shares = content_tokens(&m.description)
                .iter()
                .any(|t| ptokens.contains(t));
            if shares {
                aligned.push(m.id);
            } else {
                non_aligned.push(m.id);
            }
        }
        let total = aligned.len() + non_aligned.len();
        let score = if total == 0 {
            0.0
        } else {
            aligned.len() as f64 / total as f64
        };
        Ok(AlignmentVerdict {
            score,
            aligned_ids: aligned,
            non_aligned_ids: non_aligned,
            flagged: false,
        })
    }

    fn truthfulness(
        &self,
        persona: &Persona,
        evidence: &[IntentMemory],
    ) -> Result<TruthVerdict, JudgeError> {
        let bag = Self::evidence_bag(evidence);
        let label_score = quantize_to_anchors(Self::overlap_fraction(&persona.label, &bag));
        let mut description_scores = Vec::with_capacity(persona.descriptions.len());
        let mut overclaim_phrases = Vec::new();
        for d in &persona.descriptions {
            let s = quantize_to_anchors(Self::overlap_fraction(d, &bag));
            if s == 0.0 {
                overclaim_phrases.push(d.clone());
            }
            description_scores.push(s);
        }
        let combined = 0.5 * (label_score + mathx::mean(&description_scores));
        Ok(TruthVerdict {
            label_score,
            description_scores,
            overclaim_phrases,
            combined,
            flagged: false,
        })
    }
}
