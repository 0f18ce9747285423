//! Deterministic persona-quality rewards: cohesion, size, coverage, and the
//! persona-level / output-level aggregations.
//!
//! Judge-produced alignment and truthfulness scores are inputs here (see the
//! `judge` module); this module owns everything computable from embeddings
//! and evidence structure alone, plus the weighted combinations that yield
//! the scalar reward used for preference training.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::domain::{Persona, PersonaSet, Window};
use crate::embedding::{memory_text, EmbedError, EmbeddingTable};
use crate::mathx;

/// Per-persona quality components.
///
/// `align`, `truth`, and `size` live in `[0,1]`; `coh` is unclipped and lies
/// in `[-2, 2]` for unit-norm embeddings (`size` also escapes `[0,1]` only
/// for evidence sets larger than twice `e_max`, which the piecewise formula
/// deliberately punishes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityVector {
    pub coh: f64,
    pub align: f64,
    pub truth: f64,
    pub size: f64,
}

/// Weights and bounds for the reward computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Variance penalty λ on intra-evidence cosine spread.
    pub lambda_var: f64,
    /// Soft lower bound on evidence-set size.
    pub e_min: u32,
    /// Soft upper bound on evidence-set size.
    pub e_max: u32,
    /// Weight of the averaged (align, truth, coh) triple in r(p).
    pub alpha1: f64,
    /// Weight of the size score in r(p).
    pub alpha2: f64,
    /// Weight of the mean persona reward in the output reward.
    pub alpha3: f64,
    /// Weight of soft coverage in the output reward.
    pub alpha4: f64,
    /// Coverage ratio at or above which soft coverage snaps to 1.
    pub cov_threshold: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            lambda_var: 0.5,
            e_min: 3,
            e_max: 20,
            alpha1: 0.9,
            alpha2: 0.1,
            alpha3: 0.9,
            alpha4: 0.1,
            cov_threshold: 0.7,
        }
    }
}

impl RewardConfig {
    /// Check structural validity: `1 ≤ e_min ≤ e_max` and a usable
    /// threshold. (`e_min = 1` degenerates the lower size branch to
    /// unreachable, which is accepted.)
    pub fn validate(&self) -> Result<(), QualityError> {
        if self.e_min < 1 || self.e_min > self.e_max {
            return Err(QualityError::InvalidConfig {
                message: String::from("require 1 <= e_min <= e_max"),
            });
        }
        if !(self.cov_threshold > 0.0 && self.cov_threshold <= 1.0) {
            return Err(QualityError::InvalidConfig {
                message: String::from("cov_threshold must lie in (0, 1]"),
            });
        }
        Ok(())
    }
}

/// Judge outputs for one persona, consumed by [`score_candidate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeScores {
    pub align: f64,
    pub truth: f64,
}

/// One persona with its quality vector and scalar persona reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaScore {
    pub persona: Persona,
    pub quality: QualityVector,
    pub reward: f64,
}

/// A fully scored candidate: per-persona details plus the output-level
/// coverage and scalar reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub persona_set: PersonaSet,
    pub per_persona: Vec<PersonaScore>,
    pub coverage_raw: f64,
    pub coverage_soft: f64,
    pub scalar_reward: f64,
}

/// Errors from reward computation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QualityError {
    #[error("invalid reward config: {message}")]
    InvalidConfig { message: String },
    #[error("window has no memories")]
    EmptyWindow,
    #[error("persona set has no personas")]
    EmptyPersonaList,
    #[error("evidence id {id} does not exist in the window")]
    UnknownMemory { id: u32 },
    #[error("judge scores cover {got} personas but the set has {expected}")]
    JudgeCardinality { expected: usize, got: usize },
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Intra-evidence cohesion with a variance penalty, plus separation from
/// non-evidence memories:
/// `(μ_in − λ·σ_in) + (μ_in − μ_cross)`.
///
/// `μ_in`/`σ_in` are the mean and population standard deviation of cosine
/// similarity over unordered evidence pairs; `μ_cross` is the mean cosine
/// over all (evidence, non-evidence) pairs. Degenerate cases: fewer than
/// two evidence memories score 0 (the intra component is undefined), and an
/// evidence set covering the whole window takes `μ_cross = 0` (no
/// separation is computable; treated as neutral).
pub fn cohesion_score(
    evidence: &BTreeSet<u32>,
    window: &Window,
    table: &EmbeddingTable,
    lambda_var: f64,
) -> Result<f64, QualityError> {
    if window.memories.is_empty() {
        return Err(QualityError::EmptyWindow);
    }
    if evidence.len() < 2 {
        return Ok(0.0);
    }

    let mut in_vecs: Vec<&[f64]> = Vec::with_capacity(evidence.len());
    for &id in evidence {
        let m = window
            .memory(id)
            .ok_or(QualityError::UnknownMemory { id })?;
        in_vecs.push(table.require(&memory_text(m))?);
    }
    let mut out_vecs: Vec<&[f64]> = Vec::new();
    for m in &window.memories {
        if !evidence.contains(&m.id) {
            out_vecs.push(table.require(&memory_text(m))?);
        }
    }

    let mut intra = Vec::with_capacity(evidence.len() * (evidence.len() - 1) / 2);
    for a in 0..in_vecs.len() {
        for b in (a + 1)..in_vecs.len() {
            intra.push(mathx::dot(in_vecs[a], in_vecs[b]));
        }
    }
    let mu_in = mathx::mean(&intra);
    let sigma_in = mathx::population_std(&intra);

    let mu_cross = if out_vecs.is_empty() {
        0.0
    } else {
        let mut sum = 0.0;
        for a in &in_vecs {
            for b in &out_vecs {
                sum += mathx::dot(a, b);
            }
        }
        sum / (in_vecs.len() * out_vecs.len()) as f64
    };

    Ok((mu_in - lambda_var * sigma_in) + (mu_in - mu_cross))
}

/// Piecewise-quadratic size score: 1 inside `[e_min, e_max]`, quadratic
/// falloff outside. Evaluated exactly as defined; not clipped.
pub fn size_score(n: usize, e_min: u32, e_max: u32) -> f64 {
    let n = n as f64;
    let lo = e_min as f64;
    let hi = e_max as f64;
    if n < lo {
        // Unreachable for e_min = 1 (n >= 1), so the denominator is safe.
        let d = (lo - n) / (lo - 1.0);
        1.0 - d * d
    } else if n <= hi {
        1.0
    } else {
        let d = (n - hi) / hi;
        1.0 - d * d
    }
}

/// Coverage of the window by the union of all evidence sets, raw and
/// soft-thresholded: `soft = 1` when `raw ≥ threshold`, else `raw`.
pub fn coverage_score(
    set: &PersonaSet,
    window: &Window,
    threshold: f64,
) -> Result<(f64, f64), QualityError> {
    if window.memories.is_empty() {
        return Err(QualityError::EmptyWindow);
    }
    let known = window.memory_ids();
    let mut union: BTreeSet<u32> = BTreeSet::new();
    for p in &set.personas {
        union.extend(p.evidence_ids.intersection(&known).copied());
    }
    let raw = union.len() as f64 / window.memories.len() as f64;
    let soft = if raw >= threshold { 1.0 } else { raw };
    Ok((raw, soft))
}

/// Persona-level reward: `α1·(align + truth + coh)/3 + α2·size`.
pub fn persona_reward(q: &QualityVector, cfg: &RewardConfig) -> f64 {
    cfg.alpha1 * (q.align + q.truth + q.coh) / 3.0 + cfg.alpha2 * q.size
}

/// Output-level reward: `α3·mean(persona rewards) + α4·soft coverage`.
/// Errors on an empty reward list (an invalid candidate that callers should
/// have filtered).
pub fn output_reward(
    rewards: &[f64],
    coverage_soft: f64,
    cfg: &RewardConfig,
) -> Result<f64, QualityError> {
    if rewards.is_empty() {
        return Err(QualityError::EmptyPersonaList);
    }
    Ok(cfg.alpha3 * mathx::mean(rewards) + cfg.alpha4 * coverage_soft)
}

/// Score every persona in a candidate and aggregate to the scalar reward.
///
/// `judged` supplies the judge outputs, parallel to `set.personas`.
pub fn score_candidate(
    set: &PersonaSet,
    window: &Window,
    table: &EmbeddingTable,
    judged: &[JudgeScores],
    cfg: &RewardConfig,
) -> Result<ScoredCandidate, QualityError> {
    cfg.validate()?;
    if set.personas.is_empty() {
        return Err(QualityError::EmptyPersonaList);
    }
    if judged.len() != set.personas.len() {
        return Err(QualityError::JudgeCardinality {
            expected: set.personas.len(),
            got: judged.len(),
        });
    }

    let mut per_persona = Vec::with_capacity(set.personas.len());
    let mut rewards = Vec::with_capacity(set.personas.len());
    for (p, j) in set.personas.iter().zip(judged) {
        let coh = cohesion_score(&p.evidence_ids, window, table, cfg.lambda_var)?;
        let quality = QualityVector {
            coh,
            align: j.align,
            truth: j.truth,
            size: size_score(p.evidence_ids.len(), cfg.e_min, cfg.e_max),
        };
        let reward = persona_reward(&quality, cfg);
        rewards.push(reward);
        per_persona.push(PersonaScore {
            persona: p.clone(),
            quality,
            reward,
        });
    }

    let (coverage_raw, coverage_soft) = coverage_score(set, window, cfg.cov_threshold)?;
    let scalar_reward = output_reward(&rewards, coverage_soft, cfg)?;
    Ok(ScoredCandidate {
        persona_set: set.clone(),
        per_persona,
        coverage_raw,
        coverage_soft,
        scalar_reward,
    })
}
