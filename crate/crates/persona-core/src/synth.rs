//! Deterministic synthetic corpus with planted structure.
//!
//! Generates users whose memories are drawn from distinct theme vocabularies,
//! a hash-seeded embedder that maps theme tokens onto orthogonal axes (plus
//! small noise), a candidate pool per user in which one "oracle" candidate
//! groups memories exactly by theme alongside systematically corrupted
//! variants, and a global item pool with future theme items as ground truth.
//!
//! Because the geometry is planted, the ordering expected of a sound reward
//! (oracle above shuffled/merged/hallucinated variants) and of the downstream
//! ranking metrics (theme personas retrieve theme items) holds by
//! construction, which makes the corpus a test bed rather than a benchmark.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::domain::{
    parse_candidate, CandidateOutput, Day, IntentMemory, Persona, PersonaSet, ValidationPolicy,
    Window,
};
use crate::embedding::{normalize, EmbedError, EmbeddingClient, EmbeddingRequest, EmbeddingTable};
use crate::eval::{ItemPool, PoolItem};
use crate::rng::rng_for;

/// Noise amplitude added per dimension before renormalization.
pub const DEFAULT_NOISE_SCALE: f64 = 0.08;

/// Filler vocabulary for off-theme memories and distractor items. Disjoint
/// from every default theme vocabulary.
const NOISE_WORDS: &[&str] = &[
    "miscellany",
    "sundries",
    "paperwork",
    "logistics",
    "errands",
    "storage",
    "renewal",
    "commute",
    "billing",
    "laundry",
    "invoice",
    "receipts",
];

/// Twelve disjoint theme vocabularies of eight words each. Every word has at
/// least five characters so token-overlap heuristics treat them as content.
pub fn default_vocabularies() -> Vec<Vec<String>> {
    let themes: &[&[&str]] = &[
        &["sneakers", "runners", "trainers", "laces", "insoles", "jogging", "marathon", "treadmill"],
        &["espresso", "roast", "grinder", "barista", "arabica", "brewing", "crema", "portafilter"],
        &["camping", "tents", "lantern", "sleeping", "campfire", "hiking", "trailhead", "backpack"],
        &["guitar", "strings", "fretboard", "amplifier", "pickups", "acoustic", "luthier", "chords"],
        &["aquarium", "fishkeeping", "filtration", "substrate", "corals", "heater", "cichlids", "plecos"],
        &["sourdough", "proofing", "yeast", "pastry", "kneading", "ovenware", "ganache", "croissant"],
        &["camera", "lenses", "tripod", "aperture", "shutter", "mirrorless", "bokeh", "lightroom"],
        &["bicycle", "derailleur", "panniers", "cadence", "peloton", "groupset", "saddle", "chainring"],
        &["serums", "retinol", "moisturizer", "cleanser", "sunscreen", "niacinamide", "exfoliant", "toner"],
        &["woodworking", "chisels", "sawdust", "joinery", "dovetail", "planer", "walnut", "varnish"],
        &["console", "controller", "esports", "speedrun", "headset", "graphics", "keyboard", "monitor"],
        &["gardening", "seedlings", "compost", "perennials", "mulch", "pruning", "trellis", "fertilizer"],
    ];
    themes.iter().map(|t| t.iter().map(|w| w.to_string()).collect()).collect()
}

/// Errors from spec validation or dataset assembly.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    /// A count field that must be at least 1 is 0.
    #[error("{field} must be at least 1")]
    ZeroCount { field: &'static str },
    /// A theme vocabulary is empty.
    #[error("theme vocabulary {index} is empty")]
    EmptyVocabulary { index: usize },
    /// There must be more vocabularies than themes per user so every user
    /// has an unused vocabulary to hallucinate from.
    #[error("need more than {need} theme vocabularies, have {have}")]
    NotEnoughThemes { need: usize, have: usize },
    /// The same word appears in two theme vocabularies.
    #[error("word '{word}' appears in more than one theme vocabulary")]
    DuplicateVocabularyWord { word: String },
    /// Internal assembly failed; indicates a construction bug.
    #[error("synthetic assembly failed: {message}")]
    Construction { message: String },
    /// Embedding the synthetic texts failed.
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Shape of the generated corpus.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    /// Root seed; drives embedding noise and candidate-order shuffling.
    pub seed: u64,
    /// Number of users (one window each).
    pub users: u32,
    /// Themes per user, assigned by rotation over the vocabularies.
    pub themes_per_user: u32,
    /// Memories per theme in each user's window.
    pub memories_per_theme: u32,
    /// Extra off-theme memories per window.
    pub noise_memories: u32,
    /// Future (ground-truth) items generated per used theme.
    pub future_items_per_theme: u32,
    /// Off-theme items padding the global pool.
    pub distractor_items: u32,
    /// Raw log lines backing each memory.
    pub log_events_per_memory: u32,
    /// Theme word lists; default [`default_vocabularies`].
    pub vocabularies: Vec<Vec<String>>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            users: 3,
            themes_per_user: 2,
            memories_per_theme: 5,
            noise_memories: 2,
            future_items_per_theme: 1,
            distractor_items: 60,
            log_events_per_memory: 3,
            vocabularies: default_vocabularies(),
        }
    }
}

impl SyntheticSpec {
    /// Checks counts and vocabulary structure.
    pub fn validate(&self) -> Result<(), SynthError> {
        for (value, field) in [
            (self.users, "users"),
            (self.themes_per_user, "themes_per_user"),
            (self.memories_per_theme, "memories_per_theme"),
            (self.future_items_per_theme, "future_items_per_theme"),
            (self.log_events_per_memory, "log_events_per_memory"),
        ] {
            if value == 0 {
                return Err(SynthError::ZeroCount { field });
            }
        }
        if self.vocabularies.len() <= self.themes_per_user as usize {
            return Err(SynthError::NotEnoughThemes {
                need: self.themes_per_user as usize,
                have: self.vocabularies.len(),
            });
        }
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        for (index, words) in self.vocabularies.iter().enumerate() {
            if words.is_empty() {
                return Err(SynthError::EmptyVocabulary { index });
            }
            for word in words {
                if !seen.insert(word.as_str()) {
                    return Err(SynthError::DuplicateVocabularyWord { word: word.clone() });
                }
            }
        }
        Ok(())
    }
}

/// Hash-seeded text embedder with one axis per theme.
///
/// A text's vector is the per-theme count of exact vocabulary-word matches,
/// plus uniform noise of amplitude `noise` in every dimension (four spare
/// dimensions keep off-theme texts apart), renormalized to unit length. The
/// noise is a pure function of `(salt, text)`, so the embedder is
/// deterministic and stateless.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthEmbedder {
    themes: Vec<BTreeSet<String>>,
    salt: u64,
    noise: f64,
    dim: usize,
}

impl SynthEmbedder {
    /// Builds an embedder over `vocabularies` with noise keyed by `salt`.
    pub fn new(vocabularies: &[Vec<String>], salt: u64) -> Self {
        let themes: Vec<BTreeSet<String>> = vocabularies
            .iter()
            .map(|words| words.iter().map(|w| w.to_lowercase()).collect())
            .collect();
        let dim = themes.len() + 4;
        Self { themes, salt, noise: DEFAULT_NOISE_SCALE, dim }
    }

    /// Vector dimensionality (theme count + 4 spare dimensions).
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The deterministic unit vector for one text.
    pub fn vector_for(&self, text: &str) -> Vec<f64> {
        let mut v = alloc::vec![0.0; self.dim];
        let lowered = text.to_lowercase();
        for token in lowered.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            for (axis, words) in self.themes.iter().enumerate() {
                if words.contains(token) {
                    v[axis] += 1.0;
                }
            }
        }
        let mut rng = rng_for(self.salt, text);
        for x in v.iter_mut() {
            *x += self.noise * rng.gen_range(-1.0..1.0);
        }
        normalize(&v).unwrap_or_else(|| {
            let mut fallback = alloc::vec![0.0; self.dim];
            fallback[self.dim - 1] = 1.0;
            fallback
        })
    }
}

impl EmbeddingClient for SynthEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Ok(texts.iter().map(|t| self.vector_for(t)).collect())
    }
}

/// One raw behavioral log line backing a memory.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthLogEvent {
    pub user_id: String,
    pub day: Day,
    pub text: String,
}

/// The assembled corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    /// One window per user.
    pub windows: Vec<Window>,
    /// Per window: the candidate pool, variant order shuffled per user.
    pub candidate_pools: Vec<Vec<CandidateOutput>>,
    /// Per window: human-readable variant names, parallel to the pool.
    pub variant_names: Vec<Vec<String>>,
    /// Per window: position of the oracle candidate in the shuffled pool.
    pub oracle_indices: Vec<usize>,
    /// Unit embeddings for every memory text across all windows.
    pub memory_table: EmbeddingTable,
    /// Global candidate items: future theme items plus distractors.
    pub item_pool: ItemPool,
    /// Ground truth per user: the future items of that user's themes.
    pub truth: BTreeMap<String, BTreeSet<u32>>,
    /// Raw log lines, `log_events_per_memory` per memory.
    pub logs: Vec<SynthLogEvent>,
    /// The embedder all of the above was embedded with.
    pub embedder: SynthEmbedder,
}

/// Names of the candidate variants in pre-shuffle order; index 0 is the
/// oracle.
pub const VARIANT_NAMES: [&str; 8] = [
    "oracle",
    "shuffled_evidence",
    "merged_themes",
    "hallucinated",
    "undersized",
    "low_coverage",
    "split_themes",
    "noisy_evidence",
];

struct UserPlan {
    user_id: String,
    /// Global vocabulary index per theme slot.
    theme_indices: Vec<usize>,
    /// Memory ids per theme slot.
    theme_memory_ids: Vec<Vec<u32>>,
    /// Words actually used in each theme slot's memory descriptions.
    used_words: Vec<Vec<String>>,
    noise_memory_ids: Vec<u32>,
    memories: Vec<IntentMemory>,
}

fn day_for(serial: usize) -> Day {
    let month = 1 + ((serial / 28) % 12) as u8;
    let day = 1 + (serial % 28) as u8;
    let year = 2024 + (serial / 336) as i32;
    Day::new(year, month, day).expect("synthetic calendar stays in range")
}

fn plan_user(spec: &SyntheticSpec, user: usize) -> UserPlan {
    let vocab_count = spec.vocabularies.len();
    let themes = spec.themes_per_user as usize;
    let per_theme = spec.memories_per_theme as usize;
    let user_id = format!("synth-user-{user:03}");
    let theme_indices: Vec<usize> =
        (0..themes).map(|j| (user * themes + j) % vocab_count).collect();

    let mut memories = Vec::new();
    let mut theme_memory_ids = Vec::new();
    let mut used_words = Vec::new();
    let mut serial = 0usize;
    for (slot, &theme) in theme_indices.iter().enumerate() {
        let words = &spec.vocabularies[theme];
        let mut ids = Vec::new();
        let mut used: BTreeSet<String> = BTreeSet::new();
        for i in 0..per_theme {
            let id = (user as u32) * 10_000 + serial as u32 + 1;
            let wa = &words[i % words.len()];
            let wb = &words[(i + 1) % words.len()];
            let wc = &words[(i + 3) % words.len()];
            used.extend([wa.clone(), wb.clone(), wc.clone()]);
            memories.push(IntentMemory {
                id,
                day: day_for(serial),
                label: format!("{wa} browsing"),
                description: format!("{wa} and {wb} via {wc} round {user}-{slot}-{i}"),
            });
            ids.push(id);
            serial += 1;
        }
        theme_memory_ids.push(ids);
        used_words.push(used.into_iter().collect());
    }

    let mut noise_memory_ids = Vec::new();
    for k in 0..spec.noise_memories as usize {
        let id = (user as u32) * 10_000 + serial as u32 + 1;
        let na = NOISE_WORDS[k % NOISE_WORDS.len()];
        let nb = NOISE_WORDS[(k + 1) % NOISE_WORDS.len()];
        memories.push(IntentMemory {
            id,
            day: day_for(serial),
            label: format!("{na} notes"),
            description: format!("handled {na} and {nb} item {user}-{k}"),
        });
        noise_memory_ids.push(id);
        serial += 1;
    }

    UserPlan { user_id, theme_indices, theme_memory_ids, used_words, noise_memory_ids, memories }
}

/// Splits `words` into serial "w1 and w2 and w3" description phrases.
fn description_chunks(words: &[String]) -> Vec<String> {
    words.chunks(3).map(|chunk| chunk.join(" and ")).collect()
}

fn label_from(words: &[String]) -> String {
    match words {
        [] => "general".to_string(),
        [only] => only.clone(),
        [first, second, ..] => format!("{first} and {second}"),
    }
}

fn persona(id: usize, label: String, descriptions: Vec<String>, evidence: &[u32]) -> Persona {
    Persona {
        persona_id: format!("P{}", id + 1),
        label,
        descriptions,
        evidence_ids: evidence.iter().copied().collect(),
    }
}

/// Builds the eight persona-set variants for one user, oracle first.
fn build_variants(spec: &SyntheticSpec, plan: &UserPlan) -> Vec<PersonaSet> {
    let themes = plan.theme_indices.len();
    let oracle: Vec<Persona> = (0..themes)
        .map(|j| {
            persona(
                j,
                label_from(&plan.used_words[j]),
                description_chunks(&plan.used_words[j]),
                &plan.theme_memory_ids[j],
            )
        })
        .collect();

    // Evidence dealt round-robin across personas, mixing the themes.
    let all_ids: Vec<u32> = plan.theme_memory_ids.iter().flatten().copied().collect();
    let shuffled: Vec<Persona> = (0..themes)
        .map(|j| {
            let ids: Vec<u32> =
                all_ids.iter().enumerate().filter(|(i, _)| i % themes == j).map(|(_, &id)| id).collect();
            persona(j, label_from(&plan.used_words[j]), description_chunks(&plan.used_words[j]), &ids)
        })
        .collect();

    // One persona spanning every theme, described in theme-0 terms only.
    let merged = alloc::vec![persona(
        0,
        label_from(&plan.used_words[0]),
        description_chunks(&plan.used_words[0]),
        &all_ids,
    )];

    // Oracle evidence, but text drawn from a vocabulary this user never used.
    let unused_theme = (plan.theme_indices.iter().max().copied().unwrap_or(0) + 1)
        % spec.vocabularies.len();
    let foreign: Vec<String> = spec.vocabularies[unused_theme].clone();
    let hallucinated: Vec<Persona> = (0..themes)
        .map(|j| {
            persona(j, label_from(&foreign), description_chunks(&foreign), &plan.theme_memory_ids[j])
        })
        .collect();

    // A single supporting memory per persona.
    let undersized: Vec<Persona> = (0..themes)
        .map(|j| {
            persona(
                j,
                label_from(&plan.used_words[j]),
                description_chunks(&plan.used_words[j]),
                &plan.theme_memory_ids[j][..1],
            )
        })
        .collect();

    // Only the first half of each theme's evidence is claimed.
    let low_coverage: Vec<Persona> = (0..themes)
        .map(|j| {
            let ids = &plan.theme_memory_ids[j];
            let half = ids.len().div_ceil(2).max(1);
            persona(
                j,
                label_from(&plan.used_words[j]),
                description_chunks(&plan.used_words[j]),
                &ids[..half],
            )
        })
        .collect();

    // Each theme split into two personas with disjoint half evidence.
    let mut split = Vec::new();
    for j in 0..themes {
        let ids = &plan.theme_memory_ids[j];
        let half = ids.len().div_ceil(2).max(1);
        let (front, back) = ids.split_at(half.min(ids.len()));
        split.push(persona(
            split.len(),
            label_from(&plan.used_words[j]),
            description_chunks(&plan.used_words[j]),
            front,
        ));
        if !back.is_empty() {
            split.push(persona(
                split.len(),
                label_from(&plan.used_words[j]),
                description_chunks(&plan.used_words[j]),
                back,
            ));
        }
    }

    // Oracle, except the first persona also claims the off-theme memories.
    let noisy: Vec<Persona> = (0..themes)
        .map(|j| {
            let mut ids = plan.theme_memory_ids[j].clone();
            if j == 0 {
                ids.extend(plan.noise_memory_ids.iter().copied());
            }
            persona(j, label_from(&plan.used_words[j]), description_chunks(&plan.used_words[j]), &ids)
        })
        .collect();

    [oracle, shuffled, merged, hallucinated, undersized, low_coverage, split, noisy]
        .into_iter()
        .map(|personas| PersonaSet { personas, source_candidate_index: 0 })
        .collect()
}

/// Generates the full corpus for `spec`. Identical specs produce identical
/// datasets, bit for bit.
pub fn synth_dataset(spec: &SyntheticSpec) -> Result<SyntheticDataset, SynthError> {
    spec.validate()?;
    let embedder = SynthEmbedder::new(&spec.vocabularies, spec.seed);

    let mut windows = Vec::new();
    let mut candidate_pools = Vec::new();
    let mut variant_names = Vec::new();
    let mut oracle_indices = Vec::new();
    let mut truth: BTreeMap<String, BTreeSet<u32>> = BTreeMap::new();
    let mut logs = Vec::new();
    let mut memory_texts: Vec<(String, String)> = Vec::new();
    let mut themes_used: BTreeSet<usize> = BTreeSet::new();

    for user in 0..spec.users as usize {
        let plan = plan_user(spec, user);
        themes_used.extend(plan.theme_indices.iter().copied());

        for memory in &plan.memories {
            let text = crate::embedding::memory_text(memory);
            memory_texts.push((text.clone(), text));
            for e in 0..spec.log_events_per_memory as usize {
                logs.push(SynthLogEvent {
                    user_id: plan.user_id.clone(),
                    day: memory.day,
                    text: format!("viewed {} listing {e}", memory.label),
                });
            }
        }

        let window = Window::new(plan.user_id.clone(), plan.memories.clone())
            .map_err(|e| SynthError::Construction { message: e.to_string() })?;

        let variants = build_variants(spec, &plan);
        let mut order: Vec<usize> = (0..variants.len()).collect();
        crate::rng::shuffle(
            &mut rng_for(spec.seed, &format!("synth/candidate-order/{user}")),
            &mut order,
        );
        let mut pool = Vec::with_capacity(variants.len());
        let mut names = Vec::with_capacity(variants.len());
        let mut oracle_at = 0usize;
        for (position, &variant_index) in order.iter().enumerate() {
            let raw = serde_json::to_string(&variants[variant_index])
                .map_err(|e| SynthError::Construction { message: e.to_string() })?;
            let mut candidate = parse_candidate(&raw);
            candidate.validate_against(&window, ValidationPolicy::Lenient);
            if !candidate.is_valid() {
                return Err(SynthError::Construction {
                    message: format!(
                        "variant '{}' failed validation for {}",
                        VARIANT_NAMES[variant_index], plan.user_id
                    ),
                });
            }
            if variant_index == 0 {
                oracle_at = position;
            }
            names.push(VARIANT_NAMES[variant_index].to_string());
            pool.push(candidate);
        }

        let user_truth: BTreeSet<u32> = plan
            .theme_indices
            .iter()
            .flat_map(|&t| (0..spec.future_items_per_theme).map(move |f| item_id_for(t, f)))
            .collect();
        truth.insert(plan.user_id.clone(), user_truth);

        windows.push(window);
        candidate_pools.push(pool);
        variant_names.push(names);
        oracle_indices.push(oracle_at);
    }

    let request = EmbeddingRequest::new(
        memory_texts.iter().map(|(k, _)| k.clone()).collect(),
        memory_texts.iter().map(|(_, t)| t.clone()).collect(),
    )?;
    let memory_table = crate::embedding::embed_batch(&request, &embedder)?;

    let mut items = Vec::new();
    for &t in &themes_used {
        let words = &spec.vocabularies[t];
        for f in 0..spec.future_items_per_theme {
            let wa = &words[f as usize % words.len()];
            let wb = &words[(f as usize + 2) % words.len()];
            items.push((item_id_for(t, f), format!("{wa} and {wb} edition {f}")));
        }
    }
    for d in 0..spec.distractor_items {
        let nw = NOISE_WORDS[d as usize % NOISE_WORDS.len()];
        items.push((2_000_000 + d, format!("assorted {nw} bundle {d}")));
    }
    let pool_items: Vec<PoolItem> = items
        .into_iter()
        .map(|(item_id, text)| {
            let vector = embedder.vector_for(&text);
            PoolItem { item_id, text, vector }
        })
        .collect();
    let item_pool = ItemPool::new(pool_items)
        .map_err(|e| SynthError::Construction { message: e.to_string() })?;

    Ok(SyntheticDataset {
        spec: spec.clone(),
        windows,
        candidate_pools,
        variant_names,
        oracle_indices,
        memory_table,
        item_pool,
        truth,
        logs,
        embedder,
    })
}

/// Stable id for the `f`-th future item of global theme `t`.
pub fn item_id_for(theme: usize, future_index: u32) -> u32 {
    1_000_000 + theme as u32 * 1_000 + future_index
}
