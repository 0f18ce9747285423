//! Downstream-utility evaluation: rank a global item pool per persona and
//! score the ranking against future-interaction ground truth.
//!
//! Each persona is embedded, the full pool is ordered by embedding relevance,
//! and Hit@k / MAP@k are computed per persona, averaged per user, then
//! averaged across users into dataset-level numbers. A rank-correlation
//! helper is included for trend checks between reward and utility.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::embedding::{cosine, normalize, EmbedError, EmbeddingClient};

/// Errors from pool construction and evaluation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    /// The item pool has no items.
    #[error("item pool is empty")]
    EmptyPool,
    /// Two pool items share an id.
    #[error("duplicate item id {id}")]
    DuplicateItemId { id: u32 },
    /// An item's vector length disagrees with the pool's dimensionality.
    #[error("dimension mismatch: pool dim {expected}, got {got} for item {id}")]
    DimensionMismatch { expected: usize, got: usize, id: u32 },
    /// An item's vector has (near-)zero norm.
    #[error("zero-norm vector for item {id}")]
    ZeroNormItem { id: u32 },
    /// The query vector's length disagrees with the pool's dimensionality.
    #[error("query dimension {got} does not match pool dimension {expected}")]
    QueryDimension { expected: usize, got: usize },
    /// Every user was skipped; there is nothing to aggregate.
    #[error("no user had both personas and ground truth")]
    NoUsableUsers,
    /// Persona embedding failed.
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// One candidate item: id, display text, and unit embedding.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PoolItem {
    pub item_id: u32,
    pub text: String,
    pub vector: Vec<f64>,
}

/// The global candidate pool shared by every user.
///
/// Items are stored in ascending-id order with renormalized unit vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemPool {
    items: Vec<PoolItem>,
    dim: usize,
}

impl ItemPool {
    /// Validates ids, dimensions, and norms, then renormalizes and sorts.
    pub fn new(mut items: Vec<PoolItem>) -> Result<Self, EvalError> {
        if items.is_empty() {
            return Err(EvalError::EmptyPool);
        }
        let dim = items[0].vector.len();
        items.sort_by_key(|item| item.item_id);
        for pair in items.windows(2) {
            if pair[0].item_id == pair[1].item_id {
                return Err(EvalError::DuplicateItemId { id: pair[0].item_id });
            }
        }
        for item in &mut items {
            if item.vector.len() != dim {
                return Err(EvalError::DimensionMismatch {
                    expected: dim,
                    got: item.vector.len(),
                    id: item.item_id,
                });
            }
            item.vector =
                normalize(&item.vector).ok_or(EvalError::ZeroNormItem { id: item.item_id })?;
        }
        Ok(Self { items, dim })
    }

    /// Number of items.
    pub fn len(&self) -> usize {
        self.items.len()
    }

    /// Whether the pool has no items (never true once constructed).
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Vector dimensionality.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Items in ascending-id order.
    pub fn items(&self) -> &[PoolItem] {
        &self.items
    }
}

/// Orders the whole pool by descending cosine relevance to `query`,
/// breaking exact score ties toward the smaller item id.
pub fn rank_pool(query: &[f64], pool: &ItemPool) -> Result<Vec<u32>, EvalError> {
    if query.len() != pool.dim() {
        return Err(EvalError::QueryDimension { expected: pool.dim(), got: query.len() });
    }
    let mut scored: Vec<(f64, u32)> =
        pool.items().iter().map(|item| (cosine(query, &item.vector), item.item_id)).collect();
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0).unwrap_or(core::cmp::Ordering::Equal).then(a.1.cmp(&b.1))
    });
    Ok(scored.into_iter().map(|(_, id)| id).collect())
}

/// 1.0 if any ground-truth id appears in the first `k` ranks, else 0.0.
pub fn hit_at_k(ranked: &[u32], truth: &BTreeSet<u32>, k: usize) -> f64 {
    if ranked.iter().take(k).any(|id| truth.contains(id)) {
        1.0
    } else {
        0.0
    }
}

/// Fraction of the reachable ground truth found in the first `k` ranks:
/// `|truth ∩ top-k| / min(|truth|, k)`. The graded alternative to the
/// binary [`hit_at_k`].
///
/// Like [`average_precision_at_k`], the `min(|truth|, k)` normalizer grows
/// with `k` while `k < |truth|`, so the metric can dip as `k` rises (one
/// early hit divided by a larger reachable count); from `k >= |truth|` on
/// it is nondecreasing.
pub fn fractional_hit_at_k(ranked: &[u32], truth: &BTreeSet<u32>, k: usize) -> f64 {
    let reachable = truth.len().min(k);
    if reachable == 0 {
        return 0.0;
    }
    let found = ranked.iter().take(k).filter(|id| truth.contains(id)).count();
    found as f64 / reachable as f64
}

/// Average precision truncated at `k`:
/// `AP@k = (1 / min(|truth|, k)) * Σ_{i=1..k} Precision@i * rel(i)`.
///
/// The normalizer makes a perfect ranking score exactly 1 regardless of how
/// much truth exists beyond `k`. One consequence: while `k < |truth|` the
/// normalizer still grows with `k`, so AP@k can decrease as `k` rises (a
/// front-loaded ranking divides its early hits by an ever-larger reachable
/// count); from `k >= |truth|` on it is nondecreasing.
pub fn average_precision_at_k(ranked: &[u32], truth: &BTreeSet<u32>, k: usize) -> f64 {
    let reachable = truth.len().min(k);
    if reachable == 0 {
        return 0.0;
    }
    let mut found = 0usize;
    let mut sum = 0.0;
    for (pos, id) in ranked.iter().take(k).enumerate() {
        if truth.contains(id) {
            found += 1;
            sum += found as f64 / (pos + 1) as f64;
        }
    }
    sum / reachable as f64
}

/// How a persona's top-k hits aggregate into its Hit@k value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitMode {
    /// 1 if anything was hit (the conventional reading).
    #[default]
    Binary,
    /// Fraction of reachable truth hit.
    Fractional,
}

/// One user's evaluation input: persona texts and future-interaction truth.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalUser {
    pub user_id: String,
    pub persona_texts: Vec<String>,
    pub truth: BTreeSet<u32>,
}

/// Persona-averaged metrics for one user, parallel to the requested `ks`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct UserMetrics {
    pub user_id: String,
    pub hit: Vec<f64>,
    pub map: Vec<f64>,
}

/// Dataset-level aggregate for one cutoff.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KSummary {
    pub k: usize,
    pub hit: f64,
    pub map: f64,
}

/// Full evaluation output: per-user rows, dataset means, and the users that
/// had to be excluded (no personas or no truth).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalResult {
    pub ks: Vec<usize>,
    pub per_user: Vec<UserMetrics>,
    pub dataset_mean: Vec<KSummary>,
    pub skipped_users: Vec<String>,
}

/// Embeds every persona, ranks the pool once per persona, and aggregates
/// metrics persona → user → dataset.
///
/// Users without personas or without truth are excluded and recorded in
/// `skipped_users`; if that excludes everyone the evaluation errors.
pub fn evaluate(
    users: &[EvalUser],
    pool: &ItemPool,
    ks: &[usize],
    mode: HitMode,
    embedder: &dyn EmbeddingClient,
) -> Result<EvalResult, EvalError> {
    let mut skipped = Vec::new();
    let mut usable: Vec<&EvalUser> = Vec::new();
    for user in users {
        if user.persona_texts.is_empty() || user.truth.is_empty() {
            skipped.push(user.user_id.clone());
        } else {
            usable.push(user);
        }
    }
    if usable.is_empty() {
        return Err(EvalError::NoUsableUsers);
    }

    // One embedding round trip for every persona of every usable user.
    let texts: Vec<String> =
        usable.iter().flat_map(|u| u.persona_texts.iter().cloned()).collect();
    let raw = embedder.embed(&texts)?;
    if raw.len() != texts.len() {
        return Err(EvalError::Embed(EmbedError::Cardinality {
            expected: texts.len(),
            got: raw.len(),
        }));
    }
    let mut vectors = Vec::with_capacity(raw.len());
    for (vector, text) in raw.into_iter().zip(&texts) {
        vectors
            .push(normalize(&vector).ok_or(EmbedError::ZeroNorm { key: text.to_string() })?);
    }

    let mut per_user = Vec::with_capacity(usable.len());
    let mut cursor = 0usize;
    for user in &usable {
        let count = user.persona_texts.len();
        let mut hit_sums = alloc::vec![0.0; ks.len()];
        let mut map_sums = alloc::vec![0.0; ks.len()];
        for vector in &vectors[cursor..cursor + count] {
            let ranked = rank_pool(vector, pool)?;
            for (slot, &k) in ks.iter().enumerate() {
                hit_sums[slot] += match mode {
                    HitMode::Binary => hit_at_k(&ranked, &user.truth, k),
                    HitMode::Fractional => fractional_hit_at_k(&ranked, &user.truth, k),
                };
                map_sums[slot] += average_precision_at_k(&ranked, &user.truth, k);
            }
        }
        cursor += count;
        per_user.push(UserMetrics {
            user_id: user.user_id.clone(),
            hit: hit_sums.iter().map(|s| s / count as f64).collect(),
            map: map_sums.iter().map(|s| s / count as f64).collect(),
        });
    }

    let user_count = per_user.len() as f64;
    let dataset_mean = ks
        .iter()
        .enumerate()
        .map(|(slot, &k)| KSummary {
            k,
            hit: per_user.iter().map(|u| u.hit[slot]).sum::<f64>() / user_count,
            map: per_user.iter().map(|u| u.map[slot]).sum::<f64>() / user_count,
        })
        .collect();

    Ok(EvalResult { ks: ks.to_vec(), per_user, dataset_mean, skipped_users: skipped })
}

/// Spearman rank correlation with average ranks for ties.
///
/// Returns 0.0 for fewer than two points or when either side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return 0.0;
    }
    let rx = average_ranks(&xs[..n]);
    let ry = average_ranks(&ys[..n]);
    let mx = crate::mathx::mean(&rx);
    let my = crate::mathx::mean(&ry);
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..n {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx <= 0.0 || vy <= 0.0 {
        return 0.0;
    }
    cov / crate::mathx::sqrt(vx * vy)
}

/// 1-based ranks, ties replaced by the mean rank of the tied run.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(core::cmp::Ordering::Equal));
    let mut ranks = alloc::vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        let mean_rank = (start + end) as f64 / 2.0 + 1.0;
        for &idx in &order[start..=end] {
            ranks[idx] = mean_rank;
        }
        start = end + 1;
    }
    ranks
}
