//! Clustering-first baseline: agglomerative grouping of memory embeddings,
//! budgeted representative selection, and banded negative sampling.
//!
//! This is the geometric half of the clustering baseline. Memories are grouped
//! bottom-up with Ward's minimum-variance linkage on Euclidean distances of
//! unit vectors, each cluster is summarized by the L2-normalized mean of its
//! members, and a small, diverse subset of members is selected per cluster as
//! the prompt payload for downstream labeling. Negative exemplars for
//! contrastive refinement are drawn from other clusters whose centroids sit in
//! a moderate-similarity band.
//!
//! The representative-selection objective is a greedy marginal rule: each pick
//! maximizes `cos(m, centroid) - (alpha - 1) * max_selected cos(m, s)`. The
//! `alpha` knob trades prototypicality against diversity — larger values push
//! later picks away from what is already selected. This greedy form is this
//! crate's documented interpretation of the trade-off; see `SelectionConfig`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::embedding::{normalize, EmbeddingTable};
use crate::mathx;
use crate::rng::{rng_for, sample_indices};

/// Errors from clustering, selection, and point assembly.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClusterError {
    /// No points were supplied.
    #[error("no points to cluster")]
    EmptyInput,
    /// A point id appeared twice in the input.
    #[error("duplicate point id {id}")]
    DuplicatePointId { id: u32 },
    /// A point's vector length disagrees with the first point's.
    #[error("dimension mismatch: expected {expected}, got {got} for point {id}")]
    DimensionMismatch { expected: usize, got: usize, id: u32 },
    /// A point's vector has (near-)zero norm and cannot be normalized.
    #[error("zero-norm vector for point {id}")]
    ZeroNormPoint { id: u32 },
    /// No embedding stored for a point's lookup key.
    #[error("no embedding for point {id} (key '{key}')")]
    MissingEmbedding { id: u32, key: String },
    /// A cluster's members sum to the zero vector; its centroid is undefined.
    #[error("cluster members cancel out; centroid undefined")]
    DegenerateCentroid,
    /// The merge threshold is NaN or negative.
    #[error("invalid merge threshold {tau}")]
    InvalidThreshold { tau: f64 },
    /// Selection was asked to draw from an empty cluster.
    #[error("cannot select representatives from an empty cluster")]
    EmptyCluster,
    /// A cluster member id has no point in the point set.
    #[error("cluster member {id} has no point")]
    UnknownMemberId { id: u32 },
    /// `alpha` must exceed 1 so the diversity term has positive weight.
    #[error("alpha must be a finite number > 1, got {alpha}")]
    InvalidAlpha { alpha: f64 },
    /// `budget_ratio` must lie in (0, 1].
    #[error("budget_ratio must lie in (0, 1], got {ratio}")]
    InvalidBudgetRatio { ratio: f64 },
    /// The global selection budget must be at least 1.
    #[error("global selection budget must be >= 1")]
    ZeroBudget,
}

/// An id-keyed set of unit vectors, the input to clustering and selection.
///
/// Vectors are L2-normalized on construction so cosine similarity reduces to
/// a dot product everywhere downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    points: BTreeMap<u32, Vec<f64>>,
    dim: usize,
}

impl PointSet {
    /// Builds a point set from explicit `(id, vector)` pairs.
    ///
    /// Rejects duplicate ids, mixed dimensions, and zero-norm vectors;
    /// renormalizes everything else.
    pub fn new(points: Vec<(u32, Vec<f64>)>) -> Result<Self, ClusterError> {
        if points.is_empty() {
            return Err(ClusterError::EmptyInput);
        }
        let dim = points[0].1.len();
        let mut map = BTreeMap::new();
        for (id, vector) in points {
            if vector.len() != dim {
                return Err(ClusterError::DimensionMismatch { expected: dim, got: vector.len(), id });
            }
            let unit = normalize(&vector).ok_or(ClusterError::ZeroNormPoint { id })?;
            if map.insert(id, unit).is_some() {
                return Err(ClusterError::DuplicatePointId { id });
            }
        }
        Ok(Self { points: map, dim })
    }

    /// Builds a point set by resolving `(id, table key)` pairs against an
    /// embedding table, e.g. `(memory.id, memory_text(&memory))`.
    pub fn from_table<S: AsRef<str>>(
        table: &EmbeddingTable,
        items: &[(u32, S)],
    ) -> Result<Self, ClusterError> {
        let mut pairs = Vec::with_capacity(items.len());
        for (id, key) in items {
            let vector = table.get(key.as_ref()).ok_or_else(|| ClusterError::MissingEmbedding {
                id: *id,
                key: key.as_ref().to_string(),
            })?;
            pairs.push((*id, vector.to_vec()));
        }
        Self::new(pairs)
    }

    /// Number of points.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Whether the set is empty (never true for a constructed set).
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Ascending ids of all points.
    pub fn ids(&self) -> Vec<u32> {
        self.points.keys().copied().collect()
    }

    /// The unit vector for `id`, if present.
    pub fn get(&self, id: u32) -> Option<&[f64]> {
        self.points.get(&id).map(Vec::as_slice)
    }

    /// Vector dimensionality.
    pub fn dim(&self) -> usize {
        self.dim
    }

    fn require(&self, id: u32) -> Result<&[f64], ClusterError> {
        self.get(id).ok_or(ClusterError::UnknownMemberId { id })
    }
}

/// One performed merge: the two clusters involved (named by their smallest
/// member ids, `left < right`) and the linkage distance at which they fused.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MergeStep {
    pub left: u32,
    pub right: u32,
    pub distance: f64,
}

/// The outcome of agglomerative clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    /// Disjoint member-id sets covering every input id, ordered by smallest
    /// member id.
    pub clusters: Vec<BTreeSet<u32>>,
    /// Per-cluster L2-normalized mean of member vectors, parallel to
    /// `clusters`.
    pub centroids: Vec<Vec<f64>>,
    /// All merges actually performed, in execution order. Ward linkage is
    /// monotone, so distances are nondecreasing.
    pub merge_history: Vec<MergeStep>,
}

impl ClusterSet {
    /// Number of clusters.
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    /// Whether there are no clusters (never true for a constructed set).
    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

/// Knobs for budgeted representative selection.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// Prototypicality–diversity trade-off; the diversity penalty carries
    /// weight `alpha - 1`, so values just above 1 apply gentle pressure away
    /// from near-duplicates. Must be > 1.
    pub alpha: f64,
    /// Fraction of each cluster eligible for selection, in (0, 1]. A cluster
    /// of `n` members gets a share of `round_half_up(budget_ratio * n)`,
    /// at least 1.
    pub budget_ratio: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { alpha: 1.07, budget_ratio: 0.7 }
    }
}

impl SelectionConfig {
    /// Validates field ranges.
    pub fn validate(&self) -> Result<(), ClusterError> {
        if !self.alpha.is_finite() || self.alpha <= 1.0 {
            return Err(ClusterError::InvalidAlpha { alpha: self.alpha });
        }
        if !self.budget_ratio.is_finite() || self.budget_ratio <= 0.0 || self.budget_ratio > 1.0 {
            return Err(ClusterError::InvalidBudgetRatio { ratio: self.budget_ratio });
        }
        Ok(())
    }
}

/// Default merge threshold for [`ward_hac`] on unit vectors.
pub const DEFAULT_MERGE_THRESHOLD: f64 = 1.4;

/// Inclusive centroid-cosine band from which negative exemplars are drawn.
pub const NEGATIVE_BAND: (f64, f64) = (0.5, 0.85);

/// Maximum number of negative clusters sampled per source cluster.
pub const NEGATIVE_SAMPLE_CAP: usize = 10;

/// Agglomerative clustering with Ward's minimum-variance linkage.
///
/// Starts from singletons and repeatedly merges the pair with the smallest
/// linkage distance, maintained with the Lance–Williams recurrence on squared
/// Euclidean distances; the reported distance is the square root. Merging
/// stops once the smallest pending distance exceeds `tau` (so `tau = 0`
/// keeps distinct points as singletons). Exact distance ties break toward the
/// pair with the lexicographically smallest (smallest-member-id, ...) key,
/// which makes the outcome independent of input order.
pub fn ward_hac(points: &PointSet, tau: f64) -> Result<ClusterSet, ClusterError> {
    if !(tau >= 0.0) {
        return Err(ClusterError::InvalidThreshold { tau });
    }

    // Active clusters, kept in ascending smallest-member-id order. Merging
    // into the lower index preserves that order throughout.
    let ids = points.ids();
    let mut members: Vec<Vec<u32>> = ids.iter().map(|&id| alloc::vec![id]).collect();
    let n = members.len();

    // Squared Euclidean distances between current clusters.
    let mut d2: Vec<Vec<f64>> = alloc::vec![alloc::vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let a = points.get(ids[i]).expect("id from this set");
            let b = points.get(ids[j]).expect("id from this set");
            let dist2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            d2[i][j] = dist2;
            d2[j][i] = dist2;
        }
    }

    let mut history = Vec::new();
    while members.len() > 1 {
        // Smallest pending pair; scan order is lexicographic in the
        // ascending smallest-member-id ordering, so first-strictly-smaller
        // wins implements the tie rule.
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..members.len() {
            for j in (i + 1)..members.len() {
                if best.is_none_or(|(bd, _, _)| d2[i][j] < bd) {
                    best = Some((d2[i][j], i, j));
                }
            }
        }
        let (best_d2, i, j) = best.expect("at least one pair while len > 1");
        let distance = mathx::sqrt(best_d2.max(0.0));
        if distance > tau {
            break;
        }

        history.push(MergeStep { left: members[i][0], right: members[j][0], distance });

        // Lance–Williams update for Ward linkage on squared distances.
        let ni = members[i].len() as f64;
        let nj = members[j].len() as f64;
        for k in 0..members.len() {
            if k == i || k == j {
                continue;
            }
            let nk = members[k].len() as f64;
            let updated = ((ni + nk) * d2[i][k] + (nj + nk) * d2[j][k] - nk * best_d2)
                / (ni + nj + nk);
            d2[i][k] = updated;
            d2[k][i] = updated;
        }

        let absorbed = members.remove(j);
        members[i].extend(absorbed);
        members[i].sort_unstable();
        d2.remove(j);
        for row in &mut d2 {
            row.remove(j);
        }
    }

    let mut clusters = Vec::with_capacity(members.len());
    let mut centroids = Vec::with_capacity(members.len());
    for group in &members {
        centroids.push(centroid_of(points, group)?);
        clusters.push(group.iter().copied().collect::<BTreeSet<u32>>());
    }
    Ok(ClusterSet { clusters, centroids, merge_history: history })
}

/// L2-normalized mean of the members' unit vectors.
fn centroid_of(points: &PointSet, members: &[u32]) -> Result<Vec<f64>, ClusterError> {
    let mut sum = alloc::vec![0.0; points.dim()];
    for &id in members {
        for (acc, x) in sum.iter_mut().zip(points.require(id)?) {
            *acc += x;
        }
    }
    normalize(&sum).ok_or(ClusterError::DegenerateCentroid)
}

/// Greedily selects a cluster's representative members.
///
/// Each round picks the remaining member maximizing
/// `cos(m, centroid) - (alpha - 1) * max_{s in selected} cos(m, s)` (the
/// penalty term is 0 on the first pick), breaking exact ties toward the
/// lowest id. Selection stops at the cluster's share of the global budget:
/// `min(global_budget, max(1, round_half_up(budget_ratio * |cluster|)))`,
/// and never exceeds the cluster size. Returns ids in selection order.
pub fn select_representatives(
    cluster: &BTreeSet<u32>,
    points: &PointSet,
    cfg: &SelectionConfig,
    global_budget: usize,
) -> Result<Vec<u32>, ClusterError> {
    cfg.validate()?;
    if cluster.is_empty() {
        return Err(ClusterError::EmptyCluster);
    }
    if global_budget == 0 {
        return Err(ClusterError::ZeroBudget);
    }
    let member_ids: Vec<u32> = cluster.iter().copied().collect();
    let centroid = centroid_of(points, &member_ids)?;

    let proportional = mathx::round_half_up(cfg.budget_ratio * member_ids.len() as f64) as usize;
    let share = proportional.max(1).min(global_budget).min(member_ids.len());

    let mut remaining = member_ids;
    let mut selected: Vec<u32> = Vec::with_capacity(share);
    let mut selected_vecs: Vec<&[f64]> = Vec::with_capacity(share);
    while selected.len() < share {
        let mut best: Option<(f64, usize)> = None;
        for (pos, &id) in remaining.iter().enumerate() {
            let v = points.require(id)?;
            let proto = mathx::dot(v, &centroid);
            let redundancy = selected_vecs
                .iter()
                .map(|s| mathx::dot(v, s))
                .fold(f64::NEG_INFINITY, f64::max);
            let score = if selected_vecs.is_empty() { proto } else { proto - (cfg.alpha - 1.0) * redundancy };
            // Ascending-id scan order: strict improvement implements the
            // lowest-id tie rule.
            if best.is_none_or(|(bs, _)| score > bs) {
                best = Some((score, pos));
            }
        }
        let (_, pos) = best.expect("remaining is nonempty while selected < share <= len");
        let id = remaining.remove(pos);
        selected_vecs.push(points.require(id)?);
        selected.push(id);
    }
    Ok(selected)
}

/// Picks negative-exemplar clusters for a source cluster.
///
/// Uniformly samples up to `k` of the clusters whose centroid cosine to
/// `source_centroid` lies in the inclusive `band`; when fewer than `k`
/// qualify, falls back to the `k` most similar clusters overall. Returns
/// indices into `other_centroids` — ascending for the sampled case,
/// descending-similarity (ties ascending) for the fallback.
pub fn sample_negatives(
    source_centroid: &[f64],
    other_centroids: &[Vec<f64>],
    band: (f64, f64),
    k: usize,
    seed: u64,
) -> Vec<usize> {
    if other_centroids.is_empty() || k == 0 {
        return Vec::new();
    }
    let cosines: Vec<f64> = other_centroids
        .iter()
        .map(|c| crate::embedding::cosine(source_centroid, c))
        .collect();
    let in_band: Vec<usize> =
        (0..cosines.len()).filter(|&i| cosines[i] >= band.0 && cosines[i] <= band.1).collect();
    if in_band.len() >= k {
        let mut rng = rng_for(seed, "negative-sample");
        return sample_indices(&mut rng, in_band.len(), k).into_iter().map(|p| in_band[p]).collect();
    }
    // Fallback: most similar clusters overall, ties toward the lower index.
    let mut order: Vec<usize> = (0..cosines.len()).collect();
    order.sort_by(|&a, &b| {
        cosines[b].partial_cmp(&cosines[a]).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    order.truncate(k);
    order
}
