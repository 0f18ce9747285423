//! Groupwise preference optimization: reward z-normalization into a soft
//! preference distribution, the groupwise DPO loss with a deviation
//! penalty, the analytic gradient, and a toy policy trainer for desk-scale
//! runs.
//!
//! The toy policy stands in for a sequence model: each candidate's
//! "sequence log-probability" is one trainable logit log-softmaxed over the
//! window's candidate pool (the desk-scale analogue of the mean token
//! log-probability convention). The reference policy is a frozen snapshot
//! of the initialization, so externally computed log-probabilities can flow
//! through the identical loss.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::mathx;
use crate::rng;

/// One training group: parallel rewards and log-probabilities for G
/// candidates of a single window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBatch {
    pub candidate_ids: Vec<usize>,
    pub rewards: Vec<f64>,
    pub policy_logp: Vec<f64>,
    pub ref_logp: Vec<f64>,
}

impl GroupBatch {
    /// Validate parallel lengths (all equal, ≥ 2) and finiteness.
    pub fn new(
        candidate_ids: Vec<usize>,
        rewards: Vec<f64>,
        policy_logp: Vec<f64>,
        ref_logp: Vec<f64>,
    ) -> Result<Self, GdpoError> {
        let g = candidate_ids.len();
        if g < 2 {
            return Err(GdpoError::GroupTooSmall { got: g });
        }
        if rewards.len() != g || policy_logp.len() != g || ref_logp.len() != g {
            return Err(GdpoError::UnevenLists {
                ids: g,
                rewards: rewards.len(),
                policy: policy_logp.len(),
                reference: ref_logp.len(),
            });
        }
        if rewards
            .iter()
            .chain(&policy_logp)
            .chain(&ref_logp)
            .any(|x| !x.is_finite())
        {
            return Err(GdpoError::NonFinite);
        }
        Ok(GroupBatch {
            candidate_ids,
            rewards,
            policy_logp,
            ref_logp,
        })
    }

    pub fn len(&self) -> usize {
        self.candidate_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidate_ids.is_empty()
    }
}

/// Soft preference weights over a group; nonnegative, summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDistribution {
    pub q: Vec<f64>,
}

/// Loss value with its decomposition and the analytic gradient w.r.t. the
/// policy log-probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdpoLossReport {
    pub loss: f64,
    pub ce_term: f64,
    pub kl_term: f64,
    pub delta: Vec<f64>,
    pub p_beta: Vec<f64>,
    pub grad_wrt_policy_logp: Vec<f64>,
}

/// Errors from group construction and training.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GdpoError {
    #[error("group size {got} is below the minimum of 2")]
    GroupTooSmall { got: usize },
    #[error("group of {requested} exceeds pool of {pool}")]
    GroupExceedsPool { requested: usize, pool: usize },
    #[error("parallel lists differ: ids={ids} rewards={rewards} policy={policy} ref={reference}")]
    UnevenLists {
        ids: usize,
        rewards: usize,
        policy: usize,
        reference: usize,
    },
    #[error("non-finite value in batch")]
    NonFinite,
    #[error("beta must be positive, got {got}")]
    NonPositiveBeta { got: f64 },
    #[error("preference distribution length {q} does not match batch length {batch}")]
    DistributionMismatch { q: usize, batch: usize },
    #[error("no window has at least {group} scored candidates")]
    NoTrainableWindows { group: usize },
    #[error("invalid training config: {message}")]
    InvalidConfig { message: String },
}

/// Uniformly sample a group of `g` distinct candidate indices from
/// `0..pool_size`, ascending; deterministic in `seed`.
pub fn sample_group(pool_size: usize, g: usize, seed: u64) -> Result<Vec<usize>, GdpoError> {
    if g < 2 {
        return Err(GdpoError::GroupTooSmall { got: g });
    }
    if g > pool_size {
        return Err(GdpoError::GroupExceedsPool {
            requested: g,
            pool: pool_size,
        });
    }
    let mut r = rng::rng_for(seed, "gdpo-group");
    Ok(rng::sample_indices(&mut r, pool_size, g))
}

/// Z-normalize rewards within the group (population std, stabilized by
/// `epsilon`) and softmax into the preference distribution
/// `q = softmax((r − μ)/(σ + ε))`.
pub fn preference_distribution(rewards: &[f64], epsilon: f64) -> PreferenceDistribution {
    let mu = mathx::mean(rewards);
    let sigma = mathx::population_std(rewards);
    let tilde: Vec<f64> = rewards.iter().map(|r| (r - mu) / (sigma + epsilon)).collect();
    PreferenceDistribution {
        q: mathx::softmax(&tilde),
    }
}

/// Default z-normalization stabilizer.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// The groupwise DPO loss:
///
/// `Δ_g = policy_logp_g − ref_logp_g`,
/// `ce = −Σ_g q_g · log softmax(βΔ)_g`,
/// `kl = mean_g |Δ_g|`, and `loss = ce + λ_KL · kl`.
///
/// The analytic gradient w.r.t. each policy log-probability is
/// `β·(softmax(βΔ)_g − q_g) + λ_KL·sign(Δ_g)/G` with `sign(0) = 0`
/// (subgradient at the deviation-penalty kink).
pub fn gdpo_loss(
    batch: &GroupBatch,
    q: &PreferenceDistribution,
    beta: f64,
    lambda_kl: f64,
) -> Result<GdpoLossReport, GdpoError> {
    if beta <= 0.0 {
        return Err(GdpoError::NonPositiveBeta { got: beta });
    }
    if q.q.len() != batch.len() {
        return Err(GdpoError::DistributionMismatch {
            q: q.q.len(),
            batch: batch.len(),
        });
    }
    if !beta.is_finite() || !lambda_kl.is_finite() || q.q.iter().any(|x| !x.is_finite()) {
        return Err(GdpoError::NonFinite);
    }

    let g = batch.len();
    let delta: Vec<f64> = batch
        .policy_logp
        .iter()
        .zip(&batch.ref_logp)
        .map(|(p, r)| p - r)
        .collect();
    let scaled: Vec<f64> = delta.iter().map(|d| beta * d).collect();
    let p_beta = mathx::softmax(&scaled);

    // -Σ q_g·log p_beta_g, written against the stable log-softmax rather
    // than log of the normalized probabilities.
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mathx::ln(scaled.iter().map(|&s| mathx::exp(s - max)).sum::<f64>()) + max;
    let ce_term: f64 = q
        .q
        .iter()
        .zip(&scaled)
        .map(|(qg, sg)| -qg * (sg - lse))
        .sum();

    let abs_delta: Vec<f64> = delta.iter().map(|d| mathx::abs(*d)).collect();
    let kl_term = mathx::mean(&abs_delta);
    let loss = ce_term + lambda_kl * kl_term;

    let grad_wrt_policy_logp: Vec<f64> = (0..g)
        .map(|i| {
            let sign = if delta[i] > 0.0 {
                1.0
            } else if delta[i] < 0.0 {
                -1.0
            } else {
                0.0
            };
            beta * (p_beta[i] - q.q[i]) + lambda_kl * sign / g as f64
        })
        .collect();

    Ok(GdpoLossReport {
        loss,
        ce_term,
        kl_term,
        delta,
        p_beta,
        grad_wrt_policy_logp,
    })
}

/// A per-(window, candidate) logit table; the candidate's log-probability
/// is its logit log-softmaxed over the window's pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub logits: Vec<Vec<f64>>,
}

impl ToyPolicy {
    /// All-zero initialization over the given pool sizes (uniform policy).
    pub fn zeros(pool_sizes: &[usize]) -> Self {
        ToyPolicy {
            logits: pool_sizes.iter().map(|&n| alloc::vec![0.0; n]).collect(),
        }
    }

    /// Probability of each candidate in a window's pool.
    pub fn probs(&self, window: usize) -> Vec<f64> {
        mathx::softmax(&self.logits[window])
    }

    /// Log-probability of each candidate in a window's pool.
    pub fn log_probs(&self, window: usize) -> Vec<f64> {
        let l = &self.logits[window];
        let max = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mathx::ln(l.iter().map(|&x| mathx::exp(x - max)).sum::<f64>()) + max;
        l.iter().map(|&x| x - lse).collect()
    }
}

/// Settings for [`toy_train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyTrainConfig {
    pub steps: u32,
    pub lr: f64,
    pub beta: f64,
    pub lambda_kl: f64,
    pub group_size: usize,
    pub seed: u64,
    pub epsilon: f64,
    /// Snapshot the policy every this many steps (0 = no checkpoints). The
    /// final state is always appended when checkpointing is on.
    pub checkpoint_every: u32,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        ToyTrainConfig {
            steps: 1000,
            lr: 0.1,
            beta: 0.5,
            lambda_kl: 0.005,
            group_size: 4,
            seed: 0,
            epsilon: DEFAULT_EPSILON,
            checkpoint_every: 0,
        }
    }
}

/// One loss-trace record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: u32,
    pub window: usize,
    pub group: Vec<usize>,
    pub loss: f64,
    pub ce_term: f64,
    pub kl_term: f64,
}

/// A policy snapshot taken during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: u32,
    pub policy: ToyPolicy,
}

/// Everything [`toy_train`] produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTrainOutcome {
    pub policy: ToyPolicy,
    pub trace: Vec<TraceStep>,
    pub checkpoints: Vec<Checkpoint>,
    /// Window indices skipped because their pools hold fewer than G
    /// candidates.
    pub skipped_windows: Vec<usize>,
}

/// Train a toy policy by plain gradient descent on the groupwise DPO loss.
///
/// `pool_rewards[w][c]` is the precomputed scalar reward of candidate `c`
/// in window `w`. Per step: a trainable window is chosen uniformly, a
/// fresh group is sampled from a per-step seed stream, the preference
/// distribution is computed from the rewards, and one descent update is
/// applied to the window's logits through the log-softmax chain rule. The
/// reference is the frozen initialization. Bit-reproducible for a fixed
/// seed. Windows with fewer than `group_size` candidates are skipped; if
/// all are, an error is returned.
pub fn toy_train(
    pool_rewards: &[Vec<f64>],
    cfg: &ToyTrainConfig,
) -> Result<ToyTrainOutcome, GdpoError> {
    if cfg.lr <= 0.0 || !cfg.lr.is_finite() {
        return Err(GdpoError::InvalidConfig {
            message: String::from("lr must be positive and finite"),
        });
    }
    if cfg.group_size < 2 {
        return Err(GdpoError::GroupTooSmall {
            got: cfg.group_size,
        });
    }
    if pool_rewards
        .iter()
        .flat_map(|p| p.iter())
        .any(|r| !r.is_finite())
    {
        return Err(GdpoError::NonFinite);
    }

    let trainable: Vec<usize> = (0..pool_rewards.len())
        .filter(|&w| pool_rewards[w].len() >= cfg.group_size)
        .collect();
    let skipped_windows: Vec<usize> = (0..pool_rewards.len())
        .filter(|&w| pool_rewards[w].len() < cfg.group_size)
        .collect();
    if trainable.is_empty() {
        return Err(GdpoError::NoTrainableWindows {
            group: cfg.group_size,
        });
    }

    let pool_sizes: Vec<usize> = pool_rewards.iter().map(|p| p.len()).collect();
    let mut policy = ToyPolicy::zeros(&pool_sizes);
    let reference = policy.clone();

    let mut window_rng = rng::rng_for(cfg.seed, "toy-train/window");
    let mut trace = Vec::with_capacity(cfg.steps as usize);
    let mut checkpoints = Vec::new();

    use rand::Rng;
    for step in 0..cfg.steps {
        let w = trainable[window_rng.gen_range(0..trainable.len())];
        let group_seed = rng::derive_seed(cfg.seed, &alloc::format!("toy-train/group/{step}"));
        let group = sample_group(pool_sizes[w], cfg.group_size, group_seed)?;

        let rewards: Vec<f64> = group.iter().map(|&c| pool_rewards[w][c]).collect();
        let q = preference_distribution(&rewards, cfg.epsilon);

        let policy_lp = policy.log_probs(w);
        let ref_lp = reference.log_probs(w);
        let batch = GroupBatch::new(
            group.clone(),
            rewards,
            group.iter().map(|&c| policy_lp[c]).collect(),
            group.iter().map(|&c| ref_lp[c]).collect(),
        )?;
        let report = gdpo_loss(&batch, &q, cfg.beta, cfg.lambda_kl)?;

        // Chain rule through log-softmax: d logp_c / d logit_j
        // = [j == c] − softmax_j, so every logit of the window moves.
        let probs = policy.probs(w);
        let grad_sum: f64 = report.grad_wrt_policy_logp.iter().sum();
        for j in 0..pool_sizes[w] {
            let mut dj = -grad_sum * probs[j];
            for (gi, &c) in group.iter().enumerate() {
                if c == j {
                    dj += report.grad_wrt_policy_logp[gi];
                }
            }
            policy.logits[w][j] -= cfg.lr * dj;
        }

        trace.push(TraceStep {
            step,
            window: w,
            group,
            loss: report.loss,
            ce_term: report.ce_term,
            kl_term: report.kl_term,
        });
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            checkpoints.push(Checkpoint {
                step: step + 1,
                policy: policy.clone(),
            });
        }
    }
    if cfg.checkpoint_every > 0
        && checkpoints.last().map(|c| c.step) != Some(cfg.steps)
    {
        checkpoints.push(Checkpoint {
            step: cfg.steps,
            policy: policy.clone(),
        });
    }

    Ok(ToyTrainOutcome {
        policy,
        trace,
        checkpoints,
        skipped_windows,
    })
}

/// Mean absolute log-probability deviation of `policy` from `reference`
/// over every (window, candidate) pair — the deviation-penalty diagnostic.
pub fn mean_abs_deviation(policy: &ToyPolicy, reference: &ToyPolicy) -> f64 {
    let mut devs = Vec::new();
    for w in 0..policy.logits.len() {
        let p = policy.log_probs(w);
        let r = reference.log_probs(w);
        for (a, b) in p.iter().zip(&r) {
            devs.push(mathx::abs(a - b));
        }
    }
    mathx::mean(&devs)
}
