//! Training objectives on the tape: modified GRPO with selective covariance KL,
//! mask-weighted SimPO, the clipped GRPO baseline with a reference KL, and the
//! supervised next-item NLL.
//!
//! Normalization everywhere is a token mean inside each completion, then a mean
//! over completions and groups; each [`TokenRecord`] carries the product of those
//! factors as its `weight`, so a loss over any subset of records is that subset's
//! share of the batch loss.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::item_space::{CertaintyMask, PrefixTree, Token};
use crate::kernels;
use crate::policy::BoundPolicy;
use crate::rollout::{PreferencePair, RolloutGroup};
use crate::tape::{Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Penalty coefficient on `|log r|` for selected tokens (and the reference KL of the baseline).
    pub beta_kl: f64,
    /// Proportion of tokens selected for the penalty.
    pub k: f64,
    /// Ratio clip range of the baseline objective.
    pub epsilon: f64,
    pub beta_simpo: f64,
    /// SimPO target margin.
    pub gamma: f64,
    /// Mask decay for non-branching tokens; 1.0 disables the mask.
    pub d: f64,
    /// Weight of the SimPO term in the combined loss.
    pub w: f64,
    /// Re-enable the clipped surrogate on the modified objective.
    pub clip_ratio: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta_kl: 1.0,
            k: 5e-3,
            epsilon: 0.2,
            beta_simpo: 5.0,
            gamma: 3.5,
            d: 0.5,
            w: 1.0,
            clip_ratio: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.beta_kl,
            self.k,
            self.epsilon,
            self.beta_simpo,
            self.gamma,
            self.d,
            self.w,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("loss parameters must be finite".into()));
        }
        let checks = [
            (self.beta_kl >= 0.0, "beta_kl must be >= 0"),
            (self.k > 0.0 && self.k < 1.0, "k must lie in (0, 1)"),
            (self.epsilon > 0.0, "epsilon must be > 0"),
            (self.beta_simpo > 0.0, "beta_simpo must be > 0"),
            (self.gamma >= 0.0, "gamma must be >= 0"),
            ((0.0..=1.0).contains(&self.d), "d must lie in [0, 1]"),
            (self.w >= 0.0, "w must be >= 0"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Config(msg.into()));
            }
        }
        Ok(())
    }
}

/// Certainty mask for a catalog item; `d == 1` yields all ones.
pub fn mask_for(trie: &PrefixTree, tokens: &[Token], d: f64) -> Result<CertaintyMask> {
    if d == 1.0 {
        if !trie.contains_item(tokens) {
            return Err(Error::OutOfCatalog(tokens.to_vec()));
        }
        return Ok(CertaintyMask::ones(tokens.len()));
    }
    trie.certainty_mask(tokens, d)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenRecord {
    pub group: usize,
    pub completion: usize,
    pub position: usize,
    pub new_log_prob: f64,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub mask: f64,
    /// Normalization factor `1 / (len * completions * groups)`.
    pub weight: f64,
    pub valid: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TokenBatch {
    pub tokens: Vec<TokenRecord>,
}

impl TokenBatch {
    /// Flattens groups into per-token records; new log-probs start equal to the old ones.
    pub fn from_groups(groups: &[RolloutGroup], trie: &PrefixTree, d: f64) -> Result<Self> {
        let mut tokens = Vec::new();
        let g_norm = groups.len() as f64;
        for (gi, g) in groups.iter().enumerate() {
            let n = g.completions.len() as f64;
            for (ci, c) in g.completions.iter().enumerate() {
                let mask = mask_for(trie, c.tokens(), d)?;
                let old = &g.old_log_probs[ci];
                if old.len() != c.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "completion of length {} has {} old log-probs",
                        c.len(),
                        old.len()
                    )));
                }
                let weight = 1.0 / (c.len() as f64 * n * g_norm);
                for (j, &lp) in old.iter().enumerate() {
                    tokens.push(TokenRecord {
                        group: gi,
                        completion: ci,
                        position: j,
                        new_log_prob: lp,
                        old_log_prob: lp,
                        advantage: g.advantages[ci],
                        mask: mask.weights[j],
                        weight,
                        valid: true,
                    });
                }
            }
        }
        Ok(Self { tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.tokens.iter().filter(|t| t.valid).count()
    }
}

/// `(logp - mean logp) * (A - mean A)` over valid tokens; invalid tokens score `-inf`.
pub fn kl_cov_scores(batch: &TokenBatch) -> Vec<f64> {
    let valid = batch.valid_count();
    if valid == 0 {
        return vec![f64::NEG_INFINITY; batch.len()];
    }
    let (mut lp_sum, mut a_sum) = (0.0, 0.0);
    for t in batch.tokens.iter().filter(|t| t.valid) {
        lp_sum += t.new_log_prob;
        a_sum += t.advantage;
    }
    let lp_mean = lp_sum / valid as f64;
    let a_mean = a_sum / valid as f64;
    batch
        .tokens
        .iter()
        .map(|t| {
            if t.valid {
                (t.new_log_prob - lp_mean) * (t.advantage - a_mean)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

/// Indices of the `ceil(k * T)` highest finite scores, ties to the lower index.
pub fn select_outliers(scores: &[f64], k: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&i| scores[i].is_finite()).collect();
    let t = idx.len();
    if t == 0 {
        return Vec::new();
    }
    // The epsilon absorbs representation error in products like 0.005 * 1000.
    let count = ((k * t as f64 - 1e-9).ceil().max(0.0) as usize).min(t);
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(count);
    idx
}

pub fn outlier_flags(len: usize, outliers: &[usize]) -> Vec<bool> {
    let mut flags = vec![false; len];
    for &i in outliers {
        flags[i] = true;
    }
    flags
}

/// Loss node plus its component values.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub loss: Var,
    /// Policy-gradient part of the loss (for the baseline: the clipped surrogate).
    pub surrogate: f64,
    /// `|log r|` penalty part (for the baseline: the reference KL part).
    pub penalty: f64,
}

/// Per token: `-r A` (or the clipped form), plus `beta_kl |log r|` on outliers,
/// times the mask weight and the normalization weight.
pub fn grpo_modified_loss(
    tape: &mut Tape,
    new_log_probs: &[Var],
    records: &[TokenRecord],
    outliers: &[bool],
    cfg: &LossConfig,
) -> Result<LossTerms> {
    if new_log_probs.len() != records.len() || outliers.len() != records.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} log-prob nodes, {} records, {} outlier flags",
            new_log_probs.len(),
            records.len(),
            outliers.len()
        )));
    }
    let mut terms = Vec::with_capacity(2 * records.len());
    let (mut surrogate, mut penalty) = (0.0, 0.0);
    for ((&lp, rec), &outlier) in new_log_probs.iter().zip(records).zip(outliers) {
        if !rec.valid {
            continue;
        }
        let scale = rec.weight * rec.mask;
        let log_ratio = tape.offset(lp, -rec.old_log_prob);
        let ratio = tape.exp(log_ratio);
        let mut surr = tape.scale(ratio, rec.advantage);
        if cfg.clip_ratio {
            let clipped = tape.clamp(ratio, 1.0 - cfg.epsilon, 1.0 + cfg.epsilon);
            let clipped = tape.scale(clipped, rec.advantage);
            surr = tape.min(surr, clipped);
        }
        surrogate -= scale * tape.scalar(surr);
        terms.push((surr, -scale));
        if outlier && cfg.beta_kl != 0.0 {
            let pen = tape.abs(log_ratio);
            penalty += scale * cfg.beta_kl * tape.scalar(pen);
            terms.push((pen, scale * cfg.beta_kl));
        }
    }
    let loss = tape.weighted_sum(&terms);
    Ok(LossTerms {
        loss,
        surrogate,
        penalty,
    })
}

/// One completion of the baseline objective.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceRecord {
    pub old_log_probs: Vec<f64>,
    pub ref_log_probs: Vec<f64>,
    pub advantage: f64,
    /// Normalization factor `1 / (completions * groups)`.
    pub weight: f64,
}

/// Clipped sequence-ratio surrogate plus `beta_kl` times the sampled-token KL
/// estimate `mean(log pi - log pi_ref)`, negated for minimization.
pub fn grpo_vanilla_loss(
    tape: &mut Tape,
    new_log_probs: &[Vec<Var>],
    records: &[SequenceRecord],
    cfg: &LossConfig,
) -> Result<LossTerms> {
    if new_log_probs.len() != records.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} completions, {} records",
            new_log_probs.len(),
            records.len()
        )));
    }
    let mut terms = Vec::with_capacity(2 * records.len());
    let (mut surrogate, mut penalty) = (0.0, 0.0);
    for (lps, rec) in new_log_probs.iter().zip(records) {
        let len = lps.len();
        if len == 0 || rec.old_log_probs.len() != len || rec.ref_log_probs.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "completion with {len} nodes, {} old and {} reference log-probs",
                rec.old_log_probs.len(),
                rec.ref_log_probs.len()
            )));
        }
        let seq = tape.sum(lps);
        let log_ratio = tape.offset(seq, -rec.old_log_probs.iter().sum::<f64>());
        let ratio = tape.exp(log_ratio);
        let plain = tape.scale(ratio, rec.advantage);
        let clipped = tape.clamp(ratio, 1.0 - cfg.epsilon, 1.0 + cfg.epsilon);
        let clipped = tape.scale(clipped, rec.advantage);
        let surr = tape.min(plain, clipped);
        surrogate -= rec.weight * tape.scalar(surr);
        terms.push((surr, -rec.weight));
        if cfg.beta_kl != 0.0 {
            let inv = 1.0 / len as f64;
            let mean_lp: Vec<(Var, f64)> = lps.iter().map(|&v| (v, inv)).collect();
            let mean_lp = tape.weighted_sum(&mean_lp);
            let ref_mean = rec.ref_log_probs.iter().sum::<f64>() * inv;
            let kl = tape.offset(mean_lp, -ref_mean);
            penalty += rec.weight * cfg.beta_kl * tape.scalar(kl);
            terms.push((kl, rec.weight * cfg.beta_kl));
        }
    }
    let loss = tape.weighted_sum(&terms);
    Ok(LossTerms {
        loss,
        surrogate,
        penalty,
    })
}

/// `sum_j M_j logp_j / sum_j M_j`.
pub fn simpo_masked_reward(logp: &[f64], mask: &CertaintyMask) -> Result<f64> {
    check_mask(logp.len(), mask)?;
    let num: f64 = logp.iter().zip(&mask.weights).map(|(l, m)| l * m).sum();
    Ok(num / mask.sum())
}

fn check_mask(len: usize, mask: &CertaintyMask) -> Result<()> {
    if len != mask.weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "{len} log-probs, {} mask weights",
            mask.weights.len()
        )));
    }
    if !(mask.sum() > 0.0) {
        return Err(Error::ContractViolation("mask weights sum to zero".into()));
    }
    Ok(())
}

pub fn masked_reward_var(tape: &mut Tape, logp: &[Var], mask: &CertaintyMask) -> Result<Var> {
    check_mask(logp.len(), mask)?;
    let total = mask.sum();
    let terms: Vec<(Var, f64)> = logp
        .iter()
        .zip(&mask.weights)
        .map(|(&v, &m)| (v, m / total))
        .collect();
    Ok(tape.weighted_sum(&terms))
}

/// `-log sigmoid(beta (r_c - r_r) - gamma)` on plain values.
pub fn simpo_pair_value(chosen: f64, rejected: f64, cfg: &LossConfig) -> f64 {
    -kernels::log_sigmoid(cfg.beta_simpo * (chosen - rejected) - cfg.gamma)
}

pub fn simpo_pair_loss(tape: &mut Tape, chosen: Var, rejected: Var, cfg: &LossConfig) -> Var {
    let diff = tape.sub(chosen, rejected);
    let logits = tape.scale(diff, cfg.beta_simpo);
    let logits = tape.offset(logits, -cfg.gamma);
    let ls = tape.log_sigmoid(logits);
    tape.neg(ls)
}

/// Mean pair loss under the current policy; each prompt is encoded once and its
/// chosen-item reward is shared across that prompt's pairs.
pub fn simpo_loss(
    tape: &mut Tape,
    policy: &BoundPolicy,
    pairs: &[PreferencePair],
    trie: &PrefixTree,
    cfg: &LossConfig,
) -> Result<Var> {
    if pairs.is_empty() {
        return Ok(tape.constant_scalar(0.0));
    }
    let mut cache: HashMap<&[Token], (Var, Var)> = HashMap::new();
    let mut losses = Vec::with_capacity(pairs.len());
    for pair in pairs {
        if pair.chosen == pair.rejected {
            return Err(Error::ContractViolation(
                "preference pair with identical chosen and rejected items".into(),
            ));
        }
        let (h, chosen) = match cache.get(pair.prompt.as_slice()) {
            Some(&cached) => cached,
            None => {
                let h = policy.encode(tape, &pair.prompt)?;
                let lp = policy.token_log_probs(tape, h, pair.chosen.tokens())?;
                let mask = mask_for(trie, pair.chosen.tokens(), cfg.d)?;
                let chosen = masked_reward_var(tape, &lp, &mask)?;
                cache.insert(&pair.prompt, (h, chosen));
                (h, chosen)
            }
        };
        let lp = policy.token_log_probs(tape, h, pair.rejected.tokens())?;
        let mask = mask_for(trie, pair.rejected.tokens(), cfg.d)?;
        let rejected = masked_reward_var(tape, &lp, &mask)?;
        losses.push((simpo_pair_loss(tape, chosen, rejected, cfg), 1.0 / pairs.len() as f64));
    }
    Ok(tape.weighted_sum(&losses))
}

/// `w * simpo + grpo`, an absent term counting as zero.
pub fn combine(tape: &mut Tape, grpo: Option<Var>, simpo: Option<Var>, w: f64) -> Var {
    let mut terms = Vec::with_capacity(2);
    if let Some(g) = grpo {
        terms.push((g, 1.0));
    }
    if let Some(s) = simpo {
        terms.push((s, w));
    }
    if terms.is_empty() {
        return tape.constant_scalar(0.0);
    }
    tape.weighted_sum(&terms)
}

/// Sequence negative log-likelihood of `target` given `prompt`.
pub fn sft_loss(tape: &mut Tape, policy: &BoundPolicy, prompt: &[Token], target: &[Token]) -> Result<Var> {
    let h = policy.encode(tape, prompt)?;
    let lp = policy.token_log_probs(tape, h, target)?;
    let s = tape.sum(&lp);
    Ok(tape.neg(s))
}
