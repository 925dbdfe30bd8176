//! Rollout groups: oversampled and de-duplicated completions, rewards,
//! group-relative advantages, the success/failure partition and preference pairs.

use std::collections::HashSet;
use std::hash::Hash;
use std::io::Write;

use rand::seq::index;

use crate::decoding::{self, DecodingConfig};
use crate::error::{Error, Result};
use crate::item_space::{PrefixTree, Token, TokenizedItem};
use crate::policy::PolicyState;

pub const HIT: f64 = 1.0;
pub const MISS: f64 = -1.0;

pub fn reward(completion: &TokenizedItem, ground_truth: &TokenizedItem) -> f64 {
    if completion == ground_truth {
        HIT
    } else {
        MISS
    }
}

/// `(r - mean) / max(std_pop, 1e-8)`; exactly zero when all rewards are equal.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::GroupTooSmall(rewards.len()));
    }
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Selects `n` of the `draws`, preferring distinct values.
///
/// With at least `n` distinct values, `n` of them are drawn without replacement.
/// Otherwise every distinct value is kept and the shortfall is drawn without
/// replacement from the leftover duplicates. Each output carries a flag that is
/// `true` when it came from the distinct set.
pub fn dedup_select<T, R>(draws: &[T], n: usize, rng: &mut R) -> Result<Vec<(T, bool)>>
where
    T: Clone + Eq + Hash,
    R: rand::Rng + ?Sized,
{
    if n == 0 || draws.len() < n {
        return Err(Error::Config(format!(
            "need 1 <= n <= m, got n = {n}, m = {}",
            draws.len()
        )));
    }
    let mut seen: HashSet<&T> = HashSet::with_capacity(draws.len());
    let mut unique = Vec::new();
    let mut duplicates = Vec::new();
    for d in draws {
        if seen.insert(d) {
            unique.push(d);
        } else {
            duplicates.push(d);
        }
    }
    if unique.len() >= n {
        return Ok(index::sample(rng, unique.len(), n)
            .into_iter()
            .map(|i| (unique[i].clone(), true))
            .collect());
    }
    let fill = n - unique.len();
    let mut out: Vec<(T, bool)> = unique.into_iter().map(|u| (u.clone(), true)).collect();
    out.extend(
        index::sample(rng, duplicates.len(), fill)
            .into_iter()
            .map(|i| (duplicates[i].clone(), false)),
    );
    Ok(out)
}

/// Draws `m` constrained samples from the policy state `h` and keeps `n` of them.
pub fn oversample_dedup<R: rand::Rng>(
    policy_old: &PolicyState,
    h: &[f64],
    m: usize,
    n: usize,
    temperature: f64,
    trie: &PrefixTree,
    rng: &mut R,
) -> Result<Vec<(TokenizedItem, bool)>> {
    let cfg = DecodingConfig {
        temperature,
        ..DecodingConfig::default()
    };
    let mut draws = Vec::with_capacity(m);
    for _ in 0..m {
        let tokens = decoding::sample_from_state(policy_old, h, &cfg, Some(trie), rng)?;
        draws.push(TokenizedItem::new(tokens)?);
    }
    dedup_select(&draws, n, rng)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutGroup {
    pub prompt_id: usize,
    pub prompt: Vec<Token>,
    pub ground_truth: TokenizedItem,
    pub completions: Vec<TokenizedItem>,
    pub unique: Vec<bool>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Per-token log-probabilities of each completion under the sampling policy.
    pub old_log_probs: Vec<Vec<f64>>,
}

impl RolloutGroup {
    /// Scores `completions` against the ground truth and records their old log-probs.
    pub fn new(
        prompt_id: usize,
        prompt: Vec<Token>,
        ground_truth: TokenizedItem,
        selected: Vec<(TokenizedItem, bool)>,
        policy_old: &PolicyState,
        h: &[f64],
    ) -> Result<Self> {
        let (completions, unique): (Vec<_>, Vec<_>) = selected.into_iter().unzip();
        let rewards: Vec<f64> = completions.iter().map(|c| reward(c, &ground_truth)).collect();
        let advantages = if rewards.len() == 1 {
            vec![0.0]
        } else {
            group_advantages(&rewards)?
        };
        let old_log_probs = completions
            .iter()
            .map(|c| policy_old.token_log_probs_from(h, c.tokens()))
            .collect::<Result<_>>()?;
        Ok(Self {
            prompt_id,
            prompt,
            ground_truth,
            completions,
            unique,
            rewards,
            advantages,
            old_log_probs,
        })
    }

    pub fn hits(&self) -> usize {
        self.rewards.iter().filter(|&&r| r == HIT).count()
    }

    pub fn is_success(&self) -> bool {
        self.hits() > 0
    }

    pub fn has_signal(&self) -> bool {
        self.advantages.iter().any(|&a| a != 0.0)
    }
}

/// Samples, de-duplicates and scores one group for `prompt`.
#[allow(clippy::too_many_arguments)]
pub fn generate_group<R: rand::Rng>(
    policy_old: &PolicyState,
    prompt_id: usize,
    prompt: &[Token],
    ground_truth: &TokenizedItem,
    m: usize,
    n: usize,
    temperature: f64,
    trie: &PrefixTree,
    rng: &mut R,
) -> Result<RolloutGroup> {
    let h = policy_old.encode(prompt)?;
    let selected = oversample_dedup(policy_old, &h, m, n, temperature, trie, rng)?;
    RolloutGroup::new(
        prompt_id,
        prompt.to_vec(),
        ground_truth.clone(),
        selected,
        policy_old,
        &h,
    )
}

/// Splits groups into those with at least one hit and those with none.
pub fn partition(groups: Vec<RolloutGroup>) -> (Vec<RolloutGroup>, Vec<RolloutGroup>) {
    groups.into_iter().partition(RolloutGroup::is_success)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreferencePair {
    pub prompt: Vec<Token>,
    pub chosen: TokenizedItem,
    pub rejected: TokenizedItem,
}

/// One pair per completion slot of a group that never hit the ground truth.
pub fn build_preference_pairs(fail_group: &RolloutGroup) -> Result<Vec<PreferencePair>> {
    if fail_group.is_success() {
        return Err(Error::ContractViolation(format!(
            "preference pairs requested for prompt {} which has {} hit(s)",
            fail_group.prompt_id,
            fail_group.hits()
        )));
    }
    Ok(fail_group
        .completions
        .iter()
        .map(|c| PreferencePair {
            prompt: fail_group.prompt.clone(),
            chosen: fail_group.ground_truth.clone(),
            rejected: c.clone(),
        })
        .collect())
}

/// Writes `iter, prompt_id, tokens, reward, advantage, unique` lines, tab-separated.
pub fn write_rollout_dump<W: Write>(mut out: W, iter: u64, groups: &[RolloutGroup]) -> Result<()> {
    for g in groups {
        for (i, c) in g.completions.iter().enumerate() {
            let tokens: Vec<String> = c.tokens().iter().map(|t| t.0.to_string()).collect();
            writeln!(
                out,
                "{iter}\t{}\t{}\t{}\t{}\t{}",
                g.prompt_id,
                tokens.join(" "),
                g.rewards[i],
                g.advantages[i],
                u8::from(g.unique[i])
            )?;
        }
    }
    Ok(())
}
