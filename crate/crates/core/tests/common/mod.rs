//! Fixtures and reference oracles shared by the integration tests and the
//! acceptance harness. Oracles here are written independently of the library
//! internals: plain loops over flat data, no shared helpers.

#![allow(dead_code)]

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use riser::item_space::{ItemCatalog, PrefixTree, Token, TokenizedItem};
use riser::losses::{self, LossConfig, SequenceRecord, TokenBatch};
use riser::policy::{BoundPolicy, PolicyDims, PolicyState};
use riser::rollout::{self, RolloutGroup};
use riser::tape::{Tape, Var};
use riser::Result;

pub const FIRST_CONTENT: u32 = 4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A catalog of distinct items with 1..=max_len content tokens drawn from `alphabet` symbols.
pub fn random_catalog<R: Rng>(r: &mut R, items: usize, alphabet: u32, max_len: usize) -> ItemCatalog {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    while out.len() < items {
        let len = r.random_range(1..=max_len);
        let content: Vec<Token> = (0..len)
            .map(|_| Token(FIRST_CONTENT + r.random_range(0..alphabet)))
            .collect();
        if seen.insert(content.clone()) {
            out.push(TokenizedItem::from_content(&content).unwrap());
        }
    }
    ItemCatalog::new(out, (FIRST_CONTENT + alphabet) as usize).unwrap()
}

/// Brute-force mask: weight 1 when some other item shares the prefix but continues
/// differently, or at the last position; `d` otherwise.
pub fn brute_force_mask(items: &[TokenizedItem], tokens: &[Token], d: f64) -> Vec<f64> {
    (0..tokens.len())
        .map(|j| {
            if j + 1 == tokens.len() {
                return 1.0;
            }
            let mut next = HashSet::new();
            for it in items {
                let t = it.tokens();
                if t.len() > j && t[..j] == tokens[..j] {
                    next.insert(t[j]);
                }
            }
            if next.len() > 1 {
                1.0
            } else {
                d
            }
        })
        .collect()
}

/// A policy with parameters spread wider than the default initialization so that
/// distributions are far from uniform.
pub fn random_policy(vocab: usize, seed: u64) -> PolicyState {
    let mut p = PolicyState::init(PolicyDims::new(vocab, 5, 7), seed);
    let mut r = rng(seed ^ 0xF00D);
    for slot in p.update() {
        for v in slot.iter_mut() {
            *v = r.random_range(-0.6..0.6);
        }
    }
    p
}

pub fn random_prompt<R: Rng>(r: &mut R, catalog: &ItemCatalog) -> Vec<Token> {
    let len = r.random_range(1..=3);
    let history: Vec<usize> = (0..len).map(|_| r.random_range(0..catalog.len())).collect();
    riser::world::assemble_prompt(&history, catalog).unwrap()
}

/// A group of `n` completions drawn uniformly from the catalog; the ground truth
/// is among them when `hit` is set.
pub fn random_group<R: Rng>(
    r: &mut R,
    policy: &PolicyState,
    catalog: &ItemCatalog,
    id: usize,
    n: usize,
    hit: bool,
) -> RolloutGroup {
    let prompt = random_prompt(r, catalog);
    let truth = catalog.items()[r.random_range(0..catalog.len())].clone();
    let mut selected = Vec::with_capacity(n);
    while selected.len() < n {
        let c = catalog.items().choose(r).unwrap().clone();
        if c != truth {
            selected.push((c, true));
        }
    }
    if hit {
        let at = r.random_range(0..n);
        selected[at].0 = truth.clone();
    }
    let h = policy.encode(&prompt).unwrap();
    RolloutGroup::new(id, prompt, truth, selected, policy, &h).unwrap()
}

/// Maximum relative error between reverse-mode and central finite-difference
/// gradients over `coords` random parameter coordinates. Relative errors use
/// `max(|a|, |n|, floor)` as the denominator.
pub fn fd_max_rel_error<F>(policy: &PolicyState, f: F, coords: usize, seed: u64) -> f64
where
    F: Fn(&mut Tape, &BoundPolicy) -> Result<Var>,
{
    const H: f64 = 1e-5;
    const FLOOR: f64 = 1e-6;
    let mut tape = Tape::new();
    let bound = policy.bind(&mut tape);
    let loss = f(&mut tape, &bound).unwrap();
    let grads = tape.backward(loss).unwrap();
    let eval = |p: &PolicyState| {
        let mut t = Tape::new();
        let b = p.bind(&mut t);
        let v = f(&mut t, &b).unwrap();
        t.scalar(v)
    };
    let shapes = policy.shapes();
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let slot = r.random_range(0..shapes.len());
        let i = r.random_range(0..shapes[slot]);
        let analytic = grads.slot(slot).get(i).copied().unwrap_or(0.0);
        let mut plus = policy.clone();
        plus.update()[slot][i] += H;
        let mut minus = policy.clone();
        minus.update()[slot][i] -= H;
        let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
        let denom = analytic.abs().max(numeric.abs()).max(FLOOR);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    worst
}

pub struct FdInstance {
    pub name: &'static str,
    pub max_rel_error: f64,
}

fn random_loss_config<R: Rng>(r: &mut R) -> LossConfig {
    LossConfig {
        beta_kl: r.random_range(0.1..2.0),
        k: r.random_range(0.1..0.6),
        epsilon: r.random_range(0.1..0.3),
        beta_simpo: r.random_range(0.5..5.0),
        gamma: r.random_range(0.0..3.5),
        d: r.random_range(0.2..0.9),
        w: 1.0,
        clip_ratio: r.random_bool(0.5),
    }
}

/// Runs `instances` randomized gradient checks for each loss and returns the worst
/// error per loss.
pub fn gradient_oracle(instances: usize, seed: u64) -> Vec<FdInstance> {
    let mut worst = vec![
        FdInstance { name: "sft", max_rel_error: 0.0 },
        FdInstance { name: "simpo", max_rel_error: 0.0 },
        FdInstance { name: "grpo-modified", max_rel_error: 0.0 },
        FdInstance { name: "grpo-vanilla", max_rel_error: 0.0 },
    ];
    let coords = 24;
    for inst in 0..instances as u64 {
        let mut r = rng(seed.wrapping_add(inst));
        let catalog = random_catalog(&mut r, 12, 5, 3);
        let trie = catalog.prefix_tree();
        let policy = random_policy(catalog.vocab_size(), seed ^ inst);
        let cfg = random_loss_config(&mut r);

        // Supervised sequence NLL.
        let prompt = random_prompt(&mut r, &catalog);
        let target = catalog.items()[r.random_range(0..catalog.len())].clone();
        let e = fd_max_rel_error(
            &policy,
            |t, b| losses::sft_loss(t, b, &prompt, target.tokens()),
            coords,
            inst,
        );
        worst[0].max_rel_error = worst[0].max_rel_error.max(e);

        // SimPO with masked rewards over one failed group.
        let fail = random_group(&mut r, &policy, &catalog, 0, 4, false);
        let pairs = rollout::build_preference_pairs(&fail).unwrap();
        let e = fd_max_rel_error(
            &policy,
            |t, b| losses::simpo_loss(t, b, &pairs, &trie, &cfg),
            coords,
            inst,
        );
        worst[1].max_rel_error = worst[1].max_rel_error.max(e);

        // Modified GRPO with masks and KL-Cov flags. The old log-probs are shifted
        // away from the current policy so that ratios differ from 1 and clip
        // boundaries are not hit.
        let groups: Vec<RolloutGroup> = (0..2)
            .map(|g| random_group(&mut r, &policy, &catalog, g, 4, true))
            .collect();
        let mut batch = TokenBatch::from_groups(&groups, &trie, cfg.d).unwrap();
        for rec in &mut batch.tokens {
            rec.old_log_prob -= shift(&mut r, cfg.epsilon);
        }
        let flags: Vec<bool> = (0..batch.len()).map(|_| r.random_bool(0.4)).collect();
        let records = batch.tokens.clone();
        let e = fd_max_rel_error(
            &policy,
            |t, b| {
                let mut vars = Vec::new();
                for g in &groups {
                    let h = b.encode(t, &g.prompt)?;
                    for c in &g.completions {
                        vars.extend(b.token_log_probs(t, h, c.tokens())?);
                    }
                }
                Ok(losses::grpo_modified_loss(t, &vars, &records, &flags, &cfg)?.loss)
            },
            coords,
            inst,
        );
        worst[2].max_rel_error = worst[2].max_rel_error.max(e);

        // Vanilla clipped sequence objective with a reference KL term.
        let g = &groups[0];
        let weight = 1.0 / g.completions.len() as f64;
        let seq_records: Vec<SequenceRecord> = g
            .completions
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let current = &g.old_log_probs[i];
                let total = shift(&mut r, cfg.epsilon);
                let mut old = current.clone();
                old[0] -= total;
                SequenceRecord {
                    old_log_probs: old,
                    ref_log_probs: current.iter().map(|v| v - r.random_range(0.0..0.5)).collect(),
                    advantage: g.advantages[i],
                    weight,
                }
            })
            .collect();
        let e = fd_max_rel_error(
            &policy,
            |t, b| {
                let h = b.encode(t, &g.prompt)?;
                let lps = g
                    .completions
                    .iter()
                    .map(|c| b.token_log_probs(t, h, c.tokens()))
                    .collect::<Result<Vec<_>>>()?;
                Ok(losses::grpo_vanilla_loss(t, &lps, &seq_records, &cfg)?.loss)
            },
            coords,
            inst,
        );
        worst[3].max_rel_error = worst[3].max_rel_error.max(e);
    }
    worst
}

/// A log-ratio offset whose ratio stays well clear of 1 and of `1 ± epsilon`.
fn shift<R: Rng>(r: &mut R, epsilon: f64) -> f64 {
    loop {
        let s: f64 = r.random_range(-0.6..0.6);
        let ratio = s.exp();
        let clear = |b: f64| (ratio - b).abs() > 0.02;
        if s.abs() > 0.02 && clear(1.0 - epsilon) && clear(1.0 + epsilon) {
            return s;
        }
    }
}

/// Reference HR@N: 1 when the truth occupies one of the first `n` slots.
pub fn oracle_hr(ranked: &[usize], truth: usize, n: usize) -> f64 {
    if ranked.iter().take(n).any(|&i| i == truth) {
        1.0
    } else {
        0.0
    }
}

/// Reference NDCG@N for a single relevant item: `1 / log2(rank + 1)` within the cutoff.
pub fn oracle_ndcg(ranked: &[usize], truth: usize, n: usize) -> f64 {
    for (pos, &i) in ranked.iter().take(n).enumerate() {
        if i == truth {
            return std::f64::consts::LN_2 / ((pos + 2) as f64).ln();
        }
    }
    0.0
}

/// Group-relative advantages computed directly: population standard deviation,
/// zeros for constant groups.
pub fn oracle_advantages(r: &[f64]) -> Vec<f64> {
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let var = r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if var == 0.0 {
        return vec![0.0; r.len()];
    }
    r.iter().map(|x| (x - mean) / var.sqrt()).collect()
}

pub fn prefix_tree_of(catalog: &ItemCatalog) -> PrefixTree {
    let mut t = PrefixTree::new();
    for it in catalog.items() {
        t.insert(it).unwrap();
    }
    t
}
