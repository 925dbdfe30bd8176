//! Seeded synthetic sequential-recommendation world.
//!
//! Items live in a token hierarchy (think brand / series / model); their latent
//! vectors are sums of per-prefix components, so items that share a prefix are
//! similar. Users carry a fixed preference vector plus a drifting state that
//! tracks what they consumed recently; the next item is drawn from a tempered
//! softmax over affinity, a Zipf-like popularity prior that drifts over time,
//! and a penalty on immediate repeats.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::item_space::{ItemCatalog, Token, TokenizedItem};
use crate::kernels;
use crate::rng;

const STREAM_CATALOG: u64 = 1;
const STREAM_LATENT: u64 = 2;
const STREAM_SIMULATE: u64 = 3;
const STREAM_SPLIT: u64 = 4;
const MAX_CAPACITY: u64 = 1 << 22;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub num_users: usize,
    pub num_items: usize,
    pub num_interactions: usize,
    pub latent_dim: usize,
    /// Distinct tokens available at each hierarchy level.
    pub tokens_per_level: Vec<usize>,
    /// Maximum history length kept per interaction.
    pub sequence_length: usize,
    pub noise_temperature: f64,
    /// Zipf exponent used when choosing which hierarchy paths become items.
    pub catalog_skew: f64,
    /// Zipf exponent of the item popularity prior (in logit space).
    pub popularity_skew: f64,
    /// Standard deviation of each item's popularity change over the timeline.
    pub popularity_drift: f64,
    /// Scale of the user-item affinity term.
    pub affinity_scale: f64,
    /// Weight of the fixed user preference against the drifting state.
    pub preference_weight: f64,
    /// How much of the previous state survives each interaction.
    pub state_decay: f64,
    /// Logit penalty for items among the last three consumed.
    pub repeat_penalty: f64,
    /// Chronological split ratio for the SFT, validation and test periods.
    pub split_ratio: [u32; 3],
    /// Fraction of the validation period sampled into the RL set; the rest is validation.
    pub rl_fraction: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            num_users: 2000,
            num_items: 512,
            num_interactions: 20_000,
            latent_dim: 16,
            tokens_per_level: vec![16, 12, 8],
            sequence_length: 10,
            noise_temperature: 1.0,
            catalog_skew: 1.0,
            popularity_skew: 0.7,
            popularity_drift: 1.0,
            affinity_scale: 10.0,
            preference_weight: 0.5,
            state_decay: 0.5,
            repeat_penalty: 4.0,
            split_ratio: [8, 1, 1],
            rl_fraction: 0.7,
        }
    }
}

impl GenConfig {
    pub fn capacity(&self) -> u64 {
        self.tokens_per_level
            .iter()
            .try_fold(1u64, |acc, &n| acc.checked_mul(n as u64))
            .unwrap_or(u64::MAX)
    }

    pub fn vocab_size(&self) -> usize {
        Token::FIRST_CONTENT as usize + self.tokens_per_level.iter().sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.tokens_per_level.is_empty() || self.tokens_per_level.contains(&0) {
            return err("tokens_per_level needs at least one non-empty level".into());
        }
        if self.num_items == 0 || self.capacity() < self.num_items as u64 {
            return err(format!(
                "hierarchy capacity {} cannot hold {} items",
                self.capacity(),
                self.num_items
            ));
        }
        if self.capacity() > MAX_CAPACITY {
            return err(format!("hierarchy capacity above {MAX_CAPACITY}"));
        }
        if self.sequence_length < 2 {
            return err("sequence_length must be at least 2".into());
        }
        if !(self.noise_temperature > 0.0) {
            return err("noise_temperature must be positive".into());
        }
        if self.num_users == 0 || self.latent_dim == 0 {
            return err("num_users and latent_dim must be positive".into());
        }
        if self.split_ratio.contains(&0) {
            return err("split_ratio entries must be positive".into());
        }
        if !(0.0..1.0).contains(&self.rl_fraction) || self.rl_fraction == 0.0 {
            return err("rl_fraction must lie in (0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.state_decay) {
            return err("state_decay must lie in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.preference_weight) {
            return err("preference_weight must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Ids of the content tokens at each level.
fn level_token(config: &GenConfig, level: usize, k: usize) -> Token {
    let offset: usize = config.tokens_per_level[..level].iter().sum();
    Token(Token::FIRST_CONTENT + (offset + k) as u32)
}

/// Chooses `num_items` hierarchy paths, favoring a per-parent random ordering of
/// children with Zipf weights, and returns them as items in lexicographic order.
pub fn generate_catalog(config: &GenConfig) -> Result<Vec<TokenizedItem>> {
    config.validate()?;
    let levels = &config.tokens_per_level;
    let capacity = config.capacity() as usize;
    let mut r = rng::stream(config.seed, &[STREAM_CATALOG]);

    // Rank of child k under each parent, drawn per parent in index order.
    let mut ranks: Vec<Vec<Vec<usize>>> = Vec::with_capacity(levels.len());
    let mut parents = 1usize;
    for &width in levels {
        let mut per_parent = Vec::with_capacity(parents);
        for _ in 0..parents {
            let mut perm: Vec<usize> = (0..width).collect();
            perm.shuffle(&mut r);
            per_parent.push(perm);
        }
        ranks.push(per_parent);
        parents *= width;
    }

    // Efraimidis-Spirakis weighted sampling without replacement: key = ln(u) / w.
    let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(capacity);
    for path in 0..capacity {
        let digits = path_digits(path, levels);
        let mut log_w = 0.0;
        let mut parent = 0usize;
        for (level, &k) in digits.iter().enumerate() {
            let rank = ranks[level][parent][k];
            log_w -= config.catalog_skew * ((rank + 1) as f64).ln();
            parent = parent * levels[level] + k;
        }
        let u: f64 = r.random_range(f64::MIN_POSITIVE..1.0);
        keyed.push((u.ln() / log_w.exp(), path));
    }
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut chosen: Vec<usize> = keyed[..config.num_items].iter().map(|&(_, p)| p).collect();
    chosen.sort_unstable();

    chosen
        .into_iter()
        .map(|path| {
            let content: Vec<Token> = path_digits(path, levels)
                .into_iter()
                .enumerate()
                .map(|(level, k)| level_token(config, level, k))
                .collect();
            TokenizedItem::from_content(&content)
        })
        .collect()
}

fn path_digits(mut path: usize, levels: &[usize]) -> Vec<usize> {
    let mut digits = vec![0; levels.len()];
    for level in (0..levels.len()).rev() {
        digits[level] = path % levels[level];
        path /= levels[level];
    }
    digits
}

pub fn build_catalog(config: &GenConfig) -> Result<ItemCatalog> {
    ItemCatalog::new(generate_catalog(config)?, config.vocab_size())
}

/// One next-item prediction instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    pub history: Vec<usize>,
    pub target: usize,
    pub timestamp: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSplits {
    pub d_sft: Vec<Interaction>,
    pub d_rl: Vec<Interaction>,
    pub d_val: Vec<Interaction>,
    pub d_test: Vec<Interaction>,
}

impl DatasetSplits {
    pub fn named(&self) -> [(&'static str, &[Interaction]); 4] {
        [
            ("d_sft", &self.d_sft),
            ("d_rl", &self.d_rl),
            ("d_val", &self.d_val),
            ("d_test", &self.d_test),
        ]
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        for (name, split) in self.named() {
            let file = std::fs::File::create(dir.join(format!("{name}.tsv")))?;
            write_interactions(std::io::BufWriter::new(file), split)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<Vec<Interaction>> {
            let path = dir.join(format!("{name}.tsv"));
            let file = std::fs::File::open(&path)
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            read_interactions(std::io::BufReader::new(file))
        };
        Ok(Self {
            d_sft: read("d_sft")?,
            d_rl: read("d_rl")?,
            d_val: read("d_val")?,
            d_test: read("d_test")?,
        })
    }

    /// Checks chronology and that no (user, timestamp) instance appears twice.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (name, split) in self.named() {
            for i in split {
                if !seen.insert((i.user, i.timestamp)) {
                    return Err(Error::Data(format!(
                        "interaction (user {}, t {}) appears twice (in {name})",
                        i.user, i.timestamp
                    )));
                }
            }
        }
        let max_sft = self.d_sft.iter().map(|i| i.timestamp).max();
        let min_later = self
            .d_rl
            .iter()
            .chain(&self.d_val)
            .map(|i| i.timestamp)
            .min();
        let max_val = self
            .d_rl
            .iter()
            .chain(&self.d_val)
            .map(|i| i.timestamp)
            .max();
        let min_test = self.d_test.iter().map(|i| i.timestamp).min();
        if let (Some(a), Some(b)) = (max_sft, min_later) {
            if a >= b {
                return Err(Error::Data("SFT period overlaps the validation period".into()));
            }
        }
        if let (Some(a), Some(b)) = (max_val, min_test) {
            if a >= b {
                return Err(Error::Data("validation period overlaps the test period".into()));
            }
        }
        Ok(())
    }
}

pub fn write_interactions<W: Write>(mut out: W, split: &[Interaction]) -> Result<()> {
    for i in split {
        let hist: Vec<String> = i.history.iter().map(|h| h.to_string()).collect();
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            i.user,
            i.timestamp,
            hist.join(","),
            i.target
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_interactions<R: BufRead>(input: R) -> Result<Vec<Interaction>> {
    let mut out = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Data(format!("line {}: bad {what}", lineno + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(bad("field count"));
        }
        let history = if fields[2].is_empty() {
            Vec::new()
        } else {
            fields[2]
                .split(',')
                .map(|h| h.parse().map_err(|_| bad("history")))
                .collect::<Result<_>>()?
        };
        out.push(Interaction {
            user: fields[0].parse().map_err(|_| bad("user"))?,
            timestamp: fields[1].parse().map_err(|_| bad("timestamp"))?,
            history,
            target: fields[3].parse().map_err(|_| bad("target"))?,
        });
    }
    Ok(out)
}

/// Latent state of the synthetic world.
#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    config: GenConfig,
    item_vecs: Vec<Vec<f64>>,
    base_popularity: Vec<f64>,
    popularity_drift: Vec<f64>,
    user_prefs: Vec<Vec<f64>>,
}

fn normalize(v: &mut [f64]) {
    let n = kernels::dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn gaussian(r: &mut rng::Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(r)).collect()
}

impl SyntheticWorld {
    pub fn new(config: &GenConfig, catalog: &ItemCatalog) -> Result<Self> {
        config.validate()?;
        let dim = config.latent_dim;
        let mut r = rng::stream(config.seed, &[STREAM_LATENT]);

        // Per-prefix components, drawn lazily in catalog (lexicographic) order.
        let mut components: HashMap<Vec<Token>, Vec<f64>> = HashMap::new();
        let mut item_vecs = Vec::with_capacity(catalog.len());
        for item in catalog.items() {
            let content = item.content();
            let mut v = vec![0.0; dim];
            let mut weight = 1.0;
            for depth in 1..=content.len() {
                let c = components
                    .entry(content[..depth].to_vec())
                    .or_insert_with(|| gaussian(&mut r, dim));
                kernels::axpy(weight, c, &mut v);
                weight *= 0.6;
            }
            normalize(&mut v);
            item_vecs.push(v);
        }

        let mut order: Vec<usize> = (0..catalog.len()).collect();
        order.shuffle(&mut r);
        let mut base_popularity = vec![0.0; catalog.len()];
        for (rank, &item) in order.iter().enumerate() {
            base_popularity[item] = -config.popularity_skew * ((rank + 1) as f64).ln();
        }
        let popularity_drift = (0..catalog.len())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut r);
                config.popularity_drift * z
            })
            .collect();
        let user_prefs = (0..config.num_users)
            .map(|_| {
                let mut u = gaussian(&mut r, dim);
                normalize(&mut u);
                u
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            item_vecs,
            base_popularity,
            popularity_drift,
            user_prefs,
        })
    }

    pub fn config(&self) -> &GenConfig {
        &self.config
    }

    pub fn num_items(&self) -> usize {
        self.item_vecs.len()
    }

    pub fn initial_state(&self, user: usize) -> Vec<f64> {
        self.user_prefs[user].clone()
    }

    pub fn advance_state(&self, state: &[f64], item: usize) -> Vec<f64> {
        let a = self.config.state_decay;
        state
            .iter()
            .zip(&self.item_vecs[item])
            .map(|(s, v)| a * s + (1.0 - a) * v)
            .collect()
    }

    /// Untempered next-item logits at timeline position `progress` in `[0, 1]`.
    pub fn item_logits(&self, user: usize, state: &[f64], recent: &[usize], progress: f64) -> Vec<f64> {
        let lam = self.config.preference_weight;
        let pref: Vec<f64> = self.user_prefs[user]
            .iter()
            .zip(state)
            .map(|(u, s)| lam * u + (1.0 - lam) * s)
            .collect();
        let mut logits: Vec<f64> = self
            .item_vecs
            .iter()
            .enumerate()
            .map(|(i, v)| {
                self.config.affinity_scale * kernels::dot(&pref, v)
                    + self.base_popularity[i]
                    + progress * self.popularity_drift[i]
            })
            .collect();
        for &i in recent.iter().rev().take(3) {
            logits[i] -= self.config.repeat_penalty;
        }
        logits
    }

    fn draw(&self, logits: &[f64], r: &mut rng::Rng) -> usize {
        let scaled: Vec<f64> = logits
            .iter()
            .map(|l| l / self.config.noise_temperature)
            .collect();
        let probs = kernels::softmax(&scaled);
        let u: f64 = r.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// Each user starts from one seed item (not an interaction); then at every
    /// clock tick a uniformly chosen user consumes one more item.
    pub fn simulate(&self) -> Vec<Interaction> {
        let cfg = &self.config;
        let mut r = rng::stream(cfg.seed, &[STREAM_SIMULATE]);
        let mut histories: Vec<Vec<usize>> = Vec::with_capacity(cfg.num_users);
        let mut states: Vec<Vec<f64>> = Vec::with_capacity(cfg.num_users);
        for user in 0..cfg.num_users {
            let state = self.initial_state(user);
            let first = self.draw(&self.item_logits(user, &state, &[], 0.0), &mut r);
            states.push(self.advance_state(&state, first));
            histories.push(vec![first]);
        }
        let total = cfg.num_interactions.max(1) as f64;
        let mut out = Vec::with_capacity(cfg.num_interactions);
        for t in 0..cfg.num_interactions {
            let user = r.random_range(0..cfg.num_users);
            let hist = &histories[user];
            let logits = self.item_logits(user, &states[user], hist, t as f64 / total);
            let target = self.draw(&logits, &mut r);
            let start = hist.len().saturating_sub(cfg.sequence_length);
            out.push(Interaction {
                user,
                history: hist[start..].to_vec(),
                target,
                timestamp: t as u64,
            });
            states[user] = self.advance_state(&states[user], target);
            histories[user].push(target);
        }
        out
    }
}

/// Splits timestamp-ordered interactions by `split_ratio`, then samples the RL
/// set from the validation period and keeps the remainder as validation.
pub fn split_chronologically(config: &GenConfig, mut all: Vec<Interaction>) -> DatasetSplits {
    all.sort_by_key(|i| i.timestamp);
    let n = all.len();
    let total: u32 = config.split_ratio.iter().sum();
    let n_sft = n * config.split_ratio[0] as usize / total as usize;
    let n_val = n * config.split_ratio[1] as usize / total as usize;
    let d_test = all.split_off(n_sft + n_val);
    let mut val_period = all.split_off(n_sft);
    let d_sft = all;

    let mut r = rng::stream(config.seed, &[STREAM_SPLIT]);
    val_period.shuffle(&mut r);
    let n_rl = ((val_period.len() as f64) * config.rl_fraction).round() as usize;
    let mut d_val = val_period.split_off(n_rl);
    let mut d_rl = val_period;
    d_rl.sort_by_key(|i| i.timestamp);
    d_val.sort_by_key(|i| i.timestamp);
    DatasetSplits {
        d_sft,
        d_rl,
        d_val,
        d_test,
    }
}

pub fn generate_interactions(config: &GenConfig, catalog: &ItemCatalog) -> Result<DatasetSplits> {
    let world = SyntheticWorld::new(config, catalog)?;
    let splits = split_chronologically(config, world.simulate());
    splits.check_disjoint()?;
    Ok(splits)
}

/// Prompt tokens: instruction marker, then `SEP item` per history entry, then the
/// response marker.
pub fn assemble_prompt(history: &[usize], catalog: &ItemCatalog) -> Result<Vec<Token>> {
    if history.is_empty() {
        return Err(Error::Data("prompt needs a non-empty history".into()));
    }
    let mut out = vec![Token::INSTRUCTION];
    for &id in history {
        out.push(Token::SEPARATOR);
        out.extend_from_slice(catalog.get(id)?.tokens());
    }
    out.push(Token::RESPONSE);
    Ok(out)
}

/// Gini coefficient of a frequency vector (0 = uniform).
pub fn gini(freqs: &[usize]) -> f64 {
    let mut sorted: Vec<f64> = freqs.iter().map(|&f| f as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let total: f64 = sorted.iter().sum();
    if total == 0.0 || sorted.is_empty() {
        return 0.0;
    }
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * (i as f64 + 1.0) - n - 1.0) * x)
        .sum();
    weighted / (n * total)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    fn small() -> GenConfig {
        GenConfig {
            num_users: 50,
            num_items: 40,
            num_interactions: 1000,
            tokens_per_level: vec![5, 4, 4],
            ..Default::default()
        }
    }

    #[test]
    fn tiny_exhaustive_hierarchy() {
        let cfg = GenConfig {
            tokens_per_level: vec![2, 2],
            num_items: 4,
            ..Default::default()
        };
        let items = generate_catalog(&cfg).unwrap();
        let (b0, b1, s0, s1) = (Token(4), Token(5), Token(6), Token(7));
        let expected: Vec<TokenizedItem> = [[b0, s0], [b0, s1], [b1, s0], [b1, s1]]
            .iter()
            .map(|c| TokenizedItem::from_content(c).unwrap())
            .collect();
        assert_eq!(items, expected);
    }

    #[test]
    fn full_three_level_hierarchy_is_distinct_and_branching() {
        let cfg = GenConfig {
            tokens_per_level: vec![3, 4, 5],
            num_items: 60,
            ..Default::default()
        };
        let items = generate_catalog(&cfg).unwrap();
        let distinct: BTreeSet<_> = items.iter().collect();
        assert_eq!(distinct.len(), 60);
        let trie = crate::item_space::PrefixTree::build(&items).unwrap();
        for item in &items {
            assert!(trie.children(&item.tokens()[..1]).unwrap().len() > 1);
        }
    }

    #[test]
    fn capacity_is_enforced() {
        let cfg = GenConfig {
            tokens_per_level: vec![2, 2],
            num_items: 5,
            ..Default::default()
        };
        assert!(matches!(generate_catalog(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn catalog_and_splits_are_deterministic() {
        let cfg = small();
        let a = build_catalog(&cfg).unwrap();
        let b = build_catalog(&cfg).unwrap();
        assert_eq!(a.items(), b.items());
        let sa = generate_interactions(&cfg, &a).unwrap();
        let sb = generate_interactions(&cfg, &b).unwrap();
        assert_eq!(sa, sb);
        let other = GenConfig { seed: 7, ..cfg };
        assert_ne!(generate_interactions(&other, &a).unwrap(), sa);
    }

    #[test]
    fn split_counts_follow_ratio() {
        let cfg = GenConfig::default();
        let all: Vec<Interaction> = (0..10_000)
            .map(|t| Interaction {
                user: t % 17,
                history: vec![0],
                target: 1,
                timestamp: t as u64,
            })
            .collect();
        let s = split_chronologically(&cfg, all);
        assert_eq!(s.d_sft.len(), 8000);
        assert_eq!(s.d_rl.len() + s.d_val.len(), 1000);
        assert_eq!(s.d_test.len(), 1000);
        assert_eq!(s.d_rl.len(), 700);
        s.check_disjoint().unwrap();
    }

    #[test]
    fn prompt_layout() {
        let cfg = small();
        let catalog = build_catalog(&cfg).unwrap();
        let p = assemble_prompt(&[3], &catalog).unwrap();
        let mut expected = vec![Token::INSTRUCTION, Token::SEPARATOR];
        expected.extend_from_slice(catalog.get(3).unwrap().tokens());
        expected.push(Token::RESPONSE);
        assert_eq!(p, expected);

        let fwd = assemble_prompt(&[1, 2], &catalog).unwrap();
        let rev = assemble_prompt(&[2, 1], &catalog).unwrap();
        assert_ne!(fwd, rev);

        let hist = [0, 5, 9, 5];
        let len: usize = hist.iter().map(|&h| catalog.get(h).unwrap().len()).sum();
        assert_eq!(
            assemble_prompt(&hist, &catalog).unwrap().len(),
            1 + len + hist.len() + 1
        );
        assert!(assemble_prompt(&[], &catalog).is_err());
        assert!(matches!(
            assemble_prompt(&[999], &catalog),
            Err(Error::UnknownItem(999))
        ));
    }

    #[test]
    fn split_files_roundtrip() {
        let cfg = small();
        let catalog = build_catalog(&cfg).unwrap();
        let splits = generate_interactions(&cfg, &catalog).unwrap();
        let dir = tempfile::tempdir().unwrap();
        splits.save(dir.path()).unwrap();
        assert_eq!(DatasetSplits::load(dir.path()).unwrap(), splits);
        let first = std::fs::read_to_string(dir.path().join("d_sft.tsv")).unwrap();
        let line = first.lines().next().unwrap();
        assert_eq!(line.split('\t').count(), 4);
    }

    #[test]
    fn gini_extremes() {
        assert_eq!(gini(&[5, 5, 5, 5]), 0.0);
        assert!((gini(&[0, 0, 0, 10]) - 0.75).abs() < 1e-12);
    }
}
