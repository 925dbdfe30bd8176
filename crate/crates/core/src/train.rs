//! Supervised warm-up and the reinforcement-learning stage.
//!
//! Each RL iteration snapshots the sampling policy, draws oversampled and
//! de-duplicated rollout groups, partitions them by whether any rollout hit the
//! ground truth, and combines the modified GRPO loss on successful groups with the
//! SimPO loss on failed ones. Losses are recorded on one tape per group; the
//! per-group gradients are summed in group order, so results do not depend on
//! how the work is scheduled.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::decoding;
use crate::error::{Error, Result};
use crate::item_space::{ItemCatalog, PrefixTree, Token, TokenizedItem};
use crate::losses::{self, LossConfig, SequenceRecord, TokenBatch};
use crate::metrics::{self, MetricRecord};
use crate::optim::{clip_grad_norm, AdamW, AdamWConfig};
use crate::policy::PolicyState;
use crate::rng;
use crate::rollout::{self, RolloutGroup};
use crate::tape::{Gradients, Tape, Var};
use crate::world::{assemble_prompt, Interaction};

const STREAM_SFT_SHUFFLE: u64 = 0x5f7;
const STREAM_RL_ORDER: u64 = 0x41;
const STREAM_ROLLOUT: u64 = 0x42;
const STREAM_PROBE: u64 = 0x43;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub optimizer: AdamWConfig,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-3,
            batch_size: 32,
            patience: 1,
            max_epochs: 20,
            optimizer: AdamWConfig::default(),
        }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "sft needs a positive learning rate, batch size and epoch budget".into(),
            ));
        }
        if self.patience < 1 {
            return Err(Error::Config("sft patience must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Riser,
    GrpoVanilla,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "riser" => Ok(Mode::Riser),
            "grpo-vanilla" => Ok(Mode::GrpoVanilla),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    pub mode: Mode,
    pub learning_rate: f64,
    /// Rollouts drawn per prompt before de-duplication.
    pub m: usize,
    /// Rollouts kept per prompt.
    pub n: usize,
    /// Rollout temperature.
    pub tau: f64,
    pub steps: u64,
    /// Prompts per step.
    pub batch_size: usize,
    /// Optimizer updates per rollout batch (the sampling policy stays fixed across them).
    pub updates_per_batch: usize,
    pub grad_clip: f64,
    pub val_every: u64,
    pub val_prompts: usize,
    pub entropy_every: u64,
    pub entropy_prompts: usize,
    /// Steps between resumable checkpoints (0 disables them).
    pub checkpoint_every: u64,
    pub optimizer: AdamWConfig,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Riser,
            learning_rate: 3e-4,
            m: 20,
            n: 16,
            tau: 1.0,
            steps: 400,
            batch_size: 32,
            updates_per_batch: 1,
            grad_clip: 1.0,
            val_every: 25,
            val_prompts: 256,
            entropy_every: 10,
            entropy_prompts: 64,
            checkpoint_every: 100,
            optimizer: AdamWConfig::default(),
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.into()));
        if self.n == 0 || self.m < self.n {
            return err("rollout counts need m >= n >= 1");
        }
        if !(self.tau > 0.0) || !(self.learning_rate > 0.0) {
            return err("tau and learning_rate must be positive");
        }
        if self.batch_size == 0 || self.updates_per_batch == 0 {
            return err("batch_size and updates_per_batch must be positive");
        }
        if self.val_every == 0 || self.entropy_every == 0 {
            return err("val_every and entropy_every must be positive");
        }
        if !(self.grad_clip > 0.0) {
            return err("grad_clip must be positive");
        }
        Ok(())
    }
}

/// A prompt ready for training: token prompt plus ground-truth item.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub prompt: Vec<Token>,
    pub target: TokenizedItem,
}

pub fn examples(interactions: &[Interaction], catalog: &ItemCatalog) -> Result<Vec<Example>> {
    interactions
        .iter()
        .map(|i| {
            Ok(Example {
                prompt: assemble_prompt(&i.history, catalog)?,
                target: catalog.get(i.target)?.clone(),
            })
        })
        .collect()
}

/// Mean sequence NLL over `examples` with plain forward passes.
pub fn mean_nll(policy: &PolicyState, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for ex in examples {
        let lp = policy.token_log_probs(&ex.prompt, ex.target.tokens())?;
        total -= lp.iter().sum::<f64>();
    }
    Ok(total / examples.len() as f64)
}

/// Gradient of the mean sequence NLL over `batch`, and that mean.
pub fn sft_gradients(policy: &PolicyState, batch: &[Example]) -> Result<(Gradients, f64)> {
    let mut grads = policy.zero_gradients();
    let mut loss = 0.0;
    let scale = 1.0 / batch.len().max(1) as f64;
    for ex in batch {
        let mut tape = Tape::new();
        let bound = policy.bind(&mut tape);
        let l = losses::sft_loss(&mut tape, &bound, &ex.prompt, ex.target.tokens())?;
        loss += scale * tape.scalar(l);
        grads.accumulate(&tape.backward(l)?, scale);
    }
    Ok((grads, loss))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SftOutcome {
    pub best: PolicyState,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
}

/// Minibatch AdamW on the sequence NLL with early stopping on validation loss.
pub fn train_sft(
    init: &PolicyState,
    d_sft: &[Example],
    d_val: &[Example],
    cfg: &SftConfig,
    seed: u64,
    metrics_out: &mut dyn Write,
) -> Result<SftOutcome> {
    cfg.validate()?;
    if d_sft.is_empty() || d_val.is_empty() {
        return Err(Error::Data("sft needs non-empty training and validation sets".into()));
    }
    let mut policy = init.clone();
    let mut opt = AdamW::new(&policy.shapes(), cfg.optimizer.clone());
    let mut best = (policy.clone(), 0usize, f64::INFINITY);
    let mut since_best = 0usize;
    let mut epochs_run = 0;
    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..d_sft.len()).collect();
        order.shuffle(&mut rng::stream(seed, &[STREAM_SFT_SHUFFLE, epoch as u64]));
        let mut train_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| d_sft[i].clone()).collect();
            let (grads, loss) = sft_gradients(&policy, &batch)?;
            if !loss.is_finite() {
                return Err(Error::NumericAbort(format!(
                    "sft loss became {loss} in epoch {epoch}"
                )));
            }
            opt.step(policy.update(), &grads, cfg.learning_rate)?;
            train_loss += loss;
            batches += 1;
        }
        epochs_run = epoch;
        let val_loss = mean_nll(&policy, d_val)?;
        if !val_loss.is_finite() {
            return Err(Error::NumericAbort(format!(
                "sft validation loss became {val_loss} in epoch {epoch}"
            )));
        }
        MetricRecord {
            stage: "sft".into(),
            step: epoch as u64,
            loss: Some(train_loss / batches as f64),
            val_loss: Some(val_loss),
            ..Default::default()
        }
        .write_line(&mut *metrics_out)?;
        if val_loss < best.2 {
            best = (policy.clone(), epoch, val_loss);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok(SftOutcome {
        best: best.0,
        best_epoch: best.1,
        best_val_loss: best.2,
        epochs_run,
    })
}

/// Log-prob nodes of every completion of `group` under `policy`, on a fresh tape.
struct GroupTape {
    tape: Tape,
    log_probs: Vec<Vec<Var>>,
}

fn record_group(policy: &PolicyState, group: &RolloutGroup) -> Result<GroupTape> {
    let mut tape = Tape::new();
    let bound = policy.bind(&mut tape);
    let h = bound.encode(&mut tape, &group.prompt)?;
    let log_probs = group
        .completions
        .iter()
        .map(|c| bound.token_log_probs(&mut tape, h, c.tokens()))
        .collect::<Result<_>>()?;
    Ok(GroupTape { tape, log_probs })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GrpoStats {
    pub surrogate: f64,
    pub penalty: f64,
    pub outliers: usize,
}

/// Gradient of the modified GRPO loss over `groups` (normally the successful ones).
pub fn grpo_gradients(
    policy: &PolicyState,
    groups: &[RolloutGroup],
    trie: &PrefixTree,
    cfg: &LossConfig,
) -> Result<(Gradients, GrpoStats)> {
    let mut grads = policy.zero_gradients();
    if groups.is_empty() {
        return Ok((grads, GrpoStats::default()));
    }
    let mut batch = TokenBatch::from_groups(groups, trie, cfg.d)?;
    let mut tapes = Vec::with_capacity(groups.len());
    let mut cursor = 0;
    for g in groups {
        let gt = record_group(policy, g)?;
        for lps in &gt.log_probs {
            for &v in lps {
                batch.tokens[cursor].new_log_prob = gt.tape.scalar(v);
                cursor += 1;
            }
        }
        tapes.push(gt);
    }
    let scores = losses::kl_cov_scores(&batch);
    let selected = losses::select_outliers(&scores, cfg.k);
    let flags = losses::outlier_flags(batch.len(), &selected);

    let mut stats = GrpoStats {
        outliers: selected.len(),
        ..Default::default()
    };
    let mut start = 0;
    for mut gt in tapes {
        let vars: Vec<Var> = gt.log_probs.iter().flatten().copied().collect();
        let end = start + vars.len();
        let terms = losses::grpo_modified_loss(
            &mut gt.tape,
            &vars,
            &batch.tokens[start..end],
            &flags[start..end],
            cfg,
        )?;
        stats.surrogate += terms.surrogate;
        stats.penalty += terms.penalty;
        grads.accumulate(&gt.tape.backward(terms.loss)?, 1.0);
        start = end;
    }
    Ok((grads, stats))
}

/// Gradient of the mean SimPO loss over all pairs built from `fail_groups`.
pub fn simpo_gradients(
    policy: &PolicyState,
    fail_groups: &[RolloutGroup],
    trie: &PrefixTree,
    cfg: &LossConfig,
) -> Result<(Gradients, f64)> {
    let mut grads = policy.zero_gradients();
    let total_pairs: usize = fail_groups.iter().map(|g| g.completions.len()).sum();
    let mut loss = 0.0;
    for g in fail_groups {
        let pairs = rollout::build_preference_pairs(g)?;
        let share = pairs.len() as f64 / total_pairs as f64;
        let mut tape = Tape::new();
        let bound = policy.bind(&mut tape);
        let l = losses::simpo_loss(&mut tape, &bound, &pairs, trie, cfg)?;
        loss += share * tape.scalar(l);
        grads.accumulate(&tape.backward(l)?, share);
    }
    Ok((grads, loss))
}

/// Gradient of the clipped baseline objective with a sampled-token KL to `reference`.
pub fn vanilla_gradients(
    policy: &PolicyState,
    reference: &PolicyState,
    groups: &[RolloutGroup],
    cfg: &LossConfig,
) -> Result<(Gradients, GrpoStats)> {
    let mut grads = policy.zero_gradients();
    let mut stats = GrpoStats::default();
    let g_norm = groups.len() as f64;
    for g in groups {
        let h_ref = reference.encode(&g.prompt)?;
        let weight = 1.0 / (g.completions.len() as f64 * g_norm);
        let records = g
            .completions
            .iter()
            .enumerate()
            .map(|(i, c)| {
                Ok(SequenceRecord {
                    old_log_probs: g.old_log_probs[i].clone(),
                    ref_log_probs: reference.token_log_probs_from(&h_ref, c.tokens())?,
                    advantage: g.advantages[i],
                    weight,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut gt = record_group(policy, g)?;
        let terms = losses::grpo_vanilla_loss(&mut gt.tape, &gt.log_probs, &records, cfg)?;
        stats.surrogate += terms.surrogate;
        stats.penalty += terms.penalty;
        grads.accumulate(&gt.tape.backward(terms.loss)?, 1.0);
    }
    Ok((grads, stats))
}

/// Rollout groups for `batch` under the sampling policy, one rng stream per prompt.
#[allow(clippy::too_many_arguments)]
pub fn rollout_batch(
    policy_old: &PolicyState,
    batch: &[(usize, &Example)],
    m: usize,
    n: usize,
    tau: f64,
    trie: &PrefixTree,
    seed: u64,
    step: u64,
) -> Result<Vec<RolloutGroup>> {
    batch
        .iter()
        .map(|&(id, ex)| {
            let mut r = rng::stream(seed, &[STREAM_ROLLOUT, step, id as u64]);
            rollout::generate_group(policy_old, id, &ex.prompt, &ex.target, m, n, tau, trie, &mut r)
        })
        .collect()
}

/// Prompt ids of step `step` (1-based): consecutive slices of a per-epoch shuffle.
pub fn batch_indices(num_prompts: usize, batch_size: usize, seed: u64, step: u64) -> Vec<usize> {
    let b = batch_size.min(num_prompts);
    let per_epoch = (num_prompts / b) as u64;
    let epoch = (step - 1) / per_epoch;
    let slot = ((step - 1) % per_epoch) as usize;
    let mut order: Vec<usize> = (0..num_prompts).collect();
    order.shuffle(&mut rng::stream(seed, &[STREAM_RL_ORDER, epoch]));
    order[slot * b..(slot + 1) * b].to_vec()
}

/// Everything one RL step produced, for logging.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    pub grpo: f64,
    pub penalty: f64,
    pub simpo: f64,
    pub succ: usize,
    pub fail: usize,
    pub outliers: usize,
    pub unique_fraction: f64,
    pub utilization: f64,
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Mutable RL state: live policy plus optimizer.
pub struct RlState {
    pub policy: PolicyState,
    pub optimizer: AdamW,
}

/// One iteration: snapshot, rollouts, partition, losses, update(s).
#[allow(clippy::too_many_arguments)]
pub fn rl_step(
    state: &mut RlState,
    reference: &PolicyState,
    batch: &[(usize, &Example)],
    trie: &PrefixTree,
    rl: &RlConfig,
    loss_cfg: &LossConfig,
    seed: u64,
    step: u64,
) -> Result<StepReport> {
    let old = state.policy.snapshot();
    let m = if rl.mode == Mode::GrpoVanilla { rl.n } else { rl.m };
    let groups = rollout_batch(&old, batch, m, rl.n, rl.tau, trie, seed, step)?;
    let total: usize = groups.iter().map(|g| g.completions.len()).sum();
    let unique = groups.iter().flat_map(|g| &g.unique).filter(|&&u| u).count();
    let mut report = StepReport {
        unique_fraction: unique as f64 / total.max(1) as f64,
        ..Default::default()
    };
    let simpo_on = rl.mode == Mode::Riser && loss_cfg.w > 0.0;
    report.utilization = metrics::sample_utilization(&groups, simpo_on);

    let (succ, fail) = if rl.mode == Mode::Riser {
        rollout::partition(groups.clone())
    } else {
        (Vec::new(), Vec::new())
    };
    let succ_count = groups.iter().filter(|g| g.is_success()).count();
    report.succ = succ_count;
    report.fail = groups.len() - succ_count;

    for _ in 0..rl.updates_per_batch {
        let mut grads;
        match rl.mode {
            Mode::Riser => {
                let (g, stats) = grpo_gradients(&state.policy, &succ, trie, loss_cfg)?;
                grads = g;
                report.grpo = stats.surrogate;
                report.penalty = stats.penalty;
                report.outliers = stats.outliers;
                report.simpo = 0.0;
                if simpo_on && !fail.is_empty() {
                    let (gs, l) = simpo_gradients(&state.policy, &fail, trie, loss_cfg)?;
                    grads.accumulate(&gs, loss_cfg.w);
                    report.simpo = l;
                }
                report.loss = report.grpo + report.penalty + loss_cfg.w * report.simpo;
            }
            Mode::GrpoVanilla => {
                let (g, stats) = vanilla_gradients(&state.policy, reference, &groups, loss_cfg)?;
                grads = g;
                report.grpo = stats.surrogate;
                report.penalty = stats.penalty;
                report.loss = stats.surrogate + stats.penalty;
            }
        }
        if !report.loss.is_finite() || !grads.is_finite() {
            return Err(Error::NumericAbort(format!(
                "non-finite loss or gradient at rl step {step}"
            )));
        }
        report.grad_norm = grads.norm();
        report.clipped |= clip_grad_norm(&mut grads, rl.grad_clip).is_some();
        state
            .optimizer
            .step(state.policy.update(), &grads, rl.learning_rate)?;
    }
    Ok(report)
}

/// Fixed validation subset and entropy-probe prompts drawn from `d_val`.
pub fn probe_sets(d_val: &[Example], rl: &RlConfig, seed: u64) -> (Vec<Example>, Vec<Vec<Token>>) {
    let mut order: Vec<usize> = (0..d_val.len()).collect();
    order.shuffle(&mut rng::stream(seed, &[STREAM_PROBE]));
    let val = order
        .iter()
        .take(rl.val_prompts)
        .map(|&i| d_val[i].clone())
        .collect();
    let probe = order
        .iter()
        .take(rl.entropy_prompts)
        .map(|&i| d_val[i].prompt.clone())
        .collect();
    (val, probe)
}

pub fn greedy_hr1(policy: &PolicyState, examples: &[Example], trie: &PrefixTree) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for ex in examples {
        if decoding::greedy(policy, &ex.prompt, trie)? == ex.target.tokens() {
            hits += 1;
        }
    }
    Ok(hits as f64 / examples.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Progress {
    step: u64,
    best_step: u64,
    best_val_hr1: f64,
}

/// Where resumable RL state lives.
#[derive(Clone, Debug)]
pub struct RlPaths {
    pub dir: PathBuf,
}

impl RlPaths {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
        }
    }
    pub fn policy(&self) -> PathBuf {
        self.dir.join("rl_last.ckpt")
    }
    pub fn optimizer(&self) -> PathBuf {
        self.dir.join("rl_optim.ckpt")
    }
    pub fn progress(&self) -> PathBuf {
        self.dir.join("rl_progress.json")
    }
    pub fn best(&self) -> PathBuf {
        self.dir.join("rl_best.ckpt")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RlOutcome {
    pub last: PolicyState,
    pub best: PolicyState,
    pub best_step: u64,
    pub best_val_hr1: f64,
}

/// The RL stage from an SFT policy, which is also the reference policy of the
/// baseline mode. With `paths`, state is checkpointed every
/// `checkpoint_every` steps and at each new best; `resume` continues from it.
#[allow(clippy::too_many_arguments)]
pub fn train_rl(
    policy_sft: &PolicyState,
    d_rl: &[Example],
    d_val: &[Example],
    trie: &PrefixTree,
    rl: &RlConfig,
    loss_cfg: &LossConfig,
    seed: u64,
    metrics_out: &mut dyn Write,
    paths: Option<&RlPaths>,
    resume: bool,
) -> Result<RlOutcome> {
    rl.validate()?;
    loss_cfg.validate()?;
    if d_rl.is_empty() {
        return Err(Error::Config("the RL set has no prompts".into()));
    }
    let reference = policy_sft.snapshot();
    let (val, probe) = probe_sets(d_val, rl, seed);

    let mut state = RlState {
        policy: policy_sft.clone(),
        optimizer: AdamW::new(&policy_sft.shapes(), rl.optimizer.clone()),
    };
    let mut progress = Progress {
        step: 0,
        best_step: 0,
        best_val_hr1: f64::NEG_INFINITY,
    };
    let mut best = policy_sft.clone();
    let resumed = match paths {
        Some(p) if resume && p.progress().exists() => {
            let dims = Some(policy_sft.dims());
            state.policy = PolicyState::load(&p.policy(), dims)?;
            state.optimizer = AdamW::load(&p.optimizer(), policy_sft.dims(), rl.optimizer.clone())?;
            let text = std::fs::read_to_string(p.progress())?;
            progress = serde_json::from_str(&text)
                .map_err(|e| Error::Data(format!("rl progress file: {e}")))?;
            if p.best().exists() {
                best = PolicyState::load(&p.best(), dims)?;
            }
            true
        }
        _ => false,
    };

    if !resumed {
        let hr1 = greedy_hr1(&state.policy, &val, trie)?;
        let ent = decoding::mean_entropy(&state.policy, &probe, trie)?;
        progress.best_val_hr1 = hr1;
        MetricRecord {
            stage: "rl".into(),
            step: 0,
            hr1_val: Some(hr1),
            mean_entropy: Some(ent),
            ..Default::default()
        }
        .write_line(&mut *metrics_out)?;
    }

    for step in progress.step + 1..=rl.steps {
        let ids = batch_indices(d_rl.len(), rl.batch_size, seed, step);
        let batch: Vec<(usize, &Example)> = ids.iter().map(|&i| (i, &d_rl[i])).collect();
        let report = rl_step(&mut state, &reference, &batch, trie, rl, loss_cfg, seed, step)?;

        let mut record = MetricRecord {
            stage: "rl".into(),
            step,
            loss: Some(report.loss),
            grpo_term: Some(report.grpo),
            penalty_term: Some(report.penalty),
            simpo_term: Some(report.simpo),
            succ_groups: Some(report.succ),
            fail_groups: Some(report.fail),
            outliers: Some(report.outliers),
            unique_fraction: Some(report.unique_fraction),
            grad_norm: Some(report.grad_norm),
            grad_clipped: report.clipped,
            sample_utilization: Some(report.utilization),
            ..Default::default()
        };
        if step % rl.entropy_every == 0 || step == rl.steps {
            record.mean_entropy = Some(decoding::mean_entropy(&state.policy, &probe, trie)?);
        }
        let mut new_best = false;
        if step % rl.val_every == 0 || step == rl.steps {
            let hr1 = greedy_hr1(&state.policy, &val, trie)?;
            record.hr1_val = Some(hr1);
            if hr1 > progress.best_val_hr1 {
                progress.best_val_hr1 = hr1;
                progress.best_step = step;
                best = state.policy.clone();
                new_best = true;
            }
        }
        record.write_line(&mut *metrics_out)?;
        progress.step = step;

        if let Some(p) = paths {
            if new_best {
                best.save(&p.best())?;
            }
            let periodic = rl.checkpoint_every > 0 && step % rl.checkpoint_every == 0;
            if periodic || step == rl.steps {
                state.policy.save(&p.policy())?;
                state.optimizer.save(&p.optimizer(), state.policy.dims())?;
                let text = serde_json::to_string(&progress)
                    .map_err(|e| Error::Data(format!("rl progress: {e}")))?;
                std::fs::write(p.progress(), text)?;
            }
        }
    }
    Ok(RlOutcome {
        last: state.policy,
        best,
        best_step: progress.best_step,
        best_val_hr1: progress.best_val_hr1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::item_space::ItemCatalog;
    use crate::policy::PolicyDims;

    fn tiny_catalog() -> ItemCatalog {
        let items = [[4u32, 6], [4, 7], [5, 6], [5, 8]]
            .iter()
            .map(|c| TokenizedItem::from_content(&[Token(c[0]), Token(c[1])]).unwrap())
            .collect();
        ItemCatalog::new(items, 9).unwrap()
    }

    fn example(catalog: &ItemCatalog, hist: &[usize], target: usize) -> Example {
        Example {
            prompt: assemble_prompt(hist, catalog).unwrap(),
            target: catalog.get(target).unwrap().clone(),
        }
    }

    #[test]
    fn sft_memorizes_a_single_pair() {
        let catalog = tiny_catalog();
        let ex = vec![example(&catalog, &[0, 1], 2)];
        let policy = PolicyState::init(PolicyDims::new(9, 8, 12), 3);
        let cfg = SftConfig {
            learning_rate: 3e-2,
            batch_size: 1,
            max_epochs: 300,
            patience: 300,
            ..Default::default()
        };
        let out = train_sft(&policy, &ex, &ex, &cfg, 1, &mut std::io::sink()).unwrap();
        assert!(out.best_val_loss < 0.01, "{}", out.best_val_loss);
    }

    #[test]
    fn uniform_policy_sft_loss() {
        let catalog = tiny_catalog();
        let ex = example(&catalog, &[3], 1);
        let mut policy = PolicyState::init(PolicyDims::new(9, 4, 5), 0);
        policy.update()[crate::policy::ParamKind::OutputWeights.slot()].fill(0.0);
        policy.update()[crate::policy::ParamKind::OutputBias.slot()].fill(0.0);
        let nll = mean_nll(&policy, &[ex.clone()]).unwrap();
        assert!((nll - 3.0 * 9f64.ln()).abs() < 1e-12);
        let (_, loss) = sft_gradients(&policy, &[ex]).unwrap();
        assert!((loss - nll).abs() < 1e-12);
    }

    #[test]
    fn batches_cover_each_epoch() {
        let mut seen = vec![0; 10];
        for step in 1..=5 {
            for i in batch_indices(10, 2, 9, step) {
                seen[i] += 1;
            }
        }
        assert_eq!(seen, vec![1; 10]);
        assert_eq!(batch_indices(10, 2, 9, 3), batch_indices(10, 2, 9, 3));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("riser".parse::<Mode>().unwrap(), Mode::Riser);
        assert_eq!("grpo-vanilla".parse::<Mode>().unwrap(), Mode::GrpoVanilla);
        assert!("ppo".parse::<Mode>().is_err());
    }

    #[test]
    fn config_checks() {
        RlConfig::default().validate().unwrap();
        let bad = RlConfig {
            m: 4,
            n: 8,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SftConfig {
            patience: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
