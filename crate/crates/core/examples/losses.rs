//! Loss terms on a small rollout batch: KL-Cov outlier scores, the modified
//! GRPO objective with certainty masks, SimPO on failed groups, and their gradients.

use riser::losses::{self, LossConfig, TokenBatch};
use riser::policy::{PolicyDims, PolicyState};
use riser::rollout;
use riser::train;
use riser::world::{self, GenConfig};

fn main() -> riser::Result<()> {
    let cfg = GenConfig {
        num_items: 24,
        tokens_per_level: vec![3, 3, 3],
        num_users: 20,
        num_interactions: 300,
        ..GenConfig::default()
    };
    let catalog = world::build_catalog(&cfg)?;
    let trie = catalog.prefix_tree();
    let splits = world::generate_interactions(&cfg, &catalog)?;
    let policy = PolicyState::init(PolicyDims::new(catalog.vocab_size(), 8, 16), 3);
    let loss_cfg = LossConfig { k: 0.05, ..LossConfig::default() };

    let mut rng = riser::rng::stream(3, &[0]);
    let mut groups = Vec::new();
    for (id, ex) in splits.d_rl.iter().take(16).enumerate() {
        let prompt = world::assemble_prompt(&ex.history, &catalog)?;
        groups.push(rollout::generate_group(&policy, id, &prompt, catalog.get(ex.target)?, 12, 8, 1.0, &trie, &mut rng)?);
    }
    let (succ, fail) = rollout::partition(groups);

    let batch = TokenBatch::from_groups(&succ, &trie, loss_cfg.d)?;
    let scores = losses::kl_cov_scores(&batch);
    let outliers = losses::select_outliers(&scores, loss_cfg.k);
    println!("{} tokens in {} successful groups, outliers {:?}", batch.len(), succ.len(), outliers);

    let (grpo, stats) = train::grpo_gradients(&policy, &succ, &trie, &loss_cfg)?;
    println!("GRPO surrogate {:.4}, penalty {:.4}, grad norm {:.4}", stats.surrogate, stats.penalty, grpo.norm());
    let (simpo, loss) = train::simpo_gradients(&policy, &fail, &trie, &loss_cfg)?;
    println!("SimPO over {} failed groups: loss {loss:.4}, grad norm {:.4}", fail.len(), simpo.norm());

    let margin = losses::simpo_pair_value(-1.2, -3.4, &loss_cfg);
    println!("pair loss for rewards -1.2 vs -3.4: {margin:.4}");
    Ok(())
}
