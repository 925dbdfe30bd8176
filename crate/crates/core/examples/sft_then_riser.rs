//! Two-stage training on a reduced world: supervised warm-up, then RISER.
//! Prints test HR@5 and NDCG@5 after each stage.

use riser::losses::LossConfig;
use riser::metrics::{self, DEFAULT_CUTOFFS};
use riser::policy::{PolicyDims, PolicyState};
use riser::train::{self, RlConfig, SftConfig};
use riser::world::{self, GenConfig};

fn main() -> riser::Result<()> {
    let cfg = GenConfig {
        num_items: 128,
        tokens_per_level: vec![8, 6, 4],
        num_users: 400,
        num_interactions: 5000,
        ..GenConfig::default()
    };
    let catalog = world::build_catalog(&cfg)?;
    let trie = catalog.prefix_tree();
    let splits = world::generate_interactions(&cfg, &catalog)?;
    let d_sft = train::examples(&splits.d_sft, &catalog)?;
    let d_rl = train::examples(&splits.d_rl, &catalog)?;
    let d_val = train::examples(&splits.d_val, &catalog)?;

    let init = PolicyState::init(PolicyDims::new(catalog.vocab_size(), 32, 64), cfg.seed);
    let sft_cfg = SftConfig { max_epochs: 6, ..SftConfig::default() };
    let sft = train::train_sft(&init, &d_sft, &d_val, &sft_cfg, cfg.seed, &mut std::io::sink())?;
    println!("SFT stopped after {} epochs, best val NLL {:.3}", sft.epochs_run, sft.best_val_loss);

    let rl = RlConfig { steps: 100, ..RlConfig::default() };
    let out = train::train_rl(&sft.best, &d_rl, &d_val, &trie, &rl, &LossConfig::default(), cfg.seed, &mut std::io::sink(), None, false)?;

    for (name, policy) in [("sft", &sft.best), ("riser", &out.last)] {
        let report = metrics::evaluate(policy, &catalog, &trie, &splits.d_test, 20, &DEFAULT_CUTOFFS, None)?;
        println!("{name}: HR@5 {:.4} NDCG@5 {:.4}", report.all.hr(5).unwrap(), report.all.ndcg(5).unwrap());
    }
    Ok(())
}
