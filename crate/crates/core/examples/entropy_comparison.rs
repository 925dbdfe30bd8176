//! Policy entropy during RL for RISER and vanilla GRPO from the same warm-started
//! policy, printed as CSV (`step,riser,grpo_vanilla`).

use riser::losses::LossConfig;
use riser::metrics::{read_metric_records, MetricRecord};
use riser::policy::{PolicyDims, PolicyState};
use riser::train::{self, Mode, RlConfig, SftConfig};
use riser::world::{self, GenConfig};

fn entropies(log: &[u8]) -> riser::Result<Vec<(u64, f64)>> {
    let text = String::from_utf8_lossy(log);
    Ok(read_metric_records(&text)?
        .into_iter()
        .filter_map(|r: MetricRecord| r.mean_entropy.map(|e| (r.step, e)))
        .collect())
}

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
    let sft = train::train_sft(&init, &d_sft, &d_val, &sft_cfg, cfg.seed, &mut std::io::sink())?.best;

    let mut curves = Vec::new();
    for mode in [Mode::Riser, Mode::GrpoVanilla] {
        let rl = RlConfig { mode, steps: 150, ..RlConfig::default() };
        let mut log = Vec::new();
        train::train_rl(&sft, &d_rl, &d_val, &trie, &rl, &LossConfig::default(), cfg.seed, &mut log, None, false)?;
        curves.push(entropies(&log)?);
    }
    println!("step,riser,grpo_vanilla");
    for ((step, a), (_, b)) in curves[0].iter().zip(&curves[1]) {
        println!("{step},{a:.4},{b:.4}");
    }
    Ok(())
}
