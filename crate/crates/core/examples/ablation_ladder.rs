//! The component ladder (SFT, +GRPO, +dedup, +KL-Cov, +mask, +SimPO) on a reduced
//! world in a temporary workdir, printed as the summary CSV.

use riser::config::ExperimentConfig;
use riser::experiment;

fn main() -> riser::Result<()> {
    let dir = tempfile::tempdir()?;
    let mut cfg = ExperimentConfig::from_toml(
        r#"
        [gen]
        num_items = 96
        tokens_per_level = [8, 6, 4]
        num_users = 300
        num_interactions = 3000

        [sft]
        max_epochs = 4

        [rl]
        steps = 60
        "#,
    )?;
    cfg.paths.workdir = dir.path().to_path_buf();
    experiment::cmd_gen_data(&cfg, false)?;
    let rows = experiment::cmd_ablate(&cfg)?;
    riser::metrics::write_summary(std::io::stdout().lock(), &rows, &cfg.eval.cutoffs)?;
    Ok(())
}
