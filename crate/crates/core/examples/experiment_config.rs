//! Parses a partial TOML config, shows the effective values and writes the
//! fully populated document back out.

use riser::config::ExperimentConfig;

fn main() -> riser::Result<()> {
    let cfg = ExperimentConfig::from_toml(
        r#"
        [gen]
        seed = 7

        [rl]
        mode = "grpo-vanilla"
        steps = 100

        [loss]
        d = 0.6
        "#,
    )?;
    println!("workdir: {}", cfg.workdir().display());
    println!("rl: mode {:?}, lr {}, m {} n {}", cfg.rl.mode, cfg.rl.learning_rate, cfg.rl.m, cfg.rl.n);
    print!("{}", cfg.to_toml()?);
    match ExperimentConfig::from_toml("[loss]\nbeta = 1.0\n") {
        Err(e) => println!("rejected: {e} (exit code {})", e.exit_code()),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
