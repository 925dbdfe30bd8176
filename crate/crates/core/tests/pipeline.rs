use std::path::Path;
use std::process::Command;

use riser::config::ExperimentConfig;
use riser::experiment;
use riser::train::{self, RlConfig, RlPaths};
use riser::world::{self, GenConfig};

const TINY: &str = r#"
[gen]
seed = 3
num_users = 40
num_items = 30
num_interactions = 600
tokens_per_level = [4, 3, 3]

[policy]
embed = 6
hidden = 8

[sft]
max_epochs = 2

[rl]
steps = 4
m = 6
n = 4
batch_size = 4
val_every = 2
val_prompts = 16
entropy_every = 2
entropy_prompts = 8
checkpoint_every = 2

[eval]
max_test = 20
"#;

fn riser(workdir: &Path, config: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_riser"))
        .arg("--config")
        .arg(config)
        .arg("--workdir")
        .arg(workdir)
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn cli_runs_the_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("tiny.toml");
    std::fs::write(&config, TINY).unwrap();
    let work = dir.path().join("work");

    let out = riser(&work, &config, &["gen-data"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["catalog.txt", "d_sft.tsv", "d_rl.tsv", "d_val.tsv", "d_test.tsv", "manifest.json"] {
        assert!(work.join("data").join(f).exists(), "{f}");
    }
    let out = riser(&work, &config, &["gen-data"]);
    assert_eq!(out.status.code(), Some(3));

    let out = riser(&work, &config, &["train", "--stage", "rl"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("SFT checkpoint"));

    for args in [
        &["train", "--stage", "sft"][..],
        &["train", "--stage", "rl"],
        &["train", "--stage", "rl", "--mode", "grpo-vanilla"],
    ] {
        let out = riser(&work, &config, args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    for m in ["sft.jsonl", "rl-riser.jsonl", "rl-grpo-vanilla.jsonl"] {
        let text = std::fs::read_to_string(work.join("metrics").join(m)).unwrap();
        assert!(!text.is_empty());
        if m != "sft.jsonl" {
            assert!(text.lines().any(|l| l.contains("mean_entropy")));
        }
    }

    let out = riser(&work, &config, &["eval"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(work.join("summary.csv")).unwrap();
    let runs: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert!(runs.contains(&"sft") && runs.contains(&"riser") && runs.contains(&"grpo-vanilla"));
    assert!(runs.contains(&"riser-last"));
    assert!(summary.starts_with("run,subset,count,hr@5,hr@10,hr@20,ndcg@5"));

    let out = riser(&work, &config, &["eval", "--split", "unpopular"]);
    assert!(out.status.success());
    let summary = std::fs::read_to_string(work.join("summary.csv")).unwrap();
    assert!(summary.lines().skip(1).all(|l| l.contains(",unpopular,")));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[rl]\nstepz = 3\n").unwrap();
    let out = riser(&work, &bad, &["eval"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!work.join(".lock").exists());
}

#[test]
fn ablation_emits_one_row_per_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::from_toml(TINY).unwrap();
    cfg.paths.workdir = dir.path().to_path_buf();
    cfg.rl.steps = 2;
    experiment::cmd_gen_data(&cfg, false).unwrap();
    let rows = experiment::cmd_ablate(&cfg).unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.run.as_str()).collect();
    assert_eq!(names, ["sft", "+grpo", "+dedup", "+kl-cov", "+mask", "+simpo"]);
    let csv = std::fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn resumed_rl_run_matches_an_uninterrupted_one() {
    let cfg = ExperimentConfig::from_toml(TINY).unwrap();
    let gen: GenConfig = cfg.gen.clone();
    let catalog = world::build_catalog(&gen).unwrap();
    let trie = catalog.prefix_tree();
    let splits = world::generate_interactions(&gen, &catalog).unwrap();
    let d_rl = train::examples(&splits.d_rl, &catalog).unwrap();
    let d_val = train::examples(&splits.d_val, &catalog).unwrap();
    let sft = riser::policy::PolicyState::init(cfg.policy.dims(catalog.vocab_size()), 1);

    let full_rl = RlConfig { steps: 6, ..cfg.rl.clone() };
    let mut full_log = Vec::new();
    let full = train::train_rl(&sft, &d_rl, &d_val, &trie, &full_rl, &cfg.loss, 9, &mut full_log, None, false)
        .unwrap();

    let dir = tempfile::tempdir().unwrap();
    let paths = RlPaths::new(dir.path());
    let first = RlConfig { steps: 2, ..full_rl.clone() };
    let mut log = Vec::new();
    train::train_rl(&sft, &d_rl, &d_val, &trie, &first, &cfg.loss, 9, &mut log, Some(&paths), false).unwrap();
    let resumed = train::train_rl(&sft, &d_rl, &d_val, &trie, &full_rl, &cfg.loss, 9, &mut log, Some(&paths), true)
        .unwrap();
    assert_eq!(resumed.last, full.last);
    assert_eq!(log, full_log);
}
