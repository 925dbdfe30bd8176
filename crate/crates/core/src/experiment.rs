//! Driver commands behind the CLI: data generation, training, evaluation and the
//! ablation ladder.
//!
//! Workdir layout:
//!
//! ```text
//! data/catalog.txt           one item per line, content token ids
//! data/d_{sft,rl,val,test}.tsv
//! data/manifest.json         seed, config hash, file hashes
//! checkpoints/sft.ckpt
//! checkpoints/rl-<mode>/     rl_best.ckpt, rl_last.ckpt, rl_optim.ckpt, rl_progress.json
//! metrics/*.jsonl            one JSON record per logging event
//! summary.csv, ablation.csv
//! run.json                   manifest of the last command
//! ```

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::item_space::{ItemCatalog, PrefixTree};
use crate::metrics::{self, PopularitySplit, SummaryRow};
use crate::policy::PolicyState;
use crate::train::{self, Mode, RlPaths};
use crate::world::{self, DatasetSplits, Interaction};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Exclusive claim on a workdir, released on drop.
pub struct WorkdirLock {
    path: PathBuf,
}

impl WorkdirLock {
    pub fn acquire(workdir: &Path) -> Result<Self> {
        std::fs::create_dir_all(workdir)?;
        let path = workdir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Data(format!(
                "workdir {} is in use (remove {} if no run is active)",
                workdir.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for WorkdirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the effective config with the workdir left out, so that the same
/// experiment hashes identically wherever it runs.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let mut cfg = cfg.clone();
    cfg.paths.workdir = PathBuf::new();
    Ok(hex(&Sha256::digest(cfg.to_toml()?.as_bytes())))
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    seed: u64,
    code_version: &'a str,
    config_sha256: String,
    files: BTreeMap<String, String>,
}

fn write_manifest(path: &Path, command: &str, cfg: &ExperimentConfig, files: &[PathBuf]) -> Result<()> {
    let mut hashes = BTreeMap::new();
    for f in files {
        let name = f
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        hashes.insert(name, sha256_file(f)?);
    }
    let manifest = RunManifest {
        command,
        seed: cfg.gen.seed,
        code_version: CODE_VERSION,
        config_sha256: config_hash(cfg)?,
        files: hashes,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Data(format!("manifest: {e}")))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn data_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.workdir().join("data")
}

fn record_run(cfg: &ExperimentConfig, command: &str, files: &[PathBuf]) -> Result<()> {
    let workdir = cfg.workdir();
    std::fs::write(workdir.join("config.toml"), cfg.to_toml()?)?;
    write_manifest(&workdir.join("run.json"), command, cfg, files)
}

/// Paths of the generated dataset files.
pub fn data_files(cfg: &ExperimentConfig) -> Vec<PathBuf> {
    let dir = data_dir(cfg);
    let mut files = vec![dir.join("catalog.txt")];
    files.extend(
        ["d_sft", "d_rl", "d_val", "d_test"]
            .iter()
            .map(|n| dir.join(format!("{n}.tsv"))),
    );
    files
}

/// Generates the catalog and splits into `<workdir>/data`.
pub fn cmd_gen_data(cfg: &ExperimentConfig, force: bool) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let workdir = cfg.workdir();
    let non_empty = workdir
        .read_dir()
        .map(|mut d| d.next().is_some())
        .unwrap_or(false);
    if non_empty && !force {
        return Err(Error::Data(format!(
            "workdir {} is not empty; pass --force to overwrite",
            workdir.display()
        )));
    }
    let _lock = WorkdirLock::acquire(&workdir)?;
    let dir = data_dir(cfg);
    std::fs::create_dir_all(&dir)?;
    let catalog = world::build_catalog(&cfg.gen)?;
    let splits = world::generate_interactions(&cfg.gen, &catalog)?;
    catalog.save(&dir.join("catalog.txt"))?;
    splits.save(&dir)?;
    let files = data_files(cfg);
    write_manifest(&dir.join("manifest.json"), "gen-data", cfg, &files)?;
    record_run(cfg, "gen-data", &files)?;
    Ok(files)
}

/// Catalog and splits of a workdir, with the split invariants checked.
pub struct Dataset {
    pub catalog: ItemCatalog,
    pub trie: PrefixTree,
    pub splits: DatasetSplits,
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let dir = data_dir(cfg);
    if !dir.join("catalog.txt").exists() {
        return Err(Error::Data(format!(
            "no dataset in {}; run gen-data first",
            dir.display()
        )));
    }
    let catalog = ItemCatalog::load(&dir.join("catalog.txt"))?;
    let splits = DatasetSplits::load(&dir)?;
    splits.check_disjoint()?;
    for (name, split) in splits.named() {
        for i in split {
            if i.target >= catalog.len() || i.history.iter().any(|&h| h >= catalog.len()) {
                return Err(Error::Data(format!("{name}: item id outside the catalog")));
            }
        }
    }
    let trie = catalog.prefix_tree();
    Ok(Dataset {
        catalog,
        trie,
        splits,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Sft,
    Rl,
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sft" => Ok(Stage::Sft),
            "rl" => Ok(Stage::Rl),
            other => Err(Error::Config(format!("unknown stage {other:?}"))),
        }
    }
}

pub fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Riser => "riser",
        Mode::GrpoVanilla => "grpo-vanilla",
    }
}

pub fn sft_checkpoint(cfg: &ExperimentConfig) -> PathBuf {
    cfg.checkpoint_dir().join("sft.ckpt")
}

pub fn rl_dir(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.checkpoint_dir().join(format!("rl-{name}"))
}

fn open_metrics(path: &Path, append: bool) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)?;
    Ok(BufWriter::new(file))
}

fn load_sft(cfg: &ExperimentConfig, data: &Dataset) -> Result<PolicyState> {
    let path = sft_checkpoint(cfg);
    if !path.exists() {
        return Err(Error::Data(format!(
            "missing SFT checkpoint {}; run `train --stage sft` first",
            path.display()
        )));
    }
    PolicyState::load(&path, Some(cfg.policy.dims(data.catalog.vocab_size())))
}

pub fn run_sft(cfg: &ExperimentConfig, data: &Dataset) -> Result<train::SftOutcome> {
    let d_sft = train::examples(&data.splits.d_sft, &data.catalog)?;
    let d_val = train::examples(&data.splits.d_val, &data.catalog)?;
    let init = PolicyState::init(cfg.policy.dims(data.catalog.vocab_size()), cfg.gen.seed);
    let mut out = open_metrics(&cfg.metrics_dir().join("sft.jsonl"), false)?;
    let outcome = train::train_sft(&init, &d_sft, &d_val, &cfg.sft, cfg.gen.seed, &mut out)?;
    out.flush()?;
    std::fs::create_dir_all(cfg.checkpoint_dir())?;
    outcome.best.save(&sft_checkpoint(cfg))?;
    Ok(outcome)
}

/// RL from the saved SFT policy; `name` selects the checkpoint and metrics files.
pub fn run_rl(
    cfg: &ExperimentConfig,
    data: &Dataset,
    sft: &PolicyState,
    name: &str,
    resume: bool,
) -> Result<train::RlOutcome> {
    let d_rl = train::examples(&data.splits.d_rl, &data.catalog)?;
    let d_val = train::examples(&data.splits.d_val, &data.catalog)?;
    let dir = rl_dir(cfg, name);
    std::fs::create_dir_all(&dir)?;
    let paths = RlPaths::new(&dir);
    let resume = resume && paths.progress().exists();
    let mut out = open_metrics(&cfg.metrics_dir().join(format!("rl-{name}.jsonl")), resume)?;
    let outcome = train::train_rl(
        sft,
        &d_rl,
        &d_val,
        &data.trie,
        &cfg.rl,
        &cfg.loss,
        cfg.gen.seed,
        &mut out,
        Some(&paths),
        resume,
    )?;
    out.flush()?;
    outcome.best.save(&paths.best())?;
    Ok(outcome)
}

pub fn cmd_train(cfg: &ExperimentConfig, stage: Stage, resume: bool) -> Result<()> {
    cfg.validate()?;
    let _lock = WorkdirLock::acquire(&cfg.workdir())?;
    let data = load_dataset(cfg)?;
    match stage {
        Stage::Sft => {
            run_sft(cfg, &data)?;
            record_run(cfg, "train --stage sft", &[sft_checkpoint(cfg)])
        }
        Stage::Rl => {
            let sft = load_sft(cfg, &data)?;
            let name = mode_name(cfg.rl.mode);
            run_rl(cfg, &data, &sft, name, resume)?;
            record_run(
                cfg,
                &format!("train --stage rl --mode {name}"),
                &[RlPaths::new(&rl_dir(cfg, name)).best()],
            )
        }
    }
}

/// Which test interactions to score.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subset {
    All,
    Popular,
    Unpopular,
}

impl std::str::FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Subset::All),
            "popular" => Ok(Subset::Popular),
            "unpopular" => Ok(Subset::Unpopular),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

pub fn popularity(data: &Dataset) -> PopularitySplit {
    metrics::popularity_split(
        data.catalog.len(),
        data.splits.d_sft.iter().chain(&data.splits.d_rl),
    )
}

/// The test interactions to evaluate, honoring `max_test` and `subset`.
pub fn test_set(cfg: &ExperimentConfig, data: &Dataset, subset: Subset) -> Vec<Interaction> {
    let split = popularity(data);
    let mut test: Vec<Interaction> = data
        .splits
        .d_test
        .iter()
        .filter(|i| match subset {
            Subset::All => true,
            Subset::Popular => split.is_popular(i.target),
            Subset::Unpopular => !split.is_popular(i.target),
        })
        .cloned()
        .collect();
    if cfg.eval.max_test > 0 {
        test.truncate(cfg.eval.max_test);
    }
    test
}

pub fn evaluate_policy(
    cfg: &ExperimentConfig,
    data: &Dataset,
    policy: &PolicyState,
    run: &str,
    subset: Subset,
) -> Result<Vec<SummaryRow>> {
    let split = popularity(data);
    let test = test_set(cfg, data, subset);
    let report = metrics::evaluate(
        policy,
        &data.catalog,
        &data.trie,
        &test,
        cfg.decode.beam_width,
        &cfg.eval.cutoffs,
        Some(&split),
    )?;
    let mut rows = metrics::summary_rows(run, &report);
    if subset != Subset::All {
        // Only the requested slice is meaningful.
        rows.truncate(1);
        rows[0].subset = format!("{subset:?}").to_lowercase();
    }
    Ok(rows)
}

fn write_rows(path: &Path, rows: &[SummaryRow], cutoffs: &[usize]) -> Result<()> {
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    metrics::write_summary(&mut out, rows, cutoffs)?;
    out.flush()?;
    Ok(())
}

/// Evaluates `checkpoint`, or else every stage checkpoint found in the workdir
/// (best-validation and last for each RL mode), and writes `summary.csv`.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>, subset: Subset) -> Result<Vec<SummaryRow>> {
    cfg.validate()?;
    let _lock = WorkdirLock::acquire(&cfg.workdir())?;
    let data = load_dataset(cfg)?;
    let dims = Some(cfg.policy.dims(data.catalog.vocab_size()));
    let mut targets: Vec<(String, PathBuf)> = Vec::new();
    match checkpoint {
        Some(p) => targets.push((
            p.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "checkpoint".into()),
            p.to_path_buf(),
        )),
        None => {
            targets.push(("sft".into(), sft_checkpoint(cfg)));
            for mode in [Mode::Riser, Mode::GrpoVanilla] {
                let name = mode_name(mode);
                let paths = RlPaths::new(&rl_dir(cfg, name));
                if paths.best().exists() {
                    targets.push((name.into(), paths.best()));
                }
                if paths.policy().exists() {
                    targets.push((format!("{name}-last"), paths.policy()));
                }
            }
        }
    }
    let mut rows = Vec::new();
    for (name, path) in &targets {
        let policy = PolicyState::load(path, dims)?;
        rows.extend(evaluate_policy(cfg, &data, &policy, name, subset)?);
    }
    let summary = cfg.workdir().join("summary.csv");
    write_rows(&summary, &rows, &cfg.eval.cutoffs)?;
    record_run(cfg, "eval", &[summary])?;
    Ok(rows)
}

/// The incremental component ladder: each stage adds one component on top of
/// plain GRPO on successful groups.
pub fn ablation_stages(base: &ExperimentConfig) -> Vec<(&'static str, ExperimentConfig)> {
    let mut cfg = base.clone();
    cfg.rl.mode = Mode::Riser;
    cfg.loss.w = 0.0;
    cfg.loss.beta_kl = 0.0;
    cfg.loss.d = 1.0;
    cfg.rl.m = cfg.rl.n;
    let mut out = vec![("grpo", cfg.clone())];
    cfg.rl.m = base.rl.m;
    out.push(("dedup", cfg.clone()));
    cfg.loss.beta_kl = base.loss.beta_kl;
    out.push(("kl-cov", cfg.clone()));
    cfg.loss.d = base.loss.d;
    out.push(("mask", cfg.clone()));
    cfg.loss.w = base.loss.w;
    out.push(("simpo", cfg));
    out
}

/// SFT (reused when present) then one RL run per ladder stage. Each stage's
/// final policy is evaluated on the test split; writes `ablation.csv`.
pub fn cmd_ablate(cfg: &ExperimentConfig) -> Result<Vec<SummaryRow>> {
    cfg.validate()?;
    let _lock = WorkdirLock::acquire(&cfg.workdir())?;
    let data = load_dataset(cfg)?;
    let sft = if sft_checkpoint(cfg).exists() {
        load_sft(cfg, &data)?
    } else {
        run_sft(cfg, &data)?.best
    };
    let mut rows = evaluate_policy(cfg, &data, &sft, "sft", Subset::All)?;
    for (name, stage_cfg) in ablation_stages(cfg) {
        let outcome = run_rl(&stage_cfg, &data, &sft, &format!("ablate-{name}"), false)?;
        rows.extend(evaluate_policy(
            &stage_cfg,
            &data,
            &outcome.last,
            &format!("+{name}"),
            Subset::All,
        )?);
    }
    let rows: Vec<SummaryRow> = rows.into_iter().filter(|r| r.subset == "all").collect();
    let path = cfg.workdir().join("ablation.csv");
    write_rows(&path, &rows, &cfg.eval.cutoffs)?;
    record_run(cfg, "ablate", &[path])?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dir: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.paths.workdir = dir.to_path_buf();
        cfg.gen.num_users = 30;
        cfg.gen.num_items = 24;
        cfg.gen.tokens_per_level = vec![4, 3, 3];
        cfg.gen.num_interactions = 400;
        cfg
    }

    #[test]
    fn gen_data_is_reproducible_and_guarded() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg_a = small(a.path());
        let cfg_b = small(b.path());
        let files_a = cmd_gen_data(&cfg_a, false).unwrap();
        let files_b = cmd_gen_data(&cfg_b, false).unwrap();
        assert_eq!(files_a.len(), 5);
        for (x, y) in files_a.iter().zip(&files_b) {
            assert_eq!(sha256_file(x).unwrap(), sha256_file(y).unwrap());
        }
        let manifest = |c: &ExperimentConfig| std::fs::read(data_dir(c).join("manifest.json")).unwrap();
        assert_eq!(manifest(&cfg_a), manifest(&cfg_b));
        assert!(data_dir(&cfg_a).join("manifest.json").exists());
        assert!(cmd_gen_data(&cfg_a, false).is_err());

        let mut reseeded = cfg_a.clone();
        reseeded.gen.seed = 1234;
        cmd_gen_data(&reseeded, true).unwrap();
        let changed = files_a
            .iter()
            .zip(&files_b)
            .any(|(x, y)| sha256_file(x).unwrap() != sha256_file(y).unwrap());
        assert!(changed);
        assert!(!a.path().join(".lock").exists());
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let first = WorkdirLock::acquire(dir.path()).unwrap();
        assert!(WorkdirLock::acquire(dir.path()).is_err());
        drop(first);
        WorkdirLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn rl_without_sft_checkpoint_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        cmd_gen_data(&cfg, false).unwrap();
        let err = cmd_train(&cfg, Stage::Rl, false).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn ladder_adds_one_component_per_stage() {
        let base = ExperimentConfig::default();
        let stages = ablation_stages(&base);
        let names: Vec<&str> = stages.iter().map(|s| s.0).collect();
        assert_eq!(names, ["grpo", "dedup", "kl-cov", "mask", "simpo"]);
        let first = &stages[0].1;
        assert_eq!((first.loss.w, first.loss.beta_kl, first.loss.d), (0.0, 0.0, 1.0));
        assert_eq!(first.rl.m, first.rl.n);
        assert_eq!(stages[4].1.loss, base.loss);
        assert_eq!(stages[4].1.rl, base.rl);
    }
}
