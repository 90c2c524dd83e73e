//! Command-line front end for the segmentation toolkit.
//!
//! Every subcommand accepts `--config <file>` pointing at a flat
//! `key = value` text file; explicit flags override file keys, so a run can
//! be described entirely by a file, entirely by flags, or a mix.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use paresseg_core::data::{
    fold_split, list_cases, save_volume, synth_dataset, write_dataset, CaseRecord,
};
use paresseg_core::gradcheck::{standard_suite, SUITE_EPS, SUITE_TOL};
use paresseg_core::metrics::MetricsReport;
use paresseg_core::pipeline::kv::{parse_kv, phantom_spec_from_kv, train_config_for_dataset};
use paresseg_core::{ablation_matrix, checkpoint, evaluate_cases, infer_volume, train};
use paresseg_core::{Fusion, LossKind};
use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "paresseg", version, about = "Multi-phase CT liver tumor segmentation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a seeded synthetic dual-phase dataset
    Synth(SynthArgs),
    /// Train a network on a dataset and leave a checkpoint plus run records
    Train(TrainArgs),
    /// Segment one case with a trained checkpoint
    Infer(InferArgs),
    /// Score a checkpoint over a dataset, optionally restricted to one fold
    Eval(EvalArgs),
    /// Train and compare a (fusion x loss x seed) matrix on a held-out fold
    Ablate(AblateArgs),
    /// Verify reverse-mode gradients against central differences
    Gradcheck(GradcheckArgs),
    /// Cut a dataset into k reproducible folds
    Split(SplitArgs),
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Synth(a) => run_synth(a),
        Cmd::Train(a) => run_train(a),
        Cmd::Infer(a) => run_infer(a),
        Cmd::Eval(a) => run_eval(a),
        Cmd::Ablate(a) => run_ablate(a),
        Cmd::Gradcheck(a) => run_gradcheck(a),
        Cmd::Split(a) => run_split(a),
    }
}

// ---------------------------------------------------------------------------
// Config-file plumbing
// ---------------------------------------------------------------------------

/// Parsed config file, or an empty map when no file was named.
fn config_map(path: Option<&Path>) -> Result<BTreeMap<String, String>> {
    match path {
        None => Ok(BTreeMap::new()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading config file {}", p.display()))?;
            Ok(parse_kv(&text)?)
        }
    }
}

/// Overlay one flag onto the map; a present flag beats the file.
fn set(map: &mut BTreeMap<String, String>, key: &str, value: &Option<impl ToString>) {
    if let Some(v) = value {
        map.insert(key.to_string(), v.to_string());
    }
}

fn set_path(map: &mut BTreeMap<String, String>, key: &str, value: &Option<PathBuf>) {
    if let Some(p) = value {
        map.insert(key.to_string(), p.display().to_string());
    }
}

/// Remove a value that must have arrived by flag or config key.
fn need(map: &mut BTreeMap<String, String>, key: &str, flag: &str) -> Result<String> {
    map.remove(key)
        .ok_or_else(|| anyhow!("missing {flag} (config key {key:?} works too)"))
}

fn need_path(map: &mut BTreeMap<String, String>, key: &str, flag: &str) -> Result<PathBuf> {
    Ok(PathBuf::from(need(map, key, flag)?))
}

/// Remove and parse an optional typed value.
fn pop_parse<T: FromStr>(map: &mut BTreeMap<String, String>, key: &str) -> Result<Option<T>>
where
    T::Err: Display,
{
    match map.remove(key) {
        None => Ok(None),
        Some(v) => v
            .parse::<T>()
            .map(Some)
            .map_err(|e| anyhow!("key {key:?}: cannot parse {v:?} ({e})")),
    }
}

/// Every key must have been claimed by now; leftovers are typos.
fn ensure_consumed(map: &BTreeMap<String, String>) -> Result<()> {
    if let Some(key) = map.keys().next() {
        bail!("unknown key {key:?}");
    }
    Ok(())
}

/// Training-run knobs shared by `train` and `ablate`. Each maps onto the
/// config key of the same (underscored) name.
#[derive(Args)]
struct TrainKnobs {
    /// Fusion strategy: single, dmp, mpf, msf, or pa_msf
    #[arg(long)]
    fusion: Option<String>,
    /// Pixel loss: ce or be
    #[arg(long)]
    loss: Option<String>,
    /// Number of training epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Adam learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Patches per optimisation step
    #[arg(long)]
    batch_size: Option<usize>,
    /// Random patch draws per epoch (default: four per training slice)
    #[arg(long)]
    samples_per_epoch: Option<usize>,
    /// Architecture profile: tiny or paper
    #[arg(long)]
    profile: Option<String>,
    /// Input patch edge length (multiple of 32)
    #[arg(long)]
    patch_size: Option<usize>,
    /// Six comma-separated stage widths
    #[arg(long)]
    stage_channels: Option<String>,
    /// Identity skips across conv pairs
    #[arg(long)]
    residual_skips: Option<bool>,
    /// Keep the literal printed sign in the channel-gain exponent
    #[arg(long)]
    eq3_as_printed: Option<bool>,
    /// Under output-level fusion, train each phase branch on its own loss
    #[arg(long)]
    mpf_independent: Option<bool>,
}

impl TrainKnobs {
    fn overlay(&self, map: &mut BTreeMap<String, String>) {
        set(map, "fusion", &self.fusion);
        set(map, "loss", &self.loss);
        set(map, "epochs", &self.epochs);
        set(map, "lr", &self.lr);
        set(map, "batch_size", &self.batch_size);
        set(map, "samples_per_epoch", &self.samples_per_epoch);
        set(map, "profile", &self.profile);
        set(map, "patch_size", &self.patch_size);
        set(map, "stage_channels", &self.stage_channels);
        set(map, "residual_skips", &self.residual_skips);
        set(map, "eq3_as_printed", &self.eq3_as_printed);
        set(map, "mpf_independent", &self.mpf_independent);
    }
}

// ---------------------------------------------------------------------------
// Dataset helpers
// ---------------------------------------------------------------------------

/// Case ids under a dataset root, without loading any voxel data.
fn case_ids(root: &Path) -> Result<Vec<String>> {
    let ids: Vec<String> = list_cases(root)?
        .iter()
        .filter_map(|d| d.file_name().and_then(|n| n.to_str()))
        .filter_map(|n| n.strip_prefix("case_").map(str::to_string))
        .collect();
    if ids.is_empty() {
        bail!("no case_<id> directories under {}", root.display());
    }
    Ok(ids)
}

/// Load a dataset, optionally restricted to the given case ids.
fn load_selected(root: &Path, keep: Option<&[String]>) -> Result<Vec<CaseRecord>> {
    let mut cases = Vec::new();
    for dir in list_cases(root)? {
        if let Some(ids) = keep {
            let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("");
            let id = name.strip_prefix("case_").unwrap_or(name);
            if !ids.iter().any(|k| k == id) {
                continue;
            }
        }
        cases.push(CaseRecord::load(&dir)?);
    }
    if cases.is_empty() {
        bail!("no matching cases under {}", root.display());
    }
    Ok(cases)
}

/// Fixed-width per-case metric table with the aggregate row at the bottom.
fn report_text(r: &MetricsReport) -> String {
    fn opt(v: Option<f64>) -> String {
        v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
    }
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        "case", "dice", "voe", "rvd", "tpr", "tnr", "acc"
    ));
    for c in &r.cases {
        out.push_str(&format!(
            "{:<12} {:>8.4} {:>8.4} {:>8} {:>8} {:>8} {:>8}\n",
            c.case_id,
            c.dice,
            c.voe,
            opt(c.rvd),
            opt(c.tpr),
            opt(c.tnr),
            opt(c.acc)
        ));
    }
    out.push_str(&format!(
        "{:<12} {:>8.4} {:>8.4} {:>8} {:>8} {:>8} {:>8}\n",
        "mean",
        r.dice_per_case,
        r.mean_voe,
        opt(r.mean_rvd),
        opt(r.mean_tpr),
        opt(r.mean_tnr),
        opt(r.mean_acc)
    ));
    out.push_str(&format!("dice over pooled voxels: {:.4}\n", r.dice_global));
    if r.rvd_excluded > 0 {
        out.push_str(&format!(
            "volume-difference mean skips {} empty-reference case(s)\n",
            r.rvd_excluded
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

#[derive(Args)]
struct SynthArgs {
    /// Flat key = value file: phantom keys plus seed/out
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory the dataset is written into
    #[arg(long)]
    out: Option<PathBuf>,
    /// Generator seed (mandatory, flag or config key)
    #[arg(long)]
    seed: Option<u64>,
    /// Number of cases
    #[arg(long)]
    cases: Option<usize>,
    /// Volume extent as z,y,x
    #[arg(long)]
    dims: Option<String>,
}

fn run_synth(a: SynthArgs) -> Result<()> {
    let mut map = config_map(a.config.as_deref())?;
    set_path(&mut map, "out", &a.out);
    set(&mut map, "seed", &a.seed);
    set(&mut map, "cases", &a.cases);
    set(&mut map, "dims", &a.dims);

    let out = need_path(&mut map, "out", "--out")?;
    let seed: u64 = pop_parse(&mut map, "seed")?
        .ok_or_else(|| anyhow!("--seed is mandatory for synth (config key \"seed\" works too)"))?;
    let spec = phantom_spec_from_kv(&map)?;

    let cases = synth_dataset(&spec, seed)?;
    write_dataset(&cases, &out)?;
    let [z, y, x] = spec.dims;
    println!(
        "wrote {} cases of {z}x{y}x{x} voxels (seed {seed}) to {}",
        cases.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Args)]
struct TrainArgs {
    /// Flat key = value file describing the run
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root directory
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory for the checkpoint and run records
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training seed (mandatory, flag or config key)
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    knobs: TrainKnobs,
}

fn run_train(a: TrainArgs) -> Result<()> {
    let mut map = config_map(a.config.as_deref())?;
    set_path(&mut map, "data", &a.data);
    set_path(&mut map, "out", &a.out);
    set(&mut map, "seed", &a.seed);
    a.knobs.overlay(&mut map);

    let data = need_path(&mut map, "data", "--data")?;
    let out = need_path(&mut map, "out", "--out")?;
    if !map.contains_key("seed") {
        bail!("--seed is mandatory for train (config key \"seed\" works too)");
    }

    let cases = load_selected(&data, None)?;
    let cfg = train_config_for_dataset(&map, &cases)?;
    println!(
        "training {} ({} loss) on {} cases: {} epochs x {} steps",
        cfg.network.fusion.name(),
        cfg.loss_kind.name(),
        cases.len(),
        cfg.epochs,
        cfg.steps_per_epoch()
    );
    let started = Instant::now();
    let artifacts = train(&cases, &cfg, &out)?;

    fs::write(out.join("run.json"), serde_json::to_string_pretty(&artifacts)?)?;
    fs::write(out.join("report.json"), artifacts.report.to_json())?;
    fs::write(out.join("report.txt"), report_text(&artifacts.report))?;
    println!("finished in {:.1} s", started.elapsed().as_secs_f64());
    println!("checkpoint: {}", artifacts.checkpoint_path.display());
    if let Some(last) = artifacts.loss_trace.last() {
        println!("final epoch loss: {last:.6}");
    }
    println!(
        "training-set dice per case: {:.4}",
        artifacts.report.dice_per_case
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

#[derive(Args)]
struct InferArgs {
    /// Flat key = value file naming checkpoint/case/out
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trained checkpoint file
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Case directory (case_<id> with the four volume subdirectories)
    #[arg(long)]
    case: Option<PathBuf>,
    /// Directory the predicted mask volume is written into
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run_infer(a: InferArgs) -> Result<()> {
    let mut map = config_map(a.config.as_deref())?;
    set_path(&mut map, "checkpoint", &a.checkpoint);
    set_path(&mut map, "case", &a.case);
    set_path(&mut map, "out", &a.out);

    let ckpt = need_path(&mut map, "checkpoint", "--checkpoint")?;
    let case_dir = need_path(&mut map, "case", "--case")?;
    let out = need_path(&mut map, "out", "--out")?;
    ensure_consumed(&map)?;

    let model = checkpoint::load(&ckpt)?;
    let case = CaseRecord::load(&case_dir)?;
    let mask = infer_volume(&model, &case)?;
    let tumor = mask.as_mask()?.iter().filter(|&&v| v != 0).count();
    save_volume(&mask, &out)?;
    println!(
        "case {}: {tumor} tumor voxels of {}; mask written to {}",
        case.case_id,
        mask.numel(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Args)]
struct EvalArgs {
    /// Flat key = value file naming checkpoint/data/out
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trained checkpoint file
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset root directory
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory the report files are written into
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fold-partition file written by `split`
    #[arg(long)]
    split: Option<PathBuf>,
    /// Fold of the partition file to evaluate (default 0)
    #[arg(long)]
    fold: Option<usize>,
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let mut map = config_map(a.config.as_deref())?;
    set_path(&mut map, "checkpoint", &a.checkpoint);
    set_path(&mut map, "data", &a.data);
    set_path(&mut map, "out", &a.out);
    set_path(&mut map, "split", &a.split);
    set(&mut map, "fold", &a.fold);

    let ckpt = need_path(&mut map, "checkpoint", "--checkpoint")?;
    let data = need_path(&mut map, "data", "--data")?;
    let out = need_path(&mut map, "out", "--out")?;
    let split_file: Option<PathBuf> = map.remove("split").map(PathBuf::from);
    let fold: Option<usize> = pop_parse(&mut map, "fold")?;
    ensure_consumed(&map)?;

    let keep: Option<Vec<String>> = match (&split_file, fold) {
        (None, None) => None,
        (None, Some(_)) => bail!("--fold needs a partition file (--split)"),
        (Some(p), f) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading partition file {}", p.display()))?;
            let folds: Vec<Vec<String>> = serde_json::from_str(&text)
                .with_context(|| format!("parsing partition file {}", p.display()))?;
            let idx = f.unwrap_or(0);
            let ids = folds
                .get(idx)
                .ok_or_else(|| anyhow!("fold {idx} out of range (file has {})", folds.len()))?;
            Some(ids.clone())
        }
    };

    let model = checkpoint::load(&ckpt)?;
    let cases = load_selected(&data, keep.as_deref())?;
    let outcome = evaluate_cases(&model, &cases)?;

    fs::create_dir_all(&out)?;
    fs::write(out.join("report.json"), outcome.report.to_json())?;
    fs::write(out.join("eval.json"), serde_json::to_string_pretty(&outcome)?)?;
    let mut text = report_text(&outcome.report);
    if let Some(m) = outcome.marginal_tpr {
        text.push_str(&format!("marginal-slice sensitivity: {m:.4}\n"));
    }
    fs::write(out.join("report.txt"), &text)?;
    print!("{text}");
    println!("reports written to {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

#[derive(Args)]
struct AblateArgs {
    /// Flat key = value file describing the matrix and the base run
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root directory
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory the comparison table is written into
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated fusion strategies (default single,msf,pa_msf)
    #[arg(long)]
    strategies: Option<String>,
    /// Comma-separated loss kinds (default ce)
    #[arg(long)]
    losses: Option<String>,
    /// Comma-separated training seeds (default 0,1,2)
    #[arg(long)]
    seeds: Option<String>,
    /// Number of folds the dataset is cut into (default 5)
    #[arg(long)]
    folds: Option<usize>,
    /// Fold held out as the test set (default 0)
    #[arg(long)]
    test_fold: Option<usize>,
    /// Seed of the fold shuffle (default 0)
    #[arg(long)]
    split_seed: Option<u64>,
    #[command(flatten)]
    knobs: TrainKnobs,
}

fn run_ablate(a: AblateArgs) -> Result<()> {
    let mut map = config_map(a.config.as_deref())?;
    set_path(&mut map, "data", &a.data);
    set_path(&mut map, "out", &a.out);
    set(&mut map, "strategies", &a.strategies);
    set(&mut map, "losses", &a.losses);
    set(&mut map, "seeds", &a.seeds);
    set(&mut map, "folds", &a.folds);
    set(&mut map, "test_fold", &a.test_fold);
    set(&mut map, "split_seed", &a.split_seed);
    a.knobs.overlay(&mut map);

    let data = need_path(&mut map, "data", "--data")?;
    let out = need_path(&mut map, "out", "--out")?;
    let strategies_s = map
        .remove("strategies")
        .unwrap_or_else(|| "single,msf,pa_msf".into());
    let losses_s = map.remove("losses").unwrap_or_else(|| "ce".into());
    let seeds_s = map.remove("seeds").unwrap_or_else(|| "0,1,2".into());
    let folds: usize = pop_parse(&mut map, "folds")?.unwrap_or(5);
    let test_fold: usize = pop_parse(&mut map, "test_fold")?.unwrap_or(0);
    let split_seed: u64 = pop_parse(&mut map, "split_seed")?.unwrap_or(0);

    let strategies: Vec<Fusion> = strategies_s
        .split(',')
        .map(|s| Fusion::parse(s.trim()))
        .collect::<paresseg_core::Result<_>>()?;
    let losses: Vec<LossKind> = losses_s
        .split(',')
        .map(|s| LossKind::parse(s.trim()))
        .collect::<paresseg_core::Result<_>>()?;
    let seeds: Vec<u64> = seeds_s
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("parsing seeds {seeds_s:?}"))?;

    // The matrix overrides these per cell; the base config only needs
    // placeholders when the file does not pin them.
    map.entry("fusion".to_string()).or_insert_with(|| "single".into());
    map.entry("loss".to_string()).or_insert_with(|| "ce".into());
    map.entry("seed".to_string()).or_insert_with(|| "0".into());

    let cases = load_selected(&data, None)?;
    let ids: Vec<String> = cases.iter().map(|c| c.case_id.clone()).collect();
    let partition = fold_split(&ids, folds, split_seed)?;
    let test_ids = partition
        .get(test_fold)
        .ok_or_else(|| anyhow!("test fold {test_fold} out of range (0..{})", partition.len()))?;
    let (test_cases, train_cases): (Vec<CaseRecord>, Vec<CaseRecord>) = cases
        .into_iter()
        .partition(|c| test_ids.contains(&c.case_id));

    let base = train_config_for_dataset(&map, &train_cases)?;
    println!(
        "ablating {} x {} x {} seeds: {} runs on {} train / {} test cases",
        strategies_s,
        losses_s,
        seeds.len(),
        strategies.len() * losses.len() * seeds.len(),
        train_cases.len(),
        test_cases.len()
    );
    let started = Instant::now();
    let table = ablation_matrix(&train_cases, &test_cases, &strategies, &losses, &seeds, &base)?;

    fs::create_dir_all(&out)?;
    fs::write(out.join("table.txt"), table.to_table())?;
    fs::write(out.join("table.csv"), table.to_csv())?;
    fs::write(out.join("cells.json"), serde_json::to_string_pretty(&table)?)?;
    print!("{}", table.to_table());
    println!("finished in {:.1} s; table written to {}", started.elapsed().as_secs_f64(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

#[derive(Args)]
struct GradcheckArgs {
    /// Flat key = value file (key eps)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Central-difference step (default 1e-5)
    #[arg(long)]
    eps: Option<f64>,
}

fn run_gradcheck(a: GradcheckArgs) -> Result<()> {
    let mut map = config_map(a.config.as_deref())?;
    set(&mut map, "eps", &a.eps);
    let eps: f64 = pop_parse(&mut map, "eps")?.unwrap_or(SUITE_EPS);
    ensure_consumed(&map)?;

    let started = Instant::now();
    let entries = standard_suite(eps)?;
    let mut failures = 0usize;
    for e in &entries {
        let pass = e.report.passes(SUITE_TOL);
        failures += usize::from(!pass);
        println!(
            "{} {:<30} max rel err {:.3e} over {} derivatives",
            if pass { "pass" } else { "FAIL" },
            e.name,
            e.report.max_rel_err,
            e.report.checked
        );
    }
    println!(
        "{} checks in {:.1} s (eps {eps:.1e}, tolerance {SUITE_TOL:.1e})",
        entries.len(),
        started.elapsed().as_secs_f64()
    );
    if failures > 0 {
        eprintln!("{failures} check(s) failed");
        std::process::exit(1);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// split
// ---------------------------------------------------------------------------

#[derive(Args)]
struct SplitArgs {
    /// Flat key = value file naming data/out/k/seed
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root directory
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output partition file (JSON array of per-fold case-id arrays)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of folds (default 5)
    #[arg(long)]
    k: Option<usize>,
    /// Shuffle seed (default 0)
    #[arg(long)]
    seed: Option<u64>,
}

fn run_split(a: SplitArgs) -> Result<()> {
    let mut map = config_map(a.config.as_deref())?;
    set_path(&mut map, "data", &a.data);
    set_path(&mut map, "out", &a.out);
    set(&mut map, "k", &a.k);
    set(&mut map, "seed", &a.seed);

    let data = need_path(&mut map, "data", "--data")?;
    let out = need_path(&mut map, "out", "--out")?;
    let k: usize = pop_parse(&mut map, "k")?.unwrap_or(5);
    let seed: u64 = pop_parse(&mut map, "seed")?.unwrap_or(0);
    ensure_consumed(&map)?;

    let ids = case_ids(&data)?;
    let partition = fold_split(&ids, k, seed)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&out, serde_json::to_string_pretty(&partition)?)?;
    let sizes: Vec<String> = partition.iter().map(|f| f.len().to_string()).collect();
    println!(
        "split {} cases into {k} folds of {} (seed {seed}); partition written to {}",
        ids.len(),
        sizes.join("/"),
        out.display()
    );
    Ok(())
}
