//! `adev` command line: argument parsing, config resolution and report writing.
//!
//! Every command resolves its config as defaults < `--config` file < flags,
//! validates it, runs, and writes `<command>.json` (plus datasets or
//! checkpoints) under `--out`. Wall-clock data only goes in `meta`.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::checkpoint::write_atomic;
use crate::data::{eval_metrics, ingest_csv, read_dataset_csv, write_dataset_csv, ProcessKind, ProcessSpec};
use crate::error::{arg_err, AdevError, Result};
use crate::generator::{evaluate_generator, train_hrpcf_gan, GanConfig, GeneratorModel};
use crate::path::{develop_all, epcfd, pcf, Dataset};
use crate::seed::derive_seed;
use crate::stats::{fit_test_statistic, permutation_test, power_study, PowerConfig, StatConfig, StatisticKind};
use crate::train::{train_discriminator, train_rank1, AscentConfig, DiscConfig};
use crate::unitary::{sample_map_ensemble, unitarity_defect, CMat};
use crate::nn::OptimizerKind;
use crate::checkpoint::Checkpoint;

#[derive(Parser)]
#[command(name = "adev", version, about = "Path developments, PCFD/HRPCFD, permutation tests and a toy HRPCF-GAN")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (falls back to ADEV_THREADS).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Rank-1 developments and PCFs of a dataset under random maps.
    Develop(DevelopArgs),
    /// EPCFD between two datasets, optionally after training the maps.
    Pcfd(PcfdArgs),
    /// EHRPCFD between two datasets with a fitted discriminator.
    Hrpcfd(DiscArgs),
    /// Train the HRPCFD discriminator and save it.
    TrainDisc(DiscArgs),
    /// Permutation two-sample test.
    PermTest(PermArgs),
    /// Monte Carlo power / type-I study on simulated processes.
    PowerStudy(PowerArgs),
    /// Train the conditional generator against HRPCFD.
    TrainGan(GanArgs),
    /// Simulate a dataset to CSV.
    GenData(GenArgs),
    /// Evaluation metrics of generated against real data.
    Eval(EvalArgs),
}

macro_rules! overrides {
    ($($path:literal => $val:expr),* $(,)?) => {{
        let mut v: Vec<(&'static str, Value)> = Vec::new();
        $(if let Some(x) = &$val {
            v.push(($path, serde_json::to_value(x).expect("flag value serializes")));
        })*
        v
    }};
}

#[derive(Args)]
struct DevelopArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Lie degree.
    #[arg(long)]
    n: Option<usize>,
    /// Number of maps.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    init_std: Option<f64>,
    /// Also report every sample's development.
    #[arg(long)]
    per_sample: Option<bool>,
}

#[derive(Args)]
struct PcfdArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    x: Option<PathBuf>,
    #[arg(long)]
    y: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    init_std: Option<f64>,
    /// Gradient ascent iterations on the maps (0 keeps them random).
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
}

#[derive(Args)]
struct DiscArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    x: Option<PathBuf>,
    #[arg(long)]
    y: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    k1: Option<usize>,
    #[arg(long)]
    k2: Option<usize>,
    #[arg(long)]
    iter1: Option<usize>,
    #[arg(long)]
    iter3: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    reg_iters: Option<usize>,
}

#[derive(Args)]
struct PermArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    x: Option<PathBuf>,
    #[arg(long)]
    y: Option<PathBuf>,
    /// hrpcfd or pcfd.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    k1: Option<usize>,
    #[arg(long)]
    k2: Option<usize>,
    #[arg(long)]
    iter1: Option<usize>,
    #[arg(long)]
    iter3: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    perms: Option<usize>,
    /// Leading fraction of each sample used to fit the statistic.
    #[arg(long)]
    train_frac: Option<f64>,
}

#[derive(Args)]
struct PowerArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    a_kind: Option<String>,
    #[arg(long)]
    a_hurst: Option<f64>,
    #[arg(long)]
    b_kind: Option<String>,
    #[arg(long)]
    b_hurst: Option<f64>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long = "T")]
    t: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    perms: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    k1: Option<usize>,
    #[arg(long)]
    k2: Option<usize>,
    #[arg(long)]
    iter1: Option<usize>,
    #[arg(long)]
    iter3: Option<usize>,
}

#[derive(Args)]
struct GanArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Cut a long series into windows of this length.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    iters_a: Option<usize>,
    #[arg(long)]
    iters_c: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr_g: Option<f64>,
    #[arg(long)]
    lr_d: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    k1: Option<usize>,
    #[arg(long)]
    k2: Option<usize>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    common: Common,
    /// bm, fbm, ar1 or aldous.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    hurst: Option<f64>,
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Index of the Aldous family member.
    #[arg(long)]
    member: Option<u32>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long = "T")]
    t: Option<usize>,
    /// Number of samples.
    #[arg(long)]
    n: Option<usize>,
    /// unit_interval or integer.
    #[arg(long)]
    grid: Option<String>,
    /// hosking or cholesky.
    #[arg(long)]
    method: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    real: Option<PathBuf>,
    #[arg(long)]
    fake: Option<PathBuf>,
    /// Generator checkpoint; conditional draws are made on `real`.
    #[arg(long)]
    generator: Option<PathBuf>,
    #[arg(long)]
    draws: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
struct DevelopConfig {
    input: Option<PathBuf>,
    n: usize,
    k: usize,
    init_std: f64,
    time_augment: bool,
    per_sample: bool,
    seed: u64,
}

impl Default for DevelopConfig {
    fn default() -> Self {
        DevelopConfig { input: None, n: 3, k: 1, init_std: 0.2, time_augment: true, per_sample: false, seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
struct PcfdConfig {
    x: Option<PathBuf>,
    y: Option<PathBuf>,
    n: usize,
    k: usize,
    init_std: f64,
    iterations: usize,
    lr: f64,
    batch: usize,
    optimizer: OptimizerKind,
    time_augment: bool,
    seed: u64,
}

impl Default for PcfdConfig {
    fn default() -> Self {
        PcfdConfig {
            x: None,
            y: None,
            n: 3,
            k: 1,
            init_std: 0.2,
            iterations: 0,
            lr: 0.02,
            batch: 256,
            optimizer: OptimizerKind::adam(),
            time_augment: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct DiscRunConfig {
    x: Option<PathBuf>,
    y: Option<PathBuf>,
    disc: DiscConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
struct PermConfig {
    x: Option<PathBuf>,
    y: Option<PathBuf>,
    train_frac: f64,
    alpha: f64,
    perms: usize,
    /// `stat.disc.seed` is derived from `seed`.
    stat: StatConfig,
    seed: u64,
}

impl Default for PermConfig {
    fn default() -> Self {
        PermConfig { x: None, y: None, train_frac: 0.5, alpha: 0.05, perms: 200, stat: StatConfig::default(), seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
struct PowerRunConfig {
    a: ProcessSpec,
    b: ProcessSpec,
    power: PowerConfig,
}

impl Default for PowerRunConfig {
    fn default() -> Self {
        PowerRunConfig {
            a: ProcessSpec::new(ProcessKind::Bm, 3, 10),
            b: ProcessSpec::new(ProcessKind::Fbm { hurst: 0.4 }, 3, 10),
            power: PowerConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
struct GanRunConfig {
    data: Option<PathBuf>,
    window: Option<usize>,
    stride: usize,
    /// Trailing fraction of samples held out for evaluation.
    holdout_frac: f64,
    eval_draws: usize,
    gan: GanConfig,
}

impl Default for GanRunConfig {
    fn default() -> Self {
        GanRunConfig { data: None, window: None, stride: 1, holdout_frac: 0.2, eval_draws: 20, gan: GanConfig::default() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
struct GenConfig {
    process: ProcessSpec,
    samples: usize,
    seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { process: ProcessSpec::new(ProcessKind::Bm, 1, 10), samples: 1000, seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
struct EvalConfig {
    real: Option<PathBuf>,
    fake: Option<PathBuf>,
    generator: Option<PathBuf>,
    draws: usize,
    seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { real: None, fake: None, generator: None, draws: 20, seed: 0 }
    }
}

/// Runs one command line (`argv[0]` is the program name) and returns the exit status.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match run(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Develop(a) => cmd_develop(a),
        Cmd::Pcfd(a) => cmd_pcfd(a),
        Cmd::Hrpcfd(a) => cmd_disc(a, false),
        Cmd::TrainDisc(a) => cmd_disc(a, true),
        Cmd::PermTest(a) => cmd_perm(a),
        Cmd::PowerStudy(a) => cmd_power(a),
        Cmd::TrainGan(a) => cmd_gan(a),
        Cmd::GenData(a) => cmd_gen(a),
        Cmd::Eval(a) => cmd_eval(a),
    }
}

fn set_threads(common: &Common) -> Result<usize> {
    let n = match common.threads {
        Some(n) => Some(n),
        None => match std::env::var("ADEV_THREADS") {
            Ok(s) => Some(s.trim().parse().map_err(|_| AdevError::Argument(format!("ADEV_THREADS={s:?} is not a count")))?),
            Err(_) => None,
        },
    };
    if n == Some(0) {
        return arg_err("thread count must be positive");
    }
    if let Some(n) = n {
        // only the first call in a process takes effect
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(root: &mut Value, path: &str, v: Value) {
    let mut cur = root;
    for key in path.split('.') {
        if !cur.is_object() {
            *cur = Value::Object(Map::new());
        }
        cur = cur.as_object_mut().expect("object").entry(key).or_insert(Value::Null);
    }
    *cur = v;
}

/// Defaults, then the config file, then flag overrides.
fn resolve<C: Default + Serialize + DeserializeOwned>(common: &Common, overrides: Vec<(&str, Value)>) -> Result<C> {
    let mut v = serde_json::to_value(C::default())?;
    if let Some(p) = &common.config {
        let text = std::fs::read_to_string(p)?;
        let file: Value = serde_json::from_str(&text).map_err(|e| AdevError::Argument(format!("config {}: {e}", p.display())))?;
        if !file.is_object() {
            return arg_err("config file must hold a JSON object");
        }
        merge(&mut v, file);
    }
    for (path, val) in overrides {
        set_path(&mut v, path, val);
    }
    serde_json::from_value(v).map_err(|e| AdevError::Argument(format!("config: {e}")))
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| AdevError::Argument(format!("--{flag} is required")))
}

fn load(p: &Option<PathBuf>, flag: &str) -> Result<Dataset> {
    read_dataset_csv(need(p, flag)?)
}

struct Run {
    started: SystemTime,
    clock: Instant,
    threads: usize,
}

impl Run {
    fn start(common: &Common) -> Result<Self> {
        Ok(Run { started: SystemTime::now(), clock: Instant::now(), threads: set_threads(common)? })
    }

    fn meta(&self) -> Value {
        let unix = |t: SystemTime| t.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let host = std::env::var("HOSTNAME")
            .ok()
            .or_else(|| std::fs::read_to_string("/etc/hostname").ok().map(|s| s.trim().to_string()))
            .unwrap_or_default();
        json!({
            "started_unix": unix(self.started),
            "finished_unix": unix(SystemTime::now()),
            "elapsed_s": self.clock.elapsed().as_secs_f64(),
            "host": host,
            "threads": self.threads,
            "version": env!("CARGO_PKG_VERSION"),
        })
    }

    fn report<C: Serialize>(&self, out: &Path, command: &str, seed: u64, config: &C, results: Value) -> Result<PathBuf> {
        self.write(&out.join(format!("{command}.json")), command, seed, config, results)
    }

    fn write<C: Serialize>(&self, path: &Path, command: &str, seed: u64, config: &C, results: Value) -> Result<PathBuf> {
        let doc = json!({
            "command": command,
            "seed": seed,
            "config": serde_json::to_value(config)?,
            "results": results,
            "meta": self.meta(),
        });
        let mut bytes = serde_json::to_vec_pretty(&doc)?;
        bytes.push(b'\n');
        write_atomic(path, &bytes)?;
        Ok(path.to_path_buf())
    }
}

fn mat_json(m: &CMat) -> Value {
    Value::Array((0..m.nrows()).map(|i| Value::Array((0..m.ncols()).map(|j| json!([m[(i, j)].re, m[(i, j)].im])).collect())).collect())
}

fn parse_kind(s: &str) -> Result<StatisticKind> {
    match s {
        "hrpcfd" => Ok(StatisticKind::Hrpcfd),
        "pcfd" => Ok(StatisticKind::Pcfd),
        _ => arg_err(format!("unknown statistic kind {s:?} (hrpcfd|pcfd)")),
    }
}

fn cmd_develop(a: DevelopArgs) -> Result<()> {
    let cfg: DevelopConfig = resolve(
        &a.common,
        overrides!("input" => a.input, "n" => a.n, "k" => a.k, "init_std" => a.init_std, "per_sample" => a.per_sample, "seed" => a.common.seed),
    )?;
    if cfg.n == 0 || cfg.k == 0 || !(cfg.init_std >= 0.0) {
        return arg_err("n and k must be positive, init_std non-negative");
    }
    let data = load(&cfg.input, "input")?;
    let run = Run::start(&a.common)?;
    let data = if cfg.time_augment { data.time_augment() } else { data };
    let ens = sample_map_ensemble(data.dim(), cfg.n, cfg.k, cfg.init_std, cfg.seed)?;
    let mut maps = Vec::new();
    for m in ens.maps() {
        let devs = develop_all(m, &data)?;
        let defect = devs.iter().map(unitarity_defect).fold(0.0, f64::max);
        let mut entry = json!({ "pcf": mat_json(&pcf(m, &data)?), "max_unitarity_defect": defect });
        if cfg.per_sample {
            entry["developments"] = Value::Array(devs.iter().map(mat_json).collect());
        }
        maps.push(entry);
    }
    let results = json!({ "samples": data.len(), "path_len": data.path_len(), "input_dim": data.dim(), "maps": maps });
    run.report(&a.common.out, "develop", cfg.seed, &cfg, results)?;
    Ok(())
}

fn cmd_pcfd(a: PcfdArgs) -> Result<()> {
    let cfg: PcfdConfig = resolve(
        &a.common,
        overrides!(
            "x" => a.x, "y" => a.y, "n" => a.n, "k" => a.k, "init_std" => a.init_std,
            "iterations" => a.iterations, "lr" => a.lr, "batch" => a.batch, "seed" => a.common.seed,
        ),
    )?;
    if cfg.n == 0 || cfg.k == 0 || cfg.batch == 0 || !(cfg.lr > 0.0) || !(cfg.init_std >= 0.0) {
        return arg_err("n, k, batch and lr must be positive, init_std non-negative");
    }
    let (x, y) = (load(&cfg.x, "x")?, load(&cfg.y, "y")?);
    let run = Run::start(&a.common)?;
    let (x, y) = if cfg.time_augment { (x.time_augment(), y.time_augment()) } else { (x, y) };
    let mut ens = sample_map_ensemble(x.dim(), cfg.n, cfg.k, cfg.init_std, derive_seed(cfg.seed, 0))?;
    let before = epcfd(&ens, &x, &y)?;
    let curve = if cfg.iterations > 0 {
        let asc = AscentConfig { lr: cfg.lr, iterations: cfg.iterations, optimizer: cfg.optimizer, backtracking: false, max_halvings: 0 };
        train_rank1(&x, &y, &mut ens, &asc, cfg.batch, derive_seed(cfg.seed, 1))?
    } else {
        Vec::new()
    };
    let results = json!({ "epcfd_initial": before, "epcfd": epcfd(&ens, &x, &y)?, "curve": curve });
    run.report(&a.common.out, "pcfd", cfg.seed, &cfg, results)?;
    Ok(())
}

fn disc_overrides(a: &DiscArgs) -> Vec<(&'static str, Value)> {
    overrides!(
        "x" => a.x, "y" => a.y, "disc.n" => a.n, "disc.m" => a.m, "disc.k1" => a.k1, "disc.k2" => a.k2,
        "disc.iter1" => a.iter1, "disc.iter3" => a.iter3, "disc.batch" => a.batch,
        "disc.regression.iterations" => a.reg_iters, "disc.seed" => a.common.seed,
    )
}

fn cmd_disc(a: DiscArgs, save: bool) -> Result<()> {
    let cfg: DiscRunConfig = resolve(&a.common, disc_overrides(&a))?;
    cfg.disc.validate()?;
    let (x, y) = (load(&cfg.x, "x")?, load(&cfg.y, "y")?);
    let run = Run::start(&a.common)?;
    let disc = train_discriminator(&x, &y, &cfg.disc)?;
    let stat = disc.statistic(&x, &y)?;
    let prepared = (disc.prepare(&x), disc.prepare(&y));
    let results = json!({
        "ehrpcfd": stat,
        "epcfd": epcfd(&disc.m_ens, &prepared.0, &prepared.1)?,
        "training": serde_json::to_value(&disc.report)?,
    });
    let command = if save { "train-disc" } else { "hrpcfd" };
    if save {
        disc.to_checkpoint().save(&a.common.out.join("discriminator.adev"))?;
    }
    run.report(&a.common.out, command, cfg.disc.seed, &cfg, results)?;
    Ok(())
}

fn split_front(data: &Dataset, frac: f64) -> Result<(Dataset, Dataset)> {
    let k = (data.len() as f64 * frac).floor() as usize;
    if k == 0 || k == data.len() {
        return arg_err(format!("train_frac {frac} leaves an empty split of {} samples", data.len()));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    Ok((data.subset(&idx[..k])?, data.subset(&idx[k..])?))
}

fn cmd_perm(a: PermArgs) -> Result<()> {
    let kind = a.kind.as_deref().map(parse_kind).transpose()?;
    let cfg: PermConfig = resolve(
        &a.common,
        overrides!(
            "x" => a.x, "y" => a.y, "stat.kind" => kind, "stat.disc.n" => a.n, "stat.disc.m" => a.m,
            "stat.disc.k1" => a.k1, "stat.disc.k2" => a.k2, "stat.disc.iter1" => a.iter1, "stat.disc.iter3" => a.iter3,
            "alpha" => a.alpha, "perms" => a.perms, "train_frac" => a.train_frac, "seed" => a.common.seed,
        ),
    )?;
    cfg.stat.disc.validate()?;
    if !(cfg.train_frac > 0.0 && cfg.train_frac < 1.0) || !(cfg.alpha > 0.0 && cfg.alpha < 1.0) || cfg.perms < 20 {
        return arg_err("need 0 < train_frac < 1, 0 < alpha < 1 and perms >= 20");
    }
    let (x, y) = (load(&cfg.x, "x")?, load(&cfg.y, "y")?);
    let run = Run::start(&a.common)?;
    let (x_fit, x_test) = split_front(&x, cfg.train_frac)?;
    let (y_fit, y_test) = split_front(&y, cfg.train_frac)?;
    let mut stat_cfg = cfg.stat.clone();
    stat_cfg.disc.seed = derive_seed(cfg.seed, 1);
    let stat = fit_test_statistic(&x_fit, &y_fit, &stat_cfg)?;
    let report = permutation_test(&stat, &x_test, &y_test, cfg.perms, cfg.alpha, derive_seed(cfg.seed, 2))?;
    print!("{}", report.summary());
    run.report(&a.common.out, "perm-test", cfg.seed, &cfg, serde_json::to_value(&report)?)?;
    Ok(())
}

fn cmd_power(a: PowerArgs) -> Result<()> {
    let kind = a.kind.as_deref().map(parse_kind).transpose()?;
    let ov = overrides!(
        "a.kind" => a.a_kind, "b.kind" => a.b_kind, "a.hurst" => a.a_hurst, "b.hurst" => a.b_hurst, "a.d" => a.d, "b.d" => a.d, "a.T" => a.t, "b.T" => a.t,
        "power.n_runs" => a.runs, "power.perms" => a.perms, "power.alpha" => a.alpha,
        "power.n_train" => a.n_train, "power.n_test" => a.n_test, "power.stat.kind" => kind,
        "power.stat.disc.n" => a.n, "power.stat.disc.m" => a.m, "power.stat.disc.k1" => a.k1, "power.stat.disc.k2" => a.k2,
        "power.stat.disc.iter1" => a.iter1, "power.stat.disc.iter3" => a.iter3, "power.seed" => a.common.seed,
    );
    let cfg: PowerRunConfig = resolve(&a.common, ov)?;
    cfg.a.validate()?;
    cfg.b.validate()?;
    cfg.power.stat.disc.validate()?;
    let run = Run::start(&a.common)?;
    let report = power_study(&cfg.a, &cfg.b, &cfg.power)?;
    print!("{}", report.summary());
    run.report(&a.common.out, "power-study", cfg.power.seed, &cfg, serde_json::to_value(&report)?)?;
    Ok(())
}

fn cmd_gan(a: GanArgs) -> Result<()> {
    let cfg: GanRunConfig = resolve(
        &a.common,
        overrides!(
            "data" => a.data, "window" => a.window, "stride" => a.stride, "gan.p" => a.p,
            "gan.iters_a" => a.iters_a, "gan.iters_c" => a.iters_c, "gan.batch" => a.batch,
            "gan.lr_g" => a.lr_g, "gan.lr_d" => a.lr_d, "gan.n" => a.n, "gan.m" => a.m,
            "gan.k1" => a.k1, "gan.k2" => a.k2, "gan.seed" => a.common.seed,
        ),
    )?;
    cfg.gan.validate()?;
    if !(cfg.holdout_frac >= 0.0 && cfg.holdout_frac < 1.0) || cfg.stride == 0 || cfg.eval_draws == 0 {
        return arg_err("need 0 <= holdout_frac < 1, stride >= 1 and eval_draws >= 1");
    }
    let path = need(&cfg.data, "data")?;
    let data = match cfg.window {
        Some(w) => ingest_csv(path, w, cfg.stride)?.windows,
        None => read_dataset_csv(path)?,
    };
    let (train, held) = if cfg.holdout_frac > 0.0 { split_front(&data, 1.0 - cfg.holdout_frac)? } else { (data.clone(), data) };
    let run = Run::start(&a.common)?;
    let mut gan = cfg.gan.clone();
    if gan.failure_checkpoint.is_none() {
        gan.failure_checkpoint = Some(a.common.out.join("generator_failed.adev"));
    }
    let out = train_hrpcf_gan(&train, &gan)?;
    let eval_seed = derive_seed(cfg.gan.seed, 40);
    let results = json!({
        "train_samples": train.len(),
        "held_out_samples": held.len(),
        "training": serde_json::to_value(&out.report)?,
        "metrics_phase_a": serde_json::to_value(evaluate_generator(&out.phase_a_model, &held, cfg.eval_draws, eval_seed)?)?,
        "metrics": serde_json::to_value(evaluate_generator(&out.model, &held, cfg.eval_draws, eval_seed)?)?,
    });
    out.model.to_checkpoint().save(&a.common.out.join("generator.adev"))?;
    out.phase_a_model.to_checkpoint().save(&a.common.out.join("generator_phase_a.adev"))?;
    run.report(&a.common.out, "train-gan", cfg.gan.seed, &cfg, results)?;
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let cfg: GenConfig = resolve(
        &a.common,
        overrides!(
            "process.kind" => a.kind, "process.hurst" => a.hurst, "process.phi" => a.phi, "process.sigma" => a.sigma,
            "process.n" => a.member, "process.d" => a.d, "process.T" => a.t, "process.grid" => a.grid,
            "process.method" => a.method, "samples" => a.n, "seed" => a.common.seed,
        ),
    )?;
    cfg.process.validate()?;
    if cfg.samples == 0 {
        return arg_err("--n must be positive");
    }
    let run = Run::start(&a.common)?;
    let data = cfg.process.simulate(cfg.samples, cfg.seed)?;
    let csv_path = a.common.out.join("data.csv");
    write_dataset_csv(&data, &csv_path)?;
    let results = json!({ "file": "data.csv", "samples": data.len(), "path_len": data.path_len(), "dim": data.dim() });
    run.write(&a.common.out.join("manifest.json"), "gen-data", cfg.seed, &cfg, results)?;
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let cfg: EvalConfig = resolve(
        &a.common,
        overrides!("real" => a.real, "fake" => a.fake, "generator" => a.generator, "draws" => a.draws, "seed" => a.common.seed),
    )?;
    if cfg.fake.is_some() == cfg.generator.is_some() {
        return arg_err("give exactly one of --fake or --generator");
    }
    if cfg.draws == 0 {
        return arg_err("--draws must be positive");
    }
    let real = load(&cfg.real, "real")?;
    let run = Run::start(&a.common)?;
    let metrics = match (&cfg.fake, &cfg.generator) {
        (Some(f), _) => eval_metrics(&real, &read_dataset_csv(f)?, None)?,
        (_, Some(g)) => {
            let model = GeneratorModel::from_checkpoint(&Checkpoint::load(g)?)?;
            evaluate_generator(&model, &real, cfg.draws, cfg.seed)?
        }
        _ => unreachable!(),
    };
    run.report(&a.common.out, "eval", cfg.seed, &cfg, serde_json::to_value(&metrics)?)?;
    Ok(())
}
