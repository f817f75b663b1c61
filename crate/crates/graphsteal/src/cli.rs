//! Command-line harness: declarative experiment specs (TOML), the
//! train-target / attack / sweep / stats / gen-dataset verbs, and
//! deterministic CSV/JSON emission.
//!
//! Precedence: command-line flags override spec-file values, which override
//! built-in defaults. The default output root comes from `--out`, then the
//! spec, then the `GRAPHSTEAL_OUT` environment variable.

use crate::attack::{AttackConfig, UncertaintyCap};
use crate::data::{generate_triangles_like, load_tu, write_tu, TuBundle};
use crate::exec::Exec;
use crate::gnn::{GnnModel, LayerKind, ModelConfig, Pooling};
use crate::graph::{make_splits, Dataset, Graph};
use crate::metrics::UncertaintyMetric;
use crate::stats::{stat_gap, StatKind};
use crate::steal::{run_attack, train_target, RunArtifacts, RunOptions, RunReport, Strategy};
use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

pub const OUT_ENV_VAR: &str = "GRAPHSTEAL_OUT";

/// Exit code 2: bad configuration. Exit code 3: fault during execution.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn runtime_err(err: impl std::fmt::Display) -> CliError {
    CliError::Runtime(err.to_string())
}

// ---------------------------------------------------------------------------
// Experiment spec (TOML)

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub train: TrainSpec,
    pub attack: AttackSpec,
    pub defense: DefenseSpec,
    pub output: OutputSpec,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            dataset: DatasetSpec::default(),
            model: ModelSpec::default(),
            train: TrainSpec::default(),
            attack: AttackSpec::default(),
            defense: DefenseSpec::default(),
            output: OutputSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    /// "synthetic" or "tu".
    pub source: String,
    /// TU bundle directory (source = "tu").
    pub path: Option<PathBuf>,
    /// Bundle name prefix; also the name used by gen-dataset.
    pub name: String,
    pub num_graphs: usize,
    pub classes: usize,
    pub nodes_lo: usize,
    pub nodes_hi: usize,
    /// Seeds both generation and the split assignment.
    pub seed: u64,
    pub seed_fraction: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            source: "synthetic".into(),
            path: None,
            name: "TRILIKE".into(),
            num_graphs: 600,
            classes: 3,
            nodes_lo: 12,
            nodes_hi: 24,
            seed: 7,
            seed_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub layer_kind: String,
    pub num_layers: usize,
    pub hidden_width: usize,
    pub pooling: String,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            layer_kind: "gcn".into(),
            num_layers: 3,
            hidden_width: 32,
            pooling: "average".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSpec {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec { epochs: 200, lr: 0.01, seed: 5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSpec {
    pub strategies: Vec<String>,
    pub rounds: usize,
    pub seeds: Vec<u64>,
    pub alpha: f64,
    pub gamma: f64,
    pub metric: String,
    pub stat_cap: f64,
    pub literal_grad_mask: bool,
    pub full_stat_constraint: bool,
    pub baseline_lambda: f64,
    pub trnd_steps: usize,
    pub pretrain_epochs: usize,
    pub epochs_per_round: usize,
    pub lr: f64,
    /// Clone architecture override; empty means "same as target".
    pub clone_arch: String,
    pub retrain_scratch: bool,
    pub eval_on_target_train: bool,
}

impl Default for AttackSpec {
    fn default() -> Self {
        let a = AttackConfig::default();
        AttackSpec {
            strategies: vec![
                "msa-real".into(),
                "msa-au".into(),
                "msa-ad".into(),
                "msa-aud".into(),
            ],
            rounds: 10,
            seeds: vec![1, 2, 3, 4, 5],
            alpha: a.alpha,
            gamma: a.gamma,
            metric: "margin".into(),
            stat_cap: a.stat_cap,
            literal_grad_mask: false,
            full_stat_constraint: false,
            baseline_lambda: a.baseline_lambda,
            trnd_steps: a.trnd_steps,
            pretrain_epochs: 300,
            epochs_per_round: 100,
            lr: 0.01,
            clone_arch: String::new(),
            retrain_scratch: false,
            eval_on_target_train: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DefenseSpec {
    pub noise: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| config_err(format!("bad spec: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    fn parse_layer_kind(s: &str) -> Result<LayerKind, CliError> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(LayerKind::Gcn),
            "sage" => Ok(LayerKind::Sage),
            "gin" => Ok(LayerKind::Gin),
            other => Err(config_err(format!("unknown layer kind {other:?}"))),
        }
    }

    fn parse_pooling(s: &str) -> Result<Pooling, CliError> {
        match s.to_ascii_lowercase().as_str() {
            "average" | "avg" | "mean" => Ok(Pooling::Average),
            "sum" => Ok(Pooling::Sum),
            "maximum" | "max" => Ok(Pooling::Maximum),
            other => Err(config_err(format!("unknown pooling {other:?}"))),
        }
    }

    fn parse_metric(s: &str) -> Result<UncertaintyMetric, CliError> {
        match s.to_ascii_lowercase().as_str() {
            "margin" => Ok(UncertaintyMetric::Margin),
            "max" => Ok(UncertaintyMetric::Max),
            "entropy" => Ok(UncertaintyMetric::Entropy),
            other => Err(config_err(format!("unknown uncertainty metric {other:?}"))),
        }
    }

    pub fn strategies(&self) -> Result<Vec<Strategy>, CliError> {
        if self.attack.strategies.is_empty() {
            return Err(config_err("no attack strategies configured"));
        }
        self.attack
            .strategies
            .iter()
            .map(|s| {
                Strategy::parse(s).ok_or_else(|| config_err(format!("unknown strategy {s:?}")))
            })
            .collect()
    }

    pub fn model_config(&self, feat_dim: usize, num_classes: usize) -> Result<ModelConfig, CliError> {
        Ok(ModelConfig {
            layer_kind: Self::parse_layer_kind(&self.model.layer_kind)?,
            num_layers: self.model.num_layers,
            hidden_width: self.model.hidden_width,
            pooling: Self::parse_pooling(&self.model.pooling)?,
            num_classes,
            feat_dim,
        })
    }

    pub fn attack_config(&self) -> Result<AttackConfig, CliError> {
        let cfg = AttackConfig {
            alpha: self.attack.alpha,
            gamma: self.attack.gamma,
            metric: Self::parse_metric(&self.attack.metric)?,
            uncertainty_cap: UncertaintyCap::Auto,
            stat_cap: self.attack.stat_cap,
            literal_grad_mask: self.attack.literal_grad_mask,
            full_stat_constraint: self.attack.full_stat_constraint,
            baseline_lambda: self.attack.baseline_lambda,
            trnd_steps: self.attack.trnd_steps,
        };
        cfg.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(cfg)
    }

    /// Builds the dataset (generated or loaded) and assigns splits; fully
    /// determined by the dataset seed.
    pub fn materialize_dataset(&self) -> Result<Dataset, CliError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.dataset.seed);
        let mut ds = match self.dataset.source.as_str() {
            "synthetic" => generate_triangles_like(
                self.dataset.num_graphs,
                self.dataset.classes,
                (self.dataset.nodes_lo, self.dataset.nodes_hi),
                &mut rng,
            )
            .map_err(runtime_err)?,
            "tu" => {
                let dir = self
                    .dataset
                    .path
                    .as_ref()
                    .ok_or_else(|| config_err("dataset.source = \"tu\" needs dataset.path"))?;
                if !dir.exists() {
                    return Err(config_err(format!(
                        "dataset path {} does not exist",
                        dir.display()
                    )));
                }
                load_tu(&TuBundle::new(dir, &self.dataset.name)).map_err(runtime_err)?
            }
            other => return Err(config_err(format!("unknown dataset source {other:?}"))),
        };
        make_splits(&mut ds, self.dataset.seed_fraction, &mut rng).map_err(runtime_err)?;
        Ok(ds)
    }

    fn run_options(&self, strategy: Strategy, seed: u64) -> Result<RunOptions, CliError> {
        let mut opts = RunOptions::new(strategy, seed);
        opts.rounds = self.attack.rounds;
        opts.attack = self.attack_config()?;
        opts.pretrain_epochs = self.attack.pretrain_epochs;
        opts.epochs_per_round = self.attack.epochs_per_round;
        opts.lr = self.attack.lr;
        opts.retrain_scratch = self.attack.retrain_scratch;
        opts.eval_on_target_train = self.attack.eval_on_target_train;
        if self.defense.noise > 0.0 {
            opts.noise = Some(self.defense.noise);
        }
        Ok(opts)
    }
}

// ---------------------------------------------------------------------------
// Argument parsing

#[derive(Debug, Parser)]
#[command(
    name = "graphsteal",
    about = "Model extraction lab for graph classifiers under hard-label query access",
    version
)]
pub struct CliArgs {
    /// Experiment spec file (TOML). Flags override file values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory root.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Thread budget for parallel sections.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Default)]
pub struct AttackOverrides {
    /// Strategy subset, e.g. --strategy msa-aud --strategy jbda.
    #[arg(long = "strategy")]
    pub strategies: Vec<String>,
    /// Comma-separated run seeds, e.g. --seed-list 1,2,3.
    #[arg(long = "seed-list", value_delimiter = ',')]
    pub seed_list: Vec<u64>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long)]
    pub pooling: Option<String>,
    /// Oracle label-flip probability.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Use the printed gradient-sign mask verbatim.
    #[arg(long, default_value_t = false)]
    pub literal_grad_mask: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset and write it as a TU bundle.
    GenDataset,
    /// Train the victim model and write checkpoint plus metrics.
    TrainTarget {
        #[command(flatten)]
        overrides: AttackOverrides,
    },
    /// Run the configured attacks; one report pair per (strategy, seed).
    Attack {
        #[command(flatten)]
        overrides: AttackOverrides,
    },
    /// Cross-product runs over one swept parameter.
    Sweep {
        /// One of: alpha, gamma, noise, pooling, metric, clone-arch.
        #[arg(long)]
        parameter: String,
        /// Comma-separated values, e.g. 0.01,0.05 or average,sum,maximum.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[command(flatten)]
        overrides: AttackOverrides,
    },
    /// Aggregate generated-vs-original statistic gaps from attack corpora.
    Stats {
        /// Directory holding *_corpus.json files (default: <out>/attack).
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
}

fn apply_overrides(spec: &mut ExperimentSpec, ov: &AttackOverrides) {
    if !ov.strategies.is_empty() {
        spec.attack.strategies = ov.strategies.clone();
    }
    if !ov.seed_list.is_empty() {
        spec.attack.seeds = ov.seed_list.clone();
    }
    if let Some(r) = ov.rounds {
        spec.attack.rounds = r;
    }
    if let Some(a) = ov.alpha {
        spec.attack.alpha = a;
    }
    if let Some(g) = ov.gamma {
        spec.attack.gamma = g;
    }
    if let Some(m) = &ov.metric {
        spec.attack.metric = m.clone();
    }
    if let Some(p) = &ov.pooling {
        spec.model.pooling = p.clone();
    }
    if let Some(n) = ov.noise {
        spec.defense.noise = n;
    }
    if ov.literal_grad_mask {
        spec.attack.literal_grad_mask = true;
    }
}

/// Resolves the output root: flag, then spec, then environment, then ./runs.
pub fn resolve_out_dir(spec: &ExperimentSpec, flag: &Option<PathBuf>) -> PathBuf {
    if let Some(dir) = flag {
        return dir.clone();
    }
    if let Some(dir) = &spec.output.dir {
        return dir.clone();
    }
    if let Ok(root) = std::env::var(OUT_ENV_VAR) {
        return PathBuf::from(root).join("run");
    }
    PathBuf::from("runs/default")
}

/// Entry point used by the binary; returns the process exit code.
pub fn run(args: CliArgs) -> i32 {
    match execute(args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn execute(args: CliArgs) -> Result<(), CliError> {
    #[cfg(feature = "parallel")]
    if let Some(jobs) = args.jobs {
        // Ignore the error when a pool already exists (tests, repeat calls).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let mut spec = match &args.config {
        Some(path) => ExperimentSpec::load(path)?,
        None => ExperimentSpec::default(),
    };
    match &args.command {
        Command::GenDataset => {
            let out = resolve_out_dir(&spec, &args.out);
            let path = cmd_gen_dataset(&spec, &out)?;
            println!("dataset written to {}", path.display());
        }
        Command::TrainTarget { overrides } => {
            apply_overrides(&mut spec, overrides);
            let out = resolve_out_dir(&spec, &args.out);
            let outcome = cmd_train_target(&spec, &out)?;
            println!(
                "target trained: eval_accuracy={} checkpoint={}",
                outcome.eval_accuracy,
                outcome.checkpoint.display()
            );
        }
        Command::Attack { overrides } => {
            apply_overrides(&mut spec, overrides);
            let out = resolve_out_dir(&spec, &args.out);
            let outcome = cmd_attack(&spec, &out)?;
            for line in &outcome.summary_lines {
                println!("{line}");
            }
        }
        Command::Sweep { parameter, values, overrides } => {
            apply_overrides(&mut spec, overrides);
            let out = resolve_out_dir(&spec, &args.out);
            let path = cmd_sweep(&spec, &out, parameter, values)?;
            println!("sweep written to {}", path.display());
        }
        Command::Stats { corpus } => {
            let out = resolve_out_dir(&spec, &args.out);
            let dir = corpus.clone().unwrap_or_else(|| out.join("attack"));
            let path = cmd_stats(&dir, &out)?;
            println!("stats written to {}", path.display());
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Commands

pub fn cmd_gen_dataset(spec: &ExperimentSpec, out: &Path) -> Result<PathBuf, CliError> {
    let ds = spec.materialize_dataset()?;
    let dir = out.join("dataset");
    write_tu(&ds, &dir, &spec.dataset.name).map_err(runtime_err)?;
    Ok(dir)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainOutcome {
    pub eval_accuracy: f64,
    pub checkpoint: PathBuf,
}

pub fn cmd_train_target(spec: &ExperimentSpec, out: &Path) -> Result<TrainOutcome, CliError> {
    let ds = spec.materialize_dataset()?;
    let config = spec.model_config(ds.feat_dim, ds.num_classes)?;
    let (model, eval_accuracy) = train_target(
        &ds,
        config,
        spec.train.epochs,
        spec.train.lr,
        spec.train.seed,
        Exec::default(),
    )
    .map_err(runtime_err)?;
    fs::create_dir_all(out).map_err(runtime_err)?;
    let checkpoint = out.join("target.ckpt");
    model.save(&checkpoint).map_err(runtime_err)?;
    let metrics = serde_json::json!({
        "eval_accuracy": eval_accuracy,
        "epochs": spec.train.epochs,
        "lr": spec.train.lr,
        "seed": spec.train.seed,
        "config": model.config,
    });
    fs::write(
        out.join("target_metrics.json"),
        serde_json::to_string_pretty(&metrics).map_err(runtime_err)?,
    )
    .map_err(runtime_err)?;
    Ok(TrainOutcome { eval_accuracy, checkpoint })
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub summary_csv: PathBuf,
    pub summary_lines: Vec<String>,
    pub reports: Vec<RunReport>,
}

fn strategy_slug(s: Strategy) -> String {
    s.name().to_ascii_lowercase()
}

pub fn cmd_attack(spec: &ExperimentSpec, out: &Path) -> Result<AttackOutcome, CliError> {
    let checkpoint = out.join("target.ckpt");
    if !checkpoint.exists() {
        return Err(config_err(format!(
            "target checkpoint {} not found; run train-target first",
            checkpoint.display()
        )));
    }
    let target = GnnModel::load(&checkpoint).map_err(runtime_err)?;
    let ds = spec.materialize_dataset()?;
    let strategies = spec.strategies()?;
    if spec.attack.seeds.is_empty() {
        return Err(config_err("attack.seeds must be non-empty"));
    }

    let clone_config = if spec.attack.clone_arch.is_empty() {
        None
    } else {
        let mut cfg = target.config;
        cfg.layer_kind = ExperimentSpec::parse_layer_kind(&spec.attack.clone_arch)?;
        Some(cfg)
    };

    let mut cells = Vec::new();
    for &strategy in &strategies {
        for &seed in &spec.attack.seeds {
            cells.push((strategy, seed));
        }
    }
    let results: Vec<Result<RunArtifacts, CliError>> =
        crate::exec::map_ordered(Exec::default(), &cells, |&(strategy, seed)| {
            let mut opts = spec.run_options(strategy, seed)?;
            opts.clone_config = clone_config;
            run_attack(&ds, &target, &opts).map_err(runtime_err)
        });

    let attack_dir = out.join("attack");
    let mut by_strategy: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut by_strategy_acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut queries: BTreeMap<String, usize> = BTreeMap::new();
    let mut reports = Vec::new();
    for ((strategy, seed), result) in cells.iter().zip(results) {
        let arts = result?;
        let dir = attack_dir.join(strategy_slug(*strategy));
        fs::create_dir_all(&dir).map_err(runtime_err)?;
        fs::write(
            dir.join(format!("seed{seed}.json")),
            serde_json::to_string_pretty(&arts.report).map_err(runtime_err)?,
        )
        .map_err(runtime_err)?;
        fs::write(dir.join(format!("seed{seed}.csv")), arts.report.to_csv())
            .map_err(runtime_err)?;
        let corpus = CorpusFile::from_artifacts(strategy.name(), *seed, &arts);
        fs::write(
            dir.join(format!("seed{seed}_corpus.json")),
            serde_json::to_string(&corpus).map_err(runtime_err)?,
        )
        .map_err(runtime_err)?;
        by_strategy
            .entry(strategy.name().to_string())
            .or_default()
            .push(arts.report.final_fidelity());
        by_strategy_acc
            .entry(strategy.name().to_string())
            .or_default()
            .push(arts.report.rounds.last().map(|r| r.accuracy).unwrap_or(0.0));
        queries.insert(strategy.name().to_string(), arts.report.queries_used);
        reports.push(arts.report);
    }

    // Summary rows follow the configured strategy order.
    let mut summary = String::from(
        "strategy,seeds,mean_final_fidelity,stddev_final_fidelity,mean_final_accuracy,queries_per_run\n",
    );
    let mut summary_lines = Vec::new();
    for &strategy in &strategies {
        let name = strategy.name();
        let fids = &by_strategy[name];
        let accs = &by_strategy_acc[name];
        let fid_mean = mean(fids);
        let sd = stddev(fids);
        let acc_mean = mean(accs);
        summary.push_str(&format!(
            "{},{},{},{},{},{}\n",
            name,
            fids.len(),
            fid_mean,
            sd,
            acc_mean,
            queries[name]
        ));
        summary_lines.push(format!(
            "{name}: mean final fidelity {fid_mean:.4} (stddev {sd:.4}) over {} seeds",
            fids.len()
        ));
    }
    fs::create_dir_all(&attack_dir).map_err(runtime_err)?;
    let summary_csv = attack_dir.join("summary.csv");
    fs::write(&summary_csv, summary).map_err(runtime_err)?;
    Ok(AttackOutcome { summary_csv, summary_lines, reports })
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn stddev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

// ---------------------------------------------------------------------------
// Sweeps

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Alpha,
    Gamma,
    Noise,
    Pooling,
    Metric,
    CloneArch,
}

impl SweepParam {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s.to_ascii_lowercase().as_str() {
            "alpha" => Ok(SweepParam::Alpha),
            "gamma" => Ok(SweepParam::Gamma),
            "noise" => Ok(SweepParam::Noise),
            "pooling" => Ok(SweepParam::Pooling),
            "metric" => Ok(SweepParam::Metric),
            "clone-arch" | "clone_arch" => Ok(SweepParam::CloneArch),
            other => Err(config_err(format!("unknown sweep parameter {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Gamma => "gamma",
            SweepParam::Noise => "noise",
            SweepParam::Pooling => "pooling",
            SweepParam::Metric => "metric",
            SweepParam::CloneArch => "clone-arch",
        }
    }
}

/// Runs the cross-product of values, strategies, and seeds; one CSV row per
/// run. Model-level sweeps (pooling) retrain the target per value.
pub fn cmd_sweep(
    spec: &ExperimentSpec,
    out: &Path,
    parameter: &str,
    values: &[String],
) -> Result<PathBuf, CliError> {
    let param = SweepParam::parse(parameter)?;
    if values.is_empty() {
        return Err(config_err("sweep needs at least one value"));
    }
    let strategies = spec.strategies()?;
    let ds = spec.materialize_dataset()?;

    let mut rows = String::from(
        "parameter,value,strategy,seed,final_fidelity,final_accuracy,queries_used\n",
    );
    for value in values {
        // Per-value spec adjustment.
        let mut cell_spec = spec.clone();
        match param {
            SweepParam::Alpha => {
                cell_spec.attack.alpha =
                    value.parse().map_err(|_| config_err(format!("bad alpha {value:?}")))?
            }
            SweepParam::Gamma => {
                cell_spec.attack.gamma =
                    value.parse().map_err(|_| config_err(format!("bad gamma {value:?}")))?
            }
            SweepParam::Noise => {
                cell_spec.defense.noise =
                    value.parse().map_err(|_| config_err(format!("bad noise {value:?}")))?
            }
            SweepParam::Pooling => cell_spec.model.pooling = value.clone(),
            SweepParam::Metric => cell_spec.attack.metric = value.clone(),
            SweepParam::CloneArch => cell_spec.attack.clone_arch = value.clone(),
        }
        // Pooling changes the victim itself; other parameters reuse one
        // target per sweep.
        let config = cell_spec.model_config(ds.feat_dim, ds.num_classes)?;
        let (target, _) = train_target(
            &ds,
            config,
            cell_spec.train.epochs,
            cell_spec.train.lr,
            cell_spec.train.seed,
            Exec::default(),
        )
        .map_err(runtime_err)?;
        let clone_config = if cell_spec.attack.clone_arch.is_empty() {
            None
        } else {
            let mut cfg = target.config;
            cfg.layer_kind = ExperimentSpec::parse_layer_kind(&cell_spec.attack.clone_arch)?;
            Some(cfg)
        };

        let mut cells = Vec::new();
        for &strategy in &strategies {
            for &seed in &cell_spec.attack.seeds {
                cells.push((strategy, seed));
            }
        }
        let results: Vec<Result<RunArtifacts, CliError>> =
            crate::exec::map_ordered(Exec::default(), &cells, |&(strategy, seed)| {
                let mut opts = cell_spec.run_options(strategy, seed)?;
                opts.clone_config = clone_config;
                run_attack(&ds, &target, &opts).map_err(runtime_err)
            });
        for ((strategy, seed), result) in cells.iter().zip(results) {
            let arts = result?;
            let last = arts.report.rounds.last().expect("round 0 always present");
            rows.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                param.name(),
                value,
                strategy.name(),
                seed,
                last.fidelity,
                last.accuracy,
                arts.report.queries_used
            ));
        }
    }
    fs::create_dir_all(out).map_err(runtime_err)?;
    let path = out.join(format!("sweep_{}.csv", param.name()));
    fs::write(&path, rows).map_err(runtime_err)?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// Corpus files and the stats command

#[derive(Debug, Serialize, Deserialize)]
struct GraphJson {
    n: usize,
    edges: Vec<(usize, usize)>,
    feats: Vec<Vec<f64>>,
    label: Option<usize>,
}

impl GraphJson {
    fn from_graph(g: &Graph) -> Self {
        GraphJson {
            n: g.n(),
            edges: g.edges(),
            feats: (0..g.n()).map(|v| g.feats.row(v).to_vec()).collect(),
            label: g.label,
        }
    }

    fn to_graph(&self) -> Graph {
        let d = self.feats.first().map(Vec::len).unwrap_or(0);
        let mut feats = Array2::zeros((self.n, d));
        for (v, row) in self.feats.iter().enumerate() {
            for (c, &x) in row.iter().enumerate() {
                feats[[v, c]] = x;
            }
        }
        Graph::from_edges(self.n, &self.edges, feats, self.label)
    }
}

/// On-disk record of one run's generated graphs, paired with the seed
/// graphs they perturb (aligned by position within each round).
#[derive(Debug, Serialize, Deserialize)]
pub struct CorpusFile {
    strategy: String,
    seed: u64,
    seeds: Vec<GraphJson>,
    rounds: Vec<CorpusRound>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusRound {
    round: usize,
    generated: Vec<GraphJson>,
}

impl CorpusFile {
    pub fn from_artifacts(strategy: &str, seed: u64, arts: &RunArtifacts) -> Self {
        CorpusFile {
            strategy: strategy.to_string(),
            seed,
            seeds: arts.seeds.iter().map(GraphJson::from_graph).collect(),
            rounds: arts
                .corpus
                .iter()
                .map(|rc| CorpusRound {
                    round: rc.round,
                    generated: rc.generated.iter().map(GraphJson::from_graph).collect(),
                })
                .collect(),
        }
    }
}

/// Mean per-statistic gaps between generated graphs and their originals,
/// one row per strategy, aggregated over every corpus file under `dir`.
pub fn cmd_stats(dir: &Path, out: &Path) -> Result<PathBuf, CliError> {
    let mut files = Vec::new();
    collect_corpus_files(dir, &mut files).map_err(runtime_err)?;
    if files.is_empty() {
        return Err(CliError::Runtime(format!(
            "no *_corpus.json files under {}",
            dir.display()
        )));
    }
    files.sort();
    let mut gaps: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for file in &files {
        let text = fs::read_to_string(file).map_err(runtime_err)?;
        let corpus: CorpusFile = serde_json::from_str(&text).map_err(runtime_err)?;
        let seeds: Vec<Graph> = corpus.seeds.iter().map(GraphJson::to_graph).collect();
        let entry = gaps.entry(corpus.strategy.clone()).or_default();
        for round in &corpus.rounds {
            for (k, gen) in round.generated.iter().enumerate() {
                let g = gen.to_graph();
                let gap = stat_gap(&seeds[k], &g, &StatKind::ALL);
                entry.push(gap.into_iter().map(|(_, v)| v).collect());
            }
        }
    }

    let mut csv = String::from("strategy");
    for kind in StatKind::ALL {
        csv.push(',');
        csv.push_str(kind.column());
    }
    csv.push('\n');
    for (strategy, rows) in &gaps {
        csv.push_str(strategy);
        for col in 0..StatKind::ALL.len() {
            let column: Vec<f64> = rows.iter().map(|r| r[col]).collect();
            csv.push_str(&format!(",{}", mean(&column)));
        }
        csv.push('\n');
    }
    fs::create_dir_all(out).map_err(runtime_err)?;
    let path = out.join("stats.csv");
    fs::write(&path, csv).map_err(runtime_err)?;
    Ok(path)
}

fn collect_corpus_files(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    if !dir.exists() {
        return Ok(());
    }
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            collect_corpus_files(&path, out)?;
        } else if path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.ends_with("_corpus.json"))
        {
            out.push(path);
        }
    }
    Ok(())
}
