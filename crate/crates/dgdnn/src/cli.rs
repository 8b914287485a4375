use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use dgdnn_core::dataset::{build_samples, GraphSource, TemporalDataset};
use dgdnn_core::evaluation::{evaluate, EvalReport};
use dgdnn_core::graph::{
    adjacency_from_features, build_adjacency, random_adjacency, static_adjacency, EdgeFeatures,
};
use dgdnn_core::market::{
    make_window, planted_edge_report, synth_market, DateRange, MarketHistory, Split, SplitSpec,
    SyntheticMarketSpec,
};
use dgdnn_core::model::{DiffusionStack, ModelParams};
use dgdnn_core::training::{ablation_setup, train, AblationMode, PenaltyMode, StopReason};
use dgdnn_core::Tensor;
use serde::Serialize;

use crate::config::{FeatureDump, RunConfig};
use crate::error::{write, CliError, Result};
use crate::formats::{history_csv, matrix_csv, read_matrix_csv, reports_table};
use crate::ingest::ingest_dir;
use crate::store::{load_dataset, to_json, write_dataset, Checkpoint, Manifest};

#[derive(Debug, Parser)]
#[command(
    name = "dgdnn",
    version,
    about = "Next-day stock movement classification on dynamic entropy graphs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Align per-ticker OHLCV CSV files into a dataset directory.
    Ingest(IngestArgs),
    /// Generate a synthetic lead-lag market as a dataset directory.
    Synth(SynthArgs),
    /// Write entropy adjacency matrices for one day or a date range.
    Graph(GraphArgs),
    /// Train a model and write its checkpoint and metric history.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a dataset.
    Evaluate(EvaluateArgs),
    /// Train and test the full model against component removals.
    Ablate(AblateArgs),
    /// Write a layer's learned diffusion matrix as CSV.
    DumpDiffusion(DumpArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FeatureDumpArg {
    None,
    Csv,
    Bin,
}

impl From<FeatureDumpArg> for FeatureDump {
    fn from(v: FeatureDumpArg) -> Self {
        match v {
            FeatureDumpArg::None => FeatureDump::None,
            FeatureDumpArg::Csv => FeatureDump::Csv,
            FeatureDumpArg::Bin => FeatureDump::Bin,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum EdgeFeaturesArg {
    Raw,
    Normalized,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PenaltyArg {
    SoftmaxExact,
    SquaredPenalty,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Full,
    NoEntropyGraph,
    NoDiffusion,
    Coupled,
    All,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
}

impl From<SplitArg> for Split {
    fn from(v: SplitArg) -> Self {
        match v {
            SplitArg::Train => Split::Train,
            SplitArg::Validation => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

fn parse_range(s: &str) -> std::result::Result<DateRange, String> {
    let (a, b) = s.split_once(':').ok_or("expected START:END")?;
    let d = |x: &str| NaiveDate::parse_from_str(x, "%Y-%m-%d").map_err(|e| format!("`{x}`: {e}"));
    Ok(DateRange::new(d(a)?, d(b)?))
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Run configuration file (TOML, or JSON by extension).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataFlags {
    /// Lookback window length in trading days.
    #[arg(long)]
    pub lookback: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GraphFlags {
    /// Histogram bins of the entropy estimator.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Window representation fed to edge construction.
    #[arg(long, value_enum)]
    pub edge_features: Option<EdgeFeaturesArg>,
    /// Set the adjacency diagonal to 1.
    #[arg(long)]
    pub self_loops: bool,
}

#[derive(Debug, Args)]
pub struct ModelFlags {
    /// Number of stacked layers.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Maximum diffusion step per layer.
    #[arg(long)]
    pub diffusion_steps: Option<usize>,
    /// Attention heads.
    #[arg(long)]
    pub heads: Option<usize>,
    /// Embedding width.
    #[arg(long)]
    pub embed_dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    /// Seed for initialization and batch order.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Weight of the neighborhood radius reward.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Optimizer step size.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Decoupled weight decay.
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Maximum training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Training days per step (default: all).
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Epochs without validation MCC improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    /// How diffusion weights are kept on the simplex.
    #[arg(long, value_enum)]
    pub penalty_mode: Option<PenaltyArg>,
    /// Training target dates, START:END.
    #[arg(long, value_parser = parse_range, value_name = "START:END")]
    pub train: Option<DateRange>,
    /// Validation target dates, START:END.
    #[arg(long, value_parser = parse_range, value_name = "START:END")]
    pub validation: Option<DateRange>,
    /// Test target dates, START:END.
    #[arg(long, value_parser = parse_range, value_name = "START:END")]
    pub test: Option<DateRange>,
    /// Share of target days for validation when no ranges are given.
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    /// Share of target days for testing when no ranges are given.
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Matrix CSV replacing the per-day entropy graphs.
    #[arg(long, value_name = "FILE")]
    pub static_graph: Option<PathBuf>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl DataFlags {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.data.lookback, self.lookback);
    }
}

impl GraphFlags {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.graph.bins, self.bins);
        set(
            &mut c.graph.edge_features,
            self.edge_features.map(|e| match e {
                EdgeFeaturesArg::Raw => EdgeFeatures::Raw,
                EdgeFeaturesArg::Normalized => EdgeFeatures::Normalized,
            }),
        );
        if self.self_loops {
            c.graph.self_loops = true;
        }
    }
}

impl ModelFlags {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.model.layers, self.layers);
        set(&mut c.model.diffusion_steps, self.diffusion_steps);
        set(&mut c.model.heads, self.heads);
        set(&mut c.model.embed_dim, self.embed_dim);
    }
}

impl TrainFlags {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.seed, self.seed);
        let t = &mut c.training;
        set(&mut t.alpha, self.alpha);
        set(&mut t.learning_rate, self.learning_rate);
        set(&mut t.weight_decay, self.weight_decay);
        set(&mut t.epochs, self.epochs);
        if self.batch_size.is_some() {
            t.batch_size = self.batch_size;
        }
        set(&mut t.patience, self.patience);
        set(
            &mut t.penalty_mode,
            self.penalty_mode.map(|p| match p {
                PenaltyArg::SoftmaxExact => PenaltyMode::SoftmaxExact,
                PenaltyArg::SquaredPenalty => PenaltyMode::SquaredPenalty,
            }),
        );
        if self.train.is_some() || self.validation.is_some() || self.test.is_some() {
            c.split.train = self.train;
            c.split.validation = self.validation;
            c.split.test = self.test;
        }
        set(&mut c.split.validation_fraction, self.validation_fraction);
        set(&mut c.split.test_fraction, self.test_fraction);
        if self.static_graph.is_some() {
            c.graph.static_graph = self.static_graph.clone();
        }
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory of per-ticker CSV files.
    #[arg(long, value_name = "DIR")]
    pub input: PathBuf,
    /// Output dataset directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Drop tickers missing more than this share of dates.
    #[arg(long)]
    pub drop_threshold: Option<f64>,
    /// Per-day feature dump format.
    #[arg(long, value_enum)]
    pub features: Option<FeatureDumpArg>,
    #[command(flatten)]
    pub data: DataFlags,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Number of tickers.
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Number of trading days.
    #[arg(long, default_value_t = 250)]
    pub days: usize,
    /// Planted lead-lag edges.
    #[arg(long, default_value_t = 2)]
    pub edges: usize,
    /// Lag of every planted edge in days (1 to 3).
    #[arg(long, default_value_t = 1)]
    pub lag: usize,
    /// Share of the leader's return passed to the follower.
    #[arg(long, default_value_t = 0.9)]
    pub coupling: f64,
    /// Follower noise in units of the daily volatility.
    #[arg(long, default_value_t = 0.15)]
    pub noise: f64,
    /// Daily log-return volatility of the independent walks.
    #[arg(long, default_value_t = 0.02)]
    pub volatility: f64,
    /// First calendar date.
    #[arg(long, default_value = "2016-05-02")]
    pub start: NaiveDate,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Lagged return correlation above which an edge counts as present.
    #[arg(long, default_value_t = 0.3)]
    pub threshold: f64,
    /// Per-day feature dump format.
    #[arg(long, value_enum)]
    pub features: Option<FeatureDumpArg>,
    #[command(flatten)]
    pub data: DataFlags,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Day whose lookback window ends the graph (YYYY-MM-DD).
    #[arg(long, required_unless_present = "random")]
    pub day: Option<NaiveDate>,
    /// Last day of a range; `--out` is then a directory.
    #[arg(long, requires = "day")]
    pub to: Option<NaiveDate>,
    /// Output CSV file, or directory for a range.
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Min-max normalize each matrix to [0, 1].
    #[arg(long)]
    pub normalized: bool,
    /// Write a seeded random static adjacency instead.
    #[arg(long, conflicts_with_all = ["day", "to"])]
    pub random: bool,
    /// Seed for `--random`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub data_flags: DataFlags,
    #[command(flatten)]
    pub graph: GraphFlags,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory (default: `dataset` from the config file).
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Output directory for checkpoint, history and config.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub data_flags: DataFlags,
    #[command(flatten)]
    pub graph: GraphFlags,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Dataset directory with the checkpoint's universe (default: the one
    /// it was trained on).
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Split to score (default: from the checkpoint's config).
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    /// Directory for the JSON and text reports.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Dataset directory (default: `dataset` from the config file).
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Component removal to run.
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    /// Output directory for reports.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub data_flags: DataFlags,
    #[command(flatten)]
    pub graph: GraphFlags,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Layer index, from 0.
    #[arg(long)]
    pub layer: usize,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Dataset directory, to also dump the propagation matrix of `--day`.
    #[arg(long, value_name = "DIR", requires = "day")]
    pub data: Option<PathBuf>,
    /// Day for the propagation dump (YYYY-MM-DD).
    #[arg(long, requires = "data")]
    pub day: Option<NaiveDate>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => cmd_ingest(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Graph(a) => cmd_graph(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::DumpDiffusion(a) => cmd_dump_diffusion(&a),
    }
}

fn merged(config: &ConfigArg, apply: impl FnOnce(&mut RunConfig)) -> Result<RunConfig> {
    let mut c = RunConfig::load(config.config.as_deref())?;
    apply(&mut c);
    c.validate()?;
    Ok(c)
}

fn dataset_dir(flag: Option<&PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    flag.or(cfg.dataset.as_ref()).cloned().ok_or_else(|| {
        CliError::Config("no dataset: pass --data or set `dataset` in the config".into())
    })
}

fn cmd_ingest(a: &IngestArgs) -> Result<()> {
    let mut cfg = merged(&a.config, |c| {
        a.data.apply(c);
        set(&mut c.data.drop_threshold, a.drop_threshold);
        set(&mut c.data.features, a.features.map(Into::into));
        c.output = Some(a.out.clone());
    })?;
    cfg.output = Some(a.out.clone());
    let (history, report) = ingest_dir(&a.input, cfg.data.drop_threshold)?;
    let m = write_dataset(&a.out, &history, "ingest", Some(report.clone()), &cfg)?;
    println!(
        "{} tickers, {} days, {} dropped -> {}",
        m.tickers.len(),
        m.dates.len(),
        report.dropped.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct SynthReport<'a> {
    spec: &'a SyntheticMarketSpec,
    threshold: f64,
    edges: Vec<dgdnn_core::market::EdgeCheck>,
    edges_above_threshold: usize,
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = merged(&a.config, |c| {
        a.data.apply(c);
        set(&mut c.data.features, a.features.map(Into::into));
        c.seed = a.seed;
        c.output = Some(a.out.clone());
    })?;
    let mut spec =
        SyntheticMarketSpec::lead_lag(a.n, a.days, a.edges, a.lag, a.coupling, a.noise, a.seed);
    spec.volatility = a.volatility;
    spec.start = a.start;
    let market = synth_market(&spec)?;
    let edges = planted_edge_report(&spec, &market.history, a.threshold)?;
    let report = SynthReport {
        spec: &spec,
        threshold: a.threshold,
        edges_above_threshold: edges.iter().filter(|e| e.detected).count(),
        edges,
    };
    write_dataset(&a.out, &market.history, "synth", None, &cfg)?;
    write(&a.out.join("synth_report.json"), to_json(&report))?;
    println!(
        "{} tickers, {} days, {} of {} planted edges above {} -> {}",
        spec.n,
        spec.days,
        report.edges_above_threshold,
        spec.edges.len(),
        a.threshold,
        a.out.display()
    );
    Ok(())
}

fn day_index(history: &MarketHistory, day: NaiveDate) -> Result<usize> {
    history.universe().day_index(day).ok_or_else(|| {
        CliError::Core(dgdnn_core::Error::range(
            "day",
            format!("{day} is not in the dataset calendar"),
        ))
    })
}

fn cmd_graph(a: &GraphArgs) -> Result<()> {
    let cfg = merged(&a.config, |c| {
        a.data_flags.apply(c);
        a.graph.apply(c);
    })?;
    let (manifest, history) = load_dataset(&a.data)?;
    let normalize = |m: Tensor| {
        if a.normalized {
            m.min_max_normalized()
        } else {
            m
        }
    };
    if a.random {
        let m = random_adjacency(history.n_tickers(), a.seed);
        return write(&a.out, matrix_csv(&normalize(m), &manifest.tickers));
    }
    let day = a.day.expect("clap enforces --day");
    let first = day_index(&history, day)?;
    let last = a.to.map_or(Ok(first), |d| day_index(&history, d))?;
    if last < first {
        return Err(CliError::Config("--to is before --day".into()));
    }
    let gcfg = cfg.graph.graph_config();
    for t in first..=last {
        let w = make_window(&history, t, cfg.data.lookback)?;
        let features = match gcfg.edge_features {
            EdgeFeatures::Raw => &w.raw,
            EdgeFeatures::Normalized => &w.features,
        };
        let m = normalize(adjacency_from_features(features, &gcfg)?);
        let path = if a.to.is_some() {
            a.out
                .join(format!("{}.csv", history.universe().calendar[t]))
        } else {
            a.out.clone()
        };
        write(&path, matrix_csv(&m, &manifest.tickers))?;
    }
    Ok(())
}

struct Prepared {
    manifest: Manifest,
    history: MarketHistory,
    splits: SplitSpec,
    static_graph: Option<Tensor>,
}

fn prepare(data: &Path, cfg: &RunConfig) -> Result<Prepared> {
    let (manifest, history) = load_dataset(data)?;
    let splits = cfg
        .split
        .resolve(&history.universe().calendar, cfg.data.lookback)?;
    let static_graph = match &cfg.graph.static_graph {
        Some(p) => {
            if !p.is_file() {
                return Err(CliError::InputNotFound(p.clone()));
            }
            Some(static_adjacency(
                read_matrix_csv(p, &manifest.tickers)?,
                manifest.tickers.len(),
            )?)
        }
        None => None,
    };
    Ok(Prepared {
        manifest,
        history,
        splits,
        static_graph,
    })
}

fn samples(p: &Prepared, cfg: &RunConfig, source: &GraphSource) -> Result<TemporalDataset> {
    let ds = build_samples(&p.history, &cfg.data_config(), source, &p.splits)?;
    if ds.train.is_empty() {
        return Err(CliError::Config(
            "the training range holds no usable days".into(),
        ));
    }
    Ok(ds)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = merged(&a.config, |c| {
        a.data_flags.apply(c);
        a.graph.apply(c);
        a.model.apply(c);
        a.train.apply(c);
        c.output = Some(a.out.clone());
        set(&mut c.dataset, a.data.clone().map(Some));
    })?;
    let p = prepare(&dataset_dir(a.data.as_ref(), &cfg)?, &cfg)?;
    let source = match &p.static_graph {
        Some(m) => GraphSource::Static(m.clone()),
        None => GraphSource::Entropy(cfg.graph.graph_config()),
    };
    let ds = samples(&p, &cfg, &source)?;
    let outcome = train(
        &ds.train,
        &ds.validation,
        &cfg.model_config(),
        &cfg.train_config(),
    )?;
    let params = if outcome.best_epoch == 0 {
        &outcome.last
    } else {
        &outcome.best
    };
    let ck = Checkpoint::new(params, &outcome, &p.manifest, &cfg, p.static_graph.clone());
    ck.save(&a.out.join("checkpoint.json"))?;
    write(&a.out.join("history.csv"), history_csv(&outcome.history))?;
    write(&a.out.join("run_config.json"), cfg.to_json())?;
    println!(
        "{} epochs, best epoch {} (validation MCC {:.4}), {} parameters -> {}",
        outcome.history.len(),
        outcome.best_epoch,
        outcome.best_val_mcc,
        params.param_count(),
        a.out.display()
    );
    if let StopReason::NonFinite { epoch, detail } = &outcome.stop {
        return Err(CliError::Runtime(format!(
            "training aborted at epoch {epoch}: non-finite {detail}; last good checkpoint written"
        )));
    }
    Ok(())
}

fn write_report(dir: Option<&Path>, name: &str, report: &EvalReport) -> Result<String> {
    let table = reports_table(&[(name, report)]);
    if let Some(dir) = dir {
        write(&dir.join(format!("report_{name}.json")), to_json(report))?;
        write(&dir.join(format!("report_{name}.txt")), &table)?;
    }
    Ok(table)
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let cfg = &ck.run_config;
    let (manifest, history) = load_dataset(&dataset_dir(a.data.as_ref(), cfg)?)?;
    ck.check_universe(&manifest)?;
    let splits = cfg
        .split
        .resolve(&history.universe().calendar, cfg.data.lookback)?;
    let source = match &ck.static_adjacency {
        Some(m) => GraphSource::Static(m.clone()),
        None => GraphSource::Entropy(cfg.graph.graph_config()),
    };
    let split = a.split.map_or(cfg.evaluation.split, Into::into);
    let ds = build_samples(&history, &cfg.data_config(), &source, &splits)?;
    let report = evaluate(&ck.params()?, ds.split(split), split, &cfg.fingerprint())?;
    print!("{}", write_report(a.out.as_deref(), split.name(), &report)?);
    Ok(())
}

fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    let cfg = merged(&a.config, |c| {
        a.data_flags.apply(c);
        a.graph.apply(c);
        a.model.apply(c);
        a.train.apply(c);
        c.output = Some(a.out.clone());
        set(&mut c.dataset, a.data.clone().map(Some));
    })?;
    let p = prepare(&dataset_dir(a.data.as_ref(), &cfg)?, &cfg)?;
    let modes: Vec<AblationMode> = match a.mode {
        ModeArg::Full => vec![AblationMode::Full],
        ModeArg::NoEntropyGraph => vec![AblationMode::NoEntropyGraph],
        ModeArg::NoDiffusion => vec![AblationMode::NoDiffusion],
        ModeArg::Coupled => vec![AblationMode::Coupled],
        ModeArg::All => AblationMode::ALL
            .into_iter()
            .filter(|&m| {
                let keep = m != AblationMode::NoEntropyGraph || p.static_graph.is_some();
                if !keep {
                    log::warn!("skipping no-entropy-graph: no static graph given");
                }
                keep
            })
            .collect(),
    };
    let fingerprint = cfg.fingerprint();
    let mut reports = Vec::new();
    for mode in modes {
        let (model, source) = ablation_setup(
            mode,
            &cfg.model_config(),
            &cfg.graph.graph_config(),
            p.static_graph.as_ref(),
        )?;
        let ds = samples(&p, &cfg, &source)?;
        let outcome = train(&ds.train, &ds.validation, &model, &cfg.train_config())?;
        if let StopReason::NonFinite { epoch, detail } = &outcome.stop {
            log::warn!(
                "{}: stopped at epoch {epoch} on non-finite {detail}",
                mode.name()
            );
        }
        let report = evaluate(&outcome.best, &ds.test, Split::Test, &fingerprint)?;
        write(
            &a.out.join(format!("ablation_{}.json", mode.name())),
            to_json(&report),
        )?;
        reports.push((mode.name(), report));
    }
    let rows: Vec<(&str, &EvalReport)> = reports.iter().map(|(n, r)| (*n, r)).collect();
    let table = reports_table(&rows);
    write(&a.out.join("ablation.txt"), &table)?;
    write(&a.out.join("run_config.json"), cfg.to_json())?;
    print!("{table}");
    Ok(())
}

fn cmd_dump_diffusion(a: &DumpArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let params: ModelParams = ck.params()?;
    if a.layer >= params.config.layers {
        let detail = format!("{} >= {} layers", a.layer, params.config.layers);
        return Err(dgdnn_core::Error::range("layer", detail).into());
    }
    let stack = DiffusionStack::realize(&params).ok_or_else(|| {
        CliError::Config("checkpoint has no learned diffusion (one-hop model)".into())
    })?;
    let q = stack.diffusion_matrix(a.layer);
    let l = a.layer;
    write(
        &a.out.join(format!("diffusion_l{l}.csv")),
        matrix_csv(&q, &ck.tickers),
    )?;
    write(
        &a.out.join(format!("diffusion_l{l}_normalized.csv")),
        matrix_csv(&q.min_max_normalized(), &ck.tickers),
    )?;
    if let (Some(data), Some(day)) = (&a.data, a.day) {
        let cfg = &ck.run_config;
        let (manifest, history) = load_dataset(data)?;
        ck.check_universe(&manifest)?;
        let t = day_index(&history, day)?;
        let source = match &ck.static_adjacency {
            Some(m) => GraphSource::Static(m.clone()),
            None => GraphSource::Entropy(cfg.graph.graph_config()),
        };
        let adjacency = match source {
            GraphSource::Static(m) => m,
            GraphSource::Entropy(g) => {
                build_adjacency(&make_window(&history, t, cfg.data.lookback)?, &g)?.matrix
            }
        };
        let qa = q.mul(&adjacency)?;
        write(
            &a.out.join(format!("propagation_l{l}_{day}.csv")),
            matrix_csv(&qa, &ck.tickers),
        )?;
        write(
            &a.out.join(format!("propagation_l{l}_{day}_normalized.csv")),
            matrix_csv(&qa.min_max_normalized(), &ck.tickers),
        )?;
    }
    Ok(())
}
