//! Command-line front end for the load clustering pipeline.
//!
//! `extract` turns readings into AC/PAC/QC feature matrices, `cluster` builds
//! dissimilarities and dendrograms, `evaluate` compares and profiles the
//! partitions and `importance` explains them with a decision tree. `synth`
//! writes a labelled synthetic population. Each stage reads the previous
//! stage's files from `--out DIR` and adds its own.

use std::ffi::OsString;
use std::panic::AssertUnwindSafe;
use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use loadclust::features::FeatureKind;
use loadclust::hclust::{CutCriterion, Linkage};

pub mod commands;
pub mod config;
mod failure;
pub mod manifest;

pub use config::PipelineConfig;
pub use failure::Failure;

use config::{ImportanceMode, ZeroPolicyName};

#[derive(Debug, Parser)]
#[command(name = "loadclust", version, about = "Cluster smart-meter load series by their serial dependence")]
pub struct Cli {
    /// Worker threads (default: one per core). Outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Log more (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse readings and write AC, PAC and QC feature matrices.
    Extract(ExtractArgs),
    /// Build dissimilarities, agglomerate and cut.
    Cluster(ClusterArgs),
    /// ARI between methods, contingency tables, chi-squared, medoids, feature means.
    Evaluate(EvaluateArgs),
    /// Decision-tree feature importance and CV misclassification.
    Importance(ImportanceArgs),
    /// Write a labelled synthetic population of load series.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Output directory; later stages read earlier stages' files from here.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,

    /// Flat TOML config. Defaults to DIR/config.toml when present.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Ac,
    Pac,
    Qc,
    All,
}

fn expand_methods(methods: &[MethodArg]) -> Option<Vec<FeatureKind>> {
    if methods.is_empty() {
        return None;
    }
    let mut kinds = Vec::new();
    for m in methods {
        match m {
            MethodArg::Ac => kinds.push(FeatureKind::Ac),
            MethodArg::Pac => kinds.push(FeatureKind::Pac),
            MethodArg::Qc => kinds.push(FeatureKind::Qc),
            MethodArg::All => kinds.extend(FeatureKind::ALL),
        }
    }
    kinds.sort();
    kinds.dedup();
    Some(kinds)
}

#[derive(Debug, Clone, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Readings CSV with header meter_id,timestamp,kwh[,acorn_group].
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,

    /// Seasonal period in half-hour slots.
    #[arg(long)]
    pub period: Option<usize>,

    #[arg(long, value_enum)]
    pub zero_policy: Option<ZeroPolicyName>,

    /// Floor in kWh used by `--zero-policy floor`.
    #[arg(long)]
    pub zero_floor: Option<f64>,

    /// Longest run of missing slots filled by interpolation.
    #[arg(long)]
    pub max_gap: Option<usize>,

    /// Series with a larger share of missing slots are discarded.
    #[arg(long)]
    pub missing_threshold: Option<f64>,

    #[arg(long)]
    pub max_drop_fraction: Option<f64>,

    /// Number of AC/PAC lags.
    #[arg(long)]
    pub k_max: Option<usize>,

    /// Choose the number of lags by BIC over AR orders up to `--p-max`.
    #[arg(long)]
    pub select_k: bool,

    #[arg(long)]
    pub p_max: Option<usize>,

    #[arg(long, value_delimiter = ',')]
    pub qc_lags: Option<Vec<usize>>,

    #[arg(long, value_delimiter = ',')]
    pub qc_quantiles: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Feature sets to cluster (default: all).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub method: Vec<MethodArg>,

    #[arg(long)]
    pub linkage: Option<Linkage>,

    /// Cut for every selected method: `k=N` or `height=H`.
    #[arg(long)]
    pub cut: Option<CutCriterion>,

    #[arg(long)]
    pub cut_ac: Option<CutCriterion>,

    #[arg(long)]
    pub cut_pac: Option<CutCriterion>,

    #[arg(long)]
    pub cut_qc: Option<CutCriterion>,

    /// Clusters smaller than this share of all series are atypical.
    #[arg(long)]
    pub atypical_fraction: Option<f64>,

    /// Z-score each feature column before computing distances.
    #[arg(long)]
    pub standardize: bool,

    /// Keep the dissimilarity matrix as a binary file.
    #[arg(long)]
    pub persist_matrix: bool,

    /// Build the matrix in a memory-mapped file above this many series.
    #[arg(long)]
    pub matrix_disk_cap: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Partitions to evaluate (default: every one present).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub method: Vec<MethodArg>,

    /// Keep atypical clusters in every report.
    #[arg(long)]
    pub include_atypical: bool,

    /// Report medoid profiles per hour instead of per half hour.
    #[arg(long)]
    pub hourly: bool,

    /// Skip contingency tables and chi-squared tests.
    #[arg(long)]
    pub no_chi_squared: bool,

    /// Accept inputs produced under different configurations.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ImportanceArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Partitions to explain (default: every one present).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub method: Vec<MethodArg>,

    #[arg(long)]
    pub max_depth: Option<usize>,

    #[arg(long)]
    pub min_leaf: Option<usize>,

    #[arg(long)]
    pub min_impurity_decrease: Option<f64>,

    #[arg(long)]
    pub folds: Option<usize>,

    #[arg(long, value_enum)]
    pub importance_mode: Option<ImportanceMode>,

    /// Accept inputs produced under different configurations.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    #[arg(long)]
    pub series: Option<usize>,

    #[arg(long)]
    pub days: Option<usize>,

    /// Innovation standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,

    /// Probability of dropping each reading.
    #[arg(long)]
    pub missing_rate: Option<f64>,

    /// Share of series replaced by a constant load.
    #[arg(long)]
    pub degenerate_fraction: Option<f64>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl ExtractArgs {
    fn apply(&self, c: &mut PipelineConfig) {
        set(&mut c.input, self.input.clone().map(Some));
        set(&mut c.period, self.period);
        set(&mut c.zero_policy, self.zero_policy);
        set(&mut c.zero_floor, self.zero_floor);
        set(&mut c.max_gap, self.max_gap);
        set(&mut c.missing_threshold, self.missing_threshold);
        set(&mut c.max_drop_fraction, self.max_drop_fraction);
        set(&mut c.k_max, self.k_max);
        c.select_k |= self.select_k;
        set(&mut c.p_max, self.p_max);
        set(&mut c.qc_lags, self.qc_lags.clone());
        set(&mut c.qc_quantiles, self.qc_quantiles.clone());
    }
}

impl ClusterArgs {
    fn apply(&self, c: &mut PipelineConfig) {
        set(&mut c.linkage, self.linkage);
        let kinds = expand_methods(&self.method).unwrap_or(FeatureKind::ALL.to_vec());
        if self.cut.is_some() {
            for kind in kinds {
                match kind {
                    FeatureKind::Ac => c.cut_ac = self.cut,
                    FeatureKind::Pac => c.cut_pac = self.cut,
                    FeatureKind::Qc => c.cut_qc = self.cut,
                }
            }
        }
        set(&mut c.cut_ac, self.cut_ac.map(Some));
        set(&mut c.cut_pac, self.cut_pac.map(Some));
        set(&mut c.cut_qc, self.cut_qc.map(Some));
        set(&mut c.atypical_fraction, self.atypical_fraction);
        c.standardize |= self.standardize;
        c.persist_matrix |= self.persist_matrix;
        set(&mut c.matrix_disk_cap, self.matrix_disk_cap);
    }
}

impl EvaluateArgs {
    fn apply(&self, c: &mut PipelineConfig) {
        c.include_atypical |= self.include_atypical;
        c.hourly_profiles |= self.hourly;
        if self.no_chi_squared {
            c.chi_squared = false;
        }
    }
}

impl ImportanceArgs {
    fn apply(&self, c: &mut PipelineConfig) {
        set(&mut c.tree_max_depth, self.max_depth);
        set(&mut c.tree_min_leaf, self.min_leaf);
        set(&mut c.tree_min_impurity_decrease, self.min_impurity_decrease);
        set(&mut c.cv_folds, self.folds);
        set(&mut c.importance_mode, self.importance_mode);
    }
}

impl SynthArgs {
    fn apply(&self, c: &mut PipelineConfig) {
        set(&mut c.synth_series, self.series);
        set(&mut c.synth_days, self.days);
        set(&mut c.synth_sigma, self.sigma);
        set(&mut c.synth_missing_rate, self.missing_rate);
        set(&mut c.synth_degenerate_fraction, self.degenerate_fraction);
    }
}

/// Base config from `--config`, else `DIR/config.toml`, else defaults; then
/// flag overrides.
fn resolve_config(common: &CommonArgs, apply: impl FnOnce(&mut PipelineConfig)) -> Result<PipelineConfig, Failure> {
    let kept = common.out.join(config::CONFIG_FILE);
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None if kept.exists() => PipelineConfig::load(&kept)?,
        None => PipelineConfig::default(),
    };
    cfg.out = Some(common.out.clone());
    set(&mut cfg.seed, common.seed);
    apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Extract(a) => commands::extract::run(&resolve_config(&a.common, |c| a.apply(c))?),
        Command::Cluster(a) => {
            let cfg = resolve_config(&a.common, |c| a.apply(c))?;
            commands::cluster::run(&cfg, expand_methods(&a.method).unwrap_or(FeatureKind::ALL.to_vec()))
        }
        Command::Evaluate(a) => {
            let cfg = resolve_config(&a.common, |c| a.apply(c))?;
            commands::evaluate::run(&cfg, expand_methods(&a.method), a.force)
        }
        Command::Importance(a) => {
            let cfg = resolve_config(&a.common, |c| a.apply(c))?;
            commands::importance::run(&cfg, expand_methods(&a.method), a.force)
        }
        Command::Synth(a) => commands::synth::run(&resolve_config(&a.common, |c| a.apply(c))?),
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(cli.verbose);
    if cli.threads == Some(0) {
        eprintln!("error: --threads must be at least 1");
        return 1;
    }

    let command = cli.command;
    let outcome = std::panic::catch_unwind(AssertUnwindSafe(move || match cli.threads {
        Some(t) => loadclust::par::with_threads(t, move || execute(command)),
        None => execute(command),
    }));
    match outcome {
        Ok(Ok(())) => 0,
        Ok(Err(f)) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .map(String::as_str)
                .or_else(|| panic.downcast_ref::<&str>().copied())
                .unwrap_or("panic");
            eprintln!("error: {}", Failure::Internal(msg.to_string()));
            3
        }
    }
}
