use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use robust_si::experiments::{run_fpr, run_hl_compare, run_tpr, SimConfig};
use robust_si::model::{Dataset, DetectionRule, EstimatorSpec};
use robust_si_cli::ingest::read_table;
use robust_si_cli::{
    cmd_analyze, emit_report, emit_table, read_sigma_file, AnalysisConfig, CliError, Format,
};

#[derive(Parser)]
#[command(
    name = "robust-si",
    version,
    about = "Selective inference for outliers detected by robust regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-instance p-values and intervals for the outliers detected in a CSV dataset.
    Analyze(AnalyzeArgs),
    /// False-positive rates under the null model.
    SimulateFpr(SimArgs),
    /// Power for a single shifted instance.
    SimulateTpr(TprArgs),
    /// Power against sign-conditioned Huberized-Lasso inference.
    CompareHl(HlArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorKind {
    Lad,
    Huber,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleKind {
    Threshold,
    Topk,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Json,
    Csv,
}

impl From<OutputFormat> for Format {
    fn from(f: OutputFormat) -> Self {
        match f {
            OutputFormat::Json => Format::Json,
            OutputFormat::Csv => Format::Csv,
        }
    }
}

#[derive(Args)]
struct MethodArgs {
    #[arg(long, value_enum, default_value = "lad")]
    estimator: EstimatorKind,
    /// Huber transition point.
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    #[arg(long, value_enum, default_value = "threshold")]
    rule: RuleKind,
    /// Residual magnitude threshold.
    #[arg(long, default_value_t = 1.0)]
    xi: f64,
    /// Number of largest residuals flagged by the top-K rule.
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Half-width of the working window in standard deviations of the test statistic.
    #[arg(long, default_value_t = 20.0)]
    window_mult: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "json")]
    format: OutputFormat,
}

impl MethodArgs {
    fn estimator(&self) -> Result<EstimatorSpec, CliError> {
        Ok(match self.estimator {
            EstimatorKind::Lad => EstimatorSpec::Lad,
            EstimatorKind::Huber => EstimatorSpec::huber(self.delta)?,
        })
    }

    fn rule(&self) -> Result<DetectionRule, CliError> {
        Ok(match self.rule {
            RuleKind::Threshold => DetectionRule::threshold(self.xi)?,
            RuleKind::Topk => DetectionRule::top_k(self.k)?,
        })
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Headed CSV file.
    data: PathBuf,
    /// Response column.
    #[arg(long)]
    response: String,
    /// Feature columns; defaults to every other column.
    #[arg(long, value_delimiter = ',')]
    features: Vec<String>,
    /// Do not prepend a column of ones.
    #[arg(long)]
    no_intercept: bool,
    /// Known noise variance.
    #[arg(long, conflicts_with = "sigma_file")]
    sigma2: Option<f64>,
    /// Noise covariance matrix, one row per line.
    #[arg(long)]
    sigma_file: Option<PathBuf>,
    #[command(flatten)]
    method: MethodArgs,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    p: usize,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[command(flatten)]
    method: MethodArgs,
}

#[derive(Args)]
struct TprArgs {
    /// Mean shift of the first instance.
    #[arg(long, default_value_t = 5.0)]
    shift: f64,
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Args)]
struct HlArgs {
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    p: usize,
    #[arg(long, default_value_t = 300)]
    trials: usize,
    /// Lasso penalty, also used as the Huber transition point and threshold.
    #[arg(long, default_value_t = 3.0)]
    lambda: f64,
    /// Number of shifted instances.
    #[arg(long, default_value_t = 10)]
    outliers: usize,
    #[arg(long, default_value_t = 2.0)]
    shift: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "json")]
    format: OutputFormat,
}

fn sim_config(args: &SimArgs) -> Result<SimConfig, CliError> {
    let m = &args.method;
    let mut cfg = SimConfig::null(
        args.n,
        args.p,
        m.estimator()?,
        m.rule()?,
        args.trials,
        m.seed,
    );
    cfg.sigma2 = args.sigma2;
    cfg.alpha = m.alpha;
    cfg.window_mult = m.window_mult;
    Ok(cfg)
}

fn analyze(args: &AnalyzeArgs) -> Result<Vec<u8>, CliError> {
    let file = std::fs::File::open(&args.data)
        .map_err(|e| CliError::Io(format!("cannot open {}: {e}", args.data.display())))?;
    let (x, y) = read_table(file, &args.response, &args.features, !args.no_intercept)?;
    let n = y.len();
    let sigma: DMatrix<f64> = match (&args.sigma_file, args.sigma2) {
        (Some(path), _) => read_sigma_file(path)?,
        (None, Some(s2)) => DMatrix::identity(n, n) * s2,
        (None, None) => {
            return Err(robust_si::Error::InvalidInput(
                "the noise variance is required: pass --sigma2 or --sigma-file".into(),
            )
            .into())
        }
    };
    let dataset = Dataset::new(x, y, sigma)?;
    let m = &args.method;
    let config = AnalysisConfig {
        estimator: m.estimator()?,
        rule: m.rule()?,
        alpha: m.alpha,
        window_mult: m.window_mult,
    };
    let reports = cmd_analyze(&config, &dataset)?;
    Ok(emit_report(&reports, m.format.into()))
}

fn run(cli: Cli) -> Result<Vec<u8>, CliError> {
    match cli.command {
        Command::Analyze(args) => analyze(&args),
        Command::SimulateFpr(args) => {
            let r = run_fpr(&sim_config(&args)?)?;
            Ok(emit_table(
                &[
                    ("trials", r.accepted as f64),
                    ("attempts", r.attempts as f64),
                    ("fpr_naive", r.fpr_naive),
                    ("fpr_bonferroni", r.fpr_bonferroni),
                    ("fpr_selective", r.fpr_selective),
                ],
                args.method.format.into(),
            ))
        }
        Command::SimulateTpr(args) => {
            let cfg = sim_config(&args.sim)?.with_shift(1, args.shift);
            let r = run_tpr(&cfg)?;
            Ok(emit_table(
                &[
                    ("trials", r.accepted as f64),
                    ("attempts", r.attempts as f64),
                    ("tpr_naive", r.tpr_naive),
                    ("tpr_bonferroni", r.tpr_bonferroni),
                    ("tpr_selective", r.tpr_selective),
                ],
                args.sim.method.format.into(),
            ))
        }
        Command::CompareHl(args) => {
            let mut cfg = SimConfig::null(
                args.n,
                args.p,
                EstimatorSpec::huber(args.lambda)?,
                DetectionRule::threshold(args.lambda)?,
                args.trials,
                args.seed,
            )
            .with_shift(args.outliers, args.shift);
            cfg.alpha = args.alpha;
            let r = run_hl_compare(&cfg, args.lambda)?;
            Ok(emit_table(
                &[
                    ("trials", r.matched as f64),
                    ("attempts", r.attempts as f64),
                    ("support_mismatches", r.mismatched as f64),
                    ("tpr_selective", r.tpr_selective),
                    ("tpr_hl", r.tpr_hl),
                    ("containment_failures", r.containment_failures as f64),
                ],
                args.format.into(),
            ))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(bytes) => {
            let mut out = std::io::stdout().lock();
            if out.write_all(&bytes).and_then(|_| out.flush()).is_err() {
                return ExitCode::from(3);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
