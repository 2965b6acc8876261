use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nbfusion::correlation::{sample_grid, SamplerOptions, ShiftDensityKind};
use nbfusion::harness::{self, ReportFormat};
use nbfusion::scenario::{solve_k, AlphaDistribution, AlphaMode};
use nbfusion::{
    naive_fuse_multi, naive_fuse_multi_all, naive_fuse_two, seed, Error, ExperimentConfig,
    PosteriorMatrix, PriorVector, SamplerMethod, UnitProb,
};

const SIGNIFICANT_DIGITS: i32 = 12;
const ALPHA_GRID_POINTS: usize = 100;

#[derive(Parser)]
#[command(
    name = "nbfusion",
    version,
    about = "Naive-Bayes classifier fusion and its Monte Carlo check"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse two posteriors that share a binary class prior.
    Fuse {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        theta: f64,
    },
    /// Fuse K feature posteriors over L classes.
    FuseMulti {
        /// JSON file `{"alphas": [[...], ...]}`, one row per class.
        #[arg(long)]
        matrix: PathBuf,
        /// Comma-separated class priors.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        priors: Vec<f64>,
        /// Class to report, 1-based.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        class: u64,
        /// Print every class posterior instead.
        #[arg(long)]
        all: bool,
    },
    /// Sample one correlation grid and write it as JSON.
    SampleModel {
        #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
        n: u64,
        #[arg(long, default_value = "sinkhorn")]
        method: SamplerMethod,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Shift density: uniform or random.
        #[arg(long, default_value = "uniform")]
        density: ShiftDensityKind,
        /// Hit-and-run steps; defaults to 100 n^2.
        #[arg(long)]
        burn_in: Option<usize>,
    },
    /// Run the optimality experiment and print the report.
    Verify(ExperimentArgs),
    /// Estimate DIS and Const for the naive combiner.
    Dis(ExperimentArgs),
    /// Print K, the normalizer and the alpha density for a prior.
    AlphaDist {
        #[arg(long)]
        theta: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    n: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    method: Option<SamplerMethod>,
    #[arg(long)]
    alpha_mode: Option<AlphaMode>,
    #[arg(long)]
    density: Option<ShiftDensityKind>,
    #[arg(long)]
    format: Option<FormatArg>,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Domain(String),
    Usage(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Domain(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Domain(m) | Failure::Usage(m) | Failure::Io(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::ConfigInvalid(_) => Failure::Usage(e.to_string()),
            _ => Failure::Domain(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

/// `x` with 12 significant digits and no trailing zeros.
fn fmt_sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (SIGNIFICANT_DIGITS - 1 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(command: Command) -> Result<u8, Failure> {
    match command {
        Command::Fuse { alpha, beta, theta } => {
            let g = naive_fuse_two(
                UnitProb::named("alpha", alpha)?,
                UnitProb::named("beta", beta)?,
                UnitProb::named("theta", theta)?,
            )?;
            println!("{}", fmt_sig(g.get()));
            Ok(0)
        }
        Command::FuseMulti {
            matrix,
            priors,
            class,
            all,
        } => {
            let text = fs::read_to_string(&matrix).map_err(|e| io_failure(&matrix, e))?;
            let m: PosteriorMatrix = serde_json::from_str(&text)
                .map_err(|e| Failure::Domain(format!("{}: {e}", matrix.display())))?;
            let priors = PriorVector::new(priors)?;
            if all {
                for v in naive_fuse_multi_all(&m, &priors)? {
                    println!("{}", fmt_sig(v));
                }
            } else {
                let g = naive_fuse_multi(&m, &priors, class as usize - 1)?;
                println!("{}", fmt_sig(g.get()));
            }
            Ok(0)
        }
        Command::SampleModel {
            n,
            method,
            seed: s,
            out,
            density,
            burn_in,
        } => {
            let opts = SamplerOptions {
                hitrun_burn_in: burn_in,
                shift_density: density,
            };
            let grid = sample_grid(method, n as usize, &opts, &mut seed::rng(s))?;
            let residual = grid.validate(1e-9).max_violation;
            match out {
                Some(path) => {
                    write_to(&path, |w| harness::write_json(&grid, w))?;
                    println!("residual {}", fmt_sig(residual));
                }
                None => {
                    harness::write_json(&grid, io::stdout().lock())
                        .map_err(|e| Failure::Io(e.to_string()))?;
                    eprintln!("residual {}", fmt_sig(residual));
                }
            }
            Ok(0)
        }
        Command::Verify(args) => {
            let config = experiment_config(&args)?;
            let report = harness::run_verification(&config)?;
            eprintln!(
                "verdict: {} (naive mean {}, {} trials, {:.1}s)",
                if report.verdict.passed {
                    "pass"
                } else {
                    "fail"
                },
                report
                    .summary(nbfusion::CombinerId::Naive)
                    .map_or("n/a".into(), |s| fmt_sig(s.mean)),
                config.trials,
                report.wall_clock_seconds
            );
            match config.format {
                ReportFormat::Json => emit(&config, |w| harness::write_json(&report, w))?,
                ReportFormat::Csv => {
                    let combiners = harness::combiners_csv(&report)?;
                    let pointwise = harness::pointwise_csv(&report.pointwise)?;
                    match &config.output_path {
                        Some(path) => {
                            let path = PathBuf::from(path);
                            write_to(&path, |w| w.write_all(combiners.as_bytes()))?;
                            let companion = pointwise_path(&path);
                            write_to(&companion, |w| w.write_all(pointwise.as_bytes()))?;
                        }
                        None => print!("{combiners}\n{pointwise}"),
                    }
                }
            }
            Ok(if report.verdict.passed { 0 } else { 1 })
        }
        Command::Dis(args) => {
            let config = experiment_config(&args)?;
            let report = harness::run_dis(&config)?;
            match config.format {
                ReportFormat::Json => emit(&config, |w| harness::write_json(&report, w))?,
                ReportFormat::Csv => {
                    let csv = harness::dis_csv(&report)?;
                    emit(&config, |w| w.write_all(csv.as_bytes()))?;
                }
            }
            Ok(0)
        }
        Command::AlphaDist { theta } => {
            let t = UnitProb::named("theta", theta)?;
            let k = solve_k(t, 1e-10)?;
            let dist = AlphaDistribution::from_k(k);
            let mut out = io::stdout().lock();
            let mut body = format!(
                "# theta={}\n# k={}\n# normalizer={}\nalpha,density\n",
                fmt_sig(theta),
                fmt_sig(k),
                fmt_sig(dist.norm)
            );
            for i in 0..ALPHA_GRID_POINTS {
                let a = i as f64 / (ALPHA_GRID_POINTS - 1) as f64;
                body.push_str(&format!("{},{}\n", fmt_sig(a), fmt_sig(dist.density(a))));
            }
            out.write_all(body.as_bytes())
                .map_err(|e| Failure::Io(e.to_string()))?;
            Ok(0)
        }
    }
}

fn experiment_config(args: &ExperimentArgs) -> Result<ExperimentConfig, Failure> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(v) = args.theta {
        config.theta = v;
    }
    if let Some(v) = args.n {
        config.n = v as usize;
    }
    if let Some(v) = args.trials {
        config.trials = v;
    }
    if let Some(v) = args.seed {
        config.master_seed = v;
    }
    if let Some(v) = args.method {
        config.j_sampler = v;
    }
    if let Some(v) = args.alpha_mode {
        config.alpha_mode = v;
    }
    if let Some(v) = args.density {
        config.shift_density = v;
    }
    if let Some(v) = args.format {
        config.format = match v {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
        };
    }
    if let Some(v) = &args.out {
        config.output_path = Some(v.display().to_string());
    }
    config.validate()?;
    Ok(config)
}

/// `report.csv` -> `report.pointwise.csv`.
fn pointwise_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map_or("report".into(), |s| s.to_string_lossy());
    let ext = path
        .extension()
        .map_or("csv".into(), |s| s.to_string_lossy());
    path.with_file_name(format!("{stem}.pointwise.{ext}"))
}

fn write_to(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
) -> Result<(), Failure> {
    let file = File::create(path).map_err(|e| io_failure(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| io_failure(path, e))
}

fn emit(
    config: &ExperimentConfig,
    f: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Result<(), Failure> {
    match &config.output_path {
        Some(path) => write_to(Path::new(path), |w| f(w)),
        None => f(&mut io::stdout().lock()).map_err(|e| Failure::Io(e.to_string())),
    }
}
