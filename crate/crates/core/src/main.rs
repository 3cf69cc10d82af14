use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rbf_approx::cli::{
    cmd_bench_blocks, cmd_error_map, cmd_eval_grid, cmd_fit, cmd_gen_synthetic, default_alpha,
    CliError, FitConfig, RamBudget, SelectSpec, SyntheticConfig, DEFAULT_RAM_BUDGET, EXIT_CONFIG,
    EXIT_OK,
};
use rbf_approx::ingest::{Delimiter, Surface, XyzFormat};
use rbf_approx::model::{KernelFamily, Rect};

#[derive(Parser)]
#[command(
    name = "rbf-approx",
    version,
    about = "Radial basis function approximation of large scattered height data"
)]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct FormatArgs {
    /// Field separator: `whitespace` or `comma`.
    #[arg(long, default_value = "whitespace")]
    delimiter: Delimiter,

    /// Lines starting with this character are skipped.
    #[arg(long, default_value_t = '#')]
    comment: char,
}

impl FormatArgs {
    fn format(&self) -> XyzFormat {
        XyzFormat {
            delimiter: self.delimiter,
            comment_prefix: self.comment,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// Point cloud with one `x y h` sample per line.
    #[arg(long)]
    input: PathBuf,

    #[command(flatten)]
    format: FormatArgs,

    #[arg(long, default_value = "wendland31")]
    kernel: KernelFamily,

    /// Shape parameter. Defaults to 0.05 for gaussian and 0.01 for wendland31,
    /// which suit data in feet over a few hundred feet; the St. Helens survey
    /// used 0.0004 and 0.0001.
    #[arg(long)]
    alpha: Option<f64>,

    /// Number of reference points M.
    #[arg(long, default_value_t = 10_000)]
    centers: usize,

    /// `grid`, `grid:RxC` or `random`.
    #[arg(long, default_value = "grid")]
    select: SelectSpec,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Panel width M_B; chosen from the memory budget when omitted.
    #[arg(long)]
    block_size: Option<usize>,

    /// Memory budget in bytes, or `auto` for the currently available memory.
    #[arg(long, default_value_t = DEFAULT_RAM_BUDGET.to_string())]
    ram_budget_bytes: String,

    /// Threads assembling blocks concurrently.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

impl FitArgs {
    fn config(&self, output: Option<PathBuf>, verbose: bool) -> Result<FitConfig, CliError> {
        let ram_budget = self
            .ram_budget_bytes
            .parse::<RamBudget>()
            .map_err(|source| CliError {
                stage: rbf_approx::cli::Stage::Config,
                source,
            })?;
        Ok(FitConfig {
            input: self.input.clone(),
            format: self.format.format(),
            kernel: self.kernel,
            alpha: self.alpha.unwrap_or_else(|| default_alpha(self.kernel)),
            centers: self.centers,
            select: self.select,
            seed: self.seed,
            block_size: self.block_size,
            ram_budget,
            workers: self.workers,
            output,
            verbose,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a point cloud and report its error.
    Fit {
        #[command(flatten)]
        fit: FitArgs,

        /// Where to save the fitted model.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write per-point errors of a saved model as CSV.
    ErrorMap {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        format: FormatArgs,
        #[arg(long)]
        output: PathBuf,
    },
    /// Evaluate a saved model on a regular grid.
    EvalGrid {
        #[arg(long)]
        model: PathBuf,
        /// `xmin,ymin,xmax,ymax`; defaults to the extent of the centers.
        #[arg(long, allow_hyphen_values = true)]
        bbox: Option<Rect>,
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Time the assembly for several block sizes.
    BenchBlocks {
        #[command(flatten)]
        fit: FitArgs,

        /// Comma separated panel widths.
        #[arg(long, value_delimiter = ',', required = true)]
        block_sizes: Vec<usize>,

        /// Block size whose time is the unit; defaults to the first.
        #[arg(long)]
        reference_block: Option<usize>,
    },
    /// Generate a synthetic point cloud.
    GenSynthetic {
        /// `smooth` or `crater-rim`.
        #[arg(long)]
        kind: Surface,
        #[arg(long)]
        count: usize,
        #[arg(long, allow_hyphen_values = true, default_value = "0,0,1000,1000")]
        bbox: Rect,
        /// Standard deviation of Gaussian noise added to the heights.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        format: FormatArgs,
        #[arg(long)]
        output: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Fit { fit, output } => {
            let config = fit.config(output, cli.verbose)?;
            cmd_fit(&config, &mut out)?;
        }
        Command::ErrorMap {
            model,
            input,
            format,
            output,
        } => cmd_error_map(&model, &input, &format.format(), &output)?,
        Command::EvalGrid {
            model,
            bbox,
            rows,
            cols,
            output,
        } => cmd_eval_grid(&model, bbox, rows, cols, &output)?,
        Command::BenchBlocks {
            fit,
            block_sizes,
            reference_block,
        } => {
            let config = fit.config(None, cli.verbose)?;
            cmd_bench_blocks(&config, &block_sizes, reference_block, &mut out)?;
        }
        Command::GenSynthetic {
            kind,
            count,
            bbox,
            noise,
            seed,
            format,
            output,
        } => {
            cmd_gen_synthetic(&SyntheticConfig {
                surface: kind,
                count,
                bbox,
                noise,
                seed,
                format: format.format(),
                output,
            })?;
        }
    }
    let _ = out.flush();
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK } as u8);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
