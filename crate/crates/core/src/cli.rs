//! The subcommands behind the `rbf-approx` binary.
//!
//! Each command takes an already-parsed configuration and writes its human
//! readable report to a caller-supplied sink, so the same code runs from the
//! binary and from tests. Errors carry the pipeline stage they came from and
//! map onto the process exit codes.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};

use crate::assembly::{
    assemble_instrumented, assemble_normal_system, dense_design_matrix_bytes, plan_blocks,
    BlockPlan, NormalSystem, F64_BYTES,
};
use crate::error::Error;
use crate::evaluate::{
    boundary_profile, error_report, eval_grid, export_error_map, load_model, save_model,
    ErrorReport,
};
use crate::ingest::{
    generate_synthetic, load_xyz, select_reference_points, write_xyz, SelectionStrategy, Surface,
    XyzFormat,
};
use crate::model::{Kernel, KernelFamily, PointCloud, Rect};
use crate::solver::{default_lambda_schedule, solve_normal, FitModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Default memory budget: 1 GiB.
pub const DEFAULT_RAM_BUDGET: u64 = 1 << 30;

/// Relative tolerance for Gram matrices from different block sizes.
pub const BENCH_AGREEMENT: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Config,
    Load,
    Select,
    Plan,
    Assemble,
    Solve,
    Evaluate,
    Write,
    Bench,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Select => "select",
            Stage::Plan => "plan",
            Stage::Assemble => "assemble",
            Stage::Solve => "solve",
            Stage::Evaluate => "evaluate",
            Stage::Write => "write",
            Stage::Bench => "bench",
        })
    }
}

#[derive(Debug)]
pub struct CliError {
    pub stage: Stage,
    pub source: Error,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for CliError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self.source {
            Error::Parse { .. } | Error::NoPoints | Error::File { .. } | Error::Io(_) => EXIT_IO,
            Error::SolverExhausted { .. } => EXIT_NUMERICAL,
            _ if self.stage == Stage::Bench => EXIT_NUMERICAL,
            _ => EXIT_CONFIG,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

trait AtStage<T> {
    fn at(self, stage: Stage) -> CliResult<T>;
}

impl<T> AtStage<T> for crate::Result<T> {
    fn at(self, stage: Stage) -> CliResult<T> {
        self.map_err(|source| CliError { stage, source })
    }
}

fn file_error(path: &Path, source: std::io::Error) -> Error {
    Error::File {
        path: path.to_path_buf(),
        source,
    }
}

fn open(path: &Path) -> crate::Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| file_error(path, e))
}

fn create(path: &Path) -> crate::Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| file_error(path, e))
}

pub fn read_cloud(path: &Path, format: &XyzFormat) -> crate::Result<PointCloud> {
    load_xyz(open(path)?, format).map_err(|e| match e {
        Error::Io(source) => file_error(path, source),
        other => other,
    })
}

/// How centers are picked, before the seed is attached.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectSpec {
    /// `grid:RxC`; plain `grid` asks for a square grid.
    Grid(Option<(usize, usize)>),
    Random,
}

impl FromStr for SelectSpec {
    type Err = Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        if s == "random" {
            return Ok(SelectSpec::Random);
        }
        if s == "grid" {
            return Ok(SelectSpec::Grid(None));
        }
        let shape = s
            .strip_prefix("grid:")
            .and_then(|rc| rc.split_once(['x', 'X']))
            .and_then(|(r, c)| Some((r.parse().ok()?, c.parse().ok()?)));
        match shape {
            Some(rc) => Ok(SelectSpec::Grid(Some(rc))),
            None => Err(Error::invalid(
                "selection",
                format!("`{s}` (expected `grid`, `grid:RxC` or `random`)"),
            )),
        }
    }
}

impl SelectSpec {
    pub fn strategy(self, m: usize, seed: u64) -> crate::Result<SelectionStrategy> {
        match self {
            SelectSpec::Random => Ok(SelectionStrategy::UniformRandom { seed }),
            SelectSpec::Grid(Some((rows, cols))) => {
                if rows.checked_mul(cols) != Some(m) {
                    return Err(Error::invalid(
                        "selection",
                        format!("grid {rows}x{cols} does not hold {m} centers"),
                    ));
                }
                Ok(SelectionStrategy::UniformGridSubset { rows, cols })
            }
            SelectSpec::Grid(None) => {
                let side = (m as f64).sqrt().round() as usize;
                if side * side != m {
                    return Err(Error::invalid(
                        "selection",
                        format!("{m} centers is not a square; use grid:RxC"),
                    ));
                }
                Ok(SelectionStrategy::UniformGridSubset {
                    rows: side,
                    cols: side,
                })
            }
        }
    }
}

/// Memory budget: an explicit byte count or the available memory reported by
/// the operating system.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RamBudget {
    Bytes(u64),
    Detect,
}

impl FromStr for RamBudget {
    type Err = Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        if s == "auto" {
            return Ok(RamBudget::Detect);
        }
        s.parse::<u64>()
            .ok()
            .filter(|&b| b > 0)
            .map(RamBudget::Bytes)
            .ok_or_else(|| {
                Error::invalid("ram budget", format!("`{s}` is not a positive byte count"))
            })
    }
}

impl RamBudget {
    pub fn resolve(self) -> crate::Result<u64> {
        match self {
            RamBudget::Bytes(b) => Ok(b),
            RamBudget::Detect => detect_available_memory(),
        }
    }
}

fn detect_available_memory() -> crate::Result<u64> {
    let path = Path::new("/proc/meminfo");
    let text = std::fs::read_to_string(path).map_err(|e| file_error(path, e))?;
    text.lines()
        .find_map(|line| {
            let rest = line.strip_prefix("MemAvailable:")?;
            let kib: u64 = rest.trim().trim_end_matches("kB").trim().parse().ok()?;
            Some(kib * 1024)
        })
        .ok_or_else(|| Error::invalid("ram budget", "MemAvailable not found in /proc/meminfo"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub input: PathBuf,
    pub format: XyzFormat,
    pub kernel: KernelFamily,
    pub alpha: f64,
    pub centers: usize,
    pub select: SelectSpec,
    pub seed: u64,
    pub block_size: Option<usize>,
    pub ram_budget: RamBudget,
    pub workers: usize,
    pub output: Option<PathBuf>,
    pub verbose: bool,
}

impl FitConfig {
    /// A configuration with the command-line defaults for `input`.
    pub fn new(input: impl Into<PathBuf>) -> Self {
        FitConfig {
            input: input.into(),
            format: XyzFormat::default(),
            kernel: KernelFamily::Wendland31,
            alpha: default_alpha(KernelFamily::Wendland31),
            centers: 10_000,
            select: SelectSpec::Grid(None),
            seed: 0,
            block_size: None,
            ram_budget: RamBudget::Bytes(DEFAULT_RAM_BUDGET),
            workers: 1,
            output: None,
            verbose: false,
        }
    }

    /// Checks everything that does not need the input file.
    pub fn validate(&self) -> crate::Result<Kernel> {
        let kernel = Kernel::new(self.kernel, self.alpha)?;
        if self.centers == 0 {
            return Err(Error::invalid("center count", "M must be at least 1"));
        }
        if self.workers == 0 {
            return Err(Error::invalid("workers", "need at least one worker"));
        }
        self.select.strategy(self.centers, self.seed)?;
        Ok(kernel)
    }
}

/// Shape parameters tuned for the Serpent Mound LiDAR survey (coordinates in
/// feet). They depend on the extent of the data: the St. Helens survey used
/// 0.0004 (Gaussian) and 0.0001 (Wendland).
pub fn default_alpha(family: KernelFamily) -> f64 {
    match family {
        KernelFamily::Gaussian => 0.05,
        KernelFamily::Wendland31 => 0.01,
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub model: FitModel,
    pub plan: BlockPlan,
    pub report: ErrorReport,
    pub empty_cells: usize,
    pub uncovered_points: usize,
}

struct Prepared {
    cloud: PointCloud,
    kernel: Kernel,
    selection: crate::ingest::Selection,
    ram_budget: u64,
}

fn prepare(config: &FitConfig) -> CliResult<Prepared> {
    let kernel = config.validate().at(Stage::Config)?;
    let strategy = config
        .select
        .strategy(config.centers, config.seed)
        .at(Stage::Config)?;
    let ram_budget = config.ram_budget.resolve().at(Stage::Config)?;
    let cloud = read_cloud(&config.input, &config.format).at(Stage::Load)?;
    info!(
        "loaded {} points from {}",
        cloud.len(),
        config.input.display()
    );
    let selection = select_reference_points(&cloud, config.centers, strategy).at(Stage::Select)?;
    Ok(Prepared {
        cloud,
        kernel,
        selection,
        ram_budget,
    })
}

fn write_plan(out: &mut dyn Write, plan: &BlockPlan) -> crate::Result<()> {
    let dense = dense_design_matrix_bytes(plan.n as u64, plan.m as u64, plan.prec as u64)?;
    writeln!(out, "points N: {}", plan.n)?;
    writeln!(out, "centers M: {}", plan.m)?;
    writeln!(
        out,
        "block size M_B: {} ({} panels, last panel width {})",
        plan.block_size, plan.num_panels, plan.last_panel_width
    )?;
    writeln!(out, "workers: {}", plan.workers)?;
    writeln!(
        out,
        "panel working set: {} bytes of {} budget",
        plan.working_set_bytes(),
        plan.ram_budget
    )?;
    writeln!(out, "gram matrix: {} bytes", plan.gram_bytes())?;
    writeln!(
        out,
        "dense design matrix (not built): {} bytes ({:.2} GiB)",
        dense,
        dense as f64 / (1u64 << 30) as f64
    )?;
    Ok(())
}

fn write_report(out: &mut dyn Write, report: &ErrorReport, verbose: bool) -> crate::Result<()> {
    writeln!(out, "mean absolute error: {}", report.mean_abs_error)?;
    writeln!(out, "deviation of error: {}", report.error_deviation)?;
    match report.mean_rel_error {
        Some(rel) => writeln!(out, "mean relative error: {rel} (fraction)")?,
        None => writeln!(out, "mean relative error: undefined")?,
    }
    writeln!(out, "max absolute error: {}", report.max_abs_error)?;
    if verbose {
        writeln!(
            out,
            "signed error deviation: {}",
            report.signed_error_deviation
        )?;
        writeln!(out, "relative error exclusions: {}", report.rel_excluded)?;
    }
    Ok(())
}

/// load, select, plan, assemble, solve, report, save.
pub fn cmd_fit(config: &FitConfig, out: &mut dyn Write) -> CliResult<FitOutcome> {
    let Prepared {
        cloud,
        kernel,
        selection,
        ram_budget,
    } = prepare(config)?;
    let m = selection.refs.len();
    let plan = plan_blocks(
        cloud.len(),
        m,
        ram_budget,
        F64_BYTES,
        config.block_size,
        config.workers,
    )
    .at(Stage::Plan)?;
    write_plan(out, &plan).at(Stage::Write)?;
    if selection.empty_cells() > 0 {
        writeln!(out, "empty grid cells: {}", selection.empty_cells())
            .map_err(Error::from)
            .at(Stage::Write)?;
    }

    let started = Instant::now();
    let system = assemble_normal_system(&cloud, &selection.refs, &kernel, &plan, None)
        .at(Stage::Assemble)?;
    info!("assembly took {:.3} s", started.elapsed().as_secs_f64());
    let uncovered = system.coverage.uncovered_points.len();
    if uncovered > 0 {
        warn!("{uncovered} points lie outside every kernel support");
    }

    let started = Instant::now();
    let weights = solve_normal(&system, &default_lambda_schedule(&system)).at(Stage::Solve)?;
    info!("solve took {:.3} s", started.elapsed().as_secs_f64());
    drop(system);
    let lambda = weights.lambda;
    let model = FitModel::new(kernel, selection.refs.clone(), weights).at(Stage::Solve)?;
    let report = error_report(&model, &cloud, &plan).at(Stage::Evaluate)?;

    (|| -> crate::Result<()> {
        writeln!(out, "regularization lambda: {lambda}")?;
        writeln!(out, "uncovered points: {uncovered}")?;
        write_report(out, &report, config.verbose)?;
        if config.verbose {
            if let Some(abs) = &report.per_point {
                let prof = boundary_profile(&cloud, abs, 0.1);
                writeln!(
                    out,
                    "boundary mean absolute error: {} ({} points in the outer 10%)",
                    prof.boundary_mean_abs_error, prof.boundary_points
                )?;
                writeln!(
                    out,
                    "interior mean absolute error: {} ({} points)",
                    prof.interior_mean_abs_error, prof.interior_points
                )?;
            }
        }
        Ok(())
    })()
    .at(Stage::Write)?;

    if let Some(path) = &config.output {
        let sink = create(path).at(Stage::Write)?;
        save_model(&model, sink).at(Stage::Write)?;
    }
    Ok(FitOutcome {
        model,
        plan,
        report,
        empty_cells: selection.empty_cells(),
        uncovered_points: uncovered,
    })
}

pub fn cmd_error_map(
    model_path: &Path,
    cloud_path: &Path,
    format: &XyzFormat,
    out_path: &Path,
) -> CliResult<()> {
    let model = open(model_path).and_then(load_model).at(Stage::Load)?;
    let cloud = read_cloud(cloud_path, format).at(Stage::Load)?;
    let sink = create(out_path).at(Stage::Write)?;
    export_error_map(&model, &cloud, sink).at(Stage::Write)
}

/// Rasterizes a model over `bbox`, or over the extent of its centers.
pub fn cmd_eval_grid(
    model_path: &Path,
    bbox: Option<Rect>,
    rows: usize,
    cols: usize,
    out_path: &Path,
) -> CliResult<()> {
    let model = open(model_path).and_then(load_model).at(Stage::Load)?;
    let bbox = match bbox {
        Some(b) => b,
        None => {
            let c = model.centers();
            let fold =
                |f: fn(f64, f64) -> f64, init: f64, get: fn(&crate::model::Point2) -> f64| {
                    c.iter().map(get).fold(init, f)
                };
            Rect::new(
                fold(f64::min, f64::INFINITY, |p| p.x),
                fold(f64::min, f64::INFINITY, |p| p.y),
                fold(f64::max, f64::NEG_INFINITY, |p| p.x),
                fold(f64::max, f64::NEG_INFINITY, |p| p.y),
            )
            .at(Stage::Config)?
        }
    };
    let grid = eval_grid(&model, &bbox, rows, cols).at(Stage::Config)?;
    let sink = create(out_path).at(Stage::Write)?;
    grid.write_csv(sink).at(Stage::Write)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchRow {
    pub block_size: usize,
    pub num_panels: usize,
    pub wall_seconds: f64,
    pub relative_time: f64,
}

pub const BENCH_HEADER: &str = "block_size,num_panels,wall_seconds,relative_time";

/// Times the assembly alone for each block size and writes a CSV table with
/// times relative to `reference_block` (default: the first size).
pub fn cmd_bench_blocks(
    config: &FitConfig,
    block_sizes: &[usize],
    reference_block: Option<usize>,
    out: &mut dyn Write,
) -> CliResult<Vec<BenchRow>> {
    if block_sizes.is_empty() {
        return Err(Error::invalid("block sizes", "list is empty")).at(Stage::Config);
    }
    let reference = reference_block.unwrap_or(block_sizes[0]);
    let reference_index = block_sizes
        .iter()
        .position(|&b| b == reference)
        .ok_or_else(|| {
            Error::invalid(
                "reference block",
                format!("{reference} is not among the benchmarked sizes"),
            )
        })
        .at(Stage::Config)?;

    let Prepared {
        cloud,
        kernel,
        selection,
        ram_budget,
    } = prepare(config)?;
    let m = selection.refs.len();
    let plans = block_sizes
        .iter()
        .map(|&mb| {
            plan_blocks(
                cloud.len(),
                m,
                ram_budget,
                F64_BYTES,
                Some(mb),
                config.workers,
            )
        })
        .collect::<crate::Result<Vec<_>>>()
        .at(Stage::Plan)?;

    let mut first: Option<NormalSystem> = None;
    let mut times = Vec::with_capacity(plans.len());
    for plan in &plans {
        let started = Instant::now();
        let (system, stats) = assemble_instrumented(&cloud, &selection.refs, &kernel, plan, None)
            .at(Stage::Assemble)?;
        let elapsed = started.elapsed().as_secs_f64();
        info!(
            "M_B={} took {elapsed:.4} s over {} block products",
            plan.block_size, stats.block_products
        );
        times.push(elapsed);
        match &first {
            None => first = Some(system),
            Some(base) => {
                let worst = max_relative_difference(base, &system);
                if worst > BENCH_AGREEMENT {
                    return Err(Error::invalid(
                        "gram agreement",
                        format!(
                            "M_B={} differs from M_B={} by {worst:e} relative",
                            plan.block_size, plans[0].block_size
                        ),
                    ))
                    .at(Stage::Bench);
                }
            }
        }
    }

    let t_ref = times[reference_index];
    let rows: Vec<BenchRow> = plans
        .iter()
        .zip(&times)
        .enumerate()
        .map(|(i, (plan, &t))| BenchRow {
            block_size: plan.block_size,
            num_panels: plan.num_panels,
            wall_seconds: t,
            relative_time: if i == reference_index { 1.0 } else { t / t_ref },
        })
        .collect();

    (|| -> crate::Result<()> {
        writeln!(out, "{BENCH_HEADER}")?;
        for r in &rows {
            writeln!(
                out,
                "{},{},{},{}",
                r.block_size, r.num_panels, r.wall_seconds, r.relative_time
            )?;
        }
        out.flush()?;
        Ok(())
    })()
    .at(Stage::Write)?;
    Ok(rows)
}

/// Largest entrywise `|a - b| / max(|a|, |b|)` over `B` and `d`; entries that
/// are both zero count as equal.
pub fn max_relative_difference(a: &NormalSystem, b: &NormalSystem) -> f64 {
    assert_eq!(a.m(), b.m());
    let rel = |x: f64, y: f64| {
        let scale = x.abs().max(y.abs());
        if scale == 0.0 {
            0.0
        } else {
            (x - y).abs() / scale
        }
    };
    a.gram()
        .iter()
        .zip(b.gram())
        .chain(a.rhs().iter().zip(b.rhs()))
        .map(|(&x, &y)| rel(x, y))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub surface: Surface,
    pub count: usize,
    pub bbox: Rect,
    pub noise: f64,
    pub seed: u64,
    pub format: XyzFormat,
    pub output: PathBuf,
}

pub fn cmd_gen_synthetic(config: &SyntheticConfig) -> CliResult<PointCloud> {
    let cloud = generate_synthetic(
        config.surface,
        config.count,
        &config.bbox,
        config.noise,
        config.seed,
    )
    .at(Stage::Config)?;
    let sink = create(&config.output).at(Stage::Write)?;
    write_xyz(&cloud, sink, &config.format).at(Stage::Write)?;
    Ok(cloud)
}
