//! Batch driver: runs one convergence study and writes plot-ready data
//! tables, or merges existing tables and reports fitted rates.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bbafem::adaptive::{
    adaptive_study, fit_rate, uniform_study, Column, ConvergenceRow, StudyConfig, StudyResult,
};
use bbafem::ocp::FixedPointConfig;
use bbafem::problems::problem_by_name;
use bbafem::quadrature::QuadratureRule;

const COLUMNS: [&str; 10] = [
    "dofs",
    "error_y",
    "error_p",
    "error_u",
    "est_y",
    "est_p_2",
    "est_p_inf",
    "eff_index",
    "iota",
    "fp_iters",
];

const RATE_COLUMNS: [Column; 6] = [
    Column::ErrorY,
    Column::ErrorP,
    Column::ErrorU,
    Column::EstY,
    Column::EstP2,
    Column::EstPInf,
];

#[derive(Parser)]
#[command(name = "bbafem", about = "Adaptive FEM for bang-bang optimal control", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one convergence study and write its data table.
    Run(RunArgs),
    /// Merge .dat tables side by side and print fitted rates.
    Table {
        /// Data files produced by `run`.
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Benchmark problem.
    #[arg(long, value_enum)]
    problem: ProblemArg,
    /// Refinement strategy.
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Stop once the number of unknowns reaches this.
    #[arg(long = "max-dofs")]
    max_dofs: usize,
    /// Maximum-strategy marking threshold, strictly between 0 and 1.
    #[arg(long = "mark-fraction", default_value_t = 0.5)]
    mark_fraction: f64,
    /// Relative residual tolerance of the CG solver.
    #[arg(long = "cg-tol", default_value_t = 1e-12)]
    cg_tol: f64,
    /// Relative L1 control-increment tolerance of the fixed point.
    #[arg(long = "fp-tol", default_value_t = 1e-10)]
    fp_tol: f64,
    /// Fixed-point iteration cap per level.
    #[arg(long = "fp-max-iter", default_value_t = 100)]
    fp_max_iter: usize,
    /// Subdivision parameter of the initial structured mesh.
    #[arg(long = "initial-n", default_value_t = 4)]
    initial_n: usize,
    /// Output directory.
    #[arg(long = "out")]
    out: PathBuf,
    /// Also export the mesh of every level.
    #[arg(long = "export-meshes")]
    export_meshes: bool,
    /// Reserved for randomized harnesses; the solver itself is
    /// deterministic and ignores it.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProblemArg {
    Ex1,
    Ex2,
    Ex3,
}

impl ProblemArg {
    fn name(self) -> &'static str {
        match self {
            ProblemArg::Ex1 => "ex1",
            ProblemArg::Ex2 => "ex2",
            ProblemArg::Ex3 => "ex3",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Uniform,
    Adaptive,
}

impl ModeArg {
    fn name(self) -> &'static str {
        match self {
            ModeArg::Uniform => "uniform",
            ModeArg::Adaptive => "adaptive",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(&args),
        Command::Table { files } => table(&files),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Solver(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

enum Failure {
    /// Exit code 1: the numerics did not converge.
    Solver(String),
    /// Exit code 2: bad arguments, bad input files, or I/O trouble.
    Usage(String),
}

fn run(args: &RunArgs) -> Result<(), Failure> {
    if !(args.mark_fraction > 0.0 && args.mark_fraction < 1.0) {
        return Err(Failure::Usage(format!(
            "--mark-fraction must lie strictly between 0 and 1, got {}",
            args.mark_fraction
        )));
    }
    if args.max_dofs == 0 {
        return Err(Failure::Usage("--max-dofs must be positive".into()));
    }
    let spec = problem_by_name(args.problem.name()).expect("known problem name");
    let config = StudyConfig {
        max_ndofs: args.max_dofs,
        mark_fraction: args.mark_fraction,
        initial_n: args.initial_n,
        fixed_point: FixedPointConfig {
            tol: args.fp_tol,
            max_iter: args.fp_max_iter,
            cg_tol: args.cg_tol,
            ..FixedPointConfig::default()
        },
    };
    let rule = QuadratureRule::degree19();
    let result = match args.mode {
        ModeArg::Adaptive => adaptive_study(&spec, &config, &rule),
        ModeArg::Uniform => uniform_study(&spec, &config, &rule),
    }
    .map_err(|e| Failure::Solver(e.to_string()))?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| Failure::Usage(format!("cannot create {}: {e}", args.out.display())))?;
    write_outputs(args, &result)?;

    print_rates(&result.record.rows);
    if !result.record.completed {
        let level = result.record.rows.len() - 1;
        return Err(Failure::Solver(format!(
            "fixed-point iteration did not converge at refinement level {level}; partial table written"
        )));
    }
    Ok(())
}

fn write_outputs(args: &RunArgs, result: &StudyResult) -> Result<(), Failure> {
    let problem = args.problem.name();
    let dat = args
        .out
        .join(format!("errors_{problem}_{}.dat", args.mode.name()));
    let mut text = String::new();
    writeln!(text, "{}", COLUMNS.join(" ")).unwrap();
    for row in &result.record.rows {
        writeln!(text, "{}", format_row(row)).unwrap();
    }
    std::fs::write(&dat, text)
        .map_err(|e| Failure::Usage(format!("cannot write {}: {e}", dat.display())))?;
    println!("wrote {}", dat.display());

    if args.export_meshes {
        for (level, mesh) in result.meshes.iter().enumerate() {
            let coor = args.out.join(format!("{problem}_coor_{level}.dat"));
            let elem = args.out.join(format!("{problem}_elem_{level}.dat"));
            mesh.export(&coor, &elem)
                .map_err(|e| Failure::Usage(format!("cannot export level {level}: {e}")))?;
        }
        println!("wrote {} mesh levels", result.meshes.len());
    }
    Ok(())
}

fn format_value(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.9e}")
    }
}

fn format_row(row: &ConvergenceRow) -> String {
    format!(
        "{} {} {} {} {} {} {} {} {} {}",
        row.ndofs,
        format_value(row.error_y),
        format_value(row.error_p),
        format_value(row.error_u),
        format_value(row.est_y),
        format_value(row.est_p_2),
        format_value(row.est_p_inf),
        format_value(row.eff_index),
        format_value(row.iota),
        row.fp_iterations,
    )
}

fn print_rates(rows: &[ConvergenceRow]) {
    println!("fitted rates (log-log slope vs dofs, last 5 levels):");
    for column in RATE_COLUMNS {
        match fit_rate(rows, column, 5) {
            Ok(rate) => println!("  {:<10} {rate:+.3}", column.label()),
            Err(_) => println!("  {:<10} n/a", column.label()),
        }
    }
}

/// One parsed .dat file.
struct DataFile {
    name: String,
    rows: Vec<ConvergenceRow>,
}

fn parse_dat(path: &Path) -> Result<DataFile, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .unwrap_or("")
        .split_whitespace()
        .collect();
    if header != COLUMNS {
        return Err(Failure::Usage(format!(
            "{}: expected header `{}`",
            path.display(),
            COLUMNS.join(" ")
        )));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != COLUMNS.len() {
            return Err(Failure::Usage(format!(
                "{}: line {} has {} columns, expected {}",
                path.display(),
                i + 2,
                fields.len(),
                COLUMNS.len()
            )));
        }
        let num = |s: &str| -> Result<f64, Failure> {
            s.parse::<f64>().map_err(|_| {
                Failure::Usage(format!("{}: bad number `{s}` on line {}", path.display(), i + 2))
            })
        };
        rows.push(ConvergenceRow {
            ndofs: fields[0].parse().map_err(|_| {
                Failure::Usage(format!(
                    "{}: bad dof count `{}` on line {}",
                    path.display(),
                    fields[0],
                    i + 2
                ))
            })?,
            error_y: num(fields[1])?,
            error_p: num(fields[2])?,
            error_u: num(fields[3])?,
            est_y: num(fields[4])?,
            est_p_2: num(fields[5])?,
            est_p_inf: num(fields[6])?,
            eff_index: num(fields[7])?,
            iota: num(fields[8])?,
            fp_iterations: num(fields[9])? as usize,
        });
    }
    if rows.is_empty() {
        return Err(Failure::Usage(format!("{}: no data rows", path.display())));
    }
    Ok(DataFile {
        name: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string()),
        rows,
    })
}

fn table(paths: &[PathBuf]) -> Result<(), Failure> {
    let files: Vec<DataFile> = paths.iter().map(|p| parse_dat(p)).collect::<Result<_, _>>()?;

    // merged table keyed by dofs: one error_y/est_y pair per file
    let mut dofs: Vec<usize> = files
        .iter()
        .flat_map(|f| f.rows.iter().map(|r| r.ndofs))
        .collect();
    dofs.sort_unstable();
    dofs.dedup();

    let mut header = format!("{:>10}", "dofs");
    for f in &files {
        header.push_str(&format!(" {:>16} {:>16}", format!("error_y[{}]", f.name), format!("est_y[{}]", f.name)));
    }
    println!("{header}");
    for d in dofs {
        let mut line = format!("{d:>10}");
        for f in &files {
            match f.rows.iter().find(|r| r.ndofs == d) {
                Some(r) => {
                    line.push_str(&format!(" {:>16} {:>16}", format_value(r.error_y), format_value(r.est_y)));
                }
                None => line.push_str(&format!(" {:>16} {:>16}", "-", "-")),
            }
        }
        println!("{line}");
    }

    for f in &files {
        println!();
        println!("{}:", f.name);
        print_rates(&f.rows);
    }
    Ok(())
}
