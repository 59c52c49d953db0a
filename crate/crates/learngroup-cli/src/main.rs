//! Batch experiment runner.
//!
//! Subcommands map one-to-one onto the library's bench drivers; `report`
//! re-reads emitted report files and prints a summary. Exit codes: 0 on
//! success, 1 on configuration or I/O errors, 2 on verification failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use learngroup::bench::{self, BenchOutput};
use learngroup::config::ExperimentConfig;
use learngroup::report::{self, ReportRow};

#[derive(Parser)]
#[command(name = "learngroup", version, about = "Sparse-training accelerator experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encoder cycle and memory-footprint sweep over group counts.
    EncodeBench(RunArgs),
    /// Row-based vs threshold-based workload deviation comparison.
    AllocBench(RunArgs),
    /// Simulated matvec oracle verification plus utilization/speedup sweep.
    SpmvVerify(RunArgs),
    /// Masked-network training runs on the toy task.
    Train(RunArgs),
    /// Validate and summarize previously written reports.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replace the config's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for reports and artifacts.
    #[arg(long, default_value = "reports")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding report files to validate.
    #[arg(long, default_value = "reports")]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // clap's own exit code conventions differ; usage problems are
            // config errors here
            let _ = err.print();
            return if err.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match cli.command {
        Command::EncodeBench(args) => run_bench("encode-bench", &args, bench::run_encode_bench),
        Command::AllocBench(args) => run_bench("alloc-bench", &args, bench::run_alloc_bench),
        Command::SpmvVerify(args) => run_bench("spmv-verify", &args, bench::run_spmv_verify),
        Command::Train(args) => run_bench("train", &args, bench::run_train),
        Command::Report(args) => summarize(&args.out),
    };
    match outcome {
        Ok(failures) if failures > 0 => ExitCode::from(2),
        Ok(_) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}

fn load_config(args: &RunArgs) -> learngroup::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::parse(&std::fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_bench(
    name: &str,
    args: &RunArgs,
    driver: fn(&ExperimentConfig) -> learngroup::Result<BenchOutput>,
) -> learngroup::Result<usize> {
    let cfg = load_config(args)?;
    let output = driver(&cfg)?;
    std::fs::create_dir_all(&args.out)?;
    let (file, contents) = match args.format {
        Format::Csv => (format!("{name}.csv"), report::rows_to_csv(&output.rows)),
        Format::Json => (format!("{name}.json"), report::rows_to_json(&output.rows)),
    };
    std::fs::write(args.out.join(&file), contents)?;
    for (artifact, contents) in &output.artifacts {
        std::fs::write(args.out.join(artifact), contents)?;
    }
    println!(
        "{name}: {} rows, {} artifacts -> {}",
        output.rows.len(),
        output.artifacts.len(),
        args.out.display()
    );
    if output.failures > 0 {
        eprintln!("{name}: {} verification failures", output.failures);
    }
    Ok(output.failures)
}

/// Read every report file in the directory, validate it against the frozen
/// schema, and print per-metric summaries. Malformed files count as
/// verification failures (exit 2).
fn summarize(dir: &Path) -> learngroup::Result<usize> {
    let mut rows: Vec<ReportRow> = Vec::new();
    let mut invalid = 0usize;
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in entries {
        let parsed = match path.extension().and_then(|s| s.to_str()) {
            Some("csv") if is_report_csv(&path) => {
                report::rows_from_csv(&std::fs::read_to_string(&path)?)
            }
            Some("json") => report::rows_from_json(&std::fs::read_to_string(&path)?),
            _ => continue,
        };
        match parsed {
            Ok(mut r) => rows.append(&mut r),
            Err(err) => {
                eprintln!("invalid report {}: {err}", path.display());
                invalid += 1;
            }
        }
    }
    for metric in report::Metric::ALL {
        let values: Vec<f64> = rows
            .iter()
            .filter(|r| r.metric == metric)
            .map(|r| r.value)
            .collect();
        if values.is_empty() {
            continue;
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        println!(
            "{}: {} rows, min {min}, max {max}",
            metric.name(),
            values.len()
        );
    }
    println!("total: {} rows, {} invalid files", rows.len(), invalid);
    Ok(invalid)
}

/// Timeline artifacts are CSVs too; only files with the report header are
/// report rows.
fn is_report_csv(path: &Path) -> bool {
    std::fs::read_to_string(path)
        .map(|s| s.starts_with(report::CSV_HEADER))
        .unwrap_or(false)
}
