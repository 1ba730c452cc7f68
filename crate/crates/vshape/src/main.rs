//! Command-line entry point: run programs, run benchmarks, dump shape,
//! rule, and history statistics.
//!
//! Exit codes: 0 success, 1 runtime error, 2 parse/validate error,
//! 3 usage error. `VSHAPE_STEP_LIMIT` overrides the evaluator's step
//! guard (unset means unlimited).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use vshape::bench::{run_benchmark, BenchName, CSV_HEADER};
use vshape::lang::{parse, validate};
use vshape::machine::eval_program;
use vshape::{dump_stats, Config, Mode, Runtime};

#[derive(Parser)]
#[command(name = "vshape", version, about = "Adaptive value-object compaction runtime")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMode {
    None,
    Manual,
    Auto,
}

impl From<CliMode> for Mode {
    fn from(m: CliMode) -> Mode {
        match m {
            CliMode::None => Mode::None,
            CliMode::Manual => Mode::Manual,
            CliMode::Auto => Mode::Auto,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Args)]
struct ConfigArgs {
    /// Optimization mode
    #[arg(long, value_enum, default_value = "auto")]
    mode: CliMode,
    /// Occurrence count at which a history entry becomes a rule
    #[arg(long, default_value_t = 17)]
    threshold: u64,
    /// Maximum storage width of a rule target
    #[arg(long, default_value_t = 7)]
    max_size: usize,
    /// Maximum shape nesting of a rule target
    #[arg(long, default_value_t = 7)]
    max_depth: usize,
}

impl ConfigArgs {
    fn config(&self) -> Config {
        Config {
            max_size: self.max_size,
            max_depth: self.max_depth,
            threshold: self.threshold,
            mode: self.mode.into(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a program file and print its result
    Run {
        file: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Also print the shape/rule/history statistics
        #[arg(long)]
        stats: bool,
    },
    /// Run built-in benchmarks and emit one report per repetition
    Bench {
        /// Benchmark name (append|filter|map|reverse|tree)
        name: Option<String>,
        /// Run every benchmark
        #[arg(long)]
        all: bool,
        /// List length, or tree depth for the tree benchmark
        #[arg(long)]
        size: Option<usize>,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Evaluate a program file and print only the statistics
    Stats {
        file: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn step_limit_from_env() -> Option<u64> {
    let raw = std::env::var("VSHAPE_STEP_LIMIT").ok()?;
    match raw.parse::<u64>() {
        Ok(0) | Err(_) => None,
        Ok(n) => Some(n),
    }
}

fn run_file(file: &PathBuf, config: Config, print_result: bool, print_stats: bool) -> ExitCode {
    let source = match std::fs::read_to_string(file) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", file.display());
            return ExitCode::from(2);
        }
    };
    let program = match parse(&source) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {}: {e}", file.display());
            return ExitCode::from(2);
        }
    };
    if let Err(e) = validate(&program) {
        eprintln!("error: {}: {e}", file.display());
        return ExitCode::from(2);
    }
    let mut rt = Runtime::new(config);
    match eval_program(&mut rt, &program, step_limit_from_env()) {
        Ok(outcome) => {
            if print_result {
                println!("{}", outcome.value);
            }
            if print_stats {
                print!("{}", dump_stats(&rt));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run_bench(
    name: Option<String>,
    all: bool,
    size: Option<usize>,
    config: Config,
    repeats: usize,
    format: Format,
) -> ExitCode {
    let names: Vec<BenchName> = if all {
        BenchName::ALL.to_vec()
    } else {
        match name.as_deref().map(str::parse) {
            Some(Ok(n)) => vec![n],
            Some(Err(e)) => {
                eprintln!("error: {e}");
                return ExitCode::from(3);
            }
            None => {
                eprintln!("error: give a benchmark name or --all");
                return ExitCode::from(3);
            }
        }
    };
    let limit = step_limit_from_env();
    let mut all_reports = Vec::new();
    for bench in names {
        let size = size.unwrap_or_else(|| bench.default_size());
        match run_benchmark(bench, size, config, repeats, limit) {
            Ok(reports) => all_reports.extend(reports),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
        }
    }
    match format {
        Format::Text => {
            for r in &all_reports {
                println!("{}", r.text_row());
            }
        }
        Format::Csv => {
            println!("{CSV_HEADER}");
            for r in &all_reports {
                println!("{}", r.csv_row());
            }
        }
        Format::Json => {
            println!("{}", serde_json::to_string_pretty(&all_reports).expect("serializable"));
        }
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(3);
        }
    };
    match cli.command {
        Command::Run {
            file,
            config,
            stats,
        } => run_file(&file, config.config(), true, stats),
        Command::Stats { file, config } => run_file(&file, config.config(), false, true),
        Command::Bench {
            name,
            all,
            size,
            config,
            repeats,
            format,
        } => run_bench(name, all, size, config.config(), repeats, format),
    }
}
