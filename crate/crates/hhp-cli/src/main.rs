use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use hhp_core::analysis::FailureKind;
use hhp_core::architecture::{architecture_fixtures, HHPConfig};
use hhp_core::experiment::{self, ExperimentConfig, ExperimentReport, RunOverrides};
use hhp_core::workload::{workload_fixtures, Cascade, SeqShape};
use hhp_core::Error;

const EXIT_VALIDATION: u8 = 1;
const EXIT_UNMAPPABLE: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser)]
#[command(name = "hhpsim", version, about = "Analytical simulator for hierarchical and heterogeneous tensor accelerators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every architecture on every workload of an experiment file.
    Run(RunArgs),
    /// Run the Cartesian product of an experiment's sweep axes.
    Sweep(RunArgs),
    /// Print the bundled architecture and workload fixtures.
    ListFixtures,
    /// Check an experiment, architecture or cascade file without simulating.
    Validate {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (JSON).
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Mapper seed, replacing the one in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Exit 0 even when some configurations fail.
    #[arg(long)]
    keep_going: bool,
    /// Timeline bucket width in cycles (default: makespan / 100 per run).
    #[arg(long)]
    bucket_cycles: Option<f64>,
    /// JSON energy table overriding per-level energies.
    #[arg(long)]
    energy_table: Option<PathBuf>,
}

fn exit_code_of(e: &Error) -> u8 {
    match FailureKind::of(e) {
        FailureKind::Validation => EXIT_VALIDATION,
        FailureKind::Unmappable => EXIT_UNMAPPABLE,
        FailureKind::Internal => EXIT_INTERNAL,
    }
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn run(args: &RunArgs, is_sweep: bool) -> Result<u8, Error> {
    let exp = ExperimentConfig::load(&args.config)?;
    let energy_table = args.energy_table.as_deref().map(experiment::load_energy_table).transpose()?;
    if let Some(b) = args.bucket_cycles {
        if !(b > 0.0) {
            return Err(Error::config("--bucket-cycles must be positive"));
        }
    }
    let overrides = RunOverrides {
        seed: args.seed,
        energy_table,
        bucket_cycles: args.bucket_cycles.or(exp.bucket_cycles),
    };
    let dir = base_dir(&args.config);
    let report = if is_sweep {
        experiment::sweep(&exp, &dir, &overrides)?
    } else {
        experiment::run(&exp, &dir, &overrides)?
    };
    experiment::write_outputs(&report, &args.out, overrides.bucket_cycles, is_sweep)?;
    Ok(report_status(&report, args.keep_going))
}

fn report_status(report: &ExperimentReport, keep_going: bool) -> u8 {
    let failures = report.failures();
    for (cfg, workload, _, msg) in &failures {
        eprintln!("error: {cfg} on {workload}: {msg}");
    }
    if keep_going || failures.is_empty() {
        return 0;
    }
    failures
        .iter()
        .map(|f| match f.2 {
            FailureKind::Validation => EXIT_VALIDATION,
            FailureKind::Unmappable => EXIT_UNMAPPABLE,
            FailureKind::Internal => EXIT_INTERNAL,
        })
        .max()
        .unwrap_or(0)
}

fn list_fixtures() {
    println!("architectures:");
    for a in architecture_fixtures() {
        let (h, het) = a.classify().expect("fixtures classify");
        let units: Vec<String> = a
            .sub_accels
            .iter()
            .map(|s| format!("{}={}x{}@{}", s.id, s.rows, s.cols, s.attach_depth))
            .collect();
        println!("  {:<18} {:?}/{:?}  {}", a.name, h, het, units.join(" "));
    }
    println!("workloads:");
    for w in workload_fixtures() {
        let seq = match w.seq {
            SeqShape::Encoder { seq_len } => format!("seq={seq_len}"),
            SeqShape::Decoder { prefill_len, decode_len } => format!("seq={prefill_len}/{decode_len}"),
        };
        println!("  {:<18} d_model={} heads={} {seq}", w.name, w.d_model, w.n_heads);
    }
    println!("workload variants: any workload scales via \"scale\" (desk default 1/8)");
}

/// Validates one file, guessing its kind from its top-level keys.
fn validate_file(path: &Path) -> anyhow::Result<String> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column())))?;
    if value.get("levels").is_some() {
        let cfg: HHPConfig = serde_json::from_value(value).map_err(Error::from)?;
        cfg.validate_strict()?;
        let (h, het) = cfg.classify()?;
        Ok(format!("architecture `{}` ({h:?}/{het:?})", cfg.name))
    } else if value.get("ops").is_some() {
        let c = Cascade::from_json(&text)?;
        Ok(format!("cascade `{}` ({} ops)", c.name, c.ops.len()))
    } else {
        let exp = ExperimentConfig::load(path)?;
        experiment::resolve_architectures(&exp, &base_dir(path))?;
        for w in &exp.workloads {
            experiment::resolve_workload(w, &exp, None, &base_dir(path))?;
        }
        Ok(format!("experiment `{}`", exp.name))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Run(args) | Command::Sweep(args) => {
            let is_sweep = matches!(cli.command, Command::Sweep(_));
            match run(args, is_sweep) {
                Ok(code) => code,
                Err(e) => {
                    eprintln!("error: {e}");
                    exit_code_of(&e)
                }
            }
        }
        Command::ListFixtures => {
            list_fixtures();
            0
        }
        Command::Validate { paths } => {
            let mut code = 0;
            for p in paths {
                match validate_file(p) {
                    Ok(what) => println!("{}: ok, {what}", p.display()),
                    Err(e) => {
                        eprintln!("{}: {e:#}", p.display());
                        code = match e.downcast_ref::<Error>() {
                            Some(err) => exit_code_of(err),
                            None => EXIT_VALIDATION,
                        }
                        .max(code);
                    }
                }
            }
            code
        }
    };
    ExitCode::from(code)
}
