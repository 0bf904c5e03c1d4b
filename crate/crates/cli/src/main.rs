use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hypns::eigen::{KawashimaOptions, SurveyOptions};
use hypns::io::{self, ParsedConfig, RunOptions, RunStatus};
use hypns::Error;

/// Hyperbolized compressible Navier-Stokes: certification, simulation and
/// diagnostics.
///
/// Every flag can also be set through an environment variable with the
/// `HYPNS_` prefix, e.g. `HYPNS_THREADS=4`.
#[derive(Debug, Parser)]
#[command(name = "hypns", version)]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true, env = "HYPNS_CONFIG")]
    config: Option<PathBuf>,
    /// Output directory; falls back to `output_dir` of the config, then `out`.
    #[arg(long, global = true, env = "HYPNS_OUT")]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, env = "HYPNS_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured scenario and write diagnostics, snapshots,
    /// checkpoint and summary.
    Simulate(SimulateArgs),
    /// Sample admissible states and certify hyperbolicity; check the
    /// Kawashima compensator at the rest state.
    Hypercheck(HypercheckArgs),
    /// Relaxation-limit sweep over the configured relaxation times.
    Sweep,
    /// Recompute diagnostics from stored snapshots.
    Audit(AuditArgs),
    /// Generate blow-up data and write its constant ledger.
    Ledger,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Stop after the first step that reaches this time.
    #[arg(long, env = "HYPNS_UNTIL")]
    until: Option<f64>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long, env = "HYPNS_RESUME")]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct HypercheckArgs {
    /// Number of sampled states (overrides the config).
    #[arg(long, env = "HYPNS_SAMPLES")]
    samples: Option<usize>,
    /// Sampling seed (overrides the config).
    #[arg(long, env = "HYPNS_SEED")]
    seed: Option<u64>,
    /// Random Λ per state for the determinant factorization check.
    #[arg(long, env = "HYPNS_LAMBDAS")]
    lambdas: Option<usize>,
}

#[derive(Debug, Args)]
struct AuditArgs {
    /// Directory holding the snapshots (a run directory or its
    /// `snapshots/` subdirectory).
    #[arg(long, env = "HYPNS_SNAPSHOTS")]
    snapshots: PathBuf,
}

/// Exit status: 0 success, 1 failed run or failed check, 2 bad input.
fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(k) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            report(&e);
            match e {
                Error::Config(_) | Error::Json(_) | Error::Params(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn report(e: &Error) {
    match e {
        Error::Config(list) => {
            eprintln!("error: invalid configuration ({} problems)", list.len());
            for s in list {
                eprintln!("  - {s}");
            }
        }
        other => eprintln!("error: {other}"),
    }
}

fn config(cli: &Cli) -> hypns::Result<ParsedConfig> {
    let Some(path) = &cli.config else {
        return Err(Error::Config(vec!["--config is required for this command".into()]));
    };
    let parsed = io::load_config(path)?;
    for w in &parsed.warnings {
        eprintln!("warning: {w}");
    }
    Ok(parsed)
}

fn out_dir(cli: &Cli, cfg: Option<&ParsedConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.config.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn dispatch(cli: &Cli) -> hypns::Result<ExitCode> {
    match &cli.command {
        Command::Simulate(a) => {
            let parsed = config(cli)?;
            let out = out_dir(cli, Some(&parsed));
            let opts = RunOptions {
                out: out.clone(),
                until: a.until,
                resume: a.resume.clone(),
                warnings: parsed.warnings.clone(),
            };
            match io::run(&parsed.config, &opts) {
                Ok(s) => {
                    println!(
                        "{:?}: {} steps, t = {}, max relative drift {:.3e}",
                        s.status, s.steps, s.t_final, s.drifts.max_relative
                    );
                    if let Some(h) = &s.halt {
                        println!("halt: {}", serde_json::to_string(h)?);
                    }
                    if let Some(m) = &s.monitor {
                        println!("F bound held: {}", m.bound_held);
                    }
                    println!("outputs in {}", out.display());
                    Ok(match s.status {
                        RunStatus::Aborted => ExitCode::from(1),
                        _ => ExitCode::SUCCESS,
                    })
                }
                Err(e) => {
                    report(&e);
                    let ckpt = out.join("checkpoint.bin");
                    if ckpt.exists() {
                        eprintln!("last good state kept in {}", ckpt.display());
                    }
                    Ok(ExitCode::from(1))
                }
            }
        }
        Command::Hypercheck(a) => {
            let (model, mut survey, kawashima, parsed) = hypercheck_inputs(cli)?;
            if let Some(n) = a.samples {
                survey.samples = n;
            }
            if let Some(s) = a.seed {
                survey.seed = s;
            }
            if let Some(l) = a.lambdas {
                survey.lambdas = l;
            }
            let out = out_dir(cli, parsed.as_ref());
            let rep = io::run_hypercheck(&model, &survey, &kawashima, &out)?;
            println!("{}", serde_json::to_string(&rep.survey)?);
            println!("{}", serde_json::to_string(&rep.kawashima)?);
            Ok(if rep.passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Sweep => {
            let parsed = config(cli)?;
            let out = out_dir(cli, Some(&parsed));
            let t = io::run_sweep(&parsed.config, &out)?;
            print!("{}", t.to_csv());
            Ok(if t.rows.iter().all(|r| r.failed.is_none()) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Audit(a) => {
            let out = out_dir(cli, None);
            let rep = io::run_audit(&a.snapshots, &out)?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
            Ok(match rep.audit {
                Some(x) if !x.nonincreasing_up_to_residual => ExitCode::from(1),
                _ => ExitCode::SUCCESS,
            })
        }
        Command::Ledger => {
            let parsed = config(cli)?;
            let out = out_dir(cli, Some(&parsed));
            let l = io::run_ledger(&parsed.config, &out)?;
            println!("{}", serde_json::to_string_pretty(&l)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// The hypercheck config may be a full run configuration or a bare model.
fn hypercheck_inputs(
    cli: &Cli,
) -> hypns::Result<(hypns::thermo::ModelParams, SurveyOptions, KawashimaOptions, Option<ParsedConfig>)> {
    let Some(path) = &cli.config else {
        return Err(Error::Config(vec!["--config is required for this command".into()]));
    };
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("model").is_some() {
        let parsed = config(cli)?;
        let c = &parsed.config;
        Ok((c.model, c.hypercheck, c.kawashima, Some(parsed)))
    } else {
        let model = io::parse_model(&text)?;
        Ok((model, SurveyOptions::default(), KawashimaOptions::default(), None))
    }
}
