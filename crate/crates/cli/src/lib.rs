//! Command-line driver: each subcommand runs one pipeline stage and writes
//! a self-describing run directory.

pub mod commands;
pub mod report;
pub mod rundir;
pub mod settings;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use megsim::env::QualityMode;
use megsim::{CompressionMode, Error, Result};

use commands::{Ctx, EvalTarget, Grid, Solver, Upstream};
use settings::Settings;

const SCHEMA_HELP: &str = "\
Run directories hold CSV artifacts, config.txt and manifest.json
(SHA-256 per file). Column contracts are listed in SCHEMAS.md.
  distill     -> distill_loss.csv, noisenet.params
  finetune    -> finetune_loss.csv, heldout_mse.csv, decoder.params
  sweep       -> quality_table.csv
  train-*     -> train_log.csv, policy.params
  eval        -> trajectory.csv, eval_summary.csv
  report      -> report.csv, cost_table.csv, claims.csv, report.txt
Exit codes: 0 success, 1 usage error, 2 runtime failure.";

#[derive(Parser, Debug)]
#[command(name = "megsim", version, about = "Split generative inference simulator", after_help = SCHEMA_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// `key = value` settings file, applied over any upstream run's settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output run directory.
    #[arg(long)]
    out: PathBuf,
    /// Replace an existing output directory.
    #[arg(long)]
    force: bool,
    /// Extra `key=value` setting, applied last. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// A sweep run (surrogate mode) or a distill/finetune run (oracle mode).
    #[arg(long)]
    from: PathBuf,
    #[arg(long, default_value = "surrogate")]
    mode: QualityMode,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the few-step student noise predictor.
    Distill {
        #[command(flatten)]
        common: Common,
    },
    /// Fine-tune the decoder over the noisy link.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// A distill run.
        #[arg(long)]
        from: PathBuf,
    },
    /// Tabulate mean quality over an (alpha, beta) grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// A distill or finetune run.
        #[arg(long)]
        from: PathBuf,
        #[arg(long, default_value = "5x5")]
        grid: Grid,
        /// Held-out prompts per cell.
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long, default_value = "merge")]
        compression: CompressionMode,
    },
    /// Train the constrained variational policy.
    TrainCvpo(TrainArgs),
    /// Train the PPO-Lagrangian baseline.
    TrainPpol(TrainArgs),
    /// Evaluate a trained policy or a fixed action.
    Eval {
        #[command(flatten)]
        common: Common,
        /// A train-cvpo or train-ppol run.
        #[arg(long, conflicts_with = "fixed", required_unless_present = "fixed")]
        policy: Option<PathBuf>,
        /// Constant action `alpha,beta`.
        #[arg(long, value_parser = parse_pair)]
        fixed: Option<(f64, f64)>,
        /// Environment source; defaults to the policy's training source.
        #[arg(long, required_unless_present = "policy")]
        from: Option<PathBuf>,
        #[arg(long)]
        mode: Option<QualityMode>,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        /// Sample actions instead of taking the policy mean.
        #[arg(long)]
        stochastic: bool,
    },
    /// Merge evaluation runs into comparison tables.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Eval run directories.
        #[arg(required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
    },
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected alpha,beta")?;
    let a: f64 = a.trim().parse().map_err(|_| format!("bad alpha `{a}`"))?;
    let b: f64 = b.trim().parse().map_err(|_| format!("bad beta `{b}`"))?;
    if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
        return Err("alpha and beta must lie in [0, 1]".into());
    }
    Ok((a, b))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Settings precedence: defaults, upstream run, `--config`, `--set`.
fn resolve(upstream: Option<&Upstream>, config: Option<&Path>, set: &[String]) -> Result<Settings> {
    let file = config.map(read_text).transpose()?;
    let sets = set.join("\n");
    let mut docs: Vec<&str> = Vec::new();
    if let Some(u) = upstream {
        docs.push(&u.config);
    }
    if let Some(f) = &file {
        docs.push(f);
    }
    docs.push(&sets);
    Settings::from_docs(&docs)
}

fn ctx(
    common: &Common,
    upstream: Option<&Upstream>,
    argv: &[String],
    sources: Vec<PathBuf>,
) -> Result<Ctx> {
    Ok(Ctx {
        settings: resolve(upstream, common.config.as_deref(), &common.set)?,
        seed: common.seed,
        out: common.out.clone(),
        force: common.force,
        argv: argv.to_vec(),
        upstream: sources,
    })
}

fn execute(cmd: &Command, argv: &[String]) -> Result<PathBuf> {
    match cmd {
        Command::Distill { common } => commands::distill(&ctx(common, None, argv, vec![])?),
        Command::Finetune { common, from } => {
            let up = Upstream::open(from)?;
            commands::finetune(&ctx(common, Some(&up), argv, vec![from.clone()])?, &up)
        }
        Command::Sweep {
            common,
            from,
            grid,
            seeds,
            compression,
        } => {
            let up = Upstream::open(from)?;
            commands::sweep(
                &ctx(common, Some(&up), argv, vec![from.clone()])?,
                &up,
                *grid,
                *seeds,
                *compression,
            )
        }
        Command::TrainCvpo(t) | Command::TrainPpol(t) => {
            let solver = if matches!(cmd, Command::TrainCvpo(_)) {
                Solver::Cvpo
            } else {
                Solver::PpoLag
            };
            let up = Upstream::open(&t.from)?;
            commands::train(
                &ctx(&t.common, Some(&up), argv, vec![t.from.clone()])?,
                &up,
                t.mode,
                solver,
            )
        }
        Command::Eval {
            common,
            policy,
            fixed,
            from,
            mode,
            steps,
            stochastic,
        } => {
            let run = policy.as_deref().map(Upstream::open).transpose()?;
            // the environment comes from the policy's own source unless overridden
            let (src_path, default_mode) = match (&run, from) {
                (_, Some(f)) => (f.clone(), None),
                (Some(r), None) => {
                    let p = r
                        .manifest
                        .upstream
                        .first()
                        .map(PathBuf::from)
                        .ok_or_else(|| Error::Format {
                            what: "manifest",
                            reason: "training run lists no upstream".into(),
                        })?;
                    (p, Some(commands::trained_mode(r)?))
                }
                (None, None) => unreachable!("clap requires --from without --policy"),
            };
            let src = Upstream::open(&src_path)?;
            let mode = mode.or(default_mode).unwrap_or(QualityMode::Surrogate);
            // settings follow the policy run when there is one
            let base = run.as_ref().unwrap_or(&src);
            let mut sources = vec![src_path.clone()];
            if let Some(p) = policy {
                sources.insert(0, p.clone());
            }
            let c = ctx(common, Some(base), argv, sources)?;
            let target = match (&run, fixed) {
                (Some(r), _) => EvalTarget::Trained {
                    run: r,
                    stochastic: *stochastic,
                },
                (None, Some((a, b))) => EvalTarget::Fixed(*a, *b),
                (None, None) => unreachable!("clap requires --policy or --fixed"),
            };
            commands::eval(&c, &src, mode, target, *steps)
        }
        Command::Report {
            out,
            force,
            config,
            set,
            runs,
        } => {
            let settings = resolve(None, config.as_deref(), set)?;
            let c = Ctx {
                settings,
                seed: 0,
                out: out.clone(),
                force: *force,
                argv: argv.to_vec(),
                upstream: runs.clone(),
            };
            let mut dir = c.start()?;
            let r = report::write(&mut dir, runs, &c.settings.model.system)?;
            print!("{}", r.text);
            c.finish(dir, "report")
        }
    }
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => {
                    eprintln!("\n{SCHEMA_HELP}");
                    1
                }
            };
        }
    };
    let argv: Vec<String> = args
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match execute(&cli.command, &argv) {
        Ok(dir) => {
            println!("wrote {}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
