//! Pipeline stages behind each subcommand.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use megsim::baseline;
use megsim::checkpoint::{shape_of, ParamFile};
use megsim::cvpo::{self, GaussianPolicy, MeanActor, SampleActor, TrainLogRow};
use megsim::env::{
    evaluate_policy, write_trajectory_csv, Action, EvalReport, MegEnv, Quality, QualityMode,
};
use megsim::rng::stream;
use megsim::toygen::surrogate::unit_grid;
use megsim::toygen::{build_surrogate, QualityTable, ToyPipeline};
use megsim::{CompressionMode, Error, Result};
use serde::{Deserialize, Serialize};

use crate::rundir::{open_verified, read_listed, Manifest, RunDir, CONFIG};
use crate::settings::Settings;

pub const NOISENET: &str = "noisenet.params";
pub const DECODER: &str = "decoder.params";
pub const DISTILL_LOSS: &str = "distill_loss.csv";
pub const FINETUNE_LOSS: &str = "finetune_loss.csv";
pub const HELDOUT: &str = "heldout_mse.csv";
pub const TABLE: &str = "quality_table.csv";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const POLICY: &str = "policy.params";
pub const TRAJECTORY: &str = "trajectory.csv";
pub const SUMMARY: &str = "eval_summary.csv";

/// Inputs shared by every stage.
pub struct Ctx {
    pub settings: Settings,
    pub seed: u64,
    pub out: PathBuf,
    pub force: bool,
    pub argv: Vec<String>,
    pub upstream: Vec<PathBuf>,
}

impl Ctx {
    pub fn start(&self) -> Result<RunDir> {
        let mut dir = RunDir::create(&self.out, self.force)?;
        dir.write(CONFIG, self.settings.to_doc().as_bytes())?;
        Ok(dir)
    }

    pub fn finish(&self, dir: RunDir, command: &str) -> Result<PathBuf> {
        let doc = self.settings.to_doc();
        dir.finish(Manifest {
            command: command.to_string(),
            seed: self.seed,
            config_sha256: megsim::checkpoint::sha256_hex(doc.as_bytes()),
            megsim_version: env!("CARGO_PKG_VERSION").to_string(),
            argv: self.argv.clone(),
            upstream: self
                .upstream
                .iter()
                .map(|p| abs(p).display().to_string())
                .collect(),
            files: Vec::new(),
        })
    }
}

fn abs(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Upstream run: its verified manifest and stored settings document.
pub struct Upstream {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub config: String,
}

impl Upstream {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = open_verified(dir)?;
        let config =
            String::from_utf8(read_listed(dir, &manifest, CONFIG)?).map_err(|_| Error::Format {
                what: "config",
                reason: "not UTF-8".into(),
            })?;
        Ok(Upstream {
            dir: dir.to_path_buf(),
            manifest,
            config,
        })
    }

    fn read(&self, name: &str) -> Result<Vec<u8>> {
        read_listed(&self.dir, &self.manifest, name)
    }

    fn has(&self, name: &str) -> bool {
        self.manifest.file(name).is_some()
    }

    fn expect(&self, commands: &[&str]) -> Result<()> {
        if commands.contains(&self.manifest.command.as_str()) {
            Ok(())
        } else {
            Err(Error::Invalid {
                key: "--from".into(),
                reason: format!(
                    "{} is a `{}` run; expected one of {commands:?}",
                    self.dir.display(),
                    self.manifest.command
                ),
            })
        }
    }

    /// Seed the pipeline was constructed with: the distill run's seed.
    fn pipeline_seed(&self) -> Result<u64> {
        let bytes = self.read("pipeline_seed.txt")?;
        std::str::from_utf8(&bytes)
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Format {
                what: "pipeline_seed.txt",
                reason: "expected an integer".into(),
            })
    }
}

fn load_params(bytes: &[u8], into: &mut [f64], what: &str) -> Result<()> {
    let pf = ParamFile::from_bytes(bytes)?;
    if pf.values.len() != into.len() {
        return Err(Error::Dimension {
            expected: into.len(),
            got: pf.values.len(),
        });
    }
    if pf.name != what {
        return Err(Error::Format {
            what: "parameter file",
            reason: format!("expected `{what}`, found `{}`", pf.name),
        });
    }
    into.copy_from_slice(&pf.values);
    Ok(())
}

/// Rebuilds the pipeline stored in a distill or finetune run.
pub fn load_pipeline(up: &Upstream, settings: &Settings) -> Result<ToyPipeline> {
    up.expect(&["distill", "finetune"])?;
    let mut p = ToyPipeline::new(
        &settings.model.desk,
        &settings.pipeline,
        up.pipeline_seed()?,
    )?;
    load_params(&up.read(NOISENET)?, &mut p.net.mlp.params, "noisenet")?;
    if up.has(DECODER) {
        load_params(&up.read(DECODER)?, &mut p.vae.decoder.params, "decoder")?;
    }
    Ok(p)
}

fn loss_csv(losses: &[f64]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "loss"])?;
    for (i, l) in losses.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    w.into_inner().map_err(|e| Error::Format {
        what: "csv",
        reason: e.to_string(),
    })
}

fn serialize_rows<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Format {
        what: "csv",
        reason: e.to_string(),
    })
}

pub fn distill(ctx: &Ctx) -> Result<PathBuf> {
    let s = &ctx.settings;
    let mut p = ToyPipeline::new(&s.model.desk, &s.pipeline, ctx.seed)?;
    let losses = p.distill(&s.pipeline, ctx.seed)?;
    let mut dir = ctx.start()?;
    dir.write("pipeline_seed.txt", format!("{}\n", ctx.seed).as_bytes())?;
    dir.write(DISTILL_LOSS, &loss_csv(&losses)?)?;
    dir.write(
        NOISENET,
        &ParamFile::new(
            "noisenet",
            shape_of(p.net.mlp.sizes()),
            p.net.mlp.params.clone(),
        )
        .to_bytes(),
    )?;
    ctx.finish(dir, "distill")
}

#[derive(Debug, Serialize)]
struct HeldoutRow {
    decoder: &'static str,
    steps: usize,
    beta: f64,
    samples: usize,
    mean_mse: f64,
}

pub fn finetune(ctx: &Ctx, up: &Upstream) -> Result<PathBuf> {
    up.expect(&["distill"])?;
    let s = &ctx.settings;
    let mut p = load_pipeline(up, s)?;
    let losses = p.finetune(&s.pipeline, ctx.seed)?;
    let l = s.model.desk.l_max;
    let (n, beta) = (200, 0.5);
    let heldout = [("frozen", &p.frozen), ("finetuned", &p.vae)]
        .into_iter()
        .map(|(name, vae)| {
            Ok(HeldoutRow {
                decoder: name,
                steps: l,
                beta,
                samples: n,
                mean_mse: p.heldout_mse(vae, n, l, beta, ctx.seed)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut dir = ctx.start()?;
    dir.write(
        "pipeline_seed.txt",
        format!("{}\n", up.pipeline_seed()?).as_bytes(),
    )?;
    dir.write(FINETUNE_LOSS, &loss_csv(&losses)?)?;
    dir.write(HELDOUT, &serialize_rows(&heldout)?)?;
    dir.write(NOISENET, &up.read(NOISENET)?)?;
    dir.write(
        DECODER,
        &ParamFile::new(
            "decoder",
            shape_of(p.vae.decoder.sizes()),
            p.vae.decoder.params.clone(),
        )
        .to_bytes(),
    )?;
    ctx.finish(dir, "finetune")
}

/// `AxB` grid shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid(pub usize, pub usize);

impl std::str::FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected AxB, got `{s}`"))?;
        let parse = |t: &str| t.trim().parse::<usize>().ok().filter(|&n| n >= 1);
        match (parse(a), parse(b)) {
            (Some(a), Some(b)) => Ok(Grid(a, b)),
            _ => Err(format!("expected positive AxB, got `{s}`")),
        }
    }
}

pub fn sweep(
    ctx: &Ctx,
    up: &Upstream,
    grid: Grid,
    samples: usize,
    mode: CompressionMode,
) -> Result<PathBuf> {
    let p = load_pipeline(up, &ctx.settings)?;
    let table = build_surrogate(
        &p,
        &unit_grid(grid.0),
        &unit_grid(grid.1),
        samples,
        mode,
        ctx.seed,
    )?;
    let mut dir = ctx.start()?;
    dir.write_csv(TABLE, |buf| table.write_csv(buf))?;
    ctx.finish(dir, "sweep")
}

/// The environment a training or evaluation run sees.
pub fn build_env(settings: &Settings, up: &Upstream, mode: QualityMode) -> Result<MegEnv> {
    let quality = match mode {
        QualityMode::Surrogate => {
            up.expect(&["sweep"])?;
            Quality::Surrogate(Arc::new(QualityTable::read_csv(&up.read(TABLE)?[..])?))
        }
        QualityMode::Oracle => Quality::Oracle(Arc::new(load_pipeline(up, settings)?)),
    };
    let m = &settings.model;
    Ok(MegEnv::new(
        m.system.clone(),
        m.env.clone(),
        CompressionMode::Merge,
        quality,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Cvpo,
    PpoLag,
}

impl Solver {
    pub fn command(self) -> &'static str {
        match self {
            Solver::Cvpo => "train-cvpo",
            Solver::PpoLag => "train-ppol",
        }
    }
}

pub fn train(ctx: &Ctx, up: &Upstream, mode: QualityMode, solver: Solver) -> Result<PathBuf> {
    let env = build_env(&ctx.settings, up, mode)?;
    let (policy, log): (GaussianPolicy, Vec<TrainLogRow>) = match solver {
        Solver::Cvpo => {
            let out = cvpo::train(&env, &ctx.settings.cvpo, ctx.seed, None)?;
            (out.policy, out.log)
        }
        Solver::PpoLag => {
            let out = baseline::train(&env, &ctx.settings.ppo, ctx.seed, None)?;
            (out.policy, out.log)
        }
    };
    let mut dir = ctx.start()?;
    dir.write("mode.txt", format!("{mode}\n").as_bytes())?;
    dir.write(TRAIN_LOG, &serialize_rows(&log)?)?;
    dir.write(
        POLICY,
        &ParamFile::new(
            "policy",
            shape_of(policy.mlp.sizes()),
            policy.mlp.params.clone(),
        )
        .to_bytes(),
    )?;
    ctx.finish(dir, solver.command())
}

/// One row of `eval_summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub mode: String,
    pub d_max: f64,
    pub e_max: f64,
    pub steps: usize,
    pub mean_reward: f64,
    pub mean_mse: f64,
    pub mean_d: f64,
    pub mean_d_tr: f64,
    pub mean_d_comp: f64,
    pub mean_e: f64,
    pub viol_d_rate: f64,
    pub viol_e_rate: f64,
    pub mean_alpha: f64,
    pub mean_beta: f64,
}

impl SummaryRow {
    pub fn new(method: String, mode: QualityMode, env: &MegEnv, r: &EvalReport) -> Self {
        SummaryRow {
            method,
            mode: mode.to_string(),
            d_max: env.sys.d_max,
            e_max: env.sys.e_max,
            steps: r.steps,
            mean_reward: r.mean_reward,
            mean_mse: r.mean_mse,
            mean_d: r.mean_d,
            mean_d_tr: r.mean_d_tr,
            mean_d_comp: r.mean_d_comp,
            mean_e: r.mean_e,
            viol_d_rate: r.viol_d_rate,
            viol_e_rate: r.viol_e_rate,
            mean_alpha: r.mean_alpha,
            mean_beta: r.mean_beta,
        }
    }
}

/// What `eval` runs.
pub enum EvalTarget<'a> {
    /// A trained policy, acting by its mean or by sampling.
    Trained {
        run: &'a Upstream,
        stochastic: bool,
    },
    Fixed(f64, f64),
}

pub fn eval(
    ctx: &Ctx,
    env_src: &Upstream,
    mode: QualityMode,
    target: EvalTarget<'_>,
    steps: usize,
) -> Result<PathBuf> {
    let env = build_env(&ctx.settings, env_src, mode)?;
    let (method, (report, rows)) = match target {
        EvalTarget::Trained { run, stochastic } => {
            run.expect(&["train-cvpo", "train-ppol"])?;
            let mut policy = GaussianPolicy::new(&mut stream(0, 0));
            load_params(&run.read(POLICY)?, &mut policy.mlp.params, "policy")?;
            let name = match run.manifest.command.as_str() {
                "train-cvpo" => "cvpo",
                _ if run.config.contains("ppo.lagrangian = false") => "ppo",
                _ => "ppol",
            };
            let result = if stochastic {
                evaluate_policy(&env, &SampleActor(&policy), steps, ctx.seed)?
            } else {
                evaluate_policy(&env, &MeanActor(&policy), steps, ctx.seed)?
            };
            (name.to_string(), result)
        }
        EvalTarget::Fixed(a, b) => {
            let act = move |_: &megsim::env::Obs| Action::new(a, b);
            (
                format!("fixed({a},{b})"),
                evaluate_policy(&env, &act, steps, ctx.seed)?,
            )
        }
    };
    let summary = SummaryRow::new(method, mode, &env, &report);
    let mut dir = ctx.start()?;
    dir.write_csv(TRAJECTORY, |buf| write_trajectory_csv(buf, &rows))?;
    dir.write(SUMMARY, &serialize_rows(&[summary])?)?;
    ctx.finish(dir, "eval")
}

/// Quality mode a training run was made with.
pub fn trained_mode(run: &Upstream) -> Result<QualityMode> {
    let bytes = run.read("mode.txt")?;
    std::str::from_utf8(&bytes)
        .map_err(|_| Error::Format {
            what: "mode.txt",
            reason: "not UTF-8".into(),
        })?
        .trim()
        .parse()
}
