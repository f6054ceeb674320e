//! `cirl`: demonstrations, imitation, reinforcement, evaluation and replay
//! from one configuration file.

mod provenance;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cirl::bench::{results_csv, results_table, run_episode_logged, BenchConfig, ConditionCell, EpisodeLog};
use cirl::config::GlobalConfig;
use cirl::demo::DemoDataset;
use cirl::il::write_report;
use cirl::pipeline::{ablation_table, run_ablation_grid, stage_demos, stage_il, stage_rl, Variant};
use cirl::policy::{GatedActor, ACTOR_ROLE, ACTOR_TARGET_ROLE, CRITIC_ROLE, CRITIC_TARGET_ROLE};
use cirl::reward::total_reward;
use cirl::rl::write_metrics;
use cirl::seeding::derive_seed;
use cirl::{CirlError, Result};
use cirl_nn::Checkpoint;
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use crate::provenance::Provenance;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser, Debug)]
#[command(name = "cirl", version, about = "Imitation then imitative DDPG on a 2D town")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// TOML configuration; an empty file means all defaults.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configuration's output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Record expert demonstrations.
    GenDemos {
        #[command(flatten)]
        common: Common,
    },
    /// Train the gated actor on demonstrations.
    TrainIl {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Train actor and critic by interaction. Without --checkpoint the actor
    /// starts from scratch.
    TrainRl {
        #[command(flatten)]
        common: Common,
        /// Imitation checkpoint used to initialize the actor.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Demonstrations, needed by the add-replay variant.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Skip training and publish the imitation checkpoint as the final actor.
        #[arg(long)]
        il_only: bool,
        /// Configuration variant to train under.
        #[arg(long, default_value = "default")]
        variant: String,
        /// Prefix for output files.
        #[arg(long)]
        name: Option<String>,
    },
    /// Benchmark a checkpoint, or train and compare ablation variants.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = Suite::Full)]
        suite: Suite,
        /// Cell ids (`map/group/task`) for the cell suite.
        #[arg(long, value_delimiter = ',')]
        cells: Vec<String>,
        /// Variant keys for the ablation suite.
        #[arg(long, value_delimiter = ',', default_value = "default,wo-steer-reward,add-replay,more-steps")]
        variants: Vec<String>,
        /// Demonstrations, needed by the ablation suite.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Write a per-step log of each cell's first episode here.
        #[arg(long)]
        log_dir: Option<PathBuf>,
        #[arg(long)]
        name: Option<String>,
    },
    /// Print a logged episode step by step, checking its rewards.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Suite {
    /// The configured cells, or every task under the four standard conditions.
    Full,
    /// Only the cells named with --cells.
    Cell,
    /// The ablation grid on the one-turn task.
    Ablation,
}

struct Ctx {
    cfg: GlobalConfig,
    hash: String,
    out: PathBuf,
}

impl Ctx {
    fn new(common: &Common) -> Result<Self> {
        let cfg = GlobalConfig::load(&common.config)?;
        let out = common.out_dir.clone().unwrap_or_else(|| cfg.output_dir.clone());
        std::fs::create_dir_all(&out)?;
        Ok(Self { hash: cfg.short_hash(), cfg, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn provenance(&self, command: &str) -> Provenance {
        Provenance::new(command, &self.hash, self.cfg.seed)
    }
}

fn load_actor(ctx: &Ctx, path: &Path) -> Result<GatedActor> {
    let ck = Checkpoint::load(path)?;
    if ck.role != ACTOR_ROLE && ck.role != ACTOR_TARGET_ROLE {
        return Err(CirlError::Data(format!("{} holds a {:?} checkpoint, not an actor", path.display(), ck.role)));
    }
    let actor = GatedActor::from_checkpoint(&ck, ctx.cfg.policy.speed_scale_kmh)?;
    let cells = ctx.cfg.sim.raster.cells();
    if actor.input_dim() != cells {
        return Err(CirlError::Data(format!(
            "checkpoint expects {} raster cells, configuration renders {cells}",
            actor.input_dim()
        )));
    }
    Ok(actor)
}

fn gen_demos(common: &Common) -> Result<()> {
    let ctx = Ctx::new(common)?;
    let ds = stage_demos(&ctx.cfg)?;
    let path = ctx.path("demos.bin");
    ds.save(&path)?;
    let c = ds.counts();
    println!("{} samples (follow {}, straight {}, left {}, right {}) -> {}", ds.samples.len(), c[0], c[1], c[2], c[3], path.display());
    ctx.provenance("gen-demos").input(&common.config)?.output(&path)?.save(&ctx.path("demos.provenance.json"))
}

fn train_il(common: &Common, dataset: &Path) -> Result<()> {
    let ctx = Ctx::new(common)?;
    let ds = DemoDataset::load(dataset)?;
    let outcome = stage_il(&ctx.cfg, &ds)?;
    let ck_path = ctx.path("il_actor.ckpt");
    outcome.actor.to_checkpoint(ACTOR_ROLE, &ctx.hash).save(&ck_path)?;
    let report = ctx.path("il_report.csv");
    write_report(&outcome.report, &report, &ctx.hash)?;
    println!("best epoch {} -> {}", outcome.best_epoch, ck_path.display());
    ctx.provenance("train-il")
        .input(&common.config)?
        .input(dataset)?
        .output(&ck_path)?
        .output(&report)?
        .save(&ctx.path("il_actor.provenance.json"))
}

fn train_rl(
    common: &Common,
    checkpoint: Option<&Path>,
    dataset: Option<&Path>,
    il_only: bool,
    variant: &str,
    name: Option<&str>,
) -> Result<()> {
    let ctx = Ctx::new(common)?;
    let variant = Variant::from_key(variant)?;
    let cfg = variant.apply(&ctx.cfg);
    let pretrained = checkpoint.map(|p| load_actor(&ctx, p)).transpose()?;
    let default_name = match (&pretrained, il_only, variant) {
        (_, true, _) => "il-only".to_string(),
        (None, _, _) => "rl-scratch".to_string(),
        (Some(_), _, Variant::Default) => "cirl".to_string(),
        (Some(_), _, v) => format!("cirl-{}", v.key()),
    };
    let name = name.map(str::to_string).unwrap_or(default_name);
    let mut prov = ctx.provenance("train-rl").input(&common.config)?;
    if let Some(p) = checkpoint {
        prov = prov.input(p)?;
    }
    if il_only {
        let actor = pretrained.ok_or_else(|| CirlError::Config("--il-only needs --checkpoint".into()))?;
        let path = ctx.path(&format!("{name}_actor.ckpt"));
        actor.to_checkpoint(ACTOR_ROLE, &ctx.hash).save(&path)?;
        println!("imitation checkpoint published as {}", path.display());
        return prov.output(&path)?.save(&ctx.path(&format!("{name}.provenance.json")));
    }
    let demos = match dataset {
        Some(p) => {
            prov = prov.input(p)?;
            Some(DemoDataset::load(p)?)
        }
        None => None,
    };
    let outcome = stage_rl(&cfg, pretrained.as_ref(), demos.as_ref())?;
    let d = &outcome.ddpg;
    let files = [
        (format!("{name}_actor.ckpt"), d.actor.to_checkpoint(ACTOR_ROLE, &ctx.hash)),
        (format!("{name}_actor-target.ckpt"), d.actor_target.to_checkpoint(ACTOR_TARGET_ROLE, &ctx.hash)),
        (format!("{name}_critic.ckpt"), d.critic.to_checkpoint(CRITIC_ROLE, &ctx.hash)),
        (format!("{name}_critic-target.ckpt"), d.critic_target.to_checkpoint(CRITIC_TARGET_ROLE, &ctx.hash)),
    ];
    for (file, ck) in &files {
        let path = ctx.path(file);
        ck.save(&path)?;
        prov = prov.output(&path)?;
    }
    let metrics = ctx.path(&format!("{name}_metrics.csv"));
    write_metrics(&outcome.metrics, &metrics, &ctx.hash)?;
    let wins = outcome.metrics.iter().filter(|m| m.success).count();
    println!("{} episodes, {wins} successful, {} skipped critic updates", outcome.metrics.len(), d.skipped_updates);
    prov.output(&metrics)?.save(&ctx.path(&format!("{name}.provenance.json")))
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    common: &Common,
    checkpoint: &Path,
    suite: Suite,
    cells: &[String],
    variants: &[String],
    dataset: Option<&Path>,
    log_dir: Option<&Path>,
    name: Option<&str>,
) -> Result<()> {
    let ctx = Ctx::new(common)?;
    let actor = load_actor(&ctx, checkpoint)?;
    let mut prov = ctx.provenance("evaluate").input(&common.config)?.input(checkpoint)?;
    if suite == Suite::Ablation {
        let path = dataset.ok_or_else(|| CirlError::Config("the ablation suite needs --dataset".into()))?;
        let demos = DemoDataset::load(path)?;
        let variants = variants.iter().map(|v| Variant::from_key(v)).collect::<Result<Vec<_>>>()?;
        let rows = run_ablation_grid(&ctx.cfg, &variants, &actor, &demos)?;
        let table = ablation_table(&rows);
        let mut csv = String::from("variant,map,regime_group,task,episodes,successes,pct,config_hash\n");
        for r in &rows {
            for c in &r.results {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{:.1},{}",
                    r.variant.key(),
                    c.cell.map,
                    c.cell.group.name(),
                    c.cell.task.name(),
                    c.episodes.len(),
                    c.successes(),
                    c.pct(),
                    ctx.hash
                );
            }
        }
        let stem = name.unwrap_or("ablation");
        let (csv_path, txt_path) = (ctx.path(&format!("{stem}.csv")), ctx.path(&format!("{stem}.txt")));
        std::fs::write(&csv_path, csv)?;
        std::fs::write(&txt_path, format!("config {}\n{table}", ctx.hash))?;
        print!("{table}");
        return prov
            .input(path)?
            .output(&csv_path)?
            .output(&txt_path)?
            .save(&ctx.path(&format!("{stem}.provenance.json")));
    }
    let bench = match suite {
        Suite::Cell => {
            if cells.is_empty() {
                return Err(CirlError::Config("the cell suite needs --cells".into()));
            }
            let cells = cells.iter().map(|c| ConditionCell::parse(c)).collect::<Result<Vec<_>>>()?;
            BenchConfig { cells, ..ctx.cfg.bench.clone() }
        }
        _ => ctx.cfg.bench.clone(),
    };
    let results = cirl::pipeline::evaluate(&ctx.cfg, &bench, &actor)?;
    let stem = name.unwrap_or("results");
    let (csv_path, txt_path) = (ctx.path(&format!("{stem}.csv")), ctx.path(&format!("{stem}.txt")));
    std::fs::write(&csv_path, results_csv(&results, &ctx.hash)?)?;
    let table = results_table(&results);
    std::fs::write(&txt_path, format!("config {}\n{table}", ctx.hash))?;
    print!("{table}");
    prov = prov.output(&csv_path)?.output(&txt_path)?;
    if let Some(dir) = log_dir {
        std::fs::create_dir_all(dir)?;
        let seed = derive_seed(ctx.cfg.seed, &["bench"]);
        for cell in bench.resolved_cells() {
            let map = std::sync::Arc::new(cirl_sim::bundled_map(&cell.map)?);
            let spec = cell.episode_spec(&map, &ctx.cfg.sim, seed, 0)?;
            let mut steps = Vec::new();
            run_episode_logged(&map, &ctx.cfg.sim, &spec, &actor, &ctx.cfg.reward, Some(&mut steps))?;
            let log = EpisodeLog { config_hash: ctx.hash.clone(), spec, reward: ctx.cfg.reward.clone(), steps };
            let path = dir.join(format!("{}.json", cell.id().replace('/', "_")));
            log.save(&path)?;
            info!("episode log {}", path.display());
        }
    }
    prov.save(&ctx.path(&format!("{stem}.provenance.json")))
}

/// One line per logged step; fails if a recomputed reward differs from the log.
fn replay_trace(log: &EpisodeLog) -> Result<String> {
    let mut out = String::new();
    for s in &log.steps {
        let r = total_reward(&s.measurements, s.command, &s.action, &log.reward);
        if r != s.reward {
            return Err(CirlError::Data(format!("step {}: logged reward {:?}, recomputed {:?}", s.step, s.reward, r)));
        }
        let _ = writeln!(
            out,
            "{:>5} x={:8.2} y={:8.2} hdg={:6.3} cmd={:<10} steer={:+.3} thr={:.3} brk={:.3} v={:5.1}km/h \
             r_s={:+.0} r_v={:+.2} r_r={:+.0} r_o={:+.0} r_d={:+.0} r={:+.2} {:?}",
            s.step,
            s.x,
            s.y,
            s.heading,
            format!("{:?}", s.command),
            s.action.steer,
            s.action.throttle,
            s.action.brake,
            s.measurements.speed_kmh,
            r.steer,
            r.speed,
            r.sidewalk,
            r.opposite,
            r.damage,
            r.total,
            s.status,
        );
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::GenDemos { common } => gen_demos(&common),
        Cmd::TrainIl { common, dataset } => train_il(&common, &dataset),
        Cmd::TrainRl { common, checkpoint, dataset, il_only, variant, name } => {
            train_rl(&common, checkpoint.as_deref(), dataset.as_deref(), il_only, &variant, name.as_deref())
        }
        Cmd::Evaluate { common, checkpoint, suite, cells, variants, dataset, log_dir, name } => evaluate(
            &common,
            &checkpoint,
            suite,
            &cells,
            &variants,
            dataset.as_deref(),
            log_dir.as_deref(),
            name.as_deref(),
        ),
        Cmd::Replay { log } => {
            let log = EpisodeLog::load(&log)?;
            print!("{}", replay_trace(&log)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
