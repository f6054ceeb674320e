//! Stage wiring: demonstrations, imitation, reinforcement, evaluation, and
//! the ablation grid built on top of them.

use std::fmt::Write as _;

use cirl_sim::TaskKind;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::{run_benchmark, standard_conditions, BenchConfig, CellResult, ConditionCell, Driver};
use crate::config::GlobalConfig;
use crate::demo::{generate_demos, DemoDataset};
use crate::error::{CirlError, Result};
use crate::il::{train_il, ILOutcome};
use crate::policy::GatedActor;
use crate::rl::{train_rl, RLOutcome};
use crate::seeding::derive_seed;

/// Steps used by the "more simulation steps" ablation.
pub const MORE_STEPS: usize = 300_000;

/// A named change to the default configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Default,
    NoSteerReward,
    NoSpeedReward,
    NoOffroadCollision,
    RewardX10,
    AddReplay,
    MoreSteps,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Default,
        Variant::NoSteerReward,
        Variant::NoSpeedReward,
        Variant::NoOffroadCollision,
        Variant::RewardX10,
        Variant::AddReplay,
        Variant::MoreSteps,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Variant::Default => "default",
            Variant::NoSteerReward => "wo-steer-reward",
            Variant::NoSpeedReward => "wo-speed",
            Variant::NoOffroadCollision => "wo-offroad-coll",
            Variant::RewardX10 => "reward-x10",
            Variant::AddReplay => "add-replay",
            Variant::MoreSteps => "more-steps",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Default => "CIRL",
            Variant::NoSteerReward => "CIRL w/o steer reward",
            Variant::NoSpeedReward => "CIRL w/o speed",
            Variant::NoOffroadCollision => "CIRL w/o offroad&coll",
            Variant::RewardX10 => "CIRL reward x10",
            Variant::AddReplay => "CIRL w/ add replay",
            Variant::MoreSteps => "CIRL more steps",
        }
    }

    pub fn from_key(key: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|v| v.key() == key).ok_or_else(|| {
            let known: Vec<_> = Self::ALL.iter().map(|v| v.key()).collect();
            CirlError::Config(format!("unknown variant {key:?}; expected one of {}", known.join(", ")))
        })
    }

    /// The configuration this variant trains under.
    pub fn apply(self, base: &GlobalConfig) -> GlobalConfig {
        let mut cfg = base.clone();
        match self {
            Variant::Default => {}
            Variant::NoSteerReward => cfg.reward.enable_steer = false,
            Variant::NoSpeedReward => cfg.reward.enable_speed = false,
            Variant::NoOffroadCollision => cfg.reward.enable_offroad_collision = false,
            Variant::RewardX10 => cfg.reward.scale = 10.0,
            Variant::AddReplay => cfg.rl.demo_replay = true,
            Variant::MoreSteps => cfg.rl.total_steps = MORE_STEPS,
        }
        cfg
    }
}

pub fn stage_demos(cfg: &GlobalConfig) -> Result<DemoDataset> {
    generate_demos(&cfg.demo, &cfg.sim, &cfg.expert, derive_seed(cfg.seed, &["demo"]), &cfg.short_hash())
}

pub fn stage_il(cfg: &GlobalConfig, demos: &DemoDataset) -> Result<ILOutcome> {
    check_raster(cfg, demos)?;
    train_il(demos, &cfg.policy, &cfg.il, derive_seed(cfg.seed, &["il"]))
}

/// Reinforcement stage. `pretrained` selects imitative initialization; with
/// `None` the actor starts from scratch. Every variant shares one seed.
pub fn stage_rl(cfg: &GlobalConfig, pretrained: Option<&GatedActor>, demos: Option<&DemoDataset>) -> Result<RLOutcome> {
    if let Some(ds) = demos {
        check_raster(cfg, ds)?;
    }
    train_rl(&cfg.rl, &cfg.sim, &cfg.reward, &cfg.policy, pretrained, demos, derive_seed(cfg.seed, &["rl"]))
}

/// Benchmark of one driver under `bench`, with the evaluation seed shared by
/// every driver and variant.
pub fn evaluate(cfg: &GlobalConfig, bench: &BenchConfig, driver: &dyn Driver) -> Result<Vec<CellResult>> {
    run_benchmark(bench, &cfg.sim, &cfg.reward, driver, derive_seed(cfg.seed, &["bench"]))
}

fn check_raster(cfg: &GlobalConfig, ds: &DemoDataset) -> Result<()> {
    let (h, w) = (cfg.sim.raster.height, cfg.sim.raster.width);
    if (ds.height, ds.width) != (h, w) {
        return Err(CirlError::Data(format!(
            "dataset rasters are {}x{}, configuration renders {h}x{w}",
            ds.height, ds.width
        )));
    }
    Ok(())
}

/// One-turn task under every standard condition: the ablation protocol.
pub fn ablation_bench(base: &BenchConfig) -> BenchConfig {
    let cells = standard_conditions()
        .into_iter()
        .map(|(map, group)| ConditionCell::new(&map, group, TaskKind::OneTurn))
        .collect();
    BenchConfig { cells, ..base.clone() }
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: Variant,
    pub results: Vec<CellResult>,
}

/// Trains every variant from the same imitation checkpoint and seed, then
/// evaluates each on the ablation protocol. Variants train in parallel.
pub fn run_ablation_grid(
    cfg: &GlobalConfig,
    variants: &[Variant],
    pretrained: &GatedActor,
    demos: &DemoDataset,
) -> Result<Vec<AblationRow>> {
    let bench = ablation_bench(&cfg.bench);
    variants
        .par_iter()
        .map(|&variant| {
            let vcfg = variant.apply(cfg);
            let outcome = stage_rl(&vcfg, Some(pretrained), Some(demos))?;
            let results = evaluate(cfg, &bench, &outcome.ddpg.actor)?;
            Ok(AblationRow { variant, results })
        })
        .collect()
}

/// Rows are variants, columns the conditions, cells the success percentage.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    let Some(first) = rows.first() else {
        return out;
    };
    let width = rows.iter().map(|r| r.variant.label().len()).max().unwrap_or(0).max(7);
    let _ = write!(out, "{:width$}", "variant");
    for c in &first.results {
        let _ = write!(out, "  {:>18}", format!("{}/{}", c.cell.map, c.cell.group.name()));
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{:width$}", r.variant.label());
        for c in &r.results {
            let _ = write!(out, "  {:>18.0}", c.pct());
        }
        out.push('\n');
    }
    out
}
