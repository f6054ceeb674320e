//! Evaluation protocol: condition cells of seeded episodes, success rates,
//! infraction counts and the result tables.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use cirl_sim::{
    bundled_map, sample_episode, ActionTriple, CollisionKind, Command, Env, EpisodeSpec, EpisodeStatus, Measurements,
    Observation, SimConfig, TaskKind, TownMap,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CirlError, Result};
use crate::expert::{expert_for_env, ExpertConfig};
use crate::policy::GatedActor;
use crate::regimes::RegimeGroup;
use crate::reward::{total_reward, RewardBreakdown, RewardConfig};
use crate::seeding::derive_seed;

/// Overlap fraction above which a sidewalk or opposite-lane event is counted.
pub const INFRACTION_OVERLAP: f64 = 0.3;

/// Anything that can drive an episode.
pub trait Driver: Sync {
    fn act(&self, env: &Env, obs: &Observation) -> Result<ActionTriple>;
}

impl Driver for GatedActor {
    fn act(&self, _env: &Env, obs: &Observation) -> Result<ActionTriple> {
        GatedActor::act(self, obs)
    }
}

pub struct ExpertDriver(pub ExpertConfig);

impl Driver for ExpertDriver {
    fn act(&self, env: &Env, _obs: &Observation) -> Result<ActionTriple> {
        expert_for_env(env, &self.0)
    }
}

pub struct ConstantDriver(pub ActionTriple);

impl Driver for ConstantDriver {
    fn act(&self, _env: &Env, _obs: &Observation) -> Result<ActionTriple> {
        Ok(self.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfractionCounts {
    pub collision_vp: u32,
    pub collision_other: u32,
    pub sidewalk: u32,
    pub opposite: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    pub status: EpisodeStatus,
    pub steps: usize,
    pub infractions: InfractionCounts,
    #[serde(rename = "return")]
    pub episode_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub command: Command,
    pub action: ActionTriple,
    pub measurements: Measurements,
    pub reward: RewardBreakdown,
    pub status: EpisodeStatus,
}

/// Per-step record of one episode, enough to recompute its rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub config_hash: String,
    pub spec: EpisodeSpec,
    pub reward: RewardConfig,
    pub steps: Vec<StepLog>,
}

impl EpisodeLog {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let s = serde_json::to_string(self).map_err(|e| CirlError::Data(e.to_string()))?;
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        let log: EpisodeLog = serde_json::from_str(&s).map_err(|e| CirlError::Data(format!("episode log: {e}")))?;
        if log.steps.is_empty() {
            return Err(CirlError::Data("episode log has no steps".into()));
        }
        Ok(log)
    }
}

/// Greedy rollout of `driver` on `spec` until the episode terminates.
pub fn run_episode(
    map: &Arc<TownMap>,
    sim: &SimConfig,
    spec: &EpisodeSpec,
    driver: &dyn Driver,
    reward: &RewardConfig,
) -> Result<EpisodeResult> {
    run_episode_logged(map, sim, spec, driver, reward, None)
}

pub fn run_episode_logged(
    map: &Arc<TownMap>,
    sim: &SimConfig,
    spec: &EpisodeSpec,
    driver: &dyn Driver,
    reward: &RewardConfig,
    mut log: Option<&mut Vec<StepLog>>,
) -> Result<EpisodeResult> {
    let mut env = Env::new(map.clone(), sim.clone());
    let mut obs = env.reset(spec)?;
    let mut infractions = InfractionCounts::default();
    let (mut on_sidewalk, mut on_opposite) = (false, false);
    let mut ret = 0.0;
    loop {
        let action = driver.act(&env, &obs)?;
        if !action.is_finite() {
            return Err(CirlError::Numeric(format!("driver produced {action:?}")));
        }
        let action = action.clipped();
        let command = obs.command;
        let out = env.step(action)?;
        let m = out.measurements;
        let r = total_reward(&m, command, &action, reward);
        ret += r.total;
        let side = m.sidewalk_overlap > INFRACTION_OVERLAP;
        let opp = m.opposite_overlap > INFRACTION_OVERLAP;
        infractions.sidewalk += (side && !on_sidewalk) as u32;
        infractions.opposite += (opp && !on_opposite) as u32;
        (on_sidewalk, on_opposite) = (side, opp);
        match m.collision_kind {
            CollisionKind::VehicleOrPedestrian => infractions.collision_vp += 1,
            CollisionKind::Other => infractions.collision_other += 1,
            CollisionKind::None => {}
        }
        if let Some(log) = log.as_deref_mut() {
            let v = env.vehicle()?;
            log.push(StepLog {
                step: env.steps(),
                x: v.pos.x,
                y: v.pos.y,
                heading: v.heading,
                command,
                action,
                measurements: m,
                reward: r,
                status: out.status,
            });
        }
        if out.status.is_terminal() {
            return Ok(EpisodeResult {
                success: out.status == EpisodeStatus::GoalReached,
                status: out.status,
                steps: env.steps(),
                infractions,
                episode_return: ret,
            });
        }
        obs = out.observation;
    }
}

/// A (map, perturbation group, task) combination evaluated over seeded episodes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionCell {
    pub map: String,
    pub group: RegimeGroup,
    pub task: TaskKind,
}

impl ConditionCell {
    pub fn new(map: &str, group: RegimeGroup, task: TaskKind) -> Self {
        Self { map: map.into(), group, task }
    }

    pub fn id(&self) -> String {
        format!("{}/{}/{}", self.map, self.group.name(), self.task.name())
    }

    /// Inverse of [`ConditionCell::id`]: `map/group/task`.
    pub fn parse(id: &str) -> Result<Self> {
        let parts: Vec<&str> = id.split('/').collect();
        let bad = || CirlError::Config(format!("cell {id:?} is not map/group/task"));
        let [map, group, task] = parts.as_slice() else {
            return Err(bad());
        };
        let group = RegimeGroup::from_name(group).ok_or_else(bad)?;
        let task = TaskKind::from_name(task).ok_or_else(bad)?;
        Ok(Self::new(map, group, task))
    }

    /// Episode spec `index` of this cell; depends only on the cell and the suite seed.
    pub fn episode_spec(&self, map: &TownMap, sim: &SimConfig, seed: u64, index: usize) -> Result<EpisodeSpec> {
        let regimes = self.group.regimes();
        let regime = regimes[index % regimes.len()].clone();
        let s = derive_seed(seed, &["bench", &self.id(), &index.to_string()]);
        Ok(sample_episode(map, self.task, s, regime, sim)?)
    }
}

/// The four conditions of the headline table: training, new perturbations,
/// new town, new town with new perturbations.
pub fn standard_conditions() -> Vec<(String, RegimeGroup)> {
    vec![
        ("town-a".into(), RegimeGroup::Training),
        ("town-a".into(), RegimeGroup::New),
        ("town-b".into(), RegimeGroup::Training),
        ("town-b".into(), RegimeGroup::New),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub episodes_per_cell: usize,
    /// Cells to run; empty means every task under the standard conditions.
    pub cells: Vec<ConditionCell>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { episodes_per_cell: 25, cells: Vec::new() }
    }
}

impl BenchConfig {
    pub fn resolved_cells(&self) -> Vec<ConditionCell> {
        if !self.cells.is_empty() {
            return self.cells.clone();
        }
        let mut out = Vec::new();
        for task in TaskKind::ALL {
            for (map, group) in standard_conditions() {
                out.push(ConditionCell::new(&map, group, task));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes_per_cell == 0 {
            return Err(CirlError::Config("bench.episodes_per_cell must be positive".into()));
        }
        for c in &self.cells {
            if bundled_map(&c.map).is_err() {
                return Err(CirlError::Config(format!("bench cell names unknown map {:?}", c.map)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: ConditionCell,
    pub episodes: Vec<EpisodeResult>,
}

impl CellResult {
    pub fn successes(&self) -> usize {
        self.episodes.iter().filter(|e| e.success).count()
    }

    pub fn pct(&self) -> f64 {
        100.0 * self.successes() as f64 / self.episodes.len().max(1) as f64
    }

    fn mean(&self, f: impl Fn(&InfractionCounts) -> u32) -> f64 {
        self.episodes.iter().map(|e| f(&e.infractions) as f64).sum::<f64>() / self.episodes.len().max(1) as f64
    }
}

/// Evaluates one driver on every cell. Episodes run in parallel; results are
/// returned in cell order.
pub fn run_benchmark(
    cfg: &BenchConfig,
    sim: &SimConfig,
    reward: &RewardConfig,
    driver: &dyn Driver,
    seed: u64,
) -> Result<Vec<CellResult>> {
    cfg.validate()?;
    let cells = cfg.resolved_cells();
    let mut maps: Vec<(String, Arc<TownMap>)> = Vec::new();
    for c in &cells {
        if !maps.iter().any(|(n, _)| n == &c.map) {
            maps.push((c.map.clone(), Arc::new(bundled_map(&c.map)?)));
        }
    }
    let map_of = |name: &str| maps.iter().find(|(n, _)| n == name).map(|(_, m)| m.clone()).expect("loaded");
    let jobs: Vec<(usize, usize)> =
        (0..cells.len()).flat_map(|c| (0..cfg.episodes_per_cell).map(move |e| (c, e))).collect();
    let results: Vec<Result<EpisodeResult>> = jobs
        .par_iter()
        .map(|&(c, e)| {
            let map = map_of(&cells[c].map);
            let spec = cells[c].episode_spec(&map, sim, seed, e)?;
            run_episode(&map, sim, &spec, driver, reward)
        })
        .collect();
    let mut out: Vec<CellResult> =
        cells.into_iter().map(|cell| CellResult { cell, episodes: Vec::new() }).collect();
    for ((c, _), r) in jobs.into_iter().zip(results) {
        out[c].episodes.push(r?);
    }
    Ok(out)
}

pub fn write_results_csv(results: &[CellResult], path: impl AsRef<Path>, config_hash: &str) -> Result<()> {
    std::fs::write(path, results_csv(results, config_hash)?)?;
    Ok(())
}

pub fn results_csv(results: &[CellResult], config_hash: &str) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "task",
        "map",
        "regime_group",
        "episodes",
        "successes",
        "pct",
        "mean_collision_vp",
        "mean_collision_other",
        "mean_sidewalk",
        "mean_opposite",
        "config_hash",
    ])?;
    for r in results {
        w.write_record([
            r.cell.task.name().to_string(),
            r.cell.map.clone(),
            r.cell.group.name().to_string(),
            r.episodes.len().to_string(),
            r.successes().to_string(),
            format!("{:.1}", r.pct()),
            format!("{:.3}", r.mean(|i| i.collision_vp)),
            format!("{:.3}", r.mean(|i| i.collision_other)),
            format!("{:.3}", r.mean(|i| i.sidewalk)),
            format!("{:.3}", r.mean(|i| i.opposite)),
            config_hash.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| CirlError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

/// Rows are tasks, columns are (map, group) conditions, entries success percentages.
pub fn results_table(results: &[CellResult]) -> String {
    let mut conditions: Vec<(String, RegimeGroup)> = Vec::new();
    let mut tasks: Vec<TaskKind> = Vec::new();
    for r in results {
        let c = (r.cell.map.clone(), r.cell.group);
        if !conditions.contains(&c) {
            conditions.push(c);
        }
        if !tasks.contains(&r.cell.task) {
            tasks.push(r.cell.task);
        }
    }
    let mut s = String::new();
    let _ = write!(s, "{:<12}", "task");
    for (m, g) in &conditions {
        let _ = write!(s, " {:>16}", format!("{m}/{}", g.name()));
    }
    s.push('\n');
    for t in &tasks {
        let _ = write!(s, "{:<12}", t.name());
        for (m, g) in &conditions {
            let cell = results.iter().find(|r| r.cell.task == *t && &r.cell.map == m && r.cell.group == *g);
            match cell {
                Some(r) => {
                    let _ = write!(s, " {:>16}", format!("{:.0}", r.pct()));
                }
                None => {
                    let _ = write!(s, " {:>16}", "-");
                }
            }
        }
        s.push('\n');
    }
    s
}
