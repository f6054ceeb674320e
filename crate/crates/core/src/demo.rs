//! Expert demonstrations: generation, balancing and the binary dataset file.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use cirl_sim::{
    sample_episode, ActionTriple, CollisionKind, Command, Env, EpisodeStatus, Measurements, Observation,
    PerturbationRegime, SimConfig, TaskKind, TownMap,
};
use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CirlError, Result};
use crate::expert::{expert_for_env, ExpertConfig};
use crate::regimes::RegimeGroup;
use crate::seeding::derive_seed;

pub const DEMO_MAGIC: &[u8; 8] = b"CIRLDEM1";
pub const DEMO_VERSION: u32 = 1;

/// Short steering disturbances injected while the expert drives, so the
/// recorded labels include recoveries back to the route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteerDisturbance {
    /// Per-step probability of starting a disturbance.
    pub probability: f64,
    /// Seconds.
    pub duration: f64,
    /// Peak steering offset.
    pub amplitude: f64,
}

impl Default for SteerDisturbance {
    fn default() -> Self {
        Self { probability: 0.01, duration: 1.0, amplitude: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub map: String,
    /// Episodes cycled over `tasks` × regimes before balancing.
    pub episodes: usize,
    pub tasks: Vec<TaskKind>,
    pub regime_group: RegimeGroup,
    pub min_per_branch: usize,
    /// Turn and Straight commands are topped up to at least Follow / this.
    pub max_follow_ratio: f64,
    pub max_balancing_episodes: usize,
    pub disturbance: SteerDisturbance,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            map: "town-a".into(),
            episodes: 48,
            tasks: vec![TaskKind::Straight, TaskKind::OneTurn, TaskKind::Navigation, TaskKind::NavDynamic],
            regime_group: RegimeGroup::Training,
            min_per_branch: 2000,
            max_follow_ratio: 4.0,
            max_balancing_episodes: 1000,
            disturbance: SteerDisturbance::default(),
        }
    }
}

impl DemoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(CirlError::Config("demo.tasks is empty".into()));
        }
        if !(self.max_follow_ratio >= 1.0) {
            return Err(CirlError::Config("demo.max_follow_ratio must be >= 1".into()));
        }
        let d = &self.disturbance;
        if !(0.0..=1.0).contains(&d.probability) || !(d.duration >= 0.0) || !(d.amplitude >= 0.0) {
            return Err(CirlError::Config(format!("bad demo.disturbance {d:?}")));
        }
        Ok(())
    }

    /// Per-command minimum counts implied by the current Follow count.
    fn targets(&self, counts: &[usize; 4]) -> [usize; 4] {
        let follow = counts[Command::Follow.index()];
        let lifted = ((follow as f64 / self.max_follow_ratio).ceil() as usize).max(self.min_per_branch);
        let mut t = [lifted; 4];
        t[Command::Follow.index()] = self.min_per_branch;
        t
    }
}

/// One recorded expert step.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSample {
    pub episode: u32,
    pub step: u32,
    pub observation: Observation,
    /// Expert label for this observation.
    pub action: ActionTriple,
    /// Action actually applied to the simulator (label plus disturbance).
    pub executed: ActionTriple,
    /// Measurements and status after the executed step.
    pub measurements: Measurements,
    pub status: EpisodeStatus,
}

impl DemoSample {
    pub fn command(&self) -> Command {
        self.observation.command
    }

    pub fn speed_kmh(&self) -> f64 {
        self.observation.speed_kmh()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoDataset {
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub samples: Vec<DemoSample>,
}

impl DemoDataset {
    pub fn counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for s in &self.samples {
            c[s.command().index()] += 1;
        }
        c
    }

    pub fn check_min_per_branch(&self, min: usize) -> Result<()> {
        let counts = self.counts();
        for cmd in Command::ALL {
            if counts[cmd.index()] < min {
                return Err(CirlError::Data(format!(
                    "{} has {} samples, need {min}",
                    cmd.name(),
                    counts[cmd.index()]
                )));
            }
        }
        Ok(())
    }

    /// Index of the sample that follows `i` in the same episode, if recorded.
    pub fn successor(&self, i: usize) -> Option<usize> {
        let a = &self.samples[i];
        let b = self.samples.get(i + 1)?;
        (b.episode == a.episode && b.step == a.step + 1).then_some(i + 1)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let cells = self.height * self.width;
        let mut out = Vec::with_capacity(64 + self.samples.len() * (RECORD_FIXED + 4 * cells));
        out.extend_from_slice(DEMO_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.config_hash.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_hash.as_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.samples.len() as u64).to_le_bytes());
        for c in self.counts() {
            out.extend_from_slice(&(c as u64).to_le_bytes());
        }
        for s in &self.samples {
            out.extend_from_slice(&s.episode.to_le_bytes());
            out.extend_from_slice(&s.step.to_le_bytes());
            out.push(s.command().index() as u8);
            out.push(status_code(s.status));
            out.push(collision_code(s.measurements.collision_kind));
            for v in s.action.to_array().into_iter().chain(s.executed.to_array()).chain([
                s.observation.speed,
                s.measurements.speed_kmh,
                s.measurements.sidewalk_overlap,
                s.measurements.opposite_overlap,
                s.measurements.distance_to_goal,
            ]) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in &s.observation.raster {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != DEMO_MAGIC {
            return Err(CirlError::Data("not a demonstration file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != DEMO_VERSION {
            return Err(CirlError::Data(format!("unsupported demo version {version}")));
        }
        let hash_len = r.u32()? as usize;
        let config_hash = String::from_utf8(r.take(hash_len)?.to_vec())
            .map_err(|_| CirlError::Data("config hash is not utf-8".into()))?;
        let seed = r.u64()?;
        let height = r.u32()? as usize;
        let width = r.u32()? as usize;
        let n = r.u64()? as usize;
        let mut counts = [0usize; 4];
        for c in &mut counts {
            *c = r.u64()? as usize;
        }
        let cells = height * width;
        if bytes.len() - r.pos != n * (RECORD_FIXED + 4 * cells) {
            return Err(CirlError::Data("demo file length does not match its header".into()));
        }
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let episode = r.u32()?;
            let step = r.u32()?;
            let command = Command::from_index(r.u8()? as usize)
                .ok_or_else(|| CirlError::Data("bad command code".into()))?;
            let status = status_from_code(r.u8()?)?;
            let collision_kind = collision_from_code(r.u8()?)?;
            let mut f = [0.0; 11];
            for v in &mut f {
                *v = r.f64()?;
            }
            let mut raster = Vec::with_capacity(cells);
            for _ in 0..cells {
                raster.push(r.f32()?);
            }
            let action = ActionTriple::from_array([f[0], f[1], f[2]]);
            let executed = ActionTriple::from_array([f[3], f[4], f[5]]);
            if !action.in_bounds() || !executed.in_bounds() {
                return Err(CirlError::Data(format!("action out of bounds at episode {episode} step {step}")));
            }
            samples.push(DemoSample {
                episode,
                step,
                observation: Observation { raster, height, width, speed: f[6], command },
                action,
                executed,
                measurements: Measurements {
                    speed_kmh: f[7],
                    collision_kind,
                    sidewalk_overlap: f[8],
                    opposite_overlap: f[9],
                    distance_to_goal: f[10],
                },
                status,
            });
        }
        let ds = DemoDataset { version, config_hash, seed, height, width, samples };
        if ds.counts() != counts {
            return Err(CirlError::Data("per-command counts do not match the header".into()));
        }
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

/// Bytes per record excluding the raster.
const RECORD_FIXED: usize = 4 + 4 + 3 + 11 * 8;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CirlError::Data("demo file truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4")))
    }
}

fn status_code(s: EpisodeStatus) -> u8 {
    match s {
        EpisodeStatus::Running => 0,
        EpisodeStatus::GoalReached => 1,
        EpisodeStatus::Collision => 2,
        EpisodeStatus::TimeBudgetExhausted => 3,
    }
}

fn status_from_code(c: u8) -> Result<EpisodeStatus> {
    Ok(match c {
        0 => EpisodeStatus::Running,
        1 => EpisodeStatus::GoalReached,
        2 => EpisodeStatus::Collision,
        3 => EpisodeStatus::TimeBudgetExhausted,
        _ => return Err(CirlError::Data(format!("bad status code {c}"))),
    })
}

fn collision_code(k: CollisionKind) -> u8 {
    match k {
        CollisionKind::None => 0,
        CollisionKind::VehicleOrPedestrian => 1,
        CollisionKind::Other => 2,
    }
}

fn collision_from_code(c: u8) -> Result<CollisionKind> {
    Ok(match c {
        0 => CollisionKind::None,
        1 => CollisionKind::VehicleOrPedestrian,
        2 => CollisionKind::Other,
        _ => return Err(CirlError::Data(format!("bad collision code {c}"))),
    })
}

/// Outcome of one expert episode.
#[derive(Debug)]
pub enum EpisodeRecording {
    Kept(Vec<DemoSample>),
    Dropped(String),
}

/// Samples an episode for `task` and drives it with the expert, recording every step.
pub fn record_expert_episode(
    map: &Arc<TownMap>,
    sim: &SimConfig,
    expert: &ExpertConfig,
    disturbance: &SteerDisturbance,
    task: TaskKind,
    regime: PerturbationRegime,
    seed: u64,
    episode: u32,
) -> Result<EpisodeRecording> {
    let spec = sample_episode(map, task, seed, regime, sim)?;
    let mut env = Env::new(map.clone(), sim.clone());
    let mut obs = env.reset(&spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["disturbance"]));
    let burst_steps = (disturbance.duration / sim.dt).round() as usize;
    let mut burst: Option<(usize, f64)> = None;
    let mut samples = Vec::new();
    let mut step = 0u32;
    loop {
        let label = match expert_for_env(&env, expert) {
            Ok(a) => a,
            Err(CirlError::ExpertAbort { deviation }) => {
                return Ok(EpisodeRecording::Dropped(format!("expert abort at {deviation:.1} m")))
            }
            Err(e) => return Err(e),
        };
        let draw: f64 = rng.random();
        let sign: f64 = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        if burst.is_none() && burst_steps > 0 && draw < disturbance.probability {
            burst = Some((0, sign * disturbance.amplitude));
        }
        let mut executed = label;
        if let Some((k, peak)) = burst {
            let phase = (k as f64 + 0.5) / burst_steps as f64;
            executed.steer += peak * (1.0 - (2.0 * phase - 1.0).abs());
            executed = executed.clipped();
            burst = (k + 1 < burst_steps).then_some((k + 1, peak));
        }
        let out = env.step(executed)?;
        samples.push(DemoSample {
            episode,
            step,
            observation: obs,
            action: label,
            executed,
            measurements: out.measurements,
            status: out.status,
        });
        step += 1;
        obs = out.observation;
        match out.status {
            EpisodeStatus::Running => {}
            EpisodeStatus::GoalReached => return Ok(EpisodeRecording::Kept(samples)),
            other => return Ok(EpisodeRecording::Dropped(format!("ended with {other:?}"))),
        }
    }
}

/// Generates a balanced, collision-free demonstration dataset.
pub fn generate_demos(
    cfg: &DemoConfig,
    sim: &SimConfig,
    expert: &ExpertConfig,
    seed: u64,
    config_hash: &str,
) -> Result<DemoDataset> {
    cfg.validate()?;
    if cfg.episodes == 0 {
        return Err(CirlError::Data("demo generation needs at least one episode".into()));
    }
    let map = Arc::new(cirl_sim::bundled_map(&cfg.map)?);
    let regimes = cfg.regime_group.regimes();
    let plan: Vec<(TaskKind, PerturbationRegime)> = (0..cfg.episodes)
        .map(|i| {
            let task = cfg.tasks[i % cfg.tasks.len()];
            let regime = regimes[(i / cfg.tasks.len()) % regimes.len()].clone();
            (task, regime)
        })
        .collect();
    let recorded: Vec<Result<EpisodeRecording>> = plan
        .par_iter()
        .enumerate()
        .map(|(i, (task, regime))| {
            let s = derive_seed(seed, &["demo", "base", &i.to_string()]);
            record_expert_episode(&map, sim, expert, &cfg.disturbance, *task, regime.clone(), s, i as u32)
        })
        .collect();
    let mut samples = Vec::new();
    for (i, r) in recorded.into_iter().enumerate() {
        match r? {
            EpisodeRecording::Kept(s) => samples.extend(s),
            EpisodeRecording::Dropped(why) => warn!("demo episode {i} dropped: {why}"),
        }
    }
    if samples.is_empty() {
        return Err(CirlError::Data("every demonstration episode was dropped".into()));
    }

    let mut counts = [0usize; 4];
    for s in &samples {
        counts[s.command().index()] += 1;
    }
    let mut next_episode = cfg.episodes as u32;
    for k in 0..cfg.max_balancing_episodes {
        let targets = cfg.targets(&counts);
        let deficit: Vec<Command> = Command::ALL
            .into_iter()
            .filter(|c| counts[c.index()] < targets[c.index()])
            .collect();
        let Some(&first) = deficit.first() else { break };
        let task = match first {
            Command::Follow => TaskKind::Straight,
            Command::Straight => TaskKind::Navigation,
            Command::TurnLeft | Command::TurnRight => TaskKind::OneTurn,
        };
        let regime = regimes[k % regimes.len()].clone();
        let s = derive_seed(seed, &["demo", "balance", &k.to_string()]);
        let episode = next_episode;
        next_episode += 1;
        match record_expert_episode(&map, sim, expert, &cfg.disturbance, task, regime, s, episode)? {
            EpisodeRecording::Kept(ep) => {
                for sample in ep {
                    let c = sample.command();
                    if deficit.contains(&c) {
                        counts[c.index()] += 1;
                        samples.push(sample);
                    }
                }
            }
            EpisodeRecording::Dropped(why) => warn!("balancing episode {k} dropped: {why}"),
        }
    }
    let ds = DemoDataset {
        version: DEMO_VERSION,
        config_hash: config_hash.to_string(),
        seed,
        height: sim.raster.height,
        width: sim.raster.width,
        samples,
    };
    let targets = cfg.targets(&ds.counts());
    for c in Command::ALL {
        if ds.counts()[c.index()] < targets[c.index()] {
            return Err(CirlError::Data(format!(
                "could not balance {}: {} samples after {} extra episodes",
                c.name(),
                ds.counts()[c.index()],
                cfg.max_balancing_episodes
            )));
        }
    }
    info!("generated {} demo samples, per command {:?}", ds.samples.len(), ds.counts());
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> DemoConfig {
        DemoConfig { episodes: 4, min_per_branch: 50, max_follow_ratio: 8.0, ..DemoConfig::default() }
    }

    #[test]
    fn zero_episodes_is_an_error() {
        let cfg = DemoConfig { episodes: 0, ..DemoConfig::default() };
        let err = generate_demos(&cfg, &SimConfig::default(), &ExpertConfig::default(), 1, "h").unwrap_err();
        assert!(matches!(err, CirlError::Data(_)));
    }

    #[test]
    fn file_round_trip_and_balance() {
        let ds = generate_demos(&small_cfg(), &SimConfig::default(), &ExpertConfig::default(), 3, "abc").unwrap();
        ds.check_min_per_branch(50).unwrap();
        let back = DemoDataset::from_bytes(&ds.to_bytes()).unwrap();
        assert_eq!(back, ds);
        assert!(ds.samples.iter().all(|s| s.status != EpisodeStatus::Collision));
        assert!(ds.samples.iter().all(|s| s.action.in_bounds() && s.executed.in_bounds()));
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let mut bytes = DemoDataset {
            version: DEMO_VERSION,
            config_hash: String::new(),
            seed: 0,
            height: 2,
            width: 2,
            samples: vec![],
        }
        .to_bytes();
        assert!(DemoDataset::from_bytes(&bytes).is_ok());
        bytes[0] = b'X';
        assert!(matches!(DemoDataset::from_bytes(&bytes), Err(CirlError::Data(_))));
        assert!(DemoDataset::from_bytes(&bytes[..10]).is_err());
    }

    #[test]
    fn targets_lift_rare_commands() {
        let cfg = DemoConfig::default();
        assert_eq!(cfg.targets(&[20_000, 0, 0, 0]), [2000, 5000, 5000, 5000]);
        assert_eq!(cfg.targets(&[100, 0, 0, 0]), [2000; 4]);
    }
}
