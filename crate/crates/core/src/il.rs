//! Stage one: branch-masked behaviour cloning of the expert demonstrations.

use std::collections::BTreeSet;
use std::path::Path;

use cirl_sim::{ActionTriple, Command};
use log::info;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demo::{DemoDataset, DemoSample};
use crate::error::{CirlError, Result};
use crate::policy::{ActorOptimizer, GatedActor, ObsBatch, PolicyConfig};
use crate::seeding::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ILConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Cosine-decayed from `lr` to `lr_final` over all updates.
    pub lr: f64,
    pub lr_final: f64,
    /// Weights on the steer, throttle and brake residuals.
    pub loss_weights: [f64; 3],
    pub validation_fraction: f64,
    pub min_per_branch: usize,
}

impl Default for ILConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 128,
            lr: 1e-4,
            lr_final: 1e-5,
            loss_weights: [1.0, 1.0, 1.0],
            validation_fraction: 0.1,
            min_per_branch: 2000,
        }
    }
}

impl ILConfig {
    pub fn validate(&self) -> Result<()> {
        if self.loss_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(CirlError::Config("il.loss_weights must be >= 0".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return Err(CirlError::Config("il.validation_fraction must be in (0, 0.5)".into()));
        }
        if self.batch_size == 0 || !(self.lr > 0.0) || !(self.lr_final >= 0.0) {
            return Err(CirlError::Config("il.batch_size and il.lr must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate for update `t` of `total`.
    pub fn lr_at(&self, t: usize, total: usize) -> f64 {
        if total <= 1 {
            return self.lr;
        }
        let frac = t as f64 / (total - 1) as f64;
        self.lr_final + 0.5 * (self.lr - self.lr_final) * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

/// Weighted squared error between predicted and target actions.
pub fn il_loss(pred: &ActionTriple, target: &ActionTriple, w: &[f64; 3]) -> f64 {
    let (p, t) = (pred.to_array(), target.to_array());
    (0..3).map(|k| w[k] * (p[k] - t[k]).powi(2)).sum()
}

/// Mean per-sample loss over a batch and its gradient w.r.t. the predictions.
pub fn batch_loss(pred: &Array2<f64>, target: &Array2<f64>, w: &[f64; 3]) -> (f64, Array2<f64>) {
    let n = pred.nrows().max(1) as f64;
    let mut grad = Array2::zeros(pred.dim());
    let mut total = 0.0;
    for i in 0..pred.nrows() {
        for k in 0..3 {
            let r = pred[[i, k]] - target[[i, k]];
            total += w[k] * r * r;
            grad[[i, k]] = 2.0 * w[k] * r / n;
        }
    }
    (total / n, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub epoch: usize,
    pub split: String,
    pub command: String,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct ILOutcome {
    pub actor: GatedActor,
    pub report: Vec<ReportRow>,
    pub best_epoch: usize,
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
}

pub fn write_report(rows: &[ReportRow], path: impl AsRef<Path>, config_hash: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "split", "command", "loss", "config_hash"])?;
    for r in rows {
        w.write_record([r.epoch.to_string(), r.split.clone(), r.command.clone(), format!("{:.9e}", r.loss), config_hash.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Episode-level train/validation split. Every command present in the data
/// gets at least one validation episode.
pub fn split_by_episode(ds: &DemoDataset, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let episodes: BTreeSet<u32> = ds.samples.iter().map(|s| s.episode).collect();
    let mut order: Vec<u32> = episodes.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut per_episode: std::collections::BTreeMap<u32, (usize, [bool; 4])> = Default::default();
    for s in &ds.samples {
        let e = per_episode.entry(s.episode).or_default();
        e.0 += 1;
        e.1[s.command().index()] = true;
    }
    let want = (fraction * ds.samples.len() as f64).ceil() as usize;
    let mut val: BTreeSet<u32> = BTreeSet::new();
    let mut count = 0;
    for &e in &order {
        if count >= want {
            break;
        }
        val.insert(e);
        count += per_episode[&e].0;
    }
    for c in 0..4 {
        if val.iter().any(|e| per_episode[e].1[c]) {
            continue;
        }
        if let Some(&e) = order.iter().rev().find(|e| !val.contains(e) && per_episode[e].1[c]) {
            val.insert(e);
        }
    }
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for (i, s) in ds.samples.iter().enumerate() {
        if val.contains(&s.episode) {
            valid.push(i);
        } else {
            train.push(i);
        }
    }
    (train, valid)
}

fn stack(ds: &DemoDataset, idx: &[usize], scale: f64) -> Result<(ObsBatch, Array2<f64>)> {
    let samples: Vec<&DemoSample> = idx.iter().map(|&i| &ds.samples[i]).collect();
    let obs: Vec<_> = samples.iter().map(|s| &s.observation).collect();
    let batch = ObsBatch::new(&obs, scale)?;
    let mut target = Array2::zeros((idx.len(), 3));
    for (i, s) in samples.iter().enumerate() {
        for (k, v) in s.action.to_array().into_iter().enumerate() {
            target[[i, k]] = v;
        }
    }
    Ok((batch, target))
}

/// Mean loss per command over `idx`, evaluated without recording.
pub fn evaluate(actor: &GatedActor, ds: &DemoDataset, idx: &[usize], w: &[f64; 3]) -> Result<[f64; 4]> {
    let mut sums = [0.0; 4];
    let mut counts = [0usize; 4];
    for chunk in idx.chunks(512) {
        let (batch, target) = stack(ds, chunk, actor.speed_scale_kmh)?;
        let pred = actor.forward_batch(&batch)?;
        for (i, c) in batch.commands.iter().enumerate() {
            let p = ActionTriple::new(pred[[i, 0]], pred[[i, 1]], pred[[i, 2]]);
            let t = ActionTriple::new(target[[i, 0]], target[[i, 1]], target[[i, 2]]);
            sums[c.index()] += il_loss(&p, &t, w);
            counts[c.index()] += 1;
        }
    }
    Ok(std::array::from_fn(|c| if counts[c] > 0 { sums[c] / counts[c] as f64 } else { f64::NAN }))
}

/// Trains a fresh gated actor on the demonstrations and returns the
/// best-validation epoch's parameters.
pub fn train_il(ds: &DemoDataset, policy: &PolicyConfig, cfg: &ILConfig, seed: u64) -> Result<ILOutcome> {
    cfg.validate()?;
    ds.check_min_per_branch(cfg.min_per_branch)?;
    let (train, valid) = split_by_episode(ds, cfg.validation_fraction, derive_seed(seed, &["il", "split"]));
    train_il_on(ds, &train, &valid, policy, cfg, seed)
}

/// Training loop over explicit train and validation index sets.
pub fn train_il_on(
    ds: &DemoDataset,
    train: &[usize],
    valid: &[usize],
    policy: &PolicyConfig,
    cfg: &ILConfig,
    seed: u64,
) -> Result<ILOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(CirlError::Data("no training samples".into()));
    }
    let mut actor = GatedActor::new(policy, ds.height * ds.width, derive_seed(seed, &["il", "init"]))?;
    let mut opt = ActorOptimizer::new(&actor);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["il", "shuffle"]));
    let per_epoch = train.len().div_ceil(cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    let mut order = train.to_vec();
    let mut report = Vec::new();
    let mut best: Option<(f64, usize, GatedActor)> = None;
    let mut t = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        let mut counts = [0usize; 4];
        for chunk in order.chunks(cfg.batch_size) {
            let (batch, target) = stack(ds, chunk, policy.speed_scale_kmh)?;
            let pred = actor.forward_train(&batch)?;
            let (_, grad) = batch_loss(&pred, &target, &cfg.loss_weights);
            for (i, c) in batch.commands.iter().enumerate() {
                let r: f64 = (0..3).map(|k| cfg.loss_weights[k] * (pred[[i, k]] - target[[i, k]]).powi(2)).sum();
                sums[c.index()] += r;
                counts[c.index()] += 1;
            }
            let active = actor.backward(grad.view())?;
            opt.step(&mut actor, active, cfg.lr_at(t, total))?;
            t += 1;
        }
        let val = if valid.is_empty() { [f64::NAN; 4] } else { evaluate(&actor, ds, valid, &cfg.loss_weights)? };
        for c in Command::ALL {
            let i = c.index();
            let train_loss = if counts[i] > 0 { sums[i] / counts[i] as f64 } else { f64::NAN };
            report.push(ReportRow { epoch, split: "train".into(), command: c.name().into(), loss: train_loss });
            report.push(ReportRow { epoch, split: "validation".into(), command: c.name().into(), loss: val[i] });
        }
        let present: Vec<f64> = val.iter().copied().filter(|v| v.is_finite()).collect();
        let score = if present.is_empty() {
            sums.iter().sum::<f64>() / counts.iter().sum::<usize>().max(1) as f64
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        info!("il epoch {epoch}: validation {val:?}");
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, epoch, actor.clone()));
        }
    }
    let (actor, best_epoch) = match best {
        Some((_, e, a)) => (a, e),
        None => (actor, 0),
    };
    Ok(ILOutcome {
        actor,
        report,
        best_epoch,
        train_indices: train.to_vec(),
        validation_indices: valid.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn loss_hand_cases() {
        let w = [1.0, 1.0, 1.0];
        let a = ActionTriple::new(0.2, 0.4, 0.1);
        assert_eq!(il_loss(&a, &a, &w), 0.0);
        assert_eq!(il_loss(&ActionTriple::new(0.0, 0.0, 0.0), &ActionTriple::new(1.0, 1.0, 1.0), &w), 3.0);
        let l = il_loss(&ActionTriple::new(0.5, 0.3, 0.3), &ActionTriple::new(0.0, 0.3, 0.3), &[2.0, 1.0, 1.0]);
        assert_eq!(l, 0.5);
    }

    #[test]
    fn batch_loss_is_mean_of_sample_losses() {
        let pred = Array2::from_shape_vec((3, 3), vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6, 0.7, 0.8, 0.0]).unwrap();
        let target = Array2::from_shape_vec((3, 3), vec![0.0, 0.1, 0.9, 0.4, 0.5, 0.1, -0.7, 0.2, 1.0]).unwrap();
        let w = [2.0, 0.5, 1.0];
        let (l, _) = batch_loss(&pred, &target, &w);
        let mean: f64 = (0..3)
            .map(|i| {
                let p = ActionTriple::new(pred[[i, 0]], pred[[i, 1]], pred[[i, 2]]);
                let t = ActionTriple::new(target[[i, 0]], target[[i, 1]], target[[i, 2]]);
                il_loss(&p, &t, &w)
            })
            .sum::<f64>()
            / 3.0;
        assert!(close(l, mean));
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let cfg = ILConfig::default();
        assert_eq!(cfg.lr_at(0, 100), 1e-4);
        assert!(close(cfg.lr_at(99, 100), 1e-5));
        assert!(cfg.lr_at(50, 100) < 1e-4 && cfg.lr_at(50, 100) > 1e-5);
    }

    fn small_demos() -> (DemoDataset, PolicyConfig) {
        let mut sim = cirl_sim::SimConfig::default();
        sim.raster.height = 6;
        sim.raster.width = 6;
        let demo = crate::demo::DemoConfig { episodes: 4, min_per_branch: 20, max_follow_ratio: 8.0, ..Default::default() };
        let ds = crate::demo::generate_demos(&demo, &sim, &crate::expert::ExpertConfig::default(), 5, "t").unwrap();
        let policy = PolicyConfig { trunk_widths: vec![16], speed_width: 4, branch_width: 8, critic_width: 4, ..Default::default() };
        (ds, policy)
    }

    #[test]
    fn memorizes_a_single_sample() {
        let (ds, policy) = small_demos();
        let cfg = ILConfig { epochs: 4000, batch_size: 1, lr: 1e-2, lr_final: 1e-3, min_per_branch: 0, ..Default::default() };
        let out = train_il_on(&ds, &[0], &[], &policy, &cfg, 1).unwrap();
        let command = ds.samples[0].command().name();
        let last = out.report.iter().rev().find(|r| r.split == "train" && r.command == command).unwrap();
        let loss = evaluate(&out.actor, &ds, &[0], &cfg.loss_weights).unwrap()[ds.samples[0].command().index()];
        assert!(loss < 1e-6 && last.loss < 1e-5, "loss {loss}, last epoch {}", last.loss);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let (ds, policy) = small_demos();
        let cfg = ILConfig { epochs: 3, batch_size: 32, min_per_branch: 20, ..Default::default() };
        let a = train_il(&ds, &policy, &cfg, 9).unwrap();
        let b = train_il(&ds, &policy, &cfg, 9).unwrap();
        let bits = |o: &ILOutcome| o.report.iter().map(|r| (r.epoch, r.split.clone(), r.command.clone(), r.loss.to_bits())).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.actor.to_checkpoint("actor", "").to_bytes(), b.actor.to_checkpoint("actor", "").to_bytes());
        assert!(a.validation_indices.iter().all(|i| !a.train_indices.contains(i)));
    }

    #[test]
    fn config_bounds() {
        assert!(ILConfig { validation_fraction: 0.5, ..Default::default() }.validate().is_err());
        assert!(ILConfig { loss_weights: [1.0, -1.0, 1.0], ..Default::default() }.validate().is_err());
        ILConfig::default().validate().unwrap();
    }
}
