//! Command-gated actor and command-conditioned critic.

use cirl_nn::{Adam, Checkpoint, LayerKind, Network, NnError, ParamSet, ParamTensor};
use cirl_sim::{ActionTriple, Command, Observation};
use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CirlError, Result};

pub const ACTOR_ROLE: &str = "actor";
pub const CRITIC_ROLE: &str = "critic";
pub const ACTOR_TARGET_ROLE: &str = "actor-target";
pub const CRITIC_TARGET_ROLE: &str = "critic-target";

const BRANCH_NAMES: [&str; 4] = ["branch-follow", "branch-straight", "branch-left", "branch-right"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub trunk_widths: Vec<usize>,
    pub speed_width: usize,
    pub branch_width: usize,
    pub critic_width: usize,
    /// Speed input is `speed_kmh / speed_scale_kmh`.
    pub speed_scale_kmh: f64,
    /// Final layers start uniform in ± this.
    pub head_init: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            trunk_widths: vec![128, 128],
            speed_width: 32,
            branch_width: 64,
            critic_width: 64,
            speed_scale_kmh: 40.0,
            head_init: 3e-3,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trunk_widths.is_empty() || self.trunk_widths.contains(&0) {
            return Err(CirlError::Config("policy.trunk_widths must be non-empty and positive".into()));
        }
        if self.speed_width == 0 || self.branch_width == 0 || self.critic_width == 0 {
            return Err(CirlError::Config("policy widths must be positive".into()));
        }
        if !(self.speed_scale_kmh > 0.0) || !(self.head_init >= 0.0) {
            return Err(CirlError::Config("policy.speed_scale_kmh must be > 0 and head_init >= 0".into()));
        }
        Ok(())
    }

    fn feature_dim(&self) -> usize {
        self.trunk_widths.last().copied().unwrap_or(0) + self.speed_width
    }
}

/// Branch slot of a command: Follow, Straight, TurnLeft, TurnRight.
pub fn gate(command: Command) -> usize {
    command.index()
}

/// Observations stacked for batched evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsBatch {
    pub raster: Array2<f64>,
    /// Normalized speed, one column.
    pub speed: Array2<f64>,
    pub commands: Vec<Command>,
}

impl ObsBatch {
    pub fn new(observations: &[&Observation], speed_scale_kmh: f64) -> Result<Self> {
        let n = observations.len();
        let cells = observations.first().map(|o| o.raster.len()).unwrap_or(0);
        let mut raster = Array2::zeros((n, cells));
        let mut speed = Array2::zeros((n, 1));
        let mut commands = Vec::with_capacity(n);
        for (i, o) in observations.iter().enumerate() {
            if o.raster.len() != cells {
                return Err(NnError::shape("observation raster", cells, o.raster.len()).into());
            }
            for (d, &v) in raster.row_mut(i).iter_mut().zip(&o.raster) {
                *d = v as f64;
            }
            speed[[i, 0]] = o.speed_kmh() / speed_scale_kmh;
            commands.push(o.command);
        }
        Ok(Self { raster, speed, commands })
    }

    pub fn len(&self) -> usize {
        self.commands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }

    /// Rows gated to each branch, in batch order.
    pub fn rows_per_branch(&self) -> [Vec<usize>; 4] {
        let mut rows: [Vec<usize>; 4] = Default::default();
        for (i, &c) in self.commands.iter().enumerate() {
            rows[gate(c)].push(i);
        }
        rows
    }
}

fn init_head<R: Rng + ?Sized>(net: &mut Network, limit: f64, rng: &mut R) {
    let mut p = net.params_mut();
    let n = p.len();
    for t in p[n - 2..].iter_mut() {
        for v in t.values.iter_mut() {
            *v = if limit > 0.0 { rng.random_range(-limit..limit) } else { 0.0 };
        }
    }
}

fn select_rows(x: ArrayView2<f64>, rows: &[usize]) -> Array2<f64> {
    x.select(Axis(0), rows)
}

/// Applies the head nonlinearities: tanh on steer, sigmoid on throttle and brake.
fn squash(z: &Array2<f64>) -> Array2<f64> {
    let mut a = z.clone();
    for mut row in a.rows_mut() {
        row[0] = row[0].tanh();
        row[1] = cirl_nn::sigmoid(row[1]);
        row[2] = cirl_nn::sigmoid(row[2]);
    }
    a
}

/// Gradient through [`squash`] given its output.
fn squash_backward(a: ArrayView2<f64>, da: ArrayView2<f64>) -> Array2<f64> {
    let mut dz = da.to_owned();
    for (mut g, y) in dz.rows_mut().into_iter().zip(a.rows()) {
        g[0] *= 1.0 - y[0] * y[0];
        g[1] *= y[1] * (1.0 - y[1]);
        g[2] *= y[2] * (1.0 - y[2]);
    }
    dz
}

#[derive(Debug, Clone)]
struct ActorTape {
    rows: [Vec<usize>; 4],
    actions: Array2<f64>,
}

/// Shared raster trunk and speed encoder feeding four command branches.
#[derive(Debug, Clone)]
pub struct GatedActor {
    pub trunk: Network,
    pub speed: Network,
    pub branches: [Network; 4],
    pub speed_scale_kmh: f64,
    tape: Option<ActorTape>,
}

impl PartialEq for GatedActor {
    fn eq(&self, other: &Self) -> bool {
        self.trunk == other.trunk
            && self.speed == other.speed
            && self.branches == other.branches
            && self.speed_scale_kmh == other.speed_scale_kmh
    }
}

impl GatedActor {
    pub fn new(cfg: &PolicyConfig, input_dim: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trunk = Network::mlp(input_dim, &cfg.trunk_widths, LayerKind::Relu, Some(LayerKind::Relu))?;
        trunk.init_glorot(&mut rng);
        let mut speed = Network::mlp(1, &[cfg.speed_width], LayerKind::Relu, Some(LayerKind::Relu))?;
        speed.init_glorot(&mut rng);
        let branches = std::array::from_fn(|_| {
            let mut b = Network::mlp(cfg.feature_dim(), &[cfg.branch_width, 3], LayerKind::Relu, None)
                .expect("validated widths");
            b.init_glorot(&mut rng);
            init_head(&mut b, cfg.head_init, &mut rng);
            b
        });
        Ok(Self { trunk, speed, branches, speed_scale_kmh: cfg.speed_scale_kmh, tape: None })
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    fn check(&self, batch: &ObsBatch) -> Result<()> {
        if batch.raster.ncols() != self.input_dim() {
            return Err(NnError::shape("actor raster input", self.input_dim(), batch.raster.ncols()).into());
        }
        Ok(())
    }

    /// Trunk and speed features, concatenated.
    pub fn features(&self, batch: &ObsBatch) -> Result<Array2<f64>> {
        self.check(batch)?;
        let h = self.trunk.forward_batch(batch.raster.view())?;
        let v = self.speed.forward_batch(batch.speed.view())?;
        Ok(concatenate![Axis(1), h, v])
    }

    /// Greedy actions for a batch; only the gated branch runs for each row.
    pub fn forward_batch(&self, batch: &ObsBatch) -> Result<Array2<f64>> {
        let f = self.features(batch)?;
        let mut out = Array2::zeros((batch.len(), 3));
        for (b, rows) in batch.rows_per_branch().iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let z = self.branches[b].forward_batch(select_rows(f.view(), rows).view())?;
            let a = squash(&z);
            for (k, &r) in rows.iter().enumerate() {
                out.row_mut(r).assign(&a.row(k));
            }
        }
        Ok(out)
    }

    pub fn act(&self, obs: &Observation) -> Result<ActionTriple> {
        let batch = ObsBatch::new(&[obs], self.speed_scale_kmh)?;
        let a = self.forward_batch(&batch)?;
        Ok(ActionTriple::new(a[[0, 0]], a[[0, 1]], a[[0, 2]]))
    }

    /// Recording forward pass for [`GatedActor::backward`].
    pub fn forward_train(&mut self, batch: &ObsBatch) -> Result<Array2<f64>> {
        self.check(batch)?;
        let h = self.trunk.forward_train(batch.raster.clone())?;
        let v = self.speed.forward_train(batch.speed.clone())?;
        let f = concatenate![Axis(1), h, v];
        let rows = batch.rows_per_branch();
        let mut out = Array2::zeros((batch.len(), 3));
        for (b, r) in rows.iter().enumerate() {
            if r.is_empty() {
                self.branches[b].clear_tape();
                continue;
            }
            let z = self.branches[b].forward_train(select_rows(f.view(), r))?;
            let a = squash(&z);
            for (k, &i) in r.iter().enumerate() {
                out.row_mut(i).assign(&a.row(k));
            }
        }
        self.tape = Some(ActorTape { rows, actions: out.clone() });
        Ok(out)
    }

    /// Accumulates parameter gradients for `d loss / d action` (batch × 3).
    /// Each branch only receives gradient from its own rows; trunk and speed
    /// encoder receive gradient from all rows. Returns which branches were hit.
    pub fn backward(&mut self, action_grad: ArrayView2<f64>) -> Result<[bool; 4]> {
        let tape = self.tape.take().ok_or(NnError::NoTape)?;
        if action_grad.dim() != tape.actions.dim() {
            return Err(NnError::shape(
                "actor action gradient",
                format!("{:?}", tape.actions.dim()),
                format!("{:?}", action_grad.dim()),
            )
            .into());
        }
        let dz = squash_backward(tape.actions.view(), action_grad);
        let hdim = self.trunk.output_dim();
        let mut df = Array2::zeros((dz.nrows(), hdim + self.speed.output_dim()));
        let mut active = [false; 4];
        for (b, rows) in tape.rows.iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            active[b] = true;
            let g = select_rows(dz.view(), rows);
            let dfb = self.branches[b].backward(g.view(), true)?.expect("input grad requested");
            for (k, &i) in rows.iter().enumerate() {
                df.row_mut(i).assign(&dfb.row(k));
            }
        }
        self.trunk.backward(df.slice(s![.., ..hdim]), false)?;
        self.speed.backward(df.slice(s![.., hdim..]), false)?;
        Ok(active)
    }

    pub fn to_checkpoint(&self, role: &str, config_hash: &str) -> Checkpoint {
        let mut ck = Checkpoint::new(role, config_hash);
        ck.push("trunk", &self.trunk);
        ck.push("speed", &self.speed);
        for (name, b) in BRANCH_NAMES.iter().zip(&self.branches) {
            ck.push(*name, b);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, speed_scale_kmh: f64) -> Result<Self> {
        let get = |name: &str| {
            ck.get(name)
                .cloned()
                .ok_or_else(|| CirlError::Data(format!("checkpoint has no network {name:?}")))
        };
        let trunk = get("trunk")?;
        let speed = get("speed")?;
        let mut branches = Vec::with_capacity(4);
        for name in BRANCH_NAMES {
            branches.push(get(name)?);
        }
        let fdim = trunk.output_dim() + speed.output_dim();
        if speed.input_dim() != 1 || branches.iter().any(|b| b.input_dim() != fdim || b.output_dim() != 3) {
            return Err(CirlError::Data("actor checkpoint networks do not fit together".into()));
        }
        let branches: [Network; 4] = branches.try_into().expect("four branches");
        Ok(Self { trunk, speed, branches, speed_scale_kmh, tape: None })
    }
}

impl ParamSet for GatedActor {
    fn params(&self) -> Vec<&ParamTensor> {
        let mut p = self.trunk.params();
        p.extend(self.speed.params());
        for b in &self.branches {
            p.extend(b.params());
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut p = self.trunk.params_mut();
        p.extend(self.speed.params_mut());
        for b in &mut self.branches {
            p.extend(b.params_mut());
        }
        p
    }
}

/// Update rule for the actor parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActorOptimizerKind {
    /// Plain gradient step scaled by the learning rate.
    Sgd,
    Adam,
}

/// Optimizer state kept per part, so a branch with no samples in a batch is
/// left bit-for-bit untouched by the update.
#[derive(Debug, Clone)]
pub struct ActorOptimizer {
    kind: ActorOptimizerKind,
    trunk: Adam,
    speed: Adam,
    branches: [Adam; 4],
}

impl ActorOptimizer {
    pub fn new(actor: &GatedActor) -> Self {
        Self::with_kind(actor, ActorOptimizerKind::Adam)
    }

    pub fn with_kind(actor: &GatedActor, kind: ActorOptimizerKind) -> Self {
        Self {
            kind,
            trunk: Adam::new(&actor.trunk),
            speed: Adam::new(&actor.speed),
            branches: std::array::from_fn(|b| Adam::new(&actor.branches[b])),
        }
    }

    pub fn kind(&self) -> ActorOptimizerKind {
        self.kind
    }

    pub fn step(&mut self, actor: &mut GatedActor, active: [bool; 4], lr: f64) -> Result<()> {
        self.step_with_trunk_lr(actor, active, lr, lr)
    }

    /// As [`ActorOptimizer::step`], with its own learning rate for the raster
    /// trunk. A trunk rate of zero leaves the trunk untouched.
    pub fn step_with_trunk_lr(&mut self, actor: &mut GatedActor, active: [bool; 4], lr: f64, trunk_lr: f64) -> Result<()> {
        let finite = |n: &Network| n.params().iter().all(|p| p.grad.iter().all(|g| g.is_finite()));
        let all_finite = finite(&actor.trunk)
            && finite(&actor.speed)
            && actor.branches.iter().zip(active).all(|(b, a)| !a || finite(b));
        if !all_finite {
            cirl_nn::zero_grads(actor);
            return Err(CirlError::Numeric("non-finite actor gradient".into()));
        }
        let kind = self.kind;
        let step = |adam: &mut Adam, net: &mut Network, lr: f64| match kind {
            ActorOptimizerKind::Sgd => cirl_nn::sgd_step(net, lr),
            ActorOptimizerKind::Adam => adam.step(net, lr),
        };
        if trunk_lr > 0.0 {
            step(&mut self.trunk, &mut actor.trunk, trunk_lr)?;
        } else {
            cirl_nn::zero_grads(&mut actor.trunk);
        }
        step(&mut self.speed, &mut actor.speed, lr)?;
        for b in 0..4 {
            if active[b] {
                step(&mut self.branches[b], &mut actor.branches[b], lr)?;
            } else {
                cirl_nn::zero_grads(&mut actor.branches[b]);
            }
        }
        Ok(())
    }
}

/// Value network over trunk features, speed features, the command one-hot
/// and the action.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub trunk: Network,
    pub speed: Network,
    pub q_head: Network,
    pub speed_scale_kmh: f64,
}

impl Critic {
    pub fn new(cfg: &PolicyConfig, input_dim: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trunk = Network::mlp(input_dim, &cfg.trunk_widths, LayerKind::Relu, Some(LayerKind::Relu))?;
        trunk.init_glorot(&mut rng);
        let mut speed = Network::mlp(1, &[cfg.speed_width], LayerKind::Relu, Some(LayerKind::Relu))?;
        speed.init_glorot(&mut rng);
        let mut q_head = Network::mlp(cfg.feature_dim() + 4 + 3, &[cfg.critic_width, 1], LayerKind::Relu, None)?;
        q_head.init_glorot(&mut rng);
        init_head(&mut q_head, cfg.head_init, &mut rng);
        Ok(Self { trunk, speed, q_head, speed_scale_kmh: cfg.speed_scale_kmh })
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    fn head_input(&self, batch: &ObsBatch, h: Array2<f64>, v: Array2<f64>, actions: ArrayView2<f64>) -> Result<Array2<f64>> {
        if actions.dim() != (batch.len(), 3) {
            return Err(NnError::shape("critic actions", format!("({}, 3)", batch.len()), format!("{:?}", actions.dim())).into());
        }
        let mut onehot = Array2::zeros((batch.len(), 4));
        for (i, &c) in batch.commands.iter().enumerate() {
            onehot[[i, gate(c)]] = 1.0;
        }
        Ok(concatenate![Axis(1), h, v, onehot, actions])
    }

    fn check(&self, batch: &ObsBatch) -> Result<()> {
        if batch.raster.ncols() != self.input_dim() {
            return Err(NnError::shape("critic raster input", self.input_dim(), batch.raster.ncols()).into());
        }
        Ok(())
    }

    /// Q values, batch × 1.
    pub fn forward_batch(&self, batch: &ObsBatch, actions: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(batch)?;
        let h = self.trunk.forward_batch(batch.raster.view())?;
        let v = self.speed.forward_batch(batch.speed.view())?;
        let x = self.head_input(batch, h, v, actions)?;
        Ok(self.q_head.forward_batch(x.view())?)
    }

    pub fn q(&self, obs: &Observation, action: &ActionTriple) -> Result<f64> {
        let batch = ObsBatch::new(&[obs], self.speed_scale_kmh)?;
        let a = Array2::from_shape_vec((1, 3), action.to_array().to_vec()).expect("1x3");
        Ok(self.forward_batch(&batch, a.view())?[[0, 0]])
    }

    pub fn forward_train(&mut self, batch: &ObsBatch, actions: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(batch)?;
        let h = self.trunk.forward_train(batch.raster.clone())?;
        let v = self.speed.forward_train(batch.speed.clone())?;
        let x = self.head_input(batch, h, v, actions)?;
        Ok(self.q_head.forward_train(x)?)
    }

    /// Accumulates parameter gradients for `d loss / d Q` (batch × 1).
    pub fn backward(&mut self, q_grad: ArrayView2<f64>) -> Result<()> {
        let dx = self.q_head.backward(q_grad, true)?.expect("input grad requested");
        let hdim = self.trunk.output_dim();
        let vdim = self.speed.output_dim();
        self.trunk.backward(dx.slice(s![.., ..hdim]), false)?;
        self.speed.backward(dx.slice(s![.., hdim..hdim + vdim]), false)?;
        Ok(())
    }

    /// `dQ/da` at the given actions (batch × 3), scaled row-wise by `q_grad`.
    /// Leaves parameter gradients untouched.
    pub fn action_grad(&mut self, batch: &ObsBatch, actions: ArrayView2<f64>, q_grad: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(batch)?;
        let h = self.trunk.forward_batch(batch.raster.view())?;
        let v = self.speed.forward_batch(batch.speed.view())?;
        let x = self.head_input(batch, h, v, actions)?;
        self.q_head.forward_train(x)?;
        let dx = self.q_head.input_grad(q_grad);
        self.q_head.clear_tape();
        let dx = dx?;
        let n = dx.ncols();
        Ok(dx.slice(s![.., n - 3..]).to_owned())
    }

    pub fn to_checkpoint(&self, role: &str, config_hash: &str) -> Checkpoint {
        let mut ck = Checkpoint::new(role, config_hash);
        ck.push("trunk", &self.trunk);
        ck.push("speed", &self.speed);
        ck.push("q-head", &self.q_head);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, speed_scale_kmh: f64) -> Result<Self> {
        let get = |name: &str| {
            ck.get(name)
                .cloned()
                .ok_or_else(|| CirlError::Data(format!("checkpoint has no network {name:?}")))
        };
        let (trunk, speed, q_head) = (get("trunk")?, get("speed")?, get("q-head")?);
        if q_head.input_dim() != trunk.output_dim() + speed.output_dim() + 7 || q_head.output_dim() != 1 {
            return Err(CirlError::Data("critic checkpoint networks do not fit together".into()));
        }
        Ok(Self { trunk, speed, q_head, speed_scale_kmh })
    }
}

impl ParamSet for Critic {
    fn params(&self) -> Vec<&ParamTensor> {
        let mut p = self.trunk.params();
        p.extend(self.speed.params());
        p.extend(self.q_head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut p = self.trunk.params_mut();
        p.extend(self.speed.params_mut());
        p.extend(self.q_head.params_mut());
        p
    }
}
