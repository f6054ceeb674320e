use std::sync::Arc;

use cirl::policy::{Critic, GatedActor, ObsBatch, PolicyConfig};
use cirl::rl::Ddpg;
use cirl_nn::ParamSet;
use cirl_sim::{Command, Observation};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn tiny() -> PolicyConfig {
    PolicyConfig { trunk_widths: vec![7, 6], speed_width: 4, branch_width: 5, critic_width: 5, head_init: 0.3, ..Default::default() }
}

fn obs(rng: &mut ChaCha8Rng, command: Command) -> Arc<Observation> {
    Arc::new(Observation {
        raster: (0..12).map(|_| rng.random::<f32>()).collect(),
        height: 3,
        width: 4,
        speed: rng.random_range(0.5..9.0),
        command,
    })
}

fn batch(o: &[Arc<Observation>]) -> ObsBatch {
    let refs: Vec<&Observation> = o.iter().map(|x| x.as_ref()).collect();
    ObsBatch::new(&refs, 40.0).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central differences of `f` with respect to every parameter of `set`.
fn numeric_grad<P: ParamSet + Clone>(set: &P, f: impl Fn(&P) -> f64) -> Vec<f64> {
    let n = set.params().len();
    let mut out = Vec::new();
    for t in 0..n {
        for k in 0..set.params()[t].values.len() {
            let mut plus = set.clone();
            plus.params_mut()[t].values[k] += H;
            let mut minus = set.clone();
            minus.params_mut()[t].values[k] -= H;
            out.push((f(&plus) - f(&minus)) / (2.0 * H));
        }
    }
    out
}

fn flat_grads<P: ParamSet>(set: &P) -> Vec<f64> {
    set.params().iter().flat_map(|p| p.grad.iter().copied()).collect()
}

fn assert_close(analytic: &[f64], numeric: &[f64], what: &str) {
    assert_eq!(analytic.len(), numeric.len());
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        assert!(rel_err(*a, *n) < 1e-4, "{what}[{i}]: analytic {a} vs numeric {n}");
    }
}

#[test]
fn actor_grads_match_finite_differences_per_branch() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let base = GatedActor::new(&tiny(), 12, 3).unwrap();
    for command in Command::ALL {
        let o: Vec<_> = (0..3).map(|_| obs(&mut rng, command)).collect();
        let b = batch(&o);
        let weights: Array2<f64> = Array2::from_shape_fn((3, 3), |_| rng.random_range(-1.0..1.0));
        let loss = |a: &GatedActor| (&a.forward_batch(&b).unwrap() * &weights).sum();
        let mut actor = base.clone();
        actor.forward_train(&b).unwrap();
        actor.backward(weights.view()).unwrap();
        assert_close(&flat_grads(&actor), &numeric_grad(&base, loss), &format!("{command:?}"));
    }
}

#[test]
fn critic_grads_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let base = Critic::new(&tiny(), 12, 4).unwrap();
    let o: Vec<_> = Command::ALL.iter().map(|&c| obs(&mut rng, c)).collect();
    let b = batch(&o);
    let actions = Array2::from_shape_fn((4, 3), |(_, k)| if k == 0 { rng.random_range(-1.0..1.0) } else { rng.random() });
    let weights = Array2::from_shape_fn((4, 1), |_| rng.random_range(-1.0..1.0));
    let loss = |c: &Critic| (&c.forward_batch(&b, actions.view()).unwrap() * &weights).sum();
    let mut critic = base.clone();
    critic.forward_train(&b, actions.view()).unwrap();
    critic.backward(weights.view()).unwrap();
    assert_close(&flat_grads(&critic), &numeric_grad(&base, loss), "critic");
}

#[test]
fn q_action_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut critic = Critic::new(&tiny(), 12, 5).unwrap();
    let o: Vec<_> = Command::ALL.iter().map(|&c| obs(&mut rng, c)).collect();
    let b = batch(&o);
    let actions = Array2::from_shape_fn((4, 3), |_| rng.random_range(0.1..0.9));
    let ones = Array2::from_elem((4, 1), 1.0);
    let da = critic.action_grad(&b, actions.view(), ones.view()).unwrap();
    assert!(critic.params().iter().all(|p| p.grad.iter().all(|g| *g == 0.0)));
    for i in 0..4 {
        for k in 0..3 {
            let mut plus = actions.clone();
            plus[[i, k]] += H;
            let mut minus = actions.clone();
            minus[[i, k]] -= H;
            let num = (critic.forward_batch(&b, plus.view()).unwrap()[[i, 0]]
                - critic.forward_batch(&b, minus.view()).unwrap()[[i, 0]])
                / (2.0 * H);
            assert!(rel_err(da[[i, k]], num) < 1e-4, "dQ/da[{i},{k}]: {} vs {num}", da[[i, k]]);
        }
    }
}

#[test]
fn actor_update_direction_ascends_q() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let actor = GatedActor::new(&tiny(), 12, 6).unwrap();
    let critic = Critic::new(&tiny(), 12, 7).unwrap();
    let o = vec![obs(&mut rng, Command::TurnLeft)];
    let b = batch(&o);
    let mut ddpg = Ddpg::new(actor.clone(), critic.clone());
    ddpg.actor_gradient(&b).unwrap();
    let descent = flat_grads(&ddpg.actor);
    let value = |a: &GatedActor| critic.forward_batch(&b, a.forward_batch(&b).unwrap().view()).unwrap()[[0, 0]];
    let ascent = numeric_grad(&actor, value);
    let dot: f64 = descent.iter().zip(&ascent).map(|(d, a)| -d * a).sum();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cosine = dot / (norm(&descent) * norm(&ascent));
    assert!(cosine > 0.99, "cosine {cosine}");
}

#[test]
fn mixed_batch_grads_are_sums_of_per_command_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let base = GatedActor::new(&tiny(), 12, 8).unwrap();
    let cmds = [Command::Follow, Command::TurnRight, Command::Follow, Command::Straight, Command::TurnRight];
    let o: Vec<_> = cmds.iter().map(|&c| obs(&mut rng, c)).collect();
    let g = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
    let mut mixed = base.clone();
    mixed.forward_train(&batch(&o)).unwrap();
    mixed.backward(g.view()).unwrap();
    let mut summed = vec![0.0; flat_grads(&base).len()];
    for command in Command::ALL {
        let rows: Vec<usize> = (0..5).filter(|&i| cmds[i] == command).collect();
        if rows.is_empty() {
            continue;
        }
        let sub: Vec<_> = rows.iter().map(|&i| o[i].clone()).collect();
        let sg = g.select(ndarray::Axis(0), &rows);
        let mut a = base.clone();
        a.forward_train(&batch(&sub)).unwrap();
        a.backward(sg.view()).unwrap();
        for (s, v) in summed.iter_mut().zip(flat_grads(&a)) {
            *s += v;
        }
    }
    for (m, s) in flat_grads(&mixed).iter().zip(&summed) {
        assert!((m - s).abs() <= 1e-12 * m.abs().max(1.0), "{m} vs {s}");
    }
}
