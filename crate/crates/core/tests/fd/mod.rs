//! Central finite-difference checks for every trainable block, shared by
//! the gradients suite and the acceptance gate: scalar ops, dense, conv,
//! layer norm, GRU step, the full student policy on 8x8 frames, and the PPO
//! clipped surrogate.

#![allow(dead_code)]

use std::sync::Arc;

use ppgta::imitation::{imitation_loss, IlConfig};
use ppgta::policy::{Mode, PolicyConfig, PolicyNet};
use ppgta::tensor::nn::{Conv, Dense, GruCell, LayerNormParams, ParamBank};
use ppgta::tensor::tape::{NodeId, Tape};
use ppgta::tensor::Tensor;
use ppgta::world::Frame;

const EPS: f32 = 2e-2;
pub const RTOL: f32 = 1e-3;
const ATOL: f32 = 1e-4;

/// Compares analytic gradients against Richardson-extrapolated central
/// finite differences for every parameter element. `loss_fn` must be a
/// deterministic pure function of the bank values.
///
/// Elements where the two central-difference step sizes disagree are skipped:
/// those sit on a kink of a piecewise-linear op (relu, clamp, min), where a
/// symmetric difference does not estimate the one-sided derivative the tape
/// reports. A correct implementation keeps the skipped fraction small; a
/// wrong one produces consistent-but-different estimates and fails.
fn fd_check<F>(bank: &mut ParamBank, loss_fn: F)
where
    F: FnMut(&mut Tape, &ParamBank) -> NodeId,
{
    fd_check_eps(bank, EPS, loss_fn)
}

fn fd_check_eps<F>(bank: &mut ParamBank, eps: f32, mut loss_fn: F)
where
    F: FnMut(&mut Tape, &ParamBank) -> NodeId,
{
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, bank);
    assert_eq!(tape.value(loss).len(), 1, "loss must be scalar");
    let baseline = tape.kink_pattern();
    tape.backward(loss);
    bank.zero_grads();
    tape.accumulate_into(bank);
    let analytic: Vec<Vec<f32>> = (0..bank.len()).map(|i| bank.grad(i).data.clone()).collect();

    // returns None when the perturbation flipped a piecewise-linear branch
    let mut eval = |bank: &mut ParamBank, i: usize, j: usize, delta: f32| -> Option<f32> {
        let orig = bank.value(i).data[j];
        bank.value_mut(i).data[j] = orig + delta;
        let mut tp = Tape::new();
        let l = loss_fn(&mut tp, bank);
        let v = tp.scalar_value(l);
        let ok = tp.kink_pattern() == baseline;
        bank.value_mut(i).data[j] = orig;
        ok.then_some(v)
    };
    let agrees = |a: f32, b: f32| (a - b).abs() <= RTOL * a.abs().max(b.abs()) + ATOL;

    let mut checked = 0usize;
    let mut skipped = 0usize;
    for i in 0..bank.len() {
        for j in 0..bank.value(i).len() {
            let samples: Option<Vec<f32>> = [eps, -eps, eps / 2.0, -eps / 2.0]
                .iter()
                .map(|d| eval(bank, i, j, *d))
                .collect();
            let Some(s) = samples else {
                skipped += 1;
                continue;
            };
            checked += 1;
            let c1 = (s[0] - s[1]) / (2.0 * eps);
            let c2 = (s[2] - s[3]) / eps;
            let fd = (4.0 * c2 - c1) / 3.0;
            let a = analytic[i][j];
            assert!(
                agrees(a, fd),
                "gradient mismatch at {}[{}]: analytic {} fd {} (c1 {} c2 {})",
                bank.name(i),
                j,
                a,
                fd,
                c1,
                c2
            );
        }
    }
    assert!(
        skipped * 3 < checked,
        "too many kink-crossing elements skipped ({skipped} of {})",
        checked + skipped
    );
}

fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    ppgta::rng::stream(seed, "fd.test")
}

fn random_vec(seed: u64, n: usize) -> Vec<f32> {
    use rand::Rng;
    let mut r = rng(seed);
    (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
}

fn random_frame(seed: u64, side: usize) -> Frame {
    use rand::Rng;
    let mut r = rng(seed);
    let mut f = Frame::new(side, side);
    for p in f.pixels.iter_mut() {
        *p = r.gen();
    }
    f
}

pub fn dense_relu_mse() {
    let mut bank = ParamBank::new();
    let dense = Dense::new(&mut bank, &mut rng(1), "d", 5, 4);
    let x = Arc::new(random_vec(2, 5));
    let target = Arc::new(random_vec(3, 4));
    fd_check(&mut bank, |tape, bank| {
        let x = tape.constant(Tensor::from_vec(&[5], x.as_ref().clone()));
        let y = dense.forward(tape, bank, x);
        let y = tape.relu(y);
        tape.mse_to(y, target.clone())
    });
}

pub fn conv_stack() {
    let mut bank = ParamBank::new();
    let c0 = Conv::new(&mut bank, &mut rng(4), "c0", 2, 3, 3, 2);
    let c1 = Conv::new(&mut bank, &mut rng(5), "c1", 3, 2, 3, 1);
    // 8x8 leaves a leftover row/column under stride 2, exercising the
    // non-exact tiling path
    let x = Arc::new(random_vec(6, 2 * 8 * 8));
    fd_check(&mut bank, |tape, bank| {
        let x = tape.constant(Tensor::from_vec(&[2, 8, 8], x.as_ref().clone()));
        let y = c0.forward(tape, bank, x);
        let y = tape.relu(y);
        let y = c1.forward(tape, bank, y);
        let y = tape.tanh(y);
        tape.mean(y)
    });
}

pub fn layer_norm() {
    let mut bank = ParamBank::new();
    let ln = LayerNormParams::new(&mut bank, "ln", 6);
    let dense = Dense::new(&mut bank, &mut rng(7), "d", 6, 6);
    let x = Arc::new(random_vec(8, 6));
    let target = Arc::new(random_vec(9, 6));
    fd_check(&mut bank, |tape, bank| {
        let x = tape.constant(Tensor::from_vec(&[6], x.as_ref().clone()));
        let y = dense.forward(tape, bank, x);
        let y = ln.forward(tape, bank, y);
        tape.mse_to(y, target.clone())
    });
}

pub fn gru_step() {
    let mut bank = ParamBank::new();
    let cell = GruCell::new(&mut bank, &mut rng(10), "g", 4, 4);
    let x0 = Arc::new(random_vec(11, 4));
    let x1 = Arc::new(random_vec(12, 4));
    fd_check(&mut bank, |tape, bank| {
        let x0 = tape.constant(Tensor::from_vec(&[4], x0.as_ref().clone()));
        let x1 = tape.constant(Tensor::from_vec(&[4], x1.as_ref().clone()));
        let h = tape.constant(Tensor::zeros(&[4]));
        let h = cell.step(tape, bank, x0, h);
        let h = cell.step(tape, bank, x1, h);
        tape.sum(h)
    });
}

pub fn softmax_losses() {
    let mut bank = ParamBank::new();
    bank.add("logits", Tensor::from_vec(&[9], random_vec(13, 9)));
    let soft = Arc::new({
        let raw = random_vec(14, 9);
        let exps: Vec<f32> = raw.iter().map(|v| v.exp()).collect();
        let s: f32 = exps.iter().sum();
        exps.into_iter().map(|e| e / s).collect::<Vec<f32>>()
    });
    fd_check(&mut bank, |tape, bank| {
        let l = tape.param(bank, 0);
        let ce = tape.softmax_xent(l, 3);
        let cons = tape.softmax_xent_soft(l, soft.clone(), 0.7);
        let lp = tape.log_prob(l, 5);
        let ent = tape.entropy(l);
        let a = tape.add(ce, cons);
        let b = tape.sub(lp, ent);
        tape.add(a, b)
    });
}

pub fn full_student_policy() {
    let cfg = PolicyConfig {
        frame_h: 8,
        frame_w: 8,
        embed_dim: 16,
        local_hidden: 8,
        global_hidden: 8,
        k_window: 2,
        dropout: 0.0,
    };
    let il = IlConfig { policy: cfg.clone(), ..IlConfig::default() };
    let mut net = PolicyNet::new(&mut rng(20), cfg.clone());
    let frames = vec![random_frame(21, 8), random_frame(22, 8)];
    let global = Tensor::from_vec(&[cfg.global_hidden], random_vec(23, cfg.global_hidden));
    let teacher_hc = random_vec(24, cfg.hc_dim());
    let mut bank = std::mem::take(&mut net.bank);
    // loss scaled down so f32 forward roundoff stays below the fd tolerance
    fd_check_eps(&mut bank, 1e-2, |tape, bank| {
        net.bank = bank.clone();
        let out = net.forward(tape, &frames, &global, &mut Mode::Infer).unwrap();
        let loss = imitation_loss(tape, out.logits, out.hc, &teacher_hc, 4, &il).unwrap();
        tape.affine(loss, 0.2, 0.0)
    });
}

pub fn ppo_surrogate() {
    let cfg = PolicyConfig {
        frame_h: 8,
        frame_w: 8,
        embed_dim: 16,
        local_hidden: 8,
        global_hidden: 8,
        k_window: 2,
        dropout: 0.0,
    };
    let mut net = PolicyNet::new(&mut rng(30), cfg.clone());
    let value = Dense::new(&mut net.bank, &mut rng(31), "value.fc", 32, 1);
    let frames = vec![random_frame(32, 8), random_frame(33, 8)];
    let global = net.zero_global_state();
    // advantage chosen negative so the clipped branch is exercised too
    let cases = [(2usize, 1.3f32, -0.9f32, 0.4f32), (6, 2.0, 0.7, -0.2)];
    let mut bank = std::mem::take(&mut net.bank);
    fd_check_eps(&mut bank, 1e-2, |tape, bank| {
        net.bank = bank.clone();
        let out = net.forward(tape, &frames, &global, &mut Mode::Infer).unwrap();
        let mut total = None;
        for &(action, old_logp, adv, ret) in &cases {
            let logp = tape.log_prob(out.logits, action);
            let shifted = tape.affine(logp, 1.0, old_logp);
            let ratio = tape.exp(shifted);
            let surr1 = tape.affine(ratio, adv, 0.0);
            let clipped = tape.clamp(ratio, 0.8, 1.2);
            let surr2 = tape.affine(clipped, adv, 0.0);
            let surr = tape.min_pair(surr1, surr2);
            let neg_surr = tape.affine(surr, -1.0, 0.0);
            let v = value.forward(tape, &net.bank, out.trunk);
            let v_loss = tape.mse_to(v, Arc::new(vec![ret]));
            let v_loss = tape.affine(v_loss, 0.5, 0.0);
            let ent = tape.entropy(out.logits);
            let ent_bonus = tape.affine(ent, -0.01, 0.0);
            let a = tape.add(neg_surr, v_loss);
            let step = tape.add(a, ent_bonus);
            total = Some(match total {
                None => step,
                Some(t) => tape.add(t, step),
            });
        }
        let total = total.unwrap();
        tape.affine(total, 0.2, 0.0)
    });
}

/// Runs every check; returns the number executed.
pub fn run_all() -> usize {
    let checks: Vec<fn()> = vec![
        dense_relu_mse,
        conv_stack,
        layer_norm,
        gru_step,
        softmax_losses,
        full_student_policy,
        ppo_surrogate,
    ];
    let n = checks.len();
    for c in checks {
        c();
    }
    n
}
