//! Finite-difference gradient harness shared by the integration tests.
//!
//! Every check builds a scalar on a fresh tape, takes the analytic gradient
//! of each input with [`Tape::backward`], then re-evaluates the same graph
//! from constants with each coordinate nudged by `±H`. The relative error of
//! one coordinate is `|a - n| / max(|a|, |n|, FLOOR)`; the floor keeps
//! coordinates whose true derivative is zero from dividing by round-off.
//!
//! A probe whose `±h` evaluations take a different relu or pooling branch
//! than the base point straddles a kink, where no derivative exists. Such
//! coordinates are counted in [`Check::straddled`] instead of compared.
#![allow(dead_code)]

use fecnet::losses::{loss_on_tape, LossKind};
use fecnet::nn::{build_unet, Tape, Tensor, UNetConfig, Var};
use fecnet::rng::{stream, Domain, StreamRng};
use fecnet::Result;
use rand::Rng;

pub const H: f64 = 1e-3;
/// Step for whole-network checks: a single weight feeds every cell, so at
/// `H` some relu or pooling decision almost always flips inside the probe.
pub const NET_H: f64 = 1e-5;
pub const FLOOR: f64 = 1e-6;
pub const OP_TOL: f64 = 1e-4;
pub const NET_TOL: f64 = 1e-3;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Graph under test: maps input vars to a scalar var.
pub trait Graph: Fn(&mut Tape<f64>, &[Var]) -> Result<Var> {}
impl<F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>> Graph for F {}

fn evaluate(inputs: &[Tensor<f64>], graph: &impl Graph) -> (f64, u64) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = graph(&mut tape, &vars).expect("graph builds");
    (tape.value(out).item(), tape.branch_fingerprint())
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Check {
    pub worst: f64,
    pub compared: usize,
    pub straddled: usize,
}

impl Check {
    fn merge(&mut self, other: Check) {
        self.worst = self.worst.max(other.worst);
        self.compared += other.compared;
        self.straddled += other.straddled;
    }
}

/// Largest relative error over every coordinate of every input.
pub fn max_rel_err(inputs: &[Tensor<f64>], graph: impl Graph) -> Check {
    max_rel_err_sampled(inputs, graph, H, usize::MAX, &mut stream(0, Domain::Misc, 0))
}

/// As [`max_rel_err`] but checks at most `budget` coordinates per input,
/// chosen uniformly without replacement.
pub fn max_rel_err_sampled(
    inputs: &[Tensor<f64>],
    graph: impl Graph,
    h: f64,
    budget: usize,
    rng: &mut StreamRng,
) -> Check {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = graph(&mut tape, &vars).expect("graph builds");
    let grads = tape.backward(out).expect("backward");
    let base = tape.branch_fingerprint();
    let mut check = Check::default();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).expect("input gradient").data().to_vec();
        let mut coords: Vec<usize> = (0..input.len()).collect();
        if budget < coords.len() {
            rand::seq::SliceRandom::shuffle(coords.as_mut_slice(), rng);
            coords.truncate(budget);
        }
        for j in coords {
            let mut probe = inputs.to_vec();
            let x0 = probe[i].data()[j];
            probe[i].data_mut()[j] = x0 + h;
            let (up, fp_up) = evaluate(&probe, &graph);
            probe[i].data_mut()[j] = x0 - h;
            let (down, fp_down) = evaluate(&probe, &graph);
            if fp_up != base || fp_down != base {
                check.straddled += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * h);
            check.worst = check.worst.max(rel_err(analytic[j], numeric));
            check.compared += 1;
        }
    }
    check
}

pub fn uniform(shape: [usize; 4], lo: f64, hi: f64, rng: &mut StreamRng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Uniform values whose magnitude is at least `gap`, so relu kinks stay
/// outside the `±H` probe.
fn away_from_zero(shape: [usize; 4], gap: f64, rng: &mut StreamRng) -> Tensor<f64> {
    uniform(shape, -1.0, 1.0, rng).map(|x| if x.abs() < gap { x.signum() * gap + x } else { x })
}

/// A random permutation of evenly spaced values: every 2x2 window has a
/// unique maximum separated from the runner-up by far more than `H`.
fn distinct(shape: [usize; 4], rng: &mut StreamRng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - 1.0).collect();
    rand::seq::SliceRandom::shuffle(v.as_mut_slice(), rng);
    Tensor::from_vec(shape, v).unwrap()
}

fn random_mask(len: usize, rng: &mut StreamRng) -> Vec<bool> {
    let mut m: Vec<bool> = (0..len).map(|_| rng.random_bool(0.7)).collect();
    m[0] = true;
    m
}

/// Worst error per case over `trials` random draws.
/// Primitive cases are constructed away from kinks, so a straddled probe
/// there fails the row.
pub struct SuiteRow {
    pub name: &'static str,
    pub trials: usize,
    pub check: Check,
    pub tol: f64,
}

impl SuiteRow {
    pub fn passed(&self) -> bool {
        self.check.worst < self.tol && self.check.straddled == 0 && self.check.compared > 0
    }
}

fn run(name: &'static str, trials: usize, tol: f64, mut case: impl FnMut(&mut StreamRng) -> Check) -> SuiteRow {
    let mut check = Check::default();
    for t in 0..trials {
        let salt = name.bytes().fold(0u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64)) & 0xffff;
        let mut rng = stream(0x9c4d, Domain::Misc, salt << 20 | t as u64);
        check.merge(case(&mut rng));
    }
    SuiteRow { name, trials, check, tol }
}

pub fn conv2d_case(rng: &mut StreamRng) -> Check {
    let (n, ci, co) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
    let k = if rng.random_bool(0.5) { 3 } else { 1 };
    let (h, w) = (rng.random_range(2..6), rng.random_range(2..6));
    let x = uniform([n, ci, h, w], -1.0, 1.0, rng);
    let wt = uniform([co, ci, k, k], -1.0, 1.0, rng);
    let b = uniform([co, 1, 1, 1], -1.0, 1.0, rng);
    let proj = uniform([n, co, h, w], -1.0, 1.0, rng);
    max_rel_err(&[x, wt, b], move |t, v| {
        let y = t.conv2d(v[0], v[1], v[2])?;
        t.dot(y, proj.clone())
    })
}

pub fn maxpool2_case(rng: &mut StreamRng) -> Check {
    let shape = [rng.random_range(1..3), rng.random_range(1..3), 2 * rng.random_range(1..4), 2 * rng.random_range(1..4)];
    let x = distinct(shape, rng);
    let proj = uniform([shape[0], shape[1], shape[2] / 2, shape[3] / 2], -1.0, 1.0, rng);
    max_rel_err(&[x], move |t, v| {
        let y = t.maxpool2(v[0])?;
        t.dot(y, proj.clone())
    })
}

pub fn upconv2_case(rng: &mut StreamRng) -> Check {
    let (n, ci, co) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
    let (h, w) = (rng.random_range(1..4), rng.random_range(1..4));
    let x = uniform([n, ci, h, w], -1.0, 1.0, rng);
    let wt = uniform([ci, co, 2, 2], -1.0, 1.0, rng);
    let b = uniform([co, 1, 1, 1], -1.0, 1.0, rng);
    let proj = uniform([n, co, 2 * h, 2 * w], -1.0, 1.0, rng);
    max_rel_err(&[x, wt, b], move |t, v| {
        let y = t.upconv2(v[0], v[1], v[2])?;
        t.dot(y, proj.clone())
    })
}

pub fn relu_case(rng: &mut StreamRng) -> Check {
    let x = away_from_zero([2, 2, 3, 3], 0.01, rng);
    let proj = uniform(x.shape(), -1.0, 1.0, rng);
    max_rel_err(&[x], move |t, v| {
        let y = t.relu(v[0]);
        t.dot(y, proj.clone())
    })
}

pub fn sigmoid_case(rng: &mut StreamRng) -> Check {
    let x = uniform([2, 2, 3, 3], -4.0, 4.0, rng);
    let proj = uniform(x.shape(), -1.0, 1.0, rng);
    max_rel_err(&[x], move |t, v| {
        let y = t.sigmoid(v[0]);
        t.dot(y, proj.clone())
    })
}

pub fn concat_case(rng: &mut StreamRng) -> Check {
    let (n, h, w) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
    let a = uniform([n, rng.random_range(1..4), h, w], -1.0, 1.0, rng);
    let b = uniform([n, rng.random_range(1..4), h, w], -1.0, 1.0, rng);
    let proj = uniform([n, a.channels() + b.channels(), h, w], -1.0, 1.0, rng);
    max_rel_err(&[a, b], move |t, v| {
        let y = t.concat(v[0], v[1])?;
        t.dot(y, proj.clone())
    })
}

pub fn add_case(rng: &mut StreamRng) -> Check {
    let shape = [2, rng.random_range(1..4), 3, 3];
    let a = uniform(shape, -1.0, 1.0, rng);
    let b = uniform(shape, -1.0, 1.0, rng);
    let proj = uniform(shape, -1.0, 1.0, rng);
    max_rel_err(&[a, b], move |t, v| {
        let y = t.add(v[0], v[1])?;
        t.dot(y, proj.clone())
    })
}

/// `relu(conv(x)) + x`: the residual block pattern, with `x` reused twice.
/// Draws are redrawn until every pre-activation clears the relu kink by
/// more than any single `±H` probe can move it.
pub fn composed_block_case(rng: &mut StreamRng) -> Check {
    let c = rng.random_range(1..4);
    let (x, wt, b) = loop {
        let x = uniform([2, c, 4, 4], -1.0, 1.0, rng);
        let wt = uniform([c, c, 3, 3], -0.5, 0.5, rng);
        let b = uniform([c, 1, 1, 1], -0.5, 0.5, rng);
        let mut t = Tape::new();
        let (vx, vw, vb) = (t.constant(x.clone()), t.constant(wt.clone()), t.constant(b.clone()));
        let pre = t.conv2d(vx, vw, vb).unwrap();
        if t.value(pre).data().iter().all(|p| p.abs() > 2e-3) {
            break (x, wt, b);
        }
    };
    let proj = uniform(x.shape(), -1.0, 1.0, rng);
    max_rel_err(&[x, wt, b], move |t, v| {
        let h = t.conv2d(v[0], v[1], v[2])?;
        let h = t.relu(h);
        let y = t.add(h, v[0])?;
        let y = t.sigmoid(y);
        t.dot(y, proj.clone())
    })
}

fn loss_case(kind: LossKind, rng: &mut StreamRng) -> Check {
    let (n, side) = (rng.random_range(1..3), 4);
    // central differences of ln p carry a relative truncation error of
    // about h^2 / (3 p^2), which stays below 1e-4 only for p >= 0.1
    let p = uniform([n, 1, side, side], 0.1, 0.9, rng);
    let target = match kind {
        LossKind::Bce => uniform([n, 1, side, side], 0.0, 1.0, rng).map(|x| x.round()),
        _ => uniform([n, 1, side, side], 0.0, 1.0, rng),
    };
    let mask = random_mask(side * side, rng);
    max_rel_err(&[p], move |t, v| loss_on_tape(t, kind, v[0], &target, &mask))
}

pub fn bce_case(rng: &mut StreamRng) -> Check {
    loss_case(LossKind::Bce, rng)
}

pub fn mse_case(rng: &mut StreamRng) -> Check {
    loss_case(LossKind::Mse, rng)
}

pub fn ssim_case(rng: &mut StreamRng) -> Check {
    loss_case(LossKind::Ssim, rng)
}

/// Full U-Net plus BCE on an 8x8 toy, sampling parameter coordinates.
///
/// He-initialized logits at unit input scale reach tens, where `ln(1 - p)`
/// loses most of its digits to cancellation. Small inputs and small random
/// biases keep the sigmoid unsaturated so the oracle itself is well
/// conditioned. The head starts at zero, which would make every upstream
/// gradient vanish, so it is drawn here too.
pub fn unet_case(rng: &mut StreamRng, budget: usize) -> Check {
    let mut net = build_unet::<f64>(&UNetConfig::new(2, 2), rng.random()).unwrap();
    for p in net.params_mut() {
        if p.name.ends_with("bias") {
            p.value = uniform(p.value.shape(), -0.05, 0.05, rng);
        } else if p.name == "head.weight" {
            p.value = uniform(p.value.shape(), -0.5, 0.5, rng);
        }
    }
    let x = uniform([2, 2, 8, 8], -0.2, 0.2, rng);
    let target = uniform([2, 1, 8, 8], 0.0, 1.0, rng).map(|x| x.round());
    let mask = random_mask(64, rng);
    let mut inputs: Vec<Tensor<f64>> = net.params().iter().map(|p| p.value.clone()).collect();
    inputs.push(x);
    let graph = move |t: &mut Tape<f64>, v: &[Var]| {
        let (params, x) = v.split_at(v.len() - 1);
        let prob = net.forward(t, params, x[0])?;
        loss_on_tape(t, LossKind::Bce, prob, &target, &mask)
    };
    max_rel_err_sampled(&inputs, graph, NET_H, budget, rng)
}

/// The whole primitive and loss suite, `trials` draws per case.
pub fn gradient_suite(trials: usize) -> Vec<SuiteRow> {
    vec![
        run("conv2d", trials, OP_TOL, conv2d_case),
        run("maxpool2", trials, OP_TOL, maxpool2_case),
        run("upconv2", trials, OP_TOL, upconv2_case),
        run("relu", trials, OP_TOL, relu_case),
        run("sigmoid", trials, OP_TOL, sigmoid_case),
        run("concat", trials, OP_TOL, concat_case),
        run("add", trials, OP_TOL, add_case),
        run("conv-relu-add block", trials, OP_TOL, composed_block_case),
        run("bce", trials, OP_TOL, bce_case),
        run("mse", trials, OP_TOL, mse_case),
        run("ssim", trials, OP_TOL, ssim_case),
    ]
}
