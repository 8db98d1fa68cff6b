//! Finite-difference suite over every tape primitive, the LSTM step, the
//! ELBO with frozen draws and each task loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::heads::{HeadConfig, TaskHead};
use crate::labels::{Detection, Stance, Task, Veracity};
use crate::layers::uniform;
use crate::seq::LstmCell;
use crate::tensor::{grad_check, grad_check_params, GradCheckReport, ParamStore, Primitive, Result, Tape, Tensor, Var};
use crate::text::{BOS, EOS};
use crate::vae::{standard_normal, Vae, VaeConfig};

/// Tolerance on the relative error.
pub const GRAD_TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteCase {
    pub name: String,
    pub instance: usize,
    pub report: GradCheckReport,
}

impl SuiteCase {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < GRAD_TOLERANCE
    }
}

fn rand_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values in `(lo, hi)` kept `margin` away from `avoid`, for kinks.
fn away_from(shape: &[usize], lo: f64, hi: f64, avoid: &[f64], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| loop {
        let v = rng.random_range(lo..hi);
        if avoid.iter().all(|a| (v - a).abs() > 1e-2) {
            break v;
        }
    })
}

/// `Σ out ⊙ w` with a random fixed `w`, so every output element matters.
fn weighted_sum(tape: &mut Tape<'_>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.shape(out).to_vec();
    let n = tape.value(out).len();
    let w = tape.constant(&shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

fn primitive_case(prim: Primitive, point: Vec<Tensor>, seed: u64) -> Result<GradCheckReport> {
    grad_check(
        move |tape, xs| {
            let out = tape.apply(prim.clone(), xs)?;
            weighted_sum(tape, out, seed)
        },
        &point,
        STEP,
    )
}

fn primitive_cases(rng: &mut ChaCha8Rng) -> Vec<(String, Primitive, Vec<Tensor>)> {
    let m = rng.random_range(1..4);
    let k = rng.random_range(1..5);
    let n = rng.random_range(1..4);
    let len = rng.random_range(2..6);
    let r = |shape: &[usize], rng: &mut ChaCha8Rng| rand_tensor(shape, -2.0, 2.0, rng);
    let start = rng.random_range(0..len - 1);
    let vocab = 5;
    let ids: Vec<usize> = (0..rng.random_range(1..4)).map(|_| rng.random_range(0..vocab)).collect();
    let mask: Vec<f64> = (0..len).map(|_| if rng.random::<f64>() < 0.7 { 1.25 } else { 0.0 }).collect();
    let pick = rng.random_range(0..len);
    vec![
        ("matmul[m,k][k,n]".into(), Primitive::MatMul, vec![r(&[m, k], rng), r(&[k, n], rng)]),
        ("matmul[m,k][k]".into(), Primitive::MatMul, vec![r(&[m, k], rng), r(&[k], rng)]),
        ("matmul[k][k,n]".into(), Primitive::MatMul, vec![r(&[k], rng), r(&[k, n], rng)]),
        ("add".into(), Primitive::Add, vec![r(&[len], rng), r(&[len], rng)]),
        ("sub".into(), Primitive::Sub, vec![r(&[m, n], rng), r(&[m, n], rng)]),
        ("mul".into(), Primitive::Mul, vec![r(&[len], rng), r(&[len], rng)]),
        ("scale".into(), Primitive::Scale(rng.random_range(-3.0..3.0)), vec![r(&[len], rng)]),
        ("offset".into(), Primitive::Offset(rng.random_range(-3.0..3.0)), vec![r(&[len], rng)]),
        ("square".into(), Primitive::Square, vec![r(&[len], rng)]),
        ("sigmoid".into(), Primitive::Sigmoid, vec![rand_tensor(&[len], -6.0, 6.0, rng)]),
        ("tanh".into(), Primitive::Tanh, vec![rand_tensor(&[len], -3.0, 3.0, rng)]),
        ("exp".into(), Primitive::Exp, vec![r(&[len], rng)]),
        ("log".into(), Primitive::Log, vec![rand_tensor(&[len], 0.1, 5.0, rng)]),
        ("softmax".into(), Primitive::Softmax, vec![rand_tensor(&[len], -4.0, 4.0, rng)]),
        ("log_softmax".into(), Primitive::LogSoftmax, vec![rand_tensor(&[len], -4.0, 4.0, rng)]),
        ("concat".into(), Primitive::Concat, vec![r(&[len], rng), r(&[k], rng), r(&[n], rng)]),
        (
            "slice".into(),
            Primitive::Slice {
                start,
                len: len - start,
            },
            vec![r(&[len], rng)],
        ),
        ("embedding".into(), Primitive::Embedding(ids), vec![r(&[vocab, k], rng)]),
        ("mask".into(), Primitive::Mask(mask), vec![r(&[len], rng)]),
        ("sum".into(), Primitive::Sum, vec![r(&[m, k], rng)]),
        ("mean".into(), Primitive::Mean, vec![r(&[len], rng)]),
        (
            "clamp".into(),
            Primitive::Clamp { lo: -0.5, hi: 0.5 },
            vec![away_from(&[len], -2.0, 2.0, &[-0.5, 0.5], rng)],
        ),
        ("pick".into(), Primitive::Pick(pick), vec![r(&[len], rng)]),
    ]
}

fn lstm_case(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let input = rng.random_range(1..5);
    let hidden = rng.random_range(1..5);
    let mut store = ParamStore::new();
    let cell = LstmCell::new(&mut store, "cell", input, hidden, rng);
    let h = uniform(&[hidden], 1.0, rng).into_data();
    let c = uniform(&[hidden], 1.0, rng).into_data();
    let x = uniform(&[input], 1.0, rng).into_data();
    let seed = rng.random();
    grad_check_params(
        &store,
        |tape, bound| {
            let state = crate::seq::LstmVars {
                h: tape.vector(h.clone())?,
                c: tape.vector(c.clone())?,
            };
            let xv = tape.vector(x.clone())?;
            let step = cell.step(tape, bound, state, xv)?;
            let both = tape.concat(&[step.state.h, step.state.c])?;
            weighted_sum(tape, both, seed)
        },
        STEP,
    )
}

fn elbo_case(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let cfg = VaeConfig {
        vocab_size: 7,
        embed_dim: 3,
        hidden: 3,
        dense_dim: 3,
        latent_dim: 2,
        dropout: 0.2,
        logvar_bias: 0.0,
    };
    let vae = Vae::new(cfg, rng);
    let mut tokens = vec![BOS];
    tokens.extend((0..rng.random_range(1..4)).map(|_| rng.random_range(4..7)));
    tokens.push(EOS);
    let eps = vec![standard_normal(2, rng), standard_normal(2, rng)];
    grad_check_params(
        &vae.params,
        |tape, bound| {
            let mut unused = ChaCha8Rng::seed_from_u64(0);
            Ok(vae.elbo_vars(tape, bound, &tokens, &eps, 1.0, &mut unused)?.loss)
        },
        STEP,
    )
}

fn head_case(task: Task, classes: Vec<String>, rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let cfg = HeadConfig {
        latent_dim: 4,
        steps: 2,
        hidden: 3,
        dropout: 0.2,
    };
    let label = rng.random_range(0..classes.len());
    let head = TaskHead::new(task, classes, cfg, rng)?;
    let z = uniform(&[4], 1.5, rng).into_data();
    grad_check_params(
        &head.params,
        |tape, bound| {
            let zv = tape.vector(z.clone())?;
            let mut unused = ChaCha8Rng::seed_from_u64(0);
            head.loss_vars(tape, bound, zv, label, 1.0, &mut unused)
        },
        STEP,
    )
}

/// Runs `instances` random instances of every case.
pub fn run_grad_suite(seed: u64, instances: usize) -> Result<Vec<SuiteCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for instance in 0..instances {
        for (name, prim, point) in primitive_cases(&mut rng) {
            let w = rng.random();
            out.push(SuiteCase {
                name: format!("primitive {name}"),
                instance,
                report: primitive_case(prim, point, w)?,
            });
        }
        out.push(SuiteCase {
            name: "lstm step".into(),
            instance,
            report: lstm_case(&mut rng)?,
        });
        out.push(SuiteCase {
            name: "elbo (frozen eps)".into(),
            instance,
            report: elbo_case(&mut rng)?,
        });
        let tracking: Vec<String> = (0..5).map(|i| format!("event{i}")).collect();
        for (task, classes) in [
            (Task::Detection, Detection::names()),
            (Task::Tracking, tracking),
            (Task::Stance, Stance::names()),
            (Task::Veracity, Veracity::names()),
        ] {
            out.push(SuiteCase {
                name: format!("{task} loss"),
                instance,
                report: head_case(task, classes, &mut rng)?,
            });
        }
    }
    Ok(out)
}
