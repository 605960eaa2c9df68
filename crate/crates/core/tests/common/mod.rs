//! Test-only oracles shared by the integration suites.
#![allow(dead_code, clippy::needless_range_loop)]

pub mod metric_oracle;
pub mod oracle;
pub mod tiny;

use ldam_core::numerics::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Relative error with a small floor so near-zero gradients compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Largest relative error between reverse-mode gradients and central
/// differences, over every entry of every input.
pub fn max_grad_error(build: impl Fn(&mut Graph, &[Var]) -> Var, inputs: &[Tensor]) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars);
    g.backward(loss).unwrap();
    let analytic: Vec<Tensor> = vars.iter().map(|&v| g.grad_tensor(v)).collect();

    let eval = |ins: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars);
        g.value(out).data()[0]
    };
    let mut worst = 0.0f64;
    let mut ins = inputs.to_vec();
    for k in 0..ins.len() {
        for j in 0..ins[k].len() {
            let orig = ins[k].data()[j];
            ins[k].data_mut()[j] = orig + FD_EPS;
            let up = eval(&ins);
            ins[k].data_mut()[j] = orig - FD_EPS;
            let down = eval(&ins);
            ins[k].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_EPS);
            worst = worst.max(rel_err(analytic[k].data()[j], numeric));
        }
    }
    worst
}

/// Naive triple loop.
pub fn matmul_oracle(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.at(i, p) * b.at(p, j);
            }
            out[i * n + j] = s;
        }
    }
    Tensor::new(&[m, n], out).unwrap()
}
