//! The tiny instance shared by the model and acceptance suites.

use ldam_core::model::{
    build_context, label_term, loss, sample_forward, AttentionKind, Ldam, Mode, ModelConfig, ModelParams,
    NameEmbeddings,
};
use ldam_core::numerics::{Graph, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;

use super::{random_tensor, rel_err, rng, FD_EPS};

pub const D: usize = 8;
pub const F: usize = 4;
pub const L: usize = 6;
pub const N_S: usize = 3;
pub const N_Y: usize = 4;
pub const T: usize = 5;

pub fn tiny_cfg(mode: Mode, attention: AttentionKind) -> ModelConfig {
    ModelConfig {
        embed_dim: D,
        hidden_dim: F,
        max_note_len: L,
        n_indicators: N_S,
        n_labels: N_Y,
        time_steps: T,
        ngram: 3,
        conv_channels: 3,
        mode,
        attention,
        lambda_label: 0.7,
        init_seed: 0,
    }
}

/// Every parameter, biases included, drawn from U(-0.8, 0.8).
pub fn random_params(cfg: &ModelConfig, seed: u64) -> ModelParams {
    let mut p = ModelParams::init(cfg).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for t in p.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = r.random_range(-0.8..0.8));
    }
    p
}

pub struct Instance {
    pub note: Tensor,
    pub series: Tensor,
    pub names: NameEmbeddings,
    pub labels: Vec<u8>,
}

pub fn instance(seed: u64, len: usize) -> Instance {
    let mut r = rng(seed);
    Instance {
        note: random_tensor(&[D, len], &mut r),
        series: random_tensor(&[N_S, T], &mut r),
        names: NameEmbeddings {
            labels: random_tensor(&[D, N_Y], &mut r),
            indicators: random_tensor(&[D, N_S], &mut r),
        },
        labels: (0..N_Y).map(|_| r.random_range(0..2u8)).collect(),
    }
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn all_configs() -> Vec<ModelConfig> {
    let mut out = Vec::new();
    for mode in [Mode::Multimodal, Mode::TextOnly, Mode::TimeseriesOnly] {
        for att in [AttentionKind::Cross, AttentionKind::SelfAttention] {
            out.push(tiny_cfg(mode, att));
        }
    }
    out
}

/// Reverse-mode gradient of the full loss for every parameter tensor.
pub fn analytic_grads(cfg: &ModelConfig, p: &ModelParams, inst: &Instance) -> Vec<Tensor> {
    let mut g = Graph::new();
    let ctx = build_context(&mut g, p, &inst.names, true).unwrap();
    let note = g.constant(inst.note.clone());
    let series = g.constant(inst.series.clone());
    let sv = sample_forward(&mut g, cfg, &ctx, Some(note), Some(series)).unwrap();
    let targets: Vec<f64> = inst.labels.iter().map(|&y| y as f64).collect();
    let t1 = g.bce_mean(sv.y_hat, &targets).unwrap();
    let t2 = label_term(&mut g, &ctx).unwrap();
    let w = g.scale(t2, cfg.lambda_label);
    let total = g.add(t1, w).unwrap();
    g.backward(total).unwrap();
    ctx.params.to_vec().into_iter().map(|v| g.grad_tensor(v)).collect()
}

pub fn total_loss(cfg: &ModelConfig, p: &ModelParams, inst: &Instance) -> f64 {
    let model = Ldam::from_parts(cfg.clone(), p.clone()).unwrap();
    let out = model.forward(Some(&inst.note), &inst.series, &inst.names).unwrap();
    loss(&out.y_hat, &inst.labels, &inst.names.labels, p, cfg.lambda_label).unwrap().total
}

/// Worst relative error per parameter tensor.
pub fn gradient_errors(cfg: &ModelConfig, seed: u64) -> Vec<f64> {
    let p = random_params(cfg, seed);
    let inst = instance(seed, L);
    let grads = analytic_grads(cfg, &p, &inst);
    let mut worst = vec![0.0f64; grads.len()];
    let mut q = p.clone();
    for (k, grad) in grads.iter().enumerate() {
        for j in 0..grad.len() {
            let orig = q.tensors()[k].data()[j];
            q.tensors_mut()[k].data_mut()[j] = orig + FD_EPS;
            let up = total_loss(cfg, &q, &inst);
            q.tensors_mut()[k].data_mut()[j] = orig - FD_EPS;
            let down = total_loss(cfg, &q, &inst);
            q.tensors_mut()[k].data_mut()[j] = orig;
            worst[k] = worst[k].max(rel_err(grad.data()[j], (up - down) / (2.0 * FD_EPS)));
        }
    }
    worst
}

pub fn permutation(seed: u64, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut rng(seed));
    p
}

pub fn grad_of(g: &Graph, v: Var) -> Vec<f64> {
    g.grad(v).map_or_else(|| vec![0.0; g.value(v).len()], <[f64]>::to_vec)
}

/// Builds `Σ ŷ ⊙ w` with note and series as differentiable leaves.
pub fn input_gradients(cfg: &ModelConfig, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let p = random_params(cfg, seed);
    let inst = instance(seed, L);
    let mut g = Graph::new();
    let ctx = build_context(&mut g, &p, &inst.names, true).unwrap();
    let note = g.param(inst.note.clone());
    let series = g.param(inst.series.clone());
    let sv = sample_forward(&mut g, cfg, &ctx, Some(note), Some(series)).unwrap();
    let w = g.constant(random_tensor(&[N_Y], &mut rng(seed + 7)));
    let prod = g.mul(sv.y_hat, w).unwrap();
    let s = g.sum(prod);
    g.backward(s).unwrap();
    (grad_of(&g, note), grad_of(&g, series))
}
