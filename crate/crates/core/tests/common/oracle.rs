//! Plain-loop evaluation of the full network, written without the tape.

use ldam_core::model::{AttentionKind, ModelConfig, ModelParams};
use ldam_core::numerics::{GruCellParams, Tensor};

pub struct OracleOutput {
    pub y_hat: Vec<f64>,
    pub beta: Option<Vec<f64>>,
    pub alpha: Option<Vec<f64>>,
    pub z_m: Vec<f64>,
    pub z_s: Vec<f64>,
    /// `E^M β` before the projection.
    pub pooled: Option<Vec<f64>>,
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `W v + b` with `W` stored row-major as `out×in`.
pub fn affine(w: &Tensor, b: &Tensor, v: &[f64]) -> Vec<f64> {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    assert_eq!(cols, v.len());
    (0..rows).map(|r| b.data()[r] + (0..cols).map(|c| w.at(r, c) * v[c]).sum::<f64>()).collect()
}

fn matvec(w: &Tensor, v: &[f64]) -> Vec<f64> {
    (0..w.shape()[0]).map(|r| (0..v.len()).map(|c| w.at(r, c) * v[c]).sum()).collect()
}

pub fn gru_step(c: &GruCellParams, x: &[f64], h: &[f64]) -> Vec<f64> {
    let gate = |w: &Tensor, u: &Tensor, b: &Tensor, hin: &[f64]| -> Vec<f64> {
        let wx = matvec(w, x);
        let uh = matvec(u, hin);
        (0..h.len()).map(|i| wx[i] + uh[i] + b.data()[i]).collect()
    };
    let z: Vec<f64> = gate(&c.w_z, &c.u_z, &c.b_z, h).into_iter().map(sig).collect();
    let r: Vec<f64> = gate(&c.w_r, &c.u_r, &c.b_r, h).into_iter().map(sig).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let cand: Vec<f64> = gate(&c.w_h, &c.u_h, &c.b_h, &rh).into_iter().map(f64::tanh).collect();
    (0..h.len()).map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i]).collect()
}

/// Per-step `[forward ‖ backward]` states and the final pair.
pub fn bigru(fwd: &GruCellParams, bwd: &GruCellParams, xs: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let t = xs.len();
    let hf_dim = fwd.u_z.shape()[0];
    let hb_dim = bwd.u_z.shape()[0];
    let mut hf = vec![vec![0.0; hf_dim]; t];
    let mut h = vec![0.0; hf_dim];
    for i in 0..t {
        h = gru_step(fwd, &xs[i], &h);
        hf[i] = h.clone();
    }
    let mut hb = vec![vec![0.0; hb_dim]; t];
    let mut h = vec![0.0; hb_dim];
    for i in (0..t).rev() {
        h = gru_step(bwd, &xs[i], &h);
        hb[i] = h.clone();
    }
    let states = (0..t).map(|i| [hf[i].clone(), hb[i].clone()].concat()).collect();
    (states, [hf[t - 1].clone(), hb[0].clone()].concat())
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Convex weights over `feat` columns scored against `keys`, both already projected.
pub fn attention(feat: &[Vec<f64>], keys: &[Vec<f64>], kernels: &Tensor, bias: &Tensor) -> Vec<f64> {
    let n = feat.len();
    let f = feat[0].len() as f64;
    let (c_out, c_in, k) = (kernels.shape()[0], kernels.shape()[1], kernels.shape()[2]);
    // rows: one per key, zero rows up to the conv's input width
    let mut gt = vec![vec![0.0; n]; c_in];
    for (c, key) in keys.iter().enumerate() {
        for l in 0..n {
            gt[c][l] = key.iter().zip(&feat[l]).map(|(a, b)| a * b).sum::<f64>() / f.sqrt();
        }
    }
    let half = (k / 2) as isize;
    let mut pooled = vec![f64::NEG_INFINITY; n];
    for o in 0..c_out {
        for l in 0..n {
            let mut acc = bias.data()[o];
            for c in 0..c_in {
                for j in 0..k {
                    let src = l as isize + j as isize - half;
                    if src >= 0 && (src as usize) < n {
                        acc += kernels.data()[(o * c_in + c) * k + j] * gt[c][src as usize];
                    }
                }
            }
            pooled[l] = pooled[l].max(acc.max(0.0));
        }
    }
    softmax(&pooled)
}

fn columns(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.shape()[1]).map(|c| t.column(c)).collect()
}

/// Full forward pass: note `D×L`, series `N_S×T`, label names `D×N_Y`, indicator names `D×N_S`.
pub fn forward(
    cfg: &ModelConfig,
    p: &ModelParams,
    note: &Tensor,
    series: &Tensor,
    e_y: &Tensor,
    e_s: &Tensor,
) -> OracleOutput {
    let f = cfg.hidden_dim;
    let f1 = |v: &[f64]| affine(&p.f1.weight, &p.f1.bias, v);
    let label_proj: Vec<Vec<f64>> = columns(e_y).iter().map(|c| f1(c)).collect();

    let (z_m, beta, pooled) = if cfg.mode.uses_text() {
        let cols: Vec<Vec<f64>> = columns(note).into_iter().take(cfg.max_note_len).collect();
        let proj: Vec<Vec<f64>> = cols.iter().map(|c| f1(c)).collect();
        let keys = match cfg.attention {
            AttentionKind::Cross => &label_proj,
            AttentionKind::SelfAttention => &proj,
        };
        let beta = attention(&proj, keys, &p.text_conv.kernels, &p.text_conv.bias);
        let d = cols[0].len();
        let pooled: Vec<f64> = (0..d).map(|i| cols.iter().zip(&beta).map(|(c, b)| c[i] * b).sum()).collect();
        (f1(&pooled), Some(beta), Some(pooled))
    } else {
        (vec![0.0; f], None, None)
    };

    let (z_s, alpha) = if cfg.mode.uses_timeseries() {
        let n_s = series.shape()[0];
        let h: Vec<Vec<f64>> = (0..n_s)
            .map(|i| {
                let xs: Vec<Vec<f64>> = series.row(i).iter().map(|&v| vec![v]).collect();
                let (local, _) = bigru(&p.gru_channel_fwd, &p.gru_channel_bwd, &xs);
                bigru(&p.gru_integrate_fwd, &p.gru_integrate_bwd, &local).1
            })
            .collect();
        let ind_proj: Vec<Vec<f64>> = columns(e_s).iter().map(|c| f1(c)).collect();
        let keys = match cfg.attention {
            AttentionKind::Cross => &label_proj,
            AttentionKind::SelfAttention => &ind_proj,
        };
        let alpha = attention(&ind_proj, keys, &p.ts_conv.kernels, &p.ts_conv.bias);
        let z: Vec<f64> = (0..f).map(|k| (0..n_s).map(|i| h[i][k] * alpha[i]).sum()).collect();
        (z, Some(alpha))
    } else {
        (vec![0.0; f], None)
    };

    let cat = [z_m.clone(), z_s.clone()].concat();
    let hidden = affine(&p.f6.weight, &p.f6.bias, &cat);
    let y_hat = affine(&p.f7.weight, &p.f7.bias, &hidden).into_iter().map(sig).collect();
    OracleOutput { y_hat, beta, alpha, z_m, z_s, pooled }
}

/// `(term1, term2)`: clamped mean binary cross-entropy, and the mean
/// cross-entropy of each projected label name against its own class.
pub fn loss_terms(p: &ModelParams, y_hat: &[f64], y: &[u8], e_y: &Tensor) -> (f64, f64) {
    let n = y.len() as f64;
    let term1 = y_hat
        .iter()
        .zip(y)
        .map(|(&q, &t)| {
            let q = q.clamp(1e-12, 1.0 - 1e-12);
            if t == 1 {
                -q.ln()
            } else {
                -(1.0 - q).ln()
            }
        })
        .sum::<f64>()
        / n;
    let cols = columns(e_y);
    let term2 = cols
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let logits = affine(&p.f7.weight, &p.f7.bias, &affine(&p.f1.weight, &p.f1.bias, c));
            -softmax(&logits)[j].ln()
        })
        .sum::<f64>()
        / cols.len() as f64;
    (term1, term2)
}
