use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{LdamError, Result};
use crate::numerics::{uniform_init, Graph, GruCellParams, GruVars, Tensor, Var};

/// Affine map `W x + b` with `W` of shape `out×in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn init<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        Self { weight: uniform_init(&[output, input], input, rng), bias: Tensor::zeros(&[output]) }
    }
}

/// Convolution kernels `C_out×C_in×k` plus bias `C_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub kernels: Tensor,
    pub bias: Tensor,
}

impl ConvParams {
    pub fn init<R: Rng>(c_in: usize, c_out: usize, width: usize, rng: &mut R) -> Self {
        Self { kernels: uniform_init(&[c_out, c_in, width], c_in * width, rng), bias: Tensor::zeros(&[c_out]) }
    }
}

/// Every trainable weight of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// Shared `D→F` projection.
    pub f1: Linear,
    pub text_conv: ConvParams,
    pub ts_conv: ConvParams,
    /// Per-channel encoder, input 1, hidden `F/2`.
    pub gru_channel_fwd: GruCellParams,
    pub gru_channel_bwd: GruCellParams,
    /// Integrating encoder over the per-channel states, input `F`, hidden `F/2`.
    pub gru_integrate_fwd: GruCellParams,
    pub gru_integrate_bwd: GruCellParams,
    /// `2F→F`.
    pub f6: Linear,
    /// `F→N_Y`.
    pub f7: Linear,
}

/// Names of the parameter tensors, in [`ModelParams::tensors`] order.
pub fn param_names() -> Vec<String> {
    let mut names: Vec<String> =
        ["f1.weight", "f1.bias", "text_conv.kernels", "text_conv.bias", "ts_conv.kernels", "ts_conv.bias"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    for gru in ["gru_channel_fwd", "gru_channel_bwd", "gru_integrate_fwd", "gru_integrate_bwd"] {
        for t in ["w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h"] {
            names.push(format!("{gru}.{t}"));
        }
    }
    names.extend(["f6.weight", "f6.bias", "f7.weight", "f7.bias"].iter().map(|s| s.to_string()));
    names
}

pub const N_PARAM_TENSORS: usize = 46;

impl ModelParams {
    /// Uniform(±1/√fan_in) weights and zero biases from `cfg.init_seed`.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let (d, f, half) = (cfg.embed_dim, cfg.hidden_dim, cfg.hidden_dim / 2);
        Ok(Self {
            f1: Linear::init(d, f, &mut rng),
            text_conv: ConvParams::init(cfg.text_conv_inputs(), cfg.conv_channels, cfg.ngram, &mut rng),
            ts_conv: ConvParams::init(cfg.ts_conv_inputs(), cfg.conv_channels, cfg.ngram, &mut rng),
            gru_channel_fwd: GruCellParams::init(1, half, &mut rng),
            gru_channel_bwd: GruCellParams::init(1, half, &mut rng),
            gru_integrate_fwd: GruCellParams::init(f, half, &mut rng),
            gru_integrate_bwd: GruCellParams::init(f, half, &mut rng),
            f6: Linear::init(2 * f, f, &mut rng),
            f7: Linear::init(f, cfg.n_labels, &mut rng),
        })
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![
            &self.f1.weight,
            &self.f1.bias,
            &self.text_conv.kernels,
            &self.text_conv.bias,
            &self.ts_conv.kernels,
            &self.ts_conv.bias,
        ];
        for g in [&self.gru_channel_fwd, &self.gru_channel_bwd, &self.gru_integrate_fwd, &self.gru_integrate_bwd] {
            out.extend(g.tensors());
        }
        out.extend([&self.f6.weight, &self.f6.bias, &self.f7.weight, &self.f7.bias]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.f1.weight,
            &mut self.f1.bias,
            &mut self.text_conv.kernels,
            &mut self.text_conv.bias,
            &mut self.ts_conv.kernels,
            &mut self.ts_conv.bias,
        ];
        for g in [
            &mut self.gru_channel_fwd,
            &mut self.gru_channel_bwd,
            &mut self.gru_integrate_fwd,
            &mut self.gru_integrate_bwd,
        ] {
            out.extend(g.tensors_mut());
        }
        out.extend([&mut self.f6.weight, &mut self.f6.bias, &mut self.f7.weight, &mut self.f7.bias]);
        out
    }

    /// Rebuilds parameters from tensors in [`ModelParams::tensors`] order,
    /// checking each shape against `cfg`.
    pub fn from_tensors(cfg: &ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let mut p = Self::init(cfg)?;
        if tensors.len() != N_PARAM_TENSORS {
            return Err(LdamError::Dimension(format!("expected {N_PARAM_TENSORS} tensors, got {}", tensors.len())));
        }
        let names = param_names();
        for ((slot, t), name) in p.tensors_mut().into_iter().zip(tensors).zip(names) {
            if slot.shape() != t.shape() {
                return Err(LdamError::Dimension(format!(
                    "{name}: expected shape {:?}, got {:?}",
                    slot.shape(),
                    t.shape()
                )));
            }
            *slot = t;
        }
        Ok(p)
    }

    pub fn check_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.check_finite())
    }

    pub fn register(&self, g: &mut Graph, trainable: bool) -> ParamVars {
        let vars: Vec<Var> = self.tensors().into_iter().map(|t| g.leaf(t.clone(), trainable)).collect();
        ParamVars::from_slice(&vars)
    }
}

/// Tape handles for every parameter tensor.
#[derive(Clone, Copy, Debug)]
pub struct ParamVars {
    pub f1_w: Var,
    pub f1_b: Var,
    pub text_conv_w: Var,
    pub text_conv_b: Var,
    pub ts_conv_w: Var,
    pub ts_conv_b: Var,
    pub gru_channel_fwd: GruVars,
    pub gru_channel_bwd: GruVars,
    pub gru_integrate_fwd: GruVars,
    pub gru_integrate_bwd: GruVars,
    pub f6_w: Var,
    pub f6_b: Var,
    pub f7_w: Var,
    pub f7_b: Var,
}

impl ParamVars {
    /// Builds handles from a slice in [`ModelParams::tensors`] order.
    pub fn from_slice(v: &[Var]) -> Self {
        assert_eq!(v.len(), N_PARAM_TENSORS, "parameter handle count");
        let gru = |o: usize| GruVars {
            w_z: v[o],
            w_r: v[o + 1],
            w_h: v[o + 2],
            u_z: v[o + 3],
            u_r: v[o + 4],
            u_h: v[o + 5],
            b_z: v[o + 6],
            b_r: v[o + 7],
            b_h: v[o + 8],
        };
        Self {
            f1_w: v[0],
            f1_b: v[1],
            text_conv_w: v[2],
            text_conv_b: v[3],
            ts_conv_w: v[4],
            ts_conv_b: v[5],
            gru_channel_fwd: gru(6),
            gru_channel_bwd: gru(15),
            gru_integrate_fwd: gru(24),
            gru_integrate_bwd: gru(33),
            f6_w: v[42],
            f6_b: v[43],
            f7_w: v[44],
            f7_b: v[45],
        }
    }

    pub fn to_vec(&self) -> Vec<Var> {
        let mut out = vec![self.f1_w, self.f1_b, self.text_conv_w, self.text_conv_b, self.ts_conv_w, self.ts_conv_b];
        for g in [self.gru_channel_fwd, self.gru_channel_bwd, self.gru_integrate_fwd, self.gru_integrate_bwd] {
            out.extend(g.vars());
        }
        out.extend([self.f6_w, self.f6_b, self.f7_w, self.f7_b]);
        out
    }
}
