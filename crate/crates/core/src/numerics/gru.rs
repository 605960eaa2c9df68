//! Gated recurrent units and their bidirectional composition.

use rand::Rng;

use super::graph::{Graph, GruVars, Var};
use super::tensor::Tensor;
use crate::error::{LdamError, Result};

/// Weights of one GRU cell. Input matrices are `hidden×input`, recurrent
/// matrices `hidden×hidden`, biases `hidden`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruCellParams {
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_h: Tensor,
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u_h: Tensor,
    pub b_z: Tensor,
    pub b_r: Tensor,
    pub b_h: Tensor,
}

impl GruCellParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_z: Tensor::zeros(&[hidden, input]),
            w_r: Tensor::zeros(&[hidden, input]),
            w_h: Tensor::zeros(&[hidden, input]),
            u_z: Tensor::zeros(&[hidden, hidden]),
            u_r: Tensor::zeros(&[hidden, hidden]),
            u_h: Tensor::zeros(&[hidden, hidden]),
            b_z: Tensor::zeros(&[hidden]),
            b_r: Tensor::zeros(&[hidden]),
            b_h: Tensor::zeros(&[hidden]),
        }
    }

    /// Uniform(±1/√fan_in) matrices, zero biases.
    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input, hidden);
        for w in [&mut p.w_z, &mut p.w_r, &mut p.w_h] {
            *w = uniform_init(&[hidden, input], input, rng);
        }
        for u in [&mut p.u_z, &mut p.u_r, &mut p.u_h] {
            *u = uniform_init(&[hidden, hidden], hidden, rng);
        }
        p
    }

    pub fn input_size(&self) -> usize {
        self.w_z.shape()[1]
    }

    pub fn hidden_size(&self) -> usize {
        self.w_z.shape()[0]
    }

    pub fn tensors(&self) -> [&Tensor; 9] {
        [&self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_h, &self.b_z, &self.b_r, &self.b_h]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 9] {
        [
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_h,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }

    /// Checks every shape against the declared input and hidden sizes.
    pub fn validate(&self) -> Result<()> {
        let (h, i) = (self.hidden_size(), self.input_size());
        let ok = [&self.w_z, &self.w_r, &self.w_h].iter().all(|w| w.shape() == [h, i])
            && [&self.u_z, &self.u_r, &self.u_h].iter().all(|u| u.shape() == [h, h])
            && [&self.b_z, &self.b_r, &self.b_h].iter().all(|b| b.shape() == [h]);
        if ok {
            Ok(())
        } else {
            Err(LdamError::Dimension(format!("gru cell not consistent with input {i}, hidden {h}")))
        }
    }

    /// Registers the weights on a tape; `trainable` controls gradient tracking.
    pub fn register(&self, g: &mut Graph, trainable: bool) -> GruVars {
        let mut leaf = |t: &Tensor| g.leaf(t.clone(), trainable);
        GruVars {
            w_z: leaf(&self.w_z),
            w_r: leaf(&self.w_r),
            w_h: leaf(&self.w_h),
            u_z: leaf(&self.u_z),
            u_r: leaf(&self.u_r),
            u_h: leaf(&self.u_h),
            b_z: leaf(&self.b_z),
            b_r: leaf(&self.b_r),
            b_h: leaf(&self.b_h),
        }
    }
}

impl GruVars {
    pub fn vars(&self) -> [Var; 9] {
        [self.w_z, self.w_r, self.w_h, self.u_z, self.u_r, self.u_h, self.b_z, self.b_r, self.b_h]
    }
}

pub(crate) fn uniform_init<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("init shape")
}

/// Output of a bidirectional pass over a batch of sequences.
#[derive(Debug, Clone)]
pub struct BiGruSteps {
    /// Per time step, `B×2H` rows of `[forward ‖ backward]` states.
    pub states: Vec<Var>,
    /// `B×2H`: final forward state (after the last step) beside the final
    /// backward state (after the first step).
    pub last: Var,
}

/// Runs a forward and a backward GRU over `steps` (each `B×in`), starting both
/// from zero state.
pub fn bigru_steps(g: &mut Graph, fwd: &GruVars, bwd: &GruVars, steps: &[Var]) -> Result<BiGruSteps> {
    let t_len = steps.len();
    if t_len == 0 {
        return Err(LdamError::Empty("bidirectional GRU over an empty sequence".into()));
    }
    let batch = g.value(steps[0]).dims2()?.0;
    let hf = g.value(fwd.u_z).shape()[0];
    let hb = g.value(bwd.u_z).shape()[0];

    let mut h = g.constant(Tensor::zeros(&[batch, hf]));
    let mut fwd_states = Vec::with_capacity(t_len);
    for &x in steps {
        h = g.gru_step(fwd, x, h)?;
        fwd_states.push(h);
    }
    let mut h = g.constant(Tensor::zeros(&[batch, hb]));
    let mut bwd_states = vec![h; t_len];
    for t in (0..t_len).rev() {
        h = g.gru_step(bwd, steps[t], h)?;
        bwd_states[t] = h;
    }
    let states =
        fwd_states.iter().zip(&bwd_states).map(|(&f, &b)| g.concat_cols(&[f, b])).collect::<Result<Vec<_>>>()?;
    let last = g.concat_cols(&[fwd_states[t_len - 1], bwd_states[0]])?;
    Ok(BiGruSteps { states, last })
}

/// Bidirectional GRU over one sequence `xs` (`T×in`).
///
/// Returns `(states, last)` with `states` of shape `T×2H` and `last` of length `2H`.
pub fn bigru_sequence(g: &mut Graph, fwd: &GruVars, bwd: &GruVars, xs: Var) -> Result<(Var, Var)> {
    let t_len = g.value(xs).dims2()?.0;
    let steps = (0..t_len).map(|t| g.slice_rows(xs, t, t + 1)).collect::<Result<Vec<_>>>()?;
    let out = bigru_steps(g, fwd, bwd, &steps)?;
    let states = g.concat_rows(&out.states)?;
    let width = g.value(out.last).len();
    let last = g.reshape(out.last, &[width])?;
    Ok((states, last))
}
