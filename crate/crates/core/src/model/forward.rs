use super::config::{AttentionKind, ModelConfig};
use super::params::{ConvParams, Linear, ModelParams, ParamVars};
use crate::data::{EhrSample, TaskSchema};
use crate::embeddings::{embed_names, embed_note, EmbeddingProvider};
use crate::error::{LdamError, Result};
use crate::numerics::{bigru_steps, Graph, Tensor, Var};

/// Label-name and indicator-name embeddings, `D×N_Y` and `D×N_S`.
#[derive(Clone, Debug, PartialEq)]
pub struct NameEmbeddings {
    pub labels: Tensor,
    pub indicators: Tensor,
}

impl NameEmbeddings {
    pub fn from_schema(provider: &EmbeddingProvider, schema: &TaskSchema) -> Result<Self> {
        Ok(Self {
            labels: embed_names(provider, &schema.label_names)?,
            indicators: embed_names(provider, &schema.indicator_names)?,
        })
    }

    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let want_y = [cfg.embed_dim, cfg.n_labels];
        let want_s = [cfg.embed_dim, cfg.n_indicators];
        if self.labels.shape() != want_y || self.indicators.shape() != want_s {
            return Err(LdamError::Dimension(format!(
                "name embeddings {:?}/{:?}, model expects {want_y:?}/{want_s:?}",
                self.labels.shape(),
                self.indicators.shape()
            )));
        }
        Ok(())
    }
}

/// Result of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub y_hat: Vec<f64>,
    /// Attention over note tokens, present when the text branch runs.
    pub beta: Option<Vec<f64>>,
    /// Attention over indicator channels, present when the series branch runs.
    pub alpha: Option<Vec<f64>>,
    /// Zero when the text branch is off.
    pub z_m: Vec<f64>,
    /// Zero when the series branch is off.
    pub z_s: Vec<f64>,
}

/// Per-batch handles shared by every sample on the tape.
#[derive(Clone, Copy, Debug)]
pub struct GraphContext {
    pub params: ParamVars,
    /// `f1(E_Y)`, `F×N_Y`.
    pub label_proj: Var,
    /// `f1(E_S)`, `F×N_S`.
    pub indicator_proj: Var,
}

/// Handles produced for one sample.
#[derive(Clone, Copy, Debug)]
pub struct SampleVars {
    pub y_hat: Var,
    pub z_m: Var,
    pub z_s: Var,
    pub beta: Option<Var>,
    pub alpha: Option<Var>,
}

/// `f1` applied column-wise to a `D×n` matrix.
pub fn project(g: &mut Graph, p: &ParamVars, x: Var) -> Result<Var> {
    let wx = g.matmul(p.f1_w, x)?;
    g.add_col_bias(wx, p.f1_b)
}

pub fn build_context(
    g: &mut Graph,
    params: &ModelParams,
    names: &NameEmbeddings,
    trainable: bool,
) -> Result<GraphContext> {
    let pv = params.register(g, trainable);
    let e_y = g.constant(names.labels.clone());
    let e_s = g.constant(names.indicators.clone());
    Ok(GraphContext { params: pv, label_proj: project(g, &pv, e_y)?, indicator_proj: project(g, &pv, e_s)? })
}

/// Turns a `rows×n` score matrix into convex weights over the `n` columns.
fn attend(g: &mut Graph, scores_t: Var, conv_w: Var, conv_b: Var) -> Result<Var> {
    let c_in = g.value(conv_w).shape()[1];
    let padded = g.pad_rows(scores_t, c_in)?;
    let conv = g.conv1d_same(padded, conv_w, conv_b)?;
    let act = g.relu(conv);
    let pooled = g.maxpool_channels(act)?;
    Ok(g.softmax(pooled))
}

/// Attention over the `n` columns of `feat_proj` (`F×n`) scored against
/// `key_proj` (`F×m`).
pub fn attention_weights(g: &mut Graph, feat_proj: Var, key_proj: Var, conv_w: Var, conv_b: Var) -> Result<Var> {
    let f = g.value(feat_proj).dims2()?.0;
    let (kf, _) = g.value(key_proj).dims2()?;
    if kf != f {
        return Err(LdamError::Dimension(format!("projected widths {f} and {kf} differ")));
    }
    let key_t = g.transpose(key_proj)?;
    let dots = g.matmul(key_t, feat_proj)?;
    let scaled = g.scale(dots, 1.0 / (f as f64).sqrt());
    attend(g, scaled, conv_w, conv_b)
}

/// Text branch: returns `(z_m` as `F×1`, `beta)`.
pub fn text_branch(g: &mut Graph, cfg: &ModelConfig, ctx: &GraphContext, note: Var) -> Result<(Var, Var)> {
    let p = &ctx.params;
    let len = g.value(note).dims2()?.1;
    let note_proj = project(g, p, note)?;
    let key = match cfg.attention {
        AttentionKind::Cross => ctx.label_proj,
        AttentionKind::SelfAttention => note_proj,
    };
    let beta = attention_weights(g, note_proj, key, p.text_conv_w, p.text_conv_b)?;
    let beta_col = g.reshape(beta, &[len, 1])?;
    let pooled = g.matmul(note, beta_col)?;
    Ok((project(g, p, pooled)?, beta))
}

/// Keeps the first `max` columns of a `rows×n` matrix.
fn truncate_columns(t: &Tensor, max: usize) -> Result<Tensor> {
    let (rows, n) = t.dims2()?;
    if n <= max {
        return Ok(t.clone());
    }
    Tensor::new(&[rows, max], (0..rows).flat_map(|r| t.row(r)[..max].to_vec()).collect())
}

/// Series branch: returns `(z_s` as `F×1`, `alpha)`.
pub fn timeseries_branch(g: &mut Graph, cfg: &ModelConfig, ctx: &GraphContext, series: Var) -> Result<(Var, Var)> {
    let (mut z, alpha) = timeseries_branch_batch(g, cfg, ctx, &[series])?;
    Ok((z.pop().expect("one sample"), alpha))
}

/// Series branch over several samples at once. The recurrent encoders see
/// every sample's channels as one stacked batch; `alpha` is shared.
pub fn timeseries_branch_batch(
    g: &mut Graph,
    cfg: &ModelConfig,
    ctx: &GraphContext,
    series: &[Var],
) -> Result<(Vec<Var>, Var)> {
    let p = &ctx.params;
    let first = *series.first().ok_or_else(|| LdamError::Empty("no series in batch".into()))?;
    let (n_s, t_len) = g.value(first).dims2()?;
    for &s in series {
        if g.value(s).shape() != [n_s, t_len] {
            return Err(LdamError::Dimension(format!("series {:?} in a batch of {n_s}x{t_len}", g.value(s).shape())));
        }
    }
    let stacked = if series.len() == 1 { first } else { g.concat_rows(series)? };
    let steps = (0..t_len).map(|t| g.slice_cols(stacked, t, t + 1)).collect::<Result<Vec<_>>>()?;
    let local = bigru_steps(g, &p.gru_channel_fwd, &p.gru_channel_bwd, &steps)?;
    let integrated = bigru_steps(g, &p.gru_integrate_fwd, &p.gru_integrate_bwd, &local.states)?;
    let key = match cfg.attention {
        AttentionKind::Cross => ctx.label_proj,
        AttentionKind::SelfAttention => ctx.indicator_proj,
    };
    let alpha = attention_weights(g, ctx.indicator_proj, key, p.ts_conv_w, p.ts_conv_b)?;
    let alpha_col = g.reshape(alpha, &[n_s, 1])?;
    let mut out = Vec::with_capacity(series.len());
    for b in 0..series.len() {
        let h =
            if series.len() == 1 { integrated.last } else { g.slice_rows(integrated.last, b * n_s, (b + 1) * n_s)? };
        let h_t = g.transpose(h)?;
        out.push(g.matmul(h_t, alpha_col)?);
    }
    Ok((out, alpha))
}

/// `sigmoid(f7(f6(z_m ⊕ z_s)))` for `F×1` inputs.
pub fn fuse(g: &mut Graph, p: &ParamVars, z_m: Var, z_s: Var) -> Result<Var> {
    let cat = g.concat_rows(&[z_m, z_s])?;
    let h = g.matmul(p.f6_w, cat)?;
    let h = g.add_col_bias(h, p.f6_b)?;
    let z = g.matmul(p.f7_w, h)?;
    let z = g.add_col_bias(z, p.f7_b)?;
    let n = g.value(z).len();
    let z = g.reshape(z, &[n])?;
    Ok(g.sigmoid(z))
}

/// Builds one sample's forward pass. Inputs for an inactive branch are ignored.
pub fn sample_forward(
    g: &mut Graph,
    cfg: &ModelConfig,
    ctx: &GraphContext,
    note: Option<Var>,
    series: Option<Var>,
) -> Result<SampleVars> {
    let series: Vec<Var> = series.into_iter().collect();
    let mut out = batch_forward(g, cfg, ctx, &[note], &series)?;
    Ok(out.pop().expect("one sample"))
}

/// Forward pass for a batch. `notes` has one entry per sample; `series` must
/// too when the series branch is on and is ignored otherwise.
pub fn batch_forward(
    g: &mut Graph,
    cfg: &ModelConfig,
    ctx: &GraphContext,
    notes: &[Option<Var>],
    series: &[Var],
) -> Result<Vec<SampleVars>> {
    let n = notes.len();
    let zero = |g: &mut Graph| g.constant(Tensor::zeros(&[cfg.hidden_dim, 1]));
    let (z_s, alpha) = if cfg.mode.uses_timeseries() {
        if series.len() != n {
            return Err(LdamError::Config(format!("mode {} needs a series for every sample", cfg.mode)));
        }
        let (z, a) = timeseries_branch_batch(g, cfg, ctx, series)?;
        (z, Some(a))
    } else {
        let z = zero(g);
        (vec![z; n], None)
    };
    let mut out = Vec::with_capacity(n);
    for (note, z_s) in notes.iter().zip(z_s) {
        let (z_m, beta) = if cfg.mode.uses_text() {
            let note = note.ok_or_else(|| LdamError::Config(format!("mode {} needs a note", cfg.mode)))?;
            let (z, b) = text_branch(g, cfg, ctx, note)?;
            (z, Some(b))
        } else {
            (zero(g), None)
        };
        let y_hat = fuse(g, &ctx.params, z_m, z_s)?;
        out.push(SampleVars { y_hat, z_m, z_s, beta, alpha });
    }
    Ok(out)
}

/// Label-discrimination term: mean cross-entropy of `softmax(f7(f1(E_Y_j)))` against class `j`.
pub fn label_term(g: &mut Graph, ctx: &GraphContext) -> Result<Var> {
    let p = &ctx.params;
    let logits = g.matmul(p.f7_w, ctx.label_proj)?;
    let logits = g.add_col_bias(logits, p.f7_b)?;
    g.softmax_ce_columns(logits)
}

/// The two loss terms and their weighted total.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub term1: f64,
    pub term2: f64,
    pub total: f64,
}

fn const_linear(g: &mut Graph, l: &Linear) -> (Var, Var) {
    (g.constant(l.weight.clone()), g.constant(l.bias.clone()))
}

fn const_conv(g: &mut Graph, c: &ConvParams) -> (Var, Var) {
    (g.constant(c.kernels.clone()), g.constant(c.bias.clone()))
}

fn const_project(g: &mut Graph, w: Var, b: Var, x: &Tensor) -> Result<Var> {
    let x = g.constant(x.clone());
    let wx = g.matmul(w, x)?;
    g.add_col_bias(wx, b)
}

fn check_nonempty(x: &Tensor, what: &str) -> Result<()> {
    let (_, n) = x.dims2()?;
    if n == 0 {
        return Err(LdamError::Empty(format!("{what} has no columns")));
    }
    Ok(())
}

/// Cross-attention weights of the columns of `e_feat` (`D×n`) against `e_lab` (`D×N_Y`).
pub fn cross_attention_scores(e_feat: &Tensor, e_lab: &Tensor, conv: &ConvParams, f1: &Linear) -> Result<Vec<f64>> {
    check_nonempty(e_feat, "feature matrix")?;
    let mut g = Graph::new();
    let (w, b) = const_linear(&mut g, f1);
    let (cw, cb) = const_conv(&mut g, conv);
    let feat = const_project(&mut g, w, b, e_feat)?;
    let lab = const_project(&mut g, w, b, e_lab)?;
    let out = attention_weights(&mut g, feat, lab, cw, cb)?;
    Ok(g.value(out).data().to_vec())
}

/// Self-attention weights of the columns of `e_feat`; the score matrix is
/// zero-padded to the kernel's input-channel count.
pub fn self_attention_scores(e_feat: &Tensor, conv: &ConvParams, f1: &Linear) -> Result<Vec<f64>> {
    check_nonempty(e_feat, "feature matrix")?;
    let mut g = Graph::new();
    let (w, b) = const_linear(&mut g, f1);
    let (cw, cb) = const_conv(&mut g, conv);
    let feat = const_project(&mut g, w, b, e_feat)?;
    let out = attention_weights(&mut g, feat, feat, cw, cb)?;
    Ok(g.value(out).data().to_vec())
}

fn const_context(g: &mut Graph, params: &ModelParams, names: &NameEmbeddings) -> Result<GraphContext> {
    build_context(g, params, names, false)
}

/// Placeholder names used when only one side of the name table matters.
fn names_with(labels: &Tensor, indicators: Option<&Tensor>) -> NameEmbeddings {
    NameEmbeddings { labels: labels.clone(), indicators: indicators.cloned().unwrap_or_else(|| labels.clone()) }
}

/// Text branch on plain tensors: `(z_m, beta)`.
pub fn text_forward(
    e_m: &Tensor,
    e_y: &Tensor,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_nonempty(e_m, "note")?;
    let mut g = Graph::new();
    let ctx = const_context(&mut g, params, &names_with(e_y, None))?;
    let note = g.constant(e_m.clone());
    let (z, beta) = text_branch(&mut g, cfg, &ctx, note)?;
    Ok((g.value(z).data().to_vec(), g.value(beta).data().to_vec()))
}

/// Series branch on plain tensors: `(z_s, alpha)`.
pub fn timeseries_forward(
    s: &Tensor,
    e_s: &Tensor,
    e_y: &Tensor,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n_s, t_len) = s.dims2()?;
    if n_s == 0 || t_len == 0 {
        return Err(LdamError::Empty("series needs at least one channel and one step".into()));
    }
    if e_s.dims2()?.1 != n_s {
        return Err(LdamError::Dimension(format!("{n_s} channels but {} indicator embeddings", e_s.dims2()?.1)));
    }
    let mut g = Graph::new();
    let ctx = const_context(&mut g, params, &names_with(e_y, Some(e_s)))?;
    let series = g.constant(s.clone());
    let (z, alpha) = timeseries_branch(&mut g, cfg, &ctx, series)?;
    Ok((g.value(z).data().to_vec(), g.value(alpha).data().to_vec()))
}

/// Fusion head on plain vectors; a missing branch is zero-filled.
pub fn fuse_predict(z_m: Option<&[f64]>, z_s: Option<&[f64]>, params: &ModelParams) -> Result<Vec<f64>> {
    let f = params.f7.weight.shape()[1];
    let col = |z: Option<&[f64]>| -> Result<Tensor> {
        match z {
            Some(v) if v.len() != f => {
                Err(LdamError::Dimension(format!("branch vector of length {}, expected {f}", v.len())))
            }
            Some(v) => Tensor::new(&[f, 1], v.to_vec()),
            None => Ok(Tensor::zeros(&[f, 1])),
        }
    };
    let mut g = Graph::new();
    let pv = params.register(&mut g, false);
    let zm = g.constant(col(z_m)?);
    let zs = g.constant(col(z_s)?);
    let y = fuse(&mut g, &pv, zm, zs)?;
    Ok(g.value(y).data().to_vec())
}

/// Evaluates both loss terms for one prediction.
pub fn loss(y_hat: &[f64], y: &[u8], e_y: &Tensor, params: &ModelParams, lambda_label: f64) -> Result<LossTerms> {
    let mut g = Graph::new();
    let pv = params.register(&mut g, false);
    let e = g.constant(e_y.clone());
    let label_proj = project(&mut g, &pv, e)?;
    let ctx = GraphContext { params: pv, label_proj, indicator_proj: label_proj };
    let yh = g.constant(Tensor::vector(y_hat.to_vec()));
    let targets: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let t1 = g.bce_mean(yh, &targets)?;
    let t2 = label_term(&mut g, &ctx)?;
    let (term1, term2) = (g.value(t1).data()[0], g.value(t2).data()[0]);
    Ok(LossTerms { term1, term2, total: term1 + lambda_label * term2 })
}

/// The network: configuration plus weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Ldam {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Ldam {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = ModelParams::init(&config)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let fresh = ModelParams::init(&config)?;
        for ((a, b), name) in fresh.tensors().iter().zip(params.tensors()).zip(super::params::param_names()) {
            if a.shape() != b.shape() {
                return Err(LdamError::Dimension(format!("{name}: shape {:?} does not fit the config", b.shape())));
            }
        }
        Ok(Self { config, params })
    }

    /// Checks a sample against the configured shapes.
    pub fn check_sample(&self, sample: &EhrSample) -> Result<()> {
        let want = [self.config.n_indicators, self.config.time_steps];
        if sample.timeseries.shape() != want {
            return Err(LdamError::Dimension(format!(
                "sample {}: series {:?}, model expects {want:?}",
                sample.id,
                sample.timeseries.shape()
            )));
        }
        if sample.labels.len() != self.config.n_labels {
            return Err(LdamError::Dimension(format!(
                "sample {}: {} labels, model expects {}",
                sample.id,
                sample.labels.len(),
                self.config.n_labels
            )));
        }
        Ok(())
    }

    /// `f1` applied to each column of a `D×n` matrix.
    pub fn project_names(&self, e: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let pv = self.params.register(&mut g, false);
        let x = g.constant(e.clone());
        let out = project(&mut g, &pv, x)?;
        Ok(g.value(out).clone())
    }

    /// Note embedding truncated to `max_note_len` tokens.
    pub fn embed_note(&self, provider: &EmbeddingProvider, tokens: &[String]) -> Result<Tensor> {
        if provider.dim() != self.config.embed_dim {
            return Err(LdamError::Dimension(format!(
                "embedding dim {} differs from model dim {}",
                provider.dim(),
                self.config.embed_dim
            )));
        }
        embed_note(provider, &tokens[..tokens.len().min(self.config.max_note_len)])
    }

    /// Forward pass on prepared inputs. `note` is `D×L`, `series` is `N_S×T`.
    pub fn forward(&self, note: Option<&Tensor>, series: &Tensor, names: &NameEmbeddings) -> Result<ForwardOutput> {
        let mut out = self.forward_batch(&[(note, series)], names)?;
        Ok(out.pop().expect("one sample"))
    }

    /// Forward passes for several samples on one tape.
    pub fn forward_batch(
        &self,
        inputs: &[(Option<&Tensor>, &Tensor)],
        names: &NameEmbeddings,
    ) -> Result<Vec<ForwardOutput>> {
        names.check(&self.config)?;
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let ctx = build_context(&mut g, &self.params, names, false)?;
        let mut notes = Vec::with_capacity(inputs.len());
        for (note, _) in inputs {
            notes.push(match note {
                Some(n) => Some(g.constant(truncate_columns(n, self.config.max_note_len)?)),
                None => None,
            });
        }
        let series: Vec<Var> = inputs.iter().map(|(_, s)| g.constant((*s).clone())).collect();
        let svs = batch_forward(&mut g, &self.config, &ctx, &notes, &series)?;
        let get = |v: Var| g.value(v).data().to_vec();
        Ok(svs
            .into_iter()
            .map(|sv| ForwardOutput {
                y_hat: get(sv.y_hat),
                beta: sv.beta.map(get),
                alpha: sv.alpha.map(get),
                z_m: get(sv.z_m),
                z_s: get(sv.z_s),
            })
            .collect())
    }

    pub fn forward_sample(
        &self,
        sample: &EhrSample,
        provider: &EmbeddingProvider,
        names: &NameEmbeddings,
    ) -> Result<ForwardOutput> {
        self.check_sample(sample)?;
        let note =
            if self.config.mode.uses_text() { Some(self.embed_note(provider, &sample.note_tokens)?) } else { None };
        self.forward(note.as_ref(), &sample.timeseries, names)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Mode;

    fn tiny() -> ModelConfig {
        ModelConfig {
            embed_dim: 8,
            hidden_dim: 4,
            max_note_len: 6,
            n_indicators: 2,
            n_labels: 3,
            time_steps: 3,
            ngram: 3,
            conv_channels: 2,
            ..Default::default()
        }
    }

    fn names(cfg: &ModelConfig) -> NameEmbeddings {
        let p = EmbeddingProvider::toy(5, cfg.embed_dim);
        NameEmbeddings {
            labels: embed_names(&p, &["a".into(), "b".into(), "c".into()]).unwrap(),
            indicators: embed_names(&p, &["x".into(), "y".into()]).unwrap(),
        }
    }

    fn identity_linear(n: usize) -> Linear {
        Linear { weight: Tensor::identity(n), bias: Tensor::zeros(&[n]) }
    }

    #[test]
    fn single_feature_gets_full_weight() {
        let conv = ConvParams { kernels: Tensor::filled(&[1, 2, 3], 0.3), bias: Tensor::zeros(&[1]) };
        let f1 = identity_linear(2);
        let e = Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let lab = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(cross_attention_scores(&e, &lab, &conv, &f1).unwrap(), vec![1.0]);
    }

    #[test]
    fn orthogonal_features_get_uniform_weight() {
        let conv = ConvParams { kernels: Tensor::filled(&[2, 1, 3], 0.7), bias: Tensor::zeros(&[2]) };
        let f1 = identity_linear(2);
        let e = Tensor::from_rows(&[vec![0.0, 0.0, 0.0], vec![1.0, -3.0, 2.0]]).unwrap();
        let lab = Tensor::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let w = cross_attention_scores(&e, &lab, &conv, &f1).unwrap();
        for v in w {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_features_split_self_attention_evenly() {
        let conv = ConvParams { kernels: Tensor::filled(&[1, 4, 3], 0.2), bias: Tensor::zeros(&[1]) };
        let f1 = identity_linear(2);
        let e = Tensor::from_rows(&[vec![1.0, 1.0], vec![0.5, 0.5]]).unwrap();
        let w = self_attention_scores(&e, &conv, &f1).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_predict_one_half() {
        let cfg = tiny();
        let mut p = ModelParams::init(&cfg).unwrap();
        for t in p.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let y = fuse_predict(Some(&[1.0, 2.0, 3.0, 4.0]), None, &p).unwrap();
        assert_eq!(y, vec![0.5; 3]);
    }

    #[test]
    fn half_predictions_cost_ln2() {
        let cfg = tiny();
        let p = ModelParams::init(&cfg).unwrap();
        let n = names(&cfg);
        let l = loss(&[0.5; 3], &[1, 0, 1], &n.labels, &p, 1.0).unwrap();
        assert!((l.term1 - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(l.total, l.term1 + l.term2);
    }

    #[test]
    fn forward_outputs_are_convex_and_deterministic() {
        let cfg = tiny();
        let model = Ldam::new(cfg.clone()).unwrap();
        let n = names(&cfg);
        let provider = EmbeddingProvider::toy(5, 8);
        let note = embed_note(&provider, &["fever".into(), "cough".into(), "fever".into(), "rest".into()]).unwrap();
        let s = Tensor::new(&[2, 3], vec![0.1, -0.4, 0.9, 1.2, 0.0, -0.7]).unwrap();
        let a = model.forward(Some(&note), &s, &n).unwrap();
        let b = model.forward(Some(&note), &s, &n).unwrap();
        assert_eq!(a, b);
        let beta_sum: f64 = a.beta.as_ref().unwrap().iter().sum();
        let alpha_sum: f64 = a.alpha.as_ref().unwrap().iter().sum();
        assert!((beta_sum - 1.0).abs() < 1e-12 && (alpha_sum - 1.0).abs() < 1e-12);
        assert!(a.y_hat.iter().all(|&y| y > 0.0 && y < 1.0));

        let text = Ldam { config: ModelConfig { mode: Mode::TextOnly, ..cfg }, params: model.params.clone() };
        let t = text.forward(Some(&note), &s, &n).unwrap();
        assert_eq!(t.z_m, a.z_m);
        assert_ne!(t.y_hat, a.y_hat);
        assert!(t.alpha.is_none() && t.z_s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn self_attention_pads_to_max_note_len() {
        let cfg = ModelConfig { attention: AttentionKind::SelfAttention, ..tiny() };
        let model = Ldam::new(cfg.clone()).unwrap();
        assert_eq!(model.params.text_conv.kernels.shape(), &[2, 6, 3]);
        let provider = EmbeddingProvider::toy(5, 8);
        let note = embed_note(&provider, &["a".into(), "b".into()]).unwrap();
        let out = model.forward(Some(&note), &Tensor::zeros(&[2, 3]), &names(&cfg)).unwrap();
        assert_eq!(out.beta.unwrap().len(), 2);
    }

    #[test]
    fn mismatched_sample_is_rejected() {
        let cfg = tiny();
        let model = Ldam::new(cfg).unwrap();
        let sample = EhrSample {
            id: "x".into(),
            note_tokens: vec!["a".into()],
            timeseries: Tensor::zeros(&[2, 4]),
            labels: vec![0, 1, 0],
        };
        assert!(model.check_sample(&sample).is_err());
    }
}
