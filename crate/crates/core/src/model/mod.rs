//! The network, its parameters, and checkpoint files.

mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{Checkpoint, MAGIC, META_EMBEDDINGS, META_SCHEMA, VERSION};
pub use config::{format_key_values, parse_key_values, AttentionKind, Mode, ModelConfig};
pub use forward::{
    attention_weights, batch_forward, build_context, cross_attention_scores, fuse, fuse_predict, label_term, loss,
    project, sample_forward, self_attention_scores, text_branch, text_forward, timeseries_branch,
    timeseries_branch_batch, timeseries_forward, ForwardOutput, GraphContext, Ldam, LossTerms, NameEmbeddings,
    SampleVars,
};
pub use params::{param_names, ConvParams, Linear, ModelParams, ParamVars, N_PARAM_TENSORS};
