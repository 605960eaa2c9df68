use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{LdamError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Multimodal,
    TextOnly,
    TimeseriesOnly,
}

impl Mode {
    pub fn uses_text(self) -> bool {
        self != Mode::TimeseriesOnly
    }

    pub fn uses_timeseries(self) -> bool {
        self != Mode::TextOnly
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionKind {
    /// Features scored against label-name embeddings.
    Cross,
    /// Features scored against themselves.
    SelfAttention,
}

macro_rules! text_enum {
    ($ty:ty { $($variant:path => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $text),+ })
            }
        }
        impl FromStr for $ty {
            type Err = LdamError;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($variant),)+
                    other => Err(LdamError::Config(format!(
                        concat!("unknown ", stringify!($ty), " {:?}"), other
                    ))),
                }
            }
        }
    };
}

text_enum!(Mode { Mode::Multimodal => "multimodal", Mode::TextOnly => "text_only", Mode::TimeseriesOnly => "timeseries_only" });
text_enum!(AttentionKind { AttentionKind::Cross => "cross", AttentionKind::SelfAttention => "self" });

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// `D`, embedding width.
    pub embed_dim: usize,
    /// `F`, projected width; also the bidirectional state width.
    pub hidden_dim: usize,
    /// Notes longer than this are truncated.
    pub max_note_len: usize,
    pub n_indicators: usize,
    pub n_labels: usize,
    pub time_steps: usize,
    /// Convolution width over positions (N-gram size).
    pub ngram: usize,
    pub conv_channels: usize,
    pub mode: Mode,
    pub attention: AttentionKind,
    /// Weight of the label-discrimination term.
    pub lambda_label: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            hidden_dim: 32,
            max_note_len: 512,
            n_indicators: 17,
            n_labels: 25,
            time_steps: 48,
            ngram: 3,
            conv_channels: 25,
            mode: Mode::Multimodal,
            attention: AttentionKind::Cross,
            lambda_label: 1.0,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("max_note_len", self.max_note_len),
            ("n_indicators", self.n_indicators),
            ("n_labels", self.n_labels),
            ("time_steps", self.time_steps),
            ("ngram", self.ngram),
            ("conv_channels", self.conv_channels),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(LdamError::Config(format!("{k} must be positive")));
        }
        if !self.hidden_dim.is_multiple_of(2) {
            return Err(LdamError::Config(format!("hidden_dim {} must be even", self.hidden_dim)));
        }
        if self.ngram.is_multiple_of(2) {
            return Err(LdamError::Config(format!("ngram {} must be odd", self.ngram)));
        }
        if !self.lambda_label.is_finite() || self.lambda_label < 0.0 {
            return Err(LdamError::Config("lambda_label must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Input channels of the text attention convolution.
    pub fn text_conv_inputs(&self) -> usize {
        match self.attention {
            AttentionKind::Cross => self.n_labels,
            AttentionKind::SelfAttention => self.max_note_len,
        }
    }

    /// Input channels of the time-series attention convolution.
    pub fn ts_conv_inputs(&self) -> usize {
        match self.attention {
            AttentionKind::Cross => self.n_labels,
            AttentionKind::SelfAttention => self.n_indicators,
        }
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        [
            ("embed_dim", self.embed_dim.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("max_note_len", self.max_note_len.to_string()),
            ("n_indicators", self.n_indicators.to_string()),
            ("n_labels", self.n_labels.to_string()),
            ("time_steps", self.time_steps.to_string()),
            ("ngram", self.ngram.to_string()),
            ("conv_channels", self.conv_channels.to_string()),
            ("mode", self.mode.to_string()),
            ("attention", self.attention.to_string()),
            ("lambda_label", format!("{:?}", self.lambda_label)),
            ("init_seed", self.init_seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Overrides fields from `key=value` pairs; unknown keys are returned.
    pub fn apply<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Vec<&'a str>> {
        fn num<T: FromStr>(k: &str, v: &str) -> Result<T> {
            v.trim().parse().map_err(|_| LdamError::Config(format!("bad value {v:?} for {k}")))
        }
        let mut unknown = Vec::new();
        for (k, v) in pairs {
            match k {
                "embed_dim" => self.embed_dim = num(k, v)?,
                "hidden_dim" => self.hidden_dim = num(k, v)?,
                "max_note_len" => self.max_note_len = num(k, v)?,
                "n_indicators" => self.n_indicators = num(k, v)?,
                "n_labels" => self.n_labels = num(k, v)?,
                "time_steps" => self.time_steps = num(k, v)?,
                "ngram" => self.ngram = num(k, v)?,
                "conv_channels" => self.conv_channels = num(k, v)?,
                "mode" => self.mode = v.trim().parse()?,
                "attention" => self.attention = v.trim().parse()?,
                "lambda_label" => self.lambda_label = num(k, v)?,
                "init_seed" => self.init_seed = num(k, v)?,
                other => unknown.push(other),
            }
        }
        Ok(unknown)
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Self::default();
        let unknown = cfg.apply(map.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        if let Some(k) = unknown.first() {
            return Err(LdamError::Config(format!("unknown model key {k:?}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| LdamError::Config(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
        if out.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(LdamError::Config(format!("line {}: duplicate key {:?}", i + 1, k.trim())));
        }
    }
    Ok(out)
}

pub fn format_key_values(map: &BTreeMap<String, String>) -> String {
    map.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}
