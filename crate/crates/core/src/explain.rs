//! Attention-based interpretability exports.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LdamError, Result};

/// Share of tokens marked important by default.
pub const DEFAULT_FRACTION: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HighlightedToken {
    pub token: String,
    pub beta: f64,
    pub important: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HighlightedNote {
    pub id: String,
    pub tokens: Vec<HighlightedToken>,
    pub threshold_fraction: f64,
}

impl HighlightedNote {
    /// Tokens joined by spaces with important ones wrapped in `**`.
    pub fn to_markdown(&self) -> String {
        self.tokens
            .iter()
            .map(|t| if t.important { format!("**{}**", t.token) } else { t.token.clone() })
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn important_positions(&self) -> Vec<usize> {
        self.tokens.iter().enumerate().filter(|(_, t)| t.important).map(|(i, _)| i).collect()
    }
}

/// Number of tokens marked for a note of `len` tokens.
pub fn top_count(len: usize, fraction: f64) -> usize {
    // Guards against products such as 0.7·10 landing just above an integer.
    ((fraction * len as f64 - 1e-9).ceil() as usize).clamp(1, len)
}

/// Positions sorted by descending weight; equal weights keep their order.
fn descending_order(weights: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));
    order
}

/// Marks the top `⌈fraction·L⌉` tokens by attention weight, earlier positions first on ties.
pub fn highlight(id: &str, tokens: &[String], beta: &[f64], fraction: f64) -> Result<HighlightedNote> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(LdamError::Config(format!("fraction {fraction} must lie in (0, 1]")));
    }
    if tokens.len() != beta.len() {
        return Err(LdamError::Dimension(format!("{} tokens but {} weights", tokens.len(), beta.len())));
    }
    if tokens.is_empty() {
        return Err(LdamError::Empty("note has no tokens".into()));
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(LdamError::Config("attention weights must be finite".into()));
    }
    let mut important = vec![false; tokens.len()];
    for &i in descending_order(beta).iter().take(top_count(tokens.len(), fraction)) {
        important[i] = true;
    }
    Ok(HighlightedNote {
        id: id.to_string(),
        tokens: tokens
            .iter()
            .zip(beta)
            .zip(important)
            .map(|((t, &b), important)| HighlightedToken { token: t.clone(), beta: b, important })
            .collect(),
        threshold_fraction: fraction,
    })
}

/// Like [`highlight`], but first drops tokens beyond the model's note limit,
/// since attention covers only the retained prefix.
pub fn highlight_truncated(
    id: &str,
    tokens: &[String],
    beta: &[f64],
    max_note_len: usize,
    fraction: f64,
) -> Result<HighlightedNote> {
    highlight(id, &tokens[..tokens.len().min(max_note_len)], beta, fraction)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelWeight {
    pub name: String,
    pub weight: f64,
}

/// Channels by descending attention weight, stable on ties.
pub fn channel_ranking(alpha: &[f64], indicator_names: &[String]) -> Result<Vec<ChannelWeight>> {
    if alpha.len() != indicator_names.len() {
        return Err(LdamError::Dimension(format!("{} weights for {} indicators", alpha.len(), indicator_names.len())));
    }
    Ok(descending_order(alpha)
        .into_iter()
        .map(|i| ChannelWeight { name: indicator_names[i].clone(), weight: alpha[i] })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelRanking {
    pub id: String,
    pub ranking: Vec<ChannelWeight>,
}

/// One JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| LdamError::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| LdamError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| LdamError::Parse { path: path.into(), line: i + 1, msg: e.to_string() })
        })
        .collect()
}

/// One row of an embedding dump.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRow {
    pub key: String,
    pub group: String,
    pub vector: Vec<f64>,
}

/// Writes `key,group,v1..vD`. Every row must have the same width; nothing is
/// written otherwise.
pub fn export_embeddings(rows: &[EmbeddingRow], path: &Path) -> Result<()> {
    let dim = rows.first().map_or(0, |r| r.vector.len());
    if let Some(bad) = rows.iter().find(|r| r.vector.len() != dim) {
        return Err(LdamError::Dimension(format!(
            "{} ({}) has {} components, expected {dim}",
            bad.key,
            bad.group,
            bad.vector.len()
        )));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["key".to_string(), "group".to_string()];
    header.extend((1..=dim).map(|i| format!("v{i}")));
    let csv_err = |e: csv::Error| LdamError::Config(format!("csv: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.key.clone(), r.group.clone()];
        rec.extend(r.vector.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| LdamError::Config(format!("csv: {e}")))?;
    let mut f = fs::File::create(path).map_err(|e| LdamError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| LdamError::io(path, e))
}

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| LdamError::Config(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| LdamError::Parse { path: path.into(), line, msg: e.to_string() })?;
        let vector = rec
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| LdamError::Parse { path: path.into(), line, msg: e.to_string() })?;
        out.push(EmbeddingRow { key: rec[0].to_string(), group: rec[1].to_string(), vector });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("w{i}")).collect()
    }

    #[test]
    fn full_fraction_marks_everything() {
        let h = highlight("a", &words(5), &[0.1, 0.3, 0.2, 0.3, 0.1], 1.0).unwrap();
        assert!(h.tokens.iter().all(|t| t.important));
    }

    #[test]
    fn top_half_by_weight() {
        let h = highlight("a", &words(4), &[0.4, 0.3, 0.2, 0.1], 0.5).unwrap();
        assert_eq!(h.important_positions(), vec![0, 1]);
        let h = highlight("a", &words(4), &[0.1, 0.2, 0.3, 0.4], 0.5).unwrap();
        assert_eq!(h.important_positions(), vec![2, 3]);
    }

    #[test]
    fn ties_prefer_earlier_positions() {
        let h = highlight("a", &words(5), &[0.2; 5], 0.5).unwrap();
        assert_eq!(h.important_positions(), vec![0, 1, 2]);
    }

    #[test]
    fn fraction_out_of_range() {
        assert!(highlight("a", &words(2), &[0.5, 0.5], 0.0).is_err());
        assert!(highlight("a", &words(2), &[0.5, 0.5], 1.5).is_err());
        assert!(highlight("a", &words(3), &[0.5, 0.5], 0.5).is_err());
    }

    #[test]
    fn top_count_avoids_float_overshoot() {
        assert_eq!(top_count(10, 0.7), 7);
        assert_eq!(top_count(3, 0.5), 2);
        assert_eq!(top_count(1, 0.01), 1);
    }

    #[test]
    fn markdown_bolds_important_tokens() {
        let h = highlight("a", &words(3), &[0.1, 0.8, 0.1], 0.3).unwrap();
        assert_eq!(h.to_markdown(), "w0 **w1** w2");
    }

    #[test]
    fn channel_ranking_examples() {
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let r = channel_ranking(&[0.1, 0.7, 0.2], &names).unwrap();
        let order: Vec<&str> = r.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(order, vec!["b", "c", "a"]);
        let single = channel_ranking(&[1.0], &names[..1]).unwrap();
        assert_eq!(single, vec![ChannelWeight { name: "a".into(), weight: 1.0 }]);
        assert!(channel_ranking(&[0.5, 0.5], &names).is_err());
    }

    #[test]
    fn mismatched_widths_write_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        let rows = vec![
            EmbeddingRow { key: "x".into(), group: "label".into(), vector: vec![1.0, 2.0] },
            EmbeddingRow { key: "y".into(), group: "note".into(), vector: vec![1.0] },
        ];
        assert!(export_embeddings(&rows, &path).is_err());
        assert!(!path.exists());
    }
}
