//! Frozen embedding sources for note tokens, indicator names and label names.
//!
//! Vectors come either from a tab-separated file or from a deterministic toy
//! embedder that hashes `(seed, key)` into a unit-norm Gaussian direction.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{LdamError, Result};
use crate::numerics::Tensor;

/// Default dimension for file-backed (transformer-sized) tables.
pub const FILE_DIM: usize = 768;
/// Default dimension for the toy embedder.
pub const TOY_DIM: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingKind {
    /// Missing keys fall back to the zero (UNK) vector.
    Token,
    /// Missing keys are an error.
    Name,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    kind: EmbeddingKind,
    keys: Vec<String>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, kind: EmbeddingKind) -> Result<Self> {
        if dim == 0 {
            return Err(LdamError::Embedding("dimension must be positive".into()));
        }
        Ok(Self { dim, kind, keys: Vec::new(), vectors: Vec::new(), index: HashMap::new() })
    }

    pub fn insert(&mut self, key: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(LdamError::Embedding(format!(
                "vector for {key:?} has {} components, table dim is {}",
                vector.len(),
                self.dim
            )));
        }
        if self.index.contains_key(key) {
            return Err(LdamError::Embedding(format!("duplicate key {key:?}")));
        }
        self.index.insert(key.to_string(), self.keys.len());
        self.keys.push(key.to_string());
        self.vectors.push(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.index.get(key).map(|&i| self.vectors[i].as_slice())
    }

    /// Token tables return the zero vector for unknown keys; name tables fail.
    pub fn lookup(&self, key: &str) -> Result<Vec<f64>> {
        match (self.get(key), self.kind) {
            (Some(v), _) => Ok(v.to_vec()),
            (None, EmbeddingKind::Token) => Ok(vec![0.0; self.dim]),
            (None, EmbeddingKind::Name) => Err(LdamError::Embedding(format!("no embedding for name {key:?}"))),
        }
    }

    /// Writes the table as `dim=<D>` followed by `<key>\t<v1>...\t<vD>` lines.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = format!("dim={}\n", self.dim);
        for (k, v) in self.keys.iter().zip(&self.vectors) {
            out.push_str(k);
            for x in v {
                out.push('\t');
                out.push_str(&format_f64(*x));
            }
            out.push('\n');
        }
        let mut f = fs::File::create(path).map_err(|e| LdamError::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| LdamError::io(path, e))
    }
}

/// Shortest decimal representation that parses back to the identical `f64`.
pub fn format_f64(x: f64) -> String {
    format!("{x:?}")
}

pub fn load_table(path: &Path, kind: EmbeddingKind) -> Result<EmbeddingTable> {
    let text = fs::read_to_string(path).map_err(|e| LdamError::io(path, e))?;
    parse_table(&text, path, kind)
}

pub fn parse_table(text: &str, path: &Path, kind: EmbeddingKind) -> Result<EmbeddingTable> {
    let err = |line: usize, msg: String| LdamError::Parse { path: PathBuf::from(path), line, msg };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| err(1, "missing `dim=<D>` header".into()))?;
    let dim: usize = header
        .trim()
        .strip_prefix("dim=")
        .and_then(|d| d.parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| err(1, format!("malformed header {header:?}")))?;
    let mut table = EmbeddingTable::new(dim, kind)?;
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let key = fields.next().unwrap_or_default();
        let values = fields
            .map(|f| f.trim().parse::<f64>().map_err(|_| err(lineno, format!("non-numeric field {f:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != dim {
            return Err(err(lineno, format!("ragged row: {} values under dim={dim}", values.len())));
        }
        table.insert(key, values).map_err(|e| err(lineno, e.to_string()))?;
    }
    Ok(table)
}

/// Deterministic unit-norm vector for `(seed, key)`.
pub fn toy_embed(seed: u64, key: &str, dim: usize) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(key.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Where embedding vectors come from. Both sources are read-only.
#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum EmbeddingProvider {
    File { tokens: EmbeddingTable, names: EmbeddingTable },
    Toy { seed: u64, dim: usize },
}

impl EmbeddingProvider {
    pub fn toy(seed: u64, dim: usize) -> Self {
        Self::Toy { seed, dim }
    }

    /// One TSV serves both token and name lookups.
    pub fn from_file(path: &Path) -> Result<Self> {
        let tokens = load_table(path, EmbeddingKind::Token)?;
        let names = load_table(path, EmbeddingKind::Name)?;
        Ok(Self::File { tokens, names })
    }

    /// Rebuilds a provider from a recorded `file:PATH` or `toy:SEED:DIM` string.
    pub fn from_source(s: &str) -> Result<Self> {
        if let Some(path) = s.strip_prefix("file:") {
            return Self::from_file(Path::new(path));
        }
        if let Some(rest) = s.strip_prefix("toy:") {
            let mut parts = rest.split(':');
            let seed = parts.next().and_then(|p| p.parse().ok());
            let dim = parts.next().map_or(Some(TOY_DIM), |p| p.parse().ok());
            if let (Some(seed), Some(dim), None) = (seed, dim, parts.next()) {
                return Ok(Self::toy(seed, dim));
            }
        }
        Err(LdamError::Config(format!("unrecognised embedding source {s:?}")))
    }

    pub fn from_tables(tokens: EmbeddingTable, names: EmbeddingTable) -> Result<Self> {
        if tokens.dim() != names.dim() {
            return Err(LdamError::Embedding(format!(
                "token dim {} differs from name dim {}",
                tokens.dim(),
                names.dim()
            )));
        }
        Ok(Self::File { tokens, names })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::File { tokens, .. } => tokens.dim(),
            Self::Toy { dim, .. } => *dim,
        }
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        match self {
            Self::File { tokens, .. } => tokens.lookup(token).expect("token lookups never fail"),
            Self::Toy { seed, dim } => toy_embed(*seed, token, *dim),
        }
    }

    pub fn name_vector(&self, name: &str) -> Result<Vec<f64>> {
        match self {
            Self::File { names, .. } => names.lookup(name),
            Self::Toy { seed, dim } => Ok(toy_embed(*seed, name, *dim)),
        }
    }
}

fn columns(dim: usize, cols: Vec<Vec<f64>>) -> Tensor {
    let n = cols.len();
    let mut data = vec![0.0; dim * n];
    for (j, c) in cols.iter().enumerate() {
        for (i, v) in c.iter().enumerate() {
            data[i * n + j] = *v;
        }
    }
    Tensor::new(&[dim, n], data).expect("column matrix")
}

/// `D×L` matrix whose column `l` embeds token `l`.
pub fn embed_note(provider: &EmbeddingProvider, tokens: &[String]) -> Result<Tensor> {
    if tokens.is_empty() {
        return Err(LdamError::Empty("note has no tokens".into()));
    }
    Ok(columns(provider.dim(), tokens.iter().map(|t| provider.token_vector(t)).collect()))
}

/// `D×N` matrix whose column `n` embeds the whole name string `n`.
pub fn embed_names(provider: &EmbeddingProvider, names: &[String]) -> Result<Tensor> {
    if names.is_empty() {
        return Err(LdamError::Empty("no names to embed".into()));
    }
    let cols = names.iter().map(|n| provider.name_vector(n)).collect::<Result<Vec<_>>>()?;
    Ok(columns(provider.dim(), cols))
}

pub const DEFAULT_STOP_WORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "has", "he", "in", "is", "it", "its", "of", "on",
    "or", "she", "that", "the", "to", "was", "were", "will", "with",
];

pub fn default_stop_words() -> HashSet<String> {
    DEFAULT_STOP_WORDS.iter().map(|s| s.to_string()).collect()
}

/// Lowercases, strips non-alphabetic characters and drops stop words.
pub fn normalize_text(raw: &str, stop_words: &HashSet<String>) -> Vec<String> {
    raw.split_whitespace()
        .map(|w| w.chars().filter(|c| c.is_alphabetic()).flat_map(char::to_lowercase).collect::<String>())
        .filter(|w| !w.is_empty() && !stop_words.contains(w))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_a_small_table() {
        let text = "dim=4\na\t1\t2\t3\t4\nb c\t0\t0\t0\t1\nd\t-1\t0.5\t1e-3\t2\n";
        let t = parse_table(text, Path::new("mem"), EmbeddingKind::Name).unwrap();
        assert_eq!((t.len(), t.dim()), (3, 4));
        assert_eq!(t.get("b c").unwrap(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_malformed_tables() {
        let p = Path::new("mem");
        let bad = ["dim4\na\t1\n", "dim=0\n", "dim=4\na\t1\t2\t3\n", "dim=2\na\t1\t2\na\t3\t4\n", "dim=2\na\t1\tx\n"];
        for text in bad {
            assert!(parse_table(text, p, EmbeddingKind::Token).is_err(), "{text:?}");
        }
        match parse_table("dim=4\na\t1\t2\t3\n", p, EmbeddingKind::Token) {
            Err(LdamError::Parse { line: 2, msg, .. }) => assert!(msg.contains("ragged")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_tokens_use_zero_vector_but_names_fail() {
        let mut tok = EmbeddingTable::new(2, EmbeddingKind::Token).unwrap();
        tok.insert("x", vec![1.0, 2.0]).unwrap();
        let mut names = EmbeddingTable::new(2, EmbeddingKind::Name).unwrap();
        names.insert("heart rate", vec![0.5, 0.5]).unwrap();
        let p = EmbeddingProvider::from_tables(tok, names).unwrap();
        let e = embed_note(&p, &strings(&["x", "nope", "x"])).unwrap();
        assert_eq!(e.data(), &[1.0, 0.0, 1.0, 2.0, 0.0, 2.0]);
        assert!(embed_names(&p, &strings(&["heart rate"])).is_ok());
        assert!(embed_names(&p, &strings(&["blood pressure"])).is_err());
        assert!(embed_note(&p, &[]).is_err());
    }

    #[test]
    fn toy_embedding_is_deterministic_unit_norm() {
        let a = toy_embed(7, "sepsis", 64);
        assert_eq!(a, toy_embed(7, "sepsis", 64));
        assert_ne!(a, toy_embed(8, "sepsis", 64));
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn repeated_token_gives_identical_columns() {
        let p = EmbeddingProvider::toy(1, 8);
        let e = embed_note(&p, &strings(&["t", "t"])).unwrap();
        assert_eq!(e.column(0), e.column(1));
    }

    #[test]
    fn normalization_rules() {
        let stop = default_stop_words();
        let toks = normalize_text("The patient WAS intubated; BP 120/80 and sedated.", &stop);
        assert_eq!(toks, strings(&["patient", "intubated", "bp", "sedated"]));
    }
}
