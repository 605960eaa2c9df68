//! Samples, task schemas, JSON-Lines datasets and splitting.

mod synth;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LdamError, Result};
use crate::numerics::Tensor;

pub use synth::{generate_synthetic, SynthSpec, DEFAULT_FILLER, DEFAULT_TRIGGERS};

/// The 17 physiological indicators of the desk schema.
pub const INDICATOR_NAMES: [&str; 17] = [
    "Capillary refill rate",
    "Diastolic blood pressure",
    "Fraction inspired oxygen",
    "Glasgow coma scale eye opening",
    "Glasgow coma scale motor response",
    "Glasgow coma scale total",
    "Glasgow coma scale verbal response",
    "Glucose",
    "Heart rate",
    "Height",
    "Mean blood pressure",
    "Oxygen saturation",
    "Respiratory rate",
    "Systolic blood pressure",
    "Temperature",
    "Weight",
    "pH",
];

/// The 25 risk labels of the desk schema: 13 acute, 8 chronic, 4 mixed.
pub const LABEL_NAMES: [&str; 25] = [
    "Acute and unspecified renal failure",
    "Acute cerebrovascular disease",
    "Acute myocardial infarction",
    "Complications of surgical procedures or medical care",
    "Fluid and electrolyte disorders",
    "Gastrointestinal hemorrhage",
    "Other lower respiratory disease",
    "Other upper respiratory disease",
    "Pleurisy; pneumothorax; pulmonary collapse",
    "Pneumonia (except that caused by tuberculosis or sexually transmitted disease)",
    "Respiratory failure; insufficiency; arrest (adult)",
    "Septicemia (except in labor)",
    "Shock",
    "Chronic kidney disease",
    "Chronic obstructive pulmonary disease and bronchiectasis",
    "Coronary atherosclerosis and other heart disease",
    "Diabetes mellitus with complications",
    "Diabetes mellitus without complication",
    "Disorders of lipid metabolism",
    "Essential hypertension",
    "Hypertension with complications and secondary hypertension",
    "Cardiac dysrhythmias",
    "Conduction disorders",
    "Congestive heart failure; nonhypertensive",
    "Other liver diseases",
];

pub const DEFAULT_T: usize = 48;

/// One patient record.
#[derive(Clone, Debug, PartialEq)]
pub struct EhrSample {
    pub id: String,
    pub note_tokens: Vec<String>,
    /// `N_S×T`.
    pub timeseries: Tensor,
    pub labels: Vec<u8>,
}

impl EhrSample {
    pub fn label_vector(&self) -> Vec<f64> {
        self.labels.iter().map(|&y| y as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSchema {
    pub indicator_names: Vec<String>,
    pub label_names: Vec<String>,
    #[serde(rename = "T")]
    pub t: usize,
    /// Value in `ts` that marks a missing measurement (`null` is always missing).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missing_value: Option<f64>,
    /// Per-indicator imputation constants; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_values: Option<Vec<f64>>,
}

impl Default for TaskSchema {
    fn default() -> Self {
        Self {
            indicator_names: INDICATOR_NAMES.iter().map(|s| s.to_string()).collect(),
            label_names: LABEL_NAMES.iter().map(|s| s.to_string()).collect(),
            t: DEFAULT_T,
            missing_value: None,
            reference_values: None,
        }
    }
}

impl TaskSchema {
    pub fn n_indicators(&self) -> usize {
        self.indicator_names.len()
    }

    pub fn n_labels(&self) -> usize {
        self.label_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (what, names) in [("indicator", &self.indicator_names), ("label", &self.label_names)] {
            if names.is_empty() {
                return Err(LdamError::Config(format!("schema has no {what} names")));
            }
            let mut seen = std::collections::HashSet::new();
            for n in names {
                if n.trim().is_empty() {
                    return Err(LdamError::Config(format!("empty {what} name")));
                }
                if !seen.insert(n) {
                    return Err(LdamError::Config(format!("duplicate {what} name {n:?}")));
                }
            }
        }
        if self.t == 0 {
            return Err(LdamError::Config("schema T must be positive".into()));
        }
        if let Some(r) = &self.reference_values {
            if r.len() != self.n_indicators() {
                return Err(LdamError::Config("reference_values length differs from indicator count".into()));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| LdamError::io(path, e))?;
        let schema: Self = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(path, text).map_err(|e| LdamError::io(path, e))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    note: Vec<String>,
    ts: Vec<Vec<Option<f64>>>,
    y: Vec<i64>,
}

fn record_to_sample(rec: Record, schema: &TaskSchema, line: usize) -> Result<EhrSample> {
    let err = |msg: String| LdamError::Dataset { line, msg };
    if rec.note.is_empty() {
        return Err(err("note has no tokens".into()));
    }
    let (n_s, t) = (schema.n_indicators(), schema.t);
    if rec.ts.len() != n_s {
        return Err(err(format!("ts has {} rows, schema expects {n_s}", rec.ts.len())));
    }
    let mut data = Vec::with_capacity(n_s * t);
    for (i, row) in rec.ts.iter().enumerate() {
        if row.len() != t {
            return Err(err(format!("ts row {i} has {} steps, schema expects {t}", row.len())));
        }
        let reference = schema.reference_values.as_ref().map_or(0.0, |r| r[i]);
        for v in row {
            let v = match v {
                Some(x) if Some(*x) != schema.missing_value => *x,
                _ => reference,
            };
            if !v.is_finite() {
                return Err(err(format!("non-finite value in ts row {i}")));
            }
            data.push(v);
        }
    }
    if rec.y.len() != schema.n_labels() {
        return Err(err(format!("y has {} entries, schema expects {}", rec.y.len(), schema.n_labels())));
    }
    let labels = rec
        .y
        .iter()
        .map(|&v| match v {
            0 | 1 => Ok(v as u8),
            other => Err(err(format!("non-binary label {other}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EhrSample { id: rec.id, note_tokens: rec.note, timeseries: Tensor::new(&[n_s, t], data)?, labels })
}

/// Parses a JSON-Lines dataset; errors carry the 1-based line number.
pub fn parse_dataset(reader: impl BufRead, schema: &TaskSchema) -> Result<Vec<EhrSample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| LdamError::Dataset { line: line_no, msg: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record =
            serde_json::from_str(&line).map_err(|e| LdamError::Dataset { line: line_no, msg: e.to_string() })?;
        out.push(record_to_sample(rec, schema, line_no)?);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path, schema: &TaskSchema) -> Result<Vec<EhrSample>> {
    let f = fs::File::open(path).map_err(|e| LdamError::io(path, e))?;
    parse_dataset(BufReader::new(f), schema)
}

pub fn dataset_to_jsonl(samples: &[EhrSample]) -> Result<String> {
    let mut out = String::new();
    for s in samples {
        let (n_s, _) = s.timeseries.dims2()?;
        let rec = Record {
            id: s.id.clone(),
            note: s.note_tokens.clone(),
            ts: (0..n_s).map(|i| s.timeseries.row(i).iter().map(|&v| Some(v)).collect()).collect(),
            y: s.labels.iter().map(|&v| v as i64).collect(),
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, samples: &[EhrSample]) -> Result<()> {
    let text = dataset_to_jsonl(samples)?;
    let mut f = fs::File::create(path).map_err(|e| LdamError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| LdamError::io(path, e))
}

/// Seeded shuffle, then the first `⌊ratio·n⌋` samples (at least one on each
/// side) form the first part.
pub fn split(dataset: &[EhrSample], ratio: f64, seed: u64) -> Result<(Vec<EhrSample>, Vec<EhrSample>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(LdamError::Config(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    if dataset.len() < 2 {
        return Err(LdamError::Empty("need at least two samples to split".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_first = ((ratio * dataset.len() as f64 + 1e-9).floor() as usize).clamp(1, dataset.len() - 1);
    let pick = |idx: &[usize]| idx.iter().map(|&i| dataset[i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..n_first]), pick(&order[n_first..])))
}
