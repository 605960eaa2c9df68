//! Planted-signal synthetic EHR generator.
//!
//! Every positive label `j` plants at least one token from its trigger set in
//! the note and shifts the mean of its trigger channel. Everything else is
//! filler text and unit Gaussian noise.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{EhrSample, TaskSchema};
use crate::error::{LdamError, Result};
use crate::numerics::Tensor;

/// Trigger words for the 25 default labels, in label order.
pub const DEFAULT_TRIGGERS: [[&str; 2]; 25] = [
    ["creatinine", "oliguria"],
    ["stroke", "hemiparesis"],
    ["troponin", "stemi"],
    ["postoperative", "dehiscence"],
    ["hyponatremia", "hyperkalemia"],
    ["melena", "hematemesis"],
    ["wheezing", "bronchitis"],
    ["pharyngitis", "sinusitis"],
    ["pneumothorax", "effusion"],
    ["consolidation", "infiltrate"],
    ["intubated", "hypoxemia"],
    ["bacteremia", "sepsis"],
    ["pressors", "hypotension"],
    ["dialysis", "nephropathy"],
    ["emphysema", "bronchiectasis"],
    ["cabg", "stent"],
    ["neuropathy", "retinopathy"],
    ["metformin", "hyperglycemia"],
    ["statin", "hyperlipidemia"],
    ["lisinopril", "hypertensive"],
    ["nephrosclerosis", "encephalopathy"],
    ["fibrillation", "tachycardia"],
    ["bradycardia", "pacemaker"],
    ["furosemide", "orthopnea"],
    ["cirrhosis", "ascites"],
];

pub const DEFAULT_FILLER: [&str; 64] = [
    "patient",
    "admitted",
    "history",
    "presented",
    "hospital",
    "course",
    "denies",
    "reports",
    "given",
    "noted",
    "stable",
    "daily",
    "morning",
    "evening",
    "transferred",
    "floor",
    "unit",
    "family",
    "discussed",
    "plan",
    "continued",
    "started",
    "discharged",
    "home",
    "follow",
    "clinic",
    "appointment",
    "labs",
    "reviewed",
    "imaging",
    "obtained",
    "exam",
    "unremarkable",
    "comfortable",
    "ambulating",
    "tolerating",
    "diet",
    "pain",
    "controlled",
    "medications",
    "adjusted",
    "social",
    "work",
    "lives",
    "alone",
    "wife",
    "husband",
    "daughter",
    "son",
    "nurse",
    "team",
    "consulted",
    "recommended",
    "monitoring",
    "overnight",
    "improved",
    "remained",
    "afebrile",
    "alert",
    "oriented",
    "baseline",
    "prior",
    "recent",
    "visit",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_samples: usize,
    /// Per label, the words that announce it.
    pub trigger_tokens: Vec<Vec<String>>,
    /// Per label, `(channel index, mean shift)`.
    pub trigger_channels: Vec<(usize, f64)>,
    pub base_label_rate: f64,
    /// Probability that a filler slot holds a random out-of-vocabulary word.
    pub token_noise_rate: f64,
    /// Minimum note length; notes grow if more triggers are planted.
    pub note_len: usize,
    pub filler_vocab: Vec<String>,
}

impl SynthSpec {
    /// Default planting for a schema: two trigger words per label, label `j`
    /// shifts channel `j mod N_S` by +1, or by −1 on the second pass around.
    pub fn for_schema(schema: &TaskSchema, seed: u64, n_samples: usize) -> Self {
        let n_y = schema.n_labels();
        let n_s = schema.n_indicators();
        let trigger_tokens = (0..n_y)
            .map(|j| match DEFAULT_TRIGGERS.get(j) {
                Some(ws) if n_y <= DEFAULT_TRIGGERS.len() => ws.iter().map(|w| w.to_string()).collect(),
                _ => vec![format!("marker{j}a"), format!("marker{j}b")],
            })
            .collect();
        let trigger_channels =
            (0..n_y).map(|j| (j % n_s, if (j / n_s).is_multiple_of(2) { 1.0 } else { -1.0 })).collect();
        Self {
            seed,
            n_samples,
            trigger_tokens,
            trigger_channels,
            base_label_rate: 0.15,
            token_noise_rate: 0.05,
            note_len: 24,
            filler_vocab: DEFAULT_FILLER.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn validate(&self, schema: &TaskSchema) -> Result<()> {
        let bad = |m: String| Err(LdamError::Config(m));
        let n_y = schema.n_labels();
        if self.trigger_tokens.len() != n_y || self.trigger_channels.len() != n_y {
            return bad(format!("spec must describe exactly {n_y} labels"));
        }
        if self.filler_vocab.is_empty() || self.note_len == 0 {
            return bad("filler vocabulary and note length must be nonempty".into());
        }
        for (name, rate) in [("base_label_rate", self.base_label_rate), ("token_noise_rate", self.token_noise_rate)] {
            if !(0.0..=1.0).contains(&rate) {
                return bad(format!("{name} {rate} outside [0, 1]"));
            }
        }
        let filler: HashSet<&String> = self.filler_vocab.iter().collect();
        let mut seen = HashSet::new();
        for (j, set) in self.trigger_tokens.iter().enumerate() {
            if set.is_empty() {
                return bad(format!("label {j} has no trigger tokens"));
            }
            for w in set {
                if filler.contains(w) {
                    return bad(format!("trigger {w:?} is also a filler word"));
                }
                if !seen.insert(w) {
                    return bad(format!("trigger {w:?} is shared between labels"));
                }
            }
        }
        if let Some((c, _)) = self.trigger_channels.iter().find(|(c, _)| *c >= schema.n_indicators()) {
            return bad(format!("trigger channel {c} out of range"));
        }
        Ok(())
    }
}

fn noise_word(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(5..9);
    let mut w = String::from("zz");
    w.extend((0..len).map(|_| (b'a' + rng.random_range(0..26u8)) as char));
    w
}

pub fn generate_synthetic(spec: &SynthSpec, schema: &TaskSchema) -> Result<Vec<EhrSample>> {
    schema.validate()?;
    spec.validate(schema)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n_s, t, n_y) = (schema.n_indicators(), schema.t, schema.n_labels());
    let mut out = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let labels: Vec<u8> = (0..n_y).map(|_| rng.random_bool(spec.base_label_rate) as u8).collect();

        let mut note: Vec<String> = Vec::with_capacity(spec.note_len);
        for (j, &y) in labels.iter().enumerate() {
            if y == 1 {
                note.push(spec.trigger_tokens[j].choose(&mut rng).expect("nonempty").clone());
            }
        }
        while note.len() < spec.note_len {
            let word = if rng.random_bool(spec.token_noise_rate) {
                noise_word(&mut rng)
            } else {
                spec.filler_vocab.choose(&mut rng).expect("nonempty").clone()
            };
            note.push(word);
        }
        note.shuffle(&mut rng);

        let mut ts: Vec<f64> = (0..n_s * t).map(|_| StandardNormal.sample(&mut rng)).collect();
        for (j, &y) in labels.iter().enumerate() {
            if y == 1 {
                let (c, shift) = spec.trigger_channels[j];
                ts[c * t..(c + 1) * t].iter_mut().for_each(|v| *v += shift);
            }
        }
        out.push(EhrSample {
            id: format!("synth-{}-{i:05}", spec.seed),
            note_tokens: note,
            timeseries: Tensor::new(&[n_s, t], ts)?,
            labels,
        });
    }
    Ok(out)
}
