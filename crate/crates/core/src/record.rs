use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean/std pair used to undo a z-score normalization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn identity() -> Self {
        NormStats { mean: 0.0, std: 1.0 }
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// Descriptive metadata carried alongside the samples.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordMeta {
    /// Free-form origin description (generator config, source file, ...).
    #[serde(default)]
    pub provenance: serde_json::Value,
    /// Processing stages in application order, e.g. `"median(0.2,0.6)"`.
    #[serde(default)]
    pub preprocessing: Vec<String>,
    /// Edge-handling notes recorded by each stage.
    #[serde(default)]
    pub edge_handling: Vec<String>,
    /// One entry per z-score pass, each holding per-lead statistics.
    #[serde(default)]
    pub lead_norm: Vec<Vec<NormStats>>,
    /// One entry per z-score pass applied to the reference channel.
    #[serde(default)]
    pub fecg_ref_norm: Vec<NormStats>,
}

impl RecordMeta {
    /// Maps a normalized reference value back to the recorded scale by undoing
    /// every z-score pass in reverse order.
    pub fn invert_reference(&self, v: f64) -> f64 {
        self.fecg_ref_norm.iter().rev().fold(v, |acc, s| s.invert(acc))
    }
}

/// Multi-lead abdominal recording with an optional fetal reference channel.
#[derive(Clone, Debug, PartialEq)]
pub struct AecgRecord {
    pub leads: Vec<Vec<f64>>,
    pub fecg_ref: Option<Vec<f64>>,
    pub sample_rate_hz: f64,
    pub meta: RecordMeta,
}

impl AecgRecord {
    pub fn new(leads: Vec<Vec<f64>>, fecg_ref: Option<Vec<f64>>, sample_rate_hz: f64) -> Result<Self> {
        let rec = AecgRecord {
            leads,
            fecg_ref,
            sample_rate_hz,
            meta: RecordMeta::default(),
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::Dataset(format!(
                "sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        let Some(first) = self.leads.first() else {
            return Err(Error::Dataset("record has no leads".into()));
        };
        let n = first.len();
        if n == 0 {
            return Err(Error::Dataset("record has no samples".into()));
        }
        if self.leads.iter().any(|l| l.len() != n) || self.fecg_ref.as_ref().is_some_and(|r| r.len() != n) {
            return Err(Error::Dataset("channels differ in length".into()));
        }
        Ok(())
    }

    pub fn num_leads(&self) -> usize {
        self.leads.len()
    }

    pub fn len(&self) -> usize {
        self.leads.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz
    }
}
