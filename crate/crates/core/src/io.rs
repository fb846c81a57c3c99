//! Record CSV files with JSON sidecars, and dataset manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{AecgRecord, NormStats, RecordMeta};

/// Sidecar written next to every record CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub sample_rate_hz: f64,
    #[serde(default)]
    pub provenance: serde_json::Value,
    #[serde(default)]
    pub preprocessing: Vec<String>,
    #[serde(default)]
    pub edge_handling: Vec<String>,
    #[serde(default)]
    pub lead_norm: Vec<Vec<NormStats>>,
    #[serde(default)]
    pub fecg_ref_norm: Vec<NormStats>,
}

impl Sidecar {
    fn from_record(rec: &AecgRecord) -> Self {
        let m = rec.meta.clone();
        Sidecar {
            sample_rate_hz: rec.sample_rate_hz,
            provenance: m.provenance,
            preprocessing: m.preprocessing,
            edge_handling: m.edge_handling,
            lead_norm: m.lead_norm,
            fecg_ref_norm: m.fecg_ref_norm,
        }
    }

    fn into_meta(self) -> RecordMeta {
        RecordMeta {
            provenance: self.provenance,
            preprocessing: self.preprocessing,
            edge_handling: self.edge_handling,
            lead_norm: self.lead_norm,
            fecg_ref_norm: self.fecg_ref_norm,
        }
    }
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Writes `t,lead_1..lead_L[,fecg_ref]` plus the sidecar.
pub fn write_record_csv(path: &Path, rec: &AecgRecord) -> Result<()> {
    rec.validate()?;
    let mut out = String::with_capacity(rec.len() * 16 * (rec.num_leads() + 2));
    out.push('t');
    for i in 1..=rec.num_leads() {
        out.push_str(&format!(",lead_{i}"));
    }
    if rec.fecg_ref.is_some() {
        out.push_str(",fecg_ref");
    }
    out.push('\n');
    for i in 0..rec.len() {
        out.push_str(&format!("{}", i as f64 / rec.sample_rate_hz));
        for lead in &rec.leads {
            out.push_str(&format!(",{}", lead[i]));
        }
        if let Some(r) = &rec.fecg_ref {
            out.push_str(&format!(",{}", r[i]));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    write_json(&sidecar_path(path), &Sidecar::from_record(rec))
}

/// Reads a record CSV. The sidecar supplies the sample rate and metadata;
/// without one the rate is inferred from the first two `t` values.
pub fn read_record_csv(path: &Path) -> Result<AecgRecord> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        msg,
    };
    if cols.first() != Some(&"t") {
        return Err(parse_err(1, "first column must be `t`".into()));
    }
    let has_ref = cols.last() == Some(&"fecg_ref");
    let n_leads = cols.len() - 1 - usize::from(has_ref);
    if n_leads == 0 {
        return Err(parse_err(1, "no lead columns".into()));
    }
    for (i, c) in cols[1..=n_leads].iter().enumerate() {
        if *c != format!("lead_{}", i + 1) {
            return Err(parse_err(1, format!("expected column `lead_{}`, found `{c}`", i + 1)));
        }
    }
    let mut t = Vec::new();
    let mut leads = vec![Vec::new(); n_leads];
    let mut reference = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != cols.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", cols.len(), row.len())));
        }
        let mut vals = Vec::with_capacity(row.len());
        for field in row.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("invalid number `{field}`")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite value `{field}`")));
            }
            vals.push(v);
        }
        if t.last().is_some_and(|&prev| vals[0] <= prev) {
            return Err(parse_err(line, "time column must be strictly increasing".into()));
        }
        t.push(vals[0]);
        for (l, v) in leads.iter_mut().zip(&vals[1..=n_leads]) {
            l.push(*v);
        }
        if has_ref {
            reference.push(vals[n_leads + 1]);
        }
    }
    if t.is_empty() {
        return Err(parse_err(2, "no samples".into()));
    }
    let side = sidecar_path(path);
    let sidecar: Option<Sidecar> = if side.exists() { Some(read_json(&side)?) } else { None };
    let fs_hz = match &sidecar {
        Some(s) => s.sample_rate_hz,
        None if t.len() > 1 => 1.0 / (t[1] - t[0]),
        None => return Err(parse_err(2, "cannot infer sample rate from a single sample without a sidecar".into())),
    };
    let mut rec = AecgRecord::new(leads, has_ref.then_some(reference), fs_hz)?;
    if let Some(s) = sidecar {
        rec.meta = s.into_meta();
    }
    Ok(rec)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::Parse {
            path: path.to_path_buf(),
            line: line as usize,
            msg: format!("{kind:?}"),
        },
    }
}
