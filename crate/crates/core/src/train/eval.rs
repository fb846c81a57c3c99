use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::metrics::{r_squared, rmse, RSquared};
use super::check_compatible;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::sigproc::WindowSpec;

pub const AGGREGATION_NOTE: &str = "aggregate metrics are the mean over windows of per-window metrics; \
windows with an undefined R² are excluded from the R² mean and counted separately; \
`concatenated` metrics pool every window's samples";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub r_squared: RSquared,
    pub rmse: f64,
}

impl Metrics {
    fn of(pred: &[f64], reference: &[f64]) -> Result<Self> {
        Ok(Metrics {
            r_squared: r_squared(pred, reference)?,
            rmse: rmse(pred, reference)?,
        })
    }

    fn mean(ms: &[Metrics]) -> Self {
        let defined: Vec<f64> = ms.iter().filter_map(|m| m.r_squared.value()).collect();
        Metrics {
            r_squared: if defined.is_empty() {
                RSquared::UNDEFINED
            } else {
                RSquared::Value(defined.iter().sum::<f64>() / defined.len() as f64)
            },
            rmse: ms.iter().map(|m| m.rmse).sum::<f64>() / ms.len() as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub record: String,
    pub target_offset: usize,
    /// On the recorded (z-score inverted) scale.
    pub metrics: Metrics,
    pub normalized: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordReport {
    pub name: String,
    pub windows: usize,
    pub undefined_r_squared: usize,
    pub metrics: Metrics,
    pub normalized: Metrics,
    pub concatenated: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint_id: String,
    pub window: String,
    pub window_spec: WindowSpec,
    pub model_config: ModelConfig,
    pub aggregation: String,
    pub window_count: usize,
    pub undefined_r_squared: usize,
    /// Per-window mean on the recorded scale.
    pub aggregate: Metrics,
    /// Per-window mean on the normalized scale.
    pub aggregate_normalized: Metrics,
    pub concatenated: Metrics,
    pub concatenated_normalized: Metrics,
    pub records: Vec<RecordReport>,
    pub windows: Vec<WindowReport>,
    pub wall_clock_s: Option<f64>,
}

struct Scored {
    record: usize,
    target_offset: usize,
    pred: Vec<f64>,
    target: Vec<f64>,
    pred_inv: Vec<f64>,
    target_inv: Vec<f64>,
}

/// Autoregressive decoding of every window, scored against the reference.
/// Windows are decoded in parallel; results keep dataset order.
pub fn evaluate(model: &Model, checkpoint_id: &str, dataset: &Dataset, spec: &WindowSpec) -> Result<EvalReport> {
    let first = dataset
        .records
        .first()
        .ok_or_else(|| Error::Dataset("cannot evaluate an empty dataset".into()))?;
    check_compatible(&model.config, spec, first.record.num_leads())?;
    let samples = dataset.windows(spec)?;
    if samples.is_empty() {
        return Err(Error::Dataset("dataset yields no windows".into()));
    }
    let scored = samples
        .par_iter()
        .map(|s| {
            let pred = model.predict(&s.window.encoder_input)?;
            let meta = &dataset.records[s.record].record.meta;
            let target = s.window.decoder_target.data().to_vec();
            Ok(Scored {
                record: s.record,
                target_offset: s.window.target_offset,
                pred_inv: pred.iter().map(|&v| meta.invert_reference(v)).collect(),
                target_inv: target.iter().map(|&v| meta.invert_reference(v)).collect(),
                pred,
                target,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut windows = Vec::with_capacity(scored.len());
    for s in &scored {
        windows.push(WindowReport {
            record: dataset.records[s.record].name.clone(),
            target_offset: s.target_offset,
            metrics: Metrics::of(&s.pred_inv, &s.target_inv)?,
            normalized: Metrics::of(&s.pred, &s.target)?,
        });
    }
    let pooled = |sel: &dyn Fn(&Scored) -> bool, inverted: bool| -> Result<Metrics> {
        let (mut p, mut y) = (Vec::new(), Vec::new());
        for s in scored.iter().filter(|s| sel(s)) {
            if inverted {
                p.extend_from_slice(&s.pred_inv);
                y.extend_from_slice(&s.target_inv);
            } else {
                p.extend_from_slice(&s.pred);
                y.extend_from_slice(&s.target);
            }
        }
        Metrics::of(&p, &y)
    };
    let undefined = |ws: &[&WindowReport]| ws.iter().filter(|w| w.metrics.r_squared.value().is_none()).count();

    let mut records = Vec::new();
    for (i, r) in dataset.records.iter().enumerate() {
        let ws: Vec<&WindowReport> = scored
            .iter()
            .zip(&windows)
            .filter(|(s, _)| s.record == i)
            .map(|(_, w)| w)
            .collect();
        if ws.is_empty() {
            continue;
        }
        let inv: Vec<Metrics> = ws.iter().map(|w| w.metrics).collect();
        let norm: Vec<Metrics> = ws.iter().map(|w| w.normalized).collect();
        records.push(RecordReport {
            name: r.name.clone(),
            windows: ws.len(),
            undefined_r_squared: undefined(&ws),
            metrics: Metrics::mean(&inv),
            normalized: Metrics::mean(&norm),
            concatenated: pooled(&|s| s.record == i, true)?,
        });
    }
    let all: Vec<&WindowReport> = windows.iter().collect();
    let inv: Vec<Metrics> = windows.iter().map(|w| w.metrics).collect();
    let norm: Vec<Metrics> = windows.iter().map(|w| w.normalized).collect();
    Ok(EvalReport {
        checkpoint_id: checkpoint_id.to_string(),
        window: spec.label(),
        window_spec: *spec,
        model_config: model.config.clone(),
        aggregation: AGGREGATION_NOTE.to_string(),
        window_count: windows.len(),
        undefined_r_squared: undefined(&all),
        aggregate: Metrics::mean(&inv),
        aggregate_normalized: Metrics::mean(&norm),
        concatenated: pooled(&|_| true, true)?,
        concatenated_normalized: pooled(&|_| true, false)?,
        records,
        windows,
        wall_clock_s: None,
    })
}
