//! Signal conditioning: baseline removal, wavelet denoising, normalization and
//! window extraction.

mod dwt;
mod median;

pub use dwt::{db4_lowpass, dwt_denoise, dwt_denoise_with, wavedec, waverec, Decomposition, Threshold};
pub use median::{median_baseline_remove, median_filter, window_samples};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::record::{AecgRecord, NormStats};

pub const ZSCORE_STD_FLOOR: f64 = 1e-8;

/// One lead's samples at a fixed sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalChannel {
    samples: Vec<f64>,
    sample_rate_hz: f64,
}

impl SignalChannel {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        if !(sample_rate_hz > 0.0) {
            return Err(Error::Signal(format!("sample rate must be positive, got {sample_rate_hz}")));
        }
        if samples.is_empty() {
            return Err(Error::Signal("channel must hold at least one sample".into()));
        }
        Ok(SignalChannel {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// `(x - mean) / std` with the std floored at [`ZSCORE_STD_FLOOR`].
pub fn zscore(ch: &SignalChannel) -> (SignalChannel, NormStats) {
    let n = ch.len() as f64;
    let mean = ch.samples.iter().sum::<f64>() / n;
    let var = ch.samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(ZSCORE_STD_FLOOR);
    let out = ch.samples.iter().map(|v| (v - mean) / std).collect();
    let stats = NormStats { mean, std };
    (
        SignalChannel {
            samples: out,
            sample_rate_hz: ch.sample_rate_hz,
        },
        stats,
    )
}

pub fn zscore_inverse(ch: &SignalChannel, stats: NormStats) -> SignalChannel {
    SignalChannel {
        samples: ch.samples.iter().map(|&v| stats.invert(v)).collect(),
        sample_rate_hz: ch.sample_rate_hz,
    }
}

/// Parameters of the conditioning pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub median_w1_s: f64,
    pub median_w2_s: f64,
    pub dwt_levels: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            median_w1_s: 0.2,
            median_w2_s: 0.6,
            dwt_levels: 6,
        }
    }
}

impl PreprocessConfig {
    pub fn stage_labels(&self) -> [String; 3] {
        [
            format!("median({},{})", self.median_w1_s, self.median_w2_s),
            format!("dwt({},db4,soft)", self.dwt_levels),
            "zscore".to_string(),
        ]
    }
}

/// Median baseline removal, wavelet denoising and z-scoring of every lead.
/// The reference channel, when present, is z-scored only; its statistics are
/// kept so predictions can be mapped back.
pub fn preprocess_record(rec: &AecgRecord, cfg: &PreprocessConfig) -> Result<AecgRecord> {
    let fs = rec.sample_rate_hz;
    let mut leads = Vec::with_capacity(rec.num_leads());
    let mut stats = Vec::with_capacity(rec.num_leads());
    for lead in &rec.leads {
        let ch = SignalChannel::new(lead.clone(), fs)?;
        let ch = median_baseline_remove(&ch, cfg.median_w1_s, cfg.median_w2_s)?;
        let ch = dwt_denoise(&ch, cfg.dwt_levels)?;
        let (ch, s) = zscore(&ch);
        leads.push(ch.into_samples());
        stats.push(s);
    }
    let mut meta = rec.meta.clone();
    let fecg_ref = match &rec.fecg_ref {
        Some(r) => {
            let (ch, s) = zscore(&SignalChannel::new(r.clone(), fs)?);
            meta.fecg_ref_norm.push(s);
            Some(ch.into_samples())
        }
        None => None,
    };
    meta.preprocessing.extend(cfg.stage_labels());
    meta.edge_handling.extend([
        "median: edge replication".to_string(),
        format!("dwt: zero padding to a multiple of {} samples, periodized filtering", 1usize << cfg.dwt_levels),
    ]);
    meta.lead_norm.push(stats);
    Ok(AecgRecord {
        leads,
        fecg_ref,
        sample_rate_hz: fs,
        meta,
    })
}

/// Where the decoder target sits relative to the encoder span.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "offset")]
pub enum TargetAlignment {
    /// Last `T_out` samples of the encoder span.
    #[default]
    Trailing,
    /// Target starts this many samples after the window origin.
    Offset(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub t_in: usize,
    pub t_out: usize,
    pub stride: usize,
    #[serde(default)]
    pub alignment: TargetAlignment,
}

impl WindowSpec {
    pub fn new(t_in: usize, t_out: usize, stride: usize) -> Self {
        WindowSpec {
            t_in,
            t_out,
            stride,
            alignment: TargetAlignment::Trailing,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_in == 0 || self.t_out == 0 || self.stride == 0 {
            return Err(Error::config("window extents and stride must be positive"));
        }
        if self.alignment == TargetAlignment::Trailing && self.t_out > self.t_in {
            return Err(Error::config(format!(
                "trailing target of {} samples exceeds the {}-sample input",
                self.t_out, self.t_in
            )));
        }
        Ok(())
    }

    pub fn target_start(&self) -> usize {
        match self.alignment {
            TargetAlignment::Trailing => self.t_in - self.t_out,
            TargetAlignment::Offset(o) => o,
        }
    }

    /// Samples covered by one window, input and target together.
    pub fn span(&self) -> usize {
        self.t_in.max(self.target_start() + self.t_out)
    }

    /// Table-style label such as `"300-50"`.
    pub fn label(&self) -> String {
        format!("{}-{}", self.t_in, self.t_out)
    }

    pub fn count(&self, len: usize) -> usize {
        if len < self.span() {
            0
        } else {
            (len - self.span()) / self.stride + 1
        }
    }
}

/// Encoder input `[L_m, T_in]` and decoder target `[T_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowPair {
    pub encoder_input: Tensor,
    pub decoder_target: Tensor,
    pub offset: usize,
    pub target_offset: usize,
}

/// Encoder input of the window starting at `offset`, shape `[L_m, t_in]`.
pub fn input_window(rec: &AecgRecord, offset: usize, t_in: usize) -> Result<Tensor> {
    if offset + t_in > rec.len() {
        return Err(Error::Dataset(format!(
            "window {offset}..{} exceeds record length {}",
            offset + t_in,
            rec.len()
        )));
    }
    let data: Vec<f64> = rec
        .leads
        .iter()
        .flat_map(|l| l[offset..offset + t_in].iter().copied())
        .collect();
    Tensor::new(vec![rec.num_leads(), t_in], data)
}

/// Enumerates windows ordered by offset; the record needs a reference channel.
pub fn sliding_windows(rec: &AecgRecord, spec: &WindowSpec) -> Result<Vec<WindowPair>> {
    spec.validate()?;
    let reference = rec
        .fecg_ref
        .as_ref()
        .ok_or_else(|| Error::Dataset("record has no fecg_ref channel".into()))?;
    if rec.len() < spec.span() {
        return Err(Error::Dataset(format!(
            "record of {} samples is shorter than the {}-sample window",
            rec.len(),
            spec.span()
        )));
    }
    let ts = spec.target_start();
    (0..spec.count(rec.len()))
        .map(|w| {
            let offset = w * spec.stride;
            let target = reference[offset + ts..offset + ts + spec.t_out].to_vec();
            Ok(WindowPair {
                encoder_input: input_window(rec, offset, spec.t_in)?,
                decoder_target: Tensor::from_vec(target)?,
                offset,
                target_offset: offset + ts,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(len: usize) -> AecgRecord {
        let lead: Vec<f64> = (0..len).map(|i| i as f64).collect();
        AecgRecord::new(vec![lead.clone(), lead.clone()], Some(lead), 250.0).unwrap()
    }

    #[test]
    fn zscore_examples() {
        let (z, s) = zscore(&SignalChannel::new(vec![4.0; 5], 1.0).unwrap());
        assert!(z.samples().iter().all(|&v| v == 0.0));
        assert_eq!(s.std, ZSCORE_STD_FLOOR);
        let (z, _) = zscore(&SignalChannel::new(vec![0.0, 2.0], 1.0).unwrap());
        assert_eq!(z.samples(), &[-1.0, 1.0]);
    }

    #[test]
    fn window_boundary_single() {
        let w = sliding_windows(&record(300), &WindowSpec::new(300, 50, 50)).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].decoder_target.data()[0], 250.0);
    }

    #[test]
    fn window_count_and_offsets() {
        let w = sliding_windows(&record(400), &WindowSpec::new(300, 50, 50)).unwrap();
        let offs: Vec<usize> = w.iter().map(|p| p.offset).collect();
        assert_eq!(offs, vec![0, 50, 100]);
        assert_eq!(w[2].encoder_input.shape(), &[2, 300]);
        assert_eq!(w[2].target_offset, 350);
    }

    #[test]
    fn window_config_errors() {
        assert!(sliding_windows(&record(400), &WindowSpec::new(50, 100, 10)).is_err());
        assert!(sliding_windows(&record(100), &WindowSpec::new(300, 50, 10)).is_err());
        let mut rec = record(400);
        rec.fecg_ref = None;
        assert!(sliding_windows(&rec, &WindowSpec::new(300, 50, 10)).is_err());
    }

    #[test]
    fn forecast_alignment() {
        let spec = WindowSpec {
            alignment: TargetAlignment::Offset(100),
            ..WindowSpec::new(100, 50, 50)
        };
        let w = sliding_windows(&record(300), &spec).unwrap();
        assert_eq!(w.len(), 4);
        assert_eq!(w[0].decoder_target.data()[0], 100.0);
    }

    #[test]
    fn preprocess_stage_labels() {
        let rec = AecgRecord::new(vec![vec![2.0; 500]; 2], Some(vec![1.0; 500]), 250.0).unwrap();
        let out = preprocess_record(&rec, &PreprocessConfig::default()).unwrap();
        assert_eq!(out.meta.preprocessing, vec!["median(0.2,0.6)", "dwt(6,db4,soft)", "zscore"]);
        assert!(out.leads.iter().flatten().all(|&v| v == 0.0));
        let twice = preprocess_record(&out, &PreprocessConfig::default()).unwrap();
        assert_eq!(twice.meta.preprocessing.len(), 6);
        assert_eq!(twice.meta.fecg_ref_norm.len(), 2);
    }

    #[test]
    fn processing_is_length_preserving_and_idempotent_on_constants() {
        let ch = SignalChannel::new(vec![1.25; 700], 250.0).unwrap();
        let once = median_baseline_remove(&ch, 0.2, 0.6).unwrap();
        let twice = median_baseline_remove(&once, 0.2, 0.6).unwrap();
        let e1: f64 = once.samples().iter().map(|v| v * v).sum();
        let e2: f64 = twice.samples().iter().map(|v| v * v).sum();
        assert_eq!(once.len(), 700);
        assert!(e2 <= e1 + 1e-9);
        let d1 = dwt_denoise(&once, 6).unwrap();
        let d2 = dwt_denoise(&d1, 6).unwrap();
        assert_eq!(d2.len(), 700);
        let e3: f64 = d2.samples().iter().map(|v| v * v).sum();
        assert!(e3 <= e1 + 1e-9);
    }

    proptest! {
        #[test]
        fn zscore_round_trip(v in prop::collection::vec(-1e3f64..1e3, 1..64)) {
            let ch = SignalChannel::new(v.clone(), 100.0).unwrap();
            let (z, s) = zscore(&ch);
            let back = zscore_inverse(&z, s);
            for (a, b) in v.iter().zip(back.samples()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn window_offsets_stride_and_stay_in_range(len in 10usize..400, t_in in 1usize..60, t_out in 1usize..60, stride in 1usize..30) {
            prop_assume!(t_out <= t_in && len >= t_in);
            let spec = WindowSpec::new(t_in, t_out, stride);
            let w = sliding_windows(&record(len), &spec).unwrap();
            prop_assert_eq!(w.len(), (len - t_in) / stride + 1);
            for pair in w.windows(2) {
                prop_assert_eq!(pair[1].offset, pair[0].offset + stride);
            }
            let last = w.last().unwrap();
            prop_assert!(last.offset + t_in <= len);
        }
    }
}
