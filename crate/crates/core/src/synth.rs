//! Synthetic abdominal ECG with known fetal ground truth.
//!
//! Beats are sums of five Gaussians over a cardiac phase that advances by 2π
//! per beat; per-beat RR intervals are jittered from a seeded generator.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, write_json, write_record_csv};
use crate::record::{AecgRecord, RecordMeta};
use crate::sigproc::SignalChannel;

pub const RHO_MIN: f64 = 1.0 / 50.0;
pub const RHO_MAX: f64 = 1.0 / 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    /// Phase offset in radians, R at 0.
    pub center: f64,
    pub width: f64,
    pub amplitude: f64,
}

/// P, Q, R, S, T components in that order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeatModel {
    pub waves: [Wave; 5],
}

impl BeatModel {
    pub fn maternal() -> Self {
        BeatModel {
            waves: [
                Wave { center: -PI / 3.0, width: 0.25, amplitude: 0.15 },
                Wave { center: -PI / 12.0, width: 0.1, amplitude: -0.15 },
                Wave { center: 0.0, width: 0.1, amplitude: 1.0 },
                Wave { center: PI / 12.0, width: 0.1, amplitude: -0.25 },
                Wave { center: PI / 2.0, width: 0.4, amplitude: 0.3 },
            ],
        }
    }

    /// Unit R amplitude with flatter P and T waves than [`BeatModel::maternal`].
    pub fn fetal() -> Self {
        BeatModel {
            waves: [
                Wave { center: -PI / 3.0, width: 0.25, amplitude: 0.08 },
                Wave { center: -PI / 12.0, width: 0.1, amplitude: -0.12 },
                Wave { center: 0.0, width: 0.1, amplitude: 1.0 },
                Wave { center: PI / 12.0, width: 0.1, amplitude: -0.2 },
                Wave { center: PI / 2.0, width: 0.4, amplitude: 0.12 },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.waves.iter().any(|w| !(w.width > 0.0)) {
            return Err(Error::config("beat wave widths must be positive"));
        }
        if !(self.waves[2].amplitude > 0.0) {
            return Err(Error::config("R amplitude must be positive"));
        }
        let centers_ok = self.waves.windows(2).all(|p| p[0].center < p[1].center)
            && self.waves[0].center > -PI
            && self.waves[4].center <= PI;
        if !centers_ok {
            return Err(Error::config("wave centers must increase P<Q<R<S<T within (-π, π]"));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut m = *self;
        m.waves.iter_mut().for_each(|w| w.amplitude *= factor);
        m
    }

    /// Beat value at cardiac phase `phase`.
    pub fn eval(&self, phase: f64) -> f64 {
        self.waves
            .iter()
            .map(|w| {
                let d = wrap_phase(phase - w.center);
                w.amplitude * (-d * d / (2.0 * w.width * w.width)).exp()
            })
            .sum()
    }
}

fn wrap_phase(x: f64) -> f64 {
    let mut y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y == -PI {
        y = PI;
    }
    y
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeatTrainConfig {
    pub hr_bpm: f64,
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    /// Per-beat RR perturbation as a fraction of the mean interval.
    pub hr_jitter: f64,
    /// Cardiac phase at t = 0; `-π` starts exactly at a beat boundary.
    pub start_phase: f64,
}

/// Evaluates the beat model along an accumulated phase with seeded RR jitter.
pub fn synth_beat_train<R: Rng>(model: &BeatModel, cfg: &BeatTrainConfig, rng: &mut R) -> Result<SignalChannel> {
    if !(30.0..=240.0).contains(&cfg.hr_bpm) {
        return Err(Error::config(format!("heart rate {} bpm outside [30, 240]", cfg.hr_bpm)));
    }
    if !(0.0..0.2).contains(&cfg.hr_jitter) {
        return Err(Error::config(format!("jitter fraction {} outside [0, 0.2)", cfg.hr_jitter)));
    }
    if !(cfg.duration_s > 0.0 && cfg.sample_rate_hz > 0.0) {
        return Err(Error::config("duration and sample rate must be positive"));
    }
    let n = (cfg.duration_s * cfg.sample_rate_hz).round().max(1.0) as usize;
    let mean_rr = 60.0 / cfg.hr_bpm;
    let mut next_rr = || mean_rr * (1.0 + cfg.hr_jitter * rng.random_range(-1.0..1.0));
    let mut rr = next_rr();
    let frac0 = (wrap_phase(cfg.start_phase) + PI) / (2.0 * PI);
    let mut beat_start = -frac0 * rr;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / cfg.sample_rate_hz;
            while t >= beat_start + rr {
                beat_start += rr;
                rr = next_rr();
            }
            let phase = -PI + 2.0 * PI * (t - beat_start) / rr;
            model.eval(phase)
        })
        .collect();
    SignalChannel::new(samples, cfg.sample_rate_hz)
}

/// Recipe for one synthetic multi-lead record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixConfig {
    pub leads: usize,
    pub maternal_gains: Vec<f64>,
    pub fetal_gains: Vec<f64>,
    /// Fetal-to-maternal amplitude ratio.
    pub rho: f64,
    pub noise_std: f64,
    pub maternal_hr_bpm: f64,
    pub fetal_hr_bpm: f64,
    pub hr_jitter: f64,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub seed: u64,
    pub maternal_beat: BeatModel,
    pub fetal_beat: BeatModel,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig {
            leads: 4,
            maternal_gains: vec![1.0, 0.8, 1.2, 0.6],
            fetal_gains: vec![1.0, 0.7, 0.05, 0.9],
            rho: 0.1,
            noise_std: 0.01,
            maternal_hr_bpm: 80.0,
            fetal_hr_bpm: 140.0,
            hr_jitter: 0.03,
            duration_s: 10.0,
            sample_rate_hz: 250.0,
            seed: 0,
            maternal_beat: BeatModel::maternal(),
            fetal_beat: BeatModel::fetal(),
        }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<()> {
        if self.leads < 2 {
            return Err(Error::config("at least 2 leads are required"));
        }
        if self.maternal_gains.len() != self.leads || self.fetal_gains.len() != self.leads {
            return Err(Error::config(format!(
                "gain vectors must have {} entries (got {} maternal, {} fetal)",
                self.leads,
                self.maternal_gains.len(),
                self.fetal_gains.len()
            )));
        }
        if !(RHO_MIN - 1e-12..=RHO_MAX + 1e-12).contains(&self.rho) {
            return Err(Error::config(format!("rho {} outside [1/50, 1/10]", self.rho)));
        }
        if !(self.maternal_hr_bpm > 0.0 && self.fetal_hr_bpm > 0.0) {
            return Err(Error::config("heart rates must be positive"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::config("noise std must be non-negative"));
        }
        self.maternal_beat.validate()?;
        self.fetal_beat.validate()
    }
}

/// Mixed abdominal record plus its unmixed sources.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedRecord {
    pub record: AecgRecord,
    pub maternal: Vec<f64>,
    pub fetal: Vec<f64>,
}

/// `lead_i = m_i·mECG + f_i·ρ·fECG + noise`; the reference channel holds the
/// unscaled fECG. Output depends only on the config (seed included).
pub fn mix_sources(cfg: &MixConfig) -> Result<MixedRecord> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let m_phase = rng.random_range(-PI..PI);
    let f_phase = rng.random_range(-PI..PI);
    let train = |model: &BeatModel, hr: f64, phase: f64, rng: &mut ChaCha8Rng| {
        synth_beat_train(
            model,
            &BeatTrainConfig {
                hr_bpm: hr,
                sample_rate_hz: cfg.sample_rate_hz,
                duration_s: cfg.duration_s,
                hr_jitter: cfg.hr_jitter,
                start_phase: phase,
            },
            rng,
        )
    };
    let maternal = train(&cfg.maternal_beat, cfg.maternal_hr_bpm, m_phase, &mut rng)?.into_samples();
    let fetal = train(&cfg.fetal_beat, cfg.fetal_hr_bpm, f_phase, &mut rng)?.into_samples();
    let noise = Normal::new(0.0, cfg.noise_std.max(0.0)).map_err(|e| Error::config(e.to_string()))?;
    let leads = (0..cfg.leads)
        .map(|i| {
            let (mg, fg) = (cfg.maternal_gains[i], cfg.fetal_gains[i] * cfg.rho);
            maternal
                .iter()
                .zip(&fetal)
                .map(|(m, f)| {
                    let n = if cfg.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    mg * m + fg * f + n
                })
                .collect()
        })
        .collect();
    let mut record = AecgRecord::new(leads, Some(fetal.clone()), cfg.sample_rate_hz)?;
    record.meta = RecordMeta {
        provenance: serde_json::json!({ "generator": "gaussian-beat mixture", "config": cfg }),
        ..RecordMeta::default()
    };
    Ok(MixedRecord {
        record,
        maternal,
        fetal,
    })
}

pub fn mix_aecg(cfg: &MixConfig) -> Result<AecgRecord> {
    mix_sources(cfg).map(|m| m.record)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: String,
    pub seed: u64,
    pub config: MixConfig,
}

/// Seeds and fully materialized configs of an emitted dataset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn record_file_name(index: usize) -> String {
    format!("record_{index:04}.csv")
}

/// Writes `record_NNNN.csv` (+ sidecar) per config and `manifest.json`.
pub fn emit_dataset(cfgs: &[MixConfig], out_dir: &Path) -> Result<Manifest> {
    cfgs.iter().try_for_each(MixConfig::validate)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let entries = cfgs
        .par_iter()
        .enumerate()
        .map(|(i, cfg)| {
            let file = record_file_name(i);
            write_record_csv(&out_dir.join(&file), &mix_aecg(cfg)?)?;
            Ok(ManifestEntry {
                file,
                seed: cfg.seed,
                config: cfg.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest { entries };
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Re-runs every config recorded in a manifest into `out_dir`.
pub fn regenerate(manifest_path: &Path, out_dir: &Path) -> Result<Manifest> {
    let manifest: Manifest = read_json(manifest_path)?;
    let cfgs: Vec<MixConfig> = manifest.entries.into_iter().map(|e| e.config).collect();
    emit_dataset(&cfgs, out_dir)
}
