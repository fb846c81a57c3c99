//! Periodized multilevel DWT with the 4-tap Daubechies filter pair.

use super::SignalChannel;
use crate::error::{Error, Result};

/// Daubechies 4-tap low-pass analysis filter.
pub fn db4_lowpass() -> [f64; 4] {
    let s3 = 3f64.sqrt();
    let d = 4.0 * 2f64.sqrt();
    [(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d]
}

fn highpass(h: &[f64; 4]) -> [f64; 4] {
    [h[3], -h[2], h[1], -h[0]]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Threshold {
    /// `σ·sqrt(2 ln n)`, σ from the finest detail band's MAD / 0.6745.
    Universal,
    Fixed(f64),
}

/// Decomposition result: coarsest approximation plus details, finest first.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub approx: Vec<f64>,
    pub details: Vec<Vec<f64>>,
}

fn analyze(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let h = db4_lowpass();
    let g = highpass(&h);
    let n = x.len();
    let half = n / 2;
    let mut a = vec![0.0; half];
    let mut d = vec![0.0; half];
    for i in 0..half {
        for k in 0..4 {
            let v = x[(2 * i + k) % n];
            a[i] += h[k] * v;
            d[i] += g[k] * v;
        }
    }
    (a, d)
}

fn synthesize(a: &[f64], d: &[f64]) -> Vec<f64> {
    let h = db4_lowpass();
    let g = highpass(&h);
    let n = a.len() * 2;
    let mut x = vec![0.0; n];
    for i in 0..a.len() {
        for k in 0..4 {
            x[(2 * i + k) % n] += h[k] * a[i] + g[k] * d[i];
        }
    }
    x
}

/// Forward transform of a signal whose length is a multiple of `2^levels`.
pub fn wavedec(x: &[f64], levels: usize) -> Result<Decomposition> {
    if levels == 0 || x.len() % (1 << levels) != 0 {
        return Err(Error::Signal(format!(
            "length {} is not a positive multiple of 2^{levels}",
            x.len()
        )));
    }
    let mut approx = x.to_vec();
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        let (a, d) = analyze(&approx);
        details.push(d);
        approx = a;
    }
    Ok(Decomposition { approx, details })
}

pub fn waverec(dec: &Decomposition) -> Vec<f64> {
    dec.details
        .iter()
        .rev()
        .fold(dec.approx.clone(), |a, d| synthesize(&a, d))
}

fn median(mut v: Vec<f64>) -> f64 {
    let n = v.len();
    v.sort_by(f64::total_cmp);
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn soft(v: f64, thr: f64) -> f64 {
    v.signum() * (v.abs() - thr).max(0.0)
}

/// Wavelet shrinkage of the detail bands; the approximation band is kept.
pub fn dwt_denoise_with(ch: &SignalChannel, levels: usize, threshold: Threshold) -> Result<SignalChannel> {
    let block = 1usize << levels;
    if levels == 0 || ch.len() < block {
        return Err(Error::Signal(format!(
            "signal of {} samples is too short for a {levels}-level transform",
            ch.len()
        )));
    }
    let padded_len = ch.len().div_ceil(block) * block;
    let mut x = ch.samples().to_vec();
    x.resize(padded_len, 0.0);
    let mut dec = wavedec(&x, levels)?;
    let thr = match threshold {
        Threshold::Fixed(t) => t,
        Threshold::Universal => {
            let sigma = median(dec.details[0].iter().map(|v| v.abs()).collect()) / 0.6745;
            sigma * (2.0 * (padded_len as f64).ln()).sqrt()
        }
    };
    if thr > 0.0 {
        for band in &mut dec.details {
            band.iter_mut().for_each(|v| *v = soft(*v, thr));
        }
    }
    let mut y = waverec(&dec);
    y.truncate(ch.len());
    SignalChannel::new(y, ch.sample_rate_hz())
}

/// Default denoiser: universal soft threshold.
pub fn dwt_denoise(ch: &SignalChannel, levels: usize) -> Result<SignalChannel> {
    dwt_denoise_with(ch, levels, Threshold::Universal)
}
