use super::SignalChannel;
use crate::error::{Error, Result};

/// Seconds to an odd sample count of at least 3 (rounded up).
pub fn window_samples(seconds: f64, fs: f64) -> usize {
    let n = (seconds * fs - 1e-9).ceil().max(3.0) as usize;
    if n % 2 == 0 {
        n + 1
    } else {
        n
    }
}

/// Running median over an odd window; samples beyond the edges replicate the
/// first/last value.
pub fn median_filter(x: &[f64], window: usize) -> Vec<f64> {
    assert!(window % 2 == 1, "median window must be odd");
    let half = window / 2;
    let n = x.len();
    let mut buf = vec![0.0; window];
    (0..n)
        .map(|i| {
            for (j, slot) in buf.iter_mut().enumerate() {
                let idx = (i + j).saturating_sub(half).min(n - 1);
                *slot = x[idx];
            }
            let (_, m, _) = buf.select_nth_unstable_by(half, f64::total_cmp);
            *m
        })
        .collect()
}

/// Removes baseline wander: `x - median(median(x, w1), w2)`.
pub fn median_baseline_remove(ch: &SignalChannel, w1_s: f64, w2_s: f64) -> Result<SignalChannel> {
    if !(w1_s > 0.0 && w1_s < w2_s) {
        return Err(Error::Signal(format!(
            "median windows must satisfy 0 < w1 < w2, got {w1_s} and {w2_s}"
        )));
    }
    let fs = ch.sample_rate_hz();
    let (n1, n2) = (window_samples(w1_s, fs), window_samples(w2_s, fs));
    if n2 > ch.len() {
        return Err(Error::Signal(format!(
            "median window of {n2} samples is longer than the {}-sample signal",
            ch.len()
        )));
    }
    let baseline = median_filter(&median_filter(ch.samples(), n1), n2);
    let out = ch
        .samples()
        .iter()
        .zip(&baseline)
        .map(|(x, b)| x - b)
        .collect();
    SignalChannel::new(out, fs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn window_conversion_is_odd() {
        assert_eq!(window_samples(0.2, 250.0), 51);
        assert_eq!(window_samples(0.6, 250.0), 151);
        assert_eq!(window_samples(0.001, 250.0), 3);
    }

    #[test]
    fn median_with_edges() {
        assert_eq!(median_filter(&[1., 9., 2., 8., 3.], 3), vec![1., 2., 8., 3., 3.]);
    }

    #[test]
    fn constant_signal_goes_to_zero() {
        let ch = SignalChannel::new(vec![3.7; 400], 250.0).unwrap();
        let out = median_baseline_remove(&ch, 0.2, 0.6).unwrap();
        assert!(out.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn slow_sine_attenuated_by_20_db() {
        let fs = 250.0;
        let x: Vec<f64> = (0..5000).map(|i| (2.0 * PI * 0.2 * i as f64 / fs).sin()).collect();
        let ch = SignalChannel::new(x.clone(), fs).unwrap();
        let out = median_baseline_remove(&ch, 0.2, 0.6).unwrap();
        let p_in: f64 = x.iter().map(|v| v * v).sum();
        let p_out: f64 = out.samples().iter().map(|v| v * v).sum();
        let atten_db = 10.0 * (p_in / p_out).log10();
        assert!(atten_db >= 20.0, "attenuation {atten_db} dB");
    }

    #[test]
    fn impulses_survive() {
        let fs = 250.0;
        let mut x = vec![0.0; 2000];
        for i in (100..2000).step_by(200) {
            x[i] = 1.5;
        }
        let ch = SignalChannel::new(x.clone(), fs).unwrap();
        let out = median_baseline_remove(&ch, 0.2, 0.6).unwrap();
        for i in (100..2000).step_by(200) {
            assert!((out.samples()[i] - 1.5).abs() <= 0.015);
        }
    }

    #[test]
    fn rejects_bad_windows() {
        let ch = SignalChannel::new(vec![0.0; 100], 250.0).unwrap();
        assert!(median_baseline_remove(&ch, 0.2, 0.6).is_err());
        let ch = SignalChannel::new(vec![0.0; 1000], 250.0).unwrap();
        assert!(median_baseline_remove(&ch, 0.6, 0.2).is_err());
    }
}
