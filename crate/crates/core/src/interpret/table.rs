use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Per-window lead importance, min-max normalized within each window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionTable {
    pub window_s: f64,
    pub sample_rate_hz: f64,
    /// Column labels such as `"0.00s-0.25s"`.
    pub columns: Vec<String>,
    /// `values[lead][window]`, each in `[0, 1]`.
    pub values: Vec<Vec<f64>>,
    /// Windows whose raw scores were all equal; their entries are all 1.
    pub degenerate: Vec<bool>,
    pub baseline: String,
    pub steps: usize,
    pub checkpoint_id: String,
}

/// Sample range of window `w`; boundaries fall on `ceil(w · fs · window_s)`
/// so fractional window lengths tile the signal without gaps.
fn window_bounds(w: usize, per_window: f64) -> (usize, usize) {
    let at = |k: usize| (k as f64 * per_window - 1e-9).ceil().max(0.0) as usize;
    (at(w), at(w + 1))
}

impl AttributionTable {
    pub fn num_leads(&self) -> usize {
        self.values.len()
    }

    pub fn num_windows(&self) -> usize {
        self.columns.len()
    }

    /// CSV with rows `Lead_1..Lead_L` and fixed four-decimal entries.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lead");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (i, row) in self.values.iter().enumerate() {
            let _ = write!(out, "Lead_{}", i + 1);
            for v in row {
                let _ = write!(out, ",{v:.4}");
            }
            out.push('\n');
        }
        out
    }
}

/// Sums `|attr[i, t]|` over each full window of `window_s` seconds and
/// min-max normalizes every window across leads. `attr` is `[L, T]`.
pub fn window_lead_attribution(attr: &Tensor, sample_rate_hz: f64, window_s: f64) -> Result<AttributionTable> {
    if attr.shape().len() != 2 {
        return Err(Error::InvalidShape {
            shape: attr.shape().to_vec(),
            reason: "attribution map must be [leads, time]".into(),
        });
    }
    let per_window = sample_rate_hz * window_s;
    if !(per_window >= 1.0) {
        return Err(Error::config(format!(
            "a {window_s} s window at {sample_rate_hz} Hz holds less than one sample"
        )));
    }
    let (leads, t) = (attr.shape()[0], attr.shape()[1]);
    let windows = (t as f64 / per_window + 1e-9).floor() as usize;
    if windows == 0 {
        return Err(Error::config(format!(
            "attribution of {t} samples is shorter than one {window_s} s window"
        )));
    }
    if !attr.is_finite() {
        return Err(Error::NonFinite("attribution map".into()));
    }
    let mut values = vec![vec![0.0; windows]; leads];
    let mut degenerate = vec![false; windows];
    let mut columns = Vec::with_capacity(windows);
    for w in 0..windows {
        let (a, b) = window_bounds(w, per_window);
        let raw: Vec<f64> = (0..leads)
            .map(|i| (a..b.min(t)).map(|k| attr.get(&[i, k]).abs()).sum())
            .collect();
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        if span <= f64::EPSILON * hi.abs() || span == 0.0 {
            degenerate[w] = true;
            for row in values.iter_mut() {
                row[w] = 1.0;
            }
        } else {
            for (row, r) in values.iter_mut().zip(&raw) {
                row[w] = (r - lo) / span;
            }
        }
        columns.push(format!(
            "{:.2}s-{:.2}s",
            w as f64 * window_s,
            (w + 1) as f64 * window_s
        ));
    }
    Ok(AttributionTable {
        window_s,
        sample_rate_hz,
        columns,
        values,
        degenerate,
        baseline: String::new(),
        steps: 0,
        checkpoint_id: String::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(leads: usize, t: usize, f: impl Fn(usize, usize) -> f64) -> Tensor {
        Tensor::new(
            vec![leads, t],
            (0..leads).flat_map(|i| (0..t).map(move |k| (i, k))).map(|(i, k)| f(i, k)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn two_seconds_gives_eight_named_columns() {
        let a = map(4, 500, |i, k| ((i * 7 + k) % 11) as f64 - 5.0);
        let t = window_lead_attribution(&a, 250.0, 0.25).unwrap();
        assert_eq!(t.num_windows(), 8);
        assert_eq!(t.columns[0], "0.00s-0.25s");
        assert_eq!(t.columns[7], "1.75s-2.00s");
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("Lead_1,"));
        for col in 1..=8 {
            let cells: Vec<&str> = lines[1..].iter().map(|l| l.split(',').nth(col).unwrap()).collect();
            assert!(cells.iter().all(|c| c.len() == 6 && c.as_bytes()[1] == b'.'));
            assert!(cells.contains(&"1.0000") && cells.contains(&"0.0000"));
        }
    }

    #[test]
    fn fractional_windows_tile_the_signal() {
        let edges: Vec<(usize, usize)> = (0..8).map(|w| window_bounds(w, 62.5)).collect();
        assert_eq!(edges[0], (0, 63));
        assert_eq!(edges[1], (63, 125));
        assert_eq!(edges[7].1, 500);
        assert!(edges.windows(2).all(|p| p[0].1 == p[1].0));
    }

    #[test]
    fn silent_lead_scores_zero() {
        let a = map(4, 500, |i, k| if i == 2 { 0.0 } else { 1.0 + ((i + k) % 3) as f64 });
        let t = window_lead_attribution(&a, 250.0, 0.25).unwrap();
        assert!(t.values[2].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn equal_leads_are_flagged_degenerate() {
        let a = map(3, 500, |_, k| (k % 5) as f64);
        let t = window_lead_attribution(&a, 250.0, 0.25).unwrap();
        assert!(t.degenerate.iter().all(|&d| d));
        assert!(t.values.iter().flatten().all(|&v| v == 1.0));
    }

    #[test]
    fn too_short_or_too_fine_is_rejected() {
        assert!(window_lead_attribution(&map(2, 50, |_, _| 1.0), 250.0, 0.25).is_err());
        assert!(window_lead_attribution(&map(2, 50, |_, _| 1.0), 250.0, 0.001).is_err());
        assert!(window_lead_attribution(&Tensor::ones(&[5]), 250.0, 0.25).is_err());
    }

    proptest! {
        #[test]
        fn columns_span_zero_to_one(v in prop::collection::vec(-5.0f64..5.0, 4 * 130)) {
            let a = Tensor::new(vec![4, 130], v).unwrap();
            let t = window_lead_attribution(&a, 250.0, 0.25).unwrap();
            for w in 0..t.num_windows() {
                let col: Vec<f64> = t.values.iter().map(|r| r[w]).collect();
                prop_assert!(col.iter().all(|x| (0.0..=1.0).contains(x)));
                if !t.degenerate[w] {
                    prop_assert_eq!(col.iter().filter(|&&x| x == 1.0).count(), 1);
                    prop_assert_eq!(col.iter().filter(|&&x| x == 0.0).count(), 1);
                }
            }
        }
    }
}
