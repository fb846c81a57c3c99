use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_record_csv;
use crate::record::AecgRecord;
use crate::sigproc::{sliding_windows, WindowPair, WindowSpec};

/// A record together with the name it is reported under.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedRecord {
    pub name: String,
    pub record: AecgRecord,
}

/// Ordered collection of records.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<NamedRecord>,
}

/// Window drawn from a dataset, tagged with its source record.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub record: usize,
    pub window: WindowPair,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitUnit {
    Record,
    Window,
}

/// Training and validation windows.
#[derive(Clone, Debug)]
pub struct Split {
    pub unit: SplitUnit,
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
}

impl Dataset {
    pub fn new(records: Vec<NamedRecord>) -> Self {
        Dataset { records }
    }

    /// Loads one CSV file, or every `*.csv` in a directory in name order.
    pub fn load(path: &Path) -> Result<Self> {
        let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
        let files: Vec<PathBuf> = if meta.is_dir() {
            let mut v: Vec<PathBuf> = fs::read_dir(path)
                .map_err(|e| Error::io(path, e))?
                .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .filter(|p| p.extension().is_some_and(|e| e == "csv"))
                .collect();
            v.sort();
            v
        } else {
            vec![path.to_path_buf()]
        };
        if files.is_empty() {
            return Err(Error::Dataset(format!("no CSV records in {}", path.display())));
        }
        let records = files
            .iter()
            .map(|f| {
                Ok(NamedRecord {
                    name: f.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned()),
                    record: read_record_csv(f)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// All windows, record by record.
    pub fn windows(&self, spec: &WindowSpec) -> Result<Vec<Sample>> {
        let mut out = Vec::new();
        for (i, r) in self.records.iter().enumerate() {
            let ws = sliding_windows(&r.record, spec)
                .map_err(|e| Error::Dataset(format!("record `{}`: {e}", r.name)))?;
            out.extend(ws.into_iter().map(|window| Sample { record: i, window }));
        }
        Ok(out)
    }

    /// Splits by record when there are at least two; a single record is split
    /// into leading training windows and trailing validation windows.
    pub fn split(&self, spec: &WindowSpec, train_fraction: f64, seed: u64) -> Result<Split> {
        let all = self.windows(spec)?;
        if all.is_empty() {
            return Err(Error::Dataset("dataset yields no windows".into()));
        }
        if self.records.len() >= 2 {
            let n = self.records.len();
            let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut is_train = vec![false; n];
            for &i in &order[..n_train] {
                is_train[i] = true;
            }
            let (train, validation): (Vec<Sample>, Vec<Sample>) = all.into_iter().partition(|s| is_train[s.record]);
            if !train.is_empty() {
                return Ok(Split {
                    unit: SplitUnit::Record,
                    train,
                    validation,
                });
            }
            return Err(Error::Dataset("training records yield no windows".into()));
        }
        let n = all.len();
        let n_train = if n == 1 {
            1
        } else {
            ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1)
        };
        let mut train = all;
        let validation = train.split_off(n_train);
        Ok(Split {
            unit: SplitUnit::Window,
            train,
            validation,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(len: usize, phase: f64) -> AecgRecord {
        let s: Vec<f64> = (0..len).map(|i| (i as f64 * 0.1 + phase).sin()).collect();
        AecgRecord::new(vec![s.clone(), s.clone()], Some(s), 250.0).unwrap()
    }

    fn named(n: usize) -> Dataset {
        Dataset::new(
            (0..n)
                .map(|i| NamedRecord {
                    name: format!("r{i}"),
                    record: record(200, i as f64),
                })
                .collect(),
        )
    }

    #[test]
    fn record_split_keeps_records_apart() {
        let ds = named(5);
        let spec = WindowSpec::new(40, 10, 20);
        let s = ds.split(&spec, 0.8, 3).unwrap();
        assert_eq!(s.unit, SplitUnit::Record);
        let tr: std::collections::BTreeSet<_> = s.train.iter().map(|w| w.record).collect();
        let va: std::collections::BTreeSet<_> = s.validation.iter().map(|w| w.record).collect();
        assert_eq!((tr.len(), va.len()), (4, 1));
        assert!(tr.is_disjoint(&va));
        assert_eq!(s.train.len() + s.validation.len(), ds.windows(&spec).unwrap().len());
    }

    #[test]
    fn single_record_splits_by_window() {
        let ds = named(1);
        let s = ds.split(&WindowSpec::new(40, 10, 40), 0.8, 0).unwrap();
        assert_eq!(s.unit, SplitUnit::Window);
        assert_eq!((s.train.len(), s.validation.len()), (4, 1));
        assert!(s.train.iter().all(|w| w.window.offset < s.validation[0].window.offset));
    }

    #[test]
    fn short_records_are_rejected() {
        assert!(named(2).split(&WindowSpec::new(300, 50, 50), 0.8, 0).is_err());
        assert!(Dataset::default().split(&WindowSpec::new(4, 2, 1), 0.8, 0).is_err());
    }

    #[test]
    fn load_reads_sorted_csvs() {
        let dir = tempfile::tempdir().unwrap();
        for (i, name) in ["b.csv", "a.csv"].iter().enumerate() {
            crate::io::write_record_csv(&dir.path().join(name), &record(50, i as f64)).unwrap();
        }
        let ds = Dataset::load(dir.path()).unwrap();
        assert_eq!(ds.records[0].name, "a");
        assert_eq!(ds.records[1].name, "b");
        assert!(Dataset::load(&dir.path().join("missing")).is_err());
    }
}
