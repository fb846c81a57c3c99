use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{encode, Model};
use crate::numerics::{Tape, Tensor};

/// Spatial attention of one encoder block, `[K][L][L]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockAttention {
    pub block: usize,
    pub s_sa: Vec<Vec<Vec<f64>>>,
    pub p_eff: Vec<Vec<Vec<f64>>>,
    /// `argmax[k][i]`: destination lead receiving source lead `i`'s largest weight.
    pub argmax: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionSnapshot {
    /// Sample offset of the input window within its record, when known.
    pub window_offset: Option<usize>,
    pub blocks: Vec<BlockAttention>,
}

fn nested(t: &Tensor) -> Result<Vec<Vec<Vec<f64>>>> {
    let [k, l, m] = t.shape() else {
        return Err(Error::InvalidShape {
            shape: t.shape().to_vec(),
            reason: "expected [K, L, L]".into(),
        });
    };
    Ok((0..*k)
        .map(|a| (0..*l).map(|i| (0..*m).map(|j| t.get(&[a, i, j])).collect()).collect())
        .collect())
}

fn row_argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
        .0
}

/// Runs the encoder on `x [L, T_in]` and returns the spatial scores and
/// effective dependency factors recorded by that pass.
pub fn export_attention(model: &Model, x: &Tensor, window_offset: Option<usize>) -> Result<AttentionSnapshot> {
    let mut tp = Tape::new();
    let p = model.params.bind(&mut tp, false);
    let graph = model.graph_vars(&mut tp);
    let xv = tp.constant(x.clone());
    let (_, trace) = encode(&mut tp, &model.config, &p, graph, xv)?;
    let blocks = trace
        .s_sa
        .iter()
        .zip(&trace.p_eff)
        .enumerate()
        .map(|(block, (&s, &pe))| {
            let p_eff = nested(tp.value(pe))?;
            let argmax = p_eff.iter().map(|m| m.iter().map(|r| row_argmax(r)).collect()).collect();
            Ok(BlockAttention {
                block,
                s_sa: nested(tp.value(s))?,
                p_eff,
                argmax,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AttentionSnapshot { window_offset, blocks })
}

/// Long-format CSV over several snapshots:
/// `window_offset,block,head,source,destination,s_sa,p_eff`, leads 1-based.
pub fn snapshots_to_csv(snapshots: &[AttentionSnapshot]) -> String {
    let mut out = String::from("window_offset,block,head,source,destination,s_sa,p_eff\n");
    for snap in snapshots {
        let offset = snap.window_offset.map_or_else(String::new, |o| o.to_string());
        for b in &snap.blocks {
            for (k, (s, p)) in b.s_sa.iter().zip(&b.p_eff).enumerate() {
                for (i, (sr, pr)) in s.iter().zip(p).enumerate() {
                    for (j, (sv, pv)) in sr.iter().zip(pr).enumerate() {
                        let _ = writeln!(out, "{offset},{},{k},{},{},{sv},{pv}", b.block, i + 1, j + 1);
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn input(cfg: &ModelConfig, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(
            vec![cfg.leads, cfg.t_in],
            (0..cfg.leads * cfg.t_in).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn rows_are_distributions_with_argmax() {
        let model = Model::new(ModelConfig::toy(), 2).unwrap();
        let snap = export_attention(&model, &input(&model.config, 1), Some(64)).unwrap();
        assert_eq!(snap.blocks.len(), model.config.blocks);
        for b in &snap.blocks {
            assert_eq!(b.p_eff.len(), model.config.k_cheb);
            for (m, am) in b.p_eff.iter().zip(&b.argmax) {
                assert_eq!(m.len(), model.config.leads);
                for (row, &j) in m.iter().zip(am) {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                    assert!(row.iter().all(|&v| v <= row[j]));
                }
            }
        }
        let csv = snapshots_to_csv(&[snap.clone(), snap]);
        assert_eq!(csv.lines().count(), 1 + 2 * 2 * 3 * 4 * 4);
        assert!(csv.lines().nth(1).unwrap().starts_with("64,0,0,1,1,"));
    }

    #[test]
    fn identical_leads_give_uniform_rows() {
        // The static prior must itself treat leads alike for the rows to be uniform.
        let cfg = ModelConfig {
            adjacency: crate::graph::AdjacencyMode::Custom(vec![vec![1.0; 4]; 4]),
            ..ModelConfig::toy()
        };
        let model = Model::new(cfg, 3).unwrap();
        let row: Vec<f64> = (0..model.config.t_in).map(|t| (t as f64 * 0.3).sin()).collect();
        let x = Tensor::from_rows(&vec![row; model.config.leads]).unwrap();
        let snap = export_attention(&model, &x, None).unwrap();
        for m in snap.blocks.iter().flat_map(|b| &b.p_eff) {
            for row in m {
                for v in row {
                    assert!((v - 1.0 / model.config.leads as f64).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn export_matches_forward_pass_bitwise() {
        let model = Model::new(ModelConfig::toy(), 4).unwrap();
        let x = input(&model.config, 5);
        let snap = export_attention(&model, &x, None).unwrap();
        let mut tp = Tape::new();
        let p = model.params.bind(&mut tp, true);
        let xv = tp.constant(x.clone());
        let tv = tp.constant(Tensor::zeros(&[model.config.t_out, 1]));
        let fwd = model.forward_teacher(&mut tp, &p, xv, tv).unwrap();
        for (b, &pe) in snap.blocks.iter().zip(&fwd.encoder.p_eff) {
            let flat: Vec<u64> = b.p_eff.iter().flatten().flatten().map(|v| v.to_bits()).collect();
            let want: Vec<u64> = tp.value(pe).data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(flat, want);
        }
        assert_eq!(snap, export_attention(&model, &x, None).unwrap());
    }
}
