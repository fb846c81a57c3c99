use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Var};

/// Coefficient of determination, or `Undefined` for a constant reference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RSquared {
    Value(f64),
    Undefined(Undefined),
}

/// Serialized as the string `"undefined"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Undefined {
    Undefined,
}

impl RSquared {
    pub const UNDEFINED: RSquared = RSquared::Undefined(Undefined::Undefined);

    pub fn value(self) -> Option<f64> {
        match self {
            RSquared::Value(v) => Some(v),
            RSquared::Undefined(_) => None,
        }
    }
}

fn check_pair(pred: &[f64], reference: &[f64]) -> Result<()> {
    if pred.len() != reference.len() || pred.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "metric",
            lhs: vec![pred.len()],
            rhs: vec![reference.len()],
        });
    }
    Ok(())
}

pub fn rmse(pred: &[f64], reference: &[f64]) -> Result<f64> {
    check_pair(pred, reference)?;
    let ss: f64 = pred.iter().zip(reference).map(|(p, y)| (p - y).powi(2)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

/// `1 - SS_res / SS_tot`, with `SS_tot` taken about the reference mean.
pub fn r_squared(pred: &[f64], reference: &[f64]) -> Result<RSquared> {
    check_pair(pred, reference)?;
    let mean = reference.iter().sum::<f64>() / reference.len() as f64;
    let ss_tot: f64 = reference.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot <= f64::EPSILON * reference.len() as f64 * mean.abs().max(1.0).powi(2) {
        return Ok(RSquared::UNDEFINED);
    }
    let ss_res: f64 = pred.iter().zip(reference).map(|(p, y)| (p - y).powi(2)).sum();
    Ok(RSquared::Value(1.0 - ss_res / ss_tot))
}

/// Mean squared error between two equally shaped nodes.
pub fn mse_loss(tp: &mut Tape, prediction: Var, target: Var) -> Result<Var> {
    if tp.shape(prediction) != tp.shape(target) {
        return Err(Error::ShapeMismatch {
            op: "mse_loss",
            lhs: tp.shape(prediction).to_vec(),
            rhs: tp.shape(target).to_vec(),
        });
    }
    let diff = tp.sub(prediction, target)?;
    let sq = tp.mul(diff, diff)?;
    Ok(tp.mean_all(sq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, Tensor};
    use proptest::prelude::*;

    #[test]
    fn mse_examples() {
        let mut tp = Tape::new();
        let a = tp.constant(Tensor::from_vec(vec![0.3, -0.2]).unwrap());
        let z = mse_loss(&mut tp, a, a).unwrap();
        assert_eq!(tp.value(z).item(), 0.0);
        let p = tp.constant(Tensor::zeros(&[2]));
        let y = tp.constant(Tensor::ones(&[2]));
        let l = mse_loss(&mut tp, p, y).unwrap();
        assert_eq!(tp.value(l).item(), 1.0);
        let bad = tp.constant(Tensor::ones(&[3]));
        assert!(mse_loss(&mut tp, p, bad).is_err());
    }

    #[test]
    fn mse_gradient_is_two_diff_over_n() {
        let pred = Tensor::from_vec(vec![0.5, -1.0, 2.0]).unwrap();
        let target = Tensor::from_vec(vec![1.0, 1.0, 1.0]).unwrap();
        let mut tp = Tape::new();
        let p = tp.param(pred.clone());
        let y = tp.constant(target.clone());
        let l = mse_loss(&mut tp, p, y).unwrap();
        tp.backward(l).unwrap();
        for ((g, a), b) in tp.grad(p).unwrap().data().iter().zip(pred.data()).zip(target.data()) {
            assert!((g - 2.0 * (a - b) / 3.0).abs() < 1e-15);
        }
        let rep = grad_check(
            |tp, v| {
                let y = tp.constant(target.clone());
                mse_loss(tp, v[0], y)
            },
            &[pred],
            1e-5,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-8);
    }

    #[test]
    fn metric_examples() {
        let y = [0.0, 1.0, 2.0];
        assert_eq!(rmse(&y, &y).unwrap(), 0.0);
        assert_eq!(r_squared(&y, &y).unwrap(), RSquared::Value(1.0));
        assert_eq!(r_squared(&[1.0; 3], &y).unwrap(), RSquared::Value(0.0));
        let p = [0.0, 1.0, 1.0];
        assert!((rmse(&p, &y).unwrap() - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((r_squared(&p, &y).unwrap().value().unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_reference_is_undefined() {
        let r = r_squared(&[1.0, 2.0], &[3.0, 3.0]).unwrap();
        assert_eq!(r, RSquared::UNDEFINED);
        assert_eq!(serde_json::to_string(&r).unwrap(), "\"undefined\"");
        assert_eq!(serde_json::to_string(&RSquared::Value(0.5)).unwrap(), "0.5");
        assert!(rmse(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn metric_invariances(v in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 2..30), c in -50.0f64..50.0) {
            let (p, y): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let (ps, ys): (Vec<f64>, Vec<f64>) = (p.iter().map(|x| x + c).collect(), y.iter().map(|x| x + c).collect());
            if let (RSquared::Value(a), RSquared::Value(b)) = (r_squared(&p, &y).unwrap(), r_squared(&ps, &ys).unwrap()) {
                prop_assert!((a - b).abs() < 1e-6 * a.abs().max(1.0));
            }
            let (pn, yn): (Vec<f64>, Vec<f64>) = (p.iter().map(|x| -x).collect(), y.iter().map(|x| -x).collect());
            prop_assert_eq!(rmse(&p, &y).unwrap(), rmse(&pn, &yn).unwrap());
        }
    }
}
