use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{decode_autoregressive, encode, Model};
use crate::numerics::{Tape, Tensor, Var};

/// Scalar reduction of the predicted sequence that attributions explain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum IgTarget {
    /// Sum over all predicted samples.
    #[default]
    Sum,
    /// A single predicted sample.
    Sample(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct IgResult {
    /// Same shape as the input.
    pub attributions: Tensor,
    pub f_input: f64,
    pub f_baseline: f64,
    pub steps: usize,
}

impl IgResult {
    /// `|Σ IG − (F(x) − F(x'))|`.
    pub fn completeness_gap(&self) -> f64 {
        let total: f64 = self.attributions.data().iter().sum();
        (total - (self.f_input - self.f_baseline)).abs()
    }

    /// Gap relative to `|F(x) − F(x')|`.
    pub fn relative_gap(&self) -> f64 {
        self.completeness_gap() / (self.f_input - self.f_baseline).abs()
    }
}

fn value_and_grad<F>(f: &F, x: &Tensor) -> Result<(f64, Tensor)>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tp = Tape::new();
    let v = tp.param(x.clone());
    let out = f(&mut tp, v)?;
    if tp.value(out).len() != 1 {
        return Err(Error::InvalidShape {
            shape: tp.shape(out).to_vec(),
            reason: "attribution target must be a scalar".into(),
        });
    }
    tp.check_finite(out)?;
    tp.backward(out)?;
    let g = tp.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
    Ok((tp.value(out).item(), g))
}

/// Right Riemann sum of the path integral from `baseline` to `x`:
/// `IG_i = (x_i − x'_i) · (1/m) Σ_{s=1..m} ∂F/∂x_i(x' + (s/m)(x − x'))`.
/// Path points run in parallel and are summed in path order.
pub fn integrated_gradients<F>(f: F, x: &Tensor, baseline: &Tensor, steps: usize) -> Result<IgResult>
where
    F: Fn(&mut Tape, Var) -> Result<Var> + Sync,
{
    if x.shape() != baseline.shape() {
        return Err(Error::ShapeMismatch {
            op: "integrated_gradients",
            lhs: x.shape().to_vec(),
            rhs: baseline.shape().to_vec(),
        });
    }
    if steps == 0 {
        return Err(Error::config("integrated gradients needs at least one step"));
    }
    let delta: Vec<f64> = x.data().iter().zip(baseline.data()).map(|(a, b)| a - b).collect();
    let points: Vec<Result<(f64, Tensor)>> = (1..=steps)
        .into_par_iter()
        .map(|s| {
            let alpha = s as f64 / steps as f64;
            let data = baseline.data().iter().zip(&delta).map(|(b, d)| b + alpha * d).collect();
            value_and_grad(&f, &Tensor::new(x.shape().to_vec(), data)?)
        })
        .collect();
    let mut sum = vec![0.0; x.len()];
    let mut f_input = f64::NAN;
    for (s, p) in points.into_iter().enumerate() {
        let (val, g) = p?;
        if s + 1 == steps {
            f_input = val;
        }
        for (acc, gi) in sum.iter_mut().zip(g.data()) {
            *acc += gi;
        }
    }
    let f_baseline = {
        let mut tp = Tape::new();
        let v = tp.constant(baseline.clone());
        let out = f(&mut tp, v)?;
        tp.value(out).item()
    };
    let attr = sum
        .iter()
        .zip(&delta)
        .map(|(g, d)| d * g / steps as f64)
        .collect();
    Ok(IgResult {
        attributions: Tensor::new(x.shape().to_vec(), attr)?,
        f_input,
        f_baseline,
        steps,
    })
}

/// Autoregressive prediction of `model` for an input node `[L, T_in]`,
/// reduced to a scalar by `target`.
pub fn model_target(model: &Model, target: IgTarget) -> impl Fn(&mut Tape, Var) -> Result<Var> + Sync + '_ {
    move |tp: &mut Tape, x: Var| {
        let p = model.params.bind(tp, false);
        let graph = model.graph_vars(tp);
        let (memory, _) = encode(tp, &model.config, &p, graph, x)?;
        let y = decode_autoregressive(tp, &model.config, &p, memory, model.config.t_out)?
            .ok_or_else(|| Error::config("model predicts no samples"))?;
        match target {
            IgTarget::Sum => Ok(tp.sum_all(y)),
            IgTarget::Sample(j) => {
                if j >= model.config.t_out {
                    return Err(Error::config(format!(
                        "target sample {j} outside the {}-sample prediction",
                        model.config.t_out
                    )));
                }
                let s = tp.slice(y, 0, j, 1)?;
                Ok(tp.sum_all(s))
            }
        }
    }
}

/// Integrated gradients of the model's prediction against a zero baseline.
pub fn attribute_window(model: &Model, x: &Tensor, steps: usize, target: IgTarget) -> Result<IgResult> {
    integrated_gradients(model_target(model, target), x, &Tensor::zeros(x.shape()), steps)
}
