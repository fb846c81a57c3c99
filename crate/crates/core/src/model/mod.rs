//! Graph-attention encoder and multi-scale decoder.

mod config;
mod decoder;
mod encoder;
mod params;

pub use config::{ConvPadding, DecoderMstfePlacement, ModelConfig, TaResidual, D_Y};
pub use decoder::{
    decode_autoregressive, decode_teacher_forced, decoder_mstfe, positional_encoding, shift_right, DecoderTrace,
    MASK_VALUE,
};
pub use encoder::{
    encode, encoder_block, lift_input, memory_from_blocks, mstfe_gtu, spatial_attention, temporal_attention,
    EncoderTrace, GraphVars, TemporalAttention,
};
pub use params::{param_count, param_specs, Bound, Init, ModelParams, ParamSpec};

use crate::error::{Error, Result};
use crate::graph::{build_static_adjacency, LeadGraph};
use crate::numerics::{Tape, Tensor, Var};
use crate::train::mse_loss;

/// Configuration, parameters and the fixed lead graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub graph: LeadGraph,
}

/// Values recorded by one teacher-forced pass.
pub struct Forward {
    pub prediction: Var,
    pub memory: Var,
    pub encoder: EncoderTrace,
    pub decoder: DecoderTrace,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Self::from_params(config, params)
    }

    pub fn from_params(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        params.check_against(&config)?;
        let adjacency = build_static_adjacency(config.leads, &config.adjacency)?;
        let graph = LeadGraph::new(adjacency, config.k_cheb)?;
        Ok(Model { config, params, graph })
    }

    pub fn graph_vars(&self, tp: &mut Tape) -> GraphVars {
        GraphVars {
            adjacency: tp.constant(self.graph.adjacency.clone()),
            basis: tp.constant(self.graph.stacked_basis()),
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let want = [self.config.leads, self.config.t_in];
        if x.shape() != want {
            return Err(Error::ShapeMismatch {
                op: "model input",
                lhs: want.to_vec(),
                rhs: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Teacher-forced pass on `x [L, T_in]` and `target [T_out]`.
    pub fn forward_teacher(&self, tp: &mut Tape, p: &Bound, x: Var, target: Var) -> Result<Forward> {
        let graph = self.graph_vars(tp);
        let (memory, encoder) = encode(tp, &self.config, p, graph, x)?;
        let shifted = shift_right(tp, p, target)?;
        let (prediction, decoder) = decode_teacher_forced(tp, &self.config, p, memory, shifted)?;
        Ok(Forward {
            prediction,
            memory,
            encoder,
            decoder,
        })
    }

    /// Teacher-forced MSE and its gradient for every parameter tensor.
    pub fn loss_and_grads(&self, x: &Tensor, target: &Tensor) -> Result<(f64, Vec<Tensor>)> {
        self.check_input(x)?;
        let mut tp = Tape::new();
        let p = self.params.bind(&mut tp, true);
        let xv = tp.constant(x.clone());
        let tv = tp.constant(target.reshape(&[target.len(), 1])?);
        let fwd = self.forward_teacher(&mut tp, &p, xv, tv)?;
        let loss = mse_loss(&mut tp, fwd.prediction, tv)?;
        tp.check_finite(loss)?;
        tp.backward(loss)?;
        let grads = p
            .vars()
            .iter()
            .map(|&v| tp.grad(v).cloned().ok_or_else(|| Error::Backward("missing parameter gradient".into())))
            .collect::<Result<Vec<_>>>()?;
        Ok((tp.value(loss).item(), grads))
    }

    /// Teacher-forced MSE without gradients.
    pub fn teacher_forced_loss(&self, x: &Tensor, target: &Tensor) -> Result<f64> {
        self.check_input(x)?;
        let mut tp = Tape::new();
        let p = self.params.bind(&mut tp, false);
        let xv = tp.constant(x.clone());
        let tv = tp.constant(target.reshape(&[target.len(), 1])?);
        let fwd = self.forward_teacher(&mut tp, &p, xv, tv)?;
        let loss = mse_loss(&mut tp, fwd.prediction, tv)?;
        Ok(tp.value(loss).item())
    }

    /// Autoregressive prediction of `T_out` samples for `x [L, T_in]`.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.predict_steps(x, self.config.t_out)
    }

    pub fn predict_steps(&self, x: &Tensor, steps: usize) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut tp = Tape::new();
        let p = self.params.bind(&mut tp, false);
        let xv = tp.constant(x.clone());
        let graph = self.graph_vars(&mut tp);
        let (memory, _) = encode(&mut tp, &self.config, &p, graph, xv)?;
        match decode_autoregressive(&mut tp, &self.config, &p, memory, steps)? {
            Some(y) => {
                tp.check_finite(y)?;
                Ok(tp.value(y).data().to_vec())
            }
            None => Ok(Vec::new()),
        }
    }
}
