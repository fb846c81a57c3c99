use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AdjacencyMode;

/// Output width of the decoder head.
pub const D_Y: usize = 1;

/// How the temporal-attention output is combined with the block input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaResidual {
    /// `LayerNorm(Linear(O) + X')`.
    #[default]
    ProjectThenAdd,
    /// `LayerNorm(Linear(O + X'))`.
    AddThenProject,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderMstfePlacement {
    /// After the embedding and after every decoder layer but the last.
    #[default]
    PerLayer,
    EmbeddingOnly,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvPadding {
    #[default]
    Same,
    Causal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub leads: usize,
    pub t_in: usize,
    pub t_out: usize,
    /// Lifted per-lead feature width D'.
    pub d_lift: usize,
    /// Graph-convolution output width D_chev_filt.
    pub d_cheb: usize,
    pub d_model: usize,
    /// Encoder blocks and decoder layers.
    pub blocks: usize,
    pub heads: usize,
    /// Chebyshev order count, also the spatial-attention head count.
    pub k_cheb: usize,
    pub mstfe_kernels: Vec<usize>,
    pub adjacency: AdjacencyMode,
    pub ffn_width: usize,
    pub ta_residual: TaResidual,
    pub decoder_mstfe: DecoderMstfePlacement,
    pub decoder_padding: ConvPadding,
    /// One set of graph masks for all encoder blocks instead of one per block.
    pub share_masks: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            leads: 4,
            t_in: 100,
            t_out: 50,
            d_lift: 16,
            d_cheb: 16,
            d_model: 32,
            blocks: 2,
            heads: 2,
            k_cheb: 3,
            mstfe_kernels: vec![3, 5, 7],
            adjacency: AdjacencyMode::Identity,
            ffn_width: 64,
            ta_residual: TaResidual::ProjectThenAdd,
            decoder_mstfe: DecoderMstfePlacement::PerLayer,
            decoder_padding: ConvPadding::Same,
            share_masks: false,
        }
    }
}

impl ModelConfig {
    /// L_m=4, T_in=32, T_out=8, D'=8, D_chev_filt=8, D_model=12, N=2, H=2, K=3.
    pub fn toy() -> Self {
        ModelConfig {
            t_in: 32,
            t_out: 8,
            d_lift: 8,
            d_cheb: 8,
            d_model: 12,
            ffn_width: 24,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("leads", self.leads),
            ("t_in", self.t_in),
            ("t_out", self.t_out),
            ("d_lift", self.d_lift),
            ("d_cheb", self.d_cheb),
            ("d_model", self.d_model),
            ("blocks", self.blocks),
            ("heads", self.heads),
            ("k_cheb", self.k_cheb),
            ("ffn_width", self.ffn_width),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        if self.d_lift % self.heads != 0 {
            return Err(Error::config(format!(
                "d_lift {} is not divisible by {} heads",
                self.d_lift, self.heads
            )));
        }
        if self.blocks > 1 && self.d_cheb % self.heads != 0 {
            return Err(Error::config(format!(
                "d_cheb {} feeds later encoder blocks and must be divisible by {} heads",
                self.d_cheb, self.heads
            )));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::config("d_model must be even for the positional encoding"));
        }
        if self.mstfe_kernels.is_empty() || self.mstfe_kernels.iter().any(|k| k % 2 == 0) {
            return Err(Error::config("MSTFE kernel sizes must be a non-empty set of odd sizes"));
        }
        if self.d_model < self.mstfe_kernels.len() {
            return Err(Error::config("d_model must give every decoder MSTFE branch at least one channel"));
        }
        if let AdjacencyMode::Custom(rows) = &self.adjacency {
            if rows.len() != self.leads {
                return Err(Error::config("custom adjacency size differs from the lead count"));
            }
        }
        Ok(())
    }

    /// Feature width entering encoder block `b`.
    pub fn block_width(&self, b: usize) -> usize {
        if b == 0 {
            self.d_lift
        } else {
            self.d_cheb
        }
    }

    /// Decoder MSTFE branch widths; the remainder goes to the first branch.
    pub fn decoder_branch_widths(&self) -> Vec<usize> {
        let n = self.mstfe_kernels.len();
        let base = self.d_model / n;
        let mut w = vec![base; n];
        w[0] += self.d_model - base * n;
        w
    }

    pub fn decoder_mstfe_count(&self) -> usize {
        match self.decoder_mstfe {
            DecoderMstfePlacement::PerLayer => self.blocks,
            DecoderMstfePlacement::EmbeddingOnly => 1,
        }
    }

    pub fn memory_width(&self) -> usize {
        self.leads * self.d_cheb
    }
}
