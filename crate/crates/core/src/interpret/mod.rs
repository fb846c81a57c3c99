//! Integrated-gradients attribution and spatial-attention export.

mod attention;
mod ig;
mod table;

pub use attention::{export_attention, snapshots_to_csv, AttentionSnapshot, BlockAttention};
pub use ig::{attribute_window, integrated_gradients, model_target, IgResult, IgTarget};
pub use table::{window_lead_attribution, AttributionTable};
