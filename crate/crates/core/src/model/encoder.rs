//! Encoder blocks. Features are kept time-major, `[L, T, d]`.

use super::config::{ModelConfig, TaResidual};
use super::params::Bound;
use crate::error::Result;
use crate::graph::{cheb_gcn_time_major, effective_dependency};
use crate::numerics::{Padding, Tape, Var};

pub(crate) fn linear(tp: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tp.matmul(x, w)?;
    tp.add(y, b)
}

/// Per-block intermediate values, kept for inspection and export.
#[derive(Clone, Debug, Default)]
pub struct EncoderTrace {
    /// Raw scaled dot products of each block, `[L, H, T, T]`.
    pub ta_logits: Vec<Var>,
    /// Accumulated logits `A^{(l)}`, `[L, H, T, T]`.
    pub ta_accumulated: Vec<Var>,
    /// Softmax of the accumulated logits.
    pub ta_weights: Vec<Var>,
    /// Spatial-attention scores, `[K, L, L]`.
    pub s_sa: Vec<Var>,
    /// Effective dependency factors, `[K, L, L]`.
    pub p_eff: Vec<Var>,
    /// Block outputs, `[L, T, D_chev_filt]`.
    pub block_out: Vec<Var>,
}

/// `x [L, T]` -> `[L, T, D']` through a shared bias-free lift `w [1, D']`.
pub fn lift_input(tp: &mut Tape, x: Var, w: Var) -> Result<Var> {
    let (l, t) = (tp.shape(x)[0], tp.shape(x)[1]);
    let x3 = tp.reshape(x, &[l, t, 1])?;
    tp.matmul(x3, w)
}

pub struct TemporalAttention {
    pub output: Var,
    pub logits: Var,
    pub accumulated: Var,
    pub weights: Var,
}

/// Multi-head self-attention along time, independently per lead, with the
/// previous block's logits added before the softmax.
pub fn temporal_attention(
    tp: &mut Tape,
    cfg: &ModelConfig,
    p: &Bound,
    prefix: &str,
    x: Var,
    a_prev: Option<Var>,
) -> Result<TemporalAttention> {
    let (l, t, d) = (tp.shape(x)[0], tp.shape(x)[1], tp.shape(x)[2]);
    let h = cfg.heads;
    let dh = d / h;
    let x4 = tp.reshape(x, &[l, 1, t, d])?;
    let mut heads = [x4; 3];
    for (slot, m) in heads.iter_mut().zip(["q", "k", "v"]) {
        let base = tp.matmul(x4, p.var(&format!("{prefix}.ta.w{m}")))?;
        *slot = tp.matmul(base, p.var(&format!("{prefix}.ta.head_{m}")))?; // [L, H, T, dh]
    }
    let [q, k, v] = heads;
    let kt = tp.transpose_last(k)?;
    let raw = tp.matmul(q, kt)?;
    let logits = tp.scale(raw, 1.0 / (dh as f64).sqrt());
    let accumulated = match a_prev {
        Some(a) => tp.add(logits, a)?,
        None => logits,
    };
    let weights = tp.softmax_last(accumulated);
    let o = tp.matmul(weights, v)?; // [L, H, T, dh]
    let o = tp.permute(o, &[0, 2, 1, 3])?;
    let o = tp.reshape(o, &[l, t, d])?;
    let (w, b) = (p.var(&format!("{prefix}.ta.out.w")), p.var(&format!("{prefix}.ta.out.b")));
    let pre = match cfg.ta_residual {
        TaResidual::ProjectThenAdd => {
            let proj = linear(tp, o, w, b)?;
            tp.add(proj, x)?
        }
        TaResidual::AddThenProject => {
            let sum = tp.add(o, x)?;
            linear(tp, sum, w, b)?
        }
    };
    let output = tp.layer_norm(pre, p.var(&format!("{prefix}.ta.ln.g")), p.var(&format!("{prefix}.ta.ln.b")))?;
    Ok(TemporalAttention {
        output,
        logits,
        accumulated,
        weights,
    })
}

/// Raw spatial scores `[K, L, L]` from time-pooled lead descriptors.
pub fn spatial_attention(tp: &mut Tape, p: &Bound, prefix: &str, y: Var) -> Result<Var> {
    let d = tp.shape(y)[2];
    let pooled = tp.mean_axis(y, 1)?; // [L, d]
    let q = tp.matmul(pooled, p.var(&format!("{prefix}.sa.wq")))?; // [K, L, d]
    let k = tp.matmul(pooled, p.var(&format!("{prefix}.sa.wk")))?;
    let kt = tp.transpose_last(k)?;
    let s = tp.matmul(q, kt)?;
    Ok(tp.scale(s, 1.0 / (d as f64).sqrt()))
}

/// Parallel gated branches `tanh(Z_E)·σ(Z_F)`, concatenated and fused back to
/// `D_chev_filt`. `h` is `[L, T, Dc]`.
pub fn mstfe_gtu(tp: &mut Tape, cfg: &ModelConfig, p: &Bound, prefix: &str, h: Var) -> Result<Var> {
    let dc = tp.shape(h)[2];
    let hc = tp.permute(h, &[0, 2, 1])?; // [L, Dc, T]
    let mut branches = Vec::with_capacity(cfg.mstfe_kernels.len());
    for &r in &cfg.mstfe_kernels {
        let z = tp.conv1d(
            hc,
            p.var(&format!("{prefix}.gtu{r}.w")),
            p.var(&format!("{prefix}.gtu{r}.b")),
            Padding::Same,
        )?;
        let ze = tp.slice(z, 1, 0, dc)?;
        let zf = tp.slice(z, 1, dc, dc)?;
        let e = tp.tanh(ze);
        let f = tp.sigmoid(zf);
        branches.push(tp.mul(e, f)?);
    }
    let cat = tp.concat(&branches, 1)?;
    let cat = tp.permute(cat, &[0, 2, 1])?;
    linear(
        tp,
        cat,
        p.var(&format!("{prefix}.gtu.fuse.w")),
        p.var(&format!("{prefix}.gtu.fuse.b")),
    )
}

/// Graph inputs shared by all blocks: static adjacency and stacked basis.
#[derive(Clone, Copy, Debug)]
pub struct GraphVars {
    pub adjacency: Var,
    pub basis: Var,
}

/// One encoder block; returns `(X_block_out, A_acc)`.
pub fn encoder_block(
    tp: &mut Tape,
    cfg: &ModelConfig,
    p: &Bound,
    graph: GraphVars,
    block: usize,
    x: Var,
    a_prev: Option<Var>,
    trace: &mut EncoderTrace,
) -> Result<(Var, Var)> {
    let prefix = format!("enc{block}");
    let ta = temporal_attention(tp, cfg, p, &prefix, x, a_prev)?;
    let s_sa = spatial_attention(tp, p, &prefix, ta.output)?;
    let masks = if cfg.share_masks {
        p.var("gcn.masks")
    } else {
        p.var(&format!("{prefix}.gcn.masks"))
    };
    let p_eff = effective_dependency(tp, s_sa, graph.adjacency, masks)?;
    let h_gcn = cheb_gcn_time_major(tp, ta.output, p_eff, graph.basis, p.var(&format!("{prefix}.gcn.theta")))?;
    let h_m = mstfe_gtu(tp, cfg, p, &prefix, h_gcn)?;
    let res = linear(tp, ta.output, p.var(&format!("{prefix}.res.w")), p.var(&format!("{prefix}.res.b")))?;
    let sum = tp.add(h_m, res)?;
    let act = tp.relu(sum);
    let out = tp.layer_norm(act, p.var(&format!("{prefix}.ln.g")), p.var(&format!("{prefix}.ln.b")))?;
    trace.ta_logits.push(ta.logits);
    trace.ta_accumulated.push(ta.accumulated);
    trace.ta_weights.push(ta.weights);
    trace.s_sa.push(s_sa);
    trace.p_eff.push(p_eff);
    trace.block_out.push(out);
    Ok((out, ta.accumulated))
}

/// `x [L, T_in]` -> memory `[N·T_in, L·D_chev_filt]`.
pub fn encode(tp: &mut Tape, cfg: &ModelConfig, p: &Bound, graph: GraphVars, x: Var) -> Result<(Var, EncoderTrace)> {
    let mut trace = EncoderTrace::default();
    let mut h = lift_input(tp, x, p.var("lift.w"))?;
    let mut acc = None;
    for b in 0..cfg.blocks {
        let (out, a) = encoder_block(tp, cfg, p, graph, b, h, acc, &mut trace)?;
        h = out;
        acc = Some(a);
    }
    let memory = memory_from_blocks(tp, &trace.block_out)?;
    Ok((memory, trace))
}

/// Concatenates block outputs on time and merges leads with features.
pub fn memory_from_blocks(tp: &mut Tape, blocks: &[Var]) -> Result<Var> {
    let cat = tp.concat(blocks, 1)?; // [L, N·T, Dc]
    let (l, t, dc) = (tp.shape(cat)[0], tp.shape(cat)[1], tp.shape(cat)[2]);
    let perm = tp.permute(cat, &[1, 0, 2])?;
    tp.reshape(perm, &[t, l * dc])
}
