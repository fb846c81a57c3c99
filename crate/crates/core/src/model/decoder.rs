//! Multi-scale transformer decoder over the encoder memory.

use super::config::{ConvPadding, ModelConfig};
use super::encoder::linear;
use super::params::Bound;
use crate::error::{Error, Result};
use crate::numerics::{Padding, Tape, Tensor, Var};

pub const MASK_VALUE: f64 = -1e30;

/// Sinusoidal table `PE[t, 2i] = sin(t / 10000^{2i/D})`, `PE[t, 2i+1] = cos(..)`.
pub fn positional_encoding(t: usize, d_model: usize) -> Result<Tensor> {
    if d_model == 0 || d_model % 2 != 0 {
        return Err(Error::config(format!("positional encoding needs an even width, got {d_model}")));
    }
    let mut pe = Tensor::zeros(&[t.max(1), d_model]);
    for pos in 0..t {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            pe.set(&[pos, 2 * i], angle.sin());
            pe.set(&[pos, 2 * i + 1], angle.cos());
        }
    }
    Ok(pe)
}

fn causal_mask(t: usize) -> Tensor {
    let mut m = Tensor::zeros(&[t, t]);
    for i in 0..t {
        for j in i + 1..t {
            m.set(&[i, j], MASK_VALUE);
        }
    }
    m
}

/// Attention probabilities recorded per decoder layer, `[H, T_q, T_k]`.
#[derive(Clone, Debug, Default)]
pub struct DecoderTrace {
    pub self_weights: Vec<Var>,
    pub cross_weights: Vec<Var>,
}

/// `ReLU` convolution branches over time, concatenated to `D_model`, projected
/// and added back: `LayerNorm(H + Proj(concat))`. `h` is `[T, D_model]`.
pub fn decoder_mstfe(tp: &mut Tape, cfg: &ModelConfig, p: &Bound, index: usize, h: Var) -> Result<Var> {
    let prefix = format!("dec.mstfe{index}");
    let padding = match cfg.decoder_padding {
        ConvPadding::Same => Padding::Same,
        ConvPadding::Causal => Padding::Causal,
    };
    let hc = tp.transpose_last(h)?; // [D, T]
    let mut branches = Vec::with_capacity(cfg.mstfe_kernels.len());
    for &r in &cfg.mstfe_kernels {
        let z = tp.conv1d(
            hc,
            p.var(&format!("{prefix}.conv{r}.w")),
            p.var(&format!("{prefix}.conv{r}.b")),
            padding,
        )?;
        branches.push(tp.relu(z));
    }
    let cat = tp.concat(&branches, 0)?;
    let cat = tp.transpose_last(cat)?;
    let proj = linear(tp, cat, p.var(&format!("{prefix}.proj.w")), p.var(&format!("{prefix}.proj.b")))?;
    let sum = tp.add(h, proj)?;
    tp.layer_norm(sum, p.var(&format!("{prefix}.ln.g")), p.var(&format!("{prefix}.ln.b")))
}

fn split_heads(tp: &mut Tape, x: Var, heads: usize) -> Result<Var> {
    let (t, d) = (tp.shape(x)[0], tp.shape(x)[1]);
    let r = tp.reshape(x, &[t, heads, d / heads])?;
    tp.permute(r, &[1, 0, 2])
}

fn merge_heads(tp: &mut Tape, x: Var) -> Result<Var> {
    let (h, t, dh) = (tp.shape(x)[0], tp.shape(x)[1], tp.shape(x)[2]);
    let r = tp.permute(x, &[1, 0, 2])?;
    tp.reshape(r, &[t, h * dh])
}

fn dense(tp: &mut Tape, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    linear(tp, x, p.var(&format!("{prefix}.w")), p.var(&format!("{prefix}.b")))
}

/// Multi-head attention of `x [T_q, D]` over `kv [T_k, *]`; returns the
/// projected output and the attention probabilities.
fn attention(
    tp: &mut Tape,
    cfg: &ModelConfig,
    p: &Bound,
    prefix: &str,
    x: Var,
    kv: Var,
    causal: bool,
) -> Result<(Var, Var)> {
    let dh = cfg.d_model / cfg.heads;
    let q = dense(tp, p, &format!("{prefix}.q"), x)?;
    let k = dense(tp, p, &format!("{prefix}.k"), kv)?;
    let v = dense(tp, p, &format!("{prefix}.v"), kv)?;
    let (q, k, v) = (
        split_heads(tp, q, cfg.heads)?,
        split_heads(tp, k, cfg.heads)?,
        split_heads(tp, v, cfg.heads)?,
    );
    let kt = tp.transpose_last(k)?;
    let s = tp.matmul(q, kt)?;
    let mut s = tp.scale(s, 1.0 / (dh as f64).sqrt());
    if causal {
        let mask = tp.constant(causal_mask(tp.shape(x)[0]));
        s = tp.add(s, mask)?;
    }
    let w = tp.softmax_last(s);
    let o = tp.matmul(w, v)?;
    let o = merge_heads(tp, o)?;
    Ok((dense(tp, p, &format!("{prefix}.o"), o)?, w))
}

fn add_norm(tp: &mut Tape, p: &Bound, prefix: &str, x: Var, y: Var) -> Result<Var> {
    let s = tp.add(x, y)?;
    tp.layer_norm(s, p.var(&format!("{prefix}.g")), p.var(&format!("{prefix}.b")))
}

fn decoder_layer(
    tp: &mut Tape,
    cfg: &ModelConfig,
    p: &Bound,
    j: usize,
    x: Var,
    memory: Var,
    trace: &mut DecoderTrace,
) -> Result<Var> {
    let pre = format!("dec.layer{j}");
    let (sa, sw) = attention(tp, cfg, p, &format!("{pre}.self"), x, x, true)?;
    let x = add_norm(tp, p, &format!("{pre}.ln1"), x, sa)?;
    let (ca, cw) = attention(tp, cfg, p, &format!("{pre}.cross"), x, memory, false)?;
    let x = add_norm(tp, p, &format!("{pre}.ln2"), x, ca)?;
    let hid = dense(tp, p, &format!("{pre}.ffn1"), x)?;
    let hid = tp.relu(hid);
    let ff = dense(tp, p, &format!("{pre}.ffn2"), hid)?;
    trace.self_weights.push(sw);
    trace.cross_weights.push(cw);
    add_norm(tp, p, &format!("{pre}.ln3"), x, ff)
}

/// Decoder inputs `[start, y_0, .., y_{T-2}]` as `[T, 1]`.
pub fn shift_right(tp: &mut Tape, p: &Bound, target: Var) -> Result<Var> {
    let t = tp.shape(target)[0];
    let flat = tp.reshape(target, &[t])?;
    let start = p.var("dec.start");
    let seq = if t > 1 {
        let head = tp.slice(flat, 0, 0, t - 1)?;
        tp.concat(&[start, head], 0)?
    } else {
        start
    };
    tp.reshape(seq, &[t, 1])
}

/// Runs the decoder on already-shifted inputs `[T, 1]`; returns `[T, 1]`.
pub fn decode_teacher_forced(
    tp: &mut Tape,
    cfg: &ModelConfig,
    p: &Bound,
    memory: Var,
    shifted: Var,
) -> Result<(Var, DecoderTrace)> {
    let t = tp.shape(shifted)[0];
    if tp.shape(shifted) != [t, 1] || tp.shape(memory).get(1) != Some(&cfg.memory_width()) {
        return Err(Error::ShapeMismatch {
            op: "decode",
            lhs: tp.shape(memory).to_vec(),
            rhs: tp.shape(shifted).to_vec(),
        });
    }
    let emb = linear(tp, shifted, p.var("dec.embed.w"), p.var("dec.embed.b"))?;
    let pe = tp.constant(positional_encoding(t, cfg.d_model)?);
    let mut h = tp.add(emb, pe)?;
    h = decoder_mstfe(tp, cfg, p, 0, h)?;
    let mut trace = DecoderTrace::default();
    for j in 0..cfg.blocks {
        h = decoder_layer(tp, cfg, p, j, h, memory, &mut trace)?;
        if j + 1 < cfg.blocks && j + 1 < cfg.decoder_mstfe_count() {
            h = decoder_mstfe(tp, cfg, p, j + 1, h)?;
        }
    }
    let y = linear(tp, h, p.var("dec.head.w"), p.var("dec.head.b"))?;
    Ok((y, trace))
}

/// Greedy rollout: step `t` decodes `[start, ŷ_0, .., ŷ_{t-1}]` and keeps the
/// last output. Returns `[steps, 1]`, or `None` for zero steps.
pub fn decode_autoregressive(
    tp: &mut Tape,
    cfg: &ModelConfig,
    p: &Bound,
    memory: Var,
    steps: usize,
) -> Result<Option<Var>> {
    let mut inputs = vec![p.var("dec.start")];
    let mut outputs = Vec::with_capacity(steps);
    for t in 0..steps {
        let seq = tp.concat(&inputs, 0)?;
        let seq = tp.reshape(seq, &[t + 1, 1])?;
        let (y, _) = decode_teacher_forced(tp, cfg, p, memory, seq)?;
        let last = tp.slice(y, 0, t, 1)?;
        let last = tp.reshape(last, &[1])?;
        outputs.push(last);
        inputs.push(last);
    }
    if outputs.is_empty() {
        return Ok(None);
    }
    let cat = tp.concat(&outputs, 0)?;
    Ok(Some(tp.reshape(cat, &[steps, 1])?))
}
