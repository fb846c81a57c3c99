use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, D_Y};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn spec(out: &mut Vec<ParamSpec>, name: String, shape: &[usize], init: Init) {
    out.push(ParamSpec {
        name,
        shape: shape.to_vec(),
        init,
    });
}

fn dense(out: &mut Vec<ParamSpec>, prefix: &str, d_in: usize, d_out: usize) {
    spec(out, format!("{prefix}.w"), &[d_in, d_out], xavier(d_in, d_out));
    spec(out, format!("{prefix}.b"), &[d_out], Init::Zeros);
}

fn layer_norm(out: &mut Vec<ParamSpec>, prefix: &str, d: usize) {
    spec(out, format!("{prefix}.g"), &[d], Init::Ones);
    spec(out, format!("{prefix}.b"), &[d], Init::Zeros);
}

fn xavier(fan_in: usize, fan_out: usize) -> Init {
    Init::Xavier { fan_in, fan_out }
}

fn masks(out: &mut Vec<ParamSpec>, name: String, cfg: &ModelConfig) {
    spec(out, name, &[cfg.k_cheb, cfg.leads, cfg.leads], Init::Ones);
}

/// Every parameter of the model in a fixed enumeration order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    let (k, dc, dm, h) = (cfg.k_cheb, cfg.d_cheb, cfg.d_model, cfg.heads);
    spec(&mut out, "lift.w".into(), &[1, cfg.d_lift], xavier(1, cfg.d_lift));
    if cfg.share_masks {
        masks(&mut out, "gcn.masks".into(), cfg);
    }
    for b in 0..cfg.blocks {
        let d = cfg.block_width(b);
        let dh = d / h;
        let p = format!("enc{b}");
        for m in ["wq", "wk", "wv"] {
            spec(&mut out, format!("{p}.ta.{m}"), &[d, d], xavier(d, d));
        }
        for m in ["head_q", "head_k", "head_v"] {
            spec(&mut out, format!("{p}.ta.{m}"), &[h, d, dh], xavier(d, dh));
        }
        dense(&mut out, &format!("{p}.ta.out"), d, d);
        layer_norm(&mut out, &format!("{p}.ta.ln"), d);
        for m in ["wq", "wk"] {
            spec(&mut out, format!("{p}.sa.{m}"), &[k, d, d], xavier(d, d));
        }
        if !cfg.share_masks {
            masks(&mut out, format!("{p}.gcn.masks"), cfg);
        }
        spec(&mut out, format!("{p}.gcn.theta"), &[k, d, dc], xavier(d, dc));
        for &r in &cfg.mstfe_kernels {
            spec(&mut out, format!("{p}.gtu{r}.w"), &[2 * dc, dc, r], xavier(dc * r, 2 * dc * r));
            spec(&mut out, format!("{p}.gtu{r}.b"), &[2 * dc], Init::Zeros);
        }
        dense(&mut out, &format!("{p}.gtu.fuse"), cfg.mstfe_kernels.len() * dc, dc);
        dense(&mut out, &format!("{p}.res"), d, dc);
        layer_norm(&mut out, &format!("{p}.ln"), dc);
    }
    spec(&mut out, "dec.start".into(), &[1], Init::Zeros);
    dense(&mut out, "dec.embed", D_Y, dm);
    for m in 0..cfg.decoder_mstfe_count() {
        let p = format!("dec.mstfe{m}");
        for (&r, &w) in cfg.mstfe_kernels.iter().zip(&cfg.decoder_branch_widths()) {
            spec(&mut out, format!("{p}.conv{r}.w"), &[w, dm, r], xavier(dm * r, w * r));
            spec(&mut out, format!("{p}.conv{r}.b"), &[w], Init::Zeros);
        }
        dense(&mut out, &format!("{p}.proj"), dm, dm);
        layer_norm(&mut out, &format!("{p}.ln"), dm);
    }
    for j in 0..cfg.blocks {
        let p = format!("dec.layer{j}");
        for m in ["q", "k", "v", "o"] {
            dense(&mut out, &format!("{p}.self.{m}"), dm, dm);
        }
        layer_norm(&mut out, &format!("{p}.ln1"), dm);
        dense(&mut out, &format!("{p}.cross.q"), dm, dm);
        dense(&mut out, &format!("{p}.cross.k"), cfg.memory_width(), dm);
        dense(&mut out, &format!("{p}.cross.v"), cfg.memory_width(), dm);
        dense(&mut out, &format!("{p}.cross.o"), dm, dm);
        layer_norm(&mut out, &format!("{p}.ln2"), dm);
        dense(&mut out, &format!("{p}.ffn1"), dm, cfg.ffn_width);
        dense(&mut out, &format!("{p}.ffn2"), cfg.ffn_width, dm);
        layer_norm(&mut out, &format!("{p}.ln3"), dm);
    }
    dense(&mut out, "dec.head", dm, D_Y);
    out
}

/// Closed-form parameter census.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let (l, k, dc, dm, h, f) = (cfg.leads, cfg.k_cheb, cfg.d_cheb, cfg.d_model, cfg.heads, cfg.ffn_width);
    let nk = cfg.mstfe_kernels.len();
    let ksum: usize = cfg.mstfe_kernels.iter().sum();
    let mask = k * l * l;
    let encoder: usize = (0..cfg.blocks)
        .map(|b| {
            let d = cfg.block_width(b);
            let ta = 3 * d * d + 3 * h * d * (d / h) + d * d + d + 2 * d;
            let sa = 2 * k * d * d;
            let gcn = k * d * dc + if cfg.share_masks { 0 } else { mask };
            let gtu = 2 * dc * dc * ksum + 2 * dc * nk + nk * dc * dc + dc;
            ta + sa + gcn + gtu + d * dc + dc + 2 * dc
        })
        .sum();
    let widths = cfg.decoder_branch_widths();
    let conv: usize = cfg.mstfe_kernels.iter().zip(&widths).map(|(r, w)| w * dm * r + w).sum();
    let mstfe = conv + dm * dm + dm + 2 * dm;
    let mw = cfg.memory_width();
    let layer = 4 * (dm * dm + dm) + 2 * (dm * dm + dm) + 2 * (mw * dm + dm) + (dm * f + f) + (f * dm + dm) + 3 * 2 * dm;
    cfg.d_lift
        + if cfg.share_masks { mask } else { 0 }
        + encoder
        + 1
        + (D_Y * dm + dm)
        + cfg.decoder_mstfe_count() * mstfe
        + cfg.blocks * layer
        + (dm * D_Y + D_Y)
}

/// Named parameter tensors in enumeration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = param_specs(cfg)
            .into_iter()
            .map(|s| {
                let n: usize = s.shape.iter().product();
                let data = match s.init {
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                    Init::Xavier { fan_in, fan_out } => {
                        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                    }
                };
                Ok((s.name, Tensor::new(s.shape, data)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_named(pairs)
    }

    pub fn from_named(pairs: Vec<(String, Tensor)>) -> Result<Self> {
        let mut index = BTreeMap::new();
        let mut names = Vec::with_capacity(pairs.len());
        let mut tensors = Vec::with_capacity(pairs.len());
        for (i, (name, t)) in pairs.into_iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Checkpoint(format!("duplicate parameter name `{name}`")));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(ModelParams { names, tensors, index })
    }

    /// Errors unless names and shapes match the enumeration for `cfg`.
    pub fn check_against(&self, cfg: &ModelConfig) -> Result<()> {
        let specs = param_specs(cfg);
        if specs.len() != self.names.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                self.names.len()
            )));
        }
        for (s, (n, t)) in specs.iter().zip(self.iter()) {
            if s.name != n || s.shape != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{n}` {:?} does not match expected `{}` {:?}",
                    t.shape(),
                    s.name,
                    s.shape
                )));
            }
        }
        if self.scalar_count() != param_count(cfg) {
            return Err(Error::Checkpoint("parameter census mismatch".into()));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.tensors.iter_mut().collect()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Names already-recorded vars, one per tensor in enumeration order.
    pub fn bind_vars(&self, vars: &[Var]) -> Bound {
        assert_eq!(vars.len(), self.tensors.len(), "one var per parameter tensor");
        Bound {
            vars: vars.to_vec(),
            index: self.index.clone(),
        }
    }

    /// Records every tensor on `tape`, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound {
            vars,
            index: self.index.clone(),
        }
    }
}

/// Parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
    index: BTreeMap<String, usize>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("unknown parameter `{name}`"),
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
