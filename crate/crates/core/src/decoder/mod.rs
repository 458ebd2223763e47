//! Transformer motion decoder `D_m`.
//!
//! Pre-norm layers with causal self-attention, causal cross-attention over
//! the projected text representation and a ReLU feed-forward block. There
//! is no final normalization: magnitude changes in the fused input (for
//! example from a stylized recall) reach the output head through the
//! residual stream.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{init_linear, linear, weight_name};
use crate::numerics::{Graph, Var};
use crate::params::{Bound, ParamGroup, ParamStore};
use crate::synthcorpus::MotionSeq;

pub const DECODER: &str = "decoder";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff: usize,
    pub max_t: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            layers: 2,
            ff: 256,
            max_t: 512,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.layers == 0 || self.ff == 0 || self.max_t == 0 {
            return Err(Error::invalid("decoder layers, ff and max_t must be positive"));
        }
        Ok(())
    }
}

fn p(parts: &[&str]) -> String {
    let mut s = DECODER.to_owned();
    for part in parts {
        s.push('.');
        s.push_str(part);
    }
    s
}

fn init_norm(store: &mut ParamStore, prefix: &str, d: usize) -> Result<()> {
    store.insert_fill(&format!("{prefix}.gain"), ParamGroup::Decoder, (1, d), 1.0)?;
    store.insert_fill(&format!("{prefix}.bias"), ParamGroup::Decoder, (1, d), 0.0)
}

/// `text_width` is `n` and `recall_width` is `c`; the output head starts at zero so the initial prediction is the
/// template pose.
pub fn init_decoder(
    store: &mut ParamStore,
    cfg: &DecoderConfig,
    text_width: usize,
    recall_width: usize,
    vertices: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    cfg.validate()?;
    let d = cfg.d_model;
    let g = ParamGroup::Decoder;
    init_linear(store, &p(&["input"]), g, text_width + recall_width, d, rng)?;
    init_linear(store, &p(&["memory"]), g, text_width, d, rng)?;
    for l in 0..cfg.layers {
        let layer = format!("layer{l}");
        for block in ["self", "cross"] {
            init_norm(store, &p(&[&layer, block, "norm"]), d)?;
            for proj in ["q", "k", "v", "o"] {
                let prefix = p(&[&layer, block, proj]);
                if proj == "k" {
                    // A key bias shifts every score in a row equally, which the
                    // softmax cancels; it would only carry a zero gradient.
                    store.insert_glorot(&weight_name(&prefix), g, d, d, rng)?;
                } else {
                    init_linear(store, &prefix, g, d, d, rng)?;
                }
            }
        }
        init_norm(store, &p(&[&layer, "ff", "norm"]), d)?;
        init_linear(store, &p(&[&layer, "ff", "up"]), g, d, cfg.ff, rng)?;
        init_linear(store, &p(&[&layer, "ff", "down"]), g, cfg.ff, d, rng)?;
    }
    store.insert(&p(&["head", "weight"]), g, Array2::zeros((d, vertices * 3)))?;
    store.insert(&p(&["head", "bias"]), g, Array2::zeros((1, vertices * 3)))
}

/// `T×d` sinusoidal position table.
pub fn positional_encoding(t: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((t, d), |(pos, i)| {
        let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        let angle = pos as f64 * freq;
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

fn layer_norm(g: &mut Graph, b: &Bound, prefix: &str, x: Var) -> Var {
    g.layer_norm(x, b.var(&format!("{prefix}.gain")), b.var(&format!("{prefix}.bias")))
}

/// Causal multi-head attention of queries from `x` over keys and values
/// from `context` (both `T×d`).
fn attention(g: &mut Graph, b: &Bound, prefix: &str, heads: usize, x: Var, context: Var) -> Var {
    let d = g.shape(x).1;
    let dh = d / heads;
    let q = linear(g, b, &format!("{prefix}.q"), x);
    let k = g.matmul(context, b.var(&weight_name(&format!("{prefix}.k"))));
    let v = linear(g, b, &format!("{prefix}.v"), context);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (g.slice_cols(q, lo, hi), g.slice_cols(k, lo, hi), g.slice_cols(v, lo, hi))
        };
        let scores = g.matmul_nt(qh, kh);
        let scores = g.scale(scores, scale);
        let attn = g.softmax_rows(scores, true);
        outs.push(g.matmul(attn, vh));
    }
    let merged = if heads == 1 { outs[0] } else { g.concat_cols(&outs) };
    linear(g, b, &format!("{prefix}.o"), merged)
}

/// Decodes `T×n` text representations and `T×c` recalled features into
/// `T×(V·3)` displacements.
pub fn decoder_graph(
    g: &mut Graph,
    b: &Bound,
    cfg: &DecoderConfig,
    f_txt: Var,
    recalled: Var,
) -> Result<Var> {
    let (t, _) = g.shape(f_txt);
    if g.shape(recalled).0 != t {
        return Err(Error::invalid(format!(
            "decoder inputs disagree on length: text {t}, recall {}",
            g.shape(recalled).0
        )));
    }
    if t > cfg.max_t {
        return Err(Error::Capacity(format!("sequence of {t} frames exceeds max_t = {}", cfg.max_t)));
    }
    if t == 0 {
        return Err(Error::invalid("decoder input is empty"));
    }
    let fused = g.concat_cols(&[f_txt, recalled]);
    let x = linear(g, b, &p(&["input"]), fused);
    let pe = g.constant(positional_encoding(t, cfg.d_model));
    let mut x = g.add(x, pe);
    let memory = linear(g, b, &p(&["memory"]), f_txt);
    for l in 0..cfg.layers {
        let layer = format!("layer{l}");
        let h = layer_norm(g, b, &p(&[&layer, "self", "norm"]), x);
        let a = attention(g, b, &p(&[&layer, "self"]), cfg.heads, h, h);
        x = g.add(x, a);
        let h = layer_norm(g, b, &p(&[&layer, "cross", "norm"]), x);
        let a = attention(g, b, &p(&[&layer, "cross"]), cfg.heads, h, memory);
        x = g.add(x, a);
        let h = layer_norm(g, b, &p(&[&layer, "ff", "norm"]), x);
        let up = linear(g, b, &p(&[&layer, "ff", "up"]), h);
        let up = g.relu(up);
        let down = linear(g, b, &p(&[&layer, "ff", "down"]), up);
        x = g.add(x, down);
    }
    Ok(linear(g, b, &p(&["head"]), x))
}

pub fn decode(
    f_txt: &Array2<f64>,
    recalled: &Array2<f64>,
    params: &ParamStore,
    cfg: &DecoderConfig,
) -> Result<MotionSeq> {
    let mut g = Graph::new();
    let b = params.bind(&mut g, |_, _| false);
    let ft = g.constant(f_txt.clone());
    let r = g.constant(recalled.clone());
    let out = decoder_graph(&mut g, &b, cfg, ft, r)?;
    MotionSeq::new(g.value(out).clone())
}
