use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::MelGram;
use crate::error::{Error, Result};
use crate::nn::{init_linear, linear, weight_name};
use crate::numerics::{Graph, Var};
use crate::params::{Bound, ParamGroup, ParamStore};

pub const STYLE_ENCODER: &str = "style_encoder";

/// Conv stack shape of the speaking-style encoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleEncoderConfig {
    pub mel_bins: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub groups: usize,
    /// Stride of each conv block, in order.
    pub strides: [usize; 3],
}

impl Default for StyleEncoderConfig {
    fn default() -> Self {
        Self {
            mel_bins: 80,
            hidden: 128,
            kernel: 3,
            groups: 16,
            strides: [1, 1, 2],
        }
    }
}

/// Speaking-style vector `f_s`, length `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleFeature {
    pub vector: Vec<f64>,
}

fn conv_prefix(i: usize) -> String {
    format!("{STYLE_ENCODER}.conv{i}")
}

fn norm_prefix(i: usize) -> String {
    format!("{STYLE_ENCODER}.norm{i}")
}

pub fn init_style_encoder(
    store: &mut ParamStore,
    cfg: &StyleEncoderConfig,
    channels: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    if !cfg.hidden.is_multiple_of(cfg.groups) {
        return Err(Error::invalid(format!(
            "style encoder width {} not divisible into {} groups",
            cfg.hidden, cfg.groups
        )));
    }
    let group = ParamGroup::StyleEncoder;
    let mut c_in = cfg.mel_bins;
    for i in 0..cfg.strides.len() {
        init_linear(store, &conv_prefix(i), group, cfg.kernel * c_in, cfg.hidden, rng)?;
        store.insert_fill(&format!("{}.gain", norm_prefix(i)), group, (1, cfg.hidden), 1.0)?;
        store.insert_fill(&format!("{}.bias", norm_prefix(i)), group, (1, cfg.hidden), 0.0)?;
        c_in = cfg.hidden;
    }
    init_linear(store, &format!("{STYLE_ENCODER}.head0"), group, cfg.hidden, cfg.hidden, rng)?;
    init_linear(store, &format!("{STYLE_ENCODER}.head1"), group, cfg.hidden, channels, rng)
}

/// `T_mel×bins` log-mel frames to a `1×c` style vector: conv blocks
/// (edge-padded conv, group norm, ReLU), mean over time, two-layer head.
pub fn style_encoder_graph(g: &mut Graph, b: &Bound, cfg: &StyleEncoderConfig, mel: Var) -> Var {
    let mut x = mel;
    for (i, &stride) in cfg.strides.iter().enumerate() {
        let cols = g.im2col(x, cfg.kernel, stride);
        let conv = linear(g, b, &conv_prefix(i), cols);
        let p = norm_prefix(i);
        let normed = g.group_norm(
            conv,
            b.var(&format!("{p}.gain")),
            b.var(&format!("{p}.bias")),
            cfg.groups,
        );
        x = g.relu(normed);
    }
    let pooled = g.mean_rows(x);
    let h = linear(g, b, &format!("{STYLE_ENCODER}.head0"), pooled);
    let h = g.relu(h);
    linear(g, b, &format!("{STYLE_ENCODER}.head1"), h)
}

pub fn style_encode(mel: &MelGram, params: &ParamStore, cfg: &StyleEncoderConfig) -> Result<StyleFeature> {
    if mel.num_frames() == 0 {
        return Err(Error::invalid("style_encode: empty mel-spectrogram"));
    }
    let w = params
        .get(&weight_name(&conv_prefix(0)))
        .ok_or_else(|| Error::invalid("style encoder parameters missing"))?;
    if w.nrows() != cfg.kernel * mel.num_bins() {
        return Err(Error::invalid(format!(
            "style encoder expects {} mel bins, got {}",
            w.nrows() / cfg.kernel,
            mel.num_bins()
        )));
    }
    let mut g = Graph::new();
    let b = params.bind(&mut g, |_, _| false);
    let x = g.constant(mel.frames().clone());
    let f = style_encoder_graph(&mut g, &b, cfg, x);
    Ok(StyleFeature {
        vector: g.value(f).row(0).to_vec(),
    })
}

/// Style vector of a `T×bins` matrix that is not wrapped in a [`MelGram`].
pub fn style_encode_matrix(mel: &Array2<f64>, params: &ParamStore, cfg: &StyleEncoderConfig) -> Result<StyleFeature> {
    style_encode(&MelGram::from_frames(mel.clone())?, params, cfg)
}
