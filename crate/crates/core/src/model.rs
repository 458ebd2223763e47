//! The assembled network: parameter layout and the forward pieces shared by
//! training and synthesis.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{decoder_graph, init_decoder, DecoderConfig};
use crate::encoders::{
    init_motion_encoder, init_style_encoder, init_text_encoder, motion_encoder_graph,
    style_encoder_graph, text_encoder_graph, StyleEncoderConfig, TextRepEncoder,
};
use crate::error::{Error, Result};
use crate::losses::mem_graph;
use crate::memory::{
    init_memory, init_style_projection, key_address_graph, recall_graph, style_weights_graph,
    stylize_graph, value_address_graph, MEMORY_SLOTS,
};
use crate::numerics::{Graph, Var};
use crate::params::{Bound, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vertices: usize,
    /// Memory slots `n`, also the width of the text representation.
    pub slots: usize,
    /// Memory channels `c`, also the motion and style feature width.
    pub channels: usize,
    pub d_txt: usize,
    pub kappa: f64,
    /// Blocks gradients through the encoder side of the memory loss.
    pub mem_stop_grad: bool,
    pub decoder: DecoderConfig,
    pub style: StyleEncoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vertices: 24,
            slots: 32,
            channels: 64,
            d_txt: 64,
            kappa: 16.0,
            mem_stop_grad: false,
            decoder: DecoderConfig::default(),
            style: StyleEncoderConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slots < 2 {
            return Err(Error::invalid("the memory needs at least 2 slots"));
        }
        if self.vertices == 0 || self.channels == 0 || self.d_txt == 0 {
            return Err(Error::invalid("vertices, channels and d_txt must be positive"));
        }
        if !self.kappa.is_finite() || self.kappa < 0.0 {
            return Err(Error::invalid("kappa must be finite and non-negative"));
        }
        self.decoder.validate()?;
        if !self.style.hidden.is_multiple_of(self.style.groups) {
            return Err(Error::invalid("style encoder width must divide into its groups"));
        }
        Ok(())
    }

    /// Fresh parameters for every component, deterministic in `seed`.
    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        init_motion_encoder(&mut s, self.vertices, self.channels, &mut rng)?;
        init_memory(&mut s, self.slots, self.channels, self.kappa, &mut rng)?;
        init_text_encoder(&mut s, self.d_txt, self.slots, &mut rng)?;
        init_decoder(&mut s, &self.decoder, self.slots, self.channels, self.vertices, &mut rng)?;
        init_style_encoder(&mut s, &self.style, self.channels, &mut rng)?;
        init_style_projection(&mut s, self.channels, self.slots, &mut rng)?;
        Ok(s)
    }
}

/// Text representation and its key address.
#[derive(Debug, Clone, Copy)]
pub struct TextPath {
    pub f_txt: Var,
    pub key: Var,
}

pub fn text_path(g: &mut Graph, b: &Bound, source: &dyn TextRepEncoder, t_out: usize) -> Result<TextPath> {
    let f_txt = text_encoder_graph(g, b, source, t_out)?;
    let key = key_address_graph(g, f_txt);
    Ok(TextPath { f_txt, key })
}

/// Recall through the key address from `slots` (plain or stylized), then decode.
pub fn decode_from(g: &mut Graph, b: &Bound, cfg: &ModelConfig, text: &TextPath, slots: Var) -> Result<Var> {
    let recalled = recall_graph(g, text.key, slots);
    decoder_graph(g, b, &cfg.decoder, text.f_txt, recalled)
}

/// Motion-side memory terms of the first stage.
#[derive(Debug, Clone, Copy)]
pub struct ValuePath {
    pub value: Var,
    pub mem_loss: Var,
}

pub fn value_path(g: &mut Graph, b: &Bound, cfg: &ModelConfig, motion: Var) -> ValuePath {
    let slots = b.var(MEMORY_SLOTS);
    let f_m = motion_encoder_graph(g, b, motion);
    let value = value_address_graph(g, slots, f_m, cfg.kappa);
    let recalled = recall_graph(g, value, slots);
    let target = if cfg.mem_stop_grad { g.detach(f_m) } else { f_m };
    let mem_loss = mem_graph(g, target, recalled);
    ValuePath { value, mem_loss }
}

pub fn style_feature(g: &mut Graph, b: &Bound, cfg: &ModelConfig, mel: Var) -> Var {
    style_encoder_graph(g, b, &cfg.style, mel)
}

/// The memory bank reweighted by the style weights derived from `f_s`.
pub fn stylized_slots(g: &mut Graph, b: &Bound, f_s: Var) -> Var {
    let w = style_weights_graph(g, b, f_s);
    stylize_graph(g, b.var(MEMORY_SLOTS), w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamGroup;

    #[test]
    fn default_layout() {
        let cfg = ModelConfig::default();
        let s = cfg.init_params(0).unwrap();
        assert_eq!(s.get(MEMORY_SLOTS).unwrap().dim(), (32, 64));
        assert_eq!(s.get("motion_encoder.weight").unwrap().dim(), (72, 64));
        assert_eq!(s.get("decoder.input.weight").unwrap().dim(), (96, 64));
        assert_eq!(s.get("style_encoder.conv0.weight").unwrap().dim(), (240, 128));
        assert_eq!(s.get("style_encoder.head1.weight").unwrap().dim(), (128, 64));
        let groups: std::collections::BTreeSet<_> = s.iter().map(|(_, p)| p.group).collect();
        assert_eq!(groups.len(), ParamGroup::ALL.len());
        assert_eq!(s, cfg.init_params(0).unwrap());
    }
}
