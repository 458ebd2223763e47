use ndarray::Array2;

use crate::encoders::TextRepEncoder;
use crate::error::{Error, Result};
use crate::memory::MEMORY_SLOTS;
use crate::model::{decode_from, style_feature, stylized_slots, text_path, ModelConfig};
use crate::numerics::Graph;
use crate::params::ParamStore;
use crate::synthcorpus::MotionSeq;

use super::checkpoint::Checkpoint;
use super::config::Stage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthMode {
    /// Unstylized memory.
    General,
    /// Memory stylized by the style feature of the input audio.
    Personalized,
}

impl SynthMode {
    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "general" => Some(SynthMode::General),
            "personalized" => Some(SynthMode::Personalized),
            _ => None,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            SynthMode::General => "general",
            SynthMode::Personalized => "personalized",
        }
    }
}

/// Read-only inference over a parameter set.
#[derive(Debug, Clone, Copy)]
pub struct Synthesizer<'a> {
    pub model: &'a ModelConfig,
    pub params: &'a ParamStore,
    pub stage: Stage,
}

impl<'a> Synthesizer<'a> {
    pub fn from_checkpoint(ckpt: &'a Checkpoint) -> Self {
        Self {
            model: &ckpt.config.model,
            params: &ckpt.params,
            stage: ckpt.stage,
        }
    }

    /// Displacements for `t_out` frames of the text source. Personalized
    /// mode needs the log-mel frames of the audio and a checkpoint with a
    /// trained style pathway.
    pub fn synthesize(
        &self,
        source: &dyn TextRepEncoder,
        t_out: usize,
        mel: Option<&Array2<f64>>,
        mode: SynthMode,
    ) -> Result<MotionSeq> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, |_, _| false);
        let text = text_path(&mut g, &b, source, t_out)?;
        let slots = match mode {
            SynthMode::General => b.var(MEMORY_SLOTS),
            SynthMode::Personalized => {
                if !self.stage.has_style() {
                    return Err(Error::InvalidMode(
                        "personalized synthesis needs a checkpoint with a trained style pathway".into(),
                    ));
                }
                let mel = mel.ok_or_else(|| Error::InvalidMode("personalized synthesis needs audio".into()))?;
                let m = g.constant(mel.clone());
                let f_s = style_feature(&mut g, &b, self.model, m);
                stylized_slots(&mut g, &b, f_s)
            }
        };
        let out = decode_from(&mut g, &b, self.model, &text, slots)?;
        MotionSeq::new(g.value(out).clone())
    }

    pub fn style_vector(&self, mel: &Array2<f64>) -> Result<Vec<f64>> {
        if !self.stage.has_style() {
            return Err(Error::InvalidMode("checkpoint has no style encoder".into()));
        }
        crate::encoders::style_encode_matrix(mel, self.params, &self.model.style).map(|f| f.vector)
    }
}

pub fn synthesize(
    ckpt: &Checkpoint,
    source: &dyn TextRepEncoder,
    t_out: usize,
    mel: Option<&Array2<f64>>,
    mode: SynthMode,
) -> Result<MotionSeq> {
    Synthesizer::from_checkpoint(ckpt).synthesize(source, t_out, mel, mode)
}
