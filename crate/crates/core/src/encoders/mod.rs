//! Input encoders: motion `E_m`, text representation `ψ→n∘E_aud` and
//! speaking style `E_s`.

mod motion;
mod style;
mod text;

pub use motion::{init_motion_encoder, motion_encode, motion_encoder_graph, MotionFeatureSeq, MOTION_ENCODER};
pub use style::{
    init_style_encoder, style_encode, style_encode_matrix, style_encoder_graph, StyleEncoderConfig,
    StyleFeature, STYLE_ENCODER,
};
pub use text::{
    init_text_encoder, text_encode, text_encoder_graph, PrecomputedTextFeatures, SyntheticTextEncoder,
    TextRepEncoder, TextRepSeq, TEXT_PROJECTION, VISEME_EMBEDDING,
};
