//! Synthetic talking-face corpus with known ground-truth motion.

mod generate;
mod mesh;
mod motion;

pub use generate::{
    audio_len, clip_id, generate_corpus, realize, sample_speakers, synthesize_audio, Clip, Corpus,
    CorpusManifest, Split, AMPLITUDE_RANGE, DEFAULT_TEST_FRACTION, PITCH_RANGE, PROTRUSION_RANGE, TEMPO_RANGE,
};
pub use mesh::{TemplateMesh, VisemeBasis, JAW_VERTICES, NUM_VISEMES, VISEME_COEFFS};
pub use motion::{
    frame_visemes, load_phonemes, oracle_motion, phonemes_from_text, phonemes_to_text,
    save_phonemes, total_frames, validate_phonemes, FaceRig, MotionSeq, Phoneme, SpeakerStyle, FPS,
    MAX_DISPLACEMENT,
};
