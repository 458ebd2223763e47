//! PCM input and the log-mel front end of the style encoder.

mod mel;
mod wav;

pub use mel::{
    center_frequencies, filterbank, hz_to_mel, mel_spectrogram, mel_to_hz, MelConfig, MelExtractor,
    MelGram,
};
pub use wav::{read_wav, wav_bytes, write_wav, AudioClip, SAMPLE_RATE};
