use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, write_wav, AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::io::{atomic_write, read_file};

use super::mesh::{TemplateMesh, NUM_VISEMES};
use super::motion::{load_phonemes, save_phonemes, total_frames, FaceRig, MotionSeq, Phoneme, SpeakerStyle, FPS};

pub const AMPLITUDE_RANGE: (f64, f64) = (0.5, 1.5);
pub const TEMPO_RANGE: (f64, f64) = (0.7, 1.3);
pub const PROTRUSION_RANGE: (f64, f64) = (-0.002, 0.004);
pub const PITCH_RANGE: (f64, f64) = (90.0, 260.0);

/// Peak level of a fully voiced viseme for a unit-amplitude speaker.
const VOICE_LEVEL: f64 = 0.25;
const SPLIT_SALT: u64 = 0x5EED_0000_5B17;
const NOISE_FLOOR: f64 = 2e-3;
const MAX_HARMONIC_HZ: f64 = 7600.0;

/// Formant centres (Hz) and relative loudness of each viseme's voice.
const FORMANTS: [([f64; 3], f64); NUM_VISEMES] = [
    ([0.0, 0.0, 0.0], 0.0),          // sil
    ([750.0, 1200.0, 2500.0], 1.0),  // aa
    ([550.0, 1800.0, 2500.0], 0.9),  // eh
    ([300.0, 2300.0, 3000.0], 0.8),  // iy
    ([500.0, 900.0, 2400.0], 0.9),   // ow
    ([320.0, 800.0, 2300.0], 0.8),   // uw
    ([250.0, 1000.0, 2200.0], 0.3),  // m b p
    ([1500.0, 4500.0, 6500.0], 0.4), // f v
    ([400.0, 1600.0, 2800.0], 0.7),  // l th
    ([1800.0, 3500.0, 5500.0], 0.5), // ch sh
];
const FORMANT_WIDTH: [f64; 3] = [120.0, 180.0, 260.0];

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    /// `spk_XX/clip_####`.
    pub clip_id: String,
    pub speaker_id: usize,
    /// Index of the sentence (viseme sequence) this clip speaks.
    pub sentence_id: usize,
    pub phonemes: Vec<Phoneme>,
    pub motion: MotionSeq,
    pub audio: AudioClip,
}

impl Clip {
    pub fn num_frames(&self) -> usize {
        self.motion.num_frames()
    }
}

/// Held-out share of sentences recorded in the manifest.
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub n_speakers: usize,
    pub clips_per_speaker: usize,
    pub fps: f64,
    pub sample_rate: u32,
    pub total_clips: usize,
    /// Held-out share used for the recorded split.
    pub test_fraction: f64,
    /// Sentence ids held out by the recorded split.
    pub test_sentences: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub template: TemplateMesh,
    pub speakers: Vec<SpeakerStyle>,
    pub clips: Vec<Clip>,
}

/// Clip indices of a train/test partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub test_sentences: BTreeSet<usize>,
}

pub fn clip_id(speaker: usize, clip: usize) -> String {
    format!("spk_{speaker:02}/clip_{clip:04}")
}

/// One value per speaker from each of `n` equal strata of `range`, with the
/// strata shuffled, so every attribute covers its whole range.
fn stratified(rng: &mut ChaCha8Rng, n: usize, (lo, hi): (f64, f64)) -> Vec<f64> {
    let mut strata: Vec<usize> = (0..n).collect();
    strata.shuffle(rng);
    strata
        .into_iter()
        .map(|s| lo + (hi - lo) * (s as f64 + rng.gen::<f64>()) / n as f64)
        .collect()
}

pub fn sample_speakers(rng: &mut ChaCha8Rng, n: usize) -> Vec<SpeakerStyle> {
    let amplitude = stratified(rng, n, AMPLITUDE_RANGE);
    let tempo = stratified(rng, n, TEMPO_RANGE);
    let protrusion = stratified(rng, n, PROTRUSION_RANGE);
    let pitch = stratified(rng, n, PITCH_RANGE);
    (0..n)
        .map(|i| SpeakerStyle {
            speaker_id: i,
            amplitude: amplitude[i],
            protrusion: protrusion[i],
            tempo: tempo[i],
            pitch: pitch[i],
        })
        .collect()
}

/// A sentence: visemes with tempo-free base durations, framed by silence.
fn sample_sentence(rng: &mut ChaCha8Rng) -> Vec<(usize, f64)> {
    let len = rng.gen_range(6..=10);
    let mut out = vec![(0, 3.0)];
    let mut prev = 0;
    for _ in 0..len {
        let mut v = rng.gen_range(1..NUM_VISEMES);
        while v == prev {
            v = rng.gen_range(1..NUM_VISEMES);
        }
        out.push((v, rng.gen_range(3..=6) as f64));
        prev = v;
    }
    out.push((0, 3.0));
    out
}

/// Realizes base durations at a speaker's tempo.
pub fn realize(sentence: &[(usize, f64)], tempo: f64) -> Vec<Phoneme> {
    sentence
        .iter()
        .map(|&(v, base)| Phoneme::new(v, ((base / tempo).round() as usize).max(2)))
        .collect()
}

pub fn audio_len(frames: usize) -> usize {
    (frames as f64 * SAMPLE_RATE as f64 / FPS).round() as usize
}

/// Harmonic voice at the speaker's pitch, shaped per frame by the viseme's
/// formants. Lip protrusion lengthens the vocal tract and so lowers every
/// formant; mouth-opening amplitude sets the loudness.
pub fn synthesize_audio(phonemes: &[Phoneme], style: &SpeakerStyle, noise_seed: u64) -> AudioClip {
    let frames = total_frames(phonemes);
    let n = audio_len(frames);
    let sr = SAMPLE_RATE as f64;
    let harmonics = (MAX_HARMONIC_HZ / style.pitch).floor() as usize;
    let formant_scale = 1.0 - 20.0 * style.protrusion;
    let level = VOICE_LEVEL * style.amplitude;

    let envelope = |viseme: usize| -> Vec<f64> {
        let (centres, loud) = FORMANTS[viseme];
        if loud == 0.0 {
            return vec![0.0; harmonics];
        }
        let raw: Vec<f64> = (1..=harmonics)
            .map(|h| {
                let f = h as f64 * style.pitch;
                centres
                    .iter()
                    .zip(FORMANT_WIDTH)
                    .map(|(c, w)| {
                        let d = (f - c * formant_scale) / w;
                        (-0.5 * d * d).exp()
                    })
                    .sum::<f64>()
                    + 1e-3
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|a| level * loud * a / total).collect()
    };
    let per_frame: Vec<Vec<f64>> = super::motion::frame_visemes(phonemes)
        .into_iter()
        .map(envelope)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let phases: Vec<f64> = (0..harmonics).map(|_| rng.gen::<f64>() * std::f64::consts::TAU).collect();
    let samples_per_frame = sr / FPS;
    let mut out = Vec::with_capacity(n);
    let mut amps = vec![0.0; harmonics];
    for i in 0..n {
        // amplitudes are linearly interpolated between frame centres
        let pos = (i as f64 + 0.5) / samples_per_frame - 0.5;
        let lo = pos.floor().clamp(0.0, (frames - 1) as f64) as usize;
        let hi = (lo + 1).min(frames - 1);
        let frac = (pos - lo as f64).clamp(0.0, 1.0);
        for (h, a) in amps.iter_mut().enumerate() {
            *a = (1.0 - frac) * per_frame[lo][h] + frac * per_frame[hi][h];
        }
        let t = i as f64 / sr;
        let mut s = 0.0;
        for (h, a) in amps.iter().enumerate() {
            if *a > 0.0 {
                s += a * (std::f64::consts::TAU * (h + 1) as f64 * style.pitch * t + phases[h]).sin();
            }
        }
        s += NOISE_FLOOR * (2.0 * rng.gen::<f64>() - 1.0);
        out.push(s);
    }
    AudioClip::quantized(&out)
}

/// Every speaker reads the same list of sentences; clip `k` of each speaker
/// is sentence `k`. Motion is stored at `f32` precision and audio on the
/// PCM16 grid, so a corpus reloaded from disk equals the generated one.
pub fn generate_corpus(seed: u64, n_speakers: usize, clips_per_speaker: usize) -> Result<Corpus> {
    if n_speakers < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 speakers for triplet negatives, got {n_speakers}"
        )));
    }
    if clips_per_speaker == 0 {
        return Err(Error::invalid("clips_per_speaker must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let speakers = sample_speakers(&mut rng, n_speakers);
    let sentences: Vec<_> = (0..clips_per_speaker).map(|_| sample_sentence(&mut rng)).collect();
    let rig = FaceRig::default();
    let mut clips = Vec::with_capacity(n_speakers * clips_per_speaker);
    for style in &speakers {
        for (k, sentence) in sentences.iter().enumerate() {
            let phonemes = realize(sentence, style.tempo);
            let motion = rig.oracle_motion(&phonemes, style)?.to_f32_precision();
            let noise_seed = seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add((style.speaker_id * clips_per_speaker + k) as u64);
            let audio = synthesize_audio(&phonemes, style, noise_seed);
            clips.push(Clip {
                clip_id: clip_id(style.speaker_id, k),
                speaker_id: style.speaker_id,
                sentence_id: k,
                phonemes,
                motion,
                audio,
            });
        }
    }
    let total_clips = clips.len();
    let mut corpus = Corpus {
        manifest: CorpusManifest {
            seed,
            n_speakers,
            clips_per_speaker,
            fps: FPS,
            sample_rate: SAMPLE_RATE,
            total_clips,
            test_fraction: DEFAULT_TEST_FRACTION,
            test_sentences: Vec::new(),
        },
        template: TemplateMesh::toy_face(),
        speakers,
        clips,
    };
    let split = corpus.split(DEFAULT_TEST_FRACTION, seed)?;
    corpus.manifest.test_sentences = split.test_sentences.into_iter().collect();
    Ok(corpus)
}

impl Corpus {
    /// Holds out whole sentences, so no test clip shares its speaker and
    /// phoneme sequence with a training clip. At least one sentence lands on
    /// each side when there are two or more.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<Split> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::invalid(format!("test fraction {test_fraction} not in [0, 1)")));
        }
        let n = self.manifest.clips_per_speaker;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT));
        let mut n_test = (test_fraction * n as f64).round() as usize;
        if test_fraction > 0.0 && n >= 2 {
            n_test = n_test.clamp(1, n - 1);
        }
        let test_sentences: BTreeSet<usize> = order[..n_test].iter().copied().collect();
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, c) in self.clips.iter().enumerate() {
            if test_sentences.contains(&c.sentence_id) {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        Ok(Split {
            train,
            test,
            test_sentences,
        })
    }

    pub fn speaker(&self, id: usize) -> Option<&SpeakerStyle> {
        self.speakers.iter().find(|s| s.speaker_id == id)
    }

    pub fn clip_paths(root: &Path, clip_id: &str) -> (PathBuf, PathBuf, PathBuf) {
        let base = root.join(clip_id);
        (base.with_extension("wav"), base.with_extension("mseq"), base.with_extension("phn"))
    }

    pub fn save(&self, root: impl AsRef<Path>) -> Result<()> {
        let root = root.as_ref();
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        for s in &self.speakers {
            let dir = root.join(format!("spk_{:02}", s.speaker_id));
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        for c in &self.clips {
            let (wav, mseq, phn) = Self::clip_paths(root, &c.clip_id);
            write_wav(&wav, &c.audio)?;
            c.motion.save(&mseq)?;
            save_phonemes(&phn, &c.phonemes)?;
        }
        write_json(&root.join("speakers.json"), &self.speakers)?;
        write_json(&root.join("manifest.json"), &self.manifest)?;
        write_json(&root.join("template.json"), &self.template)?;
        let mask: String = self.template.lip_mask.iter().map(|i| format!("{i}\n")).collect();
        atomic_write(&root.join("lip_mask.txt"), mask.as_bytes())?;
        Ok(())
    }

    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let manifest: CorpusManifest = read_json(&root.join("manifest.json"))?;
        let speakers: Vec<SpeakerStyle> = read_json(&root.join("speakers.json"))?;
        let template: TemplateMesh = read_json(&root.join("template.json"))?;
        let template = TemplateMesh::new(template.vertices, template.lip_mask)
            .map_err(|e| Error::format(root.join("template.json"), e.to_string()))?;
        let mut clips = Vec::new();
        for s in &speakers {
            for k in 0..manifest.clips_per_speaker {
                let id = clip_id(s.speaker_id, k);
                let (wav, mseq, phn) = Self::clip_paths(root, &id);
                let phonemes = load_phonemes(&phn)?;
                let motion = MotionSeq::load(&mseq)?;
                if motion.num_frames() != total_frames(&phonemes) {
                    return Err(Error::format(
                        &mseq,
                        format!(
                            "{} frames but phonemes cover {}",
                            motion.num_frames(),
                            total_frames(&phonemes)
                        ),
                    ));
                }
                if motion.num_vertices() != template.num_vertices() {
                    return Err(Error::format(&mseq, "vertex count differs from the template"));
                }
                clips.push(Clip {
                    clip_id: id,
                    speaker_id: s.speaker_id,
                    sentence_id: k,
                    phonemes,
                    motion,
                    audio: read_wav(&wav)?,
                });
            }
        }
        Ok(Self {
            manifest,
            template,
            speakers,
            clips,
        })
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    atomic_write(path, serde_json::to_string_pretty(value)?.as_bytes())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::mel_spectrogram;
    use crate::synthcorpus::motion::MAX_DISPLACEMENT;

    #[test]
    fn same_seed_same_corpus() {
        let a = generate_corpus(7, 2, 3).unwrap();
        let b = generate_corpus(7, 2, 3).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(8, 2, 3).unwrap();
        assert_ne!(a.clips[0].motion, c.clips[0].motion);
    }

    #[test]
    fn single_speaker_is_rejected() {
        assert!(matches!(generate_corpus(1, 1, 3), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn clips_satisfy_invariants() {
        let c = generate_corpus(3, 4, 5).unwrap();
        for s in &c.speakers {
            assert!((AMPLITUDE_RANGE.0..=AMPLITUDE_RANGE.1).contains(&s.amplitude));
            assert!((TEMPO_RANGE.0..=TEMPO_RANGE.1).contains(&s.tempo));
        }
        for clip in &c.clips {
            assert_eq!(clip.num_frames(), total_frames(&clip.phonemes));
            let secs = clip.num_frames() as f64 / FPS;
            assert!((clip.audio.duration_secs() - secs).abs() <= 160.0 / SAMPLE_RATE as f64);
            assert!(clip.motion.max_abs() <= MAX_DISPLACEMENT);
            // silence frames sit at the rest pose
            let first = clip.phonemes[0];
            assert_eq!(first.viseme, 0);
            for t in 0..first.duration {
                assert!(clip.motion.frames().row(t).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn split_holds_out_whole_sentences() {
        let c = generate_corpus(11, 3, 10).unwrap();
        let s = c.split(0.2, 5).unwrap();
        assert_eq!(s, c.split(0.2, 5).unwrap());
        assert_eq!(s.test_sentences.len(), 2);
        assert_eq!(s.train.len() + s.test.len(), c.clips.len());
        let train_pairs: BTreeSet<_> = s
            .train
            .iter()
            .map(|&i| (c.clips[i].speaker_id, c.clips[i].phonemes.clone()))
            .collect();
        for &i in &s.test {
            assert!(!train_pairs.contains(&(c.clips[i].speaker_id, c.clips[i].phonemes.clone())));
        }
    }

    #[test]
    fn speakers_differ_on_the_same_sentence() {
        let c = generate_corpus(2, 3, 2).unwrap();
        let lip = c.template.lip_columns();
        for a in 0..3 {
            for b in (a + 1)..3 {
                let ca = &c.clips[a * 2];
                let cb = &c.clips[b * 2];
                assert_eq!(ca.sentence_id, cb.sentence_id);
                let ta: Vec<f64> = (0..ca.num_frames()).flat_map(|t| lip.iter().map(move |&j| ca.motion.frames()[[t, j]])).collect();
                let tb: Vec<f64> = (0..cb.num_frames()).flat_map(|t| lip.iter().map(move |&j| cb.motion.frames()[[t, j]])).collect();
                assert_ne!(ta, tb);
            }
        }
    }

    #[test]
    fn louder_speaker_has_higher_mel_energy() {
        let ph = realize(&[(0, 3.0), (1, 6.0), (3, 6.0), (0, 3.0)], 1.0);
        let mut quiet = SpeakerStyle::neutral(0);
        quiet.amplitude = 0.5;
        let mut loud = quiet;
        loud.amplitude = 1.5;
        let mq = mel_spectrogram(&synthesize_audio(&ph, &quiet, 1)).unwrap();
        let ml = mel_spectrogram(&synthesize_audio(&ph, &loud, 1)).unwrap();
        let mean = |m: &crate::audio::MelGram| m.frames().mean().unwrap();
        assert!(mean(&ml) > mean(&mq));
    }

    #[test]
    fn disk_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate_corpus(5, 2, 2).unwrap();
        c.save(dir.path()).unwrap();
        assert!(dir.path().join("spk_01/clip_0001.mseq").exists());
        assert!(dir.path().join("lip_mask.txt").exists());
        assert_eq!(Corpus::load(dir.path()).unwrap(), c);
    }
}
