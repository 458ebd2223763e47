use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{atomic_write, read_file, Reader};

use super::mesh::{VisemeBasis, NUM_VISEMES, VISEME_COEFFS};

/// Motion capture rate of the corpus.
pub const FPS: f64 = 30.0;
/// Sanity bound on any displacement component, meters.
pub const MAX_DISPLACEMENT: f64 = 0.1;

const MSEQ_MAGIC: &[u8; 4] = b"MSEQ";
const MSEQ_VERSION: u32 = 1;

/// Per-frame vertex displacements, stored flattened as `T×(V·3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSeq {
    frames: Array2<f64>,
}

impl MotionSeq {
    pub fn new(frames: Array2<f64>) -> Result<Self> {
        if !frames.ncols().is_multiple_of(3) {
            return Err(Error::invalid(format!(
                "motion width {} is not a multiple of 3",
                frames.ncols()
            )));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("motion contains non-finite displacements"));
        }
        Ok(Self { frames })
    }

    pub fn zeros(frames: usize, vertices: usize) -> Self {
        Self {
            frames: Array2::zeros((frames, vertices * 3)),
        }
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn into_frames(self) -> Array2<f64> {
        self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn num_vertices(&self) -> usize {
        self.frames.ncols() / 3
    }

    pub fn vertex(&self, t: usize, v: usize) -> [f64; 3] {
        let r = self.frames.row(t);
        [r[3 * v], r[3 * v + 1], r[3 * v + 2]]
    }

    pub fn max_abs(&self) -> f64 {
        self.frames.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Rounds through `f32`, matching what an MSEQ round trip yields.
    pub fn to_f32_precision(&self) -> Self {
        Self {
            frames: self.frames.mapv(|v| f64::from(v as f32)),
        }
    }

    pub fn to_mseq_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.frames.len() * 4);
        out.extend_from_slice(MSEQ_MAGIC);
        for v in [MSEQ_VERSION, self.num_frames() as u32, self.num_vertices() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.frames.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_mseq_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        r.expect_magic(MSEQ_MAGIC)?;
        let version = r.u32()?;
        if version != MSEQ_VERSION {
            return Err(Error::format(path, format!("MSEQ version {version} is not supported")));
        }
        let t = r.u32()? as usize;
        let v = r.u32()? as usize;
        let mut data = Vec::with_capacity(t * v * 3);
        for _ in 0..t * v * 3 {
            data.push(f64::from(r.f32()?));
        }
        r.finish()?;
        let frames = Array2::from_shape_vec((t, v * 3), data).expect("sized above");
        Self::new(frames).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        atomic_write(path.as_ref(), &self.to_mseq_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_mseq_bytes(&read_file(path)?, path)
    }
}

/// One viseme held for a whole number of motion frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Phoneme {
    pub viseme: usize,
    pub duration: usize,
}

impl Phoneme {
    pub fn new(viseme: usize, duration: usize) -> Self {
        Self { viseme, duration }
    }
}

pub fn total_frames(phonemes: &[Phoneme]) -> usize {
    phonemes.iter().map(|p| p.duration).sum()
}

/// Viseme id of every frame.
pub fn frame_visemes(phonemes: &[Phoneme]) -> Vec<usize> {
    phonemes
        .iter()
        .flat_map(|p| std::iter::repeat_n(p.viseme, p.duration))
        .collect()
}

pub fn validate_phonemes(phonemes: &[Phoneme]) -> Result<()> {
    if phonemes.is_empty() {
        return Err(Error::invalid("empty phoneme sequence"));
    }
    for p in phonemes {
        if p.viseme >= NUM_VISEMES {
            return Err(Error::invalid(format!("unknown viseme id {}", p.viseme)));
        }
        if p.duration == 0 {
            return Err(Error::invalid("phoneme with zero duration"));
        }
    }
    Ok(())
}

/// Text form: one `viseme_id duration_frames` pair per line.
pub fn phonemes_to_text(phonemes: &[Phoneme]) -> String {
    phonemes
        .iter()
        .map(|p| format!("{} {}\n", p.viseme, p.duration))
        .collect()
}

pub fn phonemes_from_text(text: &str, path: &Path) -> Result<Vec<Phoneme>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let parse = |tok: Option<&str>| -> Result<usize> {
            tok.and_then(|t| t.parse().ok()).ok_or_else(|| {
                Error::format(path, format!("line {}: expected `viseme_id duration_frames`", lineno + 1))
            })
        };
        let viseme = parse(it.next())?;
        let duration = parse(it.next())?;
        if it.next().is_some() {
            return Err(Error::format(path, format!("line {}: trailing tokens", lineno + 1)));
        }
        out.push(Phoneme { viseme, duration });
    }
    validate_phonemes(&out).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(out)
}

pub fn load_phonemes(path: impl AsRef<Path>) -> Result<Vec<Phoneme>> {
    let path = path.as_ref();
    let text = String::from_utf8(read_file(path)?).map_err(|_| Error::format(path, "not UTF-8"))?;
    phonemes_from_text(&text, path)
}

pub fn save_phonemes(path: impl AsRef<Path>, phonemes: &[Phoneme]) -> Result<()> {
    atomic_write(path.as_ref(), phonemes_to_text(phonemes).as_bytes())
}

/// Articulation parameters of one synthetic speaker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeakerStyle {
    pub speaker_id: usize,
    /// Scale on the mouth-opening component.
    pub amplitude: f64,
    /// Forward lip offset (z) on lower-face vertices, meters.
    pub protrusion: f64,
    /// Articulation rate; faster speakers have sharper transitions.
    pub tempo: f64,
    /// Fundamental frequency of the synthetic voice, Hz.
    pub pitch: f64,
}

impl SpeakerStyle {
    pub fn neutral(speaker_id: usize) -> Self {
        Self {
            speaker_id,
            amplitude: 1.0,
            protrusion: 0.0,
            tempo: 1.0,
            pitch: 150.0,
        }
    }
}

/// Ground-truth motion generator for the toy face.
#[derive(Debug, Clone)]
pub struct FaceRig {
    pub basis: VisemeBasis,
    pub lip_mask: Vec<usize>,
}

impl Default for FaceRig {
    fn default() -> Self {
        Self {
            basis: VisemeBasis::toy_face(),
            lip_mask: super::TemplateMesh::toy_face().lip_mask,
        }
    }
}

impl FaceRig {
    /// Keyframe displacement of `viseme` for `style`, flattened `V·3`.
    pub fn keyframe(&self, viseme: usize, style: &SpeakerStyle) -> Vec<f64> {
        let [open, spread, round] = VISEME_COEFFS[viseme];
        let b = &self.basis;
        let mut k: Vec<f64> = (0..b.opening.len())
            .map(|i| style.amplitude * open * b.opening[i] + spread * b.spreading[i] + round * b.rounding[i])
            .collect();
        if viseme != 0 {
            for &v in &self.lip_mask {
                k[3 * v + 2] += style.protrusion;
            }
        }
        k
    }

    /// Frames spent easing into a new keyframe for a phoneme of `duration`.
    pub fn transition_frames(duration: usize, tempo: f64) -> usize {
        let fraction = (0.75 / tempo).clamp(0.3, 1.0);
        ((duration as f64 * fraction).ceil() as usize).clamp(1, duration)
    }

    /// Each phoneme eases from the previous keyframe (rest pose before the
    /// first) to its own with a half-cosine ramp, reaching it exactly on the
    /// phoneme's last frame.
    pub fn oracle_motion(&self, phonemes: &[Phoneme], style: &SpeakerStyle) -> Result<MotionSeq> {
        validate_phonemes(phonemes)?;
        let width = self.basis.opening.len();
        let mut frames = Array2::zeros((total_frames(phonemes), width));
        let mut prev = vec![0.0; width];
        let mut t = 0;
        for p in phonemes {
            let key = self.keyframe(p.viseme, style);
            let ramp = Self::transition_frames(p.duration, style.tempo);
            for k in 0..p.duration {
                let s = ((k + 1) as f64 / ramp as f64).min(1.0);
                let mut row = frames.row_mut(t);
                if s >= 1.0 {
                    row.iter_mut().zip(&key).for_each(|(o, k)| *o = *k);
                } else {
                    let blend = 0.5 * (1.0 - (std::f64::consts::PI * s).cos());
                    for (i, out) in row.iter_mut().enumerate() {
                        *out = prev[i] + blend * (key[i] - prev[i]);
                    }
                }
                t += 1;
            }
            prev = key;
        }
        MotionSeq::new(frames)
    }
}

/// [`FaceRig::oracle_motion`] on the default toy face.
pub fn oracle_motion(phonemes: &[Phoneme], style: &SpeakerStyle) -> Result<MotionSeq> {
    FaceRig::default().oracle_motion(phonemes, style)
}
