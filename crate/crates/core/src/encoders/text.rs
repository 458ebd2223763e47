use std::path::Path;

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::io::{atomic_write, read_file, Reader};
use crate::nn::{init_linear, linear};
use crate::numerics::{interp_matrix, Graph, Var};
use crate::params::{Bound, ParamGroup, ParamStore};
use crate::synthcorpus::{frame_visemes, validate_phonemes, Phoneme, NUM_VISEMES};

pub const VISEME_EMBEDDING: &str = "text_encoder.embedding";
pub const TEXT_PROJECTION: &str = "text_encoder.proj";

const TXTF_MAGIC: &[u8; 4] = b"TXTF";
const TXTF_VERSION: u32 = 1;

/// Projected per-frame text representation `f_txt`, `T×n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextRepSeq {
    pub reps: Array2<f64>,
}

/// A source of per-frame speech features of width `d_txt`, before
/// resampling to the motion rate and projection onto the slots.
pub trait TextRepEncoder {
    fn source_len(&self) -> usize;

    /// Records the `T_src×d_txt` source features on the graph.
    fn source_features(&self, g: &mut Graph, b: &Bound) -> Result<Var>;
}

/// Learned viseme embeddings, one row per frame at the phoneme frame rate.
#[derive(Debug, Clone)]
pub struct SyntheticTextEncoder {
    frames: Vec<usize>,
}

impl SyntheticTextEncoder {
    pub fn new(phonemes: &[Phoneme]) -> Result<Self> {
        validate_phonemes(phonemes)?;
        Ok(Self {
            frames: frame_visemes(phonemes),
        })
    }

    fn one_hot(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.frames.len(), NUM_VISEMES));
        for (t, &v) in self.frames.iter().enumerate() {
            m[[t, v]] = 1.0;
        }
        m
    }
}

impl TextRepEncoder for SyntheticTextEncoder {
    fn source_len(&self) -> usize {
        self.frames.len()
    }

    fn source_features(&self, g: &mut Graph, b: &Bound) -> Result<Var> {
        let onehot = g.constant(self.one_hot());
        Ok(g.matmul(onehot, b.var(VISEME_EMBEDDING)))
    }
}

/// Features computed by an external speech model and stored as TXTF.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputedTextFeatures {
    features: Array2<f64>,
}

impl PrecomputedTextFeatures {
    pub fn new(features: Array2<f64>) -> Result<Self> {
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::invalid("text features must be non-empty"));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("text features contain non-finite values"));
        }
        Ok(Self { features })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn width(&self) -> usize {
        self.features.ncols()
    }

    pub fn to_txtf_bytes(&self) -> Vec<u8> {
        let (t, d) = self.features.dim();
        let mut out = Vec::with_capacity(16 + 4 * t * d);
        out.extend_from_slice(TXTF_MAGIC);
        for v in [TXTF_VERSION, t as u32, d as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.features.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_txtf_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        r.expect_magic(TXTF_MAGIC)?;
        let version = r.u32()?;
        if version != TXTF_VERSION {
            return Err(Error::format(path, format!("TXTF version {version} is not supported")));
        }
        let t = r.u32()? as usize;
        let d = r.u32()? as usize;
        let mut data = Vec::with_capacity(t * d);
        for _ in 0..t * d {
            data.push(f64::from(r.f32()?));
        }
        r.finish()?;
        let m = Array2::from_shape_vec((t, d), data).expect("sized above");
        Self::new(m).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        atomic_write(path.as_ref(), &self.to_txtf_bytes())
    }

    /// Loads a TXTF file and checks its width against the model's `d_txt`.
    pub fn load(path: impl AsRef<Path>, d_txt: usize) -> Result<Self> {
        let path = path.as_ref();
        let f = Self::from_txtf_bytes(&read_file(path)?, path)?;
        if f.width() != d_txt {
            return Err(Error::UnsupportedFormat(format!(
                "{}: feature width {} but the model expects d_txt = {d_txt}",
                path.display(),
                f.width()
            )));
        }
        Ok(f)
    }
}

impl TextRepEncoder for PrecomputedTextFeatures {
    fn source_len(&self) -> usize {
        self.features.nrows()
    }

    fn source_features(&self, g: &mut Graph, _b: &Bound) -> Result<Var> {
        Ok(g.constant(self.features.clone()))
    }
}

pub fn init_text_encoder(
    store: &mut ParamStore,
    d_txt: usize,
    slots: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    let limit = (3.0 / d_txt as f64).sqrt();
    let emb = Array2::from_shape_simple_fn((NUM_VISEMES, d_txt), || rng.gen_range(-limit..limit));
    store.insert(VISEME_EMBEDDING, ParamGroup::TextEncoder, emb)?;
    init_linear(store, TEXT_PROJECTION, ParamGroup::TextEncoder, d_txt, slots, rng)
}

/// Source features resampled to `t_out` frames and projected to the slot
/// count: `f_txt = ψ→n(Interp(E_aud(a)))`.
pub fn text_encoder_graph(
    g: &mut Graph,
    b: &Bound,
    source: &dyn TextRepEncoder,
    t_out: usize,
) -> Result<Var> {
    if source.source_len() == 0 {
        return Err(Error::invalid("text source is empty"));
    }
    let feats = source.source_features(g, b)?;
    let d_txt = g.shape(b.var(&crate::nn::weight_name(TEXT_PROJECTION))).0;
    if g.shape(feats).1 != d_txt {
        return Err(Error::UnsupportedFormat(format!(
            "text features have width {} but the projection expects {d_txt}",
            g.shape(feats).1
        )));
    }
    let resampled = if t_out == source.source_len() {
        feats
    } else {
        let m = g.constant(interp_matrix(source.source_len(), t_out)?);
        g.matmul(m, feats)
    };
    Ok(linear(g, b, TEXT_PROJECTION, resampled))
}

pub fn text_encode(source: &dyn TextRepEncoder, t_out: usize, params: &ParamStore) -> Result<TextRepSeq> {
    let mut g = Graph::new();
    let b = params.bind(&mut g, |_, _| false);
    let f = text_encoder_graph(&mut g, &b, source, t_out)?;
    Ok(TextRepSeq {
        reps: g.value(f).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::linear_interp_time;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        init_text_encoder(&mut s, 8, 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        s
    }

    fn project(s: &ParamStore, x: &Array2<f64>) -> Array2<f64> {
        x.dot(s.get("text_encoder.proj.weight").unwrap()) + s.get("text_encoder.proj.bias").unwrap()
    }

    #[test]
    fn held_viseme_gives_identical_rows() {
        let s = store();
        let src = SyntheticTextEncoder::new(&[Phoneme::new(4, 6)]).unwrap();
        let r = text_encode(&src, 9, &s).unwrap().reps;
        assert_eq!(r.nrows(), 9);
        for t in 1..9 {
            for j in 0..5 {
                assert!((r[[t, j]] - r[[0, j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn same_length_skips_resampling() {
        let s = store();
        let ph = [Phoneme::new(1, 2), Phoneme::new(3, 3)];
        let src = SyntheticTextEncoder::new(&ph).unwrap();
        let emb = s.get(VISEME_EMBEDDING).unwrap();
        let rows: Vec<_> = frame_visemes(&ph).into_iter().map(|v| emb.row(v).to_owned()).collect();
        let views: Vec<_> = rows.iter().map(|r| r.view().insert_axis(ndarray::Axis(0))).collect();
        let x = ndarray::concatenate(ndarray::Axis(0), &views).unwrap();
        assert_eq!(text_encode(&src, 5, &s).unwrap().reps, project(&s, &x));
    }

    #[test]
    fn upsampling_matches_interpolation_oracle() {
        let s = store();
        let src = SyntheticTextEncoder::new(&[Phoneme::new(2, 1), Phoneme::new(7, 1)]).unwrap();
        let emb = s.get(VISEME_EMBEDDING).unwrap();
        let x = ndarray::stack![ndarray::Axis(0), emb.row(2), emb.row(7)];
        let want = project(&s, &linear_interp_time(&x, 4).unwrap());
        let got = text_encode(&src, 4, &s).unwrap().reps;
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn txtf_round_trip_and_width_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.txtf");
        let f = PrecomputedTextFeatures::new(Array2::from_elem((3, 8), 0.25)).unwrap();
        f.save(&p).unwrap();
        assert_eq!(PrecomputedTextFeatures::load(&p, 8).unwrap(), f);
        assert!(matches!(
            PrecomputedTextFeatures::load(&p, 64),
            Err(Error::UnsupportedFormat(_))
        ));
        let bytes = std::fs::read(&p).unwrap();
        assert!(PrecomputedTextFeatures::from_txtf_bytes(&bytes[..20], &p).is_err());
    }

    #[test]
    fn precomputed_path_uses_same_projection() {
        let s = store();
        let x = Array2::from_shape_fn((4, 8), |(i, j)| (i * 8 + j) as f64 * 0.01);
        let src = PrecomputedTextFeatures::new(x.clone()).unwrap();
        let got = text_encode(&src, 7, &s).unwrap().reps;
        assert_eq!(got.nrows(), 7);
        let want = project(&s, &linear_interp_time(&x, 7).unwrap());
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
