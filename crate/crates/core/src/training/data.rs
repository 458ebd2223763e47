use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::audio::{MelConfig, MelExtractor};
use crate::encoders::SyntheticTextEncoder;
use crate::error::{Error, Result};
use crate::losses::lip_columns;
use crate::synthcorpus::{Corpus, Phoneme};

/// A clip with everything training needs precomputed.
#[derive(Debug, Clone)]
pub struct PreparedClip {
    pub clip_id: String,
    pub speaker: usize,
    pub sentence: usize,
    pub phonemes: Vec<Phoneme>,
    pub text: SyntheticTextEncoder,
    /// Ground-truth displacements, `T×(V·3)`.
    pub target: Array2<f64>,
    /// Log-mel frames of the clip audio, `T_mel×bins`.
    pub mel: Array2<f64>,
}

impl PreparedClip {
    pub fn num_frames(&self) -> usize {
        self.target.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<PreparedClip>,
    pub test: Vec<PreparedClip>,
    pub lip_mask: Vec<usize>,
    pub lip_columns: Vec<usize>,
    pub vertices: usize,
}

impl Dataset {
    /// Splits by sentence with the corpus seed, so every run on the same
    /// corpus sees the same held-out clips.
    pub fn from_corpus(corpus: &Corpus, test_fraction: f64) -> Result<Self> {
        if corpus.clips.is_empty() {
            return Err(Error::invalid("corpus has no clips"));
        }
        let split = corpus.split(test_fraction, corpus.manifest.seed)?;
        let mel = MelExtractor::new(MelConfig::default());
        let prepare = |i: usize| -> Result<PreparedClip> {
            let c = &corpus.clips[i];
            Ok(PreparedClip {
                clip_id: c.clip_id.clone(),
                speaker: c.speaker_id,
                sentence: c.sentence_id,
                phonemes: c.phonemes.clone(),
                text: SyntheticTextEncoder::new(&c.phonemes)?,
                target: c.motion.frames().clone(),
                mel: mel.compute(&c.audio)?.frames().clone(),
            })
        };
        let train = split.train.iter().map(|&i| prepare(i)).collect::<Result<Vec<_>>>()?;
        let test = split.test.iter().map(|&i| prepare(i)).collect::<Result<Vec<_>>>()?;
        let vertices = corpus.template.num_vertices();
        Ok(Self {
            train,
            test,
            lip_columns: lip_columns(&corpus.template.lip_mask, vertices)?,
            lip_mask: corpus.template.lip_mask.clone(),
            vertices,
        })
    }
}

/// One batch entry: a clip and, for triplet terms, the batch positions of
/// its positive (same speaker) and negative (other speaker) partners.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchEntry {
    pub clip: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Shuffled fixed-size chunks of the training clips.
pub fn plain_batches(n: usize, batch: usize, rng: &mut impl Rng) -> Vec<Vec<BatchEntry>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch)
        .map(|c| {
            c.iter()
                .map(|&clip| BatchEntry {
                    clip,
                    positive: 0,
                    negative: 0,
                })
                .collect()
        })
        .collect()
}

/// Batches of `batch / 2` speakers with two clips each. Clips are paired
/// within each speaker at random; every batch draws from the speakers with
/// the most pairs left, ties broken at random. Positives are the paired
/// clip, negatives a random batch member of another speaker.
pub fn speaker_pair_batches(clips: &[PreparedClip], batch: usize, rng: &mut impl Rng) -> Vec<Vec<BatchEntry>> {
    let per_batch = (batch / 2).max(2);
    let mut by_speaker: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, c) in clips.iter().enumerate() {
        by_speaker.entry(c.speaker).or_default().push(i);
    }
    let mut pairs: Vec<Vec<(usize, usize)>> = by_speaker
        .into_values()
        .map(|mut idx| {
            idx.shuffle(rng);
            idx.chunks_exact(2).map(|p| (p[0], p[1])).collect()
        })
        .collect();
    let mut out = Vec::new();
    loop {
        let mut live: Vec<(usize, u64)> = (0..pairs.len())
            .filter(|&s| !pairs[s].is_empty())
            .map(|s| (s, rng.gen()))
            .collect();
        if live.len() < per_batch {
            break;
        }
        live.sort_by(|a, b| pairs[b.0].len().cmp(&pairs[a.0].len()).then(a.1.cmp(&b.1)));
        let mut entries = Vec::with_capacity(per_batch * 2);
        for &(s, _) in live.iter().take(per_batch) {
            let (a, b) = pairs[s].pop().expect("live speakers have pairs");
            let k = entries.len();
            entries.push(BatchEntry {
                clip: a,
                positive: k + 1,
                negative: 0,
            });
            entries.push(BatchEntry {
                clip: b,
                positive: k,
                negative: 0,
            });
        }
        let n = entries.len();
        for i in 0..n {
            let spk = clips[entries[i].clip].speaker;
            let others: Vec<usize> = (0..n).filter(|&j| clips[entries[j].clip].speaker != spk).collect();
            entries[i].negative = others[rng.gen_range(0..others.len())];
        }
        out.push(entries);
    }
    out
}
