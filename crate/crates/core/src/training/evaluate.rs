use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::metrics::{ClipMetrics, MetricReport};
use crate::synthcorpus::MotionSeq;

use super::checkpoint::Checkpoint;
use super::data::PreparedClip;
use super::synth::{SynthMode, Synthesizer};

/// Synthesizes one prepared clip from its phonemes (and its audio in
/// personalized mode).
pub fn synthesize_clip(ckpt: &Checkpoint, clip: &PreparedClip, mode: SynthMode) -> Result<MotionSeq> {
    Synthesizer::from_checkpoint(ckpt).synthesize(&clip.text, clip.num_frames(), Some(&clip.mel), mode)
}

pub fn evaluate_clips(
    ckpt: &Checkpoint,
    clips: &[PreparedClip],
    lip_mask: &[usize],
    mode: SynthMode,
) -> Result<MetricReport> {
    let rows = clips
        .iter()
        .map(|c| {
            let hyp = synthesize_clip(ckpt, c, mode)?;
            let reference = MotionSeq::new(c.target.clone())?;
            ClipMetrics::compute(&c.clip_id, &reference, &hyp, lip_mask)
        })
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_clips(rows)
}

/// Mean LVE per speaker, then the mean over speakers.
pub fn per_speaker_lve(clips: &[PreparedClip], report: &MetricReport) -> Result<(BTreeMap<usize, f64>, f64)> {
    if clips.len() != report.clips.len() {
        return Err(Error::invalid("report rows do not match the clip list"));
    }
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (c, row) in clips.iter().zip(&report.clips) {
        let e = sums.entry(c.speaker).or_default();
        e.0 += row.lve;
        e.1 += 1;
    }
    let per: BTreeMap<usize, f64> = sums.into_iter().map(|(s, (sum, n))| (s, sum / n as f64)).collect();
    let mean = per.values().sum::<f64>() / per.len() as f64;
    Ok((per, mean))
}

/// Held-out per-speaker LVE averaged over speakers.
pub fn heldout_lve(ckpt: &Checkpoint, clips: &[PreparedClip], lip_mask: &[usize], mode: SynthMode) -> Result<f64> {
    let report = evaluate_clips(ckpt, clips, lip_mask, mode)?;
    per_speaker_lve(clips, &report).map(|(_, m)| m)
}

/// Mean pairwise Euclidean distance of style features within and across
/// speakers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StyleSeparation {
    pub intra: f64,
    pub inter: f64,
}

pub fn style_separation(ckpt: &Checkpoint, clips: &[PreparedClip]) -> Result<StyleSeparation> {
    let synth = Synthesizer::from_checkpoint(ckpt);
    let feats = clips
        .iter()
        .map(|c| synth.style_vector(&c.mel))
        .collect::<Result<Vec<_>>>()?;
    let (mut intra, mut inter) = ((0.0, 0usize), (0.0, 0usize));
    for i in 0..clips.len() {
        for j in i + 1..clips.len() {
            let d = feats[i].iter().zip(&feats[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let acc = if clips[i].speaker == clips[j].speaker { &mut intra } else { &mut inter };
            acc.0 += d;
            acc.1 += 1;
        }
    }
    if intra.1 == 0 || inter.1 == 0 {
        return Err(Error::invalid("style separation needs two clips of one speaker and two speakers"));
    }
    Ok(StyleSeparation {
        intra: intra.0 / intra.1 as f64,
        inter: inter.0 / inter.1 as f64,
    })
}
