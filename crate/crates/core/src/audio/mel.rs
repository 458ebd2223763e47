use std::fmt::Write as _;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::{num_complex::Complex, Fft, FftPlanner};

use crate::error::{Error, Result};

use super::wav::{AudioClip, SAMPLE_RATE};

/// Short-time analysis settings for the log-mel front end.
#[derive(Debug, Clone, PartialEq)]
pub struct MelConfig {
    pub win_length: usize,
    pub hop_length: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Energies are clamped to this before the natural log.
    pub floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            win_length: 400,
            hop_length: 160,
            n_fft: 512,
            n_mels: 80,
            f_min: 0.0,
            f_max: 8000.0,
            floor: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn log_floor(&self) -> f64 {
        self.floor.ln()
    }

    /// `1 + ⌊(n − win)/hop⌋` for clips at least one window long.
    pub fn frame_count(&self, samples: usize) -> usize {
        if samples < self.win_length {
            0
        } else {
            1 + (samples - self.win_length) / self.hop_length
        }
    }
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if hz >= MIN_LOG_HZ {
        min_log_mel + (hz / MIN_LOG_HZ).ln() / logstep
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if mel >= min_log_mel {
        MIN_LOG_HZ * (logstep * (mel - min_log_mel)).exp()
    } else {
        F_SP * mel
    }
}

/// `n_mels + 2` band edges equally spaced on the mel scale.
fn band_edges(cfg: &MelConfig) -> Vec<f64> {
    let lo = hz_to_mel(cfg.f_min);
    let hi = hz_to_mel(cfg.f_max);
    (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Peak frequency of each triangular filter.
pub fn center_frequencies(cfg: &MelConfig) -> Vec<f64> {
    band_edges(cfg)[1..=cfg.n_mels].to_vec()
}

/// `n_mels × (n_fft/2 + 1)` triangular filters with unit peak.
pub fn filterbank(cfg: &MelConfig) -> Array2<f64> {
    let bins = cfg.n_fft / 2 + 1;
    let edges = band_edges(cfg);
    let bin_hz: Vec<f64> = (0..bins)
        .map(|k| k as f64 * f64::from(SAMPLE_RATE) / cfg.n_fft as f64)
        .collect();
    Array2::from_shape_fn((cfg.n_mels, bins), |(m, k)| {
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        let f = bin_hz[k];
        let rising = (f - l) / (c - l);
        let falling = (r - f) / (r - c);
        rising.min(falling).max(0.0)
    })
}

/// Log-mel energies, one row per analysis frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MelGram {
    frames: Array2<f64>,
}

impl MelGram {
    pub fn from_frames(frames: Array2<f64>) -> Result<Self> {
        if frames.nrows() == 0 {
            return Err(Error::invalid("mel-spectrogram needs at least one frame"));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("mel-spectrogram has non-finite entries"));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.frames.ncols()
    }

    /// CSV with header `frame,bin0..binK`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame");
        for b in 0..self.num_bins() {
            let _ = write!(out, ",bin{b}");
        }
        out.push('\n');
        for (t, row) in self.frames.outer_iter().enumerate() {
            let _ = write!(out, "{t}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Reusable STFT plan and filterbank.
pub struct MelExtractor {
    cfg: MelConfig,
    window: Vec<f64>,
    bank: Array2<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl MelExtractor {
    pub fn new(cfg: MelConfig) -> Self {
        let window = (0..cfg.win_length)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / cfg.win_length as f64).cos())
            .collect();
        let bank = filterbank(&cfg);
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Self { cfg, window, bank, fft }
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    /// Power spectrum `|X_k|²` of each Hann-windowed frame.
    fn power_spectra(&self, samples: &[f64]) -> Array2<f64> {
        let frames = self.cfg.frame_count(samples.len());
        let bins = self.cfg.n_fft / 2 + 1;
        let mut power = Array2::zeros((frames, bins));
        let mut buf = vec![Complex::new(0.0, 0.0); self.cfg.n_fft];
        for t in 0..frames {
            let start = t * self.cfg.hop_length;
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (n, w) in self.window.iter().enumerate() {
                buf[n] = Complex::new(samples[start + n] * w, 0.0);
            }
            self.fft.process(&mut buf);
            for k in 0..bins {
                power[[t, k]] = buf[k].norm_sqr();
            }
        }
        power
    }

    pub fn compute(&self, clip: &AudioClip) -> Result<MelGram> {
        if clip.len() < self.cfg.win_length {
            return Err(Error::invalid(format!(
                "clip of {} samples is shorter than one {}-sample window",
                clip.len(),
                self.cfg.win_length
            )));
        }
        let power = self.power_spectra(clip.samples());
        let floor = self.cfg.floor;
        let energies = power.dot(&self.bank.t()).mapv(|e| e.max(floor).ln());
        MelGram::from_frames(energies)
    }
}

/// Log-mel spectrogram with the default analysis settings.
pub fn mel_spectrogram(clip: &AudioClip) -> Result<MelGram> {
    MelExtractor::new(MelConfig::default()).compute(clip)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, amp: f64, n: usize, offset: usize) -> AudioClip {
        let s = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * (i + offset) as f64 / 16_000.0).sin())
            .collect();
        AudioClip::new(s).unwrap()
    }

    #[test]
    fn silence_sits_on_the_floor() {
        let mel = mel_spectrogram(&AudioClip::new(vec![0.0; 4000]).unwrap()).unwrap();
        let floor = 1e-10f64.ln();
        assert!(mel.frames().iter().all(|&v| v == floor));
        assert_eq!(mel.num_bins(), 80);
    }

    #[test]
    fn one_second_has_98_frames() {
        let mel = mel_spectrogram(&AudioClip::new(vec![0.0; 16_000]).unwrap()).unwrap();
        assert_eq!(mel.num_frames(), 1 + (16_000 - 400) / 160);
        assert_eq!(mel.num_frames(), 98);
    }

    #[test]
    fn short_clip_is_rejected() {
        assert!(mel_spectrogram(&AudioClip::new(vec![0.0; 399]).unwrap()).is_err());
    }

    #[test]
    fn tone_peaks_at_nearest_filter() {
        let cfg = MelConfig::default();
        let centers = center_frequencies(&cfg);
        let nearest = centers
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 440.0).abs().total_cmp(&(b.1 - 440.0).abs()))
            .unwrap()
            .0;
        let mel = mel_spectrogram(&tone(440.0, 0.5, 8000, 0)).unwrap();
        for row in mel.frames().outer_iter() {
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(argmax, nearest);
        }
    }

    #[test]
    fn hop_shift_moves_rows() {
        let a = mel_spectrogram(&tone(700.0, 0.3, 6400, 0)).unwrap();
        let b = mel_spectrogram(&tone(700.0, 0.3, 6400, 160)).unwrap();
        for t in 1..a.num_frames() - 1 {
            for m in 0..80 {
                assert!((a.frames()[[t + 1, m]] - b.frames()[[t, m]]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn doubling_amplitude_adds_ln4() {
        let cfg = MelConfig::default();
        let a = mel_spectrogram(&tone(300.0, 0.2, 3200, 0)).unwrap();
        let b = mel_spectrogram(&tone(300.0, 0.4, 3200, 0)).unwrap();
        let floor = cfg.log_floor();
        for (x, y) in a.frames().iter().zip(b.frames()) {
            if *x > floor && *y > floor {
                assert!((y - x - 4f64.ln()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn no_empty_filters() {
        let bank = filterbank(&MelConfig::default());
        for row in bank.outer_iter() {
            assert!(row.sum() > 0.0);
        }
    }

    #[test]
    fn csv_header() {
        let mel = MelGram::from_frames(Array2::zeros((2, 80))).unwrap();
        let csv = mel.to_csv();
        let header = csv.lines().next().unwrap();
        assert!(header.starts_with("frame,bin0,bin1"));
        assert!(header.ends_with(",bin79"));
        assert_eq!(csv.lines().count(), 3);
    }
}
