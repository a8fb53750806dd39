//! Log-mel front ends and frame/segment bookkeeping.
//!
//! Conventions fixed here so outputs are test-stable: periodic Hann window,
//! frames fully inside the signal (no centering or padding), HTK mel scale,
//! natural log with a floor of 1e-10, FFT size = next power of two at or
//! above the window length.

use ndarray::{Array1, Array2};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::corpus::AudioClip;
use crate::error::{Error, Result};

pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MelConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub fft_size: usize,
    pub log_floor: f64,
}

impl MelConfig {
    /// Generative-branch preset: 64 ms window, 32 ms hop, 128 mels.
    pub fn ae_preset() -> Self {
        MelConfig {
            window_ms: 64.0,
            hop_ms: 32.0,
            n_mels: 128,
            f_min: 50.0,
            f_max: 7800.0,
            fft_size: 1024,
            log_floor: LOG_FLOOR,
        }
    }

    /// Discriminative-branch preset: 128 ms window, 16 ms hop, 224 mels.
    pub fn disc_preset() -> Self {
        MelConfig {
            window_ms: 128.0,
            hop_ms: 16.0,
            n_mels: 224,
            f_min: 50.0,
            f_max: 7800.0,
            fft_size: 2048,
            log_floor: LOG_FLOOR,
        }
    }

    pub fn window_len(&self, sample_rate: u32) -> usize {
        (self.window_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_len(&self, sample_rate: u32) -> usize {
        (self.hop_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if !(self.f_min > 0.0 && self.f_min < self.f_max) {
            return Err(Error::Config(format!(
                "mel band must satisfy 0 < f_min < f_max, got [{}, {}]",
                self.f_min, self.f_max
            )));
        }
        if self.f_max > sample_rate as f64 / 2.0 {
            return Err(Error::Config(format!(
                "f_max {} exceeds Nyquist {}",
                self.f_max,
                sample_rate as f64 / 2.0
            )));
        }
        if self.n_mels == 0 {
            return Err(Error::Config("n_mels must be >= 1".into()));
        }
        let win = self.window_len(sample_rate);
        if self.fft_size < win || !self.fft_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "fft_size {} must be a power of two >= window length {win}",
                self.fft_size
            )));
        }
        if self.log_floor <= 0.0 {
            return Err(Error::Config("log_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Log-mel time-frequency matrix, `[n_frames x n_mels]`.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub values: Array2<f64>,
    pub clip_id: String,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.values.ncols()
    }
}

pub fn n_stft_frames(len: usize, window_len: usize, hop: usize) -> usize {
    (len - window_len) / hop + 1
}

/// Short-time Fourier transform with a periodic Hann window.
/// Frame t covers samples `[t*hop, t*hop + window_len)`.
pub fn stft(
    samples: &[f64],
    window_len: usize,
    hop: usize,
    fft_size: usize,
) -> Result<Array2<Complex<f64>>> {
    if window_len > fft_size {
        return Err(Error::Config(format!(
            "window_len {window_len} exceeds fft_size {fft_size}"
        )));
    }
    if hop == 0 {
        return Err(Error::Config("hop must be >= 1".into()));
    }
    if samples.len() < window_len {
        return Err(Error::Size(format!(
            "signal of {} samples shorter than one window of {window_len}",
            samples.len()
        )));
    }

    let window: Vec<f64> = (0..window_len)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / window_len as f64).cos()))
        .collect();
    let n_frames = n_stft_frames(samples.len(), window_len, hop);
    let n_bins = fft_size / 2 + 1;

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(fft_size);
    let mut out = Array2::zeros((n_frames, n_bins));
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    for t in 0..n_frames {
        let start = t * hop;
        for i in 0..fft_size {
            let v = if i < window_len {
                samples[start + i] * window[i]
            } else {
                0.0
            };
            buf[i] = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        for (k, v) in buf.iter().take(n_bins).enumerate() {
            out[(t, k)] = *v;
        }
    }
    Ok(out)
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// HTK-style triangular mel filterbank, `[n_mels x (fft_size/2 + 1)]`.
pub fn mel_filterbank(config: &MelConfig, sample_rate: u32) -> Result<Array2<f64>> {
    config.validate(sample_rate)?;
    let n_bins = config.fft_size / 2 + 1;
    let mel_lo = hz_to_mel(config.f_min);
    let mel_hi = hz_to_mel(config.f_max);
    // n_mels + 2 edge points, linearly spaced on the mel scale.
    let edges: Vec<f64> = (0..config.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (config.n_mels + 1) as f64))
        .collect();

    let bin_hz = sample_rate as f64 / config.fft_size as f64;
    let mut fb = Array2::zeros((config.n_mels, n_bins));
    for m in 0..config.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut total = 0.0;
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = if f <= left || f >= right {
                0.0
            } else if f <= center {
                (f - left) / (center - left)
            } else {
                (right - f) / (right - center)
            };
            fb[(m, k)] = w;
            total += w;
        }
        if total <= 0.0 {
            return Err(Error::Config(format!(
                "mel filter {m} ({left:.1}-{right:.1} Hz) spans no FFT bins; \
                 n_mels too large for fft_size {}",
                config.fft_size
            )));
        }
    }
    Ok(fb)
}

/// Natural-log mel power spectrogram: `ln(max(fb * |STFT|^2, log_floor))`.
pub fn log_mel(clip: &AudioClip, config: &MelConfig) -> Result<Spectrogram> {
    let win = config.window_len(clip.sample_rate);
    let hop = config.hop_len(clip.sample_rate);
    let spec = stft(&clip.samples, win, hop, config.fft_size)?;
    let fb = mel_filterbank(config, clip.sample_rate)?;

    let n_frames = spec.nrows();
    let n_bins = spec.ncols();
    let mut power = Array2::zeros((n_frames, n_bins));
    for t in 0..n_frames {
        for k in 0..n_bins {
            power[(t, k)] = spec[(t, k)].norm_sqr();
        }
    }
    let mut mel = power.dot(&fb.t());
    mel.mapv_inplace(|v| v.max(config.log_floor).ln());
    Ok(Spectrogram {
        values: mel,
        clip_id: clip.meta.clip_id.clone(),
    })
}

/// Sliding concatenation of `context` consecutive frames, stride 1.
/// Returns `[n_frames - context + 1, context * n_mels]`.
pub fn frame_context(spec: &Spectrogram, context: usize) -> Result<Array2<f64>> {
    if context == 0 {
        return Err(Error::Config("context must be >= 1".into()));
    }
    let n_frames = spec.n_frames();
    if n_frames < context {
        return Err(Error::Size(format!(
            "spectrogram of {n_frames} frames shorter than context {context}"
        )));
    }
    let n_mels = spec.n_mels();
    let n_out = n_frames - context + 1;
    let mut out = Array2::zeros((n_out, context * n_mels));
    for i in 0..n_out {
        for c in 0..context {
            for m in 0..n_mels {
                out[(i, c * n_mels + m)] = spec.values[(i + c, m)];
            }
        }
    }
    Ok(out)
}

/// Cut into fixed-length segments; starts advance by `seg_seconds * (1 - overlap)`.
pub fn segment_clip(clip: &AudioClip, seg_seconds: f64, overlap: f64) -> Result<Vec<AudioClip>> {
    if !(0.0..1.0).contains(&overlap) || seg_seconds <= 0.0 {
        return Err(Error::Config(format!(
            "bad segmentation parameters seg={seg_seconds}, overlap={overlap}"
        )));
    }
    let seg_len = (seg_seconds * clip.sample_rate as f64).round() as usize;
    if clip.samples.len() < seg_len {
        return Err(Error::Size(format!(
            "clip `{}` of {:.2}s shorter than one {seg_seconds}s segment",
            clip.meta.clip_id,
            clip.duration_s()
        )));
    }
    let stride = ((seg_seconds * (1.0 - overlap)) * clip.sample_rate as f64).round() as usize;
    let stride = stride.max(1);
    let n_segments = (clip.samples.len() - seg_len) / stride + 1;
    let mut segments = Vec::with_capacity(n_segments);
    for s in 0..n_segments {
        let start = s * stride;
        segments.push(AudioClip {
            meta: clip.meta.clone(),
            samples: clip.samples[start..start + seg_len].to_vec(),
            sample_rate: clip.sample_rate,
        });
    }
    Ok(segments)
}

/// Per-mel temporal mean of a log-mel spectrogram; used by corpus-level
/// distance diagnostics.
pub fn mean_log_mel(spec: &Spectrogram) -> Array1<f64> {
    let n = spec.n_frames() as f64;
    spec.values.sum_axis(ndarray::Axis(0)) / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ClipMeta, Domain, Label, Split};

    fn clip_of(samples: Vec<f64>) -> AudioClip {
        AudioClip {
            meta: ClipMeta {
                clip_id: "c".into(),
                machine: "m".into(),
                section: 0,
                domain: Domain::Source,
                label: Label::Normal,
                split: Split::Test,
            },
            samples,
            sample_rate: 16_000,
        }
    }

    /// Direct O(n^2) DFT of one Hann-windowed frame.
    fn dft_frame(samples: &[f64], fft_size: usize) -> Vec<Complex<f64>> {
        let n = samples.len();
        let windowed: Vec<f64> = samples
            .iter()
            .enumerate()
            .map(|(i, &s)| s * 0.5 * (1.0 - (2.0 * PI * i as f64 / n as f64).cos()))
            .collect();
        (0..fft_size / 2 + 1)
            .map(|k| {
                let mut acc = Complex::new(0.0, 0.0);
                for (i, &v) in windowed.iter().enumerate() {
                    let ang = -2.0 * PI * (k * i) as f64 / fft_size as f64;
                    acc += Complex::new(v * ang.cos(), v * ang.sin());
                }
                acc
            })
            .collect()
    }

    #[test]
    fn stft_zero_signal_is_zero() {
        let spec = stft(&vec![0.0; 2048], 1024, 512, 1024).unwrap();
        assert!(spec.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn stft_matches_direct_dft_oracle() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let spec = stft(&samples, 128, 64, 128).unwrap();
        for t in 0..spec.nrows() {
            let oracle = dft_frame(&samples[t * 64..t * 64 + 128], 128);
            for k in 0..spec.ncols() {
                let diff = (spec[(t, k)] - oracle[k]).norm();
                let scale = oracle[k].norm().max(1.0);
                assert!(diff / scale < 1e-6, "frame {t} bin {k}: {diff}");
            }
        }
    }

    #[test]
    fn stft_sinusoid_energy_concentrates() {
        // Bin-aligned sinusoid: k = 8 at fft_size 256.
        let fft_size = 256;
        let k = 8;
        let samples: Vec<f64> = (0..1024)
            .map(|i| (2.0 * PI * k as f64 * i as f64 / fft_size as f64).sin())
            .collect();
        let spec = stft(&samples, fft_size, fft_size / 2, fft_size).unwrap();
        for t in 0..spec.nrows() {
            let total: f64 = (0..spec.ncols()).map(|b| spec[(t, b)].norm_sqr()).sum();
            let near: f64 = (k - 1..=k + 1).map(|b| spec[(t, b)].norm_sqr()).sum();
            assert!(near / total >= 0.95, "frame {t}: {}", near / total);
        }
    }

    #[test]
    fn stft_frame_count_formula() {
        let spec = stft(&vec![0.0; 160_000], 1024, 512, 1024).unwrap();
        assert_eq!(spec.nrows(), 311);
    }

    #[test]
    fn stft_short_signal_rejected() {
        assert!(matches!(
            stft(&vec![0.0; 100], 1024, 512, 1024),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn filterbank_shape_and_positivity() {
        let cfg = MelConfig::ae_preset();
        let fb = mel_filterbank(&cfg, 16_000).unwrap();
        assert_eq!(fb.nrows(), 128);
        assert_eq!(fb.ncols(), 513);
        assert!(fb.iter().all(|&w| w >= 0.0));
        for m in 0..fb.nrows() {
            assert!(fb.row(m).sum() > 0.0, "filter {m} has zero weight");
        }
    }

    #[test]
    fn filterbank_peaks_strictly_increasing() {
        let cfg = MelConfig::ae_preset();
        let fb = mel_filterbank(&cfg, 16_000).unwrap();
        let mut prev_peak = -1isize;
        for m in 0..fb.nrows() {
            let peak = fb
                .row(m)
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0 as isize;
            assert!(peak > prev_peak, "filter {m} peak not increasing");
            prev_peak = peak;
        }
    }

    #[test]
    fn filterbank_band_edges() {
        let cfg = MelConfig::ae_preset();
        let fb = mel_filterbank(&cfg, 16_000).unwrap();
        let bin_hz = 16_000.0 / cfg.fft_size as f64;
        // No weight strictly below f_min or above f_max.
        for m in 0..fb.nrows() {
            for k in 0..fb.ncols() {
                let f = k as f64 * bin_hz;
                if f <= cfg.f_min || f >= cfg.f_max {
                    assert_eq!(fb[(m, k)], 0.0);
                }
            }
        }
    }

    #[test]
    fn filterbank_too_many_mels_rejected() {
        let cfg = MelConfig {
            n_mels: 2000,
            ..MelConfig::ae_preset()
        };
        assert!(matches!(mel_filterbank(&cfg, 16_000), Err(Error::Config(_))));
    }

    #[test]
    fn log_mel_floor_and_homogeneity() {
        let cfg = MelConfig::ae_preset();
        // All-zero clip hits the floor everywhere.
        let zero = log_mel(&clip_of(vec![0.0; 4096]), &cfg).unwrap();
        assert!(zero.values.iter().all(|&v| v == LOG_FLOOR.ln()));

        // Doubling amplitude shifts log power by ln 4 where above the floor.
        let base: Vec<f64> = (0..8192).map(|i| (i as f64 * 0.05).sin()).collect();
        let doubled: Vec<f64> = base.iter().map(|&s| 2.0 * s).collect();
        let a = log_mel(&clip_of(base), &cfg).unwrap();
        let b = log_mel(&clip_of(doubled), &cfg).unwrap();
        let ln4 = 4f64.ln();
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            if *x > LOG_FLOOR.ln() + ln4 {
                assert!((y - x - ln4).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn log_mel_frame_count_ae_preset() {
        let clip = clip_of(vec![0.1; 160_000]);
        let spec = log_mel(&clip, &MelConfig::ae_preset()).unwrap();
        assert_eq!(spec.n_frames(), 311);
        assert!(spec.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn frame_context_counts_and_identity() {
        let spec = Spectrogram {
            values: Array2::from_shape_fn((10, 3), |(i, j)| (i * 3 + j) as f64),
            clip_id: "c".into(),
        };
        let id = frame_context(&spec, 1).unwrap();
        assert_eq!(id, spec.values);
        let ctx = frame_context(&spec, 5).unwrap();
        assert_eq!(ctx.nrows(), 6);
        assert_eq!(ctx.ncols(), 15);
        // First vector is frames 0..5 concatenated.
        for c in 0..5 {
            for m in 0..3 {
                assert_eq!(ctx[(0, c * 3 + m)], spec.values[(c, m)]);
            }
        }
        let short = Spectrogram {
            values: Array2::zeros((4, 3)),
            clip_id: "c".into(),
        };
        assert!(matches!(frame_context(&short, 5), Err(Error::Size(_))));
    }

    #[test]
    fn segment_clip_counts() {
        let ten_s = clip_of(vec![0.0; 160_000]);
        let segs = segment_clip(&ten_s, 4.0, 0.75).unwrap();
        assert_eq!(segs.len(), 7);
        for (i, s) in segs.iter().enumerate() {
            assert_eq!(s.samples.len(), 64_000);
            // Starts at whole seconds {0..6}.
            assert_eq!(ten_s.samples.len() - s.samples.len() >= i * 16_000, true);
        }
        let four_s = clip_of(vec![0.0; 64_000]);
        assert_eq!(segment_clip(&four_s, 4.0, 0.75).unwrap().len(), 1);
        let three_s = clip_of(vec![0.0; 48_000]);
        assert!(matches!(
            segment_clip(&three_s, 4.0, 0.75),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn segment_starts_every_second() {
        let mut samples = vec![0.0; 160_000];
        for (i, v) in samples.iter_mut().enumerate() {
            *v = i as f64;
        }
        let clip = clip_of(samples);
        let segs = segment_clip(&clip, 4.0, 0.75).unwrap();
        for (i, s) in segs.iter().enumerate() {
            assert_eq!(s.samples[0], (i * 16_000) as f64);
        }
    }
}
