//! Harmonic-stack synthesis of machine-like clips.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use super::{
    AudioClip, ClipMeta, CorpusSpec, DiscrepancyMode, Domain, Label, MachineSpec, Split,
    REVERSAL_SECTION,
};

const BURST_SECONDS: f64 = 0.02;

fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Per-clip RNG derived from (corpus seed, clip_id) only.
fn clip_rng(spec: &CorpusSpec, meta: &ClipMeta) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(spec.seed ^ fnv1a64(&meta.clip_id)))
}

fn reversal_cell(spec: &CorpusSpec, meta: &ClipMeta) -> bool {
    spec.discrepancy_mode == DiscrepancyMode::Reversal
        && meta.split == Split::Test
        && meta.domain == Domain::Target
        && meta.section == REVERSAL_SECTION
}

/// One-pole lowpassed white noise, rescaled to unit RMS.
fn colored_noise(rng: &mut ChaCha8Rng, n: usize, lowpass: f64) -> Vec<f64> {
    let mut noise = vec![0.0; n];
    let mut prev = 0.0;
    for v in noise.iter_mut() {
        let w: f64 = rng.random_range(-1.0..1.0);
        prev = lowpass * prev + (1.0 - lowpass) * w;
        *v = prev;
    }
    let rms = (noise.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        for v in noise.iter_mut() {
            *v /= rms;
        }
    }
    noise
}

/// Hann-enveloped white-noise bursts at random positions.
fn add_bursts(samples: &mut [f64], rng: &mut ChaCha8Rng, sr: f64, count: usize, amplitude: f64) {
    let n = samples.len();
    let len = ((BURST_SECONDS * sr) as usize).max(2).min(n);
    for _ in 0..count {
        let start = rng.random_range(0..=n - len);
        for j in 0..len {
            let env = 0.5 * (1.0 - (2.0 * PI * j as f64 / len as f64).cos());
            let w: f64 = rng.random_range(-1.0..1.0);
            samples[start + j] += amplitude * env * w;
        }
    }
}

pub fn synthesize(spec: &CorpusSpec, machine: &MachineSpec, meta: &ClipMeta) -> AudioClip {
    let mut rng = clip_rng(spec, meta);
    let sr = spec.sample_rate as f64;
    let n = (spec.duration_s * sr).round() as usize;
    let reversal = reversal_cell(spec, meta);

    // Reversal-mode anomalies are deliberately source-like so the inlier
    // model ranks them closer to training data than the shifted normals.
    let shifted = meta.domain == Domain::Target && !reversal;

    // Reversal-mode normals run at another section's operating point, far
    // from everything section 5 saw in training while staying perfectly
    // machine-typical audio.
    let section_index = if reversal && meta.label == Label::Normal {
        0
    } else {
        meta.section as usize
    };
    let mut f0 = machine.fundamentals_hz[section_index];
    // Small per-clip jitter so clips within a cell are not identical tones.
    f0 *= 1.0 + rng.random_range(-0.005..0.005);
    if shifted {
        f0 *= 1.0 + spec.domain_shift.detune;
    }

    let anomalous = meta.label == Label::Anomalous;
    let n_detuned = if anomalous {
        ((machine.n_harmonics as f64) * spec.anomaly.detune_fraction).ceil() as usize
    } else {
        0
    };

    // Harmonic stack.
    let mut harmonic = vec![0.0; n];
    let mut amps = Vec::with_capacity(machine.n_harmonics);
    for h in 1..=machine.n_harmonics {
        let amp = (h as f64).powf(-machine.harmonic_rolloff);
        amps.push(amp);
        let phase: f64 = rng.random_range(0.0..2.0 * PI);
        // Detuned harmonics alternate up/down around the harmonic series.
        let detune = if h <= n_detuned {
            let sign = if h % 2 == 0 { 1.0 } else { -1.0 };
            1.0 + sign * spec.anomaly.harmonic_detune
        } else {
            1.0
        };
        let omega = 2.0 * PI * f0 * h as f64 * detune / sr;
        for (i, v) in harmonic.iter_mut().enumerate() {
            *v += amp * (omega * i as f64 + phase).sin();
        }
    }
    let harmonic_rms = (amps.iter().map(|a| a * a / 2.0).sum::<f64>()).sqrt();

    // Fault resonance tones above every section's harmonic stack, with a
    // little per-clip wander.
    if anomalous && spec.anomaly.extra_tone_level > 0.0 {
        for &tone_hz in &spec.anomaly.extra_tone_hz {
            let phase: f64 = rng.random_range(0.0..2.0 * PI);
            let wander = 1.0 + rng.random_range(-0.01..0.01);
            let omega = 2.0 * PI * tone_hz * wander / sr;
            let amp = spec.anomaly.extra_tone_level * harmonic_rms;
            for (i, v) in harmonic.iter_mut().enumerate() {
                *v += amp * (omega * i as f64 + phase).sin();
            }
        }
    }

    // Amplitude modulation on the harmonic part of anomalous clips.
    if anomalous && spec.anomaly.am_depth > 0.0 {
        let am_phase: f64 = rng.random_range(0.0..2.0 * PI);
        let omega = 2.0 * PI * spec.anomaly.am_rate_hz / sr;
        for (i, v) in harmonic.iter_mut().enumerate() {
            let m = 1.0 - 0.5 * spec.anomaly.am_depth
                + 0.5 * spec.anomaly.am_depth * (omega * i as f64 + am_phase).sin();
            *v *= m;
        }
    }

    // Machine noise floor.
    let floor = colored_noise(&mut rng, n, machine.noise_lowpass);
    let mut samples: Vec<f64> = harmonic
        .iter()
        .zip(&floor)
        .map(|(h, w)| h + machine.noise_level * harmonic_rms * w)
        .collect();

    // Domain-shift background noise.
    if shifted && spec.domain_shift.noise_level > 0.0 {
        let bg = colored_noise(&mut rng, n, spec.domain_shift.noise_lowpass);
        for (v, w) in samples.iter_mut().zip(&bg) {
            *v += spec.domain_shift.noise_level * harmonic_rms * w;
        }
    }
    // Ambient impulsive contamination on every clip, label-independent.
    if spec.ambient.burst_count_max > 0 && spec.ambient.burst_energy > 0.0 {
        let count = rng.random_range(0..=spec.ambient.burst_count_max);
        add_bursts(&mut samples, &mut rng, sr, count, spec.ambient.burst_energy * harmonic_rms);
    }

    // Anomaly bursts.
    if anomalous && spec.anomaly.burst_count > 0 && spec.anomaly.burst_energy > 0.0 {
        add_bursts(
            &mut samples,
            &mut rng,
            sr,
            spec.anomaly.burst_count,
            spec.anomaly.burst_energy * harmonic_rms,
        );
    }

    if shifted {
        let gain = 10f64.powf(spec.domain_shift.gain_db / 20.0);
        for v in samples.iter_mut() {
            *v *= gain;
        }
    }

    AudioClip {
        meta: meta.clone(),
        samples,
        sample_rate: spec.sample_rate,
    }
}
