//! Seeded synthetic signals: voiced "syllables" with formant-shaped
//! harmonics, fricative noise bursts, and band-limited bursts for VAD
//! fixtures. Used by tests and by the CLI's demo material.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioBuffer;
use crate::dsp;

/// Formant-like spectral envelope: sum of three resonance bumps.
fn formant_gain(f: f64, formants: &[(f64, f64); 3]) -> f64 {
    formants
        .iter()
        .map(|&(center, bw)| (-0.5 * ((f - center) / bw).powi(2)).exp())
        .sum::<f64>()
        + 0.05
}

/// One voiced syllable of `len` samples with a raised-cosine envelope.
fn syllable(rng: &mut ChaCha8Rng, len: usize, sample_rate: u32) -> Vec<f64> {
    let fs = sample_rate as f64;
    let f0_start: f64 = rng.random_range(95.0..190.0);
    let f0_end: f64 = f0_start * rng.random_range(0.8..1.2);
    let formants = [
        (rng.random_range(350.0..850.0), 120.0),
        (rng.random_range(1000.0..2200.0), 200.0),
        (rng.random_range(2300.0..3300.0), 300.0),
    ];
    let max_harmonic = (3800.0 / f0_start.min(f0_end)) as usize;
    let phases: Vec<f64> = (0..max_harmonic)
        .map(|_| rng.random_range(0.0..2.0 * PI))
        .collect();
    let mut phase0 = 0.0;
    (0..len)
        .map(|n| {
            let t = n as f64 / len as f64;
            let f0 = f0_start + (f0_end - f0_start) * t;
            phase0 += 2.0 * PI * f0 / fs;
            let env = 0.5 - 0.5 * (2.0 * PI * t).cos();
            let voiced: f64 = phases
                .iter()
                .enumerate()
                .map(|(h, ph)| {
                    let k = (h + 1) as f64;
                    if k * f0 >= 3900.0 {
                        0.0
                    } else {
                        formant_gain(k * f0, &formants) * (k * phase0 + ph).sin() / k.sqrt()
                    }
                })
                .sum();
            env * voiced
        })
        .collect()
}

fn fricative(rng: &mut ChaCha8Rng, len: usize, sample_rate: u32) -> Vec<f64> {
    let white: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let taps = dsp::design_band_pass(
        2500.0,
        5500.0_f64.min(sample_rate as f64 / 2.0 - 1.0),
        sample_rate,
    )
    .expect("static band");
    dsp::filter_aligned(&white, &taps)
        .into_iter()
        .enumerate()
        .map(|(n, v)| v * (PI * n as f64 / len as f64).sin())
        .collect()
}

fn normalize_peak(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v *= peak / m);
    }
}

/// A seeded speech-like utterance: alternating syllables, short pauses and
/// occasional fricatives, peak-normalized to `peak`.
pub fn speech_like(seed: u64, seconds: f64, sample_rate: u32, peak: f64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = (seconds * sample_rate as f64).round() as usize;
    let mut out = Vec::with_capacity(total);
    while out.len() < total {
        let remaining = total - out.len();
        let syl = ((rng.random_range(0.12..0.25) * sample_rate as f64) as usize).min(remaining);
        out.extend(syllable(&mut rng, syl, sample_rate));
        if out.len() >= total {
            break;
        }
        if rng.random_bool(0.35) {
            let len = ((rng.random_range(0.04..0.09) * sample_rate as f64) as usize)
                .min(total - out.len());
            let gain = rng.random_range(0.1..0.3);
            out.extend(
                fricative(&mut rng, len, sample_rate)
                    .into_iter()
                    .map(|v| v * gain),
            );
        } else {
            let gap = ((rng.random_range(0.01..0.04) * sample_rate as f64) as usize)
                .min(total - out.len());
            out.extend(std::iter::repeat_n(0.0, gap));
        }
    }
    out.truncate(total);
    normalize_peak(&mut out, peak);
    AudioBuffer::new(out, sample_rate)
}

/// Silence containing speech-like bursts on `spans` (seconds), plus a faint
/// noise floor at `floor_rms` (0 for digital silence).
pub fn bursts_in_silence(
    seed: u64,
    seconds: f64,
    spans: &[(f64, f64)],
    sample_rate: u32,
    peak: f64,
    floor_rms: f64,
) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = sample_rate as f64;
    let total = (seconds * fs).round() as usize;
    let mut out: Vec<f64> = (0..total)
        .map(|_| floor_rms * 3f64.sqrt() * rng.random_range(-1.0..1.0))
        .collect();
    for (i, &(start, end)) in spans.iter().enumerate() {
        let a = (start * fs).round() as usize;
        let b = ((end * fs).round() as usize).min(total);
        let burst = speech_like(
            seed.wrapping_mul(31).wrapping_add(i as u64 + 1),
            (b - a) as f64 / fs,
            sample_rate,
            peak,
        );
        // Keep the burst dense: speech_like may leave short pauses, which
        // would count against coverage, so lift its envelope with a carrier.
        for (k, v) in burst.samples.iter().enumerate() {
            let carrier = 0.25 * peak * (2.0 * PI * 220.0 * k as f64 / fs).sin();
            out[a + k] += 0.75 * v + carrier;
        }
    }
    AudioBuffer::new(out, sample_rate)
}

/// Seeded sum of sinusoids below `max_hz`, peak-normalized.
pub fn band_limited(
    seed: u64,
    len: usize,
    sample_rate: u32,
    max_hz: f64,
    peak: f64,
) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = sample_rate as f64;
    let tones: Vec<(f64, f64, f64)> = (0..12)
        .map(|_| {
            (
                rng.random_range(50.0..max_hz),
                rng.random_range(0.1..1.0),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let mut out: Vec<f64> = (0..len)
        .map(|n| {
            tones
                .iter()
                .map(|&(f, a, ph)| a * (2.0 * PI * f * n as f64 / fs + ph).sin())
                .sum()
        })
        .collect();
    normalize_peak(&mut out, peak);
    AudioBuffer::new(out, sample_rate)
}

/// Adds seeded uniform noise with the given RMS (a recording's noise floor).
pub fn with_noise_floor(audio: &AudioBuffer, seed: u64, rms: f64) -> AudioBuffer {
    let noise = uniform_noise(seed, audio.len(), audio.sample_rate, rms * 3f64.sqrt());
    AudioBuffer::new(
        audio
            .samples
            .iter()
            .zip(&noise.samples)
            .map(|(x, n)| (x + n).clamp(-1.0, 1.0))
            .collect(),
        audio.sample_rate,
    )
}

/// Speech-like utterance at 0.8 peak over a -60 dBFS noise floor.
pub fn utterance(seed: u64, seconds: f64, sample_rate: u32) -> AudioBuffer {
    with_noise_floor(
        &speech_like(seed, seconds, sample_rate, 0.8),
        seed ^ 0x5eed_f100,
        1e-3,
    )
}

/// Seeded uniform random samples in `[-amp, amp]`.
pub fn uniform_noise(seed: u64, len: usize, sample_rate: u32, amp: f64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AudioBuffer::new(
        (0..len)
            .map(|_| amp * rng.random_range(-1.0..1.0))
            .collect(),
        sample_rate,
    )
}
