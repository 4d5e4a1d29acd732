//! Adaptive-energy voice activity detector with hangover.
//!
//! Frames of 10 ms are active when their energy exceeds a per-file noise floor
//! by a margin. The floor is the 10th percentile of frame energies, capped at
//! an absolute level so a file that is active throughout still registers.

use crate::audio::{ms_to_samples, AudioBuffer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeechRegion {
    pub start: f64,
    pub end: f64,
}

impl SpeechRegion {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn overlap(&self, other: &SpeechRegion) -> f64 {
        (self.end.min(other.end) - self.start.max(other.start)).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VadConfig {
    pub frame_ms: f64,
    pub margin_db: f64,
    pub hangover_frames: usize,
    pub min_region_ms: f64,
    pub floor_percentile: f64,
    /// Ceiling on the noise floor estimate, dBFS.
    pub max_floor_db: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            frame_ms: 10.0,
            margin_db: 9.0,
            hangover_frames: 5,
            min_region_ms: 30.0,
            floor_percentile: 0.10,
            max_floor_db: -50.0,
        }
    }
}

const ENERGY_EPS: f64 = 1e-20;

fn frame_energy_db(frame: &[f64]) -> f64 {
    let ms = frame.iter().map(|v| v * v).sum::<f64>() / frame.len() as f64;
    10.0 * (ms + ENERGY_EPS).log10()
}

fn percentile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = ((sorted.len() - 1) as f64 * p).floor() as usize;
    sorted[idx]
}

pub fn detect_speech(audio: &AudioBuffer) -> Vec<SpeechRegion> {
    detect_speech_with(audio, &VadConfig::default())
}

pub fn detect_speech_with(audio: &AudioBuffer, config: &VadConfig) -> Vec<SpeechRegion> {
    if audio.is_empty() {
        return Vec::new();
    }
    let frame_len = ms_to_samples(config.frame_ms, audio.sample_rate);
    let energies: Vec<f64> = audio
        .samples
        .chunks(frame_len)
        .map(frame_energy_db)
        .collect();
    let floor = percentile(&energies, config.floor_percentile).min(config.max_floor_db);
    let threshold = floor + config.margin_db;

    let mut active = Vec::with_capacity(energies.len());
    let mut hang = 0usize;
    for &e in &energies {
        if e > threshold {
            hang = config.hangover_frames;
            active.push(true);
        } else if hang > 0 {
            hang -= 1;
            active.push(true);
        } else {
            active.push(false);
        }
    }

    let fs = audio.sample_rate as f64;
    let min_len = config.min_region_ms / 1000.0;
    let mut regions = Vec::new();
    let mut i = 0;
    while i < active.len() {
        if !active[i] {
            i += 1;
            continue;
        }
        let first = i;
        while i < active.len() && active[i] {
            i += 1;
        }
        let start = (first * frame_len) as f64 / fs;
        let end = ((i * frame_len).min(audio.len())) as f64 / fs;
        if end - start >= min_len - 1e-12 {
            regions.push(SpeechRegion { start, end });
        }
    }
    regions
}

/// One `start<TAB>end` line per region, seconds with millisecond precision.
pub fn format_regions(regions: &[SpeechRegion]) -> String {
    regions
        .iter()
        .map(|r| format!("{:.3}\t{:.3}\n", r.start, r.end))
        .collect()
}

/// Total time of `truth` covered by `detected`. Both lists must be disjoint
/// internally.
pub fn covered_duration(truth: &[SpeechRegion], detected: &[SpeechRegion]) -> f64 {
    truth
        .iter()
        .map(|t| detected.iter().map(|d| t.overlap(d)).sum::<f64>())
        .sum()
}
