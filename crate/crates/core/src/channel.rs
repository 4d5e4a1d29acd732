//! Deterministic stand-in for an over-the-air playback path: band limiting,
//! a sparse exponential reverb tail, and additive noise at a target SNR.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::audio::{ms_to_samples, read_wav_file, AudioBuffer};
use crate::dsp;
use crate::error::{param_err, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reverb {
    pub delay_ms: f64,
    pub decay: f64,
    pub taps: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum NoiseSource {
    #[default]
    White,
    /// Looped recording, rescaled to the requested SNR.
    Recording(AudioBuffer),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub band_low: f64,
    /// Upper pass-band edge; `None` means Nyquist of the input.
    pub band_high: Option<f64>,
    /// Target SNR in dB; `f64::INFINITY` disables noise.
    pub snr_db: f64,
    pub noise_seed: u64,
    pub reverb: Option<Reverb>,
    pub noise: NoiseSource,
}

impl ChannelConfig {
    pub fn transparent() -> Self {
        Self {
            band_low: 0.0,
            band_high: None,
            snr_db: f64::INFINITY,
            noise_seed: 0,
            reverb: None,
            noise: NoiseSource::White,
        }
    }

    /// Consumer speaker into a phone microphone in a noisy room.
    pub fn harsh() -> Self {
        Self {
            band_low: 100.0,
            band_high: Some(7000.0),
            snr_db: 20.0,
            noise_seed: 0,
            reverb: Some(Reverb {
                delay_ms: 12.0,
                decay: 0.35,
                taps: 4,
            }),
            noise: NoiseSource::White,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "transparent" => Some(Self::transparent()),
            "harsh" => Some(Self::harsh()),
            _ => None,
        }
    }

    /// Parses `key = value` lines (`#` starts a comment). Keys: `band_low`,
    /// `band_high`, `snr_db`, `seed`, `reverb_delay_ms`, `reverb_decay`,
    /// `reverb_taps`, `noise_wav`. Missing keys keep transparent defaults.
    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut cfg = Self::transparent();
        let (mut delay, mut decay, mut taps) = (None, None, None);
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| param_err(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let num = || {
                value.parse::<f64>().map_err(|_| {
                    param_err(format!("line {}: `{value}` is not a number", lineno + 1))
                })
            };
            match key {
                "band_low" => cfg.band_low = num()?,
                "band_high" => {
                    cfg.band_high = match value {
                        "nyquist" => None,
                        _ => Some(num()?),
                    }
                }
                "snr_db" => cfg.snr_db = num()?,
                "seed" => {
                    cfg.noise_seed = value.parse().map_err(|_| {
                        param_err(format!("line {}: bad seed `{value}`", lineno + 1))
                    })?
                }
                "reverb_delay_ms" => delay = Some(num()?),
                "reverb_decay" => decay = Some(num()?),
                "reverb_taps" => {
                    taps = Some(value.parse::<usize>().map_err(|_| {
                        param_err(format!("line {}: bad tap count `{value}`", lineno + 1))
                    })?)
                }
                "noise_wav" => {
                    let path = match base_dir {
                        Some(dir) => dir.join(value),
                        None => value.into(),
                    };
                    cfg.noise = NoiseSource::Recording(read_wav_file(path)?);
                }
                other => {
                    return Err(param_err(format!(
                        "line {}: unknown key `{other}`",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.reverb = match (delay, decay, taps) {
            (_, _, Some(0)) | (None, None, None) => None,
            (Some(delay_ms), Some(decay), Some(taps)) => Some(Reverb {
                delay_ms,
                decay,
                taps,
            }),
            _ => {
                return Err(param_err(
                    "reverb needs reverb_delay_ms, reverb_decay and reverb_taps together",
                ))
            }
        };
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path)?, path.parent())
    }

    fn validate(&self, nyquist: f64) -> Result<f64> {
        let high = self.band_high.unwrap_or(nyquist);
        if !(self.band_low >= 0.0 && self.band_low < high && high <= nyquist) {
            return Err(param_err(format!(
                "band ({}, {high}) Hz must satisfy 0 <= low < high <= {nyquist}",
                self.band_low
            )));
        }
        if self.snr_db.is_nan() {
            return Err(param_err("SNR must be a number or inf"));
        }
        if let Some(r) = &self.reverb {
            if !(r.delay_ms > 0.0 && r.decay > 0.0 && r.decay < 1.0) {
                return Err(param_err(
                    "reverb needs a positive delay and decay in (0, 1)",
                ));
            }
        }
        if let NoiseSource::Recording(n) = &self.noise {
            if n.is_empty() {
                return Err(param_err("noise recording is empty"));
            }
        }
        Ok(high)
    }
}

#[derive(Debug, Clone)]
pub struct ChannelOutput {
    pub audio: AudioBuffer,
    /// 1.0 unless the output peaked above full scale and was rescaled.
    pub scale: f64,
}

fn apply_reverb(x: &[f64], reverb: &Reverb, sample_rate: u32) -> Vec<f64> {
    let delay = ms_to_samples(reverb.delay_ms, sample_rate);
    let mut out = x.to_vec();
    let mut gain = 1.0;
    for tap in 1..=reverb.taps {
        gain *= reverb.decay;
        let offset = tap * delay;
        if offset >= x.len() {
            break;
        }
        for (o, v) in out[offset..].iter_mut().zip(x) {
            *o += gain * v;
        }
    }
    out
}

fn noise_samples(config: &ChannelConfig, len: usize) -> Vec<f64> {
    match &config.noise {
        NoiseSource::White => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.noise_seed);
            (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
        }
        NoiseSource::Recording(rec) => rec.samples.iter().copied().cycle().take(len).collect(),
    }
}

pub fn simulate(audio: &AudioBuffer, config: &ChannelConfig) -> Result<ChannelOutput> {
    let high = config.validate(audio.nyquist())?;
    let taps = dsp::design_band_pass(config.band_low, high, audio.sample_rate)?;
    let mut y = dsp::filter_aligned(&audio.samples, &taps);
    if let Some(r) = &config.reverb {
        y = apply_reverb(&y, r, audio.sample_rate);
    }

    if config.snr_db.is_finite() {
        let signal_power = dsp::power(&y);
        let noise = noise_samples(config, y.len());
        let noise_power = dsp::power(&noise);
        if signal_power > 0.0 && noise_power > 0.0 {
            let target = signal_power / 10f64.powf(config.snr_db / 10.0);
            let gain = (target / noise_power).sqrt();
            for (s, n) in y.iter_mut().zip(&noise) {
                *s += gain * n;
            }
        }
    }

    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    if scale != 1.0 {
        y.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(ChannelOutput {
        audio: AudioBuffer::new(y, audio.sample_rate),
        scale,
    })
}
