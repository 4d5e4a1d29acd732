//! The perturbation engine: time domain inversion (TDI), random phase
//! generation (RPG), high frequency addition (HFA) and time scaling (TS),
//! their seeded composition, and parameter grid expansion.
//!
//! TDI and RPG work on consecutive non-overlapping windows so that output
//! length always equals input length.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioBuffer;
use crate::dsp;
use crate::error::{param_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HfaComponent {
    pub frequency: f64,
    pub amplitude: f64,
}

impl HfaComponent {
    pub fn new(frequency: f64, amplitude: f64) -> Self {
        Self {
            frequency,
            amplitude,
        }
    }
}

/// One point of the attack parameter space. `None` disables a primitive.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PerturbationParams {
    pub tdi_window_ms: Option<f64>,
    pub rpg_window_ms: Option<f64>,
    pub rpg_seed: u64,
    pub hfa_components: Vec<HfaComponent>,
    pub ts_factor_percent: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationKind {
    Ts,
    Tdi,
    Rpg,
    Hfa,
}

pub const CANONICAL_ORDER: [PerturbationKind; 4] = [
    PerturbationKind::Ts,
    PerturbationKind::Tdi,
    PerturbationKind::Rpg,
    PerturbationKind::Hfa,
];

#[derive(Debug, Clone, PartialEq)]
pub enum Perturbation {
    Tdi { window_ms: f64 },
    Rpg { window_ms: f64, seed: u64 },
    Hfa { components: Vec<HfaComponent> },
    Ts { factor_percent: f64 },
}

impl Perturbation {
    pub fn apply(&self, audio: &AudioBuffer) -> Result<AudioBuffer> {
        match self {
            Perturbation::Tdi { window_ms } => tdi(audio, *window_ms),
            Perturbation::Rpg { window_ms, seed } => rpg(audio, *window_ms, *seed),
            Perturbation::Hfa { components } => hfa(audio, components).map(|o| o.audio),
            Perturbation::Ts { factor_percent } => ts(audio, *factor_percent),
        }
    }
}

/// Primitives applied strictly in list order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PerturbationChain(pub Vec<Perturbation>);

impl PerturbationParams {
    pub fn is_identity(&self) -> bool {
        self.tdi_window_ms.is_none()
            && self.rpg_window_ms.is_none()
            && self.hfa_components.iter().all(|c| c.amplitude == 0.0)
            && self.ts_factor_percent.is_none_or(|f| f == 100.0)
    }

    pub fn total_hfa_amplitude(&self) -> f64 {
        self.hfa_components.iter().map(|c| c.amplitude).sum()
    }

    /// Chain in the canonical TS, TDI, RPG, HFA order.
    pub fn to_chain(&self) -> PerturbationChain {
        self.to_chain_ordered(&CANONICAL_ORDER)
    }

    pub fn to_chain_ordered(&self, order: &[PerturbationKind]) -> PerturbationChain {
        let mut steps = Vec::new();
        for kind in order {
            match kind {
                PerturbationKind::Ts => {
                    if let Some(f) = self.ts_factor_percent {
                        steps.push(Perturbation::Ts { factor_percent: f });
                    }
                }
                PerturbationKind::Tdi => {
                    if let Some(w) = self.tdi_window_ms {
                        steps.push(Perturbation::Tdi { window_ms: w });
                    }
                }
                PerturbationKind::Rpg => {
                    if let Some(w) = self.rpg_window_ms {
                        steps.push(Perturbation::Rpg {
                            window_ms: w,
                            seed: self.rpg_seed,
                        });
                    }
                }
                PerturbationKind::Hfa => {
                    if !self.hfa_components.is_empty() {
                        steps.push(Perturbation::Hfa {
                            components: self.hfa_components.clone(),
                        });
                    }
                }
            }
        }
        PerturbationChain(steps)
    }

    /// Checks the params against the rate they will be applied at.
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        for w in [self.tdi_window_ms, self.rpg_window_ms]
            .into_iter()
            .flatten()
        {
            check_window(w)?;
        }
        if let Some(f) = self.ts_factor_percent {
            check_ts(f)?;
        }
        check_hfa(&self.hfa_components, sample_rate as f64 / 2.0)
    }
}

/// Renders as tab-separated `key=value` pairs, e.g.
/// `tdi_ms=1.5<TAB>rpg_seed=42<TAB>ts=150`. Absent primitives are omitted.
impl fmt::Display for PerturbationParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut fields = Vec::new();
        if let Some(w) = self.tdi_window_ms {
            fields.push(format!("tdi_ms={w}"));
        }
        if let Some(w) = self.rpg_window_ms {
            fields.push(format!("rpg_ms={w}"));
        }
        fields.push(format!("rpg_seed={}", self.rpg_seed));
        if !self.hfa_components.is_empty() {
            let comps: Vec<String> = self
                .hfa_components
                .iter()
                .map(|c| format!("{}:{}", c.frequency, c.amplitude))
                .collect();
            fields.push(format!("hfa={}", comps.join(",")));
        }
        if let Some(t) = self.ts_factor_percent {
            fields.push(format!("ts={t}"));
        }
        f.write_str(&fields.join("\t"))
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse::<f64>()
        .map_err(|_| param_err(format!("{key}: `{v}` is not a number")))
}

/// Parses `F:A[,F:A...]`.
pub fn parse_hfa_list(s: &str) -> Result<Vec<HfaComponent>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|pair| {
            let (f, a) = pair
                .split_once(':')
                .ok_or_else(|| param_err(format!("hfa component `{pair}` is not F:A")))?;
            Ok(HfaComponent::new(
                parse_f64("hfa", f)?,
                parse_f64("hfa", a)?,
            ))
        })
        .collect()
}

impl FromStr for PerturbationParams {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut p = PerturbationParams::default();
        for field in s.split(['\t', ' ']).filter(|f| !f.is_empty()) {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| param_err(format!("field `{field}` is not key=value")))?;
            match key {
                "tdi_ms" => p.tdi_window_ms = Some(parse_f64(key, value)?),
                "rpg_ms" => p.rpg_window_ms = Some(parse_f64(key, value)?),
                "rpg_seed" => {
                    p.rpg_seed = value
                        .parse()
                        .map_err(|_| param_err(format!("rpg_seed: `{value}`")))?
                }
                "hfa" => p.hfa_components = parse_hfa_list(value)?,
                "ts" => p.ts_factor_percent = Some(parse_f64(key, value)?),
                other => return Err(param_err(format!("unknown key `{other}`"))),
            }
        }
        Ok(p)
    }
}

fn check_window(window_ms: f64) -> Result<()> {
    if !(window_ms.is_finite() && window_ms > 0.0) {
        return Err(param_err(format!("window {window_ms} ms must be positive")));
    }
    Ok(())
}

fn check_ts(factor: f64) -> Result<()> {
    if !(factor.is_finite() && factor >= 100.0) {
        return Err(param_err(format!("TS factor {factor}% must be >= 100")));
    }
    Ok(())
}

fn check_hfa(components: &[HfaComponent], nyquist: f64) -> Result<()> {
    for c in components {
        if !(c.frequency.is_finite() && c.frequency >= 0.0 && c.frequency < nyquist) {
            return Err(param_err(format!(
                "HFA frequency {} Hz must be below Nyquist ({nyquist} Hz)",
                c.frequency
            )));
        }
        if !(c.amplitude.is_finite() && c.amplitude >= 0.0) {
            return Err(param_err(format!(
                "HFA amplitude {} must be >= 0",
                c.amplitude
            )));
        }
    }
    Ok(())
}

/// Reverses every window of `window_ms` in place; the tail window is
/// reversed at its natural length.
pub fn tdi(audio: &AudioBuffer, window_ms: f64) -> Result<AudioBuffer> {
    check_window(window_ms)?;
    Ok(tdi_samples(audio, audio.ms_to_samples(window_ms)))
}

/// TDI with the window given directly in samples.
pub fn tdi_samples(audio: &AudioBuffer, window: usize) -> AudioBuffer {
    let mut out = audio.samples.clone();
    for chunk in out.chunks_mut(window.max(1)) {
        chunk.reverse();
    }
    AudioBuffer::new(out, audio.sample_rate)
}

/// RPG output together with the worst imaginary residue left by the inverse
/// transforms, relative to nothing (absolute units).
#[derive(Debug, Clone)]
pub struct RpgOutput {
    pub audio: AudioBuffer,
    pub max_imag_residue: f64,
}

/// Keeps each window's DFT magnitudes and replaces interior-bin phases with
/// seeded uniform draws. DC and Nyquist stay untouched so the inverse is real.
pub fn rpg(audio: &AudioBuffer, window_ms: f64, seed: u64) -> Result<AudioBuffer> {
    check_window(window_ms)?;
    rpg_samples(audio, audio.ms_to_samples(window_ms), seed).map(|o| o.audio)
}

pub fn rpg_samples(audio: &AudioBuffer, window: usize, seed: u64) -> Result<RpgOutput> {
    let window = window.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(audio.len());
    let mut max_imag_residue = 0.0f64;
    for chunk in audio.samples.chunks(window) {
        let mut frame = chunk.to_vec();
        frame.resize(window, 0.0);
        let mut spectrum = dsp::dft_real_exact(&frame, audio.sample_rate);
        let last = spectrum.bins.len() - 1;
        let has_nyquist = window.is_multiple_of(2);
        for (k, bin) in spectrum.bins.iter_mut().enumerate() {
            if k == 0 || (has_nyquist && k == last) {
                continue;
            }
            let theta = rng.random::<f64>() * 2.0 * PI;
            *bin = Complex64::from_polar(bin.norm(), theta);
        }
        let rec = dsp::inverse_fft_real_with_residue(&spectrum)?;
        max_imag_residue = max_imag_residue.max(rec.max_imag_residue);
        out.extend_from_slice(&rec.samples[..chunk.len()]);
    }
    Ok(RpgOutput {
        audio: AudioBuffer::new(out, audio.sample_rate),
        max_imag_residue,
    })
}

/// HFA output; `scale` is 1.0 unless the sum clipped and was rescaled.
#[derive(Debug, Clone)]
pub struct HfaOutput {
    pub audio: AudioBuffer,
    pub scale: f64,
}

pub fn hfa(audio: &AudioBuffer, components: &[HfaComponent]) -> Result<HfaOutput> {
    check_hfa(components, audio.nyquist())?;
    let fs = audio.sample_rate as f64;
    let mut out = audio.samples.clone();
    for c in components.iter().filter(|c| c.amplitude > 0.0) {
        let w = 2.0 * PI * c.frequency / fs;
        for (n, s) in out.iter_mut().enumerate() {
            *s += c.amplitude * (w * n as f64).sin();
        }
    }
    let peak = out.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let scale = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    if scale != 1.0 {
        out.iter_mut().for_each(|s| *s *= scale);
    }
    Ok(HfaOutput {
        audio: AudioBuffer::new(out, audio.sample_rate),
        scale,
    })
}

/// Speeds audio up by keeping `input[round(k * factor/100)]` at the same rate.
pub fn ts(audio: &AudioBuffer, factor_percent: f64) -> Result<AudioBuffer> {
    check_ts(factor_percent)?;
    if factor_percent == 100.0 {
        return Ok(audio.clone());
    }
    let stride = factor_percent / 100.0;
    let len = audio.len();
    let samples = (0..)
        .map(|k| (k as f64 * stride).round() as usize)
        .take_while(|&i| i < len)
        .map(|i| audio.samples[i])
        .collect();
    Ok(AudioBuffer::new(samples, audio.sample_rate))
}

pub fn apply_chain(audio: &AudioBuffer, chain: &PerturbationChain) -> Result<AudioBuffer> {
    chain
        .0
        .iter()
        .try_fold(audio.clone(), |acc, step| step.apply(&acc))
}

/// Generates the attack sample for one parameter point.
pub fn generate(audio: &AudioBuffer, params: &PerturbationParams) -> Result<AudioBuffer> {
    params.validate(audio.sample_rate)?;
    apply_chain(audio, &params.to_chain())
}

/// Value lists per axis; `None` / empty entries mean "primitive off".
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrid {
    pub tdi_ms: Vec<Option<f64>>,
    pub rpg_ms: Vec<Option<f64>>,
    pub hfa: Vec<Vec<HfaComponent>>,
    pub ts_percent: Vec<Option<f64>>,
    pub rpg_seed: u64,
}

impl Default for ParamGrid {
    fn default() -> Self {
        Self {
            tdi_ms: vec![None],
            rpg_ms: vec![None],
            hfa: vec![Vec::new()],
            ts_percent: vec![None],
            rpg_seed: 0,
        }
    }
}

impl ParamGrid {
    /// Ten TDI windows from 1.00 ms in 0.50 ms steps.
    pub fn default_tdi_schedule() -> Self {
        Self {
            tdi_ms: inclusive_range(1.0, 5.5, 0.5)
                .expect("static range")
                .into_iter()
                .map(Some)
                .collect(),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.tdi_ms.len() * self.rpg_ms.len() * self.hfa.len() * self.ts_percent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `start, start+step, ...` up to and including `stop` (with a small
/// tolerance for accumulated rounding).
pub fn inclusive_range(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(start.is_finite() && stop.is_finite() && step.is_finite()) || step <= 0.0 || stop < start {
        return Err(param_err(format!(
            "range {start}:{stop}:{step} must be finite with step > 0 and stop >= start"
        )));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
        .collect())
}

/// Cartesian product in tdi-major, then rpg, hfa, ts order.
pub fn expand_grid(grid: &ParamGrid) -> Result<Vec<PerturbationParams>> {
    if grid.is_empty() {
        return Err(param_err("every grid axis needs at least one value"));
    }
    let finite = |v: &Option<f64>| v.is_none_or(f64::is_finite);
    if !grid.tdi_ms.iter().all(finite)
        || !grid.rpg_ms.iter().all(finite)
        || !grid.ts_percent.iter().all(finite)
    {
        return Err(param_err("grid values must be finite"));
    }
    let mut out = Vec::with_capacity(grid.len());
    for tdi in &grid.tdi_ms {
        for rpg in &grid.rpg_ms {
            for hfa in &grid.hfa {
                for ts in &grid.ts_percent {
                    out.push(PerturbationParams {
                        tdi_window_ms: *tdi,
                        rpg_window_ms: *rpg,
                        rpg_seed: grid.rpg_seed,
                        hfa_components: hfa.clone(),
                        ts_factor_percent: *ts,
                    });
                }
            }
        }
    }
    Ok(out)
}
