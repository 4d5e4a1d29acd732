//! MFCC / MFSC extraction: framing, analysis window, power spectrum, mel
//! filterbank, log compression and an orthonormal DCT-II.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::audio::{ms_to_samples, AudioBuffer};
use crate::dsp;
use crate::error::{param_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalysisWindow {
    Hamming,
    Rectangular,
}

impl AnalysisWindow {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            AnalysisWindow::Hamming => dsp::hamming(n),
            AnalysisWindow::Rectangular => vec![1.0; n],
        }
    }
}

/// What feeds the filterbank: `|X|^2` (default) or `|X|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumKind {
    Power,
    Magnitude,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub window: AnalysisWindow,
    pub n_mel_filters: usize,
    pub n_coefficients: usize,
    pub log_floor: f64,
    /// true = MFCC, false = MFSC (log mel energies, one column per filter).
    pub include_dct: bool,
    pub spectrum: SpectrumKind,
    pub pre_emphasis: Option<f64>,
    pub f_min: f64,
    /// Upper filterbank edge; `None` means Nyquist.
    pub f_max: Option<f64>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            frame_ms: 20.0,
            hop_ms: 10.0,
            window: AnalysisWindow::Hamming,
            n_mel_filters: 26,
            n_coefficients: 13,
            log_floor: 1e-10,
            include_dct: true,
            spectrum: SpectrumKind::Power,
            pre_emphasis: None,
            f_min: 0.0,
            f_max: None,
        }
    }
}

impl FeatureConfig {
    pub fn mfsc() -> Self {
        Self {
            include_dct: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frame_ms > 0.0 && self.hop_ms > 0.0) {
            return Err(param_err("frame and hop durations must be positive"));
        }
        if self.n_mel_filters == 0 || self.n_coefficients == 0 {
            return Err(param_err("filter and coefficient counts must be positive"));
        }
        if self.n_coefficients > self.n_mel_filters {
            return Err(param_err(format!(
                "{} coefficients requested from {} filters",
                self.n_coefficients, self.n_mel_filters
            )));
        }
        if self.log_floor.is_nan() || self.log_floor <= 0.0 {
            return Err(param_err("log floor must be positive"));
        }
        Ok(())
    }

    pub fn columns(&self) -> usize {
        if self.include_dct {
            self.n_coefficients
        } else {
            self.n_mel_filters
        }
    }
}

/// Frames x coefficients, in time order, with the config that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: Vec<Vec<f64>>,
    pub config: FeatureConfig,
}

impl FeatureMatrix {
    pub fn frames(&self) -> usize {
        self.rows.len()
    }

    /// One frame per line, space separated, 9 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.8e}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }
}

pub fn parse_feature_text(text: &str) -> Result<Vec<Vec<f64>>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_whitespace()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| param_err(format!("bad feature value `{v}`")))
                })
                .collect()
        })
        .collect()
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Filter vertex frequencies (`n_filters + 2` of them, equally spaced in mel).
pub fn mel_points(n_filters: usize, f_min: f64, f_max: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    (0..n_filters + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_filters + 1) as f64))
        .collect()
}

/// Triangular filters (unit-height triangles sampled at the FFT bin
/// frequencies), one row per filter, `fft_size/2 + 1` columns.
pub fn mel_filterbank(
    n_filters: usize,
    fft_size: usize,
    sample_rate: u32,
    f_min: f64,
    f_max: f64,
) -> Result<Vec<Vec<f64>>> {
    let nyquist = sample_rate as f64 / 2.0;
    if !(f_min >= 0.0 && f_min < f_max && f_max <= nyquist) {
        return Err(param_err(format!(
            "filterbank band ({f_min}, {f_max}) Hz must satisfy 0 <= low < high <= {nyquist}"
        )));
    }
    if n_filters == 0 || fft_size == 0 {
        return Err(param_err("filterbank needs filters and bins"));
    }
    let pts = mel_points(n_filters, f_min, f_max);
    let bins = fft_size / 2 + 1;
    let bin_hz = sample_rate as f64 / fft_size as f64;
    Ok((0..n_filters)
        .map(|m| {
            let (left, center, right) = (pts[m], pts[m + 1], pts[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= left || f >= right {
                        0.0
                    } else if f <= center {
                        (f - left) / (center - left)
                    } else {
                        (right - f) / (right - center)
                    }
                })
                .collect()
        })
        .collect())
}

/// Orthonormal DCT-II.
pub fn dct_ortho(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let nf = n as f64;
    (0..n)
        .map(|k| {
            let scale = if k == 0 {
                (1.0 / nf).sqrt()
            } else {
                (2.0 / nf).sqrt()
            };
            scale
                * x.iter()
                    .enumerate()
                    .map(|(i, v)| v * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * nf)).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// Inverse of [`dct_ortho`] (orthonormal DCT-III).
pub fn idct_ortho(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    let nf = n as f64;
    (0..n)
        .map(|i| {
            c.iter()
                .enumerate()
                .map(|(k, v)| {
                    let scale = if k == 0 {
                        (1.0 / nf).sqrt()
                    } else {
                        (2.0 / nf).sqrt()
                    };
                    scale * v * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * nf)).cos()
                })
                .sum::<f64>()
        })
        .collect()
}

/// Precomputed per-config state so repeated extraction (attack search) does
/// not rebuild the filterbank.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    config: FeatureConfig,
    sample_rate: u32,
    frame_len: usize,
    hop: usize,
    window: Vec<f64>,
    filterbank: Vec<Vec<f64>>,
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig, sample_rate: u32) -> Result<Self> {
        config.validate()?;
        let frame_len = ms_to_samples(config.frame_ms, sample_rate);
        let hop = ms_to_samples(config.hop_ms, sample_rate);
        let fft_size = dsp::next_pow2(frame_len);
        let f_max = config.f_max.unwrap_or(sample_rate as f64 / 2.0);
        let filterbank = mel_filterbank(
            config.n_mel_filters,
            fft_size,
            sample_rate,
            config.f_min,
            f_max,
        )?;
        Ok(Self {
            window: config.window.coefficients(frame_len),
            config,
            sample_rate,
            frame_len,
            hop,
            filterbank,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            (len - self.frame_len) / self.hop + 1
        }
    }

    /// Linear mel filterbank energies, one row per frame.
    pub fn mel_energies(&self, audio: &AudioBuffer) -> Result<Vec<Vec<f64>>> {
        if audio.sample_rate != self.sample_rate {
            return Err(param_err(format!(
                "extractor built for {} Hz, audio is {} Hz",
                self.sample_rate, audio.sample_rate
            )));
        }
        if audio.len() < self.frame_len {
            return Err(Error::EmptyInput(format!(
                "{} samples is shorter than one {}-sample frame",
                audio.len(),
                self.frame_len
            )));
        }
        let emphasized;
        let x: &[f64] = match self.config.pre_emphasis {
            Some(a) => {
                emphasized = std::iter::once(audio.samples[0])
                    .chain(audio.samples.windows(2).map(|w| w[1] - a * w[0]))
                    .collect::<Vec<_>>();
                &emphasized
            }
            None => &audio.samples,
        };
        let mut frame = vec![0.0; self.frame_len];
        Ok((0..self.frame_count(x.len()))
            .map(|t| {
                let start = t * self.hop;
                for (i, f) in frame.iter_mut().enumerate() {
                    *f = x[start + i] * self.window[i];
                }
                let spec = dsp::fft_real(&frame, self.sample_rate);
                let mags: Vec<f64> = spec
                    .bins
                    .iter()
                    .map(|b| match self.config.spectrum {
                        SpectrumKind::Power => b.norm_sqr(),
                        SpectrumKind::Magnitude => b.norm(),
                    })
                    .collect();
                self.filterbank
                    .iter()
                    .map(|filt| filt.iter().zip(&mags).map(|(w, m)| w * m).sum())
                    .collect()
            })
            .collect())
    }

    pub fn extract(&self, audio: &AudioBuffer) -> Result<FeatureMatrix> {
        let floor = self.config.log_floor;
        let rows = self
            .mel_energies(audio)?
            .into_iter()
            .map(|energies| {
                let logs: Vec<f64> = energies.iter().map(|e| e.max(floor).ln()).collect();
                if self.config.include_dct {
                    let mut c = dct_ortho(&logs);
                    c.truncate(self.config.n_coefficients);
                    c
                } else {
                    logs
                }
            })
            .collect();
        Ok(FeatureMatrix {
            rows,
            config: self.config.clone(),
        })
    }
}

pub fn extract_features(audio: &AudioBuffer, config: &FeatureConfig) -> Result<FeatureMatrix> {
    FeatureExtractor::new(config.clone(), audio.sample_rate)?.extract(audio)
}

/// Mean Euclidean distance between time-aligned rows (truncated to the
/// shorter matrix).
pub fn feature_distance(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<f64> {
    if a.config != b.config {
        return Err(param_err("feature matrices come from different configs"));
    }
    let n = a.rows.len().min(b.rows.len());
    if n == 0 {
        return Ok(0.0);
    }
    let total: f64 = a
        .rows
        .iter()
        .zip(&b.rows)
        .map(|(ra, rb)| {
            ra.iter()
                .zip(rb)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_formula() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        assert!((hz_to_mel(700.0) - 781.172_838_748).abs() < 1e-6);
        assert!((mel_to_hz(hz_to_mel(1234.5)) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn filterbank_shape_and_coverage() {
        let fb = mel_filterbank(26, 512, 16000, 0.0, 8000.0).unwrap();
        assert_eq!(fb.len(), 26);
        assert!(fb.iter().all(|r| r.len() == 257));
        assert!(fb.iter().flatten().all(|&w| (0.0..=1.0).contains(&w)));

        let pts = mel_points(26, 0.0, 8000.0);
        assert!(pts.windows(2).all(|w| w[1] > w[0]));
        let (first, last) = (pts[1], pts[26]);
        for k in 0..257 {
            let f = k as f64 * 16000.0 / 512.0;
            if f > first && f < last {
                assert!(fb.iter().any(|r| r[k] > 0.0), "bin {k} uncovered");
            }
        }

        assert!(mel_filterbank(26, 512, 16000, 100.0, 50.0).is_err());
        assert!(mel_filterbank(26, 512, 16000, 0.0, 9000.0).is_err());
    }

    #[test]
    fn dct_round_trip() {
        let x: Vec<f64> = (0..26)
            .map(|i| (i as f64 * 0.7).sin() * 3.0 - 1.0)
            .collect();
        let back = idct_ortho(&dct_ortho(&x));
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_signal_hits_floor() {
        let cfg = FeatureConfig::default();
        let f = extract_features(&AudioBuffer::silence(16000, 16000), &cfg).unwrap();
        assert_eq!(f.frames(), 99);
        let c0 = (26f64).sqrt() * cfg.log_floor.ln();
        for row in &f.rows {
            assert_eq!(row.len(), 13);
            assert!((row[0] - c0).abs() < 1e-9);
            assert!(row[1..].iter().all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn config_validation_and_short_input() {
        let bad = FeatureConfig {
            n_coefficients: 30,
            ..Default::default()
        };
        assert!(extract_features(&AudioBuffer::silence(1000, 16000), &bad).is_err());
        let short = extract_features(&AudioBuffer::silence(100, 16000), &FeatureConfig::default());
        assert!(matches!(short, Err(Error::EmptyInput(_))));
    }

    #[test]
    fn mfsc_has_filter_columns() {
        let f =
            extract_features(&AudioBuffer::silence(480, 16000), &FeatureConfig::mfsc()).unwrap();
        assert_eq!(f.frames(), 2);
        assert_eq!(f.rows[0].len(), 26);
    }

    #[test]
    fn distance_basics_and_text() {
        let cfg = FeatureConfig::default();
        let x = AudioBuffer::new(
            (0..4000).map(|i| (i as f64 * 0.05).sin() * 0.3).collect(),
            16000,
        );
        let fx = extract_features(&x, &cfg).unwrap();
        assert_eq!(feature_distance(&fx, &fx).unwrap(), 0.0);

        let y = AudioBuffer::new(
            (0..3000).map(|i| (i as f64 * 0.3).sin() * 0.3).collect(),
            16000,
        );
        let fy = extract_features(&y, &cfg).unwrap();
        let d = feature_distance(&fx, &fy).unwrap();
        assert!(d > 0.0);
        assert_eq!(d, feature_distance(&fy, &fx).unwrap());

        let fm = extract_features(&x, &FeatureConfig::mfsc()).unwrap();
        assert!(feature_distance(&fx, &fm).is_err());

        let parsed = parse_feature_text(&fx.to_text()).unwrap();
        assert_eq!(parsed.len(), fx.frames());
        for (r, p) in fx.rows.iter().zip(&parsed) {
            for (a, b) in r.iter().zip(p) {
                assert!((a - b).abs() <= 1e-8 * a.abs().max(1e-30));
            }
        }
    }
}
