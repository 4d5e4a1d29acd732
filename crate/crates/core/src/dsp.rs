//! Numerical kernels shared by the perturbations, feature extraction and the
//! channel simulator: framing, FFTs, FIR filtering and SNR.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::audio::AudioBuffer;
use crate::error::{param_err, Error, Result};

/// One-sided spectrum of a real signal, bins `0..=fft_size/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum {
    pub bins: Vec<Complex64>,
    pub fft_size: usize,
    pub sample_rate: u32,
}

impl ComplexSpectrum {
    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.fft_size as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub start: usize,
    pub samples: Vec<f64>,
}

pub fn frame_signal(
    audio: &AudioBuffer,
    window_len: usize,
    hop: usize,
    pad_last: bool,
) -> Result<Vec<Frame>> {
    if window_len == 0 || hop == 0 {
        return Err(param_err("window length and hop must be at least 1"));
    }
    let x = &audio.samples;
    let mut frames = Vec::new();
    let mut start = 0;
    while start < x.len() {
        let end = (start + window_len).min(x.len());
        let mut samples = x[start..end].to_vec();
        if pad_last {
            samples.resize(window_len, 0.0);
        }
        frames.push(Frame { start, samples });
        if end == x.len() {
            break;
        }
        start += hop;
    }
    Ok(frames)
}

pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// In-place iterative radix-2 FFT. `data.len()` must be a power of two.
fn fft_pow2(data: &mut [Complex64], inverse: bool) {
    let n = data.len();
    debug_assert!(n.is_power_of_two());
    if n <= 1 {
        return;
    }
    let mut j = 0;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            data.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    // Twiddles evaluated directly rather than by recurrence to keep error at ulp level.
    let twiddles: Vec<Complex64> = (0..n / 2)
        .map(|k| Complex64::from_polar(1.0, sign * 2.0 * PI * k as f64 / n as f64))
        .collect();
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for chunk in data.chunks_exact_mut(len) {
            for k in 0..half {
                let t = chunk[k + half] * twiddles[k * stride];
                let u = chunk[k];
                chunk[k] = u + t;
                chunk[k + half] = u - t;
            }
        }
        len <<= 1;
    }
}

/// Bluestein chirp-z transform for arbitrary lengths.
fn dft_bluestein(x: &[Complex64], inverse: bool) -> Vec<Complex64> {
    let n = x.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    // j^2 mod 2n keeps the chirp argument small.
    let chirp: Vec<Complex64> = (0..n)
        .map(|j| {
            let jj = ((j as u128 * j as u128) % (2 * n as u128)) as f64;
            Complex64::from_polar(1.0, sign * PI * jj / n as f64)
        })
        .collect();
    let m = next_pow2(2 * n - 1);
    let mut a = vec![Complex64::new(0.0, 0.0); m];
    for j in 0..n {
        a[j] = x[j] * chirp[j];
    }
    let mut b = vec![Complex64::new(0.0, 0.0); m];
    b[0] = chirp[0].conj();
    for j in 1..n {
        b[j] = chirp[j].conj();
        b[m - j] = chirp[j].conj();
    }
    fft_pow2(&mut a, false);
    fft_pow2(&mut b, false);
    for (ai, bi) in a.iter_mut().zip(&b) {
        *ai *= bi;
    }
    fft_pow2(&mut a, true);
    let scale = 1.0 / m as f64;
    (0..n).map(|k| a[k] * scale * chirp[k]).collect()
}

/// Unnormalized DFT of any length (inverse = conjugate kernel, no 1/N).
pub fn dft(x: &[Complex64], inverse: bool) -> Vec<Complex64> {
    if x.len().is_power_of_two() {
        let mut out = x.to_vec();
        fft_pow2(&mut out, inverse);
        out
    } else if x.is_empty() {
        Vec::new()
    } else {
        dft_bluestein(x, inverse)
    }
}

fn real_spectrum(frame: &[f64], fft_size: usize, sample_rate: u32) -> ComplexSpectrum {
    let mut buf = vec![Complex64::new(0.0, 0.0); fft_size];
    for (b, &x) in buf.iter_mut().zip(frame) {
        b.re = x;
    }
    let full = dft(&buf, false);
    let mut bins = full[..fft_size / 2 + 1].to_vec();
    bins[0].im = 0.0;
    if fft_size.is_multiple_of(2) {
        bins[fft_size / 2].im = 0.0;
    }
    ComplexSpectrum {
        bins,
        fft_size,
        sample_rate,
    }
}

/// Real FFT, zero-padded to the next power of two of the frame length.
pub fn fft_real(frame: &[f64], sample_rate: u32) -> ComplexSpectrum {
    real_spectrum(frame, next_pow2(frame.len()), sample_rate)
}

/// Real DFT at exactly the frame length (no padding).
pub fn dft_real_exact(frame: &[f64], sample_rate: u32) -> ComplexSpectrum {
    real_spectrum(frame, frame.len().max(1), sample_rate)
}

/// Time-domain reconstruction plus the largest imaginary residue left by the
/// complex inverse transform.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub samples: Vec<f64>,
    pub max_imag_residue: f64,
}

pub fn inverse_fft_real_with_residue(spectrum: &ComplexSpectrum) -> Result<Reconstruction> {
    let n = spectrum.fft_size;
    if n == 0 || spectrum.bins.len() != n / 2 + 1 {
        return Err(Error::Contract(format!(
            "{} bins do not match fft size {n}",
            spectrum.bins.len()
        )));
    }
    let peak = spectrum.bins.iter().fold(0.0f64, |m, b| m.max(b.norm()));
    let tol = 1e-12 * peak.max(1.0);
    if spectrum.bins[0].im.abs() > tol {
        return Err(Error::Contract("DC bin has an imaginary part".into()));
    }
    if n.is_multiple_of(2) && spectrum.bins[n / 2].im.abs() > tol {
        return Err(Error::Contract("Nyquist bin has an imaginary part".into()));
    }
    let mut full = vec![Complex64::new(0.0, 0.0); n];
    for (k, b) in spectrum.bins.iter().enumerate() {
        full[k] = *b;
        if k != 0 && n - k != k {
            full[n - k] = b.conj();
        }
    }
    let time = dft(&full, true);
    let scale = 1.0 / n as f64;
    let max_imag_residue = time.iter().fold(0.0f64, |m, c| m.max((c.im * scale).abs()));
    Ok(Reconstruction {
        samples: time.iter().map(|c| c.re * scale).collect(),
        max_imag_residue,
    })
}

pub fn inverse_fft_real(spectrum: &ComplexSpectrum) -> Result<Vec<f64>> {
    inverse_fft_real_with_residue(spectrum).map(|r| r.samples)
}

pub fn magnitude(spectrum: &ComplexSpectrum) -> Vec<f64> {
    spectrum.bins.iter().map(|b| b.norm()).collect()
}

/// Symmetric Hamming window of length `n`.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Tap count for a windowed-sinc design: 4·fs / transition width, forced odd.
///
/// The transition band is taken as 0.9..1.1 of the cutoff, which puts a tone
/// one eighth above the cutoff in the stopband.
pub fn fir_order(cutoff: f64, sample_rate: u32) -> usize {
    let transition = 0.2 * cutoff;
    let n = (4.0 * sample_rate as f64 / transition).round() as usize;
    n.max(3) | 1
}

/// Hamming-windowed sinc low-pass taps with unit DC gain.
pub fn lowpass_taps(cutoff: f64, sample_rate: u32, len: usize) -> Vec<f64> {
    let fc = cutoff / sample_rate as f64;
    let window = hamming(len);
    let mid = (len - 1) as f64 / 2.0;
    let mut taps: Vec<f64> = window
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let x = i as f64 - mid;
            let sinc = if x == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * x).sin() / (PI * x)
            };
            sinc * w
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

fn check_cutoff(cutoff: f64, nyquist: f64) -> Result<()> {
    if !(cutoff > 0.0 && cutoff <= nyquist) {
        return Err(param_err(format!(
            "cutoff {cutoff} Hz must be in (0, {nyquist}]"
        )));
    }
    Ok(())
}

fn identity_taps() -> Vec<f64> {
    vec![1.0]
}

/// Low-pass design for `cutoff`; a cutoff at Nyquist is the identity filter.
pub fn design_low_pass(cutoff: f64, sample_rate: u32) -> Result<Vec<f64>> {
    let nyquist = sample_rate as f64 / 2.0;
    check_cutoff(cutoff, nyquist)?;
    if cutoff >= nyquist {
        return Ok(identity_taps());
    }
    Ok(lowpass_taps(
        cutoff,
        sample_rate,
        fir_order(cutoff, sample_rate),
    ))
}

/// Band-pass as the difference of two low-pass designs sharing one length.
/// `low == 0` degenerates to a plain low-pass.
pub fn design_band_pass(low: f64, high: f64, sample_rate: u32) -> Result<Vec<f64>> {
    let nyquist = sample_rate as f64 / 2.0;
    if !(low >= 0.0 && low < high && high <= nyquist) {
        return Err(param_err(format!(
            "band ({low}, {high}) Hz must satisfy 0 <= low < high <= {nyquist}"
        )));
    }
    if low == 0.0 {
        return design_low_pass(high, sample_rate);
    }
    let mut len = fir_order(low, sample_rate);
    if high < nyquist {
        len = len.max(fir_order(high, sample_rate));
    }
    let mut taps: Vec<f64> = lowpass_taps(low, sample_rate, len)
        .into_iter()
        .map(|t| -t)
        .collect();
    if high >= nyquist {
        taps[len / 2] += 1.0;
    } else {
        for (t, h) in taps.iter_mut().zip(lowpass_taps(high, sample_rate, len)) {
            *t += h;
        }
    }
    Ok(taps)
}

/// Convolution with an odd-length linear-phase filter, shifted by the group
/// delay so the output lines up with the input and keeps its length.
pub fn filter_aligned(x: &[f64], taps: &[f64]) -> Vec<f64> {
    if taps.len() == 1 {
        return x.iter().map(|v| v * taps[0]).collect();
    }
    if x.is_empty() {
        return Vec::new();
    }
    let delay = (taps.len() - 1) / 2;
    let full = convolve(x, taps);
    full[delay..delay + x.len()].to_vec()
}

/// Full linear convolution, direct for short kernels and FFT-based otherwise.
pub fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let out_len = x.len() + h.len() - 1;
    if h.len().min(x.len()) <= 64 {
        let mut out = vec![0.0; out_len];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (j, &hj) in h.iter().enumerate() {
                out[i + j] += xi * hj;
            }
        }
        return out;
    }
    let m = next_pow2(out_len);
    let load = |v: &[f64]| {
        let mut buf = vec![Complex64::new(0.0, 0.0); m];
        for (b, &s) in buf.iter_mut().zip(v) {
            b.re = s;
        }
        fft_pow2(&mut buf, false);
        buf
    };
    let mut a = load(x);
    let b = load(h);
    for (ai, bi) in a.iter_mut().zip(&b) {
        *ai *= bi;
    }
    fft_pow2(&mut a, true);
    let scale = 1.0 / m as f64;
    a[..out_len].iter().map(|c| c.re * scale).collect()
}

pub fn low_pass(audio: &AudioBuffer, cutoff: f64) -> Result<AudioBuffer> {
    let taps = design_low_pass(cutoff, audio.sample_rate)?;
    Ok(AudioBuffer::new(
        filter_aligned(&audio.samples, &taps),
        audio.sample_rate,
    ))
}

pub fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// SNR of `test` against `reference` in dB; `f64::INFINITY` when they match.
pub fn measure_snr(reference: &AudioBuffer, test: &AudioBuffer) -> Result<f64> {
    if reference.len() != test.len() || reference.sample_rate != test.sample_rate {
        return Err(param_err(format!(
            "SNR needs matching buffers, got {} samples @ {} Hz vs {} samples @ {} Hz",
            reference.len(),
            reference.sample_rate,
            test.len(),
            test.sample_rate
        )));
    }
    let residual: f64 = reference
        .samples
        .iter()
        .zip(&test.samples)
        .map(|(r, t)| (t - r) * (t - r))
        .sum();
    if residual == 0.0 {
        return Ok(f64::INFINITY);
    }
    let signal: f64 = reference.samples.iter().map(|r| r * r).sum();
    Ok(10.0 * (signal / residual).log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn framing() {
        let a = AudioBuffer::new((0..6).map(f64::from).collect(), 16000);
        let f = frame_signal(&a, 3, 3, false).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f[1].start, 3);
        assert_eq!(f[1].samples, vec![3.0, 4.0, 5.0]);

        let a = AudioBuffer::new((0..7).map(f64::from).collect(), 16000);
        let lens: Vec<_> = frame_signal(&a, 3, 3, false)
            .unwrap()
            .iter()
            .map(|f| f.samples.len())
            .collect();
        assert_eq!(lens, [3, 3, 1]);
        let padded = frame_signal(&a, 3, 3, true).unwrap();
        assert_eq!(padded[2].samples, vec![6.0, 0.0, 0.0]);

        assert!(frame_signal(&AudioBuffer::silence(0, 16000), 3, 3, false)
            .unwrap()
            .is_empty());
        assert!(frame_signal(&a, 0, 1, false).is_err());
        assert_eq!(AudioBuffer::silence(1, 16000).ms_to_samples(20.0), 320);
    }

    #[test]
    fn fft_small_cases() {
        let s = fft_real(&[1.0, 1.0, 1.0, 1.0], 4);
        close(
            &s.bins.iter().map(|b| b.re).collect::<Vec<_>>(),
            &[4.0, 0.0, 0.0],
            1e-12,
        );
        close(
            &s.bins.iter().map(|b| b.im).collect::<Vec<_>>(),
            &[0.0, 0.0, 0.0],
            1e-12,
        );

        close(
            &magnitude(&fft_real(&[1.0, 0.0, 0.0, 0.0], 4)),
            &[1.0, 1.0, 1.0],
            1e-12,
        );
        close(
            &magnitude(&fft_real(&[0.0, 1.0, 0.0, -1.0], 4)),
            &[0.0, 2.0, 0.0],
            1e-12,
        );

        let padded = fft_real(&[1.0, 2.0, 3.0], 8000);
        assert_eq!(padded.fft_size, 4);
        assert_eq!(padded.bins.len(), 3);
        assert_eq!(padded.bin_frequency(1), 2000.0);
    }

    #[test]
    fn inverse_cases() {
        let s = ComplexSpectrum {
            bins: vec![
                Complex64::new(4.0, 0.0),
                Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 0.0),
            ],
            fft_size: 4,
            sample_rate: 4,
        };
        close(&inverse_fft_real(&s).unwrap(), &[1.0; 4], 1e-12);

        let zero = ComplexSpectrum {
            bins: vec![Complex64::new(0.0, 0.0); 5],
            fft_size: 8,
            sample_rate: 8,
        };
        assert_eq!(inverse_fft_real(&zero).unwrap(), vec![0.0; 8]);

        let mut bad = s.clone();
        bad.bins[0].im = 1.0;
        assert!(matches!(inverse_fft_real(&bad), Err(Error::Contract(_))));
        let mut bad = s;
        bad.bins[2].im = 0.5;
        assert!(matches!(inverse_fft_real(&bad), Err(Error::Contract(_))));
    }

    #[test]
    fn exact_dft_matches_direct_sum() {
        for n in [1usize, 3, 5, 6, 12, 24, 100] {
            let x: Vec<f64> = (0..n)
                .map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.5)
                .collect();
            let s = dft_real_exact(&x, 16000);
            assert_eq!(s.bins.len(), n / 2 + 1);
            for (k, b) in s.bins.iter().enumerate() {
                let mut re = 0.0;
                let mut im = 0.0;
                for (j, v) in x.iter().enumerate() {
                    let a = -2.0 * PI * (k * j) as f64 / n as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                assert!(
                    (b.re - re).abs() < 1e-10 && (b.im - im).abs() < 1e-10,
                    "n={n} k={k}"
                );
            }
            close(&inverse_fft_real(&s).unwrap(), &x, 1e-12);
        }
    }

    #[test]
    fn magnitude_basic() {
        let s = ComplexSpectrum {
            bins: vec![Complex64::new(3.0, 4.0), Complex64::new(0.0, 0.0)],
            fft_size: 2,
            sample_rate: 2,
        };
        assert_eq!(magnitude(&s), vec![5.0, 0.0]);
    }

    #[test]
    fn low_pass_rejects_bad_cutoff() {
        let a = AudioBuffer::silence(10, 16000);
        assert!(low_pass(&a, 0.0).is_err());
        assert!(low_pass(&a, 8000.5).is_err());
        assert_eq!(low_pass(&a, 8000.0).unwrap(), a);
    }

    #[test]
    fn band_pass_validation() {
        assert!(design_band_pass(500.0, 400.0, 16000).is_err());
        assert!(design_band_pass(-1.0, 400.0, 16000).is_err());
        assert!(design_band_pass(0.0, 9000.0, 16000).is_err());
        assert_eq!(design_band_pass(0.0, 8000.0, 16000).unwrap(), vec![1.0]);
        let t = design_band_pass(100.0, 7000.0, 16000).unwrap();
        assert_eq!(t.len() % 2, 1);
        // A band-pass rejects DC.
        assert!(t.iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn convolve_paths_agree() {
        let x: Vec<f64> = (0..300).map(|i| (i as f64 * 0.37).sin()).collect();
        let h: Vec<f64> = (0..101).map(|i| (i as f64 * 0.11).cos() / 50.0).collect();
        let fast = convolve(&x, &h);
        let mut direct = vec![0.0; x.len() + h.len() - 1];
        for (i, a) in x.iter().enumerate() {
            for (j, b) in h.iter().enumerate() {
                direct[i + j] += a * b;
            }
        }
        close(&fast, &direct, 1e-10);
    }

    #[test]
    fn snr_cases() {
        let r = AudioBuffer::new(vec![0.5, -0.5, 0.25, -0.25], 16000);
        assert_eq!(measure_snr(&r, &r).unwrap(), f64::INFINITY);
        let doubled = AudioBuffer::new(r.samples.iter().map(|v| 2.0 * v).collect(), 16000);
        assert!(measure_snr(&r, &doubled).unwrap().abs() < 1e-12);
        let tenth = AudioBuffer::new(r.samples.iter().map(|v| 1.1 * v).collect(), 16000);
        assert!((measure_snr(&r, &tenth).unwrap() - 20.0).abs() < 1e-9);
        assert!(measure_snr(&r, &AudioBuffer::silence(3, 16000)).is_err());
    }
}
