//! Log-magnitude STFT rendered as a binary PGM (P5) image for side-by-side
//! comparison of clean and perturbed audio.

use crate::audio::{ms_to_samples, AudioBuffer};
use crate::dsp;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramConfig {
    pub frame_ms: f64,
    pub hop_ms: f64,
    /// Levels more than this many dB below the loudest cell render black.
    pub dynamic_range_db: f64,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        Self {
            frame_ms: 20.0,
            hop_ms: 10.0,
            dynamic_range_db: 80.0,
        }
    }
}

/// `frames[t][k]`: level of bin `k` in frame `t`, dB.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: Vec<Vec<f64>>,
    pub sample_rate: u32,
    pub fft_size: usize,
}

pub fn stft_db(audio: &AudioBuffer, config: &SpectrogramConfig) -> Result<Spectrogram> {
    let frame_len = ms_to_samples(config.frame_ms, audio.sample_rate);
    let hop = ms_to_samples(config.hop_ms, audio.sample_rate);
    if audio.len() < frame_len {
        return Err(Error::EmptyInput(format!(
            "{} samples is shorter than one {frame_len}-sample frame",
            audio.len()
        )));
    }
    let window = dsp::hamming(frame_len);
    let count = (audio.len() - frame_len) / hop + 1;
    let frames = (0..count)
        .map(|t| {
            let frame: Vec<f64> = audio.samples[t * hop..t * hop + frame_len]
                .iter()
                .zip(&window)
                .map(|(x, w)| x * w)
                .collect();
            dsp::magnitude(&dsp::fft_real(&frame, audio.sample_rate))
                .into_iter()
                .map(|m| 20.0 * (m + 1e-12).log10())
                .collect()
        })
        .collect();
    Ok(Spectrogram {
        frames,
        sample_rate: audio.sample_rate,
        fft_size: dsp::next_pow2(frame_len),
    })
}

impl Spectrogram {
    /// Width = frames, height = bins, highest frequency on the top row.
    pub fn to_pgm(&self, dynamic_range_db: f64) -> Vec<u8> {
        let width = self.frames.len();
        let height = self.frames.first().map_or(0, Vec::len);
        let top = self
            .frames
            .iter()
            .flatten()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let bottom = top - dynamic_range_db;
        let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
        for k in (0..height).rev() {
            for frame in &self.frames {
                let level = ((frame[k] - bottom) / dynamic_range_db).clamp(0.0, 1.0);
                out.push((level * 255.0).round() as u8);
            }
        }
        out
    }
}

pub fn render_pgm(audio: &AudioBuffer, config: &SpectrogramConfig) -> Result<Vec<u8>> {
    Ok(stft_db(audio, config)?.to_pgm(config.dynamic_range_db))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_layout_and_peak_row() {
        let a = AudioBuffer::new(
            (0..1600)
                .map(|n| 0.5 * (2.0 * std::f64::consts::PI * 2000.0 * n as f64 / 16000.0).sin())
                .collect(),
            16000,
        );
        let cfg = SpectrogramConfig::default();
        let s = stft_db(&a, &cfg).unwrap();
        assert_eq!(s.frames.len(), 9);
        assert_eq!(s.frames[0].len(), 257);
        let pgm = s.to_pgm(cfg.dynamic_range_db);
        let header = b"P5\n9 257\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(pgm.len(), header.len() + 9 * 257);
        // 2 kHz sits in bin 64 of a 512-point FFT, i.e. row 256 - 64 from the top.
        let row = 256 - 64;
        let px = &pgm[header.len() + row * 9..header.len() + (row + 1) * 9];
        assert!(px.iter().all(|&p| p >= 250));
        assert!(stft_db(&AudioBuffer::silence(10, 16000), &cfg).is_err());
    }
}
