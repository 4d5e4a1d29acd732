//! WAV codec and the canonical in-memory audio representation.
//!
//! Reading accepts RIFF/WAVE with 16-bit PCM or 32-bit IEEE float samples,
//! mono or stereo. Writing always produces 16-bit PCM mono. Stereo input is
//! averaged down to one channel.

use std::path::Path;

use crate::error::{param_err, Error, Result};

/// Rate every attack operation expects unless the caller resamples explicitly.
pub const CANONICAL_RATE: u32 = 16_000;

const PCM_READ_SCALE: f64 = 32768.0;
const PCM_MAX: f64 = 32767.0;

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Mono samples in `[-1, 1]` with their sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate as f64 / 2.0
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Converts a duration in milliseconds into a sample count, never below one.
    pub fn ms_to_samples(&self, ms: f64) -> usize {
        ms_to_samples(ms, self.sample_rate)
    }

    /// Checks the buffer invariants: positive rate, finite samples within full scale.
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(param_err("sample rate must be positive"));
        }
        if let Some(i) = self
            .samples
            .iter()
            .position(|s| !s.is_finite() || s.abs() > 1.0)
        {
            return Err(param_err(format!(
                "sample {i} is {} which is outside [-1, 1]",
                self.samples[i]
            )));
        }
        Ok(())
    }

    pub fn require_rate(&self, rate: u32) -> Result<()> {
        if self.sample_rate != rate {
            return Err(param_err(format!(
                "expected {rate} Hz audio, got {} Hz (resample explicitly first)",
                self.sample_rate
            )));
        }
        Ok(())
    }

    /// Joins buffers end to end. All parts must share one sample rate.
    pub fn concat(parts: &[AudioBuffer]) -> Result<AudioBuffer> {
        let Some(first) = parts.first() else {
            return Err(param_err("nothing to concatenate"));
        };
        let mut samples = Vec::with_capacity(parts.iter().map(AudioBuffer::len).sum());
        for p in parts {
            p.require_rate(first.sample_rate)?;
            samples.extend_from_slice(&p.samples);
        }
        Ok(AudioBuffer::new(samples, first.sample_rate))
    }

    /// Splits at the given sample indices; indices must be strictly increasing
    /// and inside the buffer.
    pub fn split_at_samples(&self, cuts: &[usize]) -> Result<Vec<AudioBuffer>> {
        let mut parts = Vec::with_capacity(cuts.len() + 1);
        let mut start = 0;
        for &cut in cuts {
            if cut <= start || cut >= self.len() {
                return Err(param_err(format!("invalid split index {cut}")));
            }
            parts.push(AudioBuffer::new(
                self.samples[start..cut].to_vec(),
                self.sample_rate,
            ));
            start = cut;
        }
        parts.push(AudioBuffer::new(
            self.samples[start..].to_vec(),
            self.sample_rate,
        ));
        Ok(parts)
    }
}

pub fn ms_to_samples(ms: f64, sample_rate: u32) -> usize {
    let n = (ms * sample_rate as f64 / 1000.0).round();
    if n.is_finite() && n >= 1.0 {
        n as usize
    } else {
        1
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("unexpected end of data".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

#[derive(Debug, Clone, Copy)]
struct FmtChunk {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

fn parse_fmt(body: &[u8]) -> Result<FmtChunk> {
    let mut c = Cursor {
        bytes: body,
        pos: 0,
    };
    let mut format = c.u16()?;
    let channels = c.u16()?;
    let sample_rate = c.u32()?;
    let _byte_rate = c.u32()?;
    let _block_align = c.u16()?;
    let bits = c.u16()?;
    if format == FORMAT_EXTENSIBLE {
        let ext_len = c.u16()?;
        if ext_len < 22 {
            return Err(Error::Format("short WAVE_FORMAT_EXTENSIBLE block".into()));
        }
        let _valid_bits = c.u16()?;
        let _channel_mask = c.u32()?;
        // The first two bytes of the subformat GUID carry the plain format tag.
        format = c.u16()?;
    }
    Ok(FmtChunk {
        format,
        channels,
        sample_rate,
        bits,
    })
}

/// Decodes a RIFF/WAVE byte stream.
pub fn read_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != b"RIFF" {
        return Err(Error::Format("missing RIFF tag".into()));
    }
    let _riff_len = c.u32()?;
    if c.take(4)? != b"WAVE" {
        return Err(Error::Format("missing WAVE tag".into()));
    }

    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    while c.remaining() >= 8 {
        let id = c.take(4)?;
        let declared = c.u32()? as usize;
        let len = declared.min(c.remaining());
        let body = c.take(len)?;
        match id {
            b"fmt " => fmt = Some(parse_fmt(body)?),
            b"data" => {
                data = Some(body);
                break;
            }
            _ => {}
        }
        if len % 2 == 1 && c.remaining() > 0 {
            c.take(1)?;
        }
    }

    let fmt = fmt.ok_or_else(|| Error::Format("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::Format("no data chunk".into()))?;
    if fmt.sample_rate == 0 {
        return Err(Error::Format("zero sample rate".into()));
    }
    if !(1..=2).contains(&fmt.channels) {
        return Err(Error::UnsupportedCodec(format!(
            "{} channels",
            fmt.channels
        )));
    }

    let interleaved: Vec<f64> = match (fmt.format, fmt.bits) {
        (FORMAT_PCM, 16) => data
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / PCM_READ_SCALE)
            .collect(),
        (FORMAT_IEEE_FLOAT, 32) => data
            .chunks_exact(4)
            .map(|b| {
                let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
                if v.is_finite() {
                    Ok(v.clamp(-1.0, 1.0))
                } else {
                    Err(Error::Format("non-finite float sample".into()))
                }
            })
            .collect::<Result<_>>()?,
        (format, bits) => {
            return Err(Error::UnsupportedCodec(format!(
                "format tag {format:#06x} with {bits} bits per sample"
            )))
        }
    };

    let samples = match fmt.channels {
        1 => interleaved,
        _ => interleaved
            .chunks_exact(2)
            .map(|lr| (lr[0] + lr[1]) / 2.0)
            .collect(),
    };
    Ok(AudioBuffer::new(samples, fmt.sample_rate))
}

/// Quantizes one sample to a 16-bit word.
///
/// The scale matches the reader (x32768) so decoded files re-encode to the
/// same words; the clamp keeps full scale symmetric at +/-32767.
pub fn quantize_sample(x: f64) -> i16 {
    (x * PCM_READ_SCALE).round().clamp(-PCM_MAX, PCM_MAX) as i16
}

fn wav_header(sample_rate: u32, format: u16, bytes_per_sample: u16, data_len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * bytes_per_sample as u32).to_le_bytes());
    out.extend_from_slice(&bytes_per_sample.to_le_bytes());
    out.extend_from_slice(&(bytes_per_sample * 8).to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    out
}

/// Encodes as 16-bit PCM mono with a canonical 44-byte header.
pub fn write_wav(audio: &AudioBuffer) -> Vec<u8> {
    let mut out = wav_header(audio.sample_rate, FORMAT_PCM, 2, audio.samples.len() * 2);
    for &s in &audio.samples {
        out.extend_from_slice(&quantize_sample(s).to_le_bytes());
    }
    out
}

/// Encodes as 32-bit IEEE float mono, for checks finer than a 16-bit step.
pub fn write_wav_float(audio: &AudioBuffer) -> Vec<u8> {
    let mut out = wav_header(
        audio.sample_rate,
        FORMAT_IEEE_FLOAT,
        4,
        audio.samples.len() * 4,
    );
    for &s in &audio.samples {
        out.extend_from_slice(&(s as f32).to_le_bytes());
    }
    out
}

pub fn read_wav_file(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    read_wav(&std::fs::read(path)?)
}

pub fn write_wav_file(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<()> {
    std::fs::write(path, write_wav(audio))?;
    Ok(())
}

/// Linear-interpolation resampling; identity when the rates already match.
pub fn resample(audio: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    if target_rate == 0 {
        return Err(param_err("target rate must be positive"));
    }
    if target_rate == audio.sample_rate {
        return Ok(audio.clone());
    }
    let src = &audio.samples;
    let ratio = target_rate as f64 / audio.sample_rate as f64;
    let out_len = (src.len() as f64 * ratio).round() as usize;
    if src.is_empty() {
        return Ok(AudioBuffer::new(vec![0.0; out_len], target_rate));
    }
    let step = audio.sample_rate as f64 / target_rate as f64;
    let last = src.len() - 1;
    let samples = (0..out_len)
        .map(|k| {
            let pos = k as f64 * step;
            let i = pos.floor() as usize;
            if i >= last {
                return src[last];
            }
            let frac = pos - i as f64;
            src[i] + (src[i + 1] - src[i]) * frac
        })
        .collect();
    Ok(AudioBuffer::new(samples, target_rate))
}

/// Downmixed input brought to `rate`, resampling only when `allow_resample` is set.
pub fn canonicalize(audio: AudioBuffer, rate: u32, allow_resample: bool) -> Result<AudioBuffer> {
    if audio.sample_rate == rate {
        Ok(audio)
    } else if allow_resample {
        resample(&audio, rate)
    } else {
        audio.require_rate(rate).map(|_| audio)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pcm16_wav(channels: u16, rate: u32, words: &[i16]) -> Vec<u8> {
        let data_len = words.len() * 2;
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
        out.extend_from_slice(b"WAVEfmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        out.extend_from_slice(&(rate * 2 * channels as u32).to_le_bytes());
        out.extend_from_slice(&(2 * channels).to_le_bytes());
        out.extend_from_slice(&16u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data_len as u32).to_le_bytes());
        for w in words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    #[test]
    fn float_output_round_trips_to_f32_precision() {
        let a = AudioBuffer::new(vec![0.0, 0.123456789, -0.987654321, 1.0], 22050);
        let bytes = write_wav_float(&a);
        assert_eq!(bytes.len(), 44 + 16);
        let b = read_wav(&bytes).unwrap();
        assert_eq!(b.sample_rate, 22050);
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert!((x - y).abs() <= 1e-7);
        }
        assert_eq!(write_wav_float(&b), bytes);
    }

    #[test]
    fn reads_pcm16_scaling() {
        let a = read_wav(&pcm16_wav(1, 16000, &[0, 16384, -32768])).unwrap();
        assert_eq!(a.samples, vec![0.0, 0.5, -1.0]);
        assert_eq!(a.sample_rate, 16000);
    }

    #[test]
    fn stereo_is_averaged() {
        let a = read_wav(&pcm16_wav(2, 8000, &[16384, 0, 16384, 0])).unwrap();
        assert_eq!(a.samples, vec![0.25, 0.25]);
    }

    #[test]
    fn reads_float32_and_skips_unknown_chunks() {
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF\0\0\0\0WAVE");
        out.extend_from_slice(b"LIST");
        out.extend_from_slice(&3u32.to_le_bytes());
        out.extend_from_slice(&[1, 2, 3, 0]);
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&3u16.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&22050u32.to_le_bytes());
        out.extend_from_slice(&(22050u32 * 4).to_le_bytes());
        out.extend_from_slice(&4u16.to_le_bytes());
        out.extend_from_slice(&32u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&8u32.to_le_bytes());
        out.extend_from_slice(&0.25f32.to_le_bytes());
        out.extend_from_slice(&(-0.5f32).to_le_bytes());
        let a = read_wav(&out).unwrap();
        assert_eq!(a.samples, vec![0.25, -0.5]);
        assert_eq!(a.sample_rate, 22050);
    }

    #[test]
    fn rejects_malformed_and_compressed() {
        assert!(matches!(read_wav(b"RIFX1234"), Err(Error::Format(_))));
        assert!(matches!(read_wav(b"RIFF"), Err(Error::Format(_))));
        let mut mp3 = pcm16_wav(1, 16000, &[0, 0]);
        mp3[20] = 0x55;
        assert!(matches!(read_wav(&mp3), Err(Error::UnsupportedCodec(_))));
        let mut no_data = pcm16_wav(1, 16000, &[]);
        no_data.truncate(36);
        assert!(matches!(read_wav(&no_data), Err(Error::Format(_))));
    }

    #[test]
    fn write_quantization() {
        let bytes = write_wav(&AudioBuffer::new(vec![0.0], 16000));
        assert_eq!(bytes.len(), 46);
        assert_eq!(&bytes[36..40], b"data");
        assert_eq!(&bytes[44..], &[0, 0]);

        let bytes = write_wav(&AudioBuffer::new(vec![1.0, -1.0], 16000));
        assert_eq!(i16::from_le_bytes([bytes[44], bytes[45]]), 32767);
        assert_eq!(i16::from_le_bytes([bytes[46], bytes[47]]), -32767);
    }

    #[test]
    fn write_is_deterministic() {
        let a = AudioBuffer::new((0..100).map(|i| (i as f64 * 0.1).sin()).collect(), 16000);
        assert_eq!(write_wav(&a), write_wav(&a.clone()));
    }

    #[test]
    fn resample_identity_and_length() {
        let a = AudioBuffer::new(vec![0.1, 0.2, 0.3], 16000);
        assert_eq!(resample(&a, 16000).unwrap(), a);
        let b = AudioBuffer::silence(4800, 48000);
        assert_eq!(resample(&b, 16000).unwrap().len(), 1600);
        assert!(resample(&a, 0).is_err());
    }

    #[test]
    fn split_and_concat_round_trip() {
        let a = AudioBuffer::new((0..10).map(|i| i as f64 / 10.0).collect(), 16000);
        let parts = a.split_at_samples(&[3, 7]).unwrap();
        assert_eq!(
            parts.iter().map(AudioBuffer::len).collect::<Vec<_>>(),
            [3, 4, 3]
        );
        assert_eq!(AudioBuffer::concat(&parts).unwrap(), a);
        assert!(a.split_at_samples(&[7, 3]).is_err());
    }

    #[test]
    fn ms_conversion_floors_at_one() {
        assert_eq!(ms_to_samples(1.0, 16000), 16);
        assert_eq!(ms_to_samples(1.5, 16000), 24);
        assert_eq!(ms_to_samples(0.01, 16000), 1);
        assert_eq!(ms_to_samples(20.0, 16000), 320);
    }
}
