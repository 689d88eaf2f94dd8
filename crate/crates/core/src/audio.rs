//! Mono audio buffers, WAV I/O and sample-rate conversion.

use std::f64::consts::PI;
use std::io::{Cursor, Read, Seek, Write};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: f64 = 44_100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Self {
        AudioBuffer {
            samples,
            sample_rate,
        }
    }

    pub fn silence(len: usize, sample_rate: f64) -> Self {
        AudioBuffer::new(vec![0.0; len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    pub fn slice(&self, start: usize, end: usize) -> AudioBuffer {
        let end = end.min(self.samples.len());
        let start = start.min(end);
        AudioBuffer::new(self.samples[start..end].to_vec(), self.sample_rate)
    }
}

pub fn rms(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

/// Reads a WAV file, downmixing to mono by averaging channels.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let reader = WavReader::open(path)?;
    decode(reader)
}

pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    let reader = WavReader::new(Cursor::new(bytes))?;
    decode(reader)
}

fn decode<R: Read>(mut reader: WavReader<R>) -> Result<AudioBuffer> {
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::UnsupportedAudio("zero channels".into()));
    }
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        SampleFormat::Int => {
            if spec.bits_per_sample == 0 || spec.bits_per_sample > 32 {
                return Err(Error::UnsupportedAudio(format!(
                    "{}-bit integer PCM",
                    spec.bits_per_sample
                )));
            }
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let samples = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Ok(AudioBuffer::new(samples, spec.sample_rate as f64))
}

pub fn write_wav(path: impl AsRef<Path>, buf: &AudioBuffer, format: WavFormat) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    encode(std::io::BufWriter::new(file), buf, format)
}

pub fn encode_wav(buf: &AudioBuffer, format: WavFormat) -> Result<Vec<u8>> {
    let mut cursor = Cursor::new(Vec::new());
    encode(&mut cursor, buf, format)?;
    Ok(cursor.into_inner())
}

fn encode<W: Write + Seek>(sink: W, buf: &AudioBuffer, format: WavFormat) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: buf.sample_rate.round() as u32,
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => SampleFormat::Int,
            WavFormat::Float32 => SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::new(sink, spec)?;
    for &s in &buf.samples {
        let s = if s.is_finite() { s.clamp(-1.0, 1.0) } else { 0.0 };
        match format {
            WavFormat::Pcm16 => writer.write_sample((s * 32767.0).round() as i16)?,
            WavFormat::Float32 => writer.write_sample(s as f32)?,
        }
    }
    writer.finalize()?;
    Ok(())
}

/// Half-width of the resampling kernel, in zero crossings of the sinc.
const SINC_ZERO_CROSSINGS: usize = 32;

/// Windowed-sinc sample-rate conversion (Blackman window). The cutoff sits
/// at 95% of the lower of the two Nyquist frequencies.
pub fn resample(buf: &AudioBuffer, target_rate: f64) -> AudioBuffer {
    if (buf.sample_rate - target_rate).abs() < 1e-9 || buf.is_empty() {
        return AudioBuffer::new(buf.samples.clone(), target_rate);
    }
    let ratio = target_rate / buf.sample_rate;
    // Cutoff as a fraction of the input sample rate.
    let cutoff = 0.5 * ratio.min(1.0) * 0.95;
    let half_width = SINC_ZERO_CROSSINGS as f64 / (2.0 * cutoff);
    let out_len = (buf.len() as f64 * ratio).round() as usize;
    let input = &buf.samples;

    let out = (0..out_len)
        .map(|j| {
            let t = j as f64 / ratio;
            let lo = (t - half_width).ceil().max(0.0) as usize;
            let hi = ((t + half_width).floor() as usize).min(input.len() - 1);
            let mut acc = 0.0;
            for (i, &x) in input.iter().enumerate().take(hi + 1).skip(lo) {
                let d = i as f64 - t;
                let arg = 2.0 * cutoff * d;
                let sinc = if arg.abs() < 1e-12 {
                    1.0
                } else {
                    (PI * arg).sin() / (PI * arg)
                };
                let w = (d / half_width + 1.0) * 0.5;
                let blackman =
                    0.42 - 0.5 * (2.0 * PI * w).cos() + 0.08 * (4.0 * PI * w).cos();
                acc += x * 2.0 * cutoff * sinc * blackman;
            }
            acc
        })
        .collect();
    AudioBuffer::new(out, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, sr: f64, n: usize) -> AudioBuffer {
        AudioBuffer::new(
            (0..n)
                .map(|i| 0.5 * (2.0 * PI * freq * i as f64 / sr).sin())
                .collect(),
            sr,
        )
    }

    #[test]
    fn wav_round_trip_float() {
        let buf = sine(440.0, 44_100.0, 1000);
        let bytes = encode_wav(&buf, WavFormat::Float32).unwrap();
        let back = decode_wav(&bytes).unwrap();
        assert_eq!(back.sample_rate, 44_100.0);
        for (a, b) in buf.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn wav_round_trip_pcm16() {
        let buf = sine(440.0, 22_050.0, 500);
        let bytes = encode_wav(&buf, WavFormat::Pcm16).unwrap();
        // RIFF header, little-endian.
        assert_eq!(&bytes[0..4], b"RIFF");
        assert_eq!(&bytes[8..12], b"WAVE");
        let back = decode_wav(&bytes).unwrap();
        for (a, b) in buf.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1.0 / 32767.0);
        }
    }

    #[test]
    fn stereo_is_averaged() {
        let spec = WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut cursor = Cursor::new(Vec::new());
        {
            let mut w = WavWriter::new(&mut cursor, spec).unwrap();
            for _ in 0..10 {
                w.write_sample(0.5f32).unwrap();
                w.write_sample(-0.25f32).unwrap();
            }
            w.finalize().unwrap();
        }
        let buf = decode_wav(&cursor.into_inner()).unwrap();
        assert_eq!(buf.len(), 10);
        assert!(buf.samples.iter().all(|&s| (s - 0.125).abs() < 1e-9));
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(decode_wav(b"definitely not a wav file").is_err());
    }

    #[test]
    fn resample_preserves_tone() {
        let src = sine(1000.0, 48_000.0, 48_000);
        let out = resample(&src, 44_100.0);
        assert_eq!(out.len(), 44_100);
        let expected = sine(1000.0, 44_100.0, 44_100);
        // Ignore kernel edge effects.
        let err = out.samples[2000..42_000]
            .iter()
            .zip(&expected.samples[2000..42_000])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 2e-3, "max error {err}");
    }
}
