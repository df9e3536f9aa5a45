//! Waveform data model and WAV I/O.

mod stft;

pub use stft::{
    hann_periodic, istft, overlap_add, stft, stft_multichannel, Spectrogram, SpectrogramTensor,
    StftConfig,
};

use std::path::{Path, PathBuf};

use thiserror::Error;

/// Nominal sample rate of the recordings this pipeline targets.
pub const NOMINAL_SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("cannot open {path}: {source}")]
    Open {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("{path}: expected 16-bit integer PCM, found {bits}-bit {format}")]
    NotPcm16 {
        path: PathBuf,
        bits: u16,
        format: &'static str,
    },
    #[error("{path}: expected a mono stream, found {channels} channels")]
    MultiChannel { path: PathBuf, channels: u16 },
    #[error("{path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("invalid recording: {0}")]
    Invalid(String),
    #[error("signal of {len} samples is shorter than one {frame_len}-sample frame")]
    TooShort { len: usize, frame_len: usize },
    #[error("inconsistent frame geometry: {0}")]
    Geometry(String),
}

/// One device's waveform on its own clock.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub device_id: String,
}

impl Recording {
    pub fn new(
        samples: Vec<f64>,
        sample_rate: u32,
        device_id: impl Into<String>,
    ) -> Result<Self, AudioError> {
        if samples.is_empty() {
            return Err(AudioError::Invalid("recording has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(AudioError::Invalid("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::Invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
            device_id: device_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Reads a 16-bit PCM mono WAV file, scaling samples to [-1, 1).
pub fn read_wav(path: impl AsRef<Path>) -> Result<Recording, AudioError> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|source| AudioError::Open {
        path: path.to_path_buf(),
        source,
    })?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(AudioError::NotPcm16 {
            path: path.to_path_buf(),
            bits: spec.bits_per_sample,
            format: match spec.sample_format {
                hound::SampleFormat::Int => "integer",
                hound::SampleFormat::Float => "float",
            },
        });
    }
    if spec.channels != 1 {
        return Err(AudioError::MultiChannel {
            path: path.to_path_buf(),
            channels: spec.channels,
        });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / 32768.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| AudioError::Decode {
            path: path.to_path_buf(),
            source,
        })?;
    let device_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Recording::new(samples, spec.sample_rate, device_id)
}

/// Writes a recording as 16-bit PCM mono; samples outside [-1, 1) are clipped.
pub fn write_wav(path: impl AsRef<Path>, rec: &Recording) -> Result<(), AudioError> {
    write_wav_samples(path, &rec.samples, rec.sample_rate)
}

pub fn write_wav_samples(
    path: impl AsRef<Path>,
    samples: &[f64],
    sample_rate: u32,
) -> Result<(), AudioError> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |source| AudioError::Decode {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in samples {
        writer.write_sample(quantize(s)).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)
}

/// Encodes a waveform as an in-memory 16-bit PCM mono WAV.
pub fn wav_bytes(samples: &[f64], sample_rate: u32) -> Vec<u8> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = std::io::Cursor::new(Vec::with_capacity(44 + 2 * samples.len()));
    {
        // Writing to memory cannot fail.
        let mut writer = hound::WavWriter::new(&mut cursor, spec).expect("in-memory wav");
        for &s in samples {
            writer.write_sample(quantize(s)).expect("in-memory wav");
        }
        writer.finalize().expect("in-memory wav");
    }
    cursor.into_inner()
}

pub fn quantize(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}
