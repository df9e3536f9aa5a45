//! Boundary to an external speech recognizer.
//!
//! Backends receive one enhanced utterance as 16-bit WAV and return text.
//! A deterministic mock keyed on planted ground truth stands in for a real
//! recognizer in tests.

mod backend;
mod mock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{CommandRecognizer, HttpRecognizer};
pub use mock::{band_sir_db, MockManifest, MockParams, MockRecognizer, PlantedUtterance};

use crate::transcript::{AsrResult, Tokenization};

#[derive(Debug, Error)]
pub enum AsrError {
    #[error("recognizer timed out after {0:.1} s")]
    Timeout(f64),
    #[error("recognizer exited with {status}: {stderr}")]
    Exit { status: String, stderr: String },
    #[error("recognizer I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("recognizer request failed: {0}")]
    Http(String),
    #[error("recognizer returned unusable output: {0}")]
    Output(String),
    #[error("invalid mock manifest: {0}")]
    Manifest(String),
}

/// Where an utterance sits and who was speaking; passed through unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtteranceMeta {
    pub speaker: usize,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceAudio {
    pub meta: UtteranceMeta,
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

pub trait Recognizer: Send + Sync {
    fn recognize(&self, audio: &UtteranceAudio) -> Result<String, AsrError>;

    /// Stable description used in cache keys and config digests.
    fn describe(&self) -> String;
}

/// Per-utterance result of a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum AsrOutcome {
    Accepted(AsrResult),
    /// The recognizer produced no tokens; the utterance is dropped.
    Empty { meta: UtteranceMeta },
    Failed { meta: UtteranceMeta, error: String },
}

impl AsrOutcome {
    pub fn result(&self) -> Option<&AsrResult> {
        match self {
            Self::Accepted(r) => Some(r),
            _ => None,
        }
    }
}

/// Recognizes one utterance; `Ok(None)` when the transcript has no tokens.
pub fn transcribe(
    recognizer: &dyn Recognizer,
    audio: &UtteranceAudio,
    tokenization: Tokenization,
) -> Result<Option<AsrResult>, AsrError> {
    let raw = recognizer.recognize(audio)?;
    let text = raw.split_whitespace().collect::<Vec<_>>().join(" ");
    if tokenization.tokenize(&text).is_empty() {
        return Ok(None);
    }
    Ok(Some(AsrResult {
        speaker: audio.meta.speaker,
        start_s: audio.meta.start_s,
        end_s: audio.meta.end_s,
        text,
        confidence: None,
    }))
}

/// Order-preserving batch with at most `parallelism` concurrent requests.
/// Failures are isolated to their own entry.
pub fn transcribe_batch(
    recognizer: &dyn Recognizer,
    items: &[UtteranceAudio],
    tokenization: Tokenization,
    parallelism: usize,
) -> Vec<AsrOutcome> {
    let run = || {
        items
            .par_iter()
            .map(|a| match transcribe(recognizer, a, tokenization) {
                Ok(Some(r)) => AsrOutcome::Accepted(r),
                Ok(None) => AsrOutcome::Empty { meta: a.meta },
                Err(e) => {
                    tracing::warn!(speaker = a.meta.speaker, start_s = a.meta.start_s, "recognition failed: {e}");
                    AsrOutcome::Failed {
                        meta: a.meta,
                        error: e.to_string(),
                    }
                }
            })
            .collect()
    };
    match rayon::ThreadPoolBuilder::new().num_threads(parallelism.max(1)).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}
