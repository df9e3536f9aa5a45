//! Recognition results and the transcript JSON schema.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported transcript schema version {0}")]
    Version(u32),
}

/// How text is split into tokens for duplicate detection and scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenization {
    /// Whitespace-delimited words.
    #[default]
    Words,
    /// Every non-whitespace character.
    Chars,
}

impl Tokenization {
    pub fn tokenize(self, text: &str) -> Vec<String> {
        match self {
            Self::Words => text.split_whitespace().map(str::to_owned).collect(),
            Self::Chars => text
                .chars()
                .filter(|c| !c.is_whitespace())
                .map(String::from)
                .collect(),
        }
    }
}

impl std::str::FromStr for Tokenization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "words" => Ok(Self::Words),
            "chars" => Ok(Self::Chars),
            other => Err(format!("unknown tokenization {other:?} (expected words or chars)")),
        }
    }
}

/// One recognized utterance. Times are seconds on the session timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsrResult {
    pub speaker: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl AsrResult {
    pub fn tokens(&self, tok: Tokenization) -> Vec<String> {
        tok.tokenize(&self.text)
    }

    pub fn overlaps(&self, other: &AsrResult) -> bool {
        self.start_s.max(other.start_s) < self.end_s.min(other.end_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptSet {
    pub schema_version: u32,
    pub session_id: String,
    pub results: Vec<AsrResult>,
    #[serde(default)]
    pub config_digest: String,
}

impl TranscriptSet {
    /// Builds a set with results sorted by start time (ties by end, speaker, text).
    pub fn new(session_id: impl Into<String>, mut results: Vec<AsrResult>, config_digest: impl Into<String>) -> Self {
        sort_results(&mut results);
        Self {
            schema_version: SCHEMA_VERSION,
            session_id: session_id.into(),
            results,
            config_digest: config_digest.into(),
        }
    }

    pub fn speakers(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.results.iter().map(|r| r.speaker).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("transcript serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let mut set: Self = serde_json::from_str(text)?;
        sort_results(&mut set.results);
        Ok(set)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, TranscriptError> {
        let path = path.as_ref();
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| TranscriptError::Io {
            path: name.clone(),
            source,
        })?;
        let set = Self::from_json(&text).map_err(|source| TranscriptError::Json { path: name, source })?;
        if set.schema_version != SCHEMA_VERSION {
            return Err(TranscriptError::Version(set.schema_version));
        }
        Ok(set)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), TranscriptError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| TranscriptError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

pub fn sort_results(results: &mut [AsrResult]) {
    results.sort_by(|a, b| {
        a.start_s
            .total_cmp(&b.start_s)
            .then(a.end_s.total_cmp(&b.end_s))
            .then(a.speaker.cmp(&b.speaker))
            .then(a.text.cmp(&b.text))
    });
}
