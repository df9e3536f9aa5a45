//! Character error rate against a reference transcript.

use pathfinding::prelude::{kuhn_munkres_min, Matrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edit::{align, levenshtein, EditCounts};
use crate::transcript::{AsrResult, TranscriptSet};

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("reference transcript has no characters")]
    EmptyReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    /// Per-speaker streams matched by the cheapest speaker assignment.
    #[default]
    Attribution,
    /// All text in time order, speakers ignored.
    Pooled,
}

impl std::str::FromStr for ScoreMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "attribution" => Ok(Self::Attribution),
            "pooled" => Ok(Self::Pooled),
            other => Err(format!("unknown scoring mode {other:?} (expected attribution or pooled)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSession {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_length: usize,
    pub cer: f64,
    /// `(reference speaker, hypothesis speaker)` pairs chosen by the matching.
    pub mapping: Vec<(Option<usize>, Option<usize>)>,
}

fn chars(results: &[&AsrResult]) -> Vec<char> {
    let mut sorted: Vec<&AsrResult> = results.to_vec();
    sorted.sort_by(|a, b| a.start_s.total_cmp(&b.start_s).then(a.end_s.total_cmp(&b.end_s)));
    sorted
        .iter()
        .flat_map(|r| r.text.chars().filter(|c| !c.is_whitespace()))
        .collect()
}

fn streams(set: &TranscriptSet) -> Vec<(usize, Vec<char>)> {
    set.speakers()
        .into_iter()
        .map(|k| {
            let own: Vec<&AsrResult> = set.results.iter().filter(|r| r.speaker == k).collect();
            (k, chars(&own))
        })
        .collect()
}

fn finish(counts: EditCounts, n: usize, mapping: Vec<(Option<usize>, Option<usize>)>) -> ScoredSession {
    ScoredSession {
        substitutions: counts.substitutions,
        deletions: counts.deletions,
        insertions: counts.insertions,
        reference_length: n,
        cer: counts.total() as f64 / n as f64,
        mapping,
    }
}

pub fn score(hyp: &TranscriptSet, reference: &TranscriptSet, mode: ScoreMode) -> Result<ScoredSession, ScoreError> {
    let all_ref: Vec<&AsrResult> = reference.results.iter().collect();
    let n = chars(&all_ref).len();
    if n == 0 {
        return Err(ScoreError::EmptyReference);
    }
    if mode == ScoreMode::Pooled {
        let all_hyp: Vec<&AsrResult> = hyp.results.iter().collect();
        return Ok(finish(align(&chars(&all_ref), &chars(&all_hyp)), n, Vec::new()));
    }
    let refs = streams(reference);
    let hyps = streams(hyp);
    // Square cost matrix padded with empty streams on either side.
    let size = refs.len().max(hyps.len());
    let empty: Vec<char> = Vec::new();
    let ref_at = |i: usize| refs.get(i).map_or(&empty, |s| &s.1);
    let hyp_at = |j: usize| hyps.get(j).map_or(&empty, |s| &s.1);
    let mut costs = Matrix::new(size, size, 0i64);
    for i in 0..size {
        for j in 0..size {
            costs[(i, j)] = levenshtein(ref_at(i), hyp_at(j)) as i64;
        }
    }
    let (_, assignment) = kuhn_munkres_min(&costs);
    let mut total = EditCounts::default();
    let mut mapping = Vec::with_capacity(size);
    for (i, &j) in assignment.iter().enumerate() {
        let c = align(ref_at(i), hyp_at(j));
        total.substitutions += c.substitutions;
        total.deletions += c.deletions;
        total.insertions += c.insertions;
        mapping.push((refs.get(i).map(|s| s.0), hyps.get(j).map(|s| s.0)));
    }
    Ok(finish(total, n, mapping))
}
