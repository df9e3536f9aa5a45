//! Removal of repeated recognitions of one utterance under different
//! speakers.
//!
//! Two results are linked when their intervals overlap, their token
//! sequences are similar and their speakers differ. In each connected
//! component only the speaker with the most tokens keeps its results.

use thiserror::Error;

use crate::edit::levenshtein;
use crate::transcript::{sort_results, AsrResult, Tokenization, TranscriptSet};

pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum DedupError {
    #[error("similarity of an empty token sequence is undefined")]
    EmptySequence,
}

/// `(max(|a|, |b|) - d(a, b)) / min(|a|, |b|)`. Not clamped: sequences of
/// different length can score above 1.
pub fn similarity<T: PartialEq>(a: &[T], b: &[T]) -> Result<f64, DedupError> {
    if a.is_empty() || b.is_empty() {
        return Err(DedupError::EmptySequence);
    }
    let d = levenshtein(a, b) as f64;
    Ok((a.len().max(b.len()) as f64 - d) / a.len().min(b.len()) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DedupGraph {
    pub adjacency: Vec<Vec<bool>>,
    pub tau: f64,
    /// Component of each result, numbered in order of first member.
    pub components: Vec<usize>,
}

impl DedupGraph {
    pub fn component_count(&self) -> usize {
        self.components.iter().max().map_or(0, |&c| c + 1)
    }
}

fn linked(a: &AsrResult, ta: &[String], b: &AsrResult, tb: &[String], tau: f64) -> bool {
    a.speaker != b.speaker && a.overlaps(b) && similarity(ta, tb).is_ok_and(|s| s > tau)
}

pub fn build_adjacency(results: &[AsrResult], tau: f64, tokenization: Tokenization) -> DedupGraph {
    let n = results.len();
    let tokens: Vec<Vec<String>> = results.iter().map(|r| r.tokens(tokenization)).collect();
    let mut adjacency = vec![vec![false; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let a = linked(&results[i], &tokens[i], &results[j], &tokens[j], tau);
            adjacency[i][j] = a;
            adjacency[j][i] = a;
        }
    }
    // Union-find over the edges; roots are the smallest member index.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..n {
        for j in i + 1..n {
            if adjacency[i][j] {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                let (lo, hi) = (ri.min(rj), ri.max(rj));
                parent[hi] = lo;
            }
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    let mut components = vec![0; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if label[r] == usize::MAX {
            label[r] = next;
            next += 1;
        }
        components[i] = label[r];
    }
    DedupGraph {
        adjacency,
        tau,
        components,
    }
}

/// Keeps, per component, the results of the speaker with the largest total
/// token count (ties to the lowest speaker index). Output is sorted by
/// start, end, speaker, text.
pub fn reduce(results: &[AsrResult], tau: f64, tokenization: Tokenization) -> Vec<AsrResult> {
    let graph = build_adjacency(results, tau, tokenization);
    let count = graph.component_count();
    let mut totals: Vec<std::collections::BTreeMap<usize, usize>> = vec![Default::default(); count];
    for (r, &c) in results.iter().zip(&graph.components) {
        *totals[c].entry(r.speaker).or_default() += r.tokens(tokenization).len();
    }
    let keep: Vec<usize> = totals
        .iter()
        .map(|t| {
            t.iter()
                .fold((usize::MAX, 0usize), |best, (&k, &w)| {
                    if best.0 == usize::MAX || w > best.1 {
                        (k, w)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect();
    let mut out: Vec<AsrResult> = results
        .iter()
        .zip(&graph.components)
        .filter(|(r, &c)| r.speaker == keep[c])
        .map(|(r, _)| r.clone())
        .collect();
    sort_results(&mut out);
    out
}

pub fn reduce_set(set: &TranscriptSet, tau: f64, tokenization: Tokenization) -> TranscriptSet {
    TranscriptSet {
        results: reduce(&set.results, tau, tokenization),
        ..set.clone()
    }
}
