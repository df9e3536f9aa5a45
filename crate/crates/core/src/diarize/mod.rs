//! Overlap-aware clustering diarization.
//!
//! Every device's segment in every timeslot is embedded separately and the
//! segments of all devices are clustered together, so one timeslot can carry
//! several speakers when different devices hear different talkers. Each
//! embedding is extended with the slot's normalized cross-device power
//! profile before clustering.

mod activity;
mod cluster;
mod embed;
pub mod rttm;
pub use rttm::{read_rttm, speaker_label, write_rttm};
mod segment;

pub use activity::{
    build_activity, close_gaps, close_row, extract_utterances, upsample, ActivityMatrix,
    LabeledSegment, Utterance,
};
pub use cluster::{agglomerative, cosine_distance};
pub use embed::{
    mel_filterbank, normalize_embeddings, NormalizedEmbeddings, PrecomputedEmbeddings,
    SegmentEmbedder, SpectralStatsEmbedder,
};
pub use segment::{
    mean_power, percentile_sorted, power_db, segment, SegmentConfig, SegmentGrid, VadConfig,
    VadThreshold,
};

use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiarizeError {
    #[error("no aligned channels")]
    NoChannels,
    #[error("session of {seconds:.2}s is shorter than one {window_s}s segment")]
    SessionTooShort { seconds: f64, window_s: f64 },
    #[error("invalid diarization setting: {0}")]
    Config(String),
    #[error("degenerate (constant) segment")]
    DegenerateSegment,
    #[error("zero power profile at speech slot {slot}")]
    ZeroPower { slot: usize },
    #[error("{found} usable speech segments for {clusters} clusters")]
    TooFewSegments { found: usize, clusters: usize },
    #[error("embedding table is {found:?} but the session grid is {expected:?}")]
    EmbeddingShape {
        found: (usize, usize),
        expected: (usize, usize),
    },
    #[error("malformed RTTM: {0}")]
    Rttm(String),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DiarizeConfig {
    pub speakers: usize,
    /// Weight of the power-profile tail against the unit-norm embedding.
    pub lambda: f64,
    pub segment: SegmentConfig,
    pub vad: VadConfig,
    pub closing: bool,
    /// Longest silence (in slots) bridged by closing.
    pub max_gap_slots: usize,
    /// Runs shorter than this many STFT frames are discarded.
    pub min_utterance_frames: usize,
}

impl DiarizeConfig {
    pub fn new(speakers: usize) -> Self {
        Self {
            speakers,
            lambda: 1.0,
            segment: SegmentConfig::default(),
            vad: VadConfig::default(),
            closing: true,
            max_gap_slots: 2,
            min_utterance_frames: 10,
        }
    }
}

/// Concatenates a unit-norm embedding with the `lambda`-scaled unit power
/// profile of its timeslot.
pub fn build_features(
    embedding: &[f64],
    powers: &[f64],
    lambda: f64,
    slot: usize,
) -> Result<Vec<f64>, DiarizeError> {
    let norm = powers.iter().map(|p| p * p).sum::<f64>().sqrt();
    if norm <= 0.0 || !norm.is_finite() {
        return Err(DiarizeError::ZeroPower { slot });
    }
    let mut v = embedding.to_vec();
    v.extend(powers.iter().map(|p| lambda * p / norm));
    Ok(v)
}

pub enum EmbeddingSource<'a> {
    Extractor(&'a dyn SegmentEmbedder),
    Precomputed(&'a PrecomputedEmbeddings),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiarizationResult {
    pub grid: SegmentGrid,
    /// Average segment power, `[device][slot]`.
    pub powers: Vec<Vec<f64>>,
    pub speech: Vec<Vec<bool>>,
    pub labels: Vec<LabeledSegment>,
    /// `(device, slot)` segments removed as degenerate or vanishing.
    pub dropped: Vec<(usize, usize)>,
    /// Slot-level activity straight from the clusters.
    pub raw: ActivityMatrix,
    /// Slot-level activity after optional gap closing.
    pub activity: ActivityMatrix,
}

pub fn diarize(
    aligned: &[Vec<f64>],
    sample_rate: u32,
    config: &DiarizeConfig,
    embeddings: EmbeddingSource<'_>,
) -> Result<DiarizationResult, DiarizeError> {
    if config.speakers == 0 {
        return Err(DiarizeError::Config("speaker count must be at least 1".into()));
    }
    if !(config.lambda >= 0.0) {
        return Err(DiarizeError::Config(format!("lambda {} < 0", config.lambda)));
    }
    let grid = segment(aligned, sample_rate, config.segment)?;
    let devices = aligned.len();
    let powers: Vec<Vec<f64>> = aligned
        .iter()
        .map(|x| (0..grid.slots).map(|t| mean_power(&x[grid.range(t)])).collect())
        .collect();
    let mut speech: Vec<Vec<bool>> = powers
        .iter()
        .map(|p| {
            let th = VadThreshold::from_powers(p, config.vad);
            p.iter().map(|&v| th.is_speech(v)).collect()
        })
        .collect();

    let cells: Vec<(usize, usize)> = (0..devices)
        .flat_map(|m| (0..grid.slots).map(move |t| (m, t)))
        .filter(|&(m, t)| speech[m][t])
        .collect();
    let raw_embeddings: Vec<Option<Vec<f64>>> = match embeddings {
        EmbeddingSource::Extractor(e) => cells
            .par_iter()
            .map(|&(m, t)| e.embed(&aligned[m][grid.range(t)]).ok())
            .collect(),
        EmbeddingSource::Precomputed(table) => {
            let found = (table.values.len(), table.values.first().map_or(0, Vec::len));
            if found != (devices, grid.slots) {
                return Err(DiarizeError::EmbeddingShape {
                    found,
                    expected: (devices, grid.slots),
                });
            }
            cells.iter().map(|&(m, t)| table.values[m][t].clone()).collect()
        }
    };
    let mut dropped: Vec<(usize, usize)> = cells
        .iter()
        .zip(&raw_embeddings)
        .filter(|(_, e)| e.is_none())
        .map(|(&c, _)| c)
        .collect();
    let normalized = normalize_embeddings(&raw_embeddings);
    dropped.extend(normalized.dropped.iter().map(|&i| cells[i]));
    dropped.sort_unstable();
    for &(m, t) in &dropped {
        speech[m][t] = false;
    }
    if !dropped.is_empty() {
        tracing::debug!(count = dropped.len(), "segments dropped from clustering");
    }

    let mut kept = Vec::new();
    let mut features = Vec::new();
    for (&(m, t), emb) in cells.iter().zip(&normalized.values) {
        let Some(c) = emb else { continue };
        let profile: Vec<f64> = (0..devices).map(|d| powers[d][t]).collect();
        features.push(build_features(c, &profile, config.lambda, t)?);
        kept.push((m, t));
    }
    let labels = agglomerative(&features, config.speakers)?;
    let labels: Vec<LabeledSegment> = kept
        .iter()
        .zip(labels)
        .map(|(&(device, slot), label)| LabeledSegment { device, slot, label })
        .collect();
    let raw = build_activity(&labels, grid.slots, config.speakers, grid.shift_s());
    let activity = if config.closing {
        close_gaps(&raw, config.max_gap_slots)
    } else {
        raw.clone()
    };
    Ok(DiarizationResult {
        grid,
        powers,
        speech,
        labels,
        dropped,
        raw,
        activity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_tail() {
        let c = [0.6, 0.8];
        let p = [3.0, 4.0];
        assert_eq!(build_features(&c, &p, 0.0, 0).unwrap(), vec![0.6, 0.8, 0.0, 0.0]);
        let v = build_features(&c, &p, 1.0, 0).unwrap();
        assert!((v[2].hypot(v[3]) - 1.0).abs() < 1e-12);
        for lambda in (-3..=3).map(|e| 2f64.powi(e)) {
            let v = build_features(&c, &p, lambda, 0).unwrap();
            assert!((v[2].hypot(v[3]) - lambda).abs() < 1e-12);
        }
        assert!(matches!(
            build_features(&c, &[0.0, 0.0], 1.0, 4),
            Err(DiarizeError::ZeroPower { slot: 4 })
        ));
    }

    #[test]
    fn feature_tail_ignores_common_power_scale() {
        let c = [1.0, 0.0, 0.0];
        let p = [0.2, 0.05, 0.7];
        let scaled: Vec<f64> = p.iter().map(|v| v * 37.5).collect();
        let a = build_features(&c, &p, 2.0, 0).unwrap();
        let b = build_features(&c, &scaled, 2.0, 0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
