//! Speaker activity matrices: construction from cluster labels, gap
//! closing, upsampling to the STFT frame rate, and utterance extraction.

use super::SegmentGrid;

/// Binary activity, `rows = speakers + 1`; the last row is the noise class.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ActivityMatrix {
    pub rows: Vec<Vec<bool>>,
    /// Spacing of successive columns in seconds.
    pub slot_duration_s: f64,
}

impl ActivityMatrix {
    pub fn speakers(&self) -> usize {
        self.rows.len().saturating_sub(1)
    }

    pub fn columns(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn noise_row(&self) -> &[bool] {
        self.rows.last().map_or(&[], Vec::as_slice)
    }

    pub fn get(&self, k: usize, t: usize) -> bool {
        self.rows[k][t]
    }

    /// Number of columns where at least two speaker rows are active.
    pub fn overlapped_columns(&self) -> usize {
        (0..self.columns())
            .filter(|&t| (0..self.speakers()).filter(|&k| self.rows[k][t]).count() >= 2)
            .count()
    }
}

/// One clustered segment: device `m`, slot `t`, cluster `label`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledSegment {
    pub device: usize,
    pub slot: usize,
    pub label: usize,
}

/// A slot is active for cluster `k` if any device's segment there fell in
/// cluster `k`. The noise row is active everywhere.
pub fn build_activity(
    segments: &[LabeledSegment],
    slots: usize,
    speakers: usize,
    slot_duration_s: f64,
) -> ActivityMatrix {
    let mut rows = vec![vec![false; slots]; speakers + 1];
    for s in segments {
        rows[s.label][s.slot] = true;
    }
    rows[speakers].iter_mut().for_each(|v| *v = true);
    ActivityMatrix {
        rows,
        slot_duration_s,
    }
}

fn dilate(row: &[bool], radius: usize) -> Vec<bool> {
    (0..row.len())
        .map(|i| {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius).min(row.len() - 1);
            row[lo..=hi].iter().any(|&v| v)
        })
        .collect()
}

fn erode(row: &[bool], radius: usize) -> Vec<bool> {
    (0..row.len())
        .map(|i| {
            // Out-of-range neighbours count as inactive.
            if i < radius || i + radius >= row.len() {
                return false;
            }
            row[i - radius..=i + radius].iter().all(|&v| v)
        })
        .collect()
}

/// Morphological closing of one row with a `2 * radius + 1` wide element.
///
/// The row is zero-padded by `radius` on both ends first so that runs
/// touching the edges are kept. Interior gaps of at most `2 * radius`
/// inactive columns are filled; active columns are never cleared.
pub fn close_row(row: &[bool], radius: usize) -> Vec<bool> {
    if radius == 0 || row.is_empty() {
        return row.to_vec();
    }
    let mut padded = vec![false; radius];
    padded.extend_from_slice(row);
    padded.extend(std::iter::repeat(false).take(radius));
    let closed = erode(&dilate(&padded, radius), radius);
    closed[radius..radius + row.len()].to_vec()
}

/// Fills speaker-row gaps of at most `max_gap` columns between active runs.
pub fn close_gaps(y: &ActivityMatrix, max_gap: usize) -> ActivityMatrix {
    let speakers = y.speakers();
    let rows = y
        .rows
        .iter()
        .enumerate()
        .map(|(k, row)| {
            if k < speakers {
                close_row(row, max_gap / 2)
            } else {
                row.clone()
            }
        })
        .collect();
    ActivityMatrix {
        rows,
        slot_duration_s: y.slot_duration_s,
    }
}

/// Resamples slot-level activity onto `frames` STFT frames spaced
/// `frame_shift_s` apart. Frame `j` (centered at `j * frame_shift_s`) takes
/// the value of the slot whose central `shift`-long span contains it.
pub fn upsample(
    y: &ActivityMatrix,
    grid: &SegmentGrid,
    frame_shift_s: f64,
    frames: usize,
) -> ActivityMatrix {
    let offset = (grid.window_s() - grid.shift_s()) / 2.0;
    let shift = grid.shift_s();
    let last = y.columns().saturating_sub(1) as f64;
    let slot_of = |j: usize| -> usize {
        let center = j as f64 * frame_shift_s;
        ((center - offset) / shift).floor().clamp(0.0, last) as usize
    };
    let map: Vec<usize> = (0..frames).map(slot_of).collect();
    let rows = y
        .rows
        .iter()
        .map(|row| map.iter().map(|&s| row.get(s).copied().unwrap_or(false)).collect())
        .collect();
    ActivityMatrix {
        rows,
        slot_duration_s: frame_shift_s,
    }
}

/// A maximal active run of one speaker, in frames (`end` exclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Utterance {
    pub speaker: usize,
    pub start: usize,
    pub end: usize,
}

impl Utterance {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Maximal runs per speaker row, dropping runs shorter than `min_frames`.
/// Sorted by start frame, then speaker.
pub fn extract_utterances(y: &ActivityMatrix, min_frames: usize) -> Vec<Utterance> {
    let mut out = Vec::new();
    for (speaker, row) in y.rows.iter().take(y.speakers()).enumerate() {
        let mut t = 0;
        while t < row.len() {
            if !row[t] {
                t += 1;
                continue;
            }
            let start = t;
            while t < row.len() && row[t] {
                t += 1;
            }
            if t - start >= min_frames.max(1) {
                out.push(Utterance {
                    speaker,
                    start,
                    end: t,
                });
            }
        }
    }
    out.sort_by_key(|u| (u.start, u.speaker));
    out
}
