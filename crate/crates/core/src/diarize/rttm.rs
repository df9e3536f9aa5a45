//! RTTM export and import of frame-level activity.

use std::fmt::Write as _;

use super::{extract_utterances, ActivityMatrix, DiarizeError};

/// Speaker label written for row `k`.
pub fn speaker_label(k: usize) -> String {
    format!("spk{k}")
}

/// One `SPEAKER` line per active run; times are shifted by `offset_s`.
pub fn write_rttm(y: &ActivityMatrix, file_id: &str, offset_s: f64) -> String {
    let dt = y.slot_duration_s;
    let mut out = String::new();
    for u in extract_utterances(y, 1) {
        let start = offset_s + u.start as f64 * dt;
        let dur = u.len() as f64 * dt;
        writeln!(
            out,
            "SPEAKER {file_id} 1 {start:.3} {dur:.3} <NA> <NA> {} <NA> <NA>",
            speaker_label(u.speaker)
        )
        .expect("string write");
    }
    out
}

/// Parses `SPEAKER` lines onto `frames` frames spaced `frame_shift_s` apart,
/// with frame 0 at `offset_s`. A frame is active when its center lies in a
/// segment. Speaker names are assigned rows in sorted order.
pub fn read_rttm(
    text: &str,
    speakers: usize,
    frames: usize,
    frame_shift_s: f64,
    offset_s: f64,
) -> Result<ActivityMatrix, DiarizeError> {
    let mut segments: Vec<(String, f64, f64)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() || fields[0].starts_with(';') {
            continue;
        }
        if fields[0] != "SPEAKER" {
            continue;
        }
        let bad = || DiarizeError::Rttm(format!("line {}: {line}", lineno + 1));
        if fields.len() < 8 {
            return Err(bad());
        }
        let start: f64 = fields[3].parse().map_err(|_| bad())?;
        let dur: f64 = fields[4].parse().map_err(|_| bad())?;
        if !start.is_finite() || !dur.is_finite() || dur < 0.0 {
            return Err(bad());
        }
        segments.push((fields[7].to_string(), start, start + dur));
    }
    let mut names: Vec<&str> = segments.iter().map(|s| s.0.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    if names.len() > speakers {
        return Err(DiarizeError::Rttm(format!(
            "{} speakers in file, {speakers} expected",
            names.len()
        )));
    }
    let mut rows = vec![vec![false; frames]; speakers + 1];
    for (name, start, end) in &segments {
        let k = names.binary_search(&name.as_str()).expect("collected above");
        for (j, v) in rows[k].iter_mut().enumerate() {
            let center = offset_s + j as f64 * frame_shift_s;
            if center >= *start && center < *end {
                *v = true;
            }
        }
    }
    rows[speakers].iter_mut().for_each(|v| *v = true);
    Ok(ActivityMatrix {
        rows,
        slot_duration_s: frame_shift_s,
    })
}
