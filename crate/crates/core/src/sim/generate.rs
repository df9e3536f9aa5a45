//! Random meeting layouts with a controlled overlap ratio.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{overlap_ratio, DeviceSpec, ReverbSpec, SceneSpec, SpeakerSpec, UtterancePlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTemplate {
    pub speakers: usize,
    pub devices: usize,
    pub duration_s: f64,
    pub seed: u64,
    /// Desired overlapped-speech fraction.
    pub target_overlap: f64,
    pub utterance_s: (f64, f64),
    pub pause_s: (f64, f64),
    /// Silence before the first and after the last utterance.
    pub margin_s: f64,
    pub noise_db: Option<f64>,
    pub max_offset_s: f64,
    pub max_drift_ppm: f64,
    /// Speakers sit on a circle of this radius; devices lie within 60% of it.
    pub radius_m: f64,
    pub reverb: Option<ReverbSpec>,
}

impl Default for SceneTemplate {
    fn default() -> Self {
        Self {
            speakers: 2,
            devices: 6,
            duration_s: 20.0,
            seed: 0,
            target_overlap: 0.2,
            utterance_s: (3.0, 6.0),
            pause_s: (1.6, 3.0),
            margin_s: 1.0,
            noise_db: Some(-60.0),
            max_offset_s: 0.0,
            max_drift_ppm: 0.0,
            radius_m: 1.0,
            reverb: None,
        }
    }
}

const SYLLABLES: [&str; 24] = [
    "ka", "to", "mi", "re", "su", "na", "lo", "pe", "ri", "da", "no", "shi", "ta", "ku", "me", "ro", "sa", "ni", "ho",
    "ki", "mu", "ra", "te", "yo",
];

/// Deterministic pseudo-words, about 2.5 per second of speech.
pub fn random_text(seed: u64, index: usize, duration_s: f64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e47);
    rng.set_stream(index as u64);
    let words = ((duration_s * 2.5).round() as usize).max(1);
    (0..words)
        .map(|_| {
            let n = rng.gen_range(1..=3);
            (0..n).map(|_| *SYLLABLES.choose(&mut rng).expect("non-empty")).collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

struct Turn {
    speaker: usize,
    duration: f64,
    overlap: bool,
    frac: f64,
    pause: f64,
}

/// Lays out the turn sequence with overlapping transitions pulling the next
/// turn back by `q * frac` of the shorter utterance; at `q = 0` every turn
/// keeps its pause. No instant carries more than two speakers.
fn layout(turns: &[Turn], q: f64, margin: f64) -> Vec<(usize, f64, f64)> {
    let mut out: Vec<(usize, f64, f64)> = Vec::with_capacity(turns.len());
    let mut cursor = margin;
    for (i, turn) in turns.iter().enumerate() {
        let mut start = cursor;
        if let (true, Some(&(_, ps, pe))) = (turn.overlap && q > 0.0, out.last()) {
            let back = q * turn.frac * (pe - ps).min(turn.duration);
            start = pe - back;
            // Keep clear of everything before the previous utterance.
            let earlier = out[..i - 1].iter().map(|u| u.2).fold(0.0, f64::max);
            start = start.max(earlier);
            start = start.max(ps + 0.1 * (pe - ps));
        }
        out.push((turn.speaker, start, start + turn.duration));
        let end = out.iter().map(|u| u.2).fold(0.0, f64::max);
        cursor = end + turn.pause;
    }
    out
}

/// Draws a seating plan and turn sequence, then searches the overlap depth
/// by bisection so that the overlap ratio approaches the target.
pub fn generate_scene(t: &SceneTemplate) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(t.seed);
    let k = t.speakers.max(1);
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let speakers: Vec<SpeakerSpec> = (0..k)
        .map(|i| {
            let a = phase + std::f64::consts::TAU * i as f64 / k as f64 + rng.gen_range(-0.2..0.2);
            SpeakerSpec {
                position: [t.radius_m * a.cos(), t.radius_m * a.sin()],
            }
        })
        .collect();
    let devices: Vec<DeviceSpec> = (0..t.devices.max(1))
        .map(|m| {
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = 0.6 * t.radius_m * rng.gen::<f64>().sqrt();
            let (offset_s, drift_ppm) = if m == 0 {
                (0.0, 0.0)
            } else {
                (
                    if t.max_offset_s > 0.0 { rng.gen_range(-t.max_offset_s..t.max_offset_s) } else { 0.0 },
                    if t.max_drift_ppm > 0.0 { rng.gen_range(-t.max_drift_ppm..t.max_drift_ppm) } else { 0.0 },
                )
            };
            DeviceSpec {
                id: format!("dev{m}"),
                position: [r * a.cos(), r * a.sin()],
                offset_s,
                drift_ppm,
            }
        })
        .collect();

    // Enough turns to overfill the session; excess ones are cut below.
    let max_turns = (t.duration_s / t.utterance_s.0.max(0.5)).ceil() as usize + 2;
    let mut turns = Vec::with_capacity(max_turns);
    let mut prev: Option<usize> = None;
    for _ in 0..max_turns {
        let speaker = if k == 1 {
            0
        } else {
            let mut s = rng.gen_range(0..k - 1);
            if let Some(p) = prev {
                if s >= p {
                    s += 1;
                }
            }
            s
        };
        prev = Some(speaker);
        turns.push(Turn {
            speaker,
            duration: rng.gen_range(t.utterance_s.0..=t.utterance_s.1),
            overlap: k > 1 && rng.gen_bool(0.5),
            frac: rng.gen_range(0.5..1.0),
            pause: rng.gen_range(t.pause_s.0..=t.pause_s.1),
        });
    }
    let end = t.duration_s - t.margin_s;
    let plan = |q: f64| -> Vec<(usize, f64, f64)> {
        layout(&turns, q, t.margin_s).into_iter().filter(|u| u.2 <= end).collect()
    };
    let ratio = |q: f64| overlap_ratio(&plan(q).iter().map(|u| (u.1, u.2)).collect::<Vec<_>>());
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut best = (f64::INFINITY, 0.0);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let r = ratio(mid);
        if (r - t.target_overlap).abs() < best.0 {
            best = ((r - t.target_overlap).abs(), mid);
        }
        if r < t.target_overlap {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    for q in [0.0, 1.0] {
        if (ratio(q) - t.target_overlap).abs() < best.0 {
            best = ((ratio(q) - t.target_overlap).abs(), q);
        }
    }
    let utterances = plan(best.1)
        .into_iter()
        .map(|(speaker, start, stop)| UtterancePlan {
            speaker,
            start_s: start,
            duration_s: stop - start,
            text: None,
            source: None,
            allow_overlap: true,
        })
        .collect();
    SceneSpec {
        sample_rate: crate::audio::NOMINAL_SAMPLE_RATE,
        duration_s: t.duration_s,
        seed: t.seed,
        noise_db: t.noise_db,
        anchor: 0,
        speakers,
        devices,
        utterances,
        reverb: t.reverb,
    }
}
