//! Fixed-window segmentation and power-based speech activity detection.

use super::DiarizeError;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SegmentConfig {
    pub window_s: f64,
    pub shift_s: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            window_s: 1.5,
            shift_s: 0.75,
        }
    }
}

/// Shared timeslot axis over all aligned channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SegmentGrid {
    pub window: usize,
    pub shift: usize,
    pub slots: usize,
    pub sample_rate: u32,
}

impl SegmentGrid {
    pub fn new(len: usize, sample_rate: u32, config: SegmentConfig) -> Result<Self, DiarizeError> {
        let sr = f64::from(sample_rate);
        let window = (config.window_s * sr).round() as usize;
        let shift = (config.shift_s * sr).round() as usize;
        if window == 0 || shift == 0 || shift > window {
            return Err(DiarizeError::Config(format!(
                "segment window {}s / shift {}s",
                config.window_s, config.shift_s
            )));
        }
        if len < window {
            return Err(DiarizeError::SessionTooShort {
                seconds: len as f64 / sr,
                window_s: config.window_s,
            });
        }
        Ok(Self {
            window,
            shift,
            slots: (len - window) / shift + 1,
            sample_rate,
        })
    }

    pub fn range(&self, t: usize) -> std::ops::Range<usize> {
        let start = t * self.shift;
        start..start + self.window
    }

    pub fn window_s(&self) -> f64 {
        self.window as f64 / f64::from(self.sample_rate)
    }

    pub fn shift_s(&self) -> f64 {
        self.shift as f64 / f64::from(self.sample_rate)
    }
}

/// Splits equal-length aligned channels into the shared slot grid.
pub fn segment(
    aligned: &[Vec<f64>],
    sample_rate: u32,
    config: SegmentConfig,
) -> Result<SegmentGrid, DiarizeError> {
    let first = aligned.first().ok_or(DiarizeError::NoChannels)?;
    if aligned.iter().any(|c| c.len() != first.len()) {
        return Err(DiarizeError::Config("aligned channels differ in length".into()));
    }
    SegmentGrid::new(first.len(), sample_rate, config)
}

pub fn mean_power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Power in dB with a -120 dB floor so digital silence stays finite.
pub fn power_db(power: f64) -> f64 {
    10.0 * (power + 1e-12).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VadConfig {
    /// Percentile of the session's segment powers taken as the noise floor.
    pub floor_percentile: f64,
    pub margin_db: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            floor_percentile: 10.0,
            margin_db: 6.0,
        }
    }
}

/// Speech threshold adapted to one device's power distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VadThreshold {
    pub threshold_db: f64,
}

impl VadThreshold {
    pub fn from_powers(powers: &[f64], config: VadConfig) -> Self {
        let mut db: Vec<f64> = powers.iter().map(|&p| power_db(p)).collect();
        db.sort_by(f64::total_cmp);
        Self {
            threshold_db: percentile_sorted(&db, config.floor_percentile) + config.margin_db,
        }
    }

    pub fn is_speech(&self, power: f64) -> bool {
        power > 0.0 && power_db(power) > self.threshold_db
    }

    pub fn classify(&self, segment: &[f64]) -> bool {
        self.is_speech(mean_power(segment))
    }
}

/// Linear-interpolated percentile of an ascending slice.
pub fn percentile_sorted(sorted: &[f64], pct: f64) -> f64 {
    match sorted.len() {
        0 => f64::NEG_INFINITY,
        1 => sorted[0],
        n => {
            let pos = (pct / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn slot_counts() {
        let sr = 16000;
        let cfg = SegmentConfig::default();
        let grid = |secs: f64| SegmentGrid::new((secs * 16000.0) as usize, sr, cfg);
        assert_eq!(grid(60.0).unwrap().slots, 79);
        assert_eq!(grid(1.5).unwrap().slots, 1);
        assert!(matches!(grid(1.4), Err(DiarizeError::SessionTooShort { .. })));
    }

    #[test]
    fn slot_count_matches_window_enumeration() {
        let cfg = SegmentConfig::default();
        for len in [24_000usize, 35_999, 36_000, 100_000, 960_000] {
            let g = SegmentGrid::new(len, 16000, cfg).unwrap();
            let mut count = 0;
            while g.range(count).end <= len {
                count += 1;
            }
            assert_eq!(g.slots, count, "{len}");
        }
    }

    #[test]
    fn all_zero_segment_is_nonspeech() {
        let th = VadThreshold::from_powers(&[0.0, 0.0, 0.0], VadConfig::default());
        assert!(!th.classify(&[0.0; 100]));
    }

    #[test]
    fn threshold_rule_on_synthetic_distribution() {
        // Segment powers spread log-uniformly from -60 dB (noise floor) to -20 dB.
        let powers: Vec<f64> = (0..101)
            .map(|i| 10f64.powf((-60.0 + 40.0 * i as f64 / 100.0) / 10.0))
            .collect();
        let th = VadThreshold::from_powers(&powers, VadConfig::default());
        // 10th percentile is the 11th value, -56 dB, seen through the -120 dB floor.
        let floor_db = 10.0 * (10f64.powf(-5.6) + 1e-12).log10();
        assert!((th.threshold_db - (floor_db + 6.0)).abs() < 1e-9);

        let mut sorted = powers.clone();
        sorted.sort_by(f64::total_cmp);
        assert!(th.is_speech(percentile_sorted(&sorted, 95.0)));

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let sigma = 10f64.powf(-60.0 / 20.0);
        let floor_noise: Vec<f64> = (0..24_000)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal) * sigma)
            .collect();
        assert!(!th.classify(&floor_noise));
    }

    #[test]
    fn percentile_interpolates() {
        let v = [0.0, 10.0, 20.0, 30.0, 40.0];
        assert_eq!(percentile_sorted(&v, 10.0), 4.0);
        assert_eq!(percentile_sorted(&v, 100.0), 40.0);
        assert_eq!(percentile_sorted(&[5.0], 10.0), 5.0);
    }
}
