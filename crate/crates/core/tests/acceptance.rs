//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit when
//! any criterion fails. Run with `cargo test -p distmeet-core --test acceptance`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::SymmetricEigen;
use ndarray::Array3;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use distmeet::asr::{band_sir_db, MockManifest, MockParams};
use distmeet::audio::{istft, stft, stft_multichannel, Recording, StftConfig};
use distmeet::dedup::{reduce, similarity};
use distmeet::diarize::{
    close_row, diarize, upsample, ActivityMatrix, DiarizeConfig, EmbeddingSource, SpectralStatsEmbedder,
};
use distmeet::enhance::linalg::CMatrix;
use distmeet::enhance::{
    ban_gain, em_e_step, em_m_step, enhance_session, mvdr, CacgmmState, CovariancePair, EnhanceConfig, Guide,
    Observations,
};
use distmeet::evalscore::{score, ScoreMode};
use distmeet::pipeline::{recognizer_inputs, run, AsrBackend, PipelineConfig};
use distmeet::sim::{generate_scene, overlap_ratio, render, write_session, GroundTruth, SceneSpec, SceneTemplate};
use distmeet::sync::{synchronize, SyncConfig};
use distmeet::transcript::{AsrResult, Tokenization, TranscriptSet};

const FS: u32 = 16_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("sync exactness", sync_exactness),
        ("stft round trip", stft_round_trip),
        ("cacgmm unit suite", cacgmm_suite),
        ("mvdr algebra", mvdr_algebra),
        ("separation efficacy", separation_efficacy),
        ("overlap-aware diarization", overlap_aware_diarization),
        ("binary closing", binary_closing),
        ("dedup oracle", dedup_oracle),
        ("end-to-end with mock asr", end_to_end),
        ("ablation direction", ablation_direction),
        ("cer scorer", cer_scorer),
    ];
    let only = std::env::args().nth(1).filter(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, f) in criteria {
        if only.as_deref().is_some_and(|o| !name.contains(o)) {
            continue;
        }
        let start = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let verdict = if res.pass { "PASS" } else { "FAIL" };
        println!("{verdict} {name}: {} [{:.1}s]", res.detail, start.elapsed().as_secs_f64());
        if !res.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, k - 1);
            out.push(q);
        }
    }
    out
}

// ---------------------------------------------------------------- sync

/// Two co-located devices: the anchor with a clean clock, the other with
/// `offset_s` and `drift_ppm`.
fn sync_scene(seed: u64, duration_s: f64, offset_s: f64, drift_ppm: f64) -> SceneSpec {
    let mut scene = generate_scene(&SceneTemplate {
        speakers: 2,
        devices: 2,
        duration_s,
        seed,
        target_overlap: 0.1,
        ..Default::default()
    });
    let pos = scene.devices[0].position;
    scene.devices[1].position = pos;
    scene.devices[0].offset_s = 0.0;
    scene.devices[0].drift_ppm = 0.0;
    scene.devices[1].offset_s = offset_s;
    scene.devices[1].drift_ppm = drift_ppm;
    scene
}

fn with_snr(rec: &Recording, snr_db: f64, rng: &mut ChaCha8Rng) -> Recording {
    let p = rec.samples.iter().map(|v| v * v).sum::<f64>() / rec.samples.len() as f64;
    let sigma = (p / 10f64.powf(snr_db / 10.0)).sqrt();
    let noisy = rec
        .samples
        .iter()
        .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Recording::new(noisy, rec.sample_rate, rec.device_id.clone()).unwrap()
}

/// Only time spent inside `synchronize` counts against the runtime budget;
/// rendering the test scenes does not.
fn timed_sync(recs: &[Recording], spent: &mut Duration) -> Vec<i64> {
    let t = Instant::now();
    let res = synchronize(recs, &SyncConfig::default()).unwrap();
    *spent += t.elapsed();
    res.shifts
}

fn sync_exactness() -> Outcome {
    let mut spent = Duration::ZERO;
    let fs = FS as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut exact = 0;
    for i in 0..100 {
        let delta: i64 = rng.gen_range(-5 * FS as i64..=5 * FS as i64);
        let scene = sync_scene(1000 + i, 20.0, delta as f64 / fs, 0.0);
        let r = render(&scene, "s").unwrap();
        if timed_sync(&r.recordings, &mut spent)[1] == delta {
            exact += 1;
        }
    }
    let len = 60.0 * fs;
    let mut within = 0;
    let mut worst = 0f64;
    for i in 0..100 {
        let offset_s: f64 = rng.gen_range(-5.0..=5.0);
        let d = if i % 2 == 0 { 100e-6 } else { -100e-6 };
        let scene = sync_scene(2000 + i, 60.0, offset_s, d * 1e6);
        let r = render(&scene, "s").unwrap();
        let recs: Vec<Recording> = r.recordings.iter().map(|x| with_snr(x, 10.0, &mut rng)).collect();
        let shifts = timed_sync(&recs, &mut spent);
        // Anchor sample n sees scene time n / fs; the other device records it
        // at (n + offset fs)(1 + d). Truth is that lag at the middle of the
        // interval both devices cover.
        let lo = (-offset_s * fs).max(0.0);
        let hi = (len / (1.0 + d) - offset_s * fs).min(len);
        let mid = 0.5 * (lo + hi);
        let truth = offset_s * fs * (1.0 + d) + mid * d;
        let err = (shifts[1] as f64 - truth).abs();
        worst = worst.max(err);
        if err <= 160.0 {
            within += 1;
        }
    }
    outcome(
        exact == 100 && within >= 95 && spent <= Duration::from_secs(120),
        format!(
            "clean exact {exact}/100; 100 ppm + 10 dB within 160 samples {within}/100 (worst {worst:.1}); \
             synchronization runtime {:.1}s",
            spent.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- stft

fn stft_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cfg = StftConfig::new(1024, 256).unwrap();
    let mut worst = 0f64;
    for i in 0..50 {
        let len = rng.gen_range(1024..80_000);
        let x: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let rec = Recording::new(x.clone(), FS, format!("r{i}")).unwrap();
        let y = istft(&stft(&rec, cfg).unwrap()).unwrap().samples;
        if y.len() != x.len() {
            return outcome(false, format!("signal {i}: length {} became {}", x.len(), y.len()));
        }
        let num: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = x.iter().map(|a| a * a).sum();
        worst = worst.max((num / den).sqrt());
    }
    outcome(worst <= 1e-6, format!("worst relative error {worst:.2e} over 50 signals"))
}

// ---------------------------------------------------------------- cacgmm

fn cacgmm_suite() -> Outcome {
    let mut worst_norm = 0f64;
    let mut guide_violations = 0usize;
    let mut worst_herm = 0f64;
    let mut worst_trace = 0f64;
    let mut min_eig = f64::INFINITY;
    let mut worst_drop = 0f64;
    for seed in 0..20 {
        let scene = generate_scene(&SceneTemplate {
            speakers: 2,
            devices: 4,
            duration_s: 5.0,
            seed: 300 + seed,
            target_overlap: 0.3,
            utterance_s: (1.5, 2.5),
            pause_s: (0.3, 0.8),
            margin_s: 0.3,
            ..Default::default()
        });
        let r = render(&scene, "s").unwrap();
        let chans: Vec<Vec<f64>> = r.recordings.iter().map(|x| x.samples.clone()).collect();
        let spec = stft_multichannel(&chans, FS, StftConfig::default_for(FS)).unwrap();
        let activity = r.truth.activity(spec.frames(), 0.016, 0.0);
        let guide = Guide::from_activity(&activity);
        let obs = Observations::from_values(spec.values.view());
        let m = obs.channels;
        let mut state = CacgmmState::initial(obs.bins(), m, &guide);
        let mut prev_ll: Option<f64> = None;
        for _ in 0..10 {
            let (post, ll) = em_e_step(&obs, &state, &guide).unwrap();
            let (frames, bins, classes) = post.gamma.dim();
            for t in 0..frames {
                for f in 0..bins {
                    let s: f64 = (0..classes).map(|k| post.gamma[(t, f, k)]).sum();
                    worst_norm = worst_norm.max((s - 1.0).abs());
                    for k in 0..classes {
                        if !guide.is_active(t, k) && post.gamma[(t, f, k)] != 0.0 {
                            guide_violations += 1;
                        }
                    }
                }
            }
            if let Some(p) = prev_ll {
                worst_drop = worst_drop.max((p - ll) / p.abs().max(1e-300));
            }
            prev_ll = Some(ll);
            state = em_m_step(&obs, &post, &state).unwrap();
            for shapes in &state.shape {
                for b in shapes {
                    worst_herm = worst_herm.max((b - b.adjoint()).norm());
                    let tr: f64 = (0..m).map(|i| b[(i, i)].re).sum();
                    worst_trace = worst_trace.max((tr - m as f64).abs());
                    let eig = SymmetricEigen::new(b.clone());
                    min_eig = min_eig.min(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min));
                }
            }
        }
    }
    let pass = worst_norm <= 1e-6
        && guide_violations == 0
        && worst_herm <= 1e-9
        && worst_trace <= 1e-6
        && min_eig >= -1e-9
        && worst_drop <= 1e-6;
    outcome(
        pass,
        format!(
            "20 utterances x 10 iterations: |sum gamma - 1| <= {worst_norm:.1e}, guide violations {guide_violations}, \
             |B - B^H| <= {worst_herm:.1e}, min eigenvalue {min_eig:.2e}, |tr B - M| <= {worst_trace:.1e}, \
             largest relative log-likelihood drop {worst_drop:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- mvdr

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn random_psd(m: usize, rank: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let a = CMatrix::from_fn(m, rank, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    &a * a.adjoint()
}

fn pair(speech: CMatrix, noise: CMatrix) -> CovariancePair {
    CovariancePair {
        speech: vec![speech],
        noise: vec![noise],
        target: 0,
    }
}

fn mvdr_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut worst_scale = 0f64;
    for _ in 0..200 {
        let m = rng.gen_range(2..7);
        let rs = random_psd(m, 2, &mut rng);
        let rn = random_psd(m, m + 2, &mut rng);
        let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
        let reference = rng.gen_range(0..m);
        let w1 = mvdr(&pair(rs.clone(), rn.clone()), reference).unwrap();
        let w2 = mvdr(&pair(rs * c(scale, 0.0), rn), reference).unwrap();
        for (a, b) in w1[0].iter().zip(&w2[0]) {
            worst_scale = worst_scale.max((a - b).norm() / (1.0 + a.norm()));
        }
    }

    // R_n^{-1} R_s = [[2, 1], [1/2, 1]], trace 3.
    let rs = CMatrix::from_row_slice(2, 2, &[c(2.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(2.0, 0.0)]);
    let rn = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(2.0, 0.0)]);
    let mut hand_err = 0f64;
    for (reference, want) in [(0, [c(2.0 / 3.0, 0.0), c(1.0 / 6.0, 0.0)]), (1, [c(1.0 / 3.0, 0.0), c(1.0 / 3.0, 0.0)])] {
        let w = mvdr(&pair(rs.clone(), rn.clone()), reference).unwrap();
        for (a, b) in w[0].iter().zip(&want) {
            hand_err = hand_err.max((a - b).norm());
        }
    }
    // Complex off-diagonal with identity noise: [[2, i], [-i, 2]] / 4.
    let rs = CMatrix::from_row_slice(2, 2, &[c(2.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(2.0, 0.0)]);
    let w = mvdr(&pair(rs, CMatrix::identity(2, 2)), 0).unwrap();
    for (a, b) in w[0].iter().zip(&[c(0.5, 0.0), c(0.0, -0.25)]) {
        hand_err = hand_err.max((a - b).norm());
    }

    let mut min_gain = f64::INFINITY;
    let mut worst_iso = 0f64;
    for _ in 0..200 {
        let m = rng.gen_range(2..7);
        let w: Vec<Complex64> = (0..m).map(|_| c(rng.sample(StandardNormal), rng.sample(StandardNormal))).collect();
        min_gain = min_gain.min(ban_gain(&w, &random_psd(m, m, &mut rng)));
        let s2: f64 = rng.gen_range(0.01..10.0);
        let g = ban_gain(&w, &(CMatrix::identity(m, m) * c(s2, 0.0)));
        let norm = w.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let closed = 1.0 / ((m as f64).sqrt() * norm);
        worst_iso = worst_iso.max((g - closed).abs() / closed.max(1.0));
    }
    outcome(
        worst_scale <= 1e-10 && hand_err <= 1e-9 && min_gain > 0.0 && worst_iso <= 1e-8,
        format!(
            "scale invariance {worst_scale:.1e}; hand-computed 2x2 error {hand_err:.1e}; \
             min BAN gain {min_gain:.3e}; isotropic closed-form error {worst_iso:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- separation

fn energy_db_ratio(num: f64, den: f64) -> f64 {
    10.0 * (num / den).log10()
}

fn separation_efficacy() -> Outcome {
    let start = Instant::now();
    let cfg = StftConfig::default_for(FS);
    let mut gains = Vec::new();
    for seed in 0..20 {
        let scene = generate_scene(&SceneTemplate {
            speakers: 2,
            devices: 6,
            duration_s: 12.0,
            seed: 500 + seed,
            target_overlap: 0.3,
            ..Default::default()
        });
        let r = render(&scene, "s").unwrap();
        let chans: Vec<Vec<f64>> = r.recordings.iter().map(|x| x.samples.clone()).collect();
        let spec = stft_multichannel(&chans, FS, cfg).unwrap();
        let guide = r.truth.activity(spec.frames(), 0.016, 0.0);
        let images: Vec<Array3<Complex64>> = (0..2)
            .map(|k| {
                let ch: Vec<Vec<f64>> = r.images.iter().map(|d| d[k].clone()).collect();
                stft_multichannel(&ch, FS, cfg).unwrap().values
            })
            .collect();
        let utts = distmeet::diarize::extract_utterances(&guide, 10);
        for e in enhance_session(&spec, &guide, &utts, &EnhanceConfig::default()) {
            let e = e.unwrap();
            let u = e.utterance;
            let other = 1 - u.speaker;
            if !(u.start..u.end).any(|t| guide.rows[other][t]) {
                continue;
            }
            let en = |z: &ndarray::Array2<Complex64>| z.iter().map(|v| v.norm_sqr()).sum::<f64>();
            let out_sir = energy_db_ratio(en(&e.plan.process(&images[u.speaker])), en(&e.plan.process(&images[other])));
            let (a, b) = (u.start * cfg.shift, (u.end * cfg.shift).min(r.images[0][0].len()));
            let best_raw = (0..r.images.len())
                .map(|m| {
                    let s: f64 = r.images[m][u.speaker][a..b].iter().map(|v| v * v).sum();
                    let i: f64 = r.images[m][other][a..b].iter().map(|v| v * v).sum();
                    energy_db_ratio(s, i)
                })
                .fold(f64::NEG_INFINITY, f64::max);
            gains.push(out_sir - best_raw);
        }
    }
    let elapsed = start.elapsed();
    let n = gains.len();
    let med = median(&mut gains);
    outcome(
        n > 0 && med >= 3.0 && elapsed <= Duration::from_secs(600),
        format!(
            "median SIR gain {med:.2} dB over {n} overlapped utterances in 20 scenes; runtime {:.0}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- diarization

fn matched_f1(truth: &ActivityMatrix, hyp: &ActivityMatrix, k: usize) -> f64 {
    let t = truth.columns().min(hyp.columns());
    let count = |rows: &[Vec<bool>]| -> usize { rows[..k].iter().map(|r| r[..t].iter().filter(|&&v| v).count()).sum() };
    let (nt, nh) = (count(&truth.rows), count(&hyp.rows));
    let tp = permutations(k)
        .into_iter()
        .map(|p| {
            (0..k)
                .map(|i| (0..t).filter(|&x| truth.rows[i][x] && hyp.rows[p[i]][x]).count())
                .sum::<usize>()
        })
        .max()
        .unwrap_or(0);
    2.0 * tp as f64 / (nt + nh).max(1) as f64
}

fn overlap_aware_diarization() -> Outcome {
    let k = 4;
    let mut f1s = Vec::new();
    let mut overlapped_slots = 0;
    let mut ratios = Vec::new();
    for seed in 0..5 {
        let scene = generate_scene(&SceneTemplate {
            speakers: k,
            devices: 8,
            duration_s: 90.0,
            seed,
            target_overlap: 0.2,
            utterance_s: (6.0, 12.0),
            ..Default::default()
        });
        let r = render(&scene, "s").unwrap();
        ratios.push(r.truth.overlap_ratio());
        let aligned: Vec<Vec<f64>> = r.recordings.iter().map(|x| x.samples.clone()).collect();
        let emb = SpectralStatsEmbedder::new(FS);
        let res = diarize(&aligned, FS, &DiarizeConfig::new(k), EmbeddingSource::Extractor(&emb)).unwrap();
        let frames = StftConfig::default_for(FS).frame_count(aligned[0].len());
        let hyp = upsample(&res.activity, &res.grid, 0.016, frames);
        let truth = r.truth.activity(frames, 0.016, 0.0);
        f1s.push(matched_f1(&truth, &hyp, k));
        // Slots where the truth has two talkers at the slot center and the
        // hypothesis marks at least two.
        for t in 0..res.activity.columns() {
            let center = res.grid.range(t);
            let mid = 0.5 * (center.start + center.end) as f64 / FS as f64;
            let talking = r.truth.utterances.iter().filter(|u| u.start_s <= mid && mid < u.end_s).count();
            let marked = (0..k).filter(|&s| res.activity.rows[s][t]).count();
            if talking >= 2 && marked >= 2 {
                overlapped_slots += 1;
            }
        }
    }
    let min = f1s.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = f1s.iter().sum::<f64>() / f1s.len() as f64;
    outcome(
        min >= 0.85 && overlapped_slots > 0,
        format!(
            "F1 per scene {:?} (min {min:.3}, mean {mean:.3}); overlap ratios {:?}; correctly overlapped slots {overlapped_slots}",
            f1s.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>(),
            ratios.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>()
        ),
    )
}

// ---------------------------------------------------------------- closing

fn closed_oracle(row: &[bool]) -> Vec<bool> {
    let mut out = row.to_vec();
    let n = row.len();
    let mut i = 0;
    while i < n {
        if row[i] {
            i += 1;
            continue;
        }
        let j = (i..n).find(|&x| row[x]).unwrap_or(n);
        let interior = i > 0 && j < n;
        if interior && j - i <= 2 {
            out[i..j].fill(true);
        }
        i = j;
    }
    out
}

fn binary_closing() -> Outcome {
    let mut checked = 0usize;
    let mut mismatches = 0usize;
    let mut cleared = 0usize;
    for len in 0..=12usize {
        for bits in 0u32..(1 << len) {
            let row: Vec<bool> = (0..len).map(|i| bits >> i & 1 == 1).collect();
            let got = close_row(&row, 1);
            checked += 1;
            if got != closed_oracle(&row) {
                mismatches += 1;
            }
            if row.iter().zip(&got).any(|(&a, &b)| a && !b) {
                cleared += 1;
            }
        }
    }
    outcome(
        mismatches == 0 && cleared == 0,
        format!("{checked} rows up to length 12: {mismatches} mismatches, {cleared} with a cleared 1"),
    )
}

// ---------------------------------------------------------------- dedup

fn levenshtein_oracle(a: &[&str], b: &[&str]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

fn similarity_oracle(a: &[&str], b: &[&str]) -> f64 {
    (a.len().max(b.len()) as f64 - levenshtein_oracle(a, b) as f64) / a.len().min(b.len()) as f64
}

fn dedup_brute_force(results: &[AsrResult], tau: f64) -> Vec<AsrResult> {
    let n = results.len();
    let words: Vec<Vec<&str>> = results.iter().map(|r| r.text.split_whitespace().collect()).collect();
    let mut reach = vec![vec![false; n]; n];
    for i in 0..n {
        reach[i][i] = true;
        for j in 0..n {
            let (a, b) = (&results[i], &results[j]);
            let overlap = a.start_s.max(b.start_s) < a.end_s.min(b.end_s);
            if i != j
                && overlap
                && a.speaker != b.speaker
                && !words[i].is_empty()
                && !words[j].is_empty()
                && similarity_oracle(&words[i], &words[j]) > tau
            {
                reach[i][j] = true;
            }
        }
    }
    for m in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][m] && reach[m][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    let mut keep = vec![false; n];
    for i in 0..n {
        let members: Vec<usize> = (0..n).filter(|&j| reach[i][j]).collect();
        let mut totals: BTreeMap<usize, usize> = BTreeMap::new();
        for &j in &members {
            *totals.entry(results[j].speaker).or_default() += words[j].len();
        }
        let best = totals.values().copied().max().unwrap_or(0);
        let winner = totals.iter().find(|(_, &w)| w == best).map(|(&k, _)| k);
        keep[i] = Some(results[i].speaker) == winner;
    }
    let mut out: Vec<AsrResult> = (0..n).filter(|&i| keep[i]).map(|i| results[i].clone()).collect();
    out.sort_by(|a, b| format!("{a:?}").cmp(&format!("{b:?}")));
    out
}

fn dedup_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let vocab = ["a", "b", "c", "d"];
    let mut mismatches = 0;
    let mut removed = 0;
    for _ in 0..1000 {
        let u = rng.gen_range(0..=8);
        let tau = [0.0, 0.25, 0.5, 0.75, 1.0][rng.gen_range(0..5)];
        let results: Vec<AsrResult> = (0..u)
            .map(|_| {
                let start = rng.gen_range(0..8) as f64 * 0.5;
                let words: Vec<&str> = (0..rng.gen_range(1..5)).map(|_| vocab[rng.gen_range(0..vocab.len())]).collect();
                AsrResult {
                    speaker: rng.gen_range(0..3),
                    start_s: start,
                    end_s: start + rng.gen_range(1..5) as f64 * 0.5,
                    text: words.join(" "),
                    confidence: None,
                }
            })
            .collect();
        let mut got = reduce(&results, tau, Tokenization::Words);
        got.sort_by(|a, b| format!("{a:?}").cmp(&format!("{b:?}")));
        let want = dedup_brute_force(&results, tau);
        removed += results.len() - want.len();
        if got != want {
            mismatches += 1;
        }
    }
    let abcd = ["a", "b", "c", "d"];
    let spots = [
        (similarity(&abcd, &abcd).unwrap(), similarity_oracle(&abcd, &abcd), 1.0),
        (similarity(&abcd, &["b", "c"]).unwrap(), similarity_oracle(&abcd, &["b", "c"]), 1.0),
    ];
    let spots_ok = spots.iter().all(|&(got, oracle, want)| got == oracle && got == want);
    outcome(
        mismatches == 0 && spots_ok && removed > 0,
        format!(
            "1000 instances: {mismatches} mismatches ({removed} results removed in total); \
             similarity spot values {:?}",
            spots.iter().map(|s| s.0).collect::<Vec<_>>()
        ),
    )
}

// ---------------------------------------------------------------- end to end

struct Session {
    files: distmeet::sim::SessionFiles,
    truth: GroundTruth,
}

fn e2e_template(seed: u64) -> SceneTemplate {
    SceneTemplate {
        speakers: 2,
        devices: 4,
        duration_s: 20.0,
        seed,
        target_overlap: 0.2,
        utterance_s: (3.0, 5.0),
        max_offset_s: 0.3,
        ..Default::default()
    }
}

/// The first five seeds whose generated scene actually contains overlap.
fn overlapped_seeds() -> Vec<u64> {
    (700..)
        .filter(|&s| {
            let plan = generate_scene(&e2e_template(s)).utterances;
            overlap_ratio(&plan.iter().map(|u| (u.start_s, u.start_s + u.duration_s)).collect::<Vec<_>>()) > 0.0
        })
        .take(5)
        .collect()
}

fn e2e_session(dir: &Path, seed: u64) -> Session {
    let r = render(&generate_scene(&e2e_template(seed)), &format!("accept{seed}")).unwrap();
    let files = write_session(&r, dir, MockParams::default()).unwrap();
    Session { files, truth: r.truth }
}

fn occurrences(hay: &str, needle: &str) -> usize {
    let hay = format!(" {hay} ");
    let needle = format!(" {needle} ");
    let mut n = 0;
    let mut from = 0;
    while let Some(i) = hay[from..].find(&needle) {
        n += 1;
        from += i + 1;
    }
    n
}

/// Planted utterances recovered exactly once under the best speaker
/// permutation, and the number of surplus copies.
fn recovery(hyp: &TranscriptSet, truth: &GroundTruth) -> (usize, usize) {
    let k = truth.speakers;
    let hyp_k = hyp.results.iter().map(|r| r.speaker + 1).max().unwrap_or(0).max(k);
    let mut duplicates = 0;
    let mut hits: Vec<Option<(usize, usize)>> = Vec::new();
    for u in &truth.utterances {
        let found: Vec<usize> = hyp
            .results
            .iter()
            .flat_map(|r| std::iter::repeat(r.speaker).take(occurrences(&r.text, &u.text)))
            .collect();
        duplicates += found.len().saturating_sub(1);
        hits.push((found.len() == 1).then(|| (found[0], u.speaker)));
    }
    let best = permutations(hyp_k)
        .into_iter()
        .map(|p| hits.iter().flatten().filter(|&&(h, t)| p[h] == t).count())
        .max()
        .unwrap_or(0);
    (best, duplicates)
}

fn mock_config(files: &distmeet::sim::SessionFiles, out: &Path, mock: &Path) -> PipelineConfig {
    PipelineConfig::new(&files.manifest, out, 2, AsrBackend::Mock { manifest: mock.to_path_buf() })
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut correct = 0;
    let mut total = 0;
    let mut dup_with = 0;
    let mut dup_without = 0;
    let mut per_scene = Vec::new();
    for seed in overlapped_seeds() {
        let s = e2e_session(&dir.path().join(format!("in{seed}")), seed);
        let cfg = mock_config(&s.files, &dir.path().join(format!("out{seed}")), &s.files.mock);
        let hyp = run(&cfg).unwrap();
        let (ok, dups) = recovery(&hyp, &s.truth);
        let raw = run(&PipelineConfig { dedup: false, ..cfg }).unwrap();
        let (_, raw_dups) = recovery(&raw, &s.truth);
        correct += ok;
        total += s.truth.utterances.len();
        dup_with += dups;
        dup_without += raw_dups;
        per_scene.push(format!("{ok}/{} dup {dups}->{raw_dups}", s.truth.utterances.len()));
    }
    let rate = correct as f64 / total as f64;
    outcome(
        rate >= 0.9 && dup_without > dup_with,
        format!(
            "{correct}/{total} planted utterances exactly once with the right speaker ({:.1}%); \
             duplicates {dup_with} with dedup, {dup_without} without; per scene [{}]",
            100.0 * rate,
            per_scene.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- ablation

/// Band SIR of every planted utterance heard in a recognizer input while
/// another speaker talks, keyed by (input, planted utterance).
fn overlapped_input_sirs(cfg: &PipelineConfig, truth: &GroundTruth) -> BTreeMap<(usize, usize), f64> {
    let mut out = BTreeMap::new();
    for (i, a) in recognizer_inputs(cfg).unwrap().iter().enumerate() {
        let fs = a.sample_rate as f64;
        for (j, u) in truth.utterances.iter().enumerate() {
            let (lo, hi) = (u.start_s.max(a.meta.start_s), u.end_s.min(a.meta.end_s));
            if hi - lo < 0.5 * (u.end_s - u.start_s) {
                continue;
            }
            let overlapped = truth
                .utterances
                .iter()
                .any(|v| v.speaker != u.speaker && v.start_s < hi && lo < v.end_s);
            if !overlapped {
                continue;
            }
            let i0 = (((lo - a.meta.start_s) * fs) as usize).min(a.samples.len());
            let i1 = (((hi - a.meta.start_s) * fs) as usize).min(a.samples.len());
            out.insert((i, j), band_sir_db(&a.samples[i0..i1], a.sample_rate, &truth.bands, u.speaker));
        }
    }
    out
}

fn ablation_direction() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (mut edits_full, mut edits_raw, mut ref_len) = (0usize, 0usize, 0usize);
    let mut sir_pairs = Vec::new();
    for seed in overlapped_seeds() {
        let s = e2e_session(&dir.path().join(format!("in{seed}")), seed);
        let corrupt = dir.path().join(format!("in{seed}/mock-corrupt.json"));
        let manifest = MockManifest::from_truth(&s.truth, MockParams { corrupt: true, ..Default::default() });
        std::fs::write(&corrupt, manifest.to_json()).unwrap();
        let full = mock_config(&s.files, &dir.path().join(format!("out{seed}")), &corrupt);
        let raw = PipelineConfig { enhance: false, ..full.clone() };
        let reference = TranscriptSet::read(&s.files.reference).unwrap();
        let a = score(&run(&full).unwrap(), &reference, ScoreMode::Attribution).unwrap();
        let b = score(&run(&raw).unwrap(), &reference, ScoreMode::Attribution).unwrap();
        edits_full += a.substitutions + a.deletions + a.insertions;
        edits_raw += b.substitutions + b.deletions + b.insertions;
        ref_len += a.reference_length;
        let enhanced = overlapped_input_sirs(&full, &s.truth);
        let plain = overlapped_input_sirs(&raw, &s.truth);
        for (key, sir) in &enhanced {
            if let Some(p) = plain.get(key) {
                sir_pairs.push((*sir, *p));
            }
        }
    }
    let cer_full = edits_full as f64 / ref_len as f64;
    let cer_raw = edits_raw as f64 / ref_len as f64;
    let n = sir_pairs.len();
    let mean_enh = sir_pairs.iter().map(|p| p.0).sum::<f64>() / n.max(1) as f64;
    let mean_raw = sir_pairs.iter().map(|p| p.1).sum::<f64>() / n.max(1) as f64;
    outcome(
        n > 0 && mean_raw < mean_enh && cer_raw > cer_full,
        format!(
            "overlapped recognizer inputs ({n}): mean band SIR {mean_enh:.1} dB enhanced vs {mean_raw:.1} dB without; \
             CER {:.2}% full vs {:.2}% without enhancement",
            100.0 * cer_full,
            100.0 * cer_raw
        ),
    )
}

// ---------------------------------------------------------------- cer

fn one(text: &str) -> TranscriptSet {
    let results = if text.is_empty() {
        vec![]
    } else {
        vec![AsrResult {
            speaker: 0,
            start_s: 0.0,
            end_s: 1.0,
            text: text.into(),
            confidence: None,
        }]
    };
    TranscriptSet::new("s", results, "")
}

fn cer_scorer() -> Outcome {
    let cases = [("abed", "abcd", 0.25), ("", "abcd", 1.0), ("abcd", "abcd", 0.0)];
    let got: Vec<f64> = cases
        .iter()
        .map(|(h, r, _)| score(&one(h), &one(r), ScoreMode::Attribution).unwrap().cer)
        .collect();
    let pooled: Vec<f64> = cases
        .iter()
        .map(|(h, r, _)| score(&one(h), &one(r), ScoreMode::Pooled).unwrap().cer)
        .collect();
    let pass = cases
        .iter()
        .zip(got.iter().zip(&pooled))
        .all(|(c, (a, p))| (a - c.2).abs() < 1e-12 && (p - c.2).abs() < 1e-12);
    outcome(pass, format!("abcd/abed {}, empty {}, identical {}", got[0], got[1], got[2]))
}
