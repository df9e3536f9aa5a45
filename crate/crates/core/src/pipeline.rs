//! Stage orchestration: sync, diarize, enhance, asr, dedup.
//!
//! Every stage reads its upstream artifacts from disk and writes its own
//! into `<out>/cache/<stage>-<key>`, where the key chains a hash of the
//! stage's settings onto the upstream key. A full run is the sequence of
//! single-stage runs, reusing any stage directory that already exists.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::asr::{
    transcribe_batch, AsrOutcome, CommandRecognizer, HttpRecognizer, MockManifest, MockRecognizer, Recognizer,
    UtteranceAudio, UtteranceMeta,
};
use crate::audio::{read_wav, stft_multichannel, write_wav_samples, Recording, StftConfig};
use crate::dedup::{reduce_set, DEFAULT_TAU};
use crate::diarize::{
    diarize, extract_utterances, read_rttm, upsample, write_rttm, ActivityMatrix, DiarizeConfig, EmbeddingSource,
    SpectralStatsEmbedder, Utterance,
};
use crate::enhance::{enhance_session, passthrough_utterance, EnhanceConfig, WpeConfig};
use crate::sync::{align_with_shifts, synchronize, SyncConfig, SyncResult};
use crate::tensorfile::Tensor;
use crate::transcript::{AsrResult, Tokenization, TranscriptSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Sync,
    Diarize,
    Enhance,
    Asr,
    Dedup,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Sync, Stage::Diarize, Stage::Enhance, Stage::Asr, Stage::Dedup];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Sync => "sync",
            Stage::Diarize => "diarize",
            Stage::Enhance => "enhance",
            Stage::Asr => "asr",
            Stage::Dedup => "dedup",
        }
    }

    pub fn upstream(self) -> Option<Stage> {
        let i = Self::ALL.iter().position(|&s| s == self).expect("listed");
        i.checked_sub(1).map(|j| Self::ALL[j])
    }

    fn valid_names() -> String {
        Self::ALL.iter().map(|s| s.name()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|st| st.name() == s)
            .ok_or_else(|| PipelineError::UnknownStage {
                name: s.to_string(),
                valid: Self::valid_names(),
            })
    }
}

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unknown stage {name:?}; valid stages are: {valid}")]
    UnknownStage { name: String, valid: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("cannot read recording of device {device:?} at {path}: {source}")]
    Input {
        device: String,
        path: PathBuf,
        #[source]
        source: BoxError,
    },
    #[error("stage {stage} needs the {upstream} artifact at {path}; run {upstream} first")]
    MissingArtifact { stage: Stage, upstream: Stage, path: PathBuf },
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: BoxError,
    },
}

fn stage_err(stage: Stage) -> impl Fn(BoxError) -> PipelineError {
    move |source| PipelineError::Stage { stage, source }
}

/// One device of the input manifest; `path` is relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceEntry {
    pub id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputManifest {
    pub session_id: String,
    pub devices: Vec<DeviceEntry>,
}

impl InputManifest {
    /// Reads the manifest and resolves device paths against its directory.
    pub fn read(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let bad = |reason: String| PipelineError::Manifest {
            path: path.to_path_buf(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
        let mut m: Self = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if m.devices.is_empty() {
            return Err(bad("no devices listed".into()));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        for d in &mut m.devices {
            if d.path.is_relative() {
                d.path = base.join(&d.path);
            }
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AsrBackend {
    /// Shell command; `{wav}` is replaced by the utterance file path.
    Command { template: String, timeout_s: f64 },
    /// HTTP endpoint receiving `audio/wav` and answering `{"text": ...}`.
    Http { url: String, timeout_s: f64 },
    /// Ground-truth driven mock recognizer.
    Mock { manifest: PathBuf },
}

impl AsrBackend {
    pub fn build(&self) -> Result<Box<dyn Recognizer>, PipelineError> {
        let timeout = |s: f64| Duration::from_secs_f64(s.max(0.001));
        Ok(match self {
            AsrBackend::Command { template, timeout_s } => {
                Box::new(CommandRecognizer::new(template.clone(), timeout(*timeout_s)))
            }
            AsrBackend::Http { url, timeout_s } => Box::new(HttpRecognizer::new(url.clone(), timeout(*timeout_s))),
            AsrBackend::Mock { manifest } => Box::new(MockRecognizer::new(
                MockManifest::read(manifest).map_err(|e| PipelineError::Config(e.to_string()))?,
            )),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub speakers: usize,
    pub lambda: f64,
    pub tau: f64,
    pub anchor: usize,
    pub max_shift_s: f64,
    pub sync_band_hz: Option<(f64, f64)>,
    pub frame_ms: f64,
    pub shift_ms: f64,
    pub gss_iterations: usize,
    pub context_s: f64,
    /// `None` disables dereverberation.
    pub wpe: Option<WpeConfig>,
    pub reference_mic: Option<usize>,
    pub min_utterance_frames: usize,
    pub tokenization: Tokenization,
    pub asr: AsrBackend,
    pub parallelism: usize,
    /// Segment embeddings, `(devices, slots, dim)` tensor file.
    pub embeddings: Option<PathBuf>,
    /// Use this RTTM instead of running diarization.
    pub oracle_rttm: Option<PathBuf>,
    pub closing: bool,
    pub enhance: bool,
    pub dedup: bool,
    /// Per-utterance enhanced WAVs and posterior tensors.
    pub debug_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn new(manifest: impl Into<PathBuf>, out_dir: impl Into<PathBuf>, speakers: usize, asr: AsrBackend) -> Self {
        let sync = SyncConfig::default();
        let diar = DiarizeConfig::new(speakers);
        let enh = EnhanceConfig::default();
        Self {
            manifest: manifest.into(),
            out_dir: out_dir.into(),
            speakers,
            lambda: diar.lambda,
            tau: DEFAULT_TAU,
            anchor: sync.anchor,
            max_shift_s: sync.max_shift_s,
            sync_band_hz: sync.band_hz,
            frame_ms: 64.0,
            shift_ms: 16.0,
            gss_iterations: enh.iterations,
            context_s: enh.context_s,
            wpe: enh.wpe,
            reference_mic: None,
            min_utterance_frames: diar.min_utterance_frames,
            tokenization: Tokenization::default(),
            asr,
            parallelism: 4,
            embeddings: None,
            oracle_rttm: None,
            closing: true,
            enhance: true,
            dedup: true,
            debug_dir: None,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.speakers == 0 {
            return bad("speakers must be at least 1".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be finite and >= 0", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau {} must lie in [0, 1]", self.tau));
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        if !(self.frame_ms > 0.0 && self.shift_ms > 0.0 && self.shift_ms <= self.frame_ms) {
            return bad(format!("bad STFT geometry {} / {} ms", self.frame_ms, self.shift_ms));
        }
        if !(self.context_s >= 0.0) {
            return bad(format!("context {} s must be >= 0", self.context_s));
        }
        Ok(())
    }

    fn cache_dir(&self) -> PathBuf {
        self.out_dir.join("cache")
    }

    fn enhance_config(&self) -> EnhanceConfig {
        EnhanceConfig {
            wpe: self.wpe,
            iterations: self.gss_iterations,
            context_s: self.context_s,
            reference: self.reference_mic,
        }
    }
}

pub const TRANSCRIPT_FILE: &str = "transcript.json";
pub const RTTM_FILE: &str = "diarization.rttm";

fn digest(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

fn settings<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("settings serialize")
}

fn file_bytes(path: &Path) -> Result<Vec<u8>, PipelineError> {
    std::fs::read(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

/// Cache keys of every stage, derived from the configuration and the input
/// file contents only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageKeys {
    keys: [String; 5],
}

impl StageKeys {
    pub fn compute(config: &PipelineConfig, manifest: &InputManifest) -> Result<Self, PipelineError> {
        let mut sync_parts = vec![
            b"sync".to_vec(),
            manifest.session_id.as_bytes().to_vec(),
            settings(&(config.anchor, config.max_shift_s, config.sync_band_hz)),
        ];
        for d in &manifest.devices {
            sync_parts.push(d.id.as_bytes().to_vec());
            sync_parts.push(std::fs::read(&d.path).map_err(|e| PipelineError::Input {
                device: d.id.clone(),
                path: d.path.clone(),
                source: Box::new(e),
            })?);
        }
        let sync = digest(&sync_parts.iter().map(Vec::as_slice).collect::<Vec<_>>());

        let optional = |p: &Option<PathBuf>| -> Result<Vec<u8>, PipelineError> {
            p.as_deref().map(file_bytes).transpose().map(Option::unwrap_or_default)
        };
        let diarize = digest(&[
            sync.as_bytes(),
            b"diarize",
            &settings(&(
                config.speakers,
                config.lambda,
                config.closing,
                config.frame_ms,
                config.shift_ms,
                config.min_utterance_frames,
            )),
            &optional(&config.embeddings)?,
            &optional(&config.oracle_rttm)?,
        ]);
        let enhance = digest(&[
            diarize.as_bytes(),
            b"enhance",
            &settings(&(config.enhance, config.enhance_config(), config.debug_dir.is_some())),
        ]);
        let recognizer = match &config.asr {
            AsrBackend::Mock { manifest } => format!("mock:{}", digest(&[&file_bytes(manifest)?])),
            other => serde_json::to_string(other).expect("backend serializes"),
        };
        let asr = digest(&[
            enhance.as_bytes(),
            b"asr",
            recognizer.as_bytes(),
            &settings(&config.tokenization),
        ]);
        let dedup = digest(&[
            asr.as_bytes(),
            b"dedup",
            &settings(&(config.dedup, config.tau, config.tokenization)),
        ]);
        Ok(Self {
            keys: [sync, diarize, enhance, asr, dedup],
        })
    }

    pub fn key(&self, stage: Stage) -> &str {
        &self.keys[stage as usize]
    }

    pub fn dir(&self, config: &PipelineConfig, stage: Stage) -> PathBuf {
        config
            .cache_dir()
            .join(format!("{}-{}", stage.name(), &self.key(stage)[..16]))
    }

    /// Digest identifying the full configuration and inputs.
    pub fn config_digest(&self) -> &str {
        self.key(Stage::Dedup)
    }
}

/// Synchronization outcome as stored on disk; the aligned audio is rebuilt
/// from the input files and the stored shifts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncArtifact {
    pub session_id: String,
    pub devices: Vec<String>,
    pub result: SyncResult,
}

/// Frame-level guide plus the utterances cut from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiarizeArtifact {
    pub frame_shift_s: f64,
    /// Anchor-timeline time of frame 0.
    pub offset_s: f64,
    /// `speakers + 1` rows of '0'/'1', the last one being the noise class.
    pub rows: Vec<String>,
    pub utterances: Vec<Utterance>,
}

impl DiarizeArtifact {
    pub fn activity(&self) -> ActivityMatrix {
        ActivityMatrix {
            rows: self.rows.iter().map(|r| r.bytes().map(|b| b == b'1').collect()).collect(),
            slot_duration_s: self.frame_shift_s,
        }
    }

    fn from_activity(y: &ActivityMatrix, offset_s: f64, min_frames: usize) -> Self {
        Self {
            frame_shift_s: y.slot_duration_s,
            offset_s,
            rows: y
                .rows
                .iter()
                .map(|r| r.iter().map(|&v| if v { '1' } else { '0' }).collect())
                .collect(),
            utterances: extract_utterances(y, min_frames),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancedEntry {
    pub meta: UtteranceMeta,
    pub utterance: Utterance,
    /// Audio tensor file inside the stage directory.
    pub file: String,
    pub reference: Option<usize>,
    /// False when the utterance fell back to the unprocessed channel.
    pub enhanced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhanceArtifact {
    pub sample_rate: u32,
    pub entries: Vec<EnhancedEntry>,
}

const SYNC_FILE: &str = "sync.json";
const ACTIVITY_FILE: &str = "activity.json";
const ENHANCE_FILE: &str = "utterances.json";
const OUTCOMES_FILE: &str = "outcomes.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BoxError> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, BoxError> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn read_recordings(manifest: &InputManifest) -> Result<Vec<Recording>, PipelineError> {
    manifest
        .devices
        .iter()
        .map(|d| {
            let mut r = read_wav(&d.path).map_err(|e| PipelineError::Input {
                device: d.id.clone(),
                path: d.path.clone(),
                source: Box::new(e),
            })?;
            r.device_id = d.id.clone();
            Ok(r)
        })
        .collect()
}

fn stft_config(config: &PipelineConfig, sample_rate: u32) -> Result<StftConfig, BoxError> {
    Ok(StftConfig::from_ms(config.frame_ms, config.shift_ms, sample_rate)?)
}

struct Context<'a> {
    config: &'a PipelineConfig,
    manifest: InputManifest,
    keys: StageKeys,
}

impl Context<'_> {
    fn upstream_dir(&self, stage: Stage) -> Result<Option<PathBuf>, PipelineError> {
        let Some(up) = stage.upstream() else { return Ok(None) };
        let dir = self.keys.dir(self.config, up);
        if !dir.is_dir() {
            return Err(PipelineError::MissingArtifact {
                stage,
                upstream: up,
                path: dir,
            });
        }
        Ok(Some(dir))
    }

    /// Recordings cropped to the common interval found by the sync stage.
    fn aligned(&self, sync_dir: &Path) -> Result<SyncResult, BoxError> {
        let art: SyncArtifact = read_json(&sync_dir.join(SYNC_FILE))?;
        let recordings = read_recordings(&self.manifest)?;
        let mut aligned = align_with_shifts(&recordings, art.result.anchor, &art.result.shifts)?;
        aligned.estimates = art.result.estimates;
        Ok(aligned)
    }

    fn execute(&self, stage: Stage, up: Option<&Path>, dir: &Path) -> Result<(), BoxError> {
        match stage {
            Stage::Sync => self.run_sync(dir),
            Stage::Diarize => self.run_diarize(up.expect("has upstream"), dir),
            Stage::Enhance => self.run_enhance(up.expect("has upstream"), dir),
            Stage::Asr => self.run_asr(up.expect("has upstream"), dir),
            Stage::Dedup => self.run_dedup(up.expect("has upstream"), dir),
        }
    }

    fn run_sync(&self, dir: &Path) -> Result<(), BoxError> {
        let recordings = read_recordings(&self.manifest)?;
        let cfg = SyncConfig {
            anchor: self.config.anchor,
            max_shift_s: self.config.max_shift_s,
            band_hz: self.config.sync_band_hz,
        };
        let result = synchronize(&recordings, &cfg)?;
        tracing::info!(shifts = ?result.shifts, n_begin = result.n_begin, n_end = result.n_end, "synchronized");
        write_json(
            &dir.join(SYNC_FILE),
            &SyncArtifact {
                session_id: self.manifest.session_id.clone(),
                devices: self.manifest.devices.iter().map(|d| d.id.clone()).collect(),
                result,
            },
        )
    }

    fn run_diarize(&self, up: &Path, dir: &Path) -> Result<(), BoxError> {
        let sync = self.aligned(up)?;
        let fs = sync.sample_rate;
        let stft = stft_config(self.config, fs)?;
        let frames = stft.frame_count(sync.aligned_len());
        let shift_s = stft.shift as f64 / f64::from(fs);
        let offset_s = sync.offset_s();
        let activity = if let Some(path) = &self.config.oracle_rttm {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            read_rttm(&text, self.config.speakers, frames, shift_s, offset_s)?
        } else {
            let mut cfg = DiarizeConfig::new(self.config.speakers);
            cfg.lambda = self.config.lambda;
            cfg.closing = self.config.closing;
            let table = match &self.config.embeddings {
                Some(p) => Some(Tensor::read(p)?.to_embeddings()?),
                None => None,
            };
            let embedder = SpectralStatsEmbedder::new(fs);
            let source = match &table {
                Some(t) => EmbeddingSource::Precomputed(t),
                None => EmbeddingSource::Extractor(&embedder),
            };
            let res = diarize(&sync.aligned, fs, &cfg, source)?;
            tracing::info!(
                segments = res.labels.len(),
                dropped = res.dropped.len(),
                overlapped_slots = res.activity.overlapped_columns(),
                "diarized"
            );
            upsample(&res.activity, &res.grid, shift_s, frames)
        };
        let art = DiarizeArtifact::from_activity(&activity, offset_s, self.config.min_utterance_frames);
        write_json(&dir.join(ACTIVITY_FILE), &art)?;
        std::fs::write(
            dir.join(RTTM_FILE),
            write_rttm(&activity, &self.manifest.session_id, offset_s),
        )?;
        Ok(())
    }

    fn run_enhance(&self, up: &Path, dir: &Path) -> Result<(), BoxError> {
        let diar: DiarizeArtifact = read_json(&up.join(ACTIVITY_FILE))?;
        let sync_dir = self.keys.dir(self.config, Stage::Sync);
        let sync = self.aligned(&sync_dir)?;
        let fs = sync.sample_rate;
        let stft = stft_config(self.config, fs)?;
        let guide = diar.activity();
        let utts = &diar.utterances;
        let meta = |u: &Utterance| UtteranceMeta {
            speaker: u.speaker,
            start_s: diar.offset_s + (u.start * stft.shift) as f64 / f64::from(fs),
            end_s: diar.offset_s + (u.end * stft.shift) as f64 / f64::from(fs),
        };

        let mut enhanced: Vec<Option<(Vec<f64>, usize)>> = vec![None; utts.len()];
        if self.config.enhance && !utts.is_empty() {
            let spec = stft_multichannel(&sync.aligned, fs, stft)?;
            if spec.frames() != guide.columns() {
                return Err(format!(
                    "guide has {} frames but the session has {}",
                    guide.columns(),
                    spec.frames()
                )
                .into());
            }
            let results = enhance_session(&spec, &guide, utts, &self.config.enhance_config());
            for (i, r) in results.into_iter().enumerate() {
                match r {
                    Ok(e) => {
                        if let Some(debug) = &self.config.debug_dir {
                            write_debug(debug, i, &e.samples, fs, &e.posteriors.gamma)?;
                        }
                        enhanced[i] = Some((e.samples, e.reference));
                    }
                    Err(err) => tracing::warn!(
                        speaker = utts[i].speaker,
                        start_frame = utts[i].start,
                        "enhancement failed, using the unprocessed channel: {err}"
                    ),
                }
            }
        }

        let mut entries = Vec::with_capacity(utts.len());
        for (i, u) in utts.iter().enumerate() {
            let (samples, reference, ok) = match enhanced[i].take() {
                Some((s, r)) => (s, Some(r), true),
                None => {
                    let (s, r) = passthrough_utterance(&sync.aligned, u, stft.shift, self.config.reference_mic);
                    (s, Some(r), false)
                }
            };
            let file = format!("utt-{i:05}.bin");
            Tensor::from_f64(vec![samples.len()], samples)?.write(dir.join(&file))?;
            entries.push(EnhancedEntry {
                meta: meta(u),
                utterance: *u,
                file,
                reference,
                enhanced: ok,
            });
        }
        write_json(
            &dir.join(ENHANCE_FILE),
            &EnhanceArtifact {
                sample_rate: fs,
                entries,
            },
        )
    }

    fn run_asr(&self, up: &Path, dir: &Path) -> Result<(), BoxError> {
        let items = read_enhanced(up)?;
        let recognizer = self.config.asr.build()?;
        let outcomes = transcribe_batch(
            recognizer.as_ref(),
            &items,
            self.config.tokenization,
            self.config.parallelism,
        );
        let failed = outcomes.iter().filter(|o| matches!(o, AsrOutcome::Failed { .. })).count();
        let empty = outcomes.iter().filter(|o| matches!(o, AsrOutcome::Empty { .. })).count();
        tracing::info!(utterances = items.len(), failed, empty, "recognized");
        write_json(&dir.join(OUTCOMES_FILE), &outcomes)
    }

    fn run_dedup(&self, up: &Path, dir: &Path) -> Result<(), BoxError> {
        let outcomes: Vec<AsrOutcome> = read_json(&up.join(OUTCOMES_FILE))?;
        let results: Vec<AsrResult> = outcomes.iter().filter_map(|o| o.result().cloned()).collect();
        let raw = TranscriptSet::new(
            self.manifest.session_id.clone(),
            results,
            self.keys.config_digest(),
        );
        let out = if self.config.dedup {
            reduce_set(&raw, self.config.tau, self.config.tokenization)
        } else {
            raw.clone()
        };
        tracing::info!(before = raw.results.len(), after = out.results.len(), "deduplicated");
        out.write(dir.join(TRANSCRIPT_FILE))?;
        Ok(())
    }
}

fn read_enhanced(dir: &Path) -> Result<Vec<UtteranceAudio>, BoxError> {
    let art: EnhanceArtifact = read_json(&dir.join(ENHANCE_FILE))?;
    art.entries
        .iter()
        .map(|e| {
            let t = Tensor::read(dir.join(&e.file))?;
            Ok(UtteranceAudio {
                meta: e.meta,
                samples: t.data.iter().map(|&v| f64::from(v)).collect(),
                sample_rate: art.sample_rate,
            })
        })
        .collect()
}

/// The utterance audio the recognizer receives under `config`, read from
/// the cached enhance stage.
pub fn recognizer_inputs(config: &PipelineConfig) -> Result<Vec<UtteranceAudio>, PipelineError> {
    let ctx = prepare(config)?;
    let dir = ctx.keys.dir(config, Stage::Enhance);
    if !dir.is_dir() {
        return Err(PipelineError::MissingArtifact {
            stage: Stage::Asr,
            upstream: Stage::Enhance,
            path: dir,
        });
    }
    read_enhanced(&dir).map_err(stage_err(Stage::Enhance))
}

fn write_debug(
    debug: &Path,
    index: usize,
    samples: &[f64],
    sample_rate: u32,
    posteriors: &ndarray::Array3<f64>,
) -> Result<(), BoxError> {
    std::fs::create_dir_all(debug)?;
    write_wav_samples(debug.join(format!("utt-{index:05}.wav")), samples, sample_rate)?;
    let shape = posteriors.shape().to_vec();
    Tensor::from_f64(shape, posteriors.iter().copied())?.write(debug.join(format!("utt-{index:05}-posteriors.bin")))?;
    Ok(())
}

/// Copies the user-facing outputs of `stage` into the output directory.
fn publish(config: &PipelineConfig, stage: Stage, dir: &Path) -> Result<(), PipelineError> {
    let name = match stage {
        Stage::Diarize => RTTM_FILE,
        Stage::Dedup => TRANSCRIPT_FILE,
        _ => return Ok(()),
    };
    std::fs::copy(dir.join(name), config.out_dir.join(name))
        .map(|_| ())
        .map_err(|e| stage_err(stage)(Box::new(e)))
}

fn prepare(config: &PipelineConfig) -> Result<Context<'_>, PipelineError> {
    config.validate()?;
    let manifest = InputManifest::read(&config.manifest)?;
    let keys = StageKeys::compute(config, &manifest)?;
    std::fs::create_dir_all(config.cache_dir()).map_err(|e| PipelineError::Config(format!(
        "cannot create {}: {e}",
        config.cache_dir().display()
    )))?;
    Ok(Context { config, manifest, keys })
}

fn execute_stage(ctx: &Context<'_>, stage: Stage) -> Result<PathBuf, PipelineError> {
    let up = ctx.upstream_dir(stage)?;
    let dir = ctx.keys.dir(ctx.config, stage);
    let start = Instant::now();
    let tmp = tempfile::Builder::new()
        .prefix(&format!(".{}-", stage.name()))
        .tempdir_in(ctx.config.cache_dir())
        .map_err(|e| stage_err(stage)(Box::new(e)))?;
    ctx.execute(stage, up.as_deref(), tmp.path()).map_err(stage_err(stage))?;
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| stage_err(stage)(Box::new(e)))?;
    }
    std::fs::rename(tmp.keep(), &dir).map_err(|e| stage_err(stage)(Box::new(e)))?;
    tracing::info!(stage = stage.name(), elapsed_ms = start.elapsed().as_millis() as u64, "stage finished");
    Ok(dir)
}

/// Re-runs one stage from the cached upstream artifacts, replacing any
/// cached result of that stage.
pub fn run_stage(config: &PipelineConfig, stage: Stage) -> Result<PathBuf, PipelineError> {
    let ctx = prepare(config)?;
    let dir = execute_stage(&ctx, stage)?;
    publish(config, stage, &dir)?;
    Ok(dir)
}

/// Runs every stage in order, reusing cached stage outputs with matching
/// keys, and returns the final transcript.
pub fn run(config: &PipelineConfig) -> Result<TranscriptSet, PipelineError> {
    let ctx = prepare(config)?;
    let mut last = PathBuf::new();
    for stage in Stage::ALL {
        let dir = ctx.keys.dir(config, stage);
        if dir.is_dir() {
            tracing::info!(stage = stage.name(), "reusing cached stage output");
        } else {
            execute_stage(&ctx, stage)?;
        }
        publish(config, stage, &dir)?;
        last = dir;
    }
    TranscriptSet::read(last.join(TRANSCRIPT_FILE)).map_err(|e| stage_err(Stage::Dedup)(Box::new(e)))
}
