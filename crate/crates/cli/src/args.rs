use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "distmeet", version, about = "Meeting transcription from unsynchronized distributed microphones")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the full pipeline: sync, diarize, enhance, asr, dedup.
    Transcribe(PipelineArgs),
    /// Re-run a single stage from cached upstream artifacts.
    RunStage {
        /// One of: sync, diarize, enhance, asr, dedup.
        #[arg(long)]
        stage: String,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Character error rate of a transcript against a reference.
    Score(ScoreArgs),
    /// Render a synthetic meeting (WAVs, manifest, reference, RTTM, mock ASR manifest).
    Simulate(SimulateArgs),
}

/// Pipeline settings. Every flag can also come from a `DISTMEET_*`
/// environment variable or from the TOML file given with `--config`;
/// flags win over the environment, which wins over the file.
#[derive(Debug, Args, Default)]
pub struct PipelineArgs {
    /// TOML file with the same keys as the long flags (dashes or underscores).
    #[arg(long, env = "DISTMEET_CONFIG")]
    pub config: Option<PathBuf>,
    /// JSON manifest listing the device recordings.
    #[arg(long, env = "DISTMEET_MANIFEST")]
    pub manifest: Option<PathBuf>,
    /// Output directory (transcript, RTTM and the stage cache).
    #[arg(long, env = "DISTMEET_OUT")]
    pub out: Option<PathBuf>,
    /// Number of speakers K.
    #[arg(long, env = "DISTMEET_SPEAKERS")]
    pub speakers: Option<usize>,
    /// Weight of the power-profile part of the clustering features.
    #[arg(long, env = "DISTMEET_LAMBDA")]
    pub lambda: Option<f64>,
    /// Duplicate similarity threshold in [0, 1].
    #[arg(long, visible_alias = "dedup-tau", env = "DISTMEET_TAU")]
    pub tau: Option<f64>,
    /// Index of the device whose clock defines the session timeline.
    #[arg(long, env = "DISTMEET_ANCHOR")]
    pub anchor: Option<usize>,
    /// Largest clock offset searched during synchronization, in seconds.
    #[arg(long, env = "DISTMEET_MAX_SHIFT_S")]
    pub max_shift_s: Option<f64>,
    #[arg(long, env = "DISTMEET_FRAME_MS")]
    pub frame_ms: Option<f64>,
    #[arg(long, env = "DISTMEET_SHIFT_MS")]
    pub shift_ms: Option<f64>,
    #[arg(long, env = "DISTMEET_GSS_ITERATIONS")]
    pub gss_iterations: Option<usize>,
    /// Context on each side of an utterance used for separation, in seconds.
    #[arg(long, env = "DISTMEET_CONTEXT_S")]
    pub context_s: Option<f64>,
    #[arg(long, env = "DISTMEET_WPE_TAPS")]
    pub wpe_taps: Option<usize>,
    #[arg(long, env = "DISTMEET_WPE_DELAY")]
    pub wpe_delay: Option<usize>,
    #[arg(long, env = "DISTMEET_WPE_ITERATIONS")]
    pub wpe_iterations: Option<usize>,
    /// Skip dereverberation.
    #[arg(long, env = "DISTMEET_NO_WPE")]
    pub no_wpe: bool,
    /// Beamformer reference channel; chosen by SNR when omitted.
    #[arg(long, env = "DISTMEET_REFERENCE_MIC")]
    pub reference_mic: Option<usize>,
    /// Token unit for duplicate detection: words or chars.
    #[arg(long, env = "DISTMEET_TOKENIZATION")]
    pub tokenization: Option<String>,
    /// Concurrent recognizer requests.
    #[arg(long, env = "DISTMEET_PARALLELISM")]
    pub parallelism: Option<usize>,
    /// Shell command recognizer; `{wav}` is replaced by the utterance file.
    #[arg(long, env = "DISTMEET_ASR_CMD", group = "asr")]
    pub asr_cmd: Option<String>,
    /// HTTP recognizer endpoint.
    #[arg(long, env = "DISTMEET_ASR_URL", group = "asr")]
    pub asr_url: Option<String>,
    /// Mock recognizer manifest written by `simulate`.
    #[arg(long, env = "DISTMEET_ASR_MOCK", group = "asr")]
    pub asr_mock: Option<PathBuf>,
    /// Per-utterance recognizer timeout in seconds.
    #[arg(long, env = "DISTMEET_ASR_TIMEOUT_S")]
    pub asr_timeout_s: Option<f64>,
    /// Precomputed segment embeddings, `(devices, slots, dim)` tensor file.
    #[arg(long, env = "DISTMEET_EMBEDDINGS")]
    pub embeddings: Option<PathBuf>,
    /// Use this RTTM as the diarization result.
    #[arg(long, env = "DISTMEET_ORACLE_RTTM")]
    pub oracle_rttm: Option<PathBuf>,
    /// Write enhanced utterance WAVs and posterior tensors here.
    #[arg(long, env = "DISTMEET_DEBUG_DIR")]
    pub debug_dir: Option<PathBuf>,
    /// Disable gap closing of the diarization result.
    #[arg(long, env = "DISTMEET_NO_CLOSING")]
    pub no_closing: bool,
    /// Skip separation; recognize the best single channel instead.
    #[arg(long, env = "DISTMEET_NO_ENHANCE")]
    pub no_enhance: bool,
    /// Keep duplicate recognitions.
    #[arg(long, env = "DISTMEET_NO_DEDUP")]
    pub no_dedup: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// attribution (speaker-matched) or pooled.
    #[arg(long, default_value = "attribution")]
    pub mode: String,
    /// Print the full result as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scene description (TOML); a random scene is generated when omitted.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "session")]
    pub session_id: String,
    /// Let the mock recognizer corrupt characters under interference.
    #[arg(long)]
    pub corrupt: bool,
    #[arg(long, default_value_t = 2)]
    pub speakers: usize,
    #[arg(long, default_value_t = 6)]
    pub devices: usize,
    #[arg(long, default_value_t = 20.0)]
    pub duration_s: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Target overlapped-speech fraction of the generated scene.
    #[arg(long, default_value_t = 0.2)]
    pub overlap: f64,
    #[arg(long, default_value_t = 0.0)]
    pub max_offset_s: f64,
    #[arg(long, default_value_t = 0.0)]
    pub max_drift_ppm: f64,
}
