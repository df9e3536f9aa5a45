//! Merges flags, environment and the TOML config file into a
//! [`PipelineConfig`].

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use distmeet::enhance::WpeConfig;
use distmeet::pipeline::{AsrBackend, PipelineConfig};

use crate::args::PipelineArgs;

/// The config file mirrors the long flags; unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub speakers: Option<usize>,
    pub lambda: Option<f64>,
    #[serde(alias = "dedup-tau", alias = "dedup_tau")]
    pub tau: Option<f64>,
    pub anchor: Option<usize>,
    #[serde(alias = "max_shift_s")]
    pub max_shift_s: Option<f64>,
    #[serde(alias = "frame_ms")]
    pub frame_ms: Option<f64>,
    #[serde(alias = "shift_ms")]
    pub shift_ms: Option<f64>,
    #[serde(alias = "gss_iterations")]
    pub gss_iterations: Option<usize>,
    #[serde(alias = "context_s")]
    pub context_s: Option<f64>,
    #[serde(alias = "wpe_taps")]
    pub wpe_taps: Option<usize>,
    #[serde(alias = "wpe_delay")]
    pub wpe_delay: Option<usize>,
    #[serde(alias = "wpe_iterations")]
    pub wpe_iterations: Option<usize>,
    #[serde(alias = "no_wpe")]
    pub no_wpe: Option<bool>,
    #[serde(alias = "reference_mic")]
    pub reference_mic: Option<usize>,
    pub tokenization: Option<String>,
    pub parallelism: Option<usize>,
    #[serde(alias = "asr_cmd")]
    pub asr_cmd: Option<String>,
    #[serde(alias = "asr_url")]
    pub asr_url: Option<String>,
    #[serde(alias = "asr_mock")]
    pub asr_mock: Option<PathBuf>,
    #[serde(alias = "asr_timeout_s")]
    pub asr_timeout_s: Option<f64>,
    pub embeddings: Option<PathBuf>,
    #[serde(alias = "oracle_rttm")]
    pub oracle_rttm: Option<PathBuf>,
    #[serde(alias = "debug_dir")]
    pub debug_dir: Option<PathBuf>,
    #[serde(alias = "no_closing")]
    pub no_closing: Option<bool>,
    #[serde(alias = "no_enhance")]
    pub no_enhance: Option<bool>,
    #[serde(alias = "no_dedup")]
    pub no_dedup: Option<bool>,
}

impl FileConfig {
    /// Reads the file; relative paths inside it are taken relative to it.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut c: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut c.manifest,
            &mut c.out,
            &mut c.asr_mock,
            &mut c.embeddings,
            &mut c.oracle_rttm,
            &mut c.debug_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(c)
    }
}

pub fn resolve(args: &PipelineArgs) -> Result<PipelineConfig> {
    let file = match &args.config {
        Some(p) => FileConfig::read(p)?,
        None => FileConfig::default(),
    };
    let manifest = args
        .manifest
        .clone()
        .or(file.manifest)
        .context("no input manifest: pass --manifest or set it in the config file")?;
    let out = args
        .out
        .clone()
        .or(file.out)
        .context("no output directory: pass --out or set it in the config file")?;
    let speakers = args
        .speakers
        .or(file.speakers)
        .context("number of speakers unknown: pass --speakers")?;
    let timeout_s = args.asr_timeout_s.or(file.asr_timeout_s).unwrap_or(120.0);
    let asr = match (
        args.asr_cmd.clone(),
        args.asr_url.clone(),
        args.asr_mock.clone(),
    ) {
        (Some(template), _, _) => AsrBackend::Command { template, timeout_s },
        (_, Some(url), _) => AsrBackend::Http { url, timeout_s },
        (_, _, Some(manifest)) => AsrBackend::Mock { manifest },
        _ => match (file.asr_cmd, file.asr_url, file.asr_mock) {
            (Some(template), None, None) => AsrBackend::Command { template, timeout_s },
            (None, Some(url), None) => AsrBackend::Http { url, timeout_s },
            (None, None, Some(manifest)) => AsrBackend::Mock { manifest },
            (None, None, None) => bail!("no recognizer: pass one of --asr-cmd, --asr-url, --asr-mock"),
            _ => bail!("config file names more than one recognizer"),
        },
    };

    let mut cfg = PipelineConfig::new(manifest, out, speakers, asr);
    let set = |dst: &mut f64, a: Option<f64>, f: Option<f64>| {
        if let Some(v) = a.or(f) {
            *dst = v;
        }
    };
    set(&mut cfg.lambda, args.lambda, file.lambda);
    set(&mut cfg.tau, args.tau, file.tau);
    set(&mut cfg.max_shift_s, args.max_shift_s, file.max_shift_s);
    set(&mut cfg.frame_ms, args.frame_ms, file.frame_ms);
    set(&mut cfg.shift_ms, args.shift_ms, file.shift_ms);
    set(&mut cfg.context_s, args.context_s, file.context_s);
    if let Some(v) = args.anchor.or(file.anchor) {
        cfg.anchor = v;
    }
    if let Some(v) = args.gss_iterations.or(file.gss_iterations) {
        cfg.gss_iterations = v;
    }
    if let Some(v) = args.parallelism.or(file.parallelism) {
        cfg.parallelism = v;
    }
    if let Some(t) = args.tokenization.clone().or(file.tokenization) {
        cfg.tokenization = t.parse().map_err(anyhow::Error::msg)?;
    }
    cfg.reference_mic = args.reference_mic.or(file.reference_mic);
    cfg.embeddings = args.embeddings.clone().or(file.embeddings);
    cfg.oracle_rttm = args.oracle_rttm.clone().or(file.oracle_rttm);
    cfg.debug_dir = args.debug_dir.clone().or(file.debug_dir);

    let flag = |a: bool, f: Option<bool>| a || f.unwrap_or(false);
    if flag(args.no_wpe, file.no_wpe) {
        cfg.wpe = None;
    } else {
        let d = cfg.wpe.unwrap_or_default();
        cfg.wpe = Some(WpeConfig {
            taps: args.wpe_taps.or(file.wpe_taps).unwrap_or(d.taps),
            delay: args.wpe_delay.or(file.wpe_delay).unwrap_or(d.delay),
            iterations: args.wpe_iterations.or(file.wpe_iterations).unwrap_or(d.iterations),
        });
    }
    cfg.closing = !flag(args.no_closing, file.no_closing);
    cfg.enhance = !flag(args.no_enhance, file.no_enhance);
    cfg.dedup = !flag(args.no_dedup, file.no_dedup);
    cfg.validate()?;
    Ok(cfg)
}
