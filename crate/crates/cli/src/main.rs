mod args;
mod config;

use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use tracing_subscriber::EnvFilter;

use args::{Cli, Command, ScoreArgs, SimulateArgs};
use distmeet::asr::MockParams;
use distmeet::evalscore::{score, ScoreMode};
use distmeet::pipeline::{run, run_stage, Stage};
use distmeet::sim::{generate_scene, render, write_session, SceneSpec, SceneTemplate};
use distmeet::transcript::TranscriptSet;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("DISTMEET_LOG").unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Transcribe(a) => {
            let cfg = config::resolve(&a)?;
            let t = run(&cfg)?;
            println!(
                "{} results written to {}",
                t.results.len(),
                cfg.out_dir.join(distmeet::pipeline::TRANSCRIPT_FILE).display()
            );
            Ok(())
        }
        Command::RunStage { stage, pipeline } => {
            let stage: Stage = stage.parse()?;
            let cfg = config::resolve(&pipeline)?;
            let dir = run_stage(&cfg, stage)?;
            println!("{stage} output in {}", dir.display());
            Ok(())
        }
        Command::Score(a) => score_cmd(&a),
        Command::Simulate(a) => simulate(&a),
    }
}

fn score_cmd(a: &ScoreArgs) -> Result<()> {
    let mode: ScoreMode = a.mode.parse().map_err(anyhow::Error::msg)?;
    let hyp = TranscriptSet::read(&a.hyp)?;
    let reference = TranscriptSet::read(&a.reference)?;
    let s = score(&hyp, &reference, mode)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&s)?);
    } else {
        println!(
            "CER {:.2}% (S={} D={} I={} N={})",
            100.0 * s.cer,
            s.substitutions,
            s.deletions,
            s.insertions,
            s.reference_length
        );
    }
    Ok(())
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let scene = match &a.scene {
        Some(p) => SceneSpec::read(p)?,
        None => generate_scene(&SceneTemplate {
            speakers: a.speakers,
            devices: a.devices,
            duration_s: a.duration_s,
            seed: a.seed,
            target_overlap: a.overlap,
            max_offset_s: a.max_offset_s,
            max_drift_ppm: a.max_drift_ppm,
            ..Default::default()
        }),
    };
    let rendered = render(&scene, &a.session_id)?;
    let params = MockParams {
        corrupt: a.corrupt,
        ..Default::default()
    };
    let files = write_session(&rendered, &a.out, params)?;
    std::fs::write(a.out.join("scene.toml"), scene.to_toml())
        .with_context(|| format!("writing {}", a.out.join("scene.toml").display()))?;
    println!(
        "{} devices, {} utterances (overlap {:.1}%) written to {}",
        rendered.recordings.len(),
        rendered.truth.utterances.len(),
        100.0 * rendered.truth.overlap_ratio(),
        a.out.display()
    );
    println!("manifest: {}", files.manifest.display());
    Ok(())
}
