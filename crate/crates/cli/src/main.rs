use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use instrumental::audio::{read_wav, write_wav, WavFormat};
use instrumental::dsp::pitch::midi_to_hz;
use instrumental::optimizer::{CmaConfig, Progress};
use instrumental::params::{load_preset, Tier};
use instrumental::pipeline::{ablate, bench, match_targets, prepare, segment, select_pitches, BenchConfig, MatchConfig};
use instrumental::synth::{render, RenderRequest};
use instrumental_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "instrumental", version, about = "Recover synthesizer patches from recordings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a patch to a recording.
    Match {
        input: PathBuf,
        #[arg(long, default_value = "t28")]
        tier: Tier,
        #[arg(long, default_value_t = instrumental::optimizer::cma::FAST_BUDGET)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Render one note from a preset.
    Render {
        preset: PathBuf,
        /// Midi note (`60`) or frequency (`261.6`, `440hz`).
        #[arg(long)]
        pitch: String,
        #[arg(long, default_value_t = 1.0)]
        dur: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare tiers on the same recording.
    Ablate {
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "t15,t18,t24,t28,t29")]
        tiers: Vec<Tier>,
        #[arg(long, default_value_t = instrumental::optimizer::cma::FAST_BUDGET)]
        budget: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
    },
    /// Measure batched against serial evaluation throughput.
    Bench {
        #[arg(long, default_value_t = 10.0)]
        seconds: f64,
        #[arg(long)]
        json: bool,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
    },
}

const EXIT_INPUT: u8 = 2;
const EXIT_ABORTED: u8 = 3;

/// The optimizer ran but did not produce a usable patch.
#[derive(Debug, thiserror::Error)]
#[error("optimization aborted: {0}")]
struct Aborted(String);

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.is::<Aborted>() {
        EXIT_ABORTED
    } else {
        EXIT_INPUT
    }
}

/// A bare integer is a midi note; a decimal or an `hz` suffix is Hz.
fn parse_pitch(s: &str) -> anyhow::Result<f64> {
    let s = s.trim().to_ascii_lowercase();
    let f0 = if let Some(hz) = s.strip_suffix("hz") {
        hz.trim().parse().context("pitch in Hz")?
    } else if let Ok(midi) = s.parse::<u8>() {
        midi_to_hz(f64::from(midi))
    } else {
        s.parse().context("pitch must be Hz or a midi note")?
    };
    anyhow::ensure!(f64::is_finite(f0) && f0 > 0.0, "pitch must be positive");
    Ok(f0)
}

fn report_progress(p: &Progress) {
    if p.generation % 25 == 0 || p.generation == p.generations {
        log::info!(
            "generation {}/{}  evaluations {}  best {:.5}",
            p.generation,
            p.generations,
            p.evaluations,
            p.best_loss
        );
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Match {
            input,
            tier,
            budget,
            seed,
            out,
        } => {
            let config = MatchConfig {
                tier,
                cma: CmaConfig::default().with_budget(budget).with_seed(seed),
                ..MatchConfig::default()
            };
            config.cma.validate()?;
            let audio = prepare(&read_wav(&input)?);
            let picked = select_pitches(&segment(&audio)?, config.pitches);
            let outcome = match_targets(&picked, &config, &mut report_progress)
                .map_err(|e| Aborted(e.to_string()))?;
            if !outcome.report.final_loss.is_finite() {
                return Err(Aborted("no candidate produced a finite loss".into()).into());
            }
            outcome.write(&out)?;
            let r = &outcome.report;
            println!("pitches: {:.1?} Hz", r.pitches);
            println!("loss: {:.5} -> {:.5} after {} evaluations", r.initial_loss, r.final_loss, r.evaluations);
            if !r.at_bound.is_empty() {
                println!("at bound: {}", r.at_bound.join(", "));
            }
            println!("wrote {}", out.display());
        }
        Command::Render {
            preset,
            pitch,
            dur,
            out,
        } => {
            let patch = load_preset(&preset)?;
            let f0 = parse_pitch(&pitch)?;
            let audio = render(&RenderRequest::new(patch, f0, dur))?;
            write_wav(&out, &audio, WavFormat::Float32)?;
            println!("wrote {}", out.display());
        }
        Command::Ablate {
            input,
            tiers,
            budget,
            seeds,
        } => {
            let audio = read_wav(&input)?;
            let base = MatchConfig {
                cma: CmaConfig::default().with_budget(budget),
                ..MatchConfig::default()
            };
            println!("tier  dim  median     detune@bound  losses");
            for row in ablate(&audio, &tiers, &base, &seeds)? {
                println!(
                    "{:<5} {:>3}  {:<9.5}  {:>12}  {:.5?}",
                    row.tier.label(),
                    row.dimension,
                    row.median,
                    row.detune_at_bound,
                    row.losses
                );
            }
        }
        Command::Bench { seconds, json } => {
            let config = BenchConfig {
                min_seconds: seconds,
                ..BenchConfig::default()
            };
            let report = bench(&config)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                println!("{}", report.summary());
            }
        }
        Command::Serve { addr, data_dir } => {
            let config = ServiceConfig {
                data_dir,
                ..ServiceConfig::default()
            };
            tokio::runtime::Runtime::new()?.block_on(instrumental_service::serve(addr, config))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pitch_forms() {
        assert_eq!(parse_pitch("69").unwrap(), 440.0);
        assert_eq!(parse_pitch("440hz").unwrap(), 440.0);
        assert_eq!(parse_pitch("221.0").unwrap(), 221.0);
        assert!(parse_pitch("-3.0").is_err());
        assert!(parse_pitch("a4").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Aborted("x".into()).into()), EXIT_ABORTED);
        assert_eq!(exit_code(&instrumental::Error::NoVoicedSegments.into()), EXIT_INPUT);
    }
}
