use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use avtse::complexity::complexity_report;
use avtse::engine::{bench, enhance_offline, enhance_streaming_timed, AvTseModel, LatencyStats, OfflineCues};
use avtse::metrics::evaluate_batch;
use avtse::signal::{read_wav, write_wav_f32, AudioBuffer, HOP};
use avtse::sim::scene::{read_manifest, render_scene, scene_seeds, write_manifest, SourcePool, MANIFEST_FILE};
use avtse::tse::AUDIO_PER_VIDEO;
use avtse::vad::{read_labels, vad_metrics, write_labels};
use avtse::vvad::{read_lips, LipFrameSequence};
use avtse::weights::{Manifest, WeightSet};
use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;

const DEFAULT_SEED: u64 = 0;

/// Audio-visual target speaker extraction.
#[derive(Debug, Parser)]
#[command(name = "avtse", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate reverberant multi-talker scenes with stems, VAD labels and a manifest.
    Simulate {
        /// Output scene directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of scenes.
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Folder of 16 kHz mono speech WAVs; synthetic talkers when omitted.
        #[arg(long)]
        speech_dir: Option<PathBuf>,
        /// Folder of 16 kHz mono noise WAVs; synthetic noise when omitted.
        #[arg(long, requires = "speech_dir")]
        noise_dir: Option<PathBuf>,
        /// Length of synthetic talker clips in seconds.
        #[arg(long, default_value_t = 4.0)]
        seconds: f64,
    },
    /// Write a randomly initialized weight archive.
    InitWeights {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Enhance one WAV, or every mixture of a scene directory.
    Enhance {
        #[arg(long)]
        weights: PathBuf,
        /// Input WAV file or scene directory.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output WAV file (or directory for scene input).
        #[arg(long)]
        out: PathBuf,
        /// Lip-frame file driving the visual VAD.
        #[arg(long, conflicts_with = "vad")]
        lips: Option<PathBuf>,
        /// Video-rate VAD label file used instead of lip frames.
        #[arg(long)]
        vad: Option<PathBuf>,
        /// For scene input: gate with each scene's ground-truth target VAD.
        #[arg(long, conflicts_with_all = ["lips", "vad"])]
        oracle_vad: bool,
        #[arg(long, value_enum, default_value_t = Mode::Offline)]
        mode: Mode,
        /// Where to write the streaming latency summary.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the visual VAD over a lip-frame file.
    Vvad {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        lips: PathBuf,
        /// Output label file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reference labels to score against.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Time the streaming engine on a synthetic workload.
    Bench {
        /// Weight archive; randomly initialized weights when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Seconds of audio to stream.
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Parameter and multiply-accumulate counts.
    Macs {
        /// Weight archive whose manifest is counted; default architecture when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score enhanced outputs against a scene directory.
    Metrics {
        /// Scene directory.
        #[arg(long = "in")]
        input: PathBuf,
        /// Directory of `<id>.wav` estimates.
        #[arg(long)]
        enhanced: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Offline,
    Streaming,
}

/// Bad invocation detected after argument parsing.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("{what} {} is not a file", path.display())));
    }
    Ok(())
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        return Err(usage(format!("{what} {} is not a directory", path.display())));
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<avtse::Error>() {
            return match e {
                avtse::Error::Shape { .. } | avtse::Error::Stream(_) => 3,
                _ => 2,
            };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
    }
    3
}

fn write_report(path: Option<&Path>, text: &str) -> Result<()> {
    if let Some(p) = path {
        fs::write(p, format!("{text}\n")).with_context(|| format!("writing report {}", p.display()))?;
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<Arc<AvTseModel<f32>>> {
    require_file(path, "weights")?;
    let model = AvTseModel::from_file(path).with_context(|| format!("loading weights {}", path.display()))?;
    Ok(Arc::new(model))
}

fn simulate(out: &Path, n: usize, seed: u64, pool: SourcePool) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let seeds = scene_seeds(seed, n);
    let results: Vec<_> = seeds
        .par_iter()
        .enumerate()
        .map(|(k, &s)| render_scene(out, k, seed, s, &pool))
        .collect();
    let mut records = Vec::with_capacity(n);
    let mut skipped = 0;
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(rec) => records.push(rec),
            Err(avtse::Error::InvalidArgument(reason)) => {
                warn!("skipping scene {k}: {reason}");
                skipped += 1;
            }
            Err(e) => return Err(e).with_context(|| format!("scene {k}")),
        }
    }
    write_manifest(out, &records)?;
    info!("wrote {} scenes to {}", records.len(), out.display());
    println!("scenes={} skipped={} seed={seed} manifest={}", records.len(), skipped, out.join(MANIFEST_FILE).display());
    Ok(())
}

/// Extends video-rate cues by repeating the last one so they cover `frames`.
fn pad_labels(labels: &[bool], frames: usize) -> Vec<bool> {
    let mut v = labels.to_vec();
    if let Some(&last) = labels.last() {
        v.resize(frames.max(labels.len()), last);
    }
    v
}

fn pad_lips(lips: &LipFrameSequence<f32>, frames: usize) -> Result<LipFrameSequence<f32>> {
    let mut px = lips.pixels().to_vec();
    let last = lips.frame(lips.frames() - 1).to_vec();
    for _ in lips.frames()..frames {
        px.extend_from_slice(&last);
    }
    Ok(LipFrameSequence::new(px)?)
}

enum Cues {
    Lips(LipFrameSequence<f32>),
    Labels(Vec<bool>),
    Always,
}

/// Delay-compensated enhancement of `audio`. Both modes run one extra zero
/// hop so the last input hop is fully overlap-added.
fn enhance_one(model: &Arc<AvTseModel<f32>>, audio: &[f32], cues: &Cues, mode: Mode) -> Result<(Vec<f32>, Option<LatencyStats>)> {
    let mut padded = audio.to_vec();
    padded.resize(audio.len() + HOP, 0.0);
    let video = padded.len().div_ceil(HOP).div_ceil(AUDIO_PER_VIDEO);
    let (lips, labels);
    let c = match cues {
        Cues::Lips(l) => {
            lips = pad_lips(l, video)?;
            OfflineCues::Lips(&lips)
        }
        Cues::Labels(l) => {
            labels = pad_labels(l, video);
            OfflineCues::Labels(&labels)
        }
        Cues::Always => OfflineCues::AlwaysActive,
    };
    match mode {
        Mode::Offline => {
            let e = enhance_offline(model, &padded, c)?;
            Ok((e.time_aligned()[..audio.len()].to_vec(), None))
        }
        Mode::Streaming => {
            let (out, times) = enhance_streaming_timed(model.clone(), &padded, c)?;
            Ok((out[HOP..HOP + audio.len()].to_vec(), Some(LatencyStats::from_durations(&times)?)))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn enhance(
    weights: &Path,
    input: &Path,
    out: &Path,
    lips: Option<&Path>,
    vad: Option<&Path>,
    oracle_vad: bool,
    mode: Mode,
    report: Option<&Path>,
) -> Result<()> {
    if let Some(p) = lips {
        require_file(p, "lip file")?;
    }
    if let Some(p) = vad {
        require_file(p, "VAD label file")?;
    }
    let scene_input = input.is_dir();
    if scene_input && (lips.is_some() || vad.is_some()) {
        return Err(usage("--lips and --vad apply to single-file input; use --oracle-vad for scenes"));
    }
    if !scene_input {
        require_file(input, "input")?;
        if oracle_vad {
            return Err(usage("--oracle-vad needs a scene directory as --in"));
        }
    }
    let model = load_model(weights)?;

    if scene_input {
        let records = read_manifest(input)?;
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        if !oracle_vad {
            warn!("no visual cue: running in always-active VAD mode");
        }
        records
            .par_iter()
            .map(|rec| -> Result<()> {
                let audio = read_wav::<f32>(input.join(&rec.files.mixture))?;
                let cues = if oracle_vad {
                    Cues::Labels(read_labels(input.join(&rec.files.target_vad))?)
                } else {
                    Cues::Always
                };
                let (y, _) = enhance_one(&model, audio.samples(), &cues, mode).with_context(|| rec.id.clone())?;
                write_wav_f32(out.join(format!("{}.wav", rec.id)), &AudioBuffer::new(y)?)?;
                Ok(())
            })
            .collect::<Result<Vec<()>>>()?;
        println!("enhanced={} mode={mode:?} out={}", records.len(), out.display());
        return Ok(());
    }

    let audio = read_wav::<f32>(input).with_context(|| format!("reading {}", input.display()))?;
    let cues = match (lips, vad) {
        (Some(p), _) => Cues::Lips(read_lips(p)?),
        (_, Some(p)) => Cues::Labels(read_labels(p)?),
        _ => {
            warn!("no lip frames given: running in always-active VAD mode");
            Cues::Always
        }
    };
    let (y, stats) = enhance_one(&model, audio.samples(), &cues, mode)?;
    write_wav_f32(out, &AudioBuffer::new(y)?).with_context(|| format!("writing {}", out.display()))?;
    println!("samples={} mode={mode:?} out={}", audio.len(), out.display());
    if let Some(s) = stats {
        println!("{s}");
        write_report(report, &s.to_string())?;
    }
    Ok(())
}

fn vvad(weights: &Path, lips: &Path, out: Option<&Path>, truth: Option<&Path>) -> Result<()> {
    require_file(lips, "lip file")?;
    if let Some(t) = truth {
        require_file(t, "truth label file")?;
    }
    let model = load_model(weights)?;
    let frames = read_lips::<f32>(lips)?;
    let labels = model.vvad.forward(&frames)?.labels;
    let speech = labels.iter().filter(|&&v| v).count();
    println!("frames={} speech_frames={speech}", labels.len());
    if let Some(p) = out {
        write_labels(p, &labels)?;
    }
    if let Some(t) = truth {
        let m = vad_metrics(&labels, &read_labels(t)?)?;
        println!("accuracy={:.6}", m.accuracy);
        println!("precision={:.6}", m.precision);
        println!("recall={:.6}", m.recall);
        if m.degenerate {
            warn!("precision or recall had an empty denominator and is reported as 1");
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            out,
            n,
            seed,
            speech_dir,
            noise_dir,
            seconds,
        } => {
            let pool = match &speech_dir {
                Some(dir) => {
                    require_dir(dir, "speech folder")?;
                    if let Some(nd) = &noise_dir {
                        require_dir(nd, "noise folder")?;
                    }
                    SourcePool::from_dirs(dir, noise_dir.as_deref())?
                }
                None => {
                    if !(seconds > 1.0 && seconds.is_finite()) {
                        return Err(usage(format!("--seconds {seconds} must exceed 1")));
                    }
                    SourcePool::Synthetic { seconds }
                }
            };
            simulate(&out, n, seed, pool)
        }
        Command::InitWeights { out, seed } => {
            let ws = WeightSet::init_random(Manifest::default(), seed)?;
            ws.save(&out)?;
            println!("tensors={} seed={seed} out={}", ws.len(), out.display());
            Ok(())
        }
        Command::Enhance {
            weights,
            input,
            out,
            lips,
            vad,
            oracle_vad,
            mode,
            report,
        } => enhance(
            &weights,
            &input,
            &out,
            lips.as_deref(),
            vad.as_deref(),
            oracle_vad,
            mode,
            report.as_deref(),
        ),
        Command::Vvad {
            weights,
            lips,
            out,
            truth,
        } => vvad(&weights, &lips, out.as_deref(), truth.as_deref()),
        Command::Bench {
            weights,
            duration,
            seed,
            report,
        } => {
            if !(duration > 0.0 && duration.is_finite()) {
                return Err(usage(format!("--duration {duration} must be positive")));
            }
            let model = match &weights {
                Some(p) => load_model(p)?,
                None => Arc::new(AvTseModel::load(&WeightSet::init_random(Manifest::default(), seed)?)?),
            };
            let stats = bench(model, duration, seed)?;
            println!(
                "bench: {} frames, mean {:.3} ms, p95 {:.3} ms, max {:.3} ms per 10 ms hop",
                stats.frames, stats.mean_ms, stats.p95_ms, stats.max_ms
            );
            println!("{stats}");
            write_report(report.as_deref(), &stats.to_string())
        }
        Command::Macs { weights, report } => {
            let manifest = match &weights {
                Some(p) => {
                    require_file(p, "weights")?;
                    WeightSet::load(p)?.manifest().clone()
                }
                None => Manifest::default(),
            };
            let r = complexity_report(&manifest).to_string();
            println!("{r}");
            write_report(report.as_deref(), &r)
        }
        Command::Metrics {
            input,
            enhanced,
            report,
        } => {
            require_dir(&input, "scene directory")?;
            require_dir(&enhanced, "enhanced directory")?;
            let r = evaluate_batch(&input, &enhanced)?;
            let text = r.to_string();
            println!("{text}");
            write_report(report.as_deref(), &text)?;
            if !r.errors.is_empty() {
                anyhow::bail!(avtse::Error::Format(format!("{} files could not be scored", r.errors.len())));
            }
            Ok(())
        }
    }
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("AVTSE_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| usage(format!("AVTSE_THREADS={v} is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match init_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
