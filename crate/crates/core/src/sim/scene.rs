//! Scene directories: float WAV stems, VAD label files and a JSONL manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mixture::{make_mixture, sample_scene, MixtureSpec};
use super::room::RoomSpec;
use super::synth::{noise_like, speech_like};
use crate::error::{Error, Result};
use crate::signal::{read_wav, write_wav_f32, AudioBuffer};
use crate::vad::write_labels;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
/// Recorded in every manifest line: overlap ratios are relative to the
/// target's active span, not the file length.
pub const OVERLAP_DENOMINATOR: &str = "target_active_span";

/// Paths relative to the scene directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneFiles {
    pub mixture: String,
    pub target: String,
    pub interferer: String,
    pub noise: String,
    pub target_vad: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub id: String,
    pub run_seed: u64,
    pub seed: u64,
    pub room: RoomSpec,
    pub interferer_position: [f64; 3],
    pub mixture: MixtureSpec,
    pub files: SceneFiles,
    pub sources: [String; 3],
    pub samples: usize,
    pub target_start: usize,
    pub target_end: usize,
    pub overlap_start: usize,
    pub overlap_end: usize,
    pub overlap_denominator: String,
    pub achieved_sir_db: f64,
    pub achieved_snr_db: f64,
}

/// Where talker and noise clips come from.
#[derive(Debug, Clone, PartialEq)]
pub enum SourcePool {
    /// Generated clips; the target lasts `seconds`.
    Synthetic { seconds: f64 },
    /// 16 kHz mono WAVs; synthetic noise when `noise` is empty.
    Files { speech: Vec<PathBuf>, noise: Vec<PathBuf> },
}

fn wavs_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    v.sort();
    Ok(v)
}

impl SourcePool {
    pub fn from_dirs(speech: &Path, noise: Option<&Path>) -> Result<Self> {
        let speech = wavs_in(speech)?;
        if speech.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least two speech WAVs, found {}",
                speech.len()
            )));
        }
        let noise = noise.map(wavs_in).transpose()?.unwrap_or_default();
        Ok(SourcePool::Files { speech, noise })
    }

    /// Target, interferer and noise clips with a description of each.
    fn draw<R: Rng>(&self, rng: &mut R) -> Result<([AudioBuffer<f32>; 3], [String; 3])> {
        let to32 = |x: Vec<f64>| AudioBuffer::new(x.into_iter().map(|v| v as f32).collect());
        match self {
            SourcePool::Synthetic { seconds } => {
                let t = speech_like(rng, *seconds).samples;
                let i = speech_like(rng, *seconds).samples;
                let n = noise_like(rng, *seconds);
                let name = || "synthetic".to_string();
                Ok(([to32(t)?, to32(i)?, to32(n)?], [name(), name(), name()]))
            }
            SourcePool::Files { speech, noise } => {
                let a = rng.gen_range(0..speech.len());
                let b = (a + rng.gen_range(1..speech.len())) % speech.len();
                let (n, n_name) = if noise.is_empty() {
                    (to32(noise_like(rng, 4.0))?, "synthetic".to_string())
                } else {
                    let p = &noise[rng.gen_range(0..noise.len())];
                    (read_wav(p)?, p.display().to_string())
                };
                Ok((
                    [read_wav(&speech[a])?, read_wav(&speech[b])?, n],
                    [speech[a].display().to_string(), speech[b].display().to_string(), n_name],
                ))
            }
        }
    }
}

/// Per-scene seeds drawn from the run generator.
pub fn scene_seeds(run_seed: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    (0..count).map(|_| rng.next_u64()).collect()
}

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:05}")
}

/// Synthesizes one scene into `dir` and returns its manifest record.
pub fn render_scene(dir: &Path, index: usize, run_seed: u64, seed: u64, pool: &SourcePool) -> Result<SceneRecord> {
    let plan = sample_scene(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let ([t, i, n], sources) = pool.draw(&mut rng)?;
    let sample = make_mixture(&t, &i, &n, &plan.room, plan.interferer_position, &plan.mixture)?;
    let id = scene_id(index);
    let files = SceneFiles {
        mixture: format!("{id}_mix.wav"),
        target: format!("{id}_target.wav"),
        interferer: format!("{id}_interferer.wav"),
        noise: format!("{id}_noise.wav"),
        target_vad: format!("{id}_target.vad"),
    };
    write_wav_f32(dir.join(&files.mixture), &sample.mixture)?;
    write_wav_f32(dir.join(&files.target), &sample.target_reverberant)?;
    write_wav_f32(dir.join(&files.interferer), &sample.interferer_reverberant)?;
    write_wav_f32(dir.join(&files.noise), &sample.noise)?;
    write_labels(dir.join(&files.target_vad), &sample.target_vad)?;
    Ok(SceneRecord {
        id,
        run_seed,
        seed,
        room: plan.room,
        interferer_position: plan.interferer_position,
        mixture: plan.mixture,
        files,
        sources,
        samples: sample.mixture.len(),
        target_start: sample.target_span.start,
        target_end: sample.target_span.end,
        overlap_start: sample.overlap.start,
        overlap_end: sample.overlap.end,
        overlap_denominator: OVERLAP_DENOMINATOR.to_string(),
        achieved_sir_db: sample.achieved_sir_db,
        achieved_snr_db: sample.achieved_snr_db,
    })
}

pub fn write_manifest(dir: &Path, records: &[SceneRecord]) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(&out).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Vec<SceneRecord>> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), n + 1)))
        })
        .collect()
}

/// Sequentially renders `count` scenes and writes the manifest.
pub fn generate_scenes(dir: &Path, count: usize, run_seed: u64, pool: &SourcePool) -> Result<Vec<SceneRecord>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let records = scene_seeds(run_seed, count)
        .into_iter()
        .enumerate()
        .map(|(k, s)| render_scene(dir, k, run_seed, s, pool))
        .collect::<Result<Vec<_>>>()?;
    write_manifest(dir, &records)?;
    Ok(records)
}
