//! SI-SNR, energy ratios and batch evaluation over a scene directory.
//!
//! No alignment search is performed: estimate and reference are compared
//! sample for sample.

use std::fmt;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::signal::{read_wav, AudioBuffer};
use crate::sim::scene::{read_manifest, SceneRecord};

/// Magnitude cap on SI-SNR, keeping oracle outputs and aggregates finite.
pub const SI_SNR_CAP_DB: f64 = 60.0;

/// Scale-invariant SNR in dB with zero-mean preprocessing, accumulated in f64.
pub fn si_snr<T: Scalar>(est: &[T], reference: &[T]) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::InvalidArgument(format!(
            "estimate has {} samples, reference has {}",
            est.len(),
            reference.len()
        )));
    }
    let n = est.len().max(1) as f64;
    let me = est.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let mr = reference.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let (mut dot, mut rr, mut ee) = (0.0, 0.0, 0.0);
    for (e, r) in est.iter().zip(reference) {
        let (e, r) = (e.as_f64() - me, r.as_f64() - mr);
        dot += e * r;
        rr += r * r;
        ee += e * e;
    }
    if rr == 0.0 {
        return Err(Error::InvalidArgument("SI-SNR reference has zero energy".into()));
    }
    if ee == 0.0 {
        return Ok(-SI_SNR_CAP_DB);
    }
    let alpha = dot / rr;
    let (mut target, mut noise) = (0.0, 0.0);
    for (e, r) in est.iter().zip(reference) {
        let s = alpha * (r.as_f64() - mr);
        target += s * s;
        noise += (e.as_f64() - me - s).powi(2);
    }
    let db = if noise == 0.0 {
        SI_SNR_CAP_DB
    } else if target == 0.0 {
        -SI_SNR_CAP_DB
    } else {
        10.0 * (target / noise).log10()
    };
    Ok(db.clamp(-SI_SNR_CAP_DB, SI_SNR_CAP_DB))
}

/// `10 log10(sum a^2 / sum b^2)` over `region` (whole signals if `None`).
pub fn energy_ratio_db<T: Scalar>(a: &[T], b: &[T], region: Option<Range<usize>>) -> Result<f64> {
    let r = region.unwrap_or(0..a.len().min(b.len()));
    if r.start > r.end || r.end > a.len() || r.end > b.len() {
        return Err(Error::InvalidArgument(format!(
            "region {r:?} outside signals of {} and {} samples",
            a.len(),
            b.len()
        )));
    }
    let energy = |x: &[T]| x[r.clone()].iter().map(|v| v.as_f64().powi(2)).sum::<f64>();
    let eb = energy(b);
    if eb == 0.0 {
        return Err(Error::InvalidArgument(format!("zero energy in denominator over {r:?}")));
    }
    Ok(10.0 * (energy(a) / eb).log10())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FileMetrics {
    pub id: String,
    pub si_snr_db: f64,
    pub si_snr_improvement_db: f64,
    pub achieved_sir_db: f64,
    pub achieved_snr_db: f64,
}

impl FileMetrics {
    /// Scores `est` against the reverberant target; the mixture gives the baseline.
    pub fn compute(
        id: &str,
        est: &[f32],
        mixture: &[f32],
        target: &[f32],
        interferer: &[f32],
        noise: &[f32],
        overlap: Range<usize>,
    ) -> Result<Self> {
        let si = si_snr(est, target)?;
        Ok(FileMetrics {
            id: id.to_string(),
            si_snr_db: si,
            si_snr_improvement_db: si - si_snr(mixture, target)?,
            achieved_sir_db: energy_ratio_db(target, interferer, Some(overlap))?,
            achieved_snr_db: energy_ratio_db(target, noise, None)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub files: Vec<FileMetrics>,
    /// Files that could not be scored, with the reason.
    pub errors: Vec<(String, String)>,
}

impl MetricReport {
    pub fn mean(&self) -> Option<FileMetrics> {
        if self.files.is_empty() {
            return None;
        }
        let n = self.files.len() as f64;
        let avg = |f: fn(&FileMetrics) -> f64| self.files.iter().map(f).sum::<f64>() / n;
        Some(FileMetrics {
            id: "mean".into(),
            si_snr_db: avg(|m| m.si_snr_db),
            si_snr_improvement_db: avg(|m| m.si_snr_improvement_db),
            achieved_sir_db: avg(|m| m.achieved_sir_db),
            achieved_snr_db: avg(|m| m.achieved_snr_db),
        })
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<16} {:>10} {:>10} {:>10} {:>10}",
            "id", "si_snr", "si_snr_i", "sir", "snr"
        )?;
        let rows = self.files.iter().cloned().chain(self.mean());
        for m in rows.clone() {
            writeln!(
                f,
                "{:<16} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
                m.id, m.si_snr_db, m.si_snr_improvement_db, m.achieved_sir_db, m.achieved_snr_db
            )?;
        }
        for m in rows {
            writeln!(
                f,
                "id={} si_snr_db={:.6} si_snr_improvement_db={:.6} achieved_sir_db={:.6} achieved_snr_db={:.6}",
                m.id, m.si_snr_db, m.si_snr_improvement_db, m.achieved_sir_db, m.achieved_snr_db
            )?;
        }
        for (id, e) in &self.errors {
            writeln!(f, "error id={id} reason={e}")?;
        }
        write!(f, "files={} errors={}", self.files.len(), self.errors.len())
    }
}

fn load(dir: &Path, file: &str) -> Result<Vec<f32>> {
    Ok(read_wav::<f32>(dir.join(file))?.into_samples())
}

fn score(scene_dir: &Path, enhanced_dir: &Path, rec: &SceneRecord) -> Result<FileMetrics> {
    let est = load(enhanced_dir, &format!("{}.wav", rec.id))?;
    let mixture = load(scene_dir, &rec.files.mixture)?;
    if est.len() != mixture.len() {
        return Err(Error::InvalidArgument(format!(
            "enhanced output has {} samples, mixture has {}",
            est.len(),
            mixture.len()
        )));
    }
    FileMetrics::compute(
        &rec.id,
        &est,
        &mixture,
        &load(scene_dir, &rec.files.target)?,
        &load(scene_dir, &rec.files.interferer)?,
        &load(scene_dir, &rec.files.noise)?,
        rec.overlap_start..rec.overlap_end,
    )
}

/// Scores `<enhanced_dir>/<id>.wav` for every manifest record, in manifest
/// order. Per-file failures are collected rather than aborting.
pub fn evaluate_batch(scene_dir: impl AsRef<Path>, enhanced_dir: impl AsRef<Path>) -> Result<MetricReport> {
    let (scene_dir, enhanced_dir) = (scene_dir.as_ref(), enhanced_dir.as_ref());
    let records = read_manifest(scene_dir)?;
    let mut report = MetricReport {
        files: Vec::new(),
        errors: Vec::new(),
    };
    for rec in &records {
        match score(scene_dir, enhanced_dir, rec) {
            Ok(m) => report.files.push(m),
            Err(e) => report.errors.push((rec.id.clone(), e.to_string())),
        }
    }
    Ok(report)
}

/// Writes `samples` as an enhanced output for `evaluate_batch`.
pub fn write_enhanced<T: Scalar>(enhanced_dir: impl AsRef<Path>, id: &str, samples: Vec<T>) -> Result<()> {
    crate::signal::write_wav_f32(enhanced_dir.as_ref().join(format!("{id}.wav")), &AudioBuffer::new(samples)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_capped() {
        let x: Vec<f64> = (0..500).map(|n| (n as f64 * 0.37).sin()).collect();
        assert_eq!(si_snr(&x, &x).unwrap(), SI_SNR_CAP_DB);
        let scaled: Vec<f64> = x.iter().map(|v| 2.7 * v).collect();
        assert_eq!(si_snr(&scaled, &x).unwrap(), SI_SNR_CAP_DB);
        assert_eq!(si_snr(&vec![0.0; 500], &x).unwrap(), -SI_SNR_CAP_DB);
        assert!(si_snr(&x, &vec![0.0; 500]).is_err());
    }

    #[test]
    fn energy_ratio_examples() {
        let a: Vec<f64> = (0..100).map(|n| (n as f64).cos()).collect();
        let half: Vec<f64> = a.iter().map(|v| v / 2.0).collect();
        assert_eq!(energy_ratio_db(&a, &a, None).unwrap(), 0.0);
        assert!((energy_ratio_db(&a, &half, None).unwrap() - 6.0206).abs() < 0.01);
        assert!(energy_ratio_db(&a, &vec![0.0; 100], None).is_err());
        assert!(energy_ratio_db(&a, &a, Some(90..120)).is_err());
    }
}
