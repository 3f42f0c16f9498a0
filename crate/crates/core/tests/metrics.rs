//! SI-SNR and energy ratios against direct formulas, and batch scoring of a
//! scene directory.

mod common;

use std::fs;

use avtse::metrics::{energy_ratio_db, evaluate_batch, si_snr, write_enhanced, SI_SNR_CAP_DB};
use avtse::signal::read_wav;
use avtse::sim::scene::{generate_scenes, read_manifest, SourcePool, MANIFEST_FILE};
use rand::Rng;

fn si_snr_oracle(est: &[f64], r: &[f64]) -> f64 {
    let n = est.len() as f64;
    let me = est.iter().sum::<f64>() / n;
    let mr = r.iter().sum::<f64>() / n;
    let e: Vec<f64> = est.iter().map(|v| v - me).collect();
    let r: Vec<f64> = r.iter().map(|v| v - mr).collect();
    let a = e.iter().zip(&r).map(|(x, y)| x * y).sum::<f64>() / r.iter().map(|y| y * y).sum::<f64>();
    let s: Vec<f64> = r.iter().map(|y| a * y).collect();
    let num: f64 = s.iter().map(|v| v * v).sum();
    let den: f64 = e.iter().zip(&s).map(|(x, y)| (x - y).powi(2)).sum();
    10.0 * (num / den).log10()
}

#[test]
fn random_pairs_match_direct_formulas() {
    let mut rng = common::rng(5);
    for _ in 0..200 {
        let n = rng.gen_range(2..2000);
        let a: Vec<f64> = common::noise(&mut rng, n, 1.0);
        let mix = rng.gen_range(0.0..1.0);
        let b: Vec<f64> = a.iter().map(|v| mix * v + rng.gen_range(-0.5..0.5)).collect();
        let want = si_snr_oracle(&b, &a).clamp(-SI_SNR_CAP_DB, SI_SNR_CAP_DB);
        assert!((si_snr(&b, &a).unwrap() - want).abs() < 1e-9);
        let ea: f64 = a.iter().map(|v| v * v).sum();
        let eb: f64 = b.iter().map(|v| v * v).sum();
        assert!((energy_ratio_db(&a, &b, None).unwrap() - 10.0 * (ea / eb).log10()).abs() < 1e-9);
        let s = rng.gen_range(0..n);
        let e = rng.gen_range(s + 1..=n);
        let ea: f64 = a[s..e].iter().map(|v| v * v).sum();
        let eb: f64 = b[s..e].iter().map(|v| v * v).sum();
        assert!((energy_ratio_db(&a, &b, Some(s..e)).unwrap() - 10.0 * (ea / eb).log10()).abs() < 1e-9);
    }
}

#[test]
fn si_snr_ignores_gain_and_offset() {
    let mut rng = common::rng(6);
    let r: Vec<f64> = common::noise(&mut rng, 1000, 1.0);
    let e: Vec<f64> = r.iter().map(|v| v + rng.gen_range(-0.3..0.3)).collect();
    let base = si_snr(&e, &r).unwrap();
    let moved: Vec<f64> = e.iter().map(|v| 3.5 * v + 0.25).collect();
    assert!((si_snr(&moved, &r).unwrap() - base).abs() < 1e-9);
    assert!(si_snr(&e[..10], &r).is_err());
}

fn stems(dir: &std::path::Path, file: &str) -> Vec<f32> {
    read_wav::<f32>(dir.join(file)).unwrap().into_samples()
}

#[test]
fn batch_scoring() {
    let scenes = tempfile::tempdir().unwrap();
    let recs = generate_scenes(scenes.path(), 3, 17, &SourcePool::Synthetic { seconds: 1.5 }).unwrap();
    let run = |f: &dyn Fn(&avtse::sim::scene::SceneRecord) -> Vec<f32>| {
        let out = tempfile::tempdir().unwrap();
        for r in &recs {
            write_enhanced(out.path(), &r.id, f(r)).unwrap();
        }
        (evaluate_batch(scenes.path(), out.path()).unwrap(), out)
    };

    let (unprocessed, _) = run(&|r| stems(scenes.path(), &r.files.mixture));
    assert!(unprocessed.errors.is_empty());
    for m in &unprocessed.files {
        assert_eq!(m.si_snr_improvement_db, 0.0);
    }
    let (oracle, _) = run(&|r| stems(scenes.path(), &r.files.target));
    for (m, r) in oracle.files.iter().zip(&recs) {
        assert_eq!(m.si_snr_db, SI_SNR_CAP_DB);
        assert!((m.achieved_sir_db - r.mixture.sir_db).abs() < 0.1);
        assert!((m.achieved_snr_db - r.mixture.snr_db).abs() < 0.1);
    }
    let (halved, _) = run(&|r| stems(scenes.path(), &r.files.mixture).iter().map(|v| 0.5 * v).collect());
    for (a, b) in halved.files.iter().zip(&unprocessed.files) {
        assert!((a.si_snr_db - b.si_snr_db).abs() < 1e-9);
    }

    let (_, out) = run(&|r| stems(scenes.path(), &r.files.target));
    fs::remove_file(out.path().join(format!("{}.wav", recs[1].id))).unwrap();
    write_enhanced(out.path(), &recs[2].id, vec![0.1f32; 100]).unwrap();
    let partial = evaluate_batch(scenes.path(), out.path()).unwrap();
    assert_eq!(partial.files.len(), 1);
    let ids: Vec<&str> = partial.errors.iter().map(|(id, _)| id.as_str()).collect();
    assert_eq!(ids, [recs[1].id.as_str(), recs[2].id.as_str()]);
    let text = partial.to_string();
    assert!(text.contains(&format!("error id={}", recs[1].id)) && text.ends_with("files=1 errors=2"));
}

#[test]
fn means_do_not_depend_on_manifest_order() {
    let scenes = tempfile::tempdir().unwrap();
    let recs = generate_scenes(scenes.path(), 4, 3, &SourcePool::Synthetic { seconds: 1.5 }).unwrap();
    let out = tempfile::tempdir().unwrap();
    for r in &recs {
        let mix = stems(scenes.path(), &r.files.mixture);
        let tgt = stems(scenes.path(), &r.files.target);
        write_enhanced(out.path(), &r.id, mix.iter().zip(&tgt).map(|(m, t)| 0.3 * m + t).collect()).unwrap();
    }
    let before = evaluate_batch(scenes.path(), out.path()).unwrap().mean().unwrap();
    let manifest = scenes.path().join(MANIFEST_FILE);
    let mut lines: Vec<String> = fs::read_to_string(&manifest).unwrap().lines().map(String::from).collect();
    lines.reverse();
    fs::write(&manifest, lines.join("\n") + "\n").unwrap();
    assert_eq!(read_manifest(scenes.path()).unwrap()[0].id, recs[3].id);
    let after = evaluate_batch(scenes.path(), out.path()).unwrap().mean().unwrap();
    assert!((before.si_snr_db - after.si_snr_db).abs() < 1e-12);
    assert!((before.si_snr_improvement_db - after.si_snr_improvement_db).abs() < 1e-12);
}
