//! Energy VAD, label augmentation and VAD scoring.

mod common;

use avtse::signal::AudioBuffer;
use avtse::sim::synth::speech_like;
use avtse::vad::{
    augment_vad, energy_vad, energy_vad_with, parse_labels, read_labels, vad_metrics, write_labels, EnergyVadConfig,
    VadAugmentConfig, VAD_FRAME,
};
use rand::Rng;

#[test]
fn higher_threshold_marks_fewer_frames() {
    let clip = speech_like(&mut common::rng(1), 5.0);
    let audio = AudioBuffer::new(clip.samples).unwrap();
    let mut prev: Option<Vec<bool>> = None;
    for threshold in [1.5, 3.0, 6.0, 12.0, 24.0] {
        let cfg = EnergyVadConfig { threshold, ..EnergyVadConfig::default() };
        let labels = energy_vad_with(&audio, &cfg);
        if let Some(p) = &prev {
            assert!(labels.iter().zip(p).all(|(&now, &before)| !now || before));
        }
        prev = Some(labels);
    }
}

/// Frames that overlap a voiced segment, as an annotator on the 40 ms grid would mark them.
fn annotate(segments: &[std::ops::Range<usize>], frames: usize) -> Vec<bool> {
    (0..frames)
        .map(|f| segments.iter().any(|s| s.start < (f + 1) * VAD_FRAME && s.end > f * VAD_FRAME))
        .collect()
}

#[test]
fn golden_clip_speech_fraction() {
    let clip = speech_like(&mut common::rng(0), 5.0);
    let labels = energy_vad(&AudioBuffer::new(clip.samples.clone()).unwrap());
    assert_eq!(labels.len(), clip.samples.len().div_ceil(VAD_FRAME));
    let truth = annotate(&clip.segments, labels.len());
    let fraction = |v: &[bool]| v.iter().filter(|&&x| x).count() as f64 / v.len() as f64;
    let (found, want) = (fraction(&labels), fraction(&truth));
    assert!((found - want).abs() <= 0.1 * want, "{found} vs {want}");
}

fn runs(labels: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        if labels[i] {
            let s = i;
            while i < labels.len() && labels[i] {
                i += 1;
            }
            out.push((s, i));
        } else {
            i += 1;
        }
    }
    out
}

#[test]
fn augmentation_only_delays_onsets() {
    let mut rng = common::rng(2);
    for seed in 0..50 {
        let labels: Vec<bool> = (0..400).map(|_| rng.gen_bool(0.7)).collect();
        let cfg = VadAugmentConfig { delay_frames: 5, flip_prob: 0.0, seed };
        let out = augment_vad(&labels, &cfg).unwrap();
        let (a, b) = (runs(&labels), runs(&out));
        assert_eq!(a.len(), b.len());
        for ((s0, e0), (s1, e1)) in a.into_iter().zip(b) {
            assert_eq!(e0, e1);
            assert!(s1 >= s0 && s1 <= s0 + 5 && s1 < e1);
        }
    }
    assert!(augment_vad(&[true], &VadAugmentConfig { flip_prob: 1.5, ..Default::default() }).is_err());
}

#[test]
fn accuracy_is_agreement_rate() {
    let mut rng = common::rng(3);
    for _ in 0..100 {
        let n = rng.gen_range(1..300);
        let pred: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        let truth: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        let m = vad_metrics(&pred, &truth).unwrap();
        let agree = pred.iter().zip(&truth).filter(|(p, t)| p == t).count() as f64 / n as f64;
        assert_eq!(m.accuracy, agree);
        assert_eq!(m.true_pos + m.false_pos + m.true_neg + m.false_neg, n);
    }
    let m = vad_metrics(&[false, false], &[false, false]).unwrap();
    assert!(m.degenerate && m.accuracy == 1.0);
    assert!(vad_metrics(&[true], &[true, false]).is_err());
}

#[test]
fn label_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let labels: Vec<bool> = (0..77).map(|i| i % 3 == 0).collect();
    let path = dir.path().join("x.vad");
    write_labels(&path, &labels).unwrap();
    assert_eq!(read_labels(&path).unwrap(), labels);
    assert!(parse_labels("0102").is_err());
    assert_eq!(parse_labels("").unwrap(), Vec::<bool>::new());
}
