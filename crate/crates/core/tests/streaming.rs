//! Frame-by-frame engine against the offline pipeline, cue handling and
//! the attention warm-up closed form.

mod common;

use avtse::engine::{enhance_offline, enhance_streaming, Cue, OfflineCues, StreamEngine, VadMode};
use avtse::signal::HOP;
use avtse::tse::attend_window;
use avtse::Error;

#[test]
fn every_cue_mode_streams_like_offline() {
    let model = common::model::<f32>(21);
    let mut rng = common::rng(1);
    let audio: Vec<f32> = common::noise(&mut rng, 90 * HOP + 37, 0.3);
    let lips = common::lips::<f32>(&mut rng, 23);
    let labels: Vec<bool> = (0..23).map(|i| i % 5 < 3).collect();
    for cues in [OfflineCues::Lips(&lips), OfflineCues::Labels(&labels), OfflineCues::AlwaysActive] {
        let off = enhance_offline(&model, &audio, cues).unwrap();
        let on = enhance_streaming(model.clone(), &audio, cues).unwrap();
        assert_eq!(on[..], off.stream_aligned()[..]);
        assert_eq!(off.time_aligned()[..off.time_aligned().len() - HOP], on[HOP..]);
    }
}

#[test]
fn f64_engine_streams_like_offline() {
    let model = common::model::<f64>(22);
    let audio: Vec<f64> = common::noise(&mut common::rng(2), 40 * HOP, 0.3);
    let off = enhance_offline(&model, &audio, OfflineCues::AlwaysActive).unwrap();
    let on = enhance_streaming(model, &audio, OfflineCues::AlwaysActive).unwrap();
    assert_eq!(on[..], off.stream_aligned()[..]);
}

#[test]
fn reset_replays_identically() {
    let model = common::model::<f32>(23);
    let audio: Vec<f32> = common::noise(&mut common::rng(3), 30 * HOP, 0.3);
    let mut engine = StreamEngine::new(model, VadMode::Labels);
    let run = |engine: &mut StreamEngine<f32>| {
        let mut out = vec![0.0; audio.len()];
        for (t, (x, y)) in audio.chunks(HOP).zip(out.chunks_mut(HOP)).enumerate() {
            let cue = if t % 4 == 0 { Cue::Label(t % 8 == 0) } else { Cue::None };
            engine.process_frame(x, cue, y).unwrap();
        }
        out
    };
    let a = run(&mut engine);
    assert_eq!(engine.metadata().audio_frames, 30);
    assert_eq!(engine.metadata().video_frames, 8);
    engine.reset();
    assert_eq!(engine.metadata().audio_frames, 0);
    assert_eq!(run(&mut engine), a);
}

#[test]
fn silence_stays_quiet() {
    let model = common::model::<f32>(24);
    let out = enhance_streaming(model, &vec![0.0f32; 200 * HOP], OfflineCues::AlwaysActive).unwrap();
    let tail = &out[100 * HOP..];
    let rms = (tail.iter().map(|v| v * v).sum::<f32>() / tail.len() as f32).sqrt();
    assert!(rms < 1e-4, "{rms}");
}

#[test]
fn cue_protocol_is_enforced() {
    let model = common::model::<f32>(25);
    let lip = vec![0.5f32; 1024];
    let x = vec![0.0f32; HOP];
    let mut y = vec![0.0f32; HOP];
    let mut e = StreamEngine::new(model.clone(), VadMode::Visual);
    assert!(e.expects_cue());
    assert!(matches!(e.process_frame(&x, Cue::None, &mut y), Err(Error::Stream(_))));
    e.process_frame(&x, Cue::Lip(&lip), &mut y).unwrap();
    assert!(!e.expects_cue());
    assert!(matches!(e.process_frame(&x, Cue::Lip(&lip), &mut y), Err(Error::Stream(_))));
    assert!(matches!(e.process_frame(&x[..10], Cue::None, &mut y), Err(Error::Stream(_))));
    let mut nan = x.clone();
    nan[3] = f32::NAN;
    assert!(matches!(e.process_frame(&nan, Cue::None, &mut y), Err(Error::NonFinite(_))));
    let mut a = StreamEngine::new(model, VadMode::AlwaysActive);
    assert!(matches!(a.process_frame(&x, Cue::Label(true), &mut y), Err(Error::Stream(_))));
}

#[test]
fn single_real_frame_in_a_zero_window() {
    let (c, heads, l) = (8, 2, 50);
    let d = c / heads;
    let mut rng = common::rng(4);
    let q: Vec<f64> = common::noise(&mut rng, c, 1.0);
    let k1: Vec<f64> = common::noise(&mut rng, c, 1.0);
    let v1: Vec<f64> = common::noise(&mut rng, c, 1.0);
    let mut keys = vec![0.0; l * c];
    let mut values = vec![0.0; l * c];
    keys[(l - 1) * c..].copy_from_slice(&k1);
    values[(l - 1) * c..].copy_from_slice(&v1);
    let mut scores = vec![0.0; l];
    let mut out = vec![0.0; c];
    attend_window(&q, &keys, &values, heads, &mut scores, &mut out);
    for h in 0..heads {
        let s: f64 = (h * d..(h + 1) * d).map(|i| q[i] * k1[i]).sum::<f64>() / (d as f64).sqrt();
        let alpha = s.exp() / (s.exp() + (l - 1) as f64);
        for i in h * d..(h + 1) * d {
            assert!((out[i] - alpha * v1[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn impulse_reaches_the_output_in_its_own_frame() {
    let model = common::model::<f64>(26);
    for p in [0usize, 1, 159, 160, 1000, 3333] {
        let mut audio = vec![0.0f64; 40 * HOP];
        audio[p] = 1.0;
        let out = enhance_streaming(model.clone(), &audio, OfflineCues::AlwaysActive).unwrap();
        let first = out.iter().position(|v| *v != 0.0).unwrap();
        // the frame holding sample p is emitted as output block p / HOP; its
        // first sample sits at the zero of the analysis window
        assert_eq!(first, p / HOP * HOP + 1, "impulse at {p}");
    }
}
