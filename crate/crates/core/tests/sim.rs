//! Room responses, mixing arithmetic and scene sampling.

mod common;

use avtse::signal::AudioBuffer;
use avtse::sim::synth::{noise_like, speech_like};
use avtse::sim::{decay_time_60, make_mixture, sample_scene, simulate_rir, Lead, MixtureSpec, RoomSpec, SPEED_OF_SOUND};
use avtse::Error;

fn anechoic(delay: usize) -> (RoomSpec, f64) {
    let d = delay as f64 * SPEED_OF_SOUND / 16_000.0;
    let mut room = RoomSpec::new([8.0, 6.0, 3.0], 0.3, [1.0, 1.0, 1.5], [1.0 + d, 1.0, 1.5]);
    room.beta_override = Some(0.0);
    (room, d)
}

#[test]
fn anechoic_response_is_a_scaled_delay() {
    for delay in [100, 200] {
        let (room, d) = anechoic(delay);
        let h = simulate_rir(&room).unwrap();
        let expected = 1.0 / (4.0 * std::f64::consts::PI * d);
        assert!((h[delay] - expected).abs() < 1e-12 * expected);
        assert!(h.iter().enumerate().all(|(n, &v)| n == delay || v == 0.0));
    }
    let near = simulate_rir(&anechoic(100).0).unwrap();
    let far = simulate_rir(&anechoic(200).0).unwrap();
    assert!((near[100] / far[200] - 2.0).abs() < 1e-12);
}

#[test]
fn invalid_rooms_are_rejected() {
    let ok = RoomSpec::new([5.0, 4.0, 3.0], 0.3, [1.0, 1.0, 1.5], [3.0, 2.0, 1.5]);
    assert!(simulate_rir(&ok).is_ok());
    let same = RoomSpec { mic: ok.source, ..ok.clone() };
    assert!(matches!(simulate_rir(&same), Err(Error::InvalidArgument(_))));
    let wall = RoomSpec { source: [0.05, 1.0, 1.5], ..ok.clone() };
    assert!(simulate_rir(&wall).is_err());
    let dead = RoomSpec { t60: 0.01, ..ok.clone() };
    assert!(dead.sabine_absorption() >= 1.0);
    assert!(simulate_rir(&dead).is_err());
    let loud = RoomSpec { beta_override: Some(1.5), ..ok };
    assert!(simulate_rir(&loud).is_err());
}

#[test]
fn exponential_decay_time() {
    let (t60, fs) = (0.4, 16_000.0);
    let r = 10f64.powf(-3.0 / (t60 * fs));
    let h: Vec<f64> = (0..(3.0 * t60 * fs) as usize).map(|n| r.powi(n as i32)).collect();
    let est = decay_time_60(&h).unwrap();
    assert!((est - t60).abs() <= 2.0 / fs, "{est}");
    assert_eq!(decay_time_60(&[0.0; 10]), None);
}

#[test]
fn scene_draws_cover_the_training_ranges() {
    let n = 10_000;
    let mut snr_sum = 0.0;
    let mut leads = 0;
    for seed in 0..n {
        let p = sample_scene(seed);
        let (r, m) = (&p.room, &p.mixture);
        assert!((3.0..=8.0).contains(&r.length) && (3.0..=8.0).contains(&r.width) && r.height == 3.0);
        assert!(r.t60 >= 0.1 && r.t60 <= 0.6 && r.sabine_absorption() < 1.0);
        assert!((-5.0..=5.0).contains(&m.sir_db) && (0.0..=15.0).contains(&m.snr_db));
        assert!((0.2..=0.8).contains(&m.overlap_ratio));
        assert_eq!(m.seed, seed);
        r.validate().unwrap();
        RoomSpec { source: p.interferer_position, ..r.clone() }.validate().unwrap();
        snr_sum += m.snr_db;
        leads += usize::from(m.lead == Lead::Target);
    }
    let mean = snr_sum / n as f64;
    assert!((mean - 7.5).abs() < 0.3, "{mean}");
    assert!((leads as f64 / n as f64 - 0.5).abs() < 0.03);
}

fn clips(seed: u64, target_s: f64, interferer_s: f64) -> [AudioBuffer<f64>; 3] {
    let mut rng = common::rng(seed);
    [
        AudioBuffer::new(speech_like(&mut rng, target_s).samples).unwrap(),
        AudioBuffer::new(speech_like(&mut rng, interferer_s).samples).unwrap(),
        AudioBuffer::new(noise_like(&mut rng, 1.3)).unwrap(),
    ]
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

#[test]
fn overlap_placement() {
    let plan = sample_scene(3);
    let [t, i, n] = clips(3, 2.0, 2.0);
    let len = t.len();
    for lead in [Lead::Target, Lead::Interferer] {
        let spec = MixtureSpec { overlap_ratio: 0.5, lead, ..plan.mixture.clone() };
        let s = make_mixture(&t, &i, &n, &plan.room, plan.interferer_position, &spec).unwrap();
        let first = |x: &[f64]| x.iter().position(|v| *v != 0.0).unwrap();
        let (ti, ii) = (s.target_reverberant.samples(), s.interferer_reverberant.samples());
        match lead {
            Lead::Target => {
                assert_eq!(s.mixture.len(), len);
                assert!(first(ii) >= len / 2);
                assert_eq!(s.overlap, len / 2..len);
            }
            Lead::Interferer => {
                assert_eq!(s.mixture.len(), len / 2 + len);
                assert!(first(ti) >= len / 2);
                assert_eq!(s.interferer_span, 0..len);
                assert!(ii[len..].iter().all(|v| *v == 0.0));
            }
        }
        let mix = s.mixture.samples();
        for k in 0..mix.len() {
            assert_eq!(mix[k], ti[k] + ii[k] + s.noise.samples()[k]);
        }
    }
}

#[test]
fn requested_levels_are_met() {
    for seed in 0..4 {
        let plan = sample_scene(seed);
        let [t, i, n] = clips(seed, 2.0, 2.5);
        let s = make_mixture(&t, &i, &n, &plan.room, plan.interferer_position, &plan.mixture).unwrap();
        let (ti, ii, ni) = (s.target_reverberant.samples(), s.interferer_reverberant.samples(), s.noise.samples());
        let o = s.overlap.clone();
        let sir = 10.0 * (energy(&ti[o.clone()]) / energy(&ii[o])).log10();
        let snr = 10.0 * (energy(ti) / energy(ni)).log10();
        assert!((sir - plan.mixture.sir_db).abs() < 0.1, "{sir}");
        assert!((snr - plan.mixture.snr_db).abs() < 0.1, "{snr}");
    }
    let plan = sample_scene(9);
    let spec = MixtureSpec { sir_db: 0.0, snr_db: 100.0, ..plan.mixture.clone() };
    let [t, i, n] = clips(9, 2.0, 2.0);
    let s = make_mixture(&t, &i, &n, &plan.room, plan.interferer_position, &spec).unwrap();
    let o = s.overlap.clone();
    let rms = |x: &[f64]| (energy(x) / x.len() as f64).sqrt();
    let ratio = 20.0 * (rms(&s.target_reverberant.samples()[o.clone()]) / rms(&s.interferer_reverberant.samples()[o])).log10();
    assert!(ratio.abs() < 0.1);
}

#[test]
fn short_clips_are_rejected() {
    let plan = sample_scene(5);
    let [t, i, n] = clips(5, 2.0, 1.5);
    let spec = MixtureSpec { lead: Lead::Interferer, ..plan.mixture.clone() };
    assert!(make_mixture(&t, &i, &n, &plan.room, plan.interferer_position, &spec).is_err());
    let [t, i, n] = clips(5, 0.9, 2.0);
    assert!(make_mixture(&t, &i, &n, &plan.room, plan.interferer_position, &plan.mixture).is_err());
    let bad = MixtureSpec { overlap_ratio: 1.0, ..plan.mixture };
    let [t, i, n] = clips(5, 2.0, 2.0);
    assert!(make_mixture(&t, &i, &n, &plan.room, plan.interferer_position, &bad).is_err());
}
