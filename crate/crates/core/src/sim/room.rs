use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::SAMPLE_RATE;

pub const SPEED_OF_SOUND: f64 = 343.0;

/// Images whose wall attenuation alone falls below this are dropped.
const REFLECTION_CUTOFF: f64 = 1e-6;
/// Half-width of the windowed-sinc fractional delay (8 taps in total).
const SINC_HALF: i64 = 4;

/// Shoebox room with one source and one microphone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub t60: f64,
    pub source: [f64; 3],
    pub mic: [f64; 3],
    pub speed_of_sound: f64,
    /// Upper bound on reflections per image path; `None` leaves only the
    /// impulse-response length and the attenuation cutoff as bounds.
    pub max_order: Option<usize>,
    /// Wall reflection coefficient replacing the Sabine value (0 = anechoic).
    pub beta_override: Option<f64>,
}

impl RoomSpec {
    pub fn new(dims: [f64; 3], t60: f64, source: [f64; 3], mic: [f64; 3]) -> Self {
        RoomSpec {
            length: dims[0],
            width: dims[1],
            height: dims[2],
            t60,
            source,
            mic,
            speed_of_sound: SPEED_OF_SOUND,
            max_order: None,
            beta_override: None,
        }
    }

    pub fn dims(&self) -> [f64; 3] {
        [self.length, self.width, self.height]
    }

    pub fn volume(&self) -> f64 {
        self.length * self.width * self.height
    }

    pub fn surface(&self) -> f64 {
        2.0 * (self.length * self.width + self.length * self.height + self.width * self.height)
    }

    /// Uniform absorption from Sabine's formula `T60 = 0.161 V / (S a)`.
    pub fn sabine_absorption(&self) -> f64 {
        0.161 * self.volume() / (self.surface() * self.t60)
    }

    /// Shortest T60 for which Sabine's absorption stays below 1.
    pub fn min_t60(dims: [f64; 3]) -> f64 {
        let r = RoomSpec::new(dims, 1.0, [0.0; 3], [0.0; 3]);
        0.161 * r.volume() / r.surface()
    }

    /// Pressure reflection coefficient of every wall.
    ///
    /// Sabine's formula only gates validity: with specular reflections the
    /// paths along the long room axes meet fewer walls than the diffuse-field
    /// average, so `sqrt(1 - a_sabine)` decays up to twice as slowly as the
    /// requested T60. Instead `beta` is solved so that the image-lattice
    /// energy model (direct path plus images of density `1/V` whose
    /// reflection count grows as `c t sum_a |u_a| / L_a` along direction `u`)
    /// has its Schroeder curve reach -60 dB one T60 after the direct arrival.
    pub fn beta(&self) -> Result<f64> {
        if let Some(b) = self.beta_override {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::InvalidArgument(format!("reflection coefficient {b} outside [0, 1]")));
            }
            return Ok(b);
        }
        let a = self.sabine_absorption();
        if a >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "T60 {} s is too short for a {:.2}x{:.2}x{:.2} m room (Sabine absorption {a:.3} >= 1)",
                self.t60, self.length, self.width, self.height
            )));
        }
        let rates = self.path_reflection_rates();
        let (mut lo, mut hi) = (-60.0f64, 0.0f64);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.model_decay_db(mid, &rates) < -60.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok((0.5 * (lo + hi)).exp())
    }

    /// Reflections per second `c sum_a |u_a| / L_a` over a Fibonacci sphere.
    fn path_reflection_rates(&self) -> Vec<f64> {
        const N: usize = 4096;
        let golden = PI * (3.0 - 5f64.sqrt());
        let d = self.dims();
        (0..N)
            .map(|i| {
                let z = 1.0 - (2.0 * i as f64 + 1.0) / N as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = golden * i as f64;
                let u = [r * phi.cos(), r * phi.sin(), z];
                self.speed_of_sound * (0..3).map(|a| u[a].abs() / d[a]).sum::<f64>()
            })
            .collect()
    }

    /// Modelled Schroeder level (dB) one T60 after the direct arrival for
    /// `ln beta = log_beta`.
    fn model_decay_db(&self, log_beta: f64, rates: &[f64]) -> f64 {
        let t0 = self.distance() / self.speed_of_sound;
        let direct = 1.0 / (16.0 * PI * PI * self.distance().powi(2));
        let density = self.speed_of_sound / (4.0 * PI * self.volume());
        let tail = |t: f64| {
            density
                * rates
                    .iter()
                    .map(|&g| {
                        let k = -2.0 * log_beta * g;
                        (-k * t).exp() / k
                    })
                    .sum::<f64>()
                / rates.len() as f64
        };
        10.0 * (tail(t0 + self.t60) / (direct + tail(t0))).log10()
    }

    pub fn distance(&self) -> f64 {
        dist(self.source, self.mic)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims();
        if d.iter().any(|&v| !(v > 0.0 && v.is_finite())) || !(self.t60 > 0.0) || !(self.speed_of_sound > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "room {d:?} with T60 {} and c {}",
                self.t60, self.speed_of_sound
            )));
        }
        for (what, p) in [("source", self.source), ("mic", self.mic)] {
            for a in 0..3 {
                if !(p[a] >= 0.1 && p[a] <= d[a] - 0.1) {
                    return Err(Error::InvalidArgument(format!(
                        "{what} {p:?} closer than 0.1 m to a wall of {d:?}"
                    )));
                }
            }
        }
        if self.distance() < 1e-9 {
            return Err(Error::InvalidArgument("source and microphone coincide".into()));
        }
        Ok(())
    }

    /// Impulse-response length: the direct path plus 1.5 T60 of tail.
    pub fn rir_len(&self) -> usize {
        let fs = SAMPLE_RATE as f64;
        let direct = self.distance() / self.speed_of_sound * fs;
        (direct + 1.5 * self.t60 * fs).ceil() as usize + 2 * SINC_HALF as usize
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Adds an impulse of amplitude `amp` at fractional sample `delay`.
fn place(h: &mut [f64], delay: f64, amp: f64) {
    let nearest = delay.round();
    if (delay - nearest).abs() < 1e-9 {
        if let Some(v) = h.get_mut(nearest as usize) {
            *v += amp;
        }
        return;
    }
    let base = delay.floor() as i64;
    for n in base - SINC_HALF + 1..=base + SINC_HALF {
        if n < 0 || n as usize >= h.len() {
            continue;
        }
        let x = n as f64 - delay;
        let sinc = (PI * x).sin() / (PI * x);
        let win = 0.5 * (1.0 + (PI * x / SINC_HALF as f64).cos());
        h[n as usize] += amp * sinc * win;
    }
}

/// Image-method room impulse response at 16 kHz (Allen and Berkley):
/// every mirror image contributes `beta^reflections / (4 pi d)` at delay
/// `d / c`, placed with an 8-tap Hann-windowed sinc.
pub fn simulate_rir(room: &RoomSpec) -> Result<Vec<f64>> {
    room.validate()?;
    let beta = room.beta()?;
    let fs = SAMPLE_RATE as f64;
    let len = room.rir_len();
    let mut h = vec![0.0; len];
    let mut direct = vec![0.0; len];
    let max_dist = len as f64 / fs * room.speed_of_sound;
    let dims = room.dims();
    let (s, m) = (room.source, room.mic);
    let reach: Vec<i64> = dims.iter().map(|&l| (max_dist / (2.0 * l)).ceil() as i64 + 1).collect();

    // Per axis: image coordinate offset and reflection count for (n, p).
    let axis = |a: usize, n: i64, p: i64| -> (f64, u32) {
        let pos = (1 - 2 * p) as f64 * s[a] + 2.0 * n as f64 * dims[a];
        let refl = ((n - p).abs() + n.abs()) as u32;
        (pos - m[a], refl)
    };
    for nx in -reach[0]..=reach[0] {
        for px in 0..2 {
            let (dx, rx) = axis(0, nx, px);
            if dx.abs() > max_dist {
                continue;
            }
            for ny in -reach[1]..=reach[1] {
                for py in 0..2 {
                    let (dy, ry) = axis(1, ny, py);
                    if dx * dx + dy * dy > max_dist * max_dist {
                        continue;
                    }
                    for nz in -reach[2]..=reach[2] {
                        for pz in 0..2 {
                            let (dz, rz) = axis(2, nz, pz);
                            let refl = rx + ry + rz;
                            if room.max_order.is_some_and(|o| refl as usize > o) {
                                continue;
                            }
                            let att = beta.powi(refl as i32);
                            if att == 0.0 || (refl > 0 && att < REFLECTION_CUTOFF) {
                                continue;
                            }
                            let d = (dx * dx + dy * dy + dz * dz).sqrt();
                            if d > max_dist {
                                continue;
                            }
                            let target = if refl == 0 { &mut direct } else { &mut h };
                            place(target, d / room.speed_of_sound * fs, att / (4.0 * PI * d));
                        }
                    }
                }
            }
        }
    }
    high_pass(&mut h);
    for (a, b) in h.iter_mut().zip(&direct) {
        *a += b;
    }
    Ok(h)
}

/// Allen and Berkley's 100 Hz high-pass, removing the DC build-up of the
/// all-positive image train.
fn high_pass(h: &mut [f64]) {
    let w = 2.0 * PI * 100.0 / SAMPLE_RATE as f64;
    let r1 = (-w).exp();
    let (b1, b2, a1) = (2.0 * r1 * w.cos(), -r1 * r1, -(1.0 + r1));
    let (mut y1, mut y2) = (0.0, 0.0);
    for v in h.iter_mut() {
        let y0 = b1 * y1 + b2 * y2 + *v;
        *v = y0 + a1 * y1 + r1 * y2;
        y2 = y1;
        y1 = y0;
    }
}

/// Schroeder backward-integrated energy decay curve in dB (0 dB at the start).
pub fn schroeder_curve(h: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut edc: Vec<f64> = h
        .iter()
        .rev()
        .map(|v| {
            acc += v * v;
            acc
        })
        .collect();
    edc.reverse();
    let total = edc[0];
    edc.iter().map(|&e| 10.0 * (e / total).log10()).collect()
}

/// Seconds from the direct-path arrival until the decay curve reaches
/// `-60 dB`, or `None` if it never does.
pub fn decay_time_60(h: &[f64]) -> Option<f64> {
    let onset = h.iter().position(|v| v.abs() > 0.0)?;
    let edc = schroeder_curve(&h[onset..]);
    let i = edc.iter().position(|&db| db <= -60.0)?;
    Some(i as f64 / SAMPLE_RATE as f64)
}
