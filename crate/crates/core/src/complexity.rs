//! Analytic parameter and multiply-accumulate counts.
//!
//! Conventions: convolution `out_elems * kernel_volume * in_channels`,
//! transposed convolution `in_elems * out_channels * kernel_volume`, dense
//! `in * out`, LSTM `4 * h * (h + in)` per step, attention `2 * L * C` per
//! query (scores plus weighted sum). Normalizations, activations and biases
//! are not counted.

use std::fmt;

use crate::weights::{parameter_table, Manifest};

/// Cost of one layer or module.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleCost {
    pub name: String,
    pub params: u64,
    pub macs_per_second: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComplexityReport {
    pub params: u64,
    pub macs_per_second: u64,
    /// Per-layer entries; totals are their sums.
    pub breakdown: Vec<ModuleCost>,
}

impl ComplexityReport {
    /// Sum over entries whose name starts with `prefix`.
    pub fn module(&self, prefix: &str) -> ModuleCost {
        let mut m = ModuleCost {
            name: prefix.to_string(),
            params: 0,
            macs_per_second: 0,
        };
        for e in self.breakdown.iter().filter(|e| e.name.starts_with(prefix)) {
            m.params += e.params;
            m.macs_per_second += e.macs_per_second;
        }
        m
    }

    pub fn entry(&self, name: &str) -> Option<&ModuleCost> {
        self.breakdown.iter().find(|e| e.name == name)
    }
}

impl fmt::Display for ComplexityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for prefix in ["vvad", "tse.encoder", "tse.blocks", "tse.decoder"] {
            let m = self.module(prefix);
            writeln!(
                f,
                "{:<12} params={:<9} macs_per_second={:.4}G",
                prefix,
                m.params,
                m.macs_per_second as f64 / 1e9
            )?;
        }
        writeln!(f, "params={}", self.params)?;
        writeln!(f, "macs_per_second={}", self.macs_per_second)?;
        write!(f, "gmacs_per_second={:.4}", self.macs_per_second as f64 / 1e9)
    }
}

struct Counter<'a> {
    manifest: &'a Manifest,
    entries: Vec<ModuleCost>,
}

impl Counter<'_> {
    /// `macs` per invocation, `rate` invocations per second.
    fn add(&mut self, name: String, macs: u64, rate: u64) {
        let params = parameter_table(self.manifest)
            .iter()
            .filter(|p| p.kind.is_learnable() && p.name.starts_with(&format!("{name}.")))
            .map(|p| p.numel() as u64)
            .sum();
        self.entries.push(ModuleCost {
            name,
            params,
            macs_per_second: macs * rate,
        });
    }
}

pub fn complexity_report(m: &Manifest) -> ComplexityReport {
    let mut c = Counter {
        manifest: m,
        entries: Vec::new(),
    };
    let u = |v: usize| v as u64;
    let audio_rate = u(m.audio.sample_rate as usize / m.audio.hop);
    let video_rate = u(m.audio.video_fps as usize);

    let v = &m.vvad;
    let stem_side = v.stem_side();
    let kv: usize = v.stem_kernel.iter().product();
    c.add("vvad.stem".into(), u(v.stem_channels * stem_side * stem_side * kv), video_rate);
    let mut side = v.pooled_side();
    let mut cin = v.stem_channels;
    for (i, (&ch, &s)) in v.block_channels.iter().zip(&v.block_strides).enumerate() {
        let out_side = (side + 2 - 3) / s + 1;
        let area = out_side * out_side;
        let mut macs = area * ch * 9 * cin + area * ch * 9 * ch;
        if ch != cin || s != 1 {
            macs += area * ch * cin;
        }
        c.add(format!("vvad.blocks.{i}"), u(macs), video_rate);
        side = out_side;
        cin = ch;
    }
    c.add(
        "vvad.temporal".into(),
        u(v.temporal_channels * v.temporal_kernel * cin),
        video_rate,
    );
    c.add(
        "vvad.classifier".into(),
        u(v.temporal_channels * v.classifier_hidden + v.classifier_hidden * v.classes),
        video_rate,
    );

    let t = &m.tse;
    let ladder = t.freq_ladder();
    let kvol = t.time_kernel * t.freq_kernel;
    let mut cin = t.input_channels;
    for (i, &ch) in t.encoder_channels.iter().enumerate() {
        c.add(format!("tse.encoder.{i}"), u(ch * ladder[i + 1] * kvol * cin), audio_rate);
        cin = ch;
    }
    let (h, f, hh, lh, l) = (t.hidden(), t.backbone_freqs(), t.fullband_hidden, t.lstm_hidden, t.attn_window);
    for b in 0..t.backbone_blocks {
        let p = format!("tse.blocks.{b}");
        for fc in ["fconv1", "fconv2"] {
            c.add(format!("{p}.cross.{fc}"), u(f * h * t.fconv_kernel * h), audio_rate);
        }
        c.add(format!("{p}.cross.full"), u(f * h * hh + hh * f * f + f * hh * h), audio_rate);
        c.add(format!("{p}.narrow"), u(f * 4 * lh * (lh + h) + f * lh * h), audio_rate);
        for proj in ["q", "k", "v"] {
            c.add(format!("{p}.attn.{proj}"), u(f * h * h), audio_rate);
        }
        c.add(format!("{p}.attn.window"), u(f * 2 * l * h), audio_rate);
        c.add(format!("{p}.attn.out"), u(f * h * h), audio_rate);
    }
    let n = t.encoder_channels.len();
    for i in 0..n {
        let cin = t.encoder_channels[n - 1 - i];
        let cout = if i + 1 < n { t.encoder_channels[n - 2 - i] } else { t.output_channels };
        c.add(format!("tse.decoder.{i}"), u(cin * ladder[n - i] * cout * kvol), audio_rate);
    }

    let params = c.entries.iter().map(|e| e.params).sum();
    let macs_per_second = c.entries.iter().map(|e| e.macs_per_second).sum();
    ComplexityReport {
        params,
        macs_per_second,
        breakdown: c.entries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::parameter_count;

    #[test]
    fn totals_cover_every_learnable_parameter() {
        let m = Manifest::default();
        let r = complexity_report(&m);
        assert_eq!(r.params as usize, parameter_count(&m));
        assert_eq!(r.macs_per_second, r.breakdown.iter().map(|e| e.macs_per_second).sum::<u64>());
    }

    #[test]
    fn single_linear_closed_form() {
        let r = complexity_report(&Manifest::default());
        assert_eq!(r.entry("tse.blocks.0.attn.out").unwrap().macs_per_second, 8_601_600);
    }
}
