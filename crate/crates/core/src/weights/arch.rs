//! Expected tensor table derived from a manifest.

use super::Manifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Dense/conv weight with the given fan-in.
    Weight { fan_in: usize },
    Bias { fan_in: usize },
    NormGain,
    NormBias,
    RunningMean,
    RunningVar,
    PreluSlope,
}

impl ParamKind {
    /// Running statistics are stored but not learned.
    pub fn is_learnable(&self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

struct Table(Vec<ParamSpec>);

impl Table {
    fn push(&mut self, name: String, shape: Vec<usize>, kind: ParamKind) {
        self.0.push(ParamSpec { name, shape, kind });
    }

    fn weight(&mut self, name: String, shape: Vec<usize>, fan_in: usize) {
        self.push(name, shape, ParamKind::Weight { fan_in });
    }

    fn bias(&mut self, name: String, shape: Vec<usize>, fan_in: usize) {
        self.push(name, shape, ParamKind::Bias { fan_in });
    }

    fn batch_norm(&mut self, prefix: &str, c: usize) {
        self.push(format!("{prefix}.weight"), vec![c], ParamKind::NormGain);
        self.push(format!("{prefix}.bias"), vec![c], ParamKind::NormBias);
        self.push(format!("{prefix}.running_mean"), vec![c], ParamKind::RunningMean);
        self.push(format!("{prefix}.running_var"), vec![c], ParamKind::RunningVar);
    }

    fn layer_norm(&mut self, prefix: &str, c: usize) {
        self.push(format!("{prefix}.weight"), vec![c], ParamKind::NormGain);
        self.push(format!("{prefix}.bias"), vec![c], ParamKind::NormBias);
    }

    fn linear(&mut self, prefix: &str, input: usize, output: usize) {
        self.weight(format!("{prefix}.weight"), vec![output, input], input);
        self.bias(format!("{prefix}.bias"), vec![output], input);
    }

    fn prelu(&mut self, prefix: &str, c: usize) {
        self.push(format!("{prefix}.weight"), vec![c], ParamKind::PreluSlope);
    }
}

/// Every tensor the architecture described by `m` requires, in a fixed order.
pub fn parameter_table(m: &Manifest) -> Vec<ParamSpec> {
    let mut t = Table(Vec::new());
    let v = &m.vvad;

    // VVAD stem: Conv3D without bias (BN follows).
    let k = v.stem_kernel;
    t.weight(
        "vvad.stem.conv.weight".into(),
        vec![v.stem_channels, 1, k[0], k[1], k[2]],
        k.iter().product(),
    );
    t.batch_norm("vvad.stem.bn", v.stem_channels);

    let mut cin = v.stem_channels;
    for (i, (&c, &s)) in v.block_channels.iter().zip(&v.block_strides).enumerate() {
        let p = format!("vvad.blocks.{i}");
        t.weight(format!("{p}.conv1.weight"), vec![c, cin, 3, 3], cin * 9);
        t.batch_norm(&format!("{p}.bn1"), c);
        t.weight(format!("{p}.conv2.weight"), vec![c, c, 3, 3], c * 9);
        t.batch_norm(&format!("{p}.bn2"), c);
        if c != cin || s != 1 {
            t.weight(format!("{p}.downsample.conv.weight"), vec![c, cin, 1, 1], cin);
            t.batch_norm(&format!("{p}.downsample.bn"), c);
        }
        cin = c;
    }
    t.weight(
        "vvad.temporal.conv.weight".into(),
        vec![v.temporal_channels, cin, v.temporal_kernel],
        cin * v.temporal_kernel,
    );
    t.batch_norm("vvad.temporal.bn", v.temporal_channels);
    t.linear("vvad.classifier.0", v.temporal_channels, v.classifier_hidden);
    t.linear("vvad.classifier.1", v.classifier_hidden, v.classes);

    // TSE encoder
    let e = &m.tse;
    let tk = e.time_kernel;
    let fk = e.freq_kernel;
    let mut cin = e.input_channels;
    for (i, &c) in e.encoder_channels.iter().enumerate() {
        let p = format!("tse.encoder.{i}");
        t.weight(format!("{p}.conv.weight"), vec![c, cin, tk, fk], cin * tk * fk);
        t.bias(format!("{p}.conv.bias"), vec![c], cin * tk * fk);
        t.batch_norm(&format!("{p}.bn"), c);
        t.prelu(&format!("{p}.prelu"), c);
        cin = c;
    }

    let h = e.hidden();
    let fb = e.backbone_freqs();
    for b in 0..e.backbone_blocks {
        let p = format!("tse.blocks.{b}");
        for f in ["fconv1", "fconv2"] {
            let q = format!("{p}.cross.{f}");
            t.layer_norm(&format!("{q}.norm"), h);
            t.weight(format!("{q}.conv.weight"), vec![h, h, e.fconv_kernel], h * e.fconv_kernel);
            t.bias(format!("{q}.conv.bias"), vec![h], h * e.fconv_kernel);
            t.prelu(&format!("{q}.prelu"), h);
        }
        let q = format!("{p}.cross.full");
        t.linear(&format!("{q}.in"), h, e.fullband_hidden);
        t.weight(format!("{q}.freq.weight"), vec![e.fullband_hidden, fb, fb], fb);
        t.bias(format!("{q}.freq.bias"), vec![e.fullband_hidden, fb], fb);
        t.linear(&format!("{q}.out"), e.fullband_hidden, h);

        let q = format!("{p}.narrow");
        t.layer_norm(&format!("{q}.norm"), h);
        let lh = e.lstm_hidden;
        t.weight(format!("{q}.lstm.weight_ih"), vec![4 * lh, h], h);
        t.weight(format!("{q}.lstm.weight_hh"), vec![4 * lh, lh], lh);
        t.bias(format!("{q}.lstm.bias_ih"), vec![4 * lh], lh);
        t.bias(format!("{q}.lstm.bias_hh"), vec![4 * lh], lh);
        t.linear(&format!("{q}.linear"), lh, h);

        for proj in ["q", "k", "v"] {
            let q = format!("{p}.attn.{proj}");
            t.linear(&format!("{q}.linear"), h, h);
            t.prelu(&format!("{q}.prelu"), h);
            t.layer_norm(&format!("{q}.norm"), h);
        }
        t.linear(&format!("{p}.attn.out"), h, h);
    }

    // Decoder mirrors the encoder with transposed convs (weights in, out, k...).
    let n = e.encoder_channels.len();
    for i in 0..n {
        let cin = e.encoder_channels[n - 1 - i];
        let cout = if i + 1 < n {
            e.encoder_channels[n - 2 - i]
        } else {
            e.output_channels
        };
        let p = format!("tse.decoder.{i}");
        t.weight(format!("{p}.deconv.weight"), vec![cin, cout, tk, fk], cin * tk * fk);
        t.bias(format!("{p}.deconv.bias"), vec![cout], cin * tk * fk);
        if i + 1 < n {
            t.batch_norm(&format!("{p}.bn"), cout);
            t.prelu(&format!("{p}.prelu"), cout);
        }
    }
    t.0
}

/// Learnable parameter count of the architecture.
pub fn parameter_count(m: &Manifest) -> usize {
    parameter_table(m)
        .iter()
        .filter(|p| p.kind.is_learnable())
        .map(ParamSpec::numel)
        .sum()
}
