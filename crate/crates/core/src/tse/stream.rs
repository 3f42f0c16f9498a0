//! Frame-by-frame TSE inference with explicit causal state.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{permute_into, Tensor};

use super::{attend_window, TseModel, TseWorkspace};

/// Everything a TSE stream remembers between frames: convolution histories,
/// per-frequency LSTM states, and the key/value caches of every attention
/// module.
#[derive(Debug, Clone)]
pub struct TseState<T> {
    enc_hist: Vec<Vec<T>>,
    dec_hist: Vec<Vec<T>>,
    lstm_h: Vec<Vec<T>>,
    lstm_c: Vec<Vec<T>>,
    /// `(F', 2L, C)` per block; every frame is written twice so the last `L`
    /// frames are always one contiguous slice.
    k_ring: Vec<Vec<T>>,
    v_ring: Vec<Vec<T>>,
    cursor: usize,
    frames: usize,
    x0: Tensor<T>,
    skips: Vec<Tensor<T>>,
    win: Tensor<T>,
    z: Tensor<T>,
    d: Tensor<T>,
    out: Tensor<T>,
    ws: TseWorkspace<T>,
}

impl<T: Scalar> TseState<T> {
    pub fn reset(&mut self) {
        for v in self
            .enc_hist
            .iter_mut()
            .chain(&mut self.dec_hist)
            .chain(&mut self.lstm_h)
            .chain(&mut self.lstm_c)
            .chain(&mut self.k_ring)
            .chain(&mut self.v_ring)
        {
            v.iter_mut().for_each(|x| *x = T::zero());
        }
        self.cursor = 0;
        self.frames = 0;
    }

    /// Audio frames consumed since creation or the last reset.
    pub fn frames(&self) -> usize {
        self.frames
    }
}

/// Builds `(C, k, F)` from `k - 1` remembered frames and the new one, then
/// rolls the history forward.
fn push_window<T: Scalar>(hist: &mut [T], new: &Tensor<T>, win: &mut Tensor<T>) -> Result<()> {
    let (c, f) = (new.dims()[0], new.dims()[2]);
    let keep = hist.len() / (c * f);
    let k = keep + 1;
    win.resize_to(&[c, k, f])?;
    let w = win.data_mut();
    for ch in 0..c {
        let hrow = &mut hist[ch * keep * f..(ch + 1) * keep * f];
        let nrow = &new.data()[ch * f..(ch + 1) * f];
        w[ch * k * f..ch * k * f + keep * f].copy_from_slice(hrow);
        w[(ch * k + keep) * f..(ch + 1) * k * f].copy_from_slice(nrow);
        if keep > 0 {
            hrow.copy_within(f.., 0);
            hrow[(keep - 1) * f..].copy_from_slice(nrow);
        }
    }
    Ok(())
}

impl<T: Scalar> TseModel<T> {
    pub fn new_state(&self) -> TseState<T> {
        let cfg = &self.cfg;
        let ladder = cfg.freq_ladder();
        let keep = cfg.time_kernel - 1;
        let mut enc_hist = Vec::new();
        let mut cin = cfg.input_channels;
        for (i, &c) in cfg.encoder_channels.iter().enumerate() {
            enc_hist.push(vec![T::zero(); cin * keep * ladder[i]]);
            cin = c;
        }
        let n = cfg.encoder_channels.len();
        let dec_hist = (0..n)
            .map(|i| vec![T::zero(); cfg.encoder_channels[n - 1 - i] * keep * ladder[n - i]])
            .collect();
        let (f, h, l) = (cfg.backbone_freqs(), cfg.hidden(), cfg.attn_window);
        let nb = self.blocks.len();
        let e = || Tensor::with_capacity(0);
        TseState {
            enc_hist,
            dec_hist,
            lstm_h: vec![vec![T::zero(); f * cfg.lstm_hidden]; nb],
            lstm_c: vec![vec![T::zero(); f * cfg.lstm_hidden]; nb],
            k_ring: vec![vec![T::zero(); f * 2 * l * h]; nb],
            v_ring: vec![vec![T::zero(); f * 2 * l * h]; nb],
            cursor: 0,
            frames: 0,
            x0: e(),
            skips: (0..n).map(|_| e()).collect(),
            win: e(),
            z: e(),
            d: e(),
            out: e(),
            ws: TseWorkspace::default(),
        }
    }

    /// One audio frame: mixture bins `re`/`im` (161 each) and the frame's VAD
    /// label in, `(4, 161)` mask out. Matches the corresponding frame of
    /// [`TseModel::forward`] exactly.
    pub fn step(&self, st: &mut TseState<T>, re: &[T], im: &[T], vad: bool, mask: &mut [T]) -> Result<()> {
        let fbin = self.cfg.freq_bins;
        if re.len() != fbin || im.len() != fbin || mask.len() != self.cfg.output_channels * fbin {
            return Err(Error::shape(
                "tse step",
                format!("re {} im {} mask {} for {fbin} bins", re.len(), im.len(), mask.len()),
            ));
        }
        st.x0.resize_to(&[self.cfg.input_channels, 1, fbin])?;
        {
            let g = if vad { T::one() } else { T::zero() };
            let x = st.x0.data_mut();
            x[..fbin].copy_from_slice(re);
            x[fbin..2 * fbin].copy_from_slice(im);
            for i in 0..fbin {
                x[2 * fbin + i] = re[i] * g;
                x[3 * fbin + i] = im[i] * g;
            }
        }

        for i in 0..self.enc.len() {
            let (done, rest) = st.skips.split_at_mut(i);
            let input = if i == 0 { &st.x0 } else { &done[i - 1] };
            push_window(&mut st.enc_hist[i], input, &mut st.win)?;
            self.enc_stage(i, &st.win, true, &mut st.ws.conv, &mut rest[0])?;
        }

        let last = st.skips.last().expect("non-empty");
        permute_into(last, &[1, 2, 0], &mut st.z)?;
        let (heads, l) = (self.cfg.attn_heads, self.cfg.attn_window);
        let (f, c) = (st.z.dims()[1], st.z.dims()[2]);
        for (b, blk) in self.blocks.iter().enumerate() {
            blk.crossband(&mut st.z, &mut st.ws)?;
            blk.narrowband(&mut st.z, &mut st.lstm_h[b], &mut st.lstm_c[b], &mut st.ws)?;

            blk.project(&st.z, &mut st.ws)?;
            let ws = &mut st.ws;
            ws.b.resize_to(&[1, f, c])?;
            ws.scores.resize(l, T::zero());
            let (kr, vr) = (&mut st.k_ring[b], &mut st.v_ring[b]);
            for fi in 0..f {
                let base = fi * 2 * l * c;
                let row = fi * c..(fi + 1) * c;
                for slot in [st.cursor, st.cursor + l] {
                    let at = base + slot * c;
                    kr[at..at + c].copy_from_slice(&ws.k.data()[row.clone()]);
                    vr[at..at + c].copy_from_slice(&ws.v.data()[row.clone()]);
                }
                let win = base + (st.cursor + 1) * c..base + (st.cursor + 1 + l) * c;
                attend_window(
                    &ws.q.data()[row.clone()],
                    &kr[win.clone()],
                    &vr[win],
                    heads,
                    &mut ws.scores,
                    &mut ws.b.data_mut()[row],
                );
            }
            blk.attention_output(&mut st.z, &mut st.ws)?;
        }
        st.cursor = (st.cursor + 1) % l;

        permute_into(&st.z, &[2, 0, 1], &mut st.d)?;
        let n = self.dec.len();
        for i in 0..n {
            st.d.add_assign(&st.skips[n - 1 - i])?;
            push_window(&mut st.dec_hist[i], &st.d, &mut st.win)?;
            self.dec_stage(i, &st.win, true, &mut st.ws.conv, &mut st.out)?;
            std::mem::swap(&mut st.d, &mut st.out);
        }
        mask.copy_from_slice(st.d.data());
        st.frames += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use crate::signal::ComplexSpectrogram;
    use crate::tse::TseModel;
    use crate::weights::{Manifest, WeightSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn streaming_matches_offline_bitwise() {
        let mut m = Manifest::default();
        m.tse.attn_window = 6;
        let model: TseModel<f64> = TseModel::load(&WeightSet::init_random(m, 4).unwrap()).unwrap();
        let t = 14;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let re: Vec<f64> = (0..t * 161).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let im: Vec<f64> = (0..t * 161).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let vad: Vec<bool> = (0..t).map(|i| (i / 4) % 2 == 0).collect();
        let y = ComplexSpectrogram::from_planes(t, 161, re.clone(), im.clone()).unwrap();
        let offline = model.forward(&y, &vad).unwrap();
        let mut st = model.new_state();
        let mut mask = vec![0.0; 4 * 161];
        for ti in 0..t {
            let r = ti * 161..(ti + 1) * 161;
            model.step(&mut st, &re[r.clone()], &im[r], vad[ti], &mut mask).unwrap();
            for ch in 0..4 {
                for fi in 0..161 {
                    assert_eq!(mask[ch * 161 + fi], offline.tensor().at(&[ch, ti, fi]), "t {ti} ch {ch} f {fi}");
                }
            }
        }
    }
}
