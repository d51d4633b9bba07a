use alloc::format;

use rand::Rng;

use super::conv::Conv2d;
use super::ops::{concat, sigmoid, split};
use super::params::{Grads, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Convolutional LSTM cell: all four gates come from one convolution over `[x, h]`.
///
/// Gate channel blocks are ordered input, forget, output, candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLstmCell {
    pub gates: Conv2d,
    pub input_channels: usize,
    pub hidden_channels: usize,
}

/// Everything the backward pass of one cell update needs.
#[derive(Debug, Clone)]
pub struct LstmTrace<F> {
    xh: Tensor<F>,
    /// Activated gates `[i, f, o, g]`.
    gates: Tensor<F>,
    c_prev: Tensor<F>,
    tanh_c: Tensor<F>,
}

impl ConvLstmCell {
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        input_channels: usize,
        hidden_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        let gates = Conv2d::new(
            store,
            &format!("{name}.gates"),
            input_channels + hidden_channels,
            4 * hidden_channels,
            kernel,
            1,
            1.0,
            rng,
        );
        // forget-gate bias starts at +1
        let bias = store.value_mut(gates.bias);
        bias[hidden_channels..2 * hidden_channels].iter_mut().for_each(|b| *b = F::one());
        ConvLstmCell { gates, input_channels, hidden_channels }
    }

    /// Returns `(h, c, trace)` for one time step.
    pub fn forward<F: Real>(
        &self,
        store: &ParamStore<F>,
        x: &Tensor<F>,
        h_prev: &Tensor<F>,
        c_prev: &Tensor<F>,
    ) -> (Tensor<F>, Tensor<F>, LstmTrace<F>) {
        let xh = concat(x, h_prev);
        let mut gates = self.gates.forward(store, &xh);
        let [b, _, hh, ww] = gates.shape();
        let hc = self.hidden_channels;
        let plane = hh * ww;
        let mut h = Tensor::zeros([b, hc, hh, ww]);
        let mut c = Tensor::zeros([b, hc, hh, ww]);
        let mut tanh_c = Tensor::zeros([b, hc, hh, ww]);
        for n in 0..b {
            let g = gates.item_mut(n);
            let (sig, cand) = g.split_at_mut(3 * hc * plane);
            sig.iter_mut().for_each(|v| *v = sigmoid(*v));
            cand.iter_mut().for_each(|v| *v = v.tanh());
            let g = gates.item(n);
            let cp = c_prev.item(n);
            let (ci, hi, ti) = (c.item_mut(n), h.item_mut(n), tanh_c.item_mut(n));
            let len = hc * plane;
            for j in 0..len {
                let (ig, fg, og, gg) = (g[j], g[len + j], g[2 * len + j], g[3 * len + j]);
                ci[j] = fg * cp[j] + ig * gg;
                ti[j] = ci[j].tanh();
                hi[j] = og * ti[j];
            }
        }
        let trace = LstmTrace { xh, gates, c_prev: c_prev.clone(), tanh_c };
        (h, c, trace)
    }

    /// Given gradients w.r.t. the new hidden and cell states, returns
    /// `(dx, dh_prev, dc_prev)` and accumulates gate-conv gradients.
    pub fn backward<F: Real>(
        &self,
        store: &ParamStore<F>,
        grads: &mut Grads<F>,
        trace: &LstmTrace<F>,
        dh: &Tensor<F>,
        dc: &Tensor<F>,
    ) -> (Tensor<F>, Tensor<F>, Tensor<F>) {
        let [b, _, hh, ww] = trace.gates.shape();
        let hc = self.hidden_channels;
        let len = hc * hh * ww;
        let mut dgates = Tensor::zeros(trace.gates.shape());
        let mut dc_prev = Tensor::zeros(dc.shape());
        let one = F::one();
        for n in 0..b {
            let g = trace.gates.item(n);
            let (t, cp) = (trace.tanh_c.item(n), trace.c_prev.item(n));
            let (dhn, dcn) = (dh.item(n), dc.item(n));
            let dg = dgates.item_mut(n);
            let dcp = dc_prev.item_mut(n);
            for j in 0..len {
                let (ig, fg, og, gg) = (g[j], g[len + j], g[2 * len + j], g[3 * len + j]);
                let dct = dcn[j] + dhn[j] * og * (one - t[j] * t[j]);
                let d_o = dhn[j] * t[j];
                let d_i = dct * gg;
                let d_f = dct * cp[j];
                let d_g = dct * ig;
                dcp[j] = dct * fg;
                dg[j] = d_i * ig * (one - ig);
                dg[len + j] = d_f * fg * (one - fg);
                dg[2 * len + j] = d_o * og * (one - og);
                dg[3 * len + j] = d_g * (one - gg * gg);
            }
        }
        let dxh = self
            .gates
            .backward(store, grads, &trace.xh, &dgates, true)
            .expect("input gradient requested");
        let (dx, dh_prev) = split(&dxh, self.input_channels);
        (dx, dh_prev, dc_prev)
    }
}
