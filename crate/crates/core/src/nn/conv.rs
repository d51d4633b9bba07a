use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::params::{Grads, ParamId, ParamStore};
use crate::real::{matmul, Mat, Real};
use crate::tensor::Tensor;

/// 2-D convolution with square kernel, zero padding and bias, lowered to GEMM via im2col.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    /// Registers a conv layer whose weights are uniform in `±gain/sqrt(fan_in)`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let bound = gain / crate::math::sqrt(fan_in as f64);
        let weight: Vec<F> =
            (0..out_channels * fan_in).map(|_| F::of(rng.gen_range(-bound..=bound))).collect();
        let weight = store.add(
            format!("{name}.weight"),
            vec![out_channels, in_channels, kernel, kernel],
            weight,
        );
        let bias = store.add(format!("{name}.bias"), vec![out_channels], vec![F::zero(); out_channels]);
        Conv2d { weight, bias, in_channels, out_channels, kernel, stride, padding: kernel / 2 }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel;
        let p = 2 * self.padding;
        ((h + p - k) / self.stride + 1, (w + p - k) / self.stride + 1)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    pub fn forward<F: Real>(&self, store: &ParamStore<F>, x: &Tensor<F>) -> Tensor<F> {
        assert_eq!(x.channels(), self.in_channels, "conv input channels");
        let [b, _, h, w] = x.shape();
        let (ho, wo) = self.output_size(h, w);
        let kk = self.in_channels * self.kernel * self.kernel;
        let n = ho * wo;
        let weight = store.value(self.weight);
        let bias = store.value(self.bias);
        let mut out = Tensor::zeros([b, self.out_channels, ho, wo]);
        let mut cols = if self.is_pointwise() { Vec::new() } else { vec![F::zero(); kk * n] };
        for i in 0..b {
            let src: &[F] = if self.is_pointwise() {
                x.item(i)
            } else {
                self.im2col(x.item(i), h, w, ho, wo, &mut cols);
                &cols
            };
            let dst = out.item_mut(i);
            for (c, plane) in dst.chunks_mut(n).enumerate() {
                plane.iter_mut().for_each(|v| *v = bias[c]);
            }
            matmul(Mat::new(weight, self.out_channels, kk), Mat::new(src, kk, n), dst, F::one());
        }
        out
    }

    /// Accumulates weight and bias gradients; returns the input gradient when asked for.
    pub fn backward<F: Real>(
        &self,
        store: &ParamStore<F>,
        grads: &mut Grads<F>,
        x: &Tensor<F>,
        dy: &Tensor<F>,
        need_dx: bool,
    ) -> Option<Tensor<F>> {
        let [b, _, h, w] = x.shape();
        let (ho, wo) = self.output_size(h, w);
        debug_assert_eq!(dy.shape(), [b, self.out_channels, ho, wo]);
        let kk = self.in_channels * self.kernel * self.kernel;
        let n = ho * wo;
        let weight = store.value(self.weight);
        let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
        let mut cols = if self.is_pointwise() { Vec::new() } else { vec![F::zero(); kk * n] };
        let mut dcols = if self.is_pointwise() || !need_dx { Vec::new() } else { vec![F::zero(); kk * n] };
        for i in 0..b {
            let dyi = dy.item(i);
            {
                let gb = grads.get_mut(self.bias);
                for (c, plane) in dyi.chunks(n).enumerate() {
                    gb[c] += plane.iter().copied().sum::<F>();
                }
            }
            let src: &[F] = if self.is_pointwise() {
                x.item(i)
            } else {
                self.im2col(x.item(i), h, w, ho, wo, &mut cols);
                &cols
            };
            matmul(
                Mat::new(dyi, self.out_channels, n),
                Mat::new(src, kk, n).t(),
                grads.get_mut(self.weight),
                F::one(),
            );
            if let Some(dx) = dx.as_mut() {
                let wt = Mat::new(weight, self.out_channels, kk).t();
                if self.is_pointwise() {
                    matmul(wt, Mat::new(dyi, self.out_channels, n), dx.item_mut(i), F::zero());
                } else {
                    matmul(wt, Mat::new(dyi, self.out_channels, n), &mut dcols, F::zero());
                    self.col2im(&dcols, h, w, ho, wo, dx.item_mut(i));
                }
            }
        }
        dx
    }

    fn im2col<F: Real>(&self, x: &[F], h: usize, w: usize, ho: usize, wo: usize, cols: &mut [F]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let mut row = 0;
        for c in 0..self.in_channels {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                    for oh in 0..ho {
                        let ih = (oh * s + ki) as isize - p;
                        let out_row = &mut dst[oh * wo..(oh + 1) * wo];
                        if ih < 0 || ih >= h as isize {
                            out_row.iter_mut().for_each(|v| *v = F::zero());
                            continue;
                        }
                        let in_row = &plane[ih as usize * w..(ih as usize + 1) * w];
                        for (ow, v) in out_row.iter_mut().enumerate() {
                            let iw = (ow * s + kj) as isize - p;
                            *v = if iw < 0 || iw >= w as isize { F::zero() } else { in_row[iw as usize] };
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    fn col2im<F: Real>(&self, cols: &[F], h: usize, w: usize, ho: usize, wo: usize, dx: &mut [F]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let mut row = 0;
        for c in 0..self.in_channels {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                    for oh in 0..ho {
                        let ih = (oh * s + ki) as isize - p;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let in_row = &mut plane[ih as usize * w..(ih as usize + 1) * w];
                        for (ow, &g) in src[oh * wo..(oh + 1) * wo].iter().enumerate() {
                            let iw = (ow * s + kj) as isize - p;
                            if iw >= 0 && iw < w as isize {
                                in_row[iw as usize] += g;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}
