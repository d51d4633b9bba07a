//! Parameter-free elementwise and reshaping ops with their adjoints.

use alloc::vec::Vec;

use rand::Rng;

use crate::real::Real;
use crate::tensor::Tensor;

pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub fn softplus<F: Real>(x: F) -> F {
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn relu_inplace<F: Real>(t: &mut Tensor<F>) {
    t.data_mut().iter_mut().for_each(|v| *v = v.max(F::zero()));
}

/// Zeroes `dy` wherever the rectifier output `y` was not positive.
pub fn relu_backward_inplace<F: Real>(dy: &mut Tensor<F>, y: &Tensor<F>) {
    for (g, &v) in dy.data_mut().iter_mut().zip(y.data()) {
        if v <= F::zero() {
            *g = F::zero();
        }
    }
}

/// Spatial (channel-wise) dropout mask of length `batch * channels`.
///
/// Entries are `0` or `1 / (1 - rate)`; one uniform draw per entry in row-major order.
pub fn channel_dropout_mask<F: Real, R: Rng + ?Sized>(batch: usize, channels: usize, rate: f64, rng: &mut R) -> Vec<F> {
    let keep = F::of(1.0 / (1.0 - rate));
    (0..batch * channels)
        .map(|_| if rng.gen::<f64>() < rate { F::zero() } else { keep })
        .collect()
}

/// Multiplies every `(n, c)` plane by its mask entry; serves forward and backward.
pub fn apply_channel_mask<F: Real>(t: &mut Tensor<F>, mask: &[F]) {
    let plane = t.plane_len();
    debug_assert_eq!(mask.len() * plane, t.data().len());
    for (chunk, &m) in t.data_mut().chunks_mut(plane).zip(mask) {
        if m == F::zero() {
            chunk.iter_mut().for_each(|v| *v = F::zero());
        } else if m != F::one() {
            chunk.iter_mut().for_each(|v| *v *= m);
        }
    }
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    let [b, c, h, w] = x.shape();
    let mut out = Tensor::zeros([b, c, 2 * h, 2 * w]);
    for n in 0..b {
        for ch in 0..c {
            let src = x.plane(n, ch);
            let dst = out.plane_mut(n, ch);
            for i in 0..2 * h {
                let src_row = &src[(i / 2) * w..(i / 2 + 1) * w];
                let dst_row = &mut dst[i * 2 * w..(i + 1) * 2 * w];
                for (j, v) in dst_row.iter_mut().enumerate() {
                    *v = src_row[j / 2];
                }
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]: sums each 2×2 block.
pub fn upsample2_backward<F: Real>(dy: &Tensor<F>) -> Tensor<F> {
    let [b, c, h2, w2] = dy.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = Tensor::zeros([b, c, h, w]);
    for n in 0..b {
        for ch in 0..c {
            let src = dy.plane(n, ch);
            let dst = out.plane_mut(n, ch);
            for i in 0..h2 {
                for j in 0..w2 {
                    dst[(i / 2) * w + j / 2] += src[i * w2 + j];
                }
            }
        }
    }
    out
}

/// Concatenates along the channel axis.
pub fn concat<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let [n, ca, h, w] = a.shape();
    let cb = b.channels();
    assert_eq!([b.batch(), b.height(), b.width()], [n, h, w], "concat shapes");
    let mut out = Tensor::zeros([n, ca + cb, h, w]);
    for i in 0..n {
        let dst = out.item_mut(i);
        dst[..a.item_len()].copy_from_slice(a.item(i));
        dst[a.item_len()..].copy_from_slice(b.item(i));
    }
    out
}

/// Splits a channel-concatenated tensor back into its first `ca` channels and the rest.
pub fn split<F: Real>(d: &Tensor<F>, ca: usize) -> (Tensor<F>, Tensor<F>) {
    let cb = d.channels() - ca;
    (d.channel_slice(0, ca), d.channel_slice(ca, cb))
}

pub fn add_inplace<F: Real>(acc: &mut Tensor<F>, x: &Tensor<F>) {
    debug_assert_eq!(acc.shape(), x.shape());
    acc.data_mut().iter_mut().zip(x.data()).for_each(|(a, &b)| *a += b);
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn activations_are_stable_at_extremes() {
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert!((softplus(0.0f64) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(800.0f64), 800.0);
        assert!(softplus(-800.0f64) >= 0.0);
    }

    #[test]
    fn upsample_adjoint_identity() {
        // <up(x), y> == <x, up^T(y)>
        let x = Tensor::from_vec([1, 2, 2, 3], (0..12).map(|i| i as f64 - 3.0).collect()).unwrap();
        let y = Tensor::from_vec([1, 2, 4, 6], (0..48).map(|i| (i as f64 * 0.37).cos()).collect()).unwrap();
        let lhs: f64 = upsample2(&x).data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(upsample2_backward(&y).data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn concat_then_split_restores_parts() {
        let a = Tensor::from_vec([2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec([2, 2, 1, 2], (0..8).map(|i| i as f64 * 10.0).collect()).unwrap();
        let c = concat(&a, &b);
        assert_eq!(c.shape(), [2, 3, 1, 2]);
        let (a2, b2) = split(&c, 1);
        assert_eq!(a2, a);
        assert_eq!(b2, b);
    }

    #[test]
    fn dropout_mask_scales_survivors() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mask: Vec<f64> = channel_dropout_mask(4, 100, 0.25, &mut rng);
        assert!(mask.iter().all(|&m| m == 0.0 || (m - 4.0 / 3.0).abs() < 1e-15));
        let dropped = mask.iter().filter(|&&m| m == 0.0).count();
        assert!((50..150).contains(&dropped));
    }
}
