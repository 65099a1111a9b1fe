//! Convolution + layer normalization + ReLU block, forward and backward.

use crate::scalar::Real;

const LN_EPS: f64 = 1e-5;

/// Dot product with eight independent accumulators so the loop vectorizes.
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub in_hw: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> usize {
        (self.in_hw - self.k) / self.stride + 1
    }

    fn patch(&self) -> usize {
        self.in_c * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.out_hw() * self.out_hw()
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ConvCache<T> {
    /// im2col matrix, `patch × positions`.
    col: Vec<T>,
    /// Normalized pre-affine activations.
    y: Vec<T>,
    inv_std: T,
    /// Block output after ReLU.
    pub out: Vec<T>,
}

fn im2col<T: Real>(g: &ConvGeom, input: &[T]) -> Vec<T> {
    let (ohw, k, s, hw) = (g.out_hw(), g.k, g.stride, g.in_hw);
    let npos = g.positions();
    let mut col = vec![T::zero(); g.patch() * npos];
    for c in 0..g.in_c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * npos..(row + 1) * npos];
                for oy in 0..ohw {
                    let src = (c * hw + oy * s + ky) * hw + kx;
                    for ox in 0..ohw {
                        dst[oy * ohw + ox] = input[src + ox * s];
                    }
                }
            }
        }
    }
    col
}

fn col2im<T: Real>(g: &ConvGeom, dcol: &[T]) -> Vec<T> {
    let (ohw, k, s, hw) = (g.out_hw(), g.k, g.stride, g.in_hw);
    let npos = g.positions();
    let mut din = vec![T::zero(); g.in_c * hw * hw];
    for c in 0..g.in_c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &dcol[row * npos..(row + 1) * npos];
                for oy in 0..ohw {
                    let dst = (c * hw + oy * s + ky) * hw + kx;
                    for ox in 0..ohw {
                        din[dst + ox * s] += src[oy * ohw + ox];
                    }
                }
            }
        }
    }
    din
}

pub(crate) fn conv_forward<T: Real>(
    g: &ConvGeom,
    input: &[T],
    p: &[T],
    w: usize,
    b: usize,
    gain: usize,
    beta: usize,
) -> ConvCache<T> {
    let col = im2col(g, input);
    let (m, kk, n) = (g.out_c, g.patch(), g.positions());
    let mut z = vec![T::zero(); m * n];
    for o in 0..m {
        z[o * n..(o + 1) * n].fill(p[b + o]);
    }
    T::gemm(m, kk, n, T::one(), &p[w..w + m * kk], kk as isize, 1, &col, n as isize, 1, T::one(), &mut z, n as isize, 1);

    let len = T::lit(z.len() as f64);
    let mean = z.iter().copied().sum::<T>() / len;
    let var = z.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / len;
    let inv_std = T::one() / (var + T::lit(LN_EPS)).sqrt();
    let y: Vec<T> = z.iter().map(|v| (*v - mean) * inv_std).collect();
    let mut out = vec![T::zero(); m * n];
    for o in 0..m {
        let (gg, bb) = (p[gain + o], p[beta + o]);
        for j in 0..n {
            out[o * n + j] = (gg * y[o * n + j] + bb).max(T::zero());
        }
    }
    ConvCache { col, y, inv_std, out }
}

/// Accumulates parameter gradients into `grad` and returns the gradient
/// w.r.t. the block input (empty when `need_input` is false).
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Real>(
    g: &ConvGeom,
    cache: &ConvCache<T>,
    dout: &[T],
    p: &[T],
    grad: &mut [T],
    w: usize,
    b: usize,
    gain: usize,
    beta: usize,
    need_input: bool,
) -> Vec<T> {
    let (m, kk, n) = (g.out_c, g.patch(), g.positions());
    let mut dy = vec![T::zero(); m * n];
    for o in 0..m {
        let gg = p[gain + o];
        let (mut dg, mut db) = (T::zero(), T::zero());
        for j in 0..n {
            let i = o * n + j;
            if cache.out[i] > T::zero() {
                let d = dout[i];
                dg += d * cache.y[i];
                db += d;
                dy[i] = d * gg;
            }
        }
        grad[gain + o] += dg;
        grad[beta + o] += db;
    }
    let len = T::lit(dy.len() as f64);
    let mean_dy = dy.iter().copied().sum::<T>() / len;
    let mean_dyy = dy.iter().zip(&cache.y).map(|(a, b)| *a * *b).sum::<T>() / len;
    let dz: Vec<T> = dy
        .iter()
        .zip(&cache.y)
        .map(|(d, y)| cache.inv_std * (*d - mean_dy - *y * mean_dyy))
        .collect();

    for o in 0..m {
        grad[b + o] += dz[o * n..(o + 1) * n].iter().copied().sum::<T>();
    }
    // dW = dz · colᵀ
    T::gemm(m, n, kk, T::one(), &dz, n as isize, 1, &cache.col, 1, n as isize, T::one(), &mut grad[w..w + m * kk], kk as isize, 1);
    if !need_input {
        return Vec::new();
    }
    // dcol = Wᵀ · dz
    let mut dcol = vec![T::zero(); kk * n];
    T::gemm(kk, m, n, T::one(), &p[w..w + m * kk], 1, kk as isize, &dz, n as isize, 1, T::zero(), &mut dcol, n as isize, 1);
    col2im(g, &dcol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_roundtrip_counts_overlaps() {
        let g = ConvGeom { in_c: 1, in_hw: 4, out_c: 1, k: 2, stride: 1 };
        let input: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let col = im2col(&g, &input);
        assert_eq!(col.len(), 4 * 9);
        // first patch row = top-left pixel of each window
        assert_eq!(&col[..9], &[0.0, 1.0, 2.0, 4.0, 5.0, 6.0, 8.0, 9.0, 10.0]);
        let ones = vec![1.0; col.len()];
        let back = col2im(&g, &ones);
        // corner pixels sit in one window, centre pixels in four
        assert_eq!(back[0], 1.0);
        assert_eq!(back[5], 4.0);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let g = ConvGeom { in_c: 2, in_hw: 5, out_c: 3, k: 3, stride: 2 };
        let input: Vec<f64> = (0..50).map(|v| ((v * 7) % 5) as f64 - 2.0).collect();
        let nw = 3 * 2 * 9;
        let mut p: Vec<f64> = (0..nw).map(|v| ((v * 3) % 7) as f64 / 7.0 - 0.4).collect();
        p.extend([0.1, -0.2, 0.3]); // bias
        p.extend([1.0; 3]); // gain
        p.extend([0.0; 3]); // beta
        let cache = conv_forward(&g, &input, &p, 0, nw, nw + 3, nw + 6);
        let ohw = g.out_hw();
        let mut z = Vec::new();
        for o in 0..3 {
            for oy in 0..ohw {
                for ox in 0..ohw {
                    let mut acc = p[nw + o];
                    for c in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                acc += p[((o * 2 + c) * 3 + ky) * 3 + kx]
                                    * input[(c * 5 + oy * 2 + ky) * 5 + ox * 2 + kx];
                            }
                        }
                    }
                    z.push(acc);
                }
            }
        }
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64;
        for (i, v) in z.iter().enumerate() {
            let expect = ((v - mean) / (var + LN_EPS).sqrt()).max(0.0);
            assert!((cache.out[i] - expect).abs() < 1e-12);
        }
    }
}
