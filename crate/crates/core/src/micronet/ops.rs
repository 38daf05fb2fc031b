//! Forward and backward kernels for the layers of the U-Net.
//!
//! Convolutions are stride 1 with "same" zero padding and run as
//! im2col + GEMM, one sample at a time.

use super::tensor::{Real, Tensor4};

/// Columns `[lo, hi)` of an output row whose source column `x + dx` is inside `0..w`.
fn valid_span(w: usize, dx: isize) -> (usize, usize) {
    let lo = (-dx).clamp(0, w as isize) as usize;
    let hi = (w as isize - dx).clamp(0, w as isize) as usize;
    (lo, hi.max(lo))
}

fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, k: usize, col: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                let (lo, hi) = valid_span(w, dx);
                for y in 0..h {
                    let sy = y as isize + dy;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    if hi > lo {
                        let s0 = (lo as isize + dx) as usize;
                        dst[lo..hi].copy_from_slice(&src[s0..s0 + hi - lo]);
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], c: usize, h: usize, w: usize, k: usize, dx: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * hw..][..hw];
                let oy = ky as isize - pad;
                let ox = kx as isize - pad;
                let (lo, hi) = valid_span(w, ox);
                if hi == lo {
                    continue;
                }
                let s0 = (lo as isize + ox) as usize;
                let s1 = s0 + hi - lo;
                for y in 0..h {
                    let sy = y as isize + oy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w + lo..y * w + hi];
                    let dst = &mut plane[sy as usize * w + s0..sy as usize * w + s1];
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d = *d + v;
                    }
                }
            }
        }
    }
}

/// `weight` is `out_c x in_c x k x k`, `bias` has `out_c` entries.
pub fn conv2d<T: Real>(
    x: &Tensor4<T>,
    weight: &[T],
    bias: &[T],
    out_c: usize,
    k: usize,
) -> Tensor4<T> {
    let [n, c, h, w] = x.dims();
    let hw = h * w;
    let ck = c * k * k;
    debug_assert_eq!(weight.len(), out_c * ck);
    let mut out = Tensor4::zeros([n, out_c, h, w]);
    let mut col = if k == 1 {
        Vec::new()
    } else {
        vec![T::zero(); ck * hw]
    };
    for i in 0..n {
        let xs = x.sample(i);
        let b: &[T] = if k == 1 {
            xs
        } else {
            im2col(xs, c, h, w, k, &mut col);
            &col
        };
        let ys = out.sample_mut(i);
        for (o, &bv) in bias.iter().enumerate() {
            ys[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v = bv);
        }
        T::gemm(
            out_c,
            ck,
            hw,
            T::one(),
            weight,
            ck as isize,
            1,
            b,
            hw as isize,
            1,
            T::one(),
            ys,
            hw as isize,
            1,
        );
    }
    out
}

/// Accumulates weight/bias gradients; returns the input gradient when `need_dx`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Real>(
    x: &Tensor4<T>,
    weight: &[T],
    dy: &Tensor4<T>,
    out_c: usize,
    k: usize,
    dweight: &mut [T],
    dbias: &mut [T],
    need_dx: bool,
) -> Option<Tensor4<T>> {
    let [n, c, h, w] = x.dims();
    let hw = h * w;
    let ck = c * k * k;
    let mut dx = need_dx.then(|| Tensor4::zeros([n, c, h, w]));
    let mut col = if k == 1 {
        Vec::new()
    } else {
        vec![T::zero(); ck * hw]
    };
    let mut dcol = if need_dx {
        vec![T::zero(); ck * hw]
    } else {
        Vec::new()
    };
    for i in 0..n {
        let g = dy.sample(i);
        for (o, db) in dbias.iter_mut().enumerate() {
            *db = g[o * hw..(o + 1) * hw].iter().fold(*db, |acc, &v| acc + v);
        }
        let xs = x.sample(i);
        let b: &[T] = if k == 1 {
            xs
        } else {
            im2col(xs, c, h, w, k, &mut col);
            &col
        };
        // dW (out_c x ck) += dy (out_c x hw) * col^T (hw x ck)
        T::gemm(
            out_c,
            hw,
            ck,
            T::one(),
            g,
            hw as isize,
            1,
            b,
            1,
            hw as isize,
            T::one(),
            dweight,
            ck as isize,
            1,
        );
        if let Some(dx) = dx.as_mut() {
            let target: &mut [T] = if k == 1 { dx.sample_mut(i) } else { &mut dcol };
            // dcol (ck x hw) = W^T (ck x out_c) * dy (out_c x hw)
            T::gemm(
                ck,
                out_c,
                hw,
                T::one(),
                weight,
                1,
                ck as isize,
                g,
                hw as isize,
                1,
                T::zero(),
                target,
                hw as isize,
                1,
            );
            if k != 1 {
                col2im(&dcol, c, h, w, k, dx.sample_mut(i));
            }
        }
    }
    dx
}

pub fn relu_inplace<T: Real>(x: &mut Tensor4<T>) {
    x.values_mut().iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero()
        }
    });
}

/// Masks `dy` by `out > 0` where `out` is the ReLU output.
pub fn relu_backward_inplace<T: Real>(out: &Tensor4<T>, dy: &mut Tensor4<T>) {
    for (g, &o) in dy.values_mut().iter_mut().zip(out.values()) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2x2 max pooling; also returns the flat input index chosen for each output.
pub fn maxpool2<T: Real>(x: &Tensor4<T>) -> (Tensor4<T>, Vec<u32>) {
    let [n, c, h, w] = x.dims();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    let xv = x.values();
    let ov = out.values_mut();
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + 2 * y * w + 2 * xx;
                for idx in [
                    base + 2 * y * w + 2 * xx + 1,
                    base + (2 * y + 1) * w + 2 * xx,
                    base + (2 * y + 1) * w + 2 * xx + 1,
                ] {
                    if xv[idx] > xv[best] {
                        best = idx;
                    }
                }
                ov[o] = xv[best];
                arg.push(best as u32);
                o += 1;
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward<T: Real>(dy: &Tensor4<T>, arg: &[u32], in_dims: [usize; 4]) -> Tensor4<T> {
    let mut dx = Tensor4::zeros(in_dims);
    let dv = dx.values_mut();
    for (&g, &i) in dy.values().iter().zip(arg) {
        dv[i as usize] = dv[i as usize] + g;
    }
    dx
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h, w] = x.dims();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    let xv = x.values();
    let ov = out.values_mut();
    for plane in 0..n * c {
        for y in 0..oh {
            let src = &xv[plane * h * w + (y / 2) * w..][..w];
            let dst = &mut ov[plane * oh * ow + y * ow..][..ow];
            for (xx, d) in dst.iter_mut().enumerate() {
                *d = src[xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Real>(dy: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, oh, ow] = dy.dims();
    let (h, w) = (oh / 2, ow / 2);
    let mut dx = Tensor4::zeros([n, c, h, w]);
    let gv = dy.values();
    let dv = dx.values_mut();
    for plane in 0..n * c {
        for y in 0..oh {
            let src = &gv[plane * oh * ow + y * ow..][..ow];
            let dst = &mut dv[plane * h * w + (y / 2) * w..][..w];
            for (xx, &g) in src.iter().enumerate() {
                dst[xx / 2] = dst[xx / 2] + g;
            }
        }
    }
    dx
}

/// Channel concatenation `a ‖ b`.
pub fn concat_channels<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Tensor4<T> {
    let [n, ca, h, w] = a.dims();
    let cb = b.c();
    debug_assert_eq!(b.dims(), [n, cb, h, w]);
    let mut out = Tensor4::zeros([n, ca + cb, h, w]);
    for i in 0..n {
        let dst = out.sample_mut(i);
        let (da, db) = dst.split_at_mut(ca * h * w);
        da.copy_from_slice(a.sample(i));
        db.copy_from_slice(b.sample(i));
    }
    out
}

pub fn split_channels<T: Real>(d: &Tensor4<T>, ca: usize) -> (Tensor4<T>, Tensor4<T>) {
    let [n, c, h, w] = d.dims();
    let mut a = Tensor4::zeros([n, ca, h, w]);
    let mut b = Tensor4::zeros([n, c - ca, h, w]);
    for i in 0..n {
        let (sa, sb) = d.sample(i).split_at(ca * h * w);
        a.sample_mut(i).copy_from_slice(sa);
        b.sample_mut(i).copy_from_slice(sb);
    }
    (a, b)
}

pub fn sigmoid_inplace<T: Real>(x: &mut Tensor4<T>) {
    x.values_mut()
        .iter_mut()
        .for_each(|v| *v = T::one() / (T::one() + (-*v).exp()));
}

/// Softmax over the channel axis of each pixel.
pub fn channel_softmax<T: Real>(logits: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h, w] = logits.dims();
    let hw = h * w;
    let mut out = Tensor4::zeros([n, c, h, w]);
    for i in 0..n {
        let src = logits.sample(i);
        let dst = out.sample_mut(i);
        for p in 0..hw {
            let max = (0..c)
                .map(|ch| src[ch * hw + p])
                .fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for ch in 0..c {
                let e = (src[ch * hw + p] - max).exp();
                dst[ch * hw + p] = e;
                total = total + e;
            }
            for ch in 0..c {
                dst[ch * hw + p] = dst[ch * hw + p] / total;
            }
        }
    }
    out
}

/// Gradient with respect to logits given softmax output `probs` and `dprobs`.
pub fn channel_softmax_backward<T: Real>(probs: &Tensor4<T>, dprobs: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h, w] = probs.dims();
    let hw = h * w;
    let mut out = Tensor4::zeros([n, c, h, w]);
    for i in 0..n {
        let p = probs.sample(i);
        let g = dprobs.sample(i);
        let dst = out.sample_mut(i);
        for px in 0..hw {
            let dot = (0..c).fold(T::zero(), |acc, ch| acc + p[ch * hw + px] * g[ch * hw + px]);
            for ch in 0..c {
                dst[ch * hw + px] = p[ch * hw + px] * (g[ch * hw + px] - dot);
            }
        }
    }
    out
}
