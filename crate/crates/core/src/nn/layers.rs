//! Single-sample layer kernels on `(channels, height, width)` slices.
//!
//! Convolutions lower to one gemm through an im2col buffer. Backward passes
//! recompute im2col from the cached layer input instead of storing it.

use super::tensor::Real;

/// Unrolls 3x3 same-padded neighbourhoods: `col` is `(cin * 9) x (h * w)`.
fn im2col3x3<T: Real>(x: &[T], cin: usize, h: usize, w: usize, col: &mut [T]) {
    let hw = h * w;
    for ci in 0..cin {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[(ci * 9 + ky * 3 + kx) * hw..(ci * 9 + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col3x3`]: scatters `dcol` back onto `dx` (overwritten).
fn col2im3x3<T: Real>(dcol: &[T], cin: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    dx.fill(T::zero());
    for ci in 0..cin {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &dcol[(ci * 9 + ky * 3 + kx) * hw..(ci * 9 + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1]
                            .iter_mut()
                            .zip(&src[1..])
                            .for_each(|(d, &s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s),
                        _ => dst[1..]
                            .iter_mut()
                            .zip(&src[..w - 1])
                            .for_each(|(d, &s)| *d += s),
                    }
                }
            }
        }
    }
}

/// 3x3 same-padded convolution. `weight` is `(cout, cin, 3, 3)`.
pub fn conv3x3_forward<T: Real>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[T],
    bias: &[T],
    cout: usize,
) -> Vec<T> {
    let hw = h * w;
    let k = cin * 9;
    let mut col = vec![T::zero(); k * hw];
    im2col3x3(x, cin, h, w, &mut col);
    let mut y = Vec::with_capacity(cout * hw);
    for &b in bias.iter().take(cout) {
        y.extend(std::iter::repeat_n(b, hw));
    }
    T::gemm(cout, k, hw, weight, k, 1, &col, hw, 1, T::one(), &mut y, hw, 1);
    y
}

pub struct ConvGrads<T> {
    pub dweight: Vec<T>,
    pub dbias: Vec<T>,
    pub dx: Option<Vec<T>>,
}

#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward<T: Real>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[T],
    cout: usize,
    dy: &[T],
    need_dx: bool,
) -> ConvGrads<T> {
    let hw = h * w;
    let k = cin * 9;
    let mut col = vec![T::zero(); k * hw];
    im2col3x3(x, cin, h, w, &mut col);
    let mut dweight = vec![T::zero(); cout * k];
    // dW = dy (cout x hw) * col^T (hw x k)
    T::gemm(cout, hw, k, dy, hw, 1, &col, 1, hw, T::zero(), &mut dweight, k, 1);
    let dbias = (0..cout)
        .map(|c| dy[c * hw..(c + 1) * hw].iter().copied().sum())
        .collect();
    let dx = need_dx.then(|| {
        // dcol = W^T (k x cout) * dy (cout x hw), reusing the col buffer
        T::gemm(k, cout, hw, weight, 1, k, dy, hw, 1, T::zero(), &mut col, hw, 1);
        let mut dx = vec![T::zero(); cin * hw];
        col2im3x3(&col, cin, h, w, &mut dx);
        dx
    });
    ConvGrads { dweight, dbias, dx }
}

/// 1x1 convolution. `weight` is `(cout, cin, 1, 1)`.
pub fn conv1x1_forward<T: Real>(
    x: &[T],
    cin: usize,
    hw: usize,
    weight: &[T],
    bias: &[T],
    cout: usize,
) -> Vec<T> {
    let mut y = Vec::with_capacity(cout * hw);
    for &b in bias.iter().take(cout) {
        y.extend(std::iter::repeat_n(b, hw));
    }
    T::gemm(cout, cin, hw, weight, cin, 1, x, hw, 1, T::one(), &mut y, hw, 1);
    y
}

pub fn conv1x1_backward<T: Real>(
    x: &[T],
    cin: usize,
    hw: usize,
    weight: &[T],
    cout: usize,
    dy: &[T],
) -> ConvGrads<T> {
    let mut dweight = vec![T::zero(); cout * cin];
    T::gemm(cout, hw, cin, dy, hw, 1, x, 1, hw, T::zero(), &mut dweight, cin, 1);
    let dbias = (0..cout)
        .map(|c| dy[c * hw..(c + 1) * hw].iter().copied().sum())
        .collect();
    let mut dx = vec![T::zero(); cin * hw];
    T::gemm(cin, cout, hw, weight, 1, cin, dy, hw, 1, T::zero(), &mut dx, hw, 1);
    ConvGrads {
        dweight,
        dbias,
        dx: Some(dx),
    }
}

/// 2x2 stride-2 transposed convolution doubling spatial size.
/// `weight` is `(cin, cout, 2, 2)`.
pub fn upconv2x2_forward<T: Real>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[T],
    bias: &[T],
    cout: usize,
) -> Vec<T> {
    let hw = h * w;
    let n4 = cout * 4;
    let mut ymat = vec![T::zero(); n4 * hw];
    // ymat (cout*4 x hw) = W^T (cout*4 x cin) * x (cin x hw)
    T::gemm(n4, cin, hw, weight, 1, n4, x, hw, 1, T::zero(), &mut ymat, hw, 1);
    let (oh, ow) = (2 * h, 2 * w);
    let mut y = vec![T::zero(); cout * oh * ow];
    for co in 0..cout {
        let b = bias[co];
        for ky in 0..2 {
            for kx in 0..2 {
                let src = &ymat[(co * 4 + ky * 2 + kx) * hw..(co * 4 + ky * 2 + kx + 1) * hw];
                for i in 0..h {
                    let row = &mut y[co * oh * ow + (2 * i + ky) * ow..];
                    for j in 0..w {
                        row[2 * j + kx] = src[i * w + j] + b;
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub fn upconv2x2_backward<T: Real>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[T],
    cout: usize,
    dy: &[T],
) -> ConvGrads<T> {
    let hw = h * w;
    let n4 = cout * 4;
    let (oh, ow) = (2 * h, 2 * w);
    let mut g = vec![T::zero(); n4 * hw];
    let mut dbias = vec![T::zero(); cout];
    for co in 0..cout {
        let plane = &dy[co * oh * ow..(co + 1) * oh * ow];
        dbias[co] = plane.iter().copied().sum();
        for ky in 0..2 {
            for kx in 0..2 {
                let dst = &mut g[(co * 4 + ky * 2 + kx) * hw..(co * 4 + ky * 2 + kx + 1) * hw];
                for i in 0..h {
                    let row = &plane[(2 * i + ky) * ow..];
                    for j in 0..w {
                        dst[i * w + j] = row[2 * j + kx];
                    }
                }
            }
        }
    }
    let mut dweight = vec![T::zero(); cin * n4];
    // dW (cin x cout*4) = x (cin x hw) * g^T (hw x cout*4)
    T::gemm(cin, hw, n4, x, hw, 1, &g, 1, hw, T::zero(), &mut dweight, n4, 1);
    let mut dx = vec![T::zero(); cin * hw];
    // dx (cin x hw) = W (cin x cout*4) * g (cout*4 x hw)
    T::gemm(cin, n4, hw, weight, n4, 1, &g, hw, 1, T::zero(), &mut dx, hw, 1);
    ConvGrads {
        dweight,
        dbias,
        dx: Some(dx),
    }
}

pub fn relu_inplace<T: Real>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes gradient entries where the ReLU output was not positive.
pub fn relu_backward_inplace<T: Real>(out: &[T], d: &mut [T]) {
    for (g, &o) in d.iter_mut().zip(out) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2x2 stride-2 max pool.
pub fn maxpool2_forward<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for i in 0..oh {
            let r0 = &plane[2 * i * w..];
            let r1 = &plane[(2 * i + 1) * w..];
            for j in 0..ow {
                let m = r0[2 * j].max(r0[2 * j + 1]).max(r1[2 * j].max(r1[2 * j + 1]));
                y.push(m);
            }
        }
    }
    y
}

/// Routes each pooled gradient to the first maximal input of its window.
pub fn maxpool2_backward<T: Real>(x: &[T], c: usize, h: usize, w: usize, dy: &[T]) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = vec![T::zero(); c * h * w];
    for ci in 0..c {
        let base = ci * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let idx = [
                    base + 2 * i * w + 2 * j,
                    base + 2 * i * w + 2 * j + 1,
                    base + (2 * i + 1) * w + 2 * j,
                    base + (2 * i + 1) * w + 2 * j + 1,
                ];
                let mut best = idx[0];
                for &k in &idx[1..] {
                    if x[k] > x[best] {
                        best = k;
                    }
                }
                dx[best] += dy[ci * oh * ow + i * ow + j];
            }
        }
    }
    dx
}

/// Numerically safe logistic function kept strictly inside (0, 1).
pub fn sigmoid<T: Real>(z: T) -> T {
    let p = if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    };
    let eps = T::epsilon();
    p.max(eps).min(T::one() - eps)
}
