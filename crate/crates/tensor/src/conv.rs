//! im2col + GEMM kernels for 2-D convolution and its two adjoints.
//!
//! All three kernels share one geometry: a convolution mapping an
//! `[n, c, h, w]` image to an `[n, o, ho, wo]` response with an
//! `[o, c, k, k]` filter bank. The transposed convolution runs that map
//! backwards (response -> image) and the weight kernel contracts an image
//! with a response into a filter-shaped tensor.

use crate::elem::Elem;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

pub(crate) fn out_extent(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if padded < k || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// `c = a * b + beta * c`, with optional transposition of the row-major inputs.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Elem>(m: usize, k: usize, n: usize, a: &[T], a_t: bool, b: &[T], b_t: bool, beta: T, c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices are bounds-checked against m/k/n above and the
    // strides describe exactly those row-major (or transposed) layouts.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output positions `j < out_len` whose input position `j * stride + tap - pad`
/// lies inside `0..len`.
fn valid_range(len: usize, out_len: usize, tap: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if tap >= pad {
        0
    } else {
        (pad - tap).div_ceil(stride)
    };
    let hi = if len + pad <= tap {
        0
    } else {
        ((len + pad - tap - 1) / stride + 1).min(out_len)
    };
    (lo.min(hi), hi)
}

fn valid_cols(g: &ConvGeom, tap: usize) -> (usize, usize) {
    valid_range(g.w, g.wo, tap, g.stride, g.pad)
}

/// Filter banks this narrow skip im2col: every tap becomes a run of row updates.
const DIRECT_MAX_OUT: usize = 4;

/// Calls `f(tap, out_offset, in_offset, len)` for every contiguous run of
/// output positions of one tap; input positions advance by `stride`.
fn for_each_run(g: &ConvGeom, mut f: impl FnMut(usize, usize, usize, usize)) {
    let (s, p) = (g.stride, g.pad);
    for a in 0..g.k {
        let (ilo, ihi) = valid_range(g.h, g.ho, a, s, p);
        for b in 0..g.k {
            let (lo, hi) = valid_cols(g, b);
            if lo >= hi {
                continue;
            }
            let x0 = lo * s + b - p;
            for i in ilo..ihi {
                let y = i * s + a - p;
                f(a * g.k + b, i * g.wo + lo, y * g.w + x0, hi - lo);
            }
        }
    }
}

fn direct_conv<T: Elem>(g: &ConvGeom, x: &[T], w: &[T], out: &mut [T]) {
    let (hw, cols, kk) = (g.h * g.w, g.col_cols(), g.k * g.k);
    for o in 0..g.o {
        let dst = &mut out[o * cols..(o + 1) * cols];
        for ch in 0..g.c {
            let plane = &x[ch * hw..(ch + 1) * hw];
            let taps = &w[(o * g.c + ch) * kk..(o * g.c + ch + 1) * kk];
            for_each_run(g, |t, od, xi, len| {
                let wv = taps[t];
                let d = &mut dst[od..od + len];
                if g.stride == 1 {
                    for (d, &v) in d.iter_mut().zip(&plane[xi..xi + len]) {
                        *d += wv * v;
                    }
                } else {
                    for (j, d) in d.iter_mut().enumerate() {
                        *d += wv * plane[xi + j * g.stride];
                    }
                }
            });
        }
    }
}

fn direct_conv_transpose<T: Elem>(g: &ConvGeom, z: &[T], w: &[T], out: &mut [T]) {
    let (hw, cols, kk) = (g.h * g.w, g.col_cols(), g.k * g.k);
    for o in 0..g.o {
        let src = &z[o * cols..(o + 1) * cols];
        for ch in 0..g.c {
            let plane = &mut out[ch * hw..(ch + 1) * hw];
            let taps = &w[(o * g.c + ch) * kk..(o * g.c + ch + 1) * kk];
            for_each_run(g, |t, od, xi, len| {
                let wv = taps[t];
                let s = &src[od..od + len];
                if g.stride == 1 {
                    for (d, &v) in plane[xi..xi + len].iter_mut().zip(s) {
                        *d += wv * v;
                    }
                } else {
                    for (j, &v) in s.iter().enumerate() {
                        plane[xi + j * g.stride] += wv * v;
                    }
                }
            });
        }
    }
}

fn direct_weight_grad<T: Elem>(g: &ConvGeom, x: &[T], gy: &[T], out: &mut [T]) {
    let (hw, cols, kk) = (g.h * g.w, g.col_cols(), g.k * g.k);
    let mut acc = vec![T::ZERO; kk];
    for o in 0..g.o {
        let src = &gy[o * cols..(o + 1) * cols];
        for ch in 0..g.c {
            let plane = &x[ch * hw..(ch + 1) * hw];
            acc.fill(T::ZERO);
            for_each_run(g, |t, od, xi, len| {
                let s = &src[od..od + len];
                let mut sum = T::ZERO;
                if g.stride == 1 {
                    for (&a, &b) in s.iter().zip(&plane[xi..xi + len]) {
                        sum += a * b;
                    }
                } else {
                    for (j, &a) in s.iter().enumerate() {
                        sum += a * plane[xi + j * g.stride];
                    }
                }
                acc[t] += sum;
            });
            let taps = &mut out[(o * g.c + ch) * kk..(o * g.c + ch + 1) * kk];
            for (t, &a) in taps.iter_mut().zip(&acc) {
                *t += a;
            }
        }
    }
}

fn im2col<T: Elem>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    let cols = g.col_cols();
    for ch in 0..g.c {
        let plane = &x[ch * g.h * g.w..(ch + 1) * g.h * g.w];
        for a in 0..k {
            for b in 0..k {
                let row = (ch * k + a) * k + b;
                let dst = &mut col[row * cols..(row + 1) * cols];
                let (lo, hi) = valid_cols(g, b);
                for i in 0..g.ho {
                    let y = (i * s) as isize + a as isize - p;
                    let line = &mut dst[i * g.wo..(i + 1) * g.wo];
                    if y < 0 || y >= g.h as isize {
                        line.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[y as usize * g.w..(y as usize + 1) * g.w];
                    line[..lo].fill(T::ZERO);
                    line[hi..].fill(T::ZERO);
                    let start = (lo * s + b) as isize - p;
                    if s == 1 {
                        let start = start as usize;
                        line[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (j, v) in line[lo..hi].iter_mut().enumerate() {
                            *v = src[start as usize + j * s];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Elem>(g: &ConvGeom, col: &[T], x: &mut [T]) {
    let (k, s, p) = (g.k, g.stride, g.pad as isize);
    let cols = g.col_cols();
    for ch in 0..g.c {
        let plane = &mut x[ch * g.h * g.w..(ch + 1) * g.h * g.w];
        for a in 0..k {
            for b in 0..k {
                let row = (ch * k + a) * k + b;
                let src = &col[row * cols..(row + 1) * cols];
                let (lo, hi) = valid_cols(g, b);
                if lo >= hi {
                    continue;
                }
                let start = ((lo * s + b) as isize - p) as usize;
                for i in 0..g.ho {
                    let y = (i * s) as isize + a as isize - p;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[y as usize * g.w..(y as usize + 1) * g.w];
                    let line = &src[i * g.wo + lo..i * g.wo + hi];
                    if s == 1 {
                        for (d, &v) in dst[start..start + hi - lo].iter_mut().zip(line) {
                            *d += v;
                        }
                    } else {
                        for (j, &v) in line.iter().enumerate() {
                            dst[start + j * s] += v;
                        }
                    }
                }
            }
        }
    }
}

/// image `[n,c,h,w]` * filters `[o,c,k,k]` -> response `[n,o,ho,wo]`
pub(crate) fn conv2d<T: Elem>(g: &ConvGeom, x: &[T], w: &[T]) -> Vec<T> {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_plane = g.c * g.h * g.w;
    let out_plane = g.o * cols;
    let mut out = vec![T::ZERO; g.n * out_plane];
    let mut col = if g.is_pointwise() || g.o <= DIRECT_MAX_OUT {
        Vec::new()
    } else {
        vec![T::ZERO; rows * cols]
    };
    for s in 0..g.n {
        let xs = &x[s * in_plane..(s + 1) * in_plane];
        let ys = &mut out[s * out_plane..(s + 1) * out_plane];
        if g.o <= DIRECT_MAX_OUT {
            direct_conv(g, xs, w, ys);
        } else if g.is_pointwise() {
            gemm(g.o, rows, cols, w, false, xs, false, T::ZERO, ys);
        } else {
            im2col(g, xs, &mut col);
            gemm(g.o, rows, cols, w, false, &col, false, T::ZERO, ys);
        }
    }
    out
}

/// response `[n,o,ho,wo]` -> image `[n,c,h,w]`; the exact adjoint of [`conv2d`].
pub(crate) fn conv_transpose2d<T: Elem>(g: &ConvGeom, z: &[T], w: &[T]) -> Vec<T> {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_plane = g.o * cols;
    let out_plane = g.c * g.h * g.w;
    let mut out = vec![T::ZERO; g.n * out_plane];
    let mut col = if g.o <= DIRECT_MAX_OUT {
        Vec::new()
    } else {
        vec![T::ZERO; rows * cols]
    };
    for s in 0..g.n {
        let zs = &z[s * in_plane..(s + 1) * in_plane];
        let xs = &mut out[s * out_plane..(s + 1) * out_plane];
        if g.o <= DIRECT_MAX_OUT {
            direct_conv_transpose(g, zs, w, xs);
        } else if g.is_pointwise() {
            gemm(rows, g.o, cols, w, true, zs, false, T::ZERO, xs);
        } else {
            gemm(rows, g.o, cols, w, true, zs, false, T::ZERO, &mut col);
            col2im(g, &col, xs);
        }
    }
    out
}

/// image `[n,c,h,w]` x response `[n,o,ho,wo]` -> filter-shaped `[o,c,k,k]`,
/// summed over the batch in sample order.
pub(crate) fn conv_weight_grad<T: Elem>(g: &ConvGeom, x: &[T], gy: &[T]) -> Vec<T> {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_plane = g.c * g.h * g.w;
    let out_plane = g.o * cols;
    let mut out = vec![T::ZERO; g.o * rows];
    let mut col = if g.is_pointwise() || g.o <= DIRECT_MAX_OUT {
        Vec::new()
    } else {
        vec![T::ZERO; rows * cols]
    };
    for s in 0..g.n {
        let xs = &x[s * in_plane..(s + 1) * in_plane];
        let gs = &gy[s * out_plane..(s + 1) * out_plane];
        let beta = if s == 0 { T::ZERO } else { T::ONE };
        if g.o <= DIRECT_MAX_OUT {
            direct_weight_grad(g, xs, gs, &mut out);
        } else if g.is_pointwise() {
            gemm(g.o, cols, rows, gs, false, xs, true, beta, &mut out);
        } else {
            im2col(g, xs, &mut col);
            gemm(g.o, cols, rows, gs, false, &col, true, beta, &mut out);
        }
    }
    out
}
