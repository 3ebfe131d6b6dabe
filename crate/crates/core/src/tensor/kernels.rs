//! Dense numeric kernels on raw row-major slices.
//!
//! Every element of a product is reduced from zero in ascending index order
//! with separate multiply and add, whatever the tiling or thread split, so
//! results are bit-identical to the textbook triple loop.

use rayon::prelude::*;

use super::Scalar;

const MR: usize = 4;
const NR: usize = 32;
/// Rows handed to one worker.
const ROW_BLOCK: usize = 64;
/// Below this many multiply-adds a product runs on the calling thread.
const PAR_THRESHOLD: usize = 1 << 20;

/// Strided read-only matrix view.
#[derive(Clone, Copy, Debug)]
pub struct View<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, T: Copy> View<'a, T> {
    /// Row-major `rows×cols` view of `data`.
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        assert!(data.len() >= rows * cols, "view larger than its buffer");
        View {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    /// The transposed view, no copy.
    pub fn t(self) -> Self {
        View {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn sub_rows(self, start: usize, count: usize) -> Self {
        View {
            data: &self.data[start * self.rs..],
            rows: count,
            ..self
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.rs + j * self.cs]
    }
}

/// `c = a·b`, or `c += a·b` when `accumulate`. `c` is row-major.
pub fn gemm_view<T: Scalar>(a: View<'_, T>, b: View<'_, T>, c: &mut [T], accumulate: bool) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(b.rows, k, "gemm inner dimensions");
    assert_eq!(c.len(), m * n, "gemm output length");
    if m == 0 || n == 0 {
        return;
    }
    if m * n * k >= PAR_THRESHOLD && m > ROW_BLOCK && rayon::current_num_threads() > 1 {
        c.par_chunks_mut(ROW_BLOCK * n)
            .enumerate()
            .for_each(|(blk, cb)| {
                let i0 = blk * ROW_BLOCK;
                gemm_block(a.sub_rows(i0, cb.len() / n), b, cb, accumulate);
            });
    } else {
        gemm_block(a, b, c, accumulate);
    }
}

/// `c = a · b` with `a: m×k`, `b: k×n`, `c: m×n`. `c` is overwritten.
pub fn gemm<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    gemm_view(View::new(a, m, k), View::new(b, k, n), c, false);
}

fn gemm_block<T: Scalar>(a: View<'_, T>, b: View<'_, T>, c: &mut [T], accumulate: bool) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let zero = T::zero();
    // A as consecutive [k][MR] panels, zero-padded past m
    let panels = m.div_ceil(MR);
    let mut ap = vec![zero; panels * k * MR];
    for (pi, panel) in ap.chunks_exact_mut(k * MR).enumerate() {
        for r in 0..MR.min(m - pi * MR) {
            for p in 0..k {
                panel[p * MR + r] = a.at(pi * MR + r, p);
            }
        }
    }
    let mut bp = vec![zero; k * NR];
    for j0 in (0..n).step_by(NR) {
        let nr = NR.min(n - j0);
        for p in 0..k {
            let dst = &mut bp[p * NR..(p + 1) * NR];
            for (q, d) in dst.iter_mut().enumerate() {
                *d = if q < nr { b.at(p, j0 + q) } else { zero };
            }
        }
        for (pi, panel) in ap.chunks_exact(k * MR).enumerate() {
            let tile = micro(k, panel, &bp);
            let i0 = pi * MR;
            for (r, acc) in tile.iter().enumerate().take(MR.min(m - i0)) {
                let row = &mut c[(i0 + r) * n + j0..(i0 + r) * n + j0 + nr];
                if accumulate {
                    for (d, &v) in row.iter_mut().zip(acc) {
                        *d = *d + v;
                    }
                } else {
                    row.copy_from_slice(&acc[..nr]);
                }
            }
        }
    }
}

// Keep the indexed loop: iterator-zipped panels get vectorized with gathers.
#[inline(never)]
fn micro<T: Scalar>(k: usize, ap: &[T], bp: &[T]) -> [[T; NR]; MR] {
    let mut acc = [[T::zero(); NR]; MR];
    for p in 0..k {
        let b: &[T; NR] = bp[p * NR..p * NR + NR].try_into().expect("panel width");
        let a: &[T; MR] = ap[p * MR..p * MR + MR].try_into().expect("panel height");
        for r in 0..MR {
            let ar = a[r];
            for (x, &y) in acc[r].iter_mut().zip(b.iter()) {
                *x = *x + ar * y;
            }
        }
    }
    acc
}

/// Geometry of a 2-D cross-correlation from `[n, c_in, h, w]` to
/// `[n, c_out, oh, ow]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn in_sample(&self) -> usize {
        self.c_in * self.h * self.w
    }
    pub fn out_sample(&self) -> usize {
        self.c_out * self.oh * self.ow
    }
    /// Length of one unrolled receptive field, `c_in·kh·kw`.
    pub fn kcols(&self) -> usize {
        self.c_in * self.kh * self.kw
    }
    pub fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Output indices `lo..hi` whose tap `k` lands inside `0..limit`.
    #[inline]
    fn span(&self, k: usize, limit: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = self.pad.saturating_sub(k).div_ceil(s);
        let hi = (limit + self.pad)
            .saturating_sub(k)
            .div_ceil(s)
            .min(out_len);
        (lo.min(hi), hi)
    }
}

/// Unrolls one sample `[c_in, h, w]` into `[kcols, positions]`.
fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let pos = g.positions();
    let s = g.stride;
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (ylo, yhi) = g.span(ki, g.h, g.oh);
            for kj in 0..g.kw {
                let (xlo, xhi) = g.span(kj, g.w, g.ow);
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * pos..(row + 1) * pos];
                dst[..ylo * g.ow].fill(T::zero());
                dst[yhi * g.ow..].fill(T::zero());
                for oy in ylo..yhi {
                    let iy = oy * s + ki - g.pad;
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    let d = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    d[..xlo].fill(T::zero());
                    d[xhi..].fill(T::zero());
                    if xlo < xhi {
                        let x0 = xlo * s + kj - g.pad;
                        if s == 1 {
                            d[xlo..xhi].copy_from_slice(&src[x0..x0 + (xhi - xlo)]);
                        } else {
                            for (o, v) in d[xlo..xhi].iter_mut().zip(src[x0..].iter().step_by(s)) {
                                *o = *v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds `[kcols, positions]` back into one `[c_in, h, w]` sample.
fn col2im<T: Scalar>(g: &ConvGeom, col: &[T], x: &mut [T]) {
    let pos = g.positions();
    let s = g.stride;
    for c in 0..g.c_in {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            let (ylo, yhi) = g.span(ki, g.h, g.oh);
            for kj in 0..g.kw {
                let (xlo, xhi) = g.span(kj, g.w, g.ow);
                if xlo >= xhi {
                    continue;
                }
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * pos..(row + 1) * pos];
                for oy in ylo..yhi {
                    let iy = oy * s + ki - g.pad;
                    let x0 = xlo * s + kj - g.pad;
                    let dst = &mut plane[iy * g.w + x0..(iy + 1) * g.w];
                    let sv = &src[oy * g.ow + xlo..oy * g.ow + xhi];
                    for (d, v) in dst.iter_mut().step_by(s).zip(sv) {
                        *d = *d + *v;
                    }
                }
            }
        }
    }
}

/// `y[n] = W · im2col(x[n])` with `W: [c_out, kcols]`. No bias.
pub fn conv_forward<T: Scalar>(g: &ConvGeom, x: &[T], weight: &[T]) -> Vec<T> {
    let (kc, pos) = (g.kcols(), g.positions());
    let mut y = vec![T::zero(); g.n * g.out_sample()];
    y.par_chunks_mut(g.out_sample())
        .zip(x.par_chunks(g.in_sample()))
        .for_each_init(
            || vec![T::zero(); kc * pos],
            |col, (yn, xn)| {
                im2col(g, xn, col);
                gemm(g.c_out, kc, pos, weight, col, yn);
            },
        );
    y
}

/// Adjoint of [`conv_forward`] in the input: `dx[n] = col2im(Wᵀ · dy[n])`.
pub fn conv_input_grad<T: Scalar>(g: &ConvGeom, dy: &[T], weight: &[T]) -> Vec<T> {
    let (kc, pos) = (g.kcols(), g.positions());
    let wt = View::new(weight, g.c_out, kc).t();
    let mut dx = vec![T::zero(); g.n * g.in_sample()];
    dx.par_chunks_mut(g.in_sample())
        .zip(dy.par_chunks(g.out_sample()))
        .for_each_init(
            || vec![T::zero(); kc * pos],
            |col, (dxn, dyn_)| {
                gemm_view(wt, View::new(dyn_, g.c_out, pos), col, false);
                col2im(g, col, dxn);
            },
        );
    dx
}

/// Gradient of [`conv_forward`] in the weight, accumulated over samples in
/// order: `dW += dy[n] · im2col(x[n])ᵀ`.
pub fn conv_weight_grad<T: Scalar>(g: &ConvGeom, x: &[T], dy: &[T]) -> Vec<T> {
    let (kc, pos) = (g.kcols(), g.positions());
    let mut col = vec![T::zero(); kc * pos];
    let mut dw = vec![T::zero(); g.c_out * kc];
    for (xn, dyn_) in x.chunks(g.in_sample()).zip(dy.chunks(g.out_sample())) {
        im2col(g, xn, &mut col);
        gemm_view(
            View::new(dyn_, g.c_out, pos),
            View::new(&col, kc, pos).t(),
            &mut dw,
            true,
        );
    }
    dw
}
