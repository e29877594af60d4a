//! Raw numeric kernels over row-major slices. No shape bookkeeping here;
//! callers validate dimensions first.

use serde::{Deserialize, Serialize};

const MR: usize = 4;
const NR: usize = 8;

/// `c[m×n] += A · b[k×n]` where `A[i][p] = a[i·rs + p·cs]`. Full 4×8 tiles
/// of `c` are accumulated in registers across the whole `k` loop.
#[inline(always)]
fn gemm_strided(m: usize, k: usize, n: usize, a: &[f64], rs: usize, cs: usize, b: &[f64], c: &mut [f64]) {
    let mut i0 = 0;
    while i0 + MR <= m {
        let mut j0 = 0;
        while j0 + NR <= n {
            let mut acc = [[0.0f64; NR]; MR];
            for p in 0..k {
                let brow: &[f64; NR] = b[p * n + j0..p * n + j0 + NR].try_into().expect("tile width");
                for (r, row) in acc.iter_mut().enumerate() {
                    let av = a[(i0 + r) * rs + p * cs];
                    for (cv, bv) in row.iter_mut().zip(brow) {
                        *cv += av * bv;
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                let crow = &mut c[(i0 + r) * n + j0..(i0 + r) * n + j0 + NR];
                crow.iter_mut().zip(row).for_each(|(cv, v)| *cv += v);
            }
            j0 += NR;
        }
        if j0 < n {
            edge(i0, i0 + MR, j0, k, n, a, rs, cs, b, c);
        }
        i0 += MR;
    }
    if i0 < m {
        edge(i0, m, 0, k, n, a, rs, cs, b, c);
    }
}

/// Rows `i_lo..i_hi`, columns `j_lo..n` of [`gemm_strided`].
#[allow(clippy::too_many_arguments)]
fn edge(i_lo: usize, i_hi: usize, j_lo: usize, k: usize, n: usize, a: &[f64], rs: usize, cs: usize, b: &[f64], c: &mut [f64]) {
    let w = n - j_lo;
    let mut acc = vec![0.0; w];
    for i in i_lo..i_hi {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for p in 0..k {
            let av = a[i * rs + p * cs];
            let brow = &b[p * n + j_lo..(p + 1) * n];
            acc.iter_mut().zip(brow).for_each(|(cv, bv)| *cv += av * bv);
        }
        c[i * n + j_lo..(i + 1) * n].iter_mut().zip(&acc).for_each(|(cv, v)| *cv += v);
    }
}

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    gemm_strided(m, k, n, a, k, 1, b, c);
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    if m >= MR {
        let bt = transpose(b, n, k);
        gemm_nn(m, k, n, a, &bt, c);
        return;
    }
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`
pub fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    gemm_strided(m, k, n, a, 1, m, b, c);
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Stride, zero padding and channel grouping of a 2-d cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec { stride: (1, 1), padding: (0, 0), groups: 1 }
    }
}

impl Conv2dSpec {
    pub fn padded(ph: usize, pw: usize) -> Self {
        Conv2dSpec { padding: (ph, pw), ..Default::default() }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    /// Output spatial size for an `h × w` input and a `kh × kw` kernel, or
    /// `None` when the kernel does not fit the padded input.
    pub fn output_size(&self, h: usize, w: usize, kh: usize, kw: usize) -> Option<(usize, usize)> {
        let (ph, pw) = self.padding;
        let (sh, sw) = self.stride;
        if sh == 0 || sw == 0 || kh == 0 || kw == 0 || kh > h + 2 * ph || kw > w + 2 * pw {
            return None;
        }
        Some(((h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1))
    }
}

/// Geometry of one conv call, resolved from the operand shapes.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub h: usize,
    pub w: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub spec: Conv2dSpec,
}

impl ConvGeom {
    fn cg(&self) -> usize {
        self.in_ch / self.spec.groups
    }

    fn fg(&self) -> usize {
        self.out_ch / self.spec.groups
    }

    fn k(&self) -> usize {
        self.cg() * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfolds the receptive fields of group `g` of sample `b` into a `K × P`
/// matrix (K = channels-per-group · kh · kw, P = output positions).
fn im2col(x: &[f64], geom: &ConvGeom, b: usize, g: usize, cols: &mut [f64]) {
    let (ph, pw) = geom.spec.padding;
    let (sh, sw) = geom.spec.stride;
    let p = geom.p();
    let cg = geom.cg();
    for cl in 0..cg {
        let c = g * cg + cl;
        let plane = &x[((b * geom.in_ch + c) * geom.h) * geom.w..][..geom.h * geom.w];
        for i in 0..geom.kh {
            for j in 0..geom.kw {
                let row = (cl * geom.kh + i) * geom.kw + j;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..geom.oh {
                    let iy = (oy * sh + i) as isize - ph as isize;
                    let out_row = &mut dst[oy * geom.ow..(oy + 1) * geom.ow];
                    if iy < 0 || iy >= geom.h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * geom.w..(iy as usize + 1) * geom.w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * sw + j) as isize - pw as isize;
                        *o = if ix < 0 || ix >= geom.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], geom: &ConvGeom, b: usize, g: usize, dx: &mut [f64]) {
    let (ph, pw) = geom.spec.padding;
    let (sh, sw) = geom.spec.stride;
    let p = geom.p();
    let cg = geom.cg();
    for cl in 0..cg {
        let c = g * cg + cl;
        let plane = &mut dx[((b * geom.in_ch + c) * geom.h) * geom.w..][..geom.h * geom.w];
        for i in 0..geom.kh {
            for j in 0..geom.kw {
                let row = (cl * geom.kh + i) * geom.kw + j;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..geom.oh {
                    let iy = (oy * sh + i) as isize - ph as isize;
                    if iy < 0 || iy >= geom.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * geom.w..(iy as usize + 1) * geom.w];
                    for ox in 0..geom.ow {
                        let ix = (ox * sw + j) as isize - pw as isize;
                        if ix >= 0 && (ix as usize) < geom.w {
                            dst[ix as usize] += src[oy * geom.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(x: &[f64], weight: &[f64], bias: Option<&[f64]>, geom: &ConvGeom) -> Vec<f64> {
    let (k, p, fg) = (geom.k(), geom.p(), geom.fg());
    let mut out = vec![0.0; geom.batch * geom.out_ch * p];
    let mut cols = vec![0.0; k * p];
    for b in 0..geom.batch {
        for g in 0..geom.spec.groups {
            im2col(x, geom, b, g, &mut cols);
            let wg = &weight[g * fg * k..(g + 1) * fg * k];
            let og = &mut out[(b * geom.out_ch + g * fg) * p..(b * geom.out_ch + (g + 1) * fg) * p];
            gemm_nn(fg, k, p, wg, &cols, og);
        }
        if let Some(bias) = bias {
            for f in 0..geom.out_ch {
                out[(b * geom.out_ch + f) * p..(b * geom.out_ch + f + 1) * p].iter_mut().for_each(|v| *v += bias[f]);
            }
        }
    }
    out
}

/// Accumulates input, weight and bias gradients for an upstream gradient `dy`.
pub fn conv2d_backward(x: &[f64], weight: &[f64], dy: &[f64], geom: &ConvGeom, dx: Option<&mut [f64]>, dw: Option<&mut [f64]>, db: Option<&mut [f64]>) {
    let (k, p, fg) = (geom.k(), geom.p(), geom.fg());
    let mut cols = vec![0.0; k * p];
    let mut dcols = vec![0.0; k * p];
    let mut dx = dx;
    let mut dw = dw;
    for b in 0..geom.batch {
        for g in 0..geom.spec.groups {
            let dyg = &dy[(b * geom.out_ch + g * fg) * p..(b * geom.out_ch + (g + 1) * fg) * p];
            if let Some(dw) = dw.as_deref_mut() {
                im2col(x, geom, b, g, &mut cols);
                gemm_nt(fg, p, k, dyg, &cols, &mut dw[g * fg * k..(g + 1) * fg * k]);
            }
            if let Some(dx) = dx.as_deref_mut() {
                dcols.fill(0.0);
                let wg = &weight[g * fg * k..(g + 1) * fg * k];
                gemm_tn(k, fg, p, wg, dyg, &mut dcols);
                col2im(&dcols, geom, b, g, dx);
            }
        }
    }
    if let Some(db) = db {
        for b in 0..geom.batch {
            for f in 0..geom.out_ch {
                db[f] += dy[(b * geom.out_ch + f) * p..(b * geom.out_ch + f + 1) * p].iter().sum::<f64>();
            }
        }
    }
}
