//! Dense numeric kernels behind the autodiff ops.
//!
//! Every reduction runs left to right over the contracted index, so the
//! register-blocked GEMM produces bit-identical results to a naive triple
//! loop. Convolutions lower to GEMM through im2col over bands of output
//! rows, which bounds scratch memory without touching summation order.

use crate::scalar::Scalar;

const MR: usize = 4;
const NR: usize = 8;

/// `C[m×n] = A[m×k] · B[k×n]` (or `+=` when `accumulate`), row-major with
/// explicit leading dimensions.
#[allow(clippy::too_many_arguments)]
pub fn gemm<S: Scalar>(
    m: usize,
    n: usize,
    k: usize,
    a: &[S],
    lda: usize,
    b: &[S],
    ldb: usize,
    c: &mut [S],
    ldc: usize,
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    let mut panel = vec![S::zero(); k * NR];
    for j0 in (0..n).step_by(NR) {
        let nb = NR.min(n - j0);
        for p in 0..k {
            let row = &b[p * ldb + j0..p * ldb + j0 + nb];
            let dst = &mut panel[p * NR..p * NR + NR];
            dst[..nb].copy_from_slice(row);
            for d in &mut dst[nb..] {
                *d = S::zero();
            }
        }
        for i0 in (0..m).step_by(MR) {
            let mb = MR.min(m - i0);
            let mut acc = [[S::zero(); NR]; MR];
            if mb == MR {
                let rows: [&[S]; MR] = std::array::from_fn(|ii| &a[(i0 + ii) * lda..(i0 + ii) * lda + k]);
                for p in 0..k {
                    let bp: &[S; NR] = panel[p * NR..p * NR + NR].try_into().unwrap();
                    for ii in 0..MR {
                        let av = rows[ii][p];
                        for jj in 0..NR {
                            acc[ii][jj] = acc[ii][jj] + av * bp[jj];
                        }
                    }
                }
            } else {
                for (ii, acc_row) in acc.iter_mut().enumerate().take(mb) {
                    let arow = &a[(i0 + ii) * lda..(i0 + ii) * lda + k];
                    for (p, &av) in arow.iter().enumerate() {
                        let bp = &panel[p * NR..p * NR + NR];
                        for jj in 0..NR {
                            acc_row[jj] = acc_row[jj] + av * bp[jj];
                        }
                    }
                }
            }
            for (ii, acc_row) in acc.iter().enumerate().take(mb) {
                let out = &mut c[(i0 + ii) * ldc + j0..(i0 + ii) * ldc + j0 + nb];
                if accumulate {
                    for (o, &v) in out.iter_mut().zip(acc_row) {
                        *o = *o + v;
                    }
                } else {
                    out.copy_from_slice(&acc_row[..nb]);
                }
            }
        }
    }
}

pub fn transpose<S: Scalar>(src: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::zero(); rows * cols];
    const BLK: usize = 32;
    for r0 in (0..rows).step_by(BLK) {
        for c0 in (0..cols).step_by(BLK) {
            for r in r0..(r0 + BLK).min(rows) {
                for c in c0..(c0 + BLK).min(cols) {
                    out[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
    out
}

/// Geometry of a 2-D cross-correlation over `[C, H, W, B]` input, where the
/// trailing `B` axis is an independent batch (timesteps for spiking layers,
/// 1 for plain feature maps).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub batch: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn macs(&self) -> usize {
        self.filters * self.patch_len() * self.out_height() * self.out_width() * self.batch
    }

    fn band_rows(&self) -> usize {
        const SCRATCH: usize = 1 << 18;
        let per_row = self.patch_len() * self.out_width() * self.batch;
        (SCRATCH / per_row.max(1)).clamp(1, self.out_height())
    }

    /// Input coordinate for output position `o` and kernel tap `t`, if inside.
    fn source(&self, o: usize, t: usize, limit: usize) -> Option<usize> {
        let i = (o * self.stride + t) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < limit).then_some(i as usize)
    }
}

fn im2col<S: Scalar>(x: &[S], g: &ConvGeom, oy0: usize, oy1: usize, cols: &mut [S]) {
    let (ow, b, k) = (g.out_width(), g.batch, g.kernel);
    let n = (oy1 - oy0) * ow * b;
    for c in 0..g.channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * n..][..n];
                for oy in oy0..oy1 {
                    let dst = &mut row[(oy - oy0) * ow * b..][..ow * b];
                    let Some(iy) = g.source(oy, ky, g.height) else {
                        dst.fill(S::zero());
                        continue;
                    };
                    for ox in 0..ow {
                        let cell = &mut dst[ox * b..ox * b + b];
                        match g.source(ox, kx, g.width) {
                            Some(ix) => {
                                let at = ((c * g.height + iy) * g.width + ix) * b;
                                cell.copy_from_slice(&x[at..at + b]);
                            }
                            None => cell.fill(S::zero()),
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add<S: Scalar>(cols: &[S], g: &ConvGeom, oy0: usize, oy1: usize, gx: &mut [S]) {
    let (ow, b, k) = (g.out_width(), g.batch, g.kernel);
    let n = (oy1 - oy0) * ow * b;
    for c in 0..g.channels {
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * n..][..n];
                for oy in oy0..oy1 {
                    let Some(iy) = g.source(oy, ky, g.height) else {
                        continue;
                    };
                    for ox in 0..ow {
                        if let Some(ix) = g.source(ox, kx, g.width) {
                            let at = ((c * g.height + iy) * g.width + ix) * b;
                            let src = &row[((oy - oy0) * ow + ox) * b..][..b];
                            for (d, &s) in gx[at..at + b].iter_mut().zip(src) {
                                *d = *d + s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Forward cross-correlation; output layout `[F, OH, OW, B]`.
pub fn conv2d_forward<S: Scalar>(x: &[S], w: &[S], g: &ConvGeom) -> Vec<S> {
    let (oh, ow, b) = (g.out_height(), g.out_width(), g.batch);
    let plane = oh * ow * b;
    let mut out = vec![S::zero(); g.filters * plane];
    let band = g.band_rows();
    let mut cols = vec![S::zero(); g.patch_len() * band * ow * b];
    for oy0 in (0..oh).step_by(band) {
        let oy1 = (oy0 + band).min(oh);
        let n = (oy1 - oy0) * ow * b;
        im2col(x, g, oy0, oy1, &mut cols[..g.patch_len() * n]);
        gemm(
            g.filters,
            n,
            g.patch_len(),
            w,
            g.patch_len(),
            &cols[..g.patch_len() * n],
            n,
            &mut out[oy0 * ow * b..],
            plane,
            false,
        );
    }
    out
}

/// Gradients of the cross-correlation with respect to input and weights.
pub fn conv2d_backward<S: Scalar>(
    x: &[S],
    w: &[S],
    gout: &[S],
    g: &ConvGeom,
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<S>>, Option<Vec<S>>) {
    let (oh, ow, b) = (g.out_height(), g.out_width(), g.batch);
    let plane = oh * ow * b;
    let kk = g.patch_len();
    let mut gx = need_x.then(|| vec![S::zero(); x.len()]);
    let mut gw = need_w.then(|| vec![S::zero(); w.len()]);
    let wt = need_x.then(|| transpose(w, g.filters, kk));
    let band = g.band_rows();
    let mut cols = vec![S::zero(); kk * band * ow * b];
    for oy0 in (0..oh).step_by(band) {
        let oy1 = (oy0 + band).min(oh);
        let n = (oy1 - oy0) * ow * b;
        let go = &gout[oy0 * ow * b..];
        if let Some(gw) = gw.as_mut() {
            im2col(x, g, oy0, oy1, &mut cols[..kk * n]);
            let patches = transpose(&cols[..kk * n], kk, n);
            gemm(g.filters, kk, n, go, plane, &patches, kk, gw, kk, true);
        }
        if let (Some(gx), Some(wt)) = (gx.as_mut(), wt.as_ref()) {
            let gcols = &mut cols[..kk * n];
            gemm(kk, n, g.filters, wt, g.filters, go, plane, gcols, n, false);
            col2im_add(gcols, g, oy0, oy1, gx);
        }
    }
    (gx, gw)
}

/// 2×2 stride-2 max pool over `[C, H, W, B]`. Returns the pooled values and,
/// per output, the flat input index that won. Ties go to the lowest index.
pub fn maxpool2_forward<S: Scalar>(
    x: &[S],
    channels: usize,
    height: usize,
    width: usize,
    batch: usize,
) -> (Vec<S>, Vec<u32>) {
    let (oh, ow) = (height / 2, width / 2);
    let n = channels * oh * ow * batch;
    let mut out = Vec::with_capacity(n);
    let mut arg = Vec::with_capacity(n);
    for c in 0..channels {
        for oy in 0..oh {
            for ox in 0..ow {
                for bi in 0..batch {
                    let mut best = usize::MAX;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let at = ((c * height + 2 * oy + dy) * width + 2 * ox + dx) * batch + bi;
                        if best == usize::MAX || x[at] > x[best] {
                            best = at;
                        }
                    }
                    out.push(x[best]);
                    arg.push(best as u32);
                }
            }
        }
    }
    (out, arg)
}
