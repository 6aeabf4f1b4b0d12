//! Matrix kernels. Written as row updates (`y += a * x`) or four-lane dot
//! products so the compiler vectorizes them; every reduction runs in a fixed
//! order, which keeps results bit-reproducible.

#[inline]
pub fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `c[m, n] += a[m, k] · b[k, n]`. Zero entries of `a` are skipped, which
/// pays off on sparse rasters and post-ReLU activations.
pub fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av != 0.0 {
                axpy(crow, av, &b[p * n..(p + 1) * n]);
            }
        }
    }
}

/// `c[m, k] += a[m, n] · b[k, n]ᵀ`.
pub fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            c[i * k + p] += dot(arow, &b[p * n..(p + 1) * n]);
        }
    }
}

/// `c[k, n] += a[m, k]ᵀ · b[m, n]`.
pub fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av != 0.0 {
                axpy(&mut c[p * n..(p + 1) * n], av, brow);
            }
        }
    }
}

/// Geometry of a 3×3, padding-1 convolution over NHWC activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h - 1) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w - 1) / self.stride + 1
    }

    pub fn patch(&self) -> usize {
        9 * self.c
    }

    pub fn out_pixels(&self) -> usize {
        self.batch * self.out_h() * self.out_w()
    }

    /// Input offsets feeding output pixel `(b, oy, ox)`, in patch order
    /// `(ky, kx)`, with `None` for padding.
    fn taps(&self, b: usize, oy: usize, ox: usize) -> impl Iterator<Item = Option<usize>> + '_ {
        (0..9).map(move |t| {
            let iy = (oy * self.stride + t / 3) as isize - 1;
            let ix = (ox * self.stride + t % 3) as isize - 1;
            if iy < 0 || ix < 0 || iy >= self.h as isize || ix >= self.w as isize {
                None
            } else {
                Some(((b * self.h + iy as usize) * self.w + ix as usize) * self.c)
            }
        })
    }
}

/// Unfolds NHWC input into `[out_pixels, 9·c]` patches.
pub fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (oh, ow, c) = (g.out_h(), g.out_w(), g.c);
    let mut cols = vec![0.0; g.out_pixels() * g.patch()];
    let mut row = 0;
    for b in 0..g.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let dst = &mut cols[row * g.patch()..(row + 1) * g.patch()];
                for (t, src) in g.taps(b, oy, ox).enumerate() {
                    if let Some(s) = src {
                        dst[t * c..(t + 1) * c].copy_from_slice(&x[s..s + c]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub fn col2im(dcols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let (oh, ow, c) = (g.out_h(), g.out_w(), g.c);
    let mut row = 0;
    for b in 0..g.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let src = &dcols[row * g.patch()..(row + 1) * g.patch()];
                for (t, dst) in g.taps(b, oy, ox).enumerate() {
                    if let Some(d) = dst {
                        for (o, v) in dx[d..d + c].iter_mut().zip(&src[t * c..(t + 1) * c]) {
                            *o += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}
