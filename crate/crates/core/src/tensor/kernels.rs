//! Pure array kernels behind the tape ops. All buffers are row-major f64;
//! callers guarantee shapes, so these never allocate error paths.

/// Static geometry of a 2-D convolution, shared by im2col and its adjoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// None when the kernel does not fit the padded input.
    pub fn new(b: usize, c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || k == 0 || k > h + 2 * pad || k > w + 2 * pad {
            return None;
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        Some(ConvGeom { b, c, h, w, k, stride, pad, oh, ow })
    }

    pub fn patch_len(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn rows(&self) -> usize {
        self.b * self.oh * self.ow
    }
}

/// C[m,n] = A[m,k] · B[k,n].
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Gather conv patches: x[B,C,H,W] -> cols[B·OH·OW, C·k·k].
/// Out-of-bounds taps read zero (implicit zero padding).
pub(crate) fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let plen = g.patch_len();
    let mut out = vec![0.0; g.rows() * plen];
    for bi in 0..g.b {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = ((bi * g.oh + oy) * g.ow + ox) * plen;
                for ci in 0..g.c {
                    for ky in 0..g.k {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        for kx in 0..g.k {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix < 0 || ix >= g.w as isize {
                                continue;
                            }
                            let src = ((bi * g.c + ci) * g.h + iy as usize) * g.w + ix as usize;
                            out[row + (ci * g.k + ky) * g.k + kx] = x[src];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of im2col: scatter-add cols back into x[B,C,H,W].
pub(crate) fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let plen = g.patch_len();
    let mut out = vec![0.0; g.b * g.c * g.h * g.w];
    for bi in 0..g.b {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = ((bi * g.oh + oy) * g.ow + ox) * plen;
                for ci in 0..g.c {
                    for ky in 0..g.k {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        for kx in 0..g.k {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix < 0 || ix >= g.w as isize {
                                continue;
                            }
                            let dst = ((bi * g.c + ci) * g.h + iy as usize) * g.w + ix as usize;
                            out[dst] += cols[row + (ci * g.k + ky) * g.k + kx];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Permute matmul output rows into feature maps:
/// cols[B·OH·OW, F] -> y[B,F,OH,OW].
pub(crate) fn cols_to_nchw(cols: &[f64], b: usize, f: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut out = vec![0.0; b * f * oh * ow];
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((bi * oh + oy) * ow + ox) * f;
                for fi in 0..f {
                    out[((bi * f + fi) * oh + oy) * ow + ox] = cols[row + fi];
                }
            }
        }
    }
    out
}

/// Inverse (and adjoint) of cols_to_nchw.
pub(crate) fn nchw_to_cols(x: &[f64], b: usize, f: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut out = vec![0.0; b * f * oh * ow];
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((bi * oh + oy) * ow + ox) * f;
                for fi in 0..f {
                    out[row + fi] = x[((bi * f + fi) * oh + oy) * ow + ox];
                }
            }
        }
    }
    out
}

/// 2x2 average pooling, stride 2. H and W must be even.
pub(crate) fn avg_pool2(x: &[f64], b: usize, c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; b * c * oh * ow];
    for bc in 0..b * c {
        let src = &x[bc * h * w..(bc + 1) * h * w];
        let dst = &mut out[bc * oh * ow..(bc + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                let p = 2 * i * w + 2 * j;
                dst[i * ow + j] = 0.25 * (src[p] + src[p + 1] + src[p + w] + src[p + w + 1]);
            }
        }
    }
    out
}

/// Adjoint of avg_pool2: spread each cell into its 2x2 block, divided by 4.
pub(crate) fn upsample_pool2(gy: &[f64], b: usize, c: usize, oh: usize, ow: usize) -> Vec<f64> {
    let (h, w) = (oh * 2, ow * 2);
    let mut out = vec![0.0; b * c * h * w];
    for bc in 0..b * c {
        let src = &gy[bc * oh * ow..(bc + 1) * oh * ow];
        let dst = &mut out[bc * h * w..(bc + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let v = 0.25 * src[i * ow + j];
                let p = 2 * i * w + 2 * j;
                dst[p] = v;
                dst[p + 1] = v;
                dst[p + w] = v;
                dst[p + w + 1] = v;
            }
        }
    }
    out
}
