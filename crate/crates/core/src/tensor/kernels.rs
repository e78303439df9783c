//! Raw numeric kernels behind the graph operators.
//!
//! Convolution avoids an explicit im2col buffer: the input is padded once and
//! each kernel tap `(dy, dx)` becomes a single GEMM over a shifted view of the
//! padded buffer. Output rows are computed over the full padded width and the
//! `k - 1` wrap-around columns are dropped afterwards.

/// Spatial padding rule for [`conv2d`](super::Graph::conv2d).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Edge replication; output keeps `ceil(H / stride)` rows.
    SameReplicate,
    /// No padding; output has `(H - k) / stride + 1` rows.
    Valid,
}

/// `C = A·B + beta·C` with arbitrary strides, single-threaded.
#[allow(clippy::too_many_arguments)]
fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    beta: f32,
    c: &mut [f32],
    rsc: usize,
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!((m - 1) * rsa + (k - 1) * csa < a.len(), "gemm: A out of bounds");
    assert!((k - 1) * rsb + (n - 1) * csb < b.len(), "gemm: B out of bounds");
    assert!((m - 1) * rsc + n - 1 < c.len(), "gemm: C out of bounds");
    // SAFETY: the asserts above bound every index the kernel touches, and `c`
    // is an exclusive borrow disjoint from `a` and `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvGeom {
    fn pad(&self) -> usize {
        match self.padding {
            Padding::SameReplicate => (self.k - 1) / 2,
            Padding::Valid => 0,
        }
    }

    fn padded_dims(&self) -> (usize, usize) {
        let p = self.pad();
        (self.h + 2 * p, self.w + 2 * p)
    }

    /// Dense (stride-1) output size.
    fn dense_out(&self) -> (usize, usize) {
        let (hp, wp) = self.padded_dims();
        (hp + 1 - self.k, wp + 1 - self.k)
    }

    pub fn out_dims(&self) -> (usize, usize) {
        let (ho, wo) = self.dense_out();
        (ho.div_ceil(self.stride), wo.div_ceil(self.stride))
    }

    fn padded_len(&self) -> usize {
        let (hp, wp) = self.padded_dims();
        (hp * wp + self.k - 1) * self.cin
    }

    fn pad_input(&self, x: &[f32]) -> Vec<f32> {
        let (hp, wp) = self.padded_dims();
        let p = self.pad() as isize;
        let cin = self.cin;
        let mut out = vec![0.0f32; self.padded_len()];
        for py in 0..hp {
            let sy = (py as isize - p).clamp(0, self.h as isize - 1) as usize;
            for px in 0..wp {
                let sx = (px as isize - p).clamp(0, self.w as isize - 1) as usize;
                let src = (sy * self.w + sx) * cin;
                let dst = (py * wp + px) * cin;
                out[dst..dst + cin].copy_from_slice(&x[src..src + cin]);
            }
        }
        out
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f32], kernel: &[f32], bias: &[f32]) -> Vec<f32> {
    let (_, wp) = g.padded_dims();
    let (ho, wo) = g.dense_out();
    let (cin, cout, k) = (g.cin, g.cout, g.k);
    let padded = g.pad_input(x);
    let rows = ho * wp;
    let mut ext = vec![0.0f32; rows * cout];
    for dy in 0..k {
        for dx in 0..k {
            let off = (dy * wp + dx) * cin;
            let tap = (dy * k + dx) * cin * cout;
            sgemm(
                rows,
                cin,
                cout,
                &padded[off..],
                cin,
                1,
                &kernel[tap..tap + cin * cout],
                cout,
                1,
                1.0,
                &mut ext,
                cout,
            );
        }
    }
    let s = g.stride;
    let (oh, ow) = g.out_dims();
    let mut out = Vec::with_capacity(oh * ow * cout);
    for oy in 0..oh {
        for ox in 0..ow {
            let src = ((oy * s) * wp + ox * s) * cout;
            out.extend(ext[src..src + cout].iter().zip(bias).map(|(v, b)| v + b));
        }
    }
    debug_assert!(wo >= 1);
    out
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f32>>,
    pub kernel: Option<Vec<f32>>,
    pub bias: Option<Vec<f32>>,
}

pub(crate) fn conv2d_backward(g: &ConvGeom, x: &[f32], kernel: &[f32], dout: &[f32], need: [bool; 3]) -> ConvGrads {
    let (hp, wp) = g.padded_dims();
    let (ho, _) = g.dense_out();
    let (cin, cout, k, s) = (g.cin, g.cout, g.k, g.stride);
    let (oh, ow) = g.out_dims();
    let rows = ho * wp;

    // Scatter the upstream gradient onto the dense, full-width output grid;
    // dropped columns and skipped stride positions stay zero.
    let mut dext = vec![0.0f32; rows * cout];
    for oy in 0..oh {
        for ox in 0..ow {
            let src = (oy * ow + ox) * cout;
            let dst = ((oy * s) * wp + ox * s) * cout;
            dext[dst..dst + cout].copy_from_slice(&dout[src..src + cout]);
        }
    }

    let bias = need[2].then(|| {
        let mut db = vec![0.0f32; cout];
        for px in dout.chunks_exact(cout) {
            for (d, v) in db.iter_mut().zip(px) {
                *d += v;
            }
        }
        db
    });

    let kernel_grad = need[1].then(|| {
        let padded = g.pad_input(x);
        let mut dk = vec![0.0f32; k * k * cin * cout];
        for dy in 0..k {
            for dx in 0..k {
                let off = (dy * wp + dx) * cin;
                let tap = (dy * k + dx) * cin * cout;
                sgemm(
                    cin,
                    rows,
                    cout,
                    &padded[off..],
                    1,
                    cin,
                    &dext,
                    cout,
                    1,
                    0.0,
                    &mut dk[tap..tap + cin * cout],
                    cout,
                );
            }
        }
        dk
    });

    let input = need[0].then(|| {
        let mut dpad = vec![0.0f32; g.padded_len()];
        for dy in 0..k {
            for dx in 0..k {
                let off = (dy * wp + dx) * cin;
                let tap = (dy * k + dx) * cin * cout;
                sgemm(
                    rows,
                    cout,
                    cin,
                    &dext,
                    cout,
                    1,
                    &kernel[tap..tap + cin * cout],
                    1,
                    cout,
                    1.0,
                    &mut dpad[off..],
                    cin,
                );
            }
        }
        let p = g.pad() as isize;
        let mut dx = vec![0.0f32; g.h * g.w * cin];
        for py in 0..hp {
            let sy = (py as isize - p).clamp(0, g.h as isize - 1) as usize;
            for px in 0..wp {
                let sx = (px as isize - p).clamp(0, g.w as isize - 1) as usize;
                let src = (py * wp + px) * cin;
                let dst = (sy * g.w + sx) * cin;
                for c in 0..cin {
                    dx[dst + c] += dpad[src + c];
                }
            }
        }
        dx
    });

    ConvGrads {
        input,
        kernel: kernel_grad,
        bias,
    }
}

/// `out[j] = sum_i x[i] * w[i, j] + b[j]`.
pub(crate) fn dense_forward(x: &[f32], w: &[f32], b: &[f32]) -> Vec<f32> {
    let cout = b.len();
    let mut out = b.to_vec();
    for (i, &xi) in x.iter().enumerate() {
        let row = &w[i * cout..(i + 1) * cout];
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
    out
}
