//! Dense `C x H x W` tensors (channels, frequency, time) and the layer
//! primitives of the score network, each with its reverse-mode pass.

/// Channel-major 3-D tensor; `W` (time) is the contiguous axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self) -> Self {
        Self::zeros(self.c, self.h, self.w)
    }
}

/// Square 2-D convolution geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    #[cfg(test)]
    fn widx(&self, o: usize, i: usize, a: usize, b: usize) -> usize {
        ((o * self.cin + i) * self.k + a) * self.k + b
    }

    fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Source coordinate of output position `o` for tap `a`, if inside.
    #[inline]
    fn source(&self, o: usize, a: usize, n: usize) -> Option<usize> {
        (o * self.stride + a).checked_sub(self.pad).filter(|&v| v < n)
    }
}

/// Row-major `c (m x n) += a (m x k) * b (k x n)`, with explicit strides so
/// either operand can be a transposed view.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: usize, csa: usize, b: &[f64], rsb: usize, csb: usize, c: &mut [f64]) {
    assert!(m.saturating_sub(1) * rsa + k.saturating_sub(1) * csa < a.len().max(1));
    assert!(k.saturating_sub(1) * rsb + n.saturating_sub(1) * csb < b.len().max(1));
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: the asserts above keep every strided access in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), rsa as isize, csa as isize,
            b.as_ptr(), rsb as isize, csb as isize,
            1.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// Patch matrix with one row per `(input channel, tap row, tap col)` and one
/// column per output position.
fn im2col(g: &ConvGeom, input: &Tensor, oh: usize, ow: usize) -> Vec<f64> {
    let p = oh * ow;
    let mut cols = vec![0.0; g.patch_len() * p];
    for i in 0..g.cin {
        let src = input.plane(i);
        for a in 0..g.k {
            for b in 0..g.k {
                let r = (i * g.k + a) * g.k + b;
                let row = &mut cols[r * p..(r + 1) * p];
                for y in 0..oh {
                    let Some(sy) = g.source(y, a, input.h) else { continue };
                    let srow = &src[sy * input.w..(sy + 1) * input.w];
                    let drow = &mut row[y * ow..(y + 1) * ow];
                    for (x, d) in drow.iter_mut().enumerate() {
                        if let Some(sx) = g.source(x, b, input.w) {
                            *d = srow[sx];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`], accumulated into `dinput`.
fn col2im(g: &ConvGeom, cols: &[f64], oh: usize, ow: usize, dinput: &mut Tensor) {
    let p = oh * ow;
    let (h, w) = (dinput.h, dinput.w);
    for i in 0..g.cin {
        let dst = dinput.plane_mut(i);
        for a in 0..g.k {
            for b in 0..g.k {
                let r = (i * g.k + a) * g.k + b;
                let row = &cols[r * p..(r + 1) * p];
                for y in 0..oh {
                    let Some(sy) = g.source(y, a, h) else { continue };
                    let drow = &mut dst[sy * w..(sy + 1) * w];
                    for (x, &v) in row[y * ow..(y + 1) * ow].iter().enumerate() {
                        if let Some(sx) = g.source(x, b, w) {
                            drow[sx] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `out += conv(input, weight)`; bias is handled by the caller.
pub fn conv_forward(g: &ConvGeom, input: &Tensor, weight: &[f64], out: &mut Tensor) {
    debug_assert_eq!(input.c, g.cin);
    debug_assert_eq!(out.c, g.cout);
    let (oh, ow) = (out.h, out.w);
    let p = oh * ow;
    let kk = g.patch_len();
    if g.is_pointwise() {
        gemm(g.cout, kk, p, weight, kk, 1, &input.data, p, 1, &mut out.data);
    } else {
        let cols = im2col(g, input, oh, ow);
        gemm(g.cout, kk, p, weight, kk, 1, &cols, p, 1, &mut out.data);
    }
}

/// Backward of [`conv_forward`]: accumulates `dweight` and, if given,
/// `dinput`.
pub fn conv_backward(
    g: &ConvGeom,
    input: &Tensor,
    weight: &[f64],
    dout: &Tensor,
    dweight: &mut [f64],
    dinput: Option<&mut Tensor>,
) {
    let (oh, ow) = (dout.h, dout.w);
    let p = oh * ow;
    let kk = g.patch_len();
    if g.is_pointwise() {
        gemm(g.cout, p, kk, &dout.data, p, 1, &input.data, 1, p, dweight);
        if let Some(di) = dinput {
            gemm(kk, g.cout, p, weight, 1, kk, &dout.data, p, 1, &mut di.data);
        }
    } else {
        let cols = im2col(g, input, oh, ow);
        gemm(g.cout, p, kk, &dout.data, p, 1, &cols, 1, p, dweight);
        if let Some(di) = dinput {
            let mut dcols = vec![0.0; kk * p];
            gemm(kk, g.cout, p, weight, 1, kk, &dout.data, p, 1, &mut dcols);
            col2im(g, &dcols, oh, ow, di);
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// SiLU `x * sigmoid(x)`.
pub fn silu(pre: &Tensor) -> Tensor {
    Tensor {
        c: pre.c,
        h: pre.h,
        w: pre.w,
        data: pre.data.iter().map(|&x| x * sigmoid(x)).collect(),
    }
}

/// `dpre = dpost * silu'(pre)`.
pub fn silu_backward(pre: &Tensor, dpost: &Tensor) -> Tensor {
    Tensor {
        c: pre.c,
        h: pre.h,
        w: pre.w,
        data: pre
            .data
            .iter()
            .zip(&dpost.data)
            .map(|(&x, &g)| {
                let s = sigmoid(x);
                g * s * (1.0 + x * (1.0 - s))
            })
            .collect(),
    }
}

/// Nearest-neighbour upsampling by `s` along both axes.
pub fn upsample(t: &Tensor, s: usize) -> Tensor {
    let mut out = Tensor::zeros(t.c, t.h * s, t.w * s);
    for c in 0..t.c {
        let src = t.plane(c);
        let ow = out.w;
        let dst = out.plane_mut(c);
        for y in 0..t.h * s {
            let sy = y / s;
            let row = &mut dst[y * ow..(y + 1) * ow];
            for (x, v) in row.iter_mut().enumerate() {
                *v = src[sy * t.w + x / s];
            }
        }
    }
    out
}

/// Adjoint of [`upsample`]: sums each `s x s` block.
pub fn upsample_backward(g: &Tensor, s: usize) -> Tensor {
    let mut out = Tensor::zeros(g.c, g.h / s, g.w / s);
    for c in 0..g.c {
        let src = g.plane(c);
        let (oh, ow) = (out.h, out.w);
        let dst = out.plane_mut(c);
        for y in 0..oh * s {
            let row = &src[y * g.w..(y + 1) * g.w];
            let drow = &mut dst[(y / s) * ow..(y / s + 1) * ow];
            for (x, &v) in row.iter().enumerate() {
                drow[x / s] += v;
            }
        }
    }
    out
}
