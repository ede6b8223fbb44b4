//! Raw numeric kernels over flat buffers. Shapes are validated by callers.

use super::Tensor;
use crate::error::{Error, Result};

/// Row/column strides of a matrix operand.
#[derive(Clone, Copy)]
pub(crate) struct Strides(pub isize, pub isize);

/// `c = a·b + beta·c` for an `m×k` times `k×n` product.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: Strides,
    b: &[f64],
    sb: Strides,
    beta: f64,
    c: &mut [f64],
) {
    let reach = |rows: usize, cols: usize, s: Strides| {
        (rows - 1) * s.0 as usize + (cols - 1) * s.1 as usize + 1
    };
    assert!(a.len() >= reach(m, k, sa));
    assert!(b.len() >= reach(k, n, sb));
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index dgemm touches, and all
    // strides are positive.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0,
            sa.1,
            b.as_ptr(),
            sb.0,
            sb.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
}

impl ConvDims {
    /// Validates `input [N,C,H,W]`, `kernels [O,C,k,k]`, `bias [O]`.
    pub fn check(input: &[usize], kernels: &[usize], bias: &[usize]) -> Result<Self> {
        if input.len() != 4 {
            return Err(Error::shape(
                "conv2d_same",
                format!("input must be [N,C,H,W], got {input:?}"),
            ));
        }
        if kernels.len() != 4 {
            return Err(Error::shape(
                "conv2d_same",
                format!("kernels must be [O,C,k,k], got {kernels:?}"),
            ));
        }
        let (n, c, h, w) = (input[0], input[1], input[2], input[3]);
        let (o, kc, kh, kw) = (kernels[0], kernels[1], kernels[2], kernels[3]);
        if kc != c {
            return Err(Error::shape(
                "conv2d_same",
                format!("kernel input channels {kc} != image channels {c}"),
            ));
        }
        if kh != kw {
            return Err(Error::shape(
                "conv2d_same",
                format!("kernel must be square, got {kh}x{kw}"),
            ));
        }
        if kh % 2 == 0 {
            return Err(Error::shape(
                "conv2d_same",
                format!("kernel size {kh} must be odd"),
            ));
        }
        if bias != [o] {
            return Err(Error::shape(
                "conv2d_same",
                format!("bias shape {bias:?} != [{o}]"),
            ));
        }
        Ok(ConvDims {
            n,
            c,
            h,
            w,
            o,
            k: kh,
        })
    }

    fn patch(&self) -> usize {
        self.c * self.k * self.k
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.o, self.h, self.w]
    }
}

/// Unfold one `[C,H,W]` image into `[C·k·k, H·W]` patches, zero padded.
fn im2col(d: &ConvDims, img: &[f64], cols: &mut [f64]) {
    let pad = (d.k / 2) as isize;
    let (h, w) = (d.h as isize, d.w as isize);
    let plane = d.plane();
    let mut row = 0;
    for c in 0..d.c {
        let src = &img[c * plane..(c + 1) * plane];
        for ky in 0..d.k as isize {
            for kx in 0..d.k as isize {
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for y in 0..h {
                    let iy = y + ky - pad;
                    let line = &mut dst[(y * w) as usize..((y + 1) * w) as usize];
                    if iy < 0 || iy >= h {
                        line.fill(0.0);
                        continue;
                    }
                    let srow = &src[(iy * w) as usize..((iy + 1) * w) as usize];
                    for x in 0..w {
                        let ix = x + kx - pad;
                        line[x as usize] = if ix < 0 || ix >= w {
                            0.0
                        } else {
                            srow[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of `im2col`: scatter-add patches back onto the image.
fn col2im(d: &ConvDims, cols: &[f64], img: &mut [f64]) {
    let pad = (d.k / 2) as isize;
    let (h, w) = (d.h as isize, d.w as isize);
    let plane = d.plane();
    let mut row = 0;
    for c in 0..d.c {
        let dst = &mut img[c * plane..(c + 1) * plane];
        for ky in 0..d.k as isize {
            for kx in 0..d.k as isize {
                let src = &cols[row * plane..(row + 1) * plane];
                for y in 0..h {
                    let iy = y + ky - pad;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    for x in 0..w {
                        let ix = x + kx - pad;
                        if ix >= 0 && ix < w {
                            dst[(iy * w + ix) as usize] += src[(y * w + x) as usize];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Batched same-size convolution. Returns the output and, when `keep_cols`
/// is set, the unfolded patches needed for the backward pass.
pub(crate) fn conv_forward(
    d: &ConvDims,
    input: &[f64],
    kernels: &[f64],
    bias: &[f64],
    keep_cols: bool,
) -> (Vec<f64>, Vec<f64>) {
    let (patch, plane) = (d.patch(), d.plane());
    let mut out = vec![0.0; d.n * d.o * plane];
    let mut cols = vec![
        0.0;
        if keep_cols {
            d.n * patch * plane
        } else {
            patch * plane
        }
    ];
    for s in 0..d.n {
        let img = &input[s * d.c * plane..(s + 1) * d.c * plane];
        let col = if keep_cols {
            &mut cols[s * patch * plane..(s + 1) * patch * plane]
        } else {
            &mut cols[..]
        };
        im2col(d, img, col);
        let dst = &mut out[s * d.o * plane..(s + 1) * d.o * plane];
        for (o, chunk) in dst.chunks_mut(plane).enumerate() {
            chunk.fill(bias[o]);
        }
        gemm(
            d.o,
            patch,
            plane,
            kernels,
            Strides(patch as isize, 1),
            col,
            Strides(plane as isize, 1),
            1.0,
            dst,
        );
    }
    if !keep_cols {
        cols = Vec::new();
    }
    (out, cols)
}

pub(crate) struct ConvGrads {
    pub input: Vec<f64>,
    pub kernels: Vec<f64>,
    pub bias: Vec<f64>,
}

pub(crate) fn conv_backward(
    d: &ConvDims,
    grad_out: &[f64],
    cols: &[f64],
    kernels: &[f64],
) -> ConvGrads {
    let (patch, plane) = (d.patch(), d.plane());
    let mut g = ConvGrads {
        input: vec![0.0; d.n * d.c * plane],
        kernels: vec![0.0; d.o * patch],
        bias: vec![0.0; d.o],
    };
    let mut dcols = vec![0.0; patch * plane];
    for s in 0..d.n {
        let go = &grad_out[s * d.o * plane..(s + 1) * d.o * plane];
        let col = &cols[s * patch * plane..(s + 1) * patch * plane];
        for (o, chunk) in go.chunks(plane).enumerate() {
            g.bias[o] += chunk.iter().sum::<f64>();
        }
        // dK += dOut · colsᵀ
        gemm(
            d.o,
            plane,
            patch,
            go,
            Strides(plane as isize, 1),
            col,
            Strides(1, plane as isize),
            1.0,
            &mut g.kernels,
        );
        // dcols = Kᵀ · dOut
        gemm(
            patch,
            d.o,
            plane,
            kernels,
            Strides(1, patch as isize),
            go,
            Strides(plane as isize, 1),
            0.0,
            &mut dcols,
        );
        col2im(
            d,
            &dcols,
            &mut g.input[s * d.c * plane..(s + 1) * d.c * plane],
        );
    }
    g
}

/// Same-size 2-D convolution with zero padding of `(k-1)/2`.
///
/// Accepts a single image `[C,H,W]` or a batch `[N,C,H,W]`; the output has
/// the same rank as the input.
pub fn conv2d_same(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let batched = input.rank() == 4;
    let shape4 = as_batch(input.shape(), "conv2d_same")?;
    let d = ConvDims::check(&shape4, kernels.shape(), bias.shape())?;
    let (out, _) = conv_forward(&d, input.data(), kernels.data(), bias.data(), false);
    let mut shape = d.out_shape();
    if !batched {
        shape.remove(0);
    }
    Tensor::new(shape, out)
}

/// View `[C,H,W]` as `[1,C,H,W]`; pass `[N,C,H,W]` through.
pub(crate) fn as_batch(shape: &[usize], op: &'static str) -> Result<Vec<usize>> {
    match shape.len() {
        3 => Ok(vec![1, shape[0], shape[1], shape[2]]),
        4 => Ok(shape.to_vec()),
        _ => Err(Error::shape(
            op,
            format!("expected [C,H,W] or [N,C,H,W], got {shape:?}"),
        )),
    }
}

pub(crate) fn pool_avg2(shape: &[usize], input: &[f64]) -> Vec<f64> {
    let (planes, h, w) = plane_dims(shape);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let src = &input[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                let i = 2 * y * w + 2 * x;
                dst[y * ow + x] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
            }
        }
    }
    out
}

pub(crate) fn pool_avg2_backward(shape: &[usize], grad_out: &[f64]) -> Vec<f64> {
    let (planes, h, w) = plane_dims(shape);
    let (oh, ow) = (h / 2, w / 2);
    let mut g = vec![0.0; planes * h * w];
    for p in 0..planes {
        let src = &grad_out[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut g[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let v = 0.25 * src[y * ow + x];
                let i = 2 * y * w + 2 * x;
                dst[i] = v;
                dst[i + 1] = v;
                dst[i + w] = v;
                dst[i + w + 1] = v;
            }
        }
    }
    g
}

pub(crate) fn upsample2(shape: &[usize], input: &[f64]) -> Vec<f64> {
    let (planes, h, w) = plane_dims(shape);
    let ow = 2 * w;
    let mut out = vec![0.0; planes * 4 * h * w];
    for p in 0..planes {
        let src = &input[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
        for y in 0..2 * h {
            for x in 0..ow {
                dst[y * ow + x] = src[(y / 2) * w + x / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward(shape: &[usize], grad_out: &[f64]) -> Vec<f64> {
    let (planes, h, w) = plane_dims(shape);
    let ow = 2 * w;
    let mut g = vec![0.0; planes * h * w];
    for p in 0..planes {
        let src = &grad_out[p * 4 * h * w..(p + 1) * 4 * h * w];
        let dst = &mut g[p * h * w..(p + 1) * h * w];
        for y in 0..2 * h {
            for x in 0..ow {
                dst[(y / 2) * w + x / 2] += src[y * ow + x];
            }
        }
    }
    g
}

/// (number of H×W planes, H, W) for an input of shape `[..., H, W]`.
fn plane_dims(shape: &[usize]) -> (usize, usize, usize) {
    let r = shape.len();
    let (h, w) = (shape[r - 2], shape[r - 1]);
    (shape[..r - 2].iter().product(), h, w)
}
