//! PSNR and SSIM on `[C,H,W]` images with values in `[0,1]`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reported for identical images instead of +∞.
pub const PSNR_CAP_DB: f64 = 99.0;
/// SSIM window side (uniform weights, valid positions only).
pub const SSIM_WINDOW: usize = 7;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_RANGE: f64 = 1.0;

fn same_shape(a: &Tensor, b: &Tensor, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape(a, b, "mse")?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64)
}

/// `10·log10(max²/MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Tensor, b: &Tensor, max_val: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (max_val * max_val / m).log10()).min(PSNR_CAP_DB))
}

/// Summed-area table with a zero first row/column.
struct Integral {
    w: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let stride = w + 1;
        let mut sums = vec![0.0; (h + 1) * stride];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += f(y, x);
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Integral { w: stride, sums }
    }

    fn window(&self, y: usize, x: usize, n: usize) -> f64 {
        let s = &self.sums;
        s[(y + n) * self.w + x + n] - s[y * self.w + x + n] - s[(y + n) * self.w + x]
            + s[y * self.w + x]
    }
}

/// Mean SSIM over all valid 7×7 windows and all channels, using population
/// statistics within each window.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape(a, b, "ssim")?;
    let (c, h, w) = match a.shape() {
        [h, w] => (1, *h, *w),
        [c, h, w] => (*c, *h, *w),
        s => {
            return Err(Error::shape(
                "ssim",
                format!("expected [H,W] or [C,H,W], got {s:?}"),
            ))
        }
    };
    let n = SSIM_WINDOW;
    if h < n || w < n {
        return Err(Error::shape(
            "ssim",
            format!("image {h}x{w} smaller than the {n}x{n} window"),
        ));
    }
    let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_RANGE).powi(2);
    let count = (n * n) as f64;
    let plane = h * w;
    let mut total = 0.0;
    for ch in 0..c {
        let pa = &a.data()[ch * plane..(ch + 1) * plane];
        let pb = &b.data()[ch * plane..(ch + 1) * plane];
        let at = |p: &[f64], y: usize, x: usize| p[y * w + x];
        let sa = Integral::new(h, w, |y, x| at(pa, y, x));
        let sb = Integral::new(h, w, |y, x| at(pb, y, x));
        let saa = Integral::new(h, w, |y, x| at(pa, y, x).powi(2));
        let sbb = Integral::new(h, w, |y, x| at(pb, y, x).powi(2));
        let sab = Integral::new(h, w, |y, x| at(pa, y, x) * at(pb, y, x));
        for y in 0..=h - n {
            for x in 0..=w - n {
                let ma = sa.window(y, x, n) / count;
                let mb = sb.window(y, x, n) / count;
                let va = saa.window(y, x, n) / count - ma * ma;
                let vb = sbb.window(y, x, n) / count - mb * mb;
                let cov = sab.window(y, x, n) / count - ma * mb;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
    }
    Ok(total / (c * (h - n + 1) * (w - n + 1)) as f64)
}
