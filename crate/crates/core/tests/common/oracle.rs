//! Literal-formula PSNR and SSIM, one window at a time.

use assoc_core::Tensor;

pub fn naive_psnr(a: &Tensor, b: &Tensor) -> f64 {
    let mut sum = 0.0;
    for i in 0..a.len() {
        let d = a.data()[i] - b.data()[i];
        sum += d * d;
    }
    let mse = sum / a.len() as f64;
    10.0 * (1.0 / mse).log10()
}

/// Mean over channels and valid 7×7 windows of
/// `(2μaμb + C1)(2σab + C2) / ((μa² + μb² + C1)(σa² + σb² + C2))`.
pub fn naive_ssim(a: &Tensor, b: &Tensor) -> f64 {
    let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let n = 7;
    let c1 = 0.0001;
    let c2 = 0.0009;
    let px = |t: &Tensor, ch: usize, y: usize, x: usize| t.data()[(ch * h + y) * w + x];
    let mut total = 0.0;
    let mut windows = 0;
    for ch in 0..c {
        for y0 in 0..=h - n {
            for x0 in 0..=w - n {
                let mut va = Vec::new();
                let mut vb = Vec::new();
                for y in y0..y0 + n {
                    for x in x0..x0 + n {
                        va.push(px(a, ch, y, x));
                        vb.push(px(b, ch, y, x));
                    }
                }
                let k = va.len() as f64;
                let ma = va.iter().sum::<f64>() / k;
                let mb = vb.iter().sum::<f64>() / k;
                let sa = va.iter().map(|v| (v - ma) * (v - ma)).sum::<f64>() / k;
                let sb = vb.iter().map(|v| (v - mb) * (v - mb)).sum::<f64>() / k;
                let sab = va
                    .iter()
                    .zip(&vb)
                    .map(|(p, q)| (p - ma) * (q - mb))
                    .sum::<f64>()
                    / k;
                total += (2.0 * ma * mb + c1) * (2.0 * sab + c2)
                    / ((ma * ma + mb * mb + c1) * (sa + sb + c2));
                windows += 1;
            }
        }
    }
    total / windows as f64
}
