//! RGB landscapes under three chained styles. Task `i` maps style `i-1`
//! (style 0 is the identity) to style `i` of the same base image.

use super::{check_task, clamp01, split_stream, Pair, Suite, TaskSpec, IMAGE_SIZE};
use crate::error::Result;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Vertical sky gradient above a noisy ground band, `[3,S,S]`.
pub fn render_landscape(rng: &mut SplitMix64, size: usize) -> Tensor {
    let horizon = rng.uniform(0.3, 0.65) * size as f64;
    let top = [
        rng.uniform(0.3, 0.5),
        rng.uniform(0.5, 0.7),
        rng.uniform(0.8, 1.0),
    ];
    let low = [
        rng.uniform(0.7, 0.9),
        rng.uniform(0.75, 0.9),
        rng.uniform(0.85, 1.0),
    ];
    let ground = [
        rng.uniform(0.2, 0.45),
        rng.uniform(0.35, 0.6),
        rng.uniform(0.1, 0.25),
    ];
    let plane = size * size;
    let mut data = vec![0.0; 3 * plane];
    for y in 0..size {
        for x in 0..size {
            let fy = y as f64;
            let px: [f64; 3] = if fy < horizon {
                let t = fy / horizon;
                std::array::from_fn(|c| top[c] + t * (low[c] - top[c]))
            } else {
                let shade = 1.0 - 0.4 * (fy - horizon) / size as f64;
                let n = 0.08 * rng.normal();
                std::array::from_fn(|c| clamp01(ground[c] * shade + n))
            };
            for c in 0..3 {
                data[c * plane + y * size + x] = px[c];
            }
        }
    }
    Tensor::new(vec![3, size, size], data).expect("square image")
}

/// Style `k` applied to an RGB image.
///
/// 1: gamma 0.5 then a warm tint; 2: swap R/B then gamma 1.5;
/// 3: 50% desaturation then contrast ×1.4 about mid-gray.
pub fn style(k: usize, img: &Tensor) -> Tensor {
    let plane = img.shape()[1] * img.shape()[2];
    let src = img.data();
    let mut out = img.clone();
    let dst = out.data_mut();
    for i in 0..plane {
        let rgb = [src[i], src[plane + i], src[2 * plane + i]];
        let styled = match k {
            0 => rgb,
            1 => {
                let [r, g, b] = rgb.map(f64::sqrt);
                [r + 0.08, g + 0.02, b - 0.08]
            }
            2 => [rgb[2], rgb[1], rgb[0]].map(|v| v.powf(1.5)),
            3 => {
                let lum = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
                rgb.map(|v| 0.5 + 1.4 * (0.5 * v + 0.5 * lum - 0.5))
            }
            _ => panic!("style {k} out of range"),
        };
        for c in 0..3 {
            dst[c * plane + i] = clamp01(styled[c]);
        }
    }
    out
}

fn split(task: usize, n: usize, rng: &mut SplitMix64) -> Vec<Pair> {
    (0..n)
        .map(|_| {
            let base = render_landscape(rng, IMAGE_SIZE);
            Pair {
                x: style(task - 1, &base),
                y: style(task, &base),
            }
        })
        .collect()
}

/// Style-transfer task `task ∈ 1..=3`.
pub fn gen_gld_like(task: usize, n_train: usize, n_test: usize, seed: u64) -> Result<TaskSpec> {
    check_task(Suite::GldLike, task)?;
    let train = split(
        task,
        n_train,
        &mut split_stream(Suite::GldLike, task, 0, seed),
    );
    let test = split(
        task,
        n_test,
        &mut split_stream(Suite::GldLike, task, 1, seed),
    );
    Ok(TaskSpec {
        suite: Suite::GldLike,
        task,
        seed,
        train,
        test,
        shape: [3, IMAGE_SIZE, IMAGE_SIZE],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_one_source_is_base() {
        let t = gen_gld_like(1, 10, 2, 5).unwrap();
        let mut rng = split_stream(Suite::GldLike, 1, 0, 5);
        let base = render_landscape(&mut rng, IMAGE_SIZE);
        assert_eq!(t.train[0].x, base);
        assert_eq!(t.train[0].y, style(1, &base));
    }

    #[test]
    fn chained_domains() {
        let t2 = gen_gld_like(2, 5, 1, 9).unwrap();
        let mut rng = split_stream(Suite::GldLike, 2, 0, 9);
        let base = render_landscape(&mut rng, IMAGE_SIZE);
        assert_eq!(t2.train[0].x, style(1, &base));
        assert_eq!(t2.train[0].y, style(2, &base));
    }

    #[test]
    fn style_two_is_not_an_involution() {
        let mut rng = SplitMix64::new(77);
        for _ in 0..100 {
            let base = render_landscape(&mut rng, IMAGE_SIZE);
            let once = style(2, &base);
            let twice = style(2, &once);
            assert!(once.max_abs_diff(&twice) > 1e-3);
        }
    }

    #[test]
    fn outputs_in_unit_range() {
        for task in 1..=3 {
            let t = gen_gld_like(task, 30, 5, 1).unwrap();
            for p in t.train.iter().chain(&t.test) {
                assert!(p
                    .x
                    .data()
                    .iter()
                    .chain(p.y.data())
                    .all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}
