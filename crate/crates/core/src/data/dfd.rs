//! Grayscale "faces" under four distortions: blur σ=1, a 6×6 occlusion,
//! blur σ=2 (same type as task 1, stronger) and uniform noise ±0.25.

use super::{check_task, clamp01, split_stream, Pair, Suite, TaskSpec, IMAGE_SIZE};
use crate::error::Result;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

const OCCLUSION: usize = 6;
const NOISE: f64 = 0.25;

/// Ellipse head on a dark background with two eye dots and a mouth bar.
pub fn render_face(rng: &mut SplitMix64, size: usize) -> Tensor {
    let s = size as f64 / 16.0;
    let mid = (size as f64 - 1.0) / 2.0;
    let bg = rng.uniform(0.0, 0.15);
    let skin = rng.uniform(0.55, 0.9);
    let cx = mid + rng.uniform(-1.0, 1.0) * s;
    let cy = mid + rng.uniform(-1.0, 1.0) * s;
    let rx = rng.uniform(4.5, 6.0) * s;
    let ry = rng.uniform(5.5, 7.0) * s;
    let eye = rng.uniform(0.0, 0.15);
    let eye_dx = rng.uniform(1.8, 2.8) * s;
    let eye_dy = rng.uniform(1.5, 2.5) * s;
    let mouth = rng.uniform(0.15, 0.3);
    let mouth_y = cy + rng.uniform(2.5, 3.5) * s;
    let mouth_hw = rng.uniform(1.5, 2.5) * s;

    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64, y as f64);
            let inside = ((fx - cx) / rx).powi(2) + ((fy - cy) / ry).powi(2) <= 1.0;
            let mut v = if inside { skin } else { bg };
            let near_eye = |ex: f64| (fx - ex).abs() <= 0.75 && (fy - (cy - eye_dy)).abs() <= 0.75;
            if near_eye(cx - eye_dx) || near_eye(cx + eye_dx) {
                v = eye;
            }
            if (fy - mouth_y).abs() <= 0.5 && (fx - cx).abs() <= mouth_hw {
                v = mouth;
            }
            data.push(v);
        }
    }
    Tensor::new(vec![1, size, size], data).expect("square image")
}

fn gaussian_kernel(sigma: f64) -> [f64; 5] {
    let mut k = [0.0; 5];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - 2.0;
        *v = (-d * d / (2.0 * sigma * sigma)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable 5×5 Gaussian blur with edge replication.
fn blur(img: &Tensor, sigma: f64) -> Tensor {
    let k = gaussian_kernel(sigma);
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let at = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut out = img.clone();
    for ch in 0..c {
        let src = &img.data()[ch * h * w..(ch + 1) * h * w];
        let mut tmp = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = (0..5)
                    .map(|i| k[i] * src[y * w + at(x as isize + i as isize - 2, w)])
                    .sum();
            }
        }
        let dst = &mut out.data_mut()[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = (0..5)
                    .map(|i| k[i] * tmp[at(y as isize + i as isize - 2, h) * w + x])
                    .sum();
            }
        }
    }
    out
}

/// Apply task `task`'s distortion to a clean image.
pub fn dfd_distortion(task: usize, clean: &Tensor, rng: &mut SplitMix64) -> Tensor {
    match task {
        1 => blur(clean, 1.0),
        2 => {
            let (h, w) = (clean.shape()[1], clean.shape()[2]);
            let oy = rng.below(h - OCCLUSION + 1);
            let ox = rng.below(w - OCCLUSION + 1);
            let mut out = clean.clone();
            let d = out.data_mut();
            for y in oy..oy + OCCLUSION {
                d[y * w + ox..y * w + ox + OCCLUSION].fill(0.0);
            }
            out
        }
        3 => blur(clean, 2.0),
        4 => {
            let mut out = clean.clone();
            for v in out.data_mut() {
                *v = clamp01(*v + rng.uniform(-NOISE, NOISE));
            }
            out
        }
        _ => panic!("dfd task {task} out of range"),
    }
}

fn split(task: usize, n: usize, rng: &mut SplitMix64) -> Vec<Pair> {
    (0..n)
        .map(|_| {
            let y = render_face(rng, IMAGE_SIZE);
            let x = dfd_distortion(task, &y, rng);
            Pair { x, y }
        })
        .collect()
}

/// Restoration task `task ∈ 1..=4`; `y` is the clean face, `x` its distortion.
pub fn gen_dfd_like(task: usize, n_train: usize, n_test: usize, seed: u64) -> Result<TaskSpec> {
    check_task(Suite::DfdLike, task)?;
    let train = split(
        task,
        n_train,
        &mut split_stream(Suite::DfdLike, task, 0, seed),
    );
    let test = split(
        task,
        n_test,
        &mut split_stream(Suite::DfdLike, task, 1, seed),
    );
    Ok(TaskSpec {
        suite: Suite::DfdLike,
        task,
        seed,
        train,
        test,
        shape: [1, IMAGE_SIZE, IMAGE_SIZE],
    })
}
