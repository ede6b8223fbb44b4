//! Procedural task suites and their on-disk formats.

mod dfd;
mod gld;
mod io;

pub use dfd::{dfd_distortion, gen_dfd_like, render_face};
pub use gld::{gen_gld_like, render_landscape, style};
pub use io::{
    decode_image, encode_image, load_image, load_manifest, load_task, parse_manifest, save_image,
    save_manifest, save_task, write_manifest, Manifest, ManifestPair,
};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::Tensor;

/// Side length of generated images.
pub const IMAGE_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suite {
    /// Four grayscale restoration tasks scored by PSNR.
    DfdLike,
    /// Three chained RGB style transfers scored by SSIM.
    GldLike,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::DfdLike => "dfd_like",
            Suite::GldLike => "gld_like",
        }
    }

    pub fn parse(s: &str) -> Result<Suite> {
        match s {
            "dfd" | "dfd_like" => Ok(Suite::DfdLike),
            "gld" | "gld_like" => Ok(Suite::GldLike),
            other => Err(Error::Invalid(format!("unknown suite `{other}`"))),
        }
    }

    pub fn task_count(self) -> usize {
        match self {
            Suite::DfdLike => 4,
            Suite::GldLike => 3,
        }
    }

    pub fn channels(self) -> usize {
        match self {
            Suite::DfdLike => 1,
            Suite::GldLike => 3,
        }
    }

    pub fn metric(self) -> Metric {
        match self {
            Suite::DfdLike => Metric::Psnr,
            Suite::GldLike => Metric::Ssim,
        }
    }

    fn tag(self) -> u64 {
        match self {
            Suite::DfdLike => 0x0D,
            Suite::GldLike => 0x61,
        }
    }

    pub fn generate(
        self,
        task: usize,
        n_train: usize,
        n_test: usize,
        seed: u64,
    ) -> Result<TaskSpec> {
        match self {
            Suite::DfdLike => gen_dfd_like(task, n_train, n_test, seed),
            Suite::GldLike => gen_gld_like(task, n_train, n_test, seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Psnr,
    Ssim,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Psnr => "psnr",
            Metric::Ssim => "ssim",
        }
    }

    pub fn parse(s: &str) -> Result<Metric> {
        match s {
            "psnr" => Ok(Metric::Psnr),
            "ssim" => Ok(Metric::Ssim),
            other => Err(Error::Invalid(format!("unknown metric `{other}`"))),
        }
    }
}

/// One training example: source `x` and ground truth `y`, both `[C,H,W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub x: Tensor,
    pub y: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub suite: Suite,
    /// 1-based task index within the suite.
    pub task: usize,
    pub seed: u64,
    pub train: Vec<Pair>,
    pub test: Vec<Pair>,
    /// `[C, H, W]`
    pub shape: [usize; 3],
}

impl TaskSpec {
    pub fn metric(&self) -> Metric {
        self.suite.metric()
    }
}

/// Independent stream for one split of one task; train and test never share.
pub(crate) fn split_stream(suite: Suite, task: usize, split: u64, seed: u64) -> SplitMix64 {
    let task_seed = derive_seed(seed, suite.tag() * 64 + task as u64);
    SplitMix64::new(derive_seed(task_seed, split))
}

pub(crate) fn check_task(suite: Suite, task: usize) -> Result<()> {
    if task == 0 || task > suite.task_count() {
        return Err(Error::Invalid(format!(
            "{} has tasks 1..={}, got {task}",
            suite.name(),
            suite.task_count()
        )));
    }
    Ok(())
}

pub(crate) fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}
