//! 16-bit binary PGM/PPM images and the tab-separated task manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Metric, Pair, Suite, TaskSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAXVAL: f64 = 65535.0;

/// Encode `[1,H,W]` as P5 or `[3,H,W]` as P6, 16-bit big-endian samples.
pub fn encode_image(img: &Tensor) -> Result<Vec<u8>> {
    if img.rank() != 3 || !matches!(img.shape()[0], 1 | 3) {
        return Err(Error::shape(
            "save_image",
            format!("expected [1|3,H,W], got {:?}", img.shape()),
        ));
    }
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n65535\n").into_bytes();
    let plane = h * w;
    for i in 0..plane {
        for ch in 0..c {
            let v = img.data()[ch * plane + i];
            let q = (v.clamp(0.0, 1.0) * MAXVAL).round() as u16;
            out.extend_from_slice(&q.to_be_bytes());
        }
    }
    Ok(out)
}

/// Inverse of [`encode_image`]. Accepts comments and any maxval < 65536.
pub fn decode_image(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let mut token = |what: &str| -> Result<(usize, String)> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(start, format!("missing {what}")));
        }
        Ok((
            start,
            String::from_utf8_lossy(&bytes[start..pos]).into_owned(),
        ))
    };
    let (_, magic) = token("magic")?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        _ => {
            return Err(Error::format(
                0,
                format!("bad magic `{magic}`, expected P5 or P6"),
            ))
        }
    };
    let mut number = |what: &str| -> Result<usize> {
        let (at, t) = token(what)?;
        t.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::format(at, format!("invalid {what} `{t}`")))
    };
    let w = number("width")?;
    let h = number("height")?;
    let maxval = number("maxval")?;
    if maxval > 65535 {
        return Err(Error::format(pos, format!("maxval {maxval} out of range")));
    }
    // Exactly one whitespace byte separates header and payload.
    let start = pos + 1;
    let bps = if maxval > 255 { 2 } else { 1 };
    let need = channels * h * w * bps;
    if bytes.len() < start + need {
        return Err(Error::format(
            bytes.len(),
            format!("truncated payload: need {need} bytes after offset {start}"),
        ));
    }
    let plane = h * w;
    let mut data = vec![0.0; channels * plane];
    let payload = &bytes[start..start + need];
    for i in 0..plane {
        for ch in 0..channels {
            let k = (i * channels + ch) * bps;
            let raw = if bps == 2 {
                u16::from_be_bytes([payload[k], payload[k + 1]])
            } else {
                payload[k] as u16
            };
            if raw as usize > maxval {
                return Err(Error::format(
                    start + k,
                    format!("sample {raw} exceeds maxval {maxval}"),
                ));
            }
            data[ch * plane + i] = raw as f64 / maxval as f64;
        }
    }
    Tensor::new(vec![channels, h, w], data)
}

pub fn save_image(path: &Path, img: &Tensor) -> Result<()> {
    fs::write(path, encode_image(img)?)?;
    Ok(())
}

pub fn load_image(path: &Path) -> Result<Tensor> {
    decode_image(&fs::read(path)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestPair {
    pub split: String,
    pub index: usize,
    pub x_file: String,
    pub y_file: String,
}

/// Plain-text index of a task directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub suite: Suite,
    pub task: usize,
    pub seed: u64,
    pub metric: Metric,
    pub shape: [usize; 3],
    pub train: usize,
    pub test: usize,
    pub pairs: Vec<ManifestPair>,
}

pub fn write_manifest(m: &Manifest) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "suite\t{}", m.suite.name());
    let _ = writeln!(s, "task\t{}", m.task);
    let _ = writeln!(s, "seed\t{}", m.seed);
    let _ = writeln!(s, "metric\t{}", m.metric.name());
    let _ = writeln!(s, "shape\t{}\t{}\t{}", m.shape[0], m.shape[1], m.shape[2]);
    let _ = writeln!(s, "train\t{}", m.train);
    let _ = writeln!(s, "test\t{}", m.test);
    for p in &m.pairs {
        let _ = writeln!(
            s,
            "pair\t{}\t{}\t{}\t{}",
            p.split, p.index, p.x_file, p.y_file
        );
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut suite = None;
    let mut task = None;
    let mut seed = None;
    let mut metric = None;
    let mut shape = None;
    let mut train = None;
    let mut test = None;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let bad = |message: String| Error::Config {
            line: i + 1,
            message,
        };
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| bad(format!("not a number: `{s}`")))
        };
        let arity = |n: usize| {
            if f.len() == n {
                Ok(())
            } else {
                Err(bad(format!("expected {n} fields")))
            }
        };
        match f[0] {
            "suite" => {
                arity(2)?;
                suite = Some(Suite::parse(f[1]).map_err(|e| bad(e.to_string()))?);
            }
            "task" => {
                arity(2)?;
                task = Some(num(f[1])?);
            }
            "seed" => {
                arity(2)?;
                seed = Some(
                    f[1].parse::<u64>()
                        .map_err(|_| bad(format!("bad seed `{}`", f[1])))?,
                );
            }
            "metric" => {
                arity(2)?;
                metric = Some(Metric::parse(f[1]).map_err(|e| bad(e.to_string()))?);
            }
            "shape" => {
                arity(4)?;
                shape = Some([num(f[1])?, num(f[2])?, num(f[3])?]);
            }
            "train" => {
                arity(2)?;
                train = Some(num(f[1])?);
            }
            "test" => {
                arity(2)?;
                test = Some(num(f[1])?);
            }
            "pair" => {
                arity(5)?;
                pairs.push(ManifestPair {
                    split: f[1].to_string(),
                    index: num(f[2])?,
                    x_file: f[3].to_string(),
                    y_file: f[4].to_string(),
                });
            }
            other => return Err(bad(format!("unknown record `{other}`"))),
        }
    }
    let missing = |k: &str| Error::Missing(format!("manifest field {k}"));
    Ok(Manifest {
        suite: suite.ok_or_else(|| missing("suite"))?,
        task: task.ok_or_else(|| missing("task"))?,
        seed: seed.ok_or_else(|| missing("seed"))?,
        metric: metric.ok_or_else(|| missing("metric"))?,
        shape: shape.ok_or_else(|| missing("shape"))?,
        train: train.ok_or_else(|| missing("train"))?,
        test: test.ok_or_else(|| missing("test"))?,
        pairs,
    })
}

pub fn save_manifest(path: &Path, m: &Manifest) -> Result<()> {
    fs::write(path, write_manifest(m))?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    parse_manifest(&fs::read_to_string(path)?)
}

/// Write a task's images and `manifest.tsv` into `dir`.
pub fn save_task(dir: &Path, task: &TaskSpec) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let ext = if task.shape[0] == 1 { "pgm" } else { "ppm" };
    let mut pairs = Vec::new();
    for (split, items) in [("train", &task.train), ("test", &task.test)] {
        for (i, p) in items.iter().enumerate() {
            let x_file = format!("{split}_{i:04}_x.{ext}");
            let y_file = format!("{split}_{i:04}_y.{ext}");
            save_image(&dir.join(&x_file), &p.x)?;
            save_image(&dir.join(&y_file), &p.y)?;
            pairs.push(ManifestPair {
                split: split.into(),
                index: i,
                x_file,
                y_file,
            });
        }
    }
    let m = Manifest {
        suite: task.suite,
        task: task.task,
        seed: task.seed,
        metric: task.metric(),
        shape: task.shape,
        train: task.train.len(),
        test: task.test.len(),
        pairs,
    };
    save_manifest(&dir.join("manifest.tsv"), &m)?;
    Ok(m)
}

/// Read a task directory written by [`save_task`]. Pixel values carry the
/// 16-bit quantization of the files.
pub fn load_task(dir: &Path) -> Result<TaskSpec> {
    let m = load_manifest(&dir.join("manifest.tsv"))?;
    let mut train = Vec::with_capacity(m.train);
    let mut test = Vec::with_capacity(m.test);
    for p in &m.pairs {
        let pair = Pair {
            x: load_image(&dir.join(&p.x_file))?,
            y: load_image(&dir.join(&p.y_file))?,
        };
        match p.split.as_str() {
            "train" => train.push(pair),
            "test" => test.push(pair),
            other => return Err(Error::Invalid(format!("unknown split `{other}`"))),
        }
    }
    if train.len() != m.train || test.len() != m.test {
        return Err(Error::Invalid(
            "manifest counts disagree with pair records".into(),
        ));
    }
    Ok(TaskSpec {
        suite: m.suite,
        task: m.task,
        seed: m.seed,
        train,
        test,
        shape: m.shape,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_gld_like;

    #[test]
    fn image_round_trip_within_quantization() {
        let t = gen_gld_like(2, 3, 0, 4).unwrap();
        for img in [&t.train[0].x, &t.train[1].y] {
            let back = decode_image(&encode_image(img).unwrap()).unwrap();
            assert_eq!(back.shape(), img.shape());
            assert!(back.max_abs_diff(img) <= 1.0 / 65535.0);
        }
        let gray = Tensor::new(vec![1, 2, 2], vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        let bytes = encode_image(&gray).unwrap();
        assert!(bytes.starts_with(b"P5\n2 2\n65535\n"));
        assert!(decode_image(&bytes).unwrap().max_abs_diff(&gray) <= 1.0 / 65535.0);
    }

    #[test]
    fn wrong_magic_and_truncation() {
        let err = decode_image(b"P3\n1 1\n255\n0").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");
        let gray = Tensor::full(&[1, 4, 4], 0.5);
        let bytes = encode_image(&gray).unwrap();
        let err = decode_image(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
        let err = decode_image(b"P5\n4 x\n65535\n").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 5, .. }), "{err}");
    }

    #[test]
    fn manifest_round_trip() {
        let m = Manifest {
            suite: Suite::DfdLike,
            task: 3,
            seed: 99,
            metric: Metric::Psnr,
            shape: [1, 16, 16],
            train: 1,
            test: 0,
            pairs: vec![ManifestPair {
                split: "train".into(),
                index: 0,
                x_file: "train_0000_x.pgm".into(),
                y_file: "train_0000_y.pgm".into(),
            }],
        };
        assert_eq!(parse_manifest(&write_manifest(&m)).unwrap(), m);
        assert!(parse_manifest("suite\tdfd_like\nbogus\t1\n").is_err());
    }
}
