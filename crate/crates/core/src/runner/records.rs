//! Result rows and their CSV files.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const METRICS_HEADER: [&str; 13] = [
    "run_id",
    "method",
    "suite",
    "tasks_trained",
    "eval_task",
    "epoch",
    "psnr_db",
    "ssim",
    "l_mse",
    "l_adv",
    "l_feature",
    "wall_s",
    "stored_bytes",
];

pub const FORGETTING_HEADER: [&str; 8] = [
    "run_id",
    "method",
    "suite",
    "tasks_trained",
    "epoch",
    "eval_task",
    "metric",
    "value",
];

pub const ACCOUNTING_HEADER: [&str; 11] = [
    "run_id",
    "method",
    "tasks_trained",
    "task",
    "model_bytes",
    "memory_bytes",
    "snapshot_bytes",
    "replay_bytes",
    "stored_bytes",
    "train_s",
    "post_s",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalTask {
    Task(usize),
    Avg,
}

impl fmt::Display for EvalTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalTask::Task(t) => write!(f, "{t}"),
            EvalTask::Avg => f.write_str("AVG"),
        }
    }
}

impl FromStr for EvalTask {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "AVG" {
            return Ok(EvalTask::Avg);
        }
        s.parse()
            .map(EvalTask::Task)
            .map_err(|_| Error::Invalid(format!("bad eval_task `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub run_id: String,
    pub method: String,
    pub suite: String,
    pub tasks_trained: usize,
    pub eval_task: EvalTask,
    pub epoch: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub l_mse: f64,
    pub l_adv: f64,
    pub l_feature: f64,
    pub wall_s: f64,
    pub stored_bytes: usize,
}

impl MetricsRecord {
    fn fields(&self) -> Vec<String> {
        vec![
            self.run_id.clone(),
            self.method.clone(),
            self.suite.clone(),
            self.tasks_trained.to_string(),
            self.eval_task.to_string(),
            self.epoch.to_string(),
            self.psnr_db.to_string(),
            self.ssim.to_string(),
            self.l_mse.to_string(),
            self.l_adv.to_string(),
            self.l_feature.to_string(),
            self.wall_s.to_string(),
            self.stored_bytes.to_string(),
        ]
    }

    fn from_fields(r: &csv::StringRecord, line: usize) -> Result<Self> {
        let get = |i: usize| {
            r.get(i).ok_or_else(|| Error::Config {
                line,
                message: format!("missing column {i}"),
            })
        };
        let num = |i: usize| -> Result<f64> {
            get(i)?.parse().map_err(|_| Error::Config {
                line,
                message: format!("bad number in column {}", METRICS_HEADER[i]),
            })
        };
        let int = |i: usize| -> Result<usize> {
            get(i)?.parse().map_err(|_| Error::Config {
                line,
                message: format!("bad integer in column {}", METRICS_HEADER[i]),
            })
        };
        Ok(MetricsRecord {
            run_id: get(0)?.to_string(),
            method: get(1)?.to_string(),
            suite: get(2)?.to_string(),
            tasks_trained: int(3)?,
            eval_task: get(4)?.parse()?,
            epoch: int(5)?,
            psnr_db: num(6)?,
            ssim: num(7)?,
            l_mse: num(8)?,
            l_adv: num(9)?,
            l_feature: num(10)?,
            wall_s: num(11)?,
            stored_bytes: int(12)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForgettingRow {
    pub run_id: String,
    pub method: String,
    pub suite: String,
    pub tasks_trained: usize,
    /// 1-based epoch within the current task.
    pub epoch: usize,
    pub eval_task: usize,
    pub metric: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccountingRow {
    pub run_id: String,
    pub method: String,
    pub tasks_trained: usize,
    pub task: usize,
    pub model_bytes: usize,
    pub memory_bytes: usize,
    pub snapshot_bytes: usize,
    pub replay_bytes: usize,
    pub stored_bytes: usize,
    pub train_s: f64,
    pub post_s: f64,
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Invalid(format!("csv: {other:?}")),
    }
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r.into_iter().collect::<Vec<_>>())
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics(path: &Path, rows: &[MetricsRecord]) -> Result<()> {
    write_rows(
        path,
        &METRICS_HEADER,
        rows.iter().map(MetricsRecord::fields),
    )
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(Error::Config {
            line: 1,
            message: format!("unexpected metrics header {header:?}"),
        });
    }
    r.records()
        .enumerate()
        .map(|(i, rec)| MetricsRecord::from_fields(&rec.map_err(csv_err)?, i + 2))
        .collect()
}

pub fn write_forgetting(path: &Path, rows: &[ForgettingRow]) -> Result<()> {
    write_rows(
        path,
        &FORGETTING_HEADER,
        rows.iter().map(|r| {
            vec![
                r.run_id.clone(),
                r.method.clone(),
                r.suite.clone(),
                r.tasks_trained.to_string(),
                r.epoch.to_string(),
                r.eval_task.to_string(),
                r.metric.to_string(),
                r.value.to_string(),
            ]
        }),
    )
}

pub fn write_accounting(path: &Path, rows: &[AccountingRow]) -> Result<()> {
    write_rows(
        path,
        &ACCOUNTING_HEADER,
        rows.iter().map(|r| {
            vec![
                r.run_id.clone(),
                r.method.clone(),
                r.tasks_trained.to_string(),
                r.task.to_string(),
                r.model_bytes.to_string(),
                r.memory_bytes.to_string(),
                r.snapshot_bytes.to_string(),
                r.replay_bytes.to_string(),
                r.stored_bytes.to_string(),
                format!("{:.3}", r.train_s),
                format!("{:.3}", r.post_s),
            ]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(task: EvalTask) -> MetricsRecord {
        MetricsRecord {
            run_id: "r".into(),
            method: "assoc".into(),
            suite: "dfd_like".into(),
            tasks_trained: 2,
            eval_task: task,
            epoch: 30,
            psnr_db: 21.123456789012345,
            ssim: 0.1 + 0.2,
            l_mse: 1e-300,
            l_adv: 0.69,
            l_feature: 0.0,
            wall_s: 0.0,
            stored_bytes: 123456,
        }
    }

    #[test]
    fn metrics_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let rows = vec![record(EvalTask::Task(1)), record(EvalTask::Avg)];
        write_metrics(&path, &rows).unwrap();
        assert_eq!(read_metrics(&path).unwrap(), rows);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "run_id,method,suite,tasks_trained,eval_task,epoch,psnr_db,ssim,l_mse,l_adv,l_feature,wall_s,stored_bytes\n"
        ));
        assert!(text.contains(",AVG,"));
    }

    #[test]
    fn wrong_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(matches!(
            read_metrics(&path),
            Err(Error::Config { line: 1, .. })
        ));
    }
}
