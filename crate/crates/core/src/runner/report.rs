//! Summaries of a metrics.csv: per-run task matrices and final scores.

use std::fmt::Write as _;

use crate::data::{Metric, Suite};
use crate::error::{Error, Result};

use super::records::{EvalTask, MetricsRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<ReportFormat> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(Error::Invalid(format!("unknown report format `{other}`"))),
        }
    }
}

struct RunView<'a> {
    run_id: &'a str,
    method: &'a str,
    metric: Metric,
    rows: Vec<&'a MetricsRecord>,
}

impl RunView<'_> {
    fn pick(&self, r: &MetricsRecord) -> f64 {
        match self.metric {
            Metric::Psnr => r.psnr_db,
            Metric::Ssim => r.ssim,
        }
    }

    fn tasks(&self) -> usize {
        self.rows.iter().map(|r| r.tasks_trained).max().unwrap_or(0)
    }

    /// Eval tasks in first-seen order.
    fn columns(&self) -> Vec<usize> {
        let mut cols = Vec::new();
        for r in &self.rows {
            if let EvalTask::Task(t) = r.eval_task {
                if !cols.contains(&t) {
                    cols.push(t);
                }
            }
        }
        cols
    }

    fn get(&self, trained: usize, eval: EvalTask) -> Option<&MetricsRecord> {
        self.rows
            .iter()
            .copied()
            .find(|r| r.tasks_trained == trained && r.eval_task == eval)
    }

    fn first_task(&self) -> Option<usize> {
        self.columns().first().copied()
    }

    fn first_drop(&self) -> Option<f64> {
        let t = EvalTask::Task(self.first_task()?);
        Some(self.pick(self.get(1, t)?) - self.pick(self.get(self.tasks(), t)?))
    }
}

fn group(records: &[MetricsRecord]) -> Result<Vec<RunView<'_>>> {
    let mut views: Vec<RunView> = Vec::new();
    for r in records {
        match views.iter_mut().find(|v| v.run_id == r.run_id) {
            Some(v) => v.rows.push(r),
            None => {
                let suite = Suite::parse(&r.suite)?;
                views.push(RunView {
                    run_id: &r.run_id,
                    method: &r.method,
                    metric: suite.metric(),
                    rows: vec![r],
                });
            }
        }
    }
    Ok(views)
}

fn fmt_value(metric: Metric, v: f64) -> String {
    match metric {
        Metric::Psnr => format!("{v:.2}"),
        Metric::Ssim => format!("{v:.4}"),
    }
}

/// Render a report of `records`, grouped by run in file order.
pub fn render_report(records: &[MetricsRecord], format: ReportFormat) -> Result<String> {
    let views = group(records)?;
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str(
                "run_id,method,suite,metric,tasks,final_avg_psnr,final_avg_ssim,first_task,first_task_drop,stored_bytes\n",
            );
            for v in &views {
                let n = v.tasks();
                let avg = v
                    .get(n, EvalTask::Avg)
                    .ok_or_else(|| Error::Missing(format!("AVG row of {}", v.run_id)))?;
                let _ = writeln!(
                    out,
                    "{},{},{},{},{n},{},{},{},{},{}",
                    v.run_id,
                    v.method,
                    avg.suite,
                    v.metric.name(),
                    avg.psnr_db,
                    avg.ssim,
                    v.first_task().unwrap_or(0),
                    v.first_drop().unwrap_or(f64::NAN),
                    avg.stored_bytes
                );
            }
        }
        ReportFormat::Markdown => {
            for v in &views {
                let cols = v.columns();
                let _ = writeln!(
                    out,
                    "### {} ({}, {})\n",
                    v.run_id,
                    v.method,
                    v.metric.name().to_uppercase()
                );
                let head: Vec<String> = cols.iter().map(|t| format!("T{t}")).collect();
                let _ = writeln!(out, "| tasks | {} | AVG | stored bytes |", head.join(" | "));
                let _ = writeln!(out, "|---|{}---|---|", "---|".repeat(cols.len()));
                for trained in 1..=v.tasks() {
                    let cells: Vec<String> = cols
                        .iter()
                        .map(|&t| {
                            v.get(trained, EvalTask::Task(t))
                                .map_or(String::new(), |r| fmt_value(v.metric, v.pick(r)))
                        })
                        .collect();
                    let avg = v.get(trained, EvalTask::Avg);
                    let _ = writeln!(
                        out,
                        "| {trained} | {} | {} | {} |",
                        cells.join(" | "),
                        avg.map_or(String::new(), |r| fmt_value(v.metric, v.pick(r))),
                        avg.map_or(0, |r| r.stored_bytes)
                    );
                }
                out.push('\n');
            }
            out.push_str("| run | method | final AVG | first-task drop | stored bytes |\n|---|---|---|---|---|\n");
            for v in &views {
                let n = v.tasks();
                let avg = v.get(n, EvalTask::Avg);
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} |",
                    v.run_id,
                    v.method,
                    avg.map_or(String::new(), |r| fmt_value(v.metric, v.pick(r))),
                    v.first_drop()
                        .map_or(String::new(), |d| fmt_value(v.metric, d)),
                    avg.map_or(0, |r| r.stored_bytes)
                );
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(run: &str, trained: usize, eval: EvalTask, psnr: f64) -> MetricsRecord {
        MetricsRecord {
            run_id: run.into(),
            method: "tl".into(),
            suite: "dfd_like".into(),
            tasks_trained: trained,
            eval_task: eval,
            epoch: 1,
            psnr_db: psnr,
            ssim: 0.5,
            l_mse: 0.0,
            l_adv: 0.0,
            l_feature: 0.0,
            wall_s: 0.0,
            stored_bytes: 10,
        }
    }

    fn sample() -> Vec<MetricsRecord> {
        vec![
            rec("a", 1, EvalTask::Task(2), 20.0),
            rec("a", 1, EvalTask::Avg, 20.0),
            rec("a", 2, EvalTask::Task(2), 17.0),
            rec("a", 2, EvalTask::Task(1), 25.0),
            rec("a", 2, EvalTask::Avg, 21.0),
        ]
    }

    #[test]
    fn csv_summary() {
        let text = render_report(&sample(), ReportFormat::Csv).unwrap();
        let line = text.lines().nth(1).unwrap();
        assert_eq!(line, "a,tl,dfd_like,psnr,2,21,0.5,2,3,10");
    }

    #[test]
    fn markdown_matrix_keeps_arrival_order() {
        let text = render_report(&sample(), ReportFormat::Markdown).unwrap();
        assert!(
            text.contains("| tasks | T2 | T1 | AVG | stored bytes |"),
            "{text}"
        );
        assert!(text.contains("| 1 | 20.00 |  | 20.00 | 10 |"), "{text}");
        assert!(
            text.contains("| 2 | 17.00 | 25.00 | 21.00 | 10 |"),
            "{text}"
        );
    }
}
