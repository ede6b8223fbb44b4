//! Experiment driver: single runs, method suites, ablations, sweeps,
//! sequence and quota studies, and the CSV reports they emit.

mod config;
mod records;
mod report;
mod study;
mod train;

pub use config::{default_lr, parse_order, Ablation, Method, RunConfig, Seeds, ABLATIONS};
pub use records::{
    read_metrics, write_accounting, write_forgetting, write_metrics, AccountingRow, EvalTask,
    ForgettingRow, MetricsRecord, ACCOUNTING_HEADER, FORGETTING_HEADER, METRICS_HEADER,
};
pub use report::{render_report, ReportFormat};
pub use study::{
    ablate, ablation_configs, parse_permutations, permutations, quota_curve, run_suite,
    sequence_study, suite_configs, sweep, sweep_configs, write_outputs, Runner, StudyOutcome,
    SweepParam,
};
pub use train::{
    average, discriminator_step, evaluate_all, replay_container, task_dir, train_task, Access,
    EvalCell, Split, Storage, TaskOutcome, TaskStore, TrainState,
};

use crate::data::Metric;
use crate::error::Result;

/// Structural state after one task.
#[derive(Debug, Clone, PartialEq)]
pub struct PostState {
    pub task: usize,
    pub memory_tasks: Vec<usize>,
    pub snapshot_source: Option<usize>,
    /// `(task, retained pairs)` per replay entry.
    pub replay: Vec<(usize, usize)>,
    pub storage: Storage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub config: RunConfig,
    pub metrics: Vec<MetricsRecord>,
    pub forgetting: Vec<ForgettingRow>,
    pub accounting: Vec<AccountingRow>,
    pub post_states: Vec<PostState>,
    pub past_train_reads: usize,
}

impl RunResult {
    /// The same result reported under another config's labels.
    pub fn relabeled(&self, cfg: &RunConfig) -> RunResult {
        let mut r = self.clone();
        let method = cfg.method.name().to_string();
        for m in &mut r.metrics {
            m.run_id.clone_from(&cfg.run_id);
            m.method.clone_from(&method);
        }
        for f in &mut r.forgetting {
            f.run_id.clone_from(&cfg.run_id);
            f.method.clone_from(&method);
        }
        for a in &mut r.accounting {
            a.run_id.clone_from(&cfg.run_id);
            a.method.clone_from(&method);
        }
        r.config = cfg.clone();
        r
    }

    pub fn tasks(&self) -> usize {
        self.config.order.len()
    }

    /// Metric of `eval` after `tasks_trained` tasks.
    pub fn value(&self, tasks_trained: usize, eval: EvalTask, metric: Metric) -> Option<f64> {
        self.metrics
            .iter()
            .find(|m| m.tasks_trained == tasks_trained && m.eval_task == eval)
            .map(|m| match metric {
                Metric::Psnr => m.psnr_db,
                Metric::Ssim => m.ssim,
            })
    }

    pub fn final_avg(&self, metric: Metric) -> f64 {
        self.value(self.tasks(), EvalTask::Avg, metric)
            .expect("every run ends with an AVG row")
    }

    /// First task's metric after the full sequence.
    pub fn first_task_final(&self, metric: Metric) -> f64 {
        self.value(self.tasks(), EvalTask::Task(self.config.order[0]), metric)
            .expect("first task evaluated")
    }

    /// First task's metric right after it was learned minus its final value.
    pub fn first_task_drop(&self, metric: Metric) -> f64 {
        let first = EvalTask::Task(self.config.order[0]);
        self.value(1, first, metric).expect("first task evaluated") - self.first_task_final(metric)
    }
}

/// Train every task of `cfg.order` and collect all rows.
pub fn run(cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    let mut store = TaskStore::open(cfg);
    let mut state = TrainState::new(cfg)?;
    let metric = cfg.suite.metric();
    let labels = (
        cfg.run_id.clone(),
        cfg.method.name().to_string(),
        cfg.suite.name().to_string(),
    );
    let mut result = RunResult {
        config: cfg.clone(),
        metrics: Vec::new(),
        forgetting: Vec::new(),
        accounting: Vec::new(),
        post_states: Vec::new(),
        past_train_reads: 0,
    };

    for (i, &task) in cfg.order.iter().enumerate() {
        let trained = i + 1;
        let out = train_task(&mut state, &mut store, cfg, task)?;
        let storage = state.storage();

        for (e, cells) in out.epochs.iter().enumerate() {
            for c in cells {
                result.forgetting.push(ForgettingRow {
                    run_id: labels.0.clone(),
                    method: labels.1.clone(),
                    suite: labels.2.clone(),
                    tasks_trained: trained,
                    epoch: e + 1,
                    eval_task: c.task,
                    metric: metric.name(),
                    value: match metric {
                        Metric::Psnr => c.psnr_db,
                        Metric::Ssim => c.ssim,
                    },
                });
            }
        }

        let cells = out.epochs.last().expect("at least one epoch");
        let wall = if cfg.record_wall_time {
            state.train_s + state.post_s
        } else {
            0.0
        };
        let row = |eval_task, psnr_db, ssim| MetricsRecord {
            run_id: labels.0.clone(),
            method: labels.1.clone(),
            suite: labels.2.clone(),
            tasks_trained: trained,
            eval_task,
            epoch: cfg.epochs,
            psnr_db,
            ssim,
            l_mse: out.losses.l_mse,
            l_adv: out.losses.l_adv,
            l_feature: out.losses.l_feature,
            wall_s: wall,
            stored_bytes: storage.total(),
        };
        for c in cells {
            result
                .metrics
                .push(row(EvalTask::Task(c.task), c.psnr_db, c.ssim));
        }
        let (p, s) = average(cells);
        result.metrics.push(row(EvalTask::Avg, p, s));

        result.accounting.push(AccountingRow {
            run_id: labels.0.clone(),
            method: labels.1.clone(),
            tasks_trained: trained,
            task,
            model_bytes: storage.model,
            memory_bytes: storage.memory,
            snapshot_bytes: storage.snapshot,
            replay_bytes: storage.replay,
            stored_bytes: storage.total(),
            train_s: out.train_s,
            post_s: out.post_s,
        });
        result.post_states.push(PostState {
            task,
            memory_tasks: state.memory.task_ids(),
            snapshot_source: state.snapshot.as_ref().map(|s| s.source_task),
            replay: state.replay.iter().map(|(t, p)| (*t, p.len())).collect(),
            storage,
        });
    }
    result.past_train_reads = store.past_train_reads();
    Ok(result)
}
