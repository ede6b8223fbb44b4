//! Multi-run studies. Each writes its configs before training and its CSVs
//! after every run has finished, in configured order.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::Metric;
use crate::error::{Error, Result};

use super::config::{parse_order, Method, RunConfig, ABLATIONS};
use super::records::{write_accounting, write_forgetting, write_metrics, EvalTask};
use super::{run, RunResult};

/// Executes runs, reusing results for configs with identical trajectories.
#[derive(Default)]
pub struct Runner {
    cache: HashMap<String, RunResult>,
    caching: bool,
    /// Runs actually trained (cache hits excluded).
    pub executed: usize,
}

impl Runner {
    pub fn new() -> Self {
        Runner {
            caching: true,
            ..Default::default()
        }
    }

    /// A runner that trains every requested run.
    pub fn uncached() -> Self {
        Runner::default()
    }

    pub fn run(&mut self, cfg: &RunConfig) -> Result<RunResult> {
        let key = cfg.trajectory_key();
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit.relabeled(cfg));
        }
        let result = run(cfg)?;
        self.executed += 1;
        if self.caching {
            self.cache.insert(key, result.clone());
        }
        Ok(result)
    }
}

#[derive(Debug, Clone, Default)]
pub struct StudyOutcome {
    pub results: Vec<RunResult>,
    /// `(run_id, error)` for runs that did not complete.
    pub failures: Vec<(String, String)>,
}

impl StudyOutcome {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn get(&self, run_id: &str) -> Option<&RunResult> {
        self.results.iter().find(|r| r.config.run_id == run_id)
    }
}

/// metrics.csv, forgetting.csv and accounting.csv for `results`, in order.
pub fn write_outputs(dir: &Path, results: &[RunResult]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let metrics: Vec<_> = results
        .iter()
        .flat_map(|r| r.metrics.iter().cloned())
        .collect();
    let forgetting: Vec<_> = results
        .iter()
        .flat_map(|r| r.forgetting.iter().cloned())
        .collect();
    let accounting: Vec<_> = results
        .iter()
        .flat_map(|r| r.accounting.iter().cloned())
        .collect();
    write_metrics(&dir.join("metrics.csv"), &metrics)?;
    write_forgetting(&dir.join("forgetting.csv"), &forgetting)?;
    write_accounting(&dir.join("accounting.csv"), &accounting)
}

fn execute(
    runner: &mut Runner,
    base: &RunConfig,
    cfgs: &[RunConfig],
    out: Option<&Path>,
) -> Result<StudyOutcome> {
    let mut ids: Vec<&str> = cfgs.iter().map(|c| c.run_id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Duplicate(format!("run_id {}", w[0])));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.snapshot"), base.to_text())?;
        for c in cfgs {
            let run_dir = dir.join("runs").join(&c.run_id);
            fs::create_dir_all(&run_dir)?;
            fs::write(run_dir.join("config.snapshot"), c.to_text())?;
        }
    }
    let mut outcome = StudyOutcome::default();
    for c in cfgs {
        match runner.run(c) {
            Ok(r) => outcome.results.push(r),
            Err(e) => outcome.failures.push((c.run_id.clone(), e.to_string())),
        }
    }
    if let Some(dir) = out {
        write_outputs(dir, &outcome.results)?;
        let failures_path = dir.join("failures.txt");
        if outcome.failures.is_empty() {
            if failures_path.exists() {
                fs::remove_file(failures_path)?;
            }
        } else {
            let text: String = outcome
                .failures
                .iter()
                .map(|(id, e)| format!("{id}\t{e}\n"))
                .collect();
            fs::write(failures_path, text)?;
        }
    }
    Ok(outcome)
}

/// TL, JL, EWC, REPLAY and ASSOC on the same seeds.
pub fn suite_configs(base: &RunConfig) -> Vec<RunConfig> {
    Method::ALL.iter().map(|&m| base.with_method(m)).collect()
}

pub fn run_suite(
    runner: &mut Runner,
    base: &RunConfig,
    out: Option<&Path>,
) -> Result<StudyOutcome> {
    execute(runner, base, &suite_configs(base), out)
}

/// The six component sets, all under the ASSOC method.
pub fn ablation_configs(base: &RunConfig) -> Vec<RunConfig> {
    ABLATIONS
        .iter()
        .map(|(label, mask)| {
            let mut c = base.with_method(Method::Assoc);
            c.mask = *mask;
            c.run_id = format!("ablate-{}", label.trim_start_matches('+'));
            c
        })
        .collect()
}

pub fn ablate(runner: &mut Runner, base: &RunConfig, out: Option<&Path>) -> Result<StudyOutcome> {
    execute(runner, base, &ablation_configs(base), out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    LambdaPrime,
}

impl SweepParam {
    pub fn parse(s: &str) -> Result<SweepParam> {
        match s {
            "lambda_prime" => Ok(SweepParam::LambdaPrime),
            other => Err(Error::Invalid(format!(
                "unsupported sweep parameter `{other}`"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        "lambda_prime"
    }
}

pub fn sweep_configs(base: &RunConfig, param: SweepParam, values: &[f64]) -> Vec<RunConfig> {
    values
        .iter()
        .map(|&v| {
            let mut c = base.clone();
            match param {
                SweepParam::LambdaPrime => c.weights.lambda_prime = v,
            }
            c.run_id = format!("{}={v}", param.name());
            c
        })
        .collect()
}

/// One run per value; also writes sweep.csv with first-task retention.
pub fn sweep(
    runner: &mut Runner,
    base: &RunConfig,
    param: SweepParam,
    values: &[f64],
    out: Option<&Path>,
) -> Result<StudyOutcome> {
    let cfgs = sweep_configs(base, param, values);
    let outcome = execute(runner, base, &cfgs, out)?;
    if let Some(dir) = out {
        let metric = base.suite.metric();
        let mut text = String::from(
            "param,value,run_id,metric,first_task,after_first,final_first,drop,final_avg\n",
        );
        for (v, c) in values.iter().zip(&cfgs) {
            if let Some(r) = outcome.get(&c.run_id) {
                let first = EvalTask::Task(c.order[0]);
                let _ = writeln!(
                    text,
                    "{},{v},{},{},{},{},{},{},{}",
                    param.name(),
                    c.run_id,
                    metric.name(),
                    c.order[0],
                    r.value(1, first, metric).unwrap_or(f64::NAN),
                    r.first_task_final(metric),
                    r.first_task_drop(metric),
                    r.final_avg(metric)
                );
            }
        }
        fs::write(dir.join("sweep.csv"), text)?;
    }
    Ok(outcome)
}

/// Every ordering of `1..=n`, lexicographic.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut p: Vec<usize> = (1..=n).collect();
    let mut all = vec![p.clone()];
    loop {
        let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
            return all;
        };
        let j = (i..p.len())
            .rev()
            .find(|&j| p[j] > p[i - 1])
            .expect("a larger element exists");
        p.swap(i - 1, j);
        p[i..].reverse();
        all.push(p.clone());
    }
}

/// `all`, or orders separated by `;` (each `1,2,3,4` or `1234`). A
/// single comma list of compact orders such as `1234,4321` also works.
pub fn parse_permutations(spec: &str, tasks: usize) -> Result<Vec<Vec<usize>>> {
    let spec = spec.trim();
    if spec == "all" {
        return Ok(permutations(tasks));
    }
    let groups: Vec<&str> = if spec.contains(';') {
        spec.split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect()
    } else if spec.split(',').all(|p| p.trim().len() == tasks) && tasks > 1 {
        spec.split(',').map(str::trim).collect()
    } else {
        vec![spec]
    };
    groups.iter().map(|g| parse_order(g)).collect()
}

pub fn sequence_study(
    runner: &mut Runner,
    base: &RunConfig,
    perms: &[Vec<usize>],
    out: Option<&Path>,
) -> Result<StudyOutcome> {
    let cfgs: Vec<RunConfig> = perms
        .iter()
        .map(|p| {
            let mut c = base.clone();
            c.order.clone_from(p);
            let ids: Vec<String> = p.iter().map(|t| t.to_string()).collect();
            c.run_id = format!("order-{}", ids.join("-"));
            c
        })
        .collect();
    for c in &cfgs {
        c.validate()?;
    }
    let outcome = execute(runner, base, &cfgs, out)?;
    if let Some(dir) = out {
        let metric = base.suite.metric();
        let mut text = String::from("run_id,order,metric,eval_task,final_value,final_avg\n");
        for c in &cfgs {
            if let Some(r) = outcome.get(&c.run_id) {
                let order: Vec<String> = c.order.iter().map(|t| t.to_string()).collect();
                let mut tasks = c.order.clone();
                tasks.sort_unstable();
                for t in tasks {
                    let v = r
                        .value(r.tasks(), EvalTask::Task(t), metric)
                        .unwrap_or(f64::NAN);
                    let _ = writeln!(
                        text,
                        "{},{},{},{t},{v},{}",
                        c.run_id,
                        order.join("-"),
                        metric.name(),
                        r.final_avg(metric)
                    );
                }
            }
        }
        fs::write(dir.join("sequence.csv"), text)?;
    }
    Ok(outcome)
}

/// Average metric over seen tasks after every epoch, for TL, ASSOC and JL.
pub fn quota_curve(
    runner: &mut Runner,
    base: &RunConfig,
    out: Option<&Path>,
) -> Result<StudyOutcome> {
    let cfgs: Vec<RunConfig> = [Method::Tl, Method::Assoc, Method::Jl]
        .iter()
        .map(|&m| base.with_method(m))
        .collect();
    let outcome = execute(runner, base, &cfgs, out)?;
    if let Some(dir) = out {
        let metric: Metric = base.suite.metric();
        let mut text = String::from("run_id,method,tasks_trained,epoch,step,metric,avg_value\n");
        for r in &outcome.results {
            let mut step = 0;
            let rows = &r.forgetting;
            let mut i = 0;
            while i < rows.len() {
                let (t, e) = (rows[i].tasks_trained, rows[i].epoch);
                let group: Vec<f64> = rows[i..]
                    .iter()
                    .take_while(|x| x.tasks_trained == t && x.epoch == e)
                    .map(|x| x.value)
                    .collect();
                i += group.len();
                step += 1;
                let avg = group.iter().sum::<f64>() / group.len() as f64;
                let _ = writeln!(
                    text,
                    "{},{},{t},{e},{step},{},{avg}",
                    r.config.run_id,
                    r.config.method.name(),
                    metric.name()
                );
            }
        }
        fs::write(dir.join("quota.csv"), text)?;
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_enumeration() {
        let p = permutations(3);
        assert_eq!(p.len(), 6);
        assert_eq!(p[0], vec![1, 2, 3]);
        assert_eq!(p[5], vec![3, 2, 1]);
        assert_eq!(permutations(4).len(), 24);
    }

    #[test]
    fn permutation_specs() {
        assert_eq!(parse_permutations("all", 3).unwrap().len(), 6);
        assert_eq!(
            parse_permutations("1234,4321", 4).unwrap(),
            vec![vec![1, 2, 3, 4], vec![4, 3, 2, 1]]
        );
        assert_eq!(
            parse_permutations("1,2,3;3,2,1", 3).unwrap(),
            vec![vec![1, 2, 3], vec![3, 2, 1]]
        );
        assert_eq!(parse_permutations("2,1,3", 3).unwrap(), vec![vec![2, 1, 3]]);
    }

    #[test]
    fn study_config_labels() {
        let base = RunConfig::default();
        let ids: Vec<String> = ablation_configs(&base)
            .into_iter()
            .map(|c| c.run_id)
            .collect();
        assert_eq!(
            ids,
            [
                "ablate-backbone",
                "ablate-mse",
                "ablate-adv",
                "ablate-feature",
                "ablate-heuristics",
                "ablate-full"
            ]
        );
        let s = sweep_configs(&base, SweepParam::LambdaPrime, &[0.0, 5.0]);
        assert_eq!(s[0].run_id, "lambda_prime=0");
        assert_eq!(s[1].weights.lambda_prime, 5.0);
        assert_eq!(suite_configs(&base).len(), 5);
    }
}
