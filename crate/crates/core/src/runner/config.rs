//! Run configuration: flat `key = value` text, unknown keys rejected.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::continual::{LossMask, LossWeights};
use crate::data::Suite;
use crate::error::{Error, Result};
use crate::heuristics::{MapperConfig, RatioPolicy};
use crate::models::ArchSpec;
use crate::rng::derive_seed;
use crate::tensor::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Sequential fine-tuning, nothing retained.
    Tl,
    /// Cumulative joint training on every task seen so far.
    Jl,
    /// Fisher distillation only.
    Ewc,
    /// Raw past pairs mixed into each batch.
    Replay,
    /// Mapping memory plus Fisher distillation.
    Assoc,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Tl,
        Method::Jl,
        Method::Ewc,
        Method::Replay,
        Method::Assoc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Tl => "tl",
            Method::Jl => "jl",
            Method::Ewc => "ewc",
            Method::Replay => "replay",
            Method::Assoc => "assoc",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Invalid(format!("unknown method `{s}`")))
    }

    /// Terms this method switches on when the config leaves the mask unset.
    pub fn default_mask(self) -> Ablation {
        Ablation {
            mse: true,
            adv: true,
            feature: matches!(self, Method::Ewc | Method::Assoc),
            heuristics: self == Method::Assoc,
        }
    }
}

/// The four switchable components of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ablation {
    pub mse: bool,
    pub adv: bool,
    pub feature: bool,
    pub heuristics: bool,
}

impl Ablation {
    pub fn loss_mask(self) -> LossMask {
        LossMask {
            mse: self.mse,
            adv: self.adv,
            feature: self.feature,
        }
    }

    /// Whether the generator receives any gradient at all.
    pub fn updates_generator(self) -> bool {
        self.mse || self.adv || self.feature
    }
}

/// The six component sets of the module study, in reporting order.
pub const ABLATIONS: [(&str, Ablation); 6] = [
    (
        "backbone",
        Ablation {
            mse: false,
            adv: false,
            feature: false,
            heuristics: false,
        },
    ),
    (
        "+mse",
        Ablation {
            mse: true,
            adv: false,
            feature: false,
            heuristics: false,
        },
    ),
    (
        "+adv",
        Ablation {
            mse: true,
            adv: true,
            feature: false,
            heuristics: false,
        },
    ),
    (
        "+feature",
        Ablation {
            mse: true,
            adv: true,
            feature: true,
            heuristics: false,
        },
    ),
    (
        "+heuristics",
        Ablation {
            mse: true,
            adv: true,
            feature: false,
            heuristics: true,
        },
    ),
    (
        "full",
        Ablation {
            mse: true,
            adv: true,
            feature: true,
            heuristics: true,
        },
    ),
];

/// The four independent seed streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Seeds {
    pub data: u64,
    pub init: u64,
    pub train: u64,
    pub controller: u64,
}

impl Seeds {
    pub fn from_master(seed: u64) -> Self {
        Seeds {
            data: derive_seed(seed, 1),
            init: derive_seed(seed, 2),
            train: derive_seed(seed, 3),
            controller: derive_seed(seed, 4),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub run_id: String,
    pub suite: Suite,
    /// Task ids in arrival order.
    pub order: Vec<usize>,
    pub method: Method,
    pub epochs: usize,
    pub batch: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub optim: AdamConfig,
    pub weights: LossWeights,
    pub ratio: RatioPolicy,
    /// Fisher samples; clipped to the train size.
    pub fisher_samples: usize,
    pub seeds: Seeds,
    pub accumulate_fisher: bool,
    pub mask: Ablation,
    pub replay_per_task: usize,
    pub mapper: MapperConfig,
    pub width: usize,
    pub depth: usize,
    pub mapper_width: usize,
    pub mapper_depth: usize,
    /// Write real seconds into metrics.csv (breaks byte-identical reruns).
    pub record_wall_time: bool,
    /// Load tasks from `gen-data` output instead of generating in memory.
    pub data_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::new(Suite::DfdLike, Method::Assoc, 1)
    }
}

impl RunConfig {
    pub fn new(suite: Suite, method: Method, seed: u64) -> Self {
        RunConfig {
            run_id: method.name().to_string(),
            suite,
            order: (1..=suite.task_count()).collect(),
            method,
            epochs: 30,
            batch: 16,
            train_size: 200,
            test_size: 50,
            optim: AdamConfig {
                lr: default_lr(suite),
                ..AdamConfig::default()
            },
            weights: LossWeights::default(),
            ratio: RatioPolicy::default(),
            fisher_samples: 256,
            seeds: Seeds::from_master(seed),
            accumulate_fisher: false,
            mask: method.default_mask(),
            replay_per_task: 50,
            mapper: MapperConfig::default(),
            width: 8,
            depth: 2,
            mapper_width: 16,
            mapper_depth: 1,
            record_wall_time: false,
            data_dir: None,
        }
    }

    pub fn with_method(&self, method: Method) -> Self {
        RunConfig {
            method,
            mask: method.default_mask(),
            run_id: method.name().to_string(),
            ..self.clone()
        }
    }

    pub fn arch(&self) -> ArchSpec {
        ArchSpec {
            width: self.width,
            depth: self.depth,
            mapper_width: self.mapper_width,
            mapper_depth: self.mapper_depth,
            ..ArchSpec::with_channels(self.suite.channels())
        }
    }

    /// The mask as trained: a zero `lambda_prime` switches the feature term off.
    pub fn effective_mask(&self) -> Ablation {
        Ablation {
            feature: self.mask.feature && self.weights.lambda_prime > 0.0,
            ..self.mask
        }
    }

    pub fn fisher_m(&self) -> usize {
        self.fisher_samples.min(self.train_size)
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.train_size / self.batch
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.run_id.is_empty() || self.run_id.contains([',', '\n', '\t']) {
            return bad(format!(
                "run_id `{}` must be non-empty without commas or tabs",
                self.run_id
            ));
        }
        let mut sorted = self.order.clone();
        sorted.sort_unstable();
        if sorted != (1..=self.suite.task_count()).collect::<Vec<_>>() {
            return bad(format!(
                "order {:?} is not a permutation of the {} tasks",
                self.order,
                self.suite.name()
            ));
        }
        if self.epochs == 0 || self.batch == 0 {
            return bad("epochs and batch must be positive".into());
        }
        if self.train_size < self.batch {
            return bad(format!(
                "train_size {} smaller than batch {}",
                self.train_size, self.batch
            ));
        }
        if self.test_size == 0 {
            return bad("test_size must be positive".into());
        }
        if self.optim.lr.is_nan()
            || self.optim.lr <= 0.0
            || !(0.0..1.0).contains(&self.optim.beta1)
            || !(0.0..1.0).contains(&self.optim.beta2)
        {
            return bad("optimizer hyperparameters out of range".into());
        }
        self.weights.validate()?;
        if let RatioPolicy::Auto { cap } = self.ratio {
            if !(0.0..=1.0).contains(&cap) {
                return bad(format!("ratio cap {cap} outside [0,1]"));
            }
        }
        let allowed = self.method.default_mask();
        let extra = |on: bool, ok: bool| on && !ok;
        if extra(self.mask.feature, allowed.feature)
            || extra(self.mask.heuristics, allowed.heuristics)
        {
            return bad(format!(
                "method {} cannot enable {:?}",
                self.method.name(),
                self.mask
            ));
        }
        if self.accumulate_fisher && !self.mask.feature {
            return bad("accumulate_fisher needs the feature term".into());
        }
        if self.mask.feature && self.fisher_m() == 0 {
            return bad("fisher_samples must be positive".into());
        }
        if self.method == Method::Replay && self.replay_per_task == 0 {
            return bad("replay_per_task must be positive for replay".into());
        }
        if self.mask.heuristics && (self.mapper.steps == 0 || self.mapper.batch == 0) {
            return bad("mapper budget must be positive".into());
        }
        self.arch().validate()
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut kv: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let k = k.trim().to_string();
            if kv.iter().any(|(_, seen, _)| *seen == k) {
                return Err(Error::Config {
                    line: i + 1,
                    message: format!("duplicate key `{k}`"),
                });
            }
            kv.push((i + 1, k, v.trim().to_string()));
        }

        let lookup = |key: &str| kv.iter().find(|(_, k, _)| k == key);
        let suite = match lookup("suite") {
            Some((l, _, v)) => Suite::parse(v).map_err(|e| Error::Config {
                line: *l,
                message: e.to_string(),
            })?,
            None => Suite::DfdLike,
        };
        let method = match lookup("method") {
            Some((l, _, v)) => Method::parse(v).map_err(|e| Error::Config {
                line: *l,
                message: e.to_string(),
            })?,
            None => Method::Assoc,
        };
        let master = match lookup("seed") {
            Some((l, _, v)) => parse_num(v, *l)?,
            None => 1,
        };
        let mut cfg = RunConfig::new(suite, method, master);
        let mut mask = cfg.mask;

        for (line, key, value) in &kv {
            let (line, v) = (*line, value.as_str());
            match key.as_str() {
                "suite" | "method" | "seed" => {}
                "run_id" => cfg.run_id = v.to_string(),
                "order" => {
                    cfg.order = parse_order(v).map_err(|e| Error::Config {
                        line,
                        message: e.to_string(),
                    })?
                }
                "epochs" => cfg.epochs = parse_num(v, line)?,
                "batch" => cfg.batch = parse_num(v, line)?,
                "train_size" => cfg.train_size = parse_num(v, line)?,
                "test_size" => cfg.test_size = parse_num(v, line)?,
                "lr" => cfg.optim.lr = parse_num(v, line)?,
                "beta1" => cfg.optim.beta1 = parse_num(v, line)?,
                "beta2" => cfg.optim.beta2 = parse_num(v, line)?,
                "eps" => cfg.optim.eps = parse_num(v, line)?,
                "lambda_adv" => cfg.weights.lambda_adv = parse_num(v, line)?,
                "lambda_prime" => cfg.weights.lambda_prime = parse_num(v, line)?,
                "assoc_ratio" => {
                    cfg.ratio = RatioPolicy::parse(v).map_err(|e| Error::Config {
                        line,
                        message: e.to_string(),
                    })?
                }
                "fisher_samples" => cfg.fisher_samples = parse_num(v, line)?,
                "data_seed" => cfg.seeds.data = parse_num(v, line)?,
                "init_seed" => cfg.seeds.init = parse_num(v, line)?,
                "train_seed" => cfg.seeds.train = parse_num(v, line)?,
                "controller_seed" => cfg.seeds.controller = parse_num(v, line)?,
                "accumulate_fisher" => cfg.accumulate_fisher = parse_bool(v, line)?,
                "mask_mse" => mask.mse = parse_bool(v, line)?,
                "mask_adv" => mask.adv = parse_bool(v, line)?,
                "mask_feature" => mask.feature = parse_bool(v, line)?,
                "mask_heuristics" => mask.heuristics = parse_bool(v, line)?,
                "replay_per_task" => cfg.replay_per_task = parse_num(v, line)?,
                "mapper_steps" => cfg.mapper.steps = parse_num(v, line)?,
                "mapper_batch" => cfg.mapper.batch = parse_num(v, line)?,
                "mapper_lr" => cfg.mapper.optim.lr = parse_num(v, line)?,
                "width" => cfg.width = parse_num(v, line)?,
                "depth" => cfg.depth = parse_num(v, line)?,
                "mapper_width" => cfg.mapper_width = parse_num(v, line)?,
                "mapper_depth" => cfg.mapper_depth = parse_num(v, line)?,
                "record_wall_time" => cfg.record_wall_time = parse_bool(v, line)?,
                "data_dir" => cfg.data_dir = Some(PathBuf::from(v)),
                other => {
                    return Err(Error::Config {
                        line,
                        message: format!("unknown key `{other}`"),
                    })
                }
            }
        }
        cfg.mask = mask;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every field, resolved, in a form [`RunConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let order: Vec<String> = self.order.iter().map(|t| t.to_string()).collect();
        let mut put = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("run_id", &self.run_id);
        put("suite", &self.suite.name());
        put("order", &order.join(","));
        put("method", &self.method.name());
        put("epochs", &self.epochs);
        put("batch", &self.batch);
        put("train_size", &self.train_size);
        put("test_size", &self.test_size);
        put("lr", &self.optim.lr);
        put("beta1", &self.optim.beta1);
        put("beta2", &self.optim.beta2);
        put("eps", &self.optim.eps);
        put("lambda_adv", &self.weights.lambda_adv);
        put("lambda_prime", &self.weights.lambda_prime);
        put("assoc_ratio", &self.ratio);
        put("fisher_samples", &self.fisher_samples);
        put("data_seed", &self.seeds.data);
        put("init_seed", &self.seeds.init);
        put("train_seed", &self.seeds.train);
        put("controller_seed", &self.seeds.controller);
        put("accumulate_fisher", &self.accumulate_fisher);
        put("mask_mse", &self.mask.mse);
        put("mask_adv", &self.mask.adv);
        put("mask_feature", &self.mask.feature);
        put("mask_heuristics", &self.mask.heuristics);
        put("replay_per_task", &self.replay_per_task);
        put("mapper_steps", &self.mapper.steps);
        put("mapper_batch", &self.mapper.batch);
        put("mapper_lr", &self.mapper.optim.lr);
        put("width", &self.width);
        put("depth", &self.depth);
        put("mapper_width", &self.mapper_width);
        put("mapper_depth", &self.mapper_depth);
        put("record_wall_time", &self.record_wall_time);
        if let Some(dir) = &self.data_dir {
            put("data_dir", &dir.display());
        }
        s
    }

    /// Everything that influences training, with labels left out, so two
    /// configs with equal keys produce identical trajectories.
    pub fn trajectory_key(&self) -> String {
        let mut c = self.clone();
        c.run_id = String::new();
        // The method only matters through its mask, except for these two.
        if !matches!(c.method, Method::Jl | Method::Replay) {
            c.method = Method::Assoc;
        }
        c.mask = c.effective_mask();
        if !c.mask.feature {
            c.weights.lambda_prime = 0.0;
            c.fisher_samples = 0;
        }
        if !c.mask.heuristics && c.method != Method::Replay {
            c.ratio = RatioPolicy::Fixed(0.0);
        }
        if !c.mask.heuristics {
            c.mapper = MapperConfig::default();
            c.mapper_width = 0;
            c.mapper_depth = 0;
        }
        if c.method != Method::Replay {
            c.replay_per_task = 0;
        }
        c.to_text()
    }
}

/// Runner learning rate per suite. Adam's own default is tuned for much longer
/// schedules; the style suite goes unstable above about 6e-3.
pub fn default_lr(suite: Suite) -> f64 {
    match suite {
        Suite::DfdLike => 8e-3,
        Suite::GldLike => 5e-3,
    }
}

fn parse_num<T: std::str::FromStr>(v: &str, line: usize) -> Result<T> {
    v.parse().map_err(|_| Error::Config {
        line,
        message: format!("cannot parse `{v}`"),
    })
}

fn parse_bool(v: &str, line: usize) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config {
            line,
            message: format!("expected a boolean, got `{v}`"),
        }),
    }
}

/// `1,2,3,4` or the compact `1234`.
pub fn parse_order(v: &str) -> Result<Vec<usize>> {
    let v = v.trim();
    let parts: Vec<&str> = if v.contains(',') || v.contains('-') {
        v.split([',', '-']).map(str::trim).collect()
    } else {
        v.split("").filter(|s| !s.is_empty()).collect()
    };
    parts
        .iter()
        .map(|p| {
            p.parse::<usize>()
                .map_err(|_| Error::Invalid(format!("bad task id `{p}` in order `{v}`")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for m in Method::ALL {
            RunConfig::default().with_method(m).validate().unwrap();
        }
        let g = RunConfig::new(Suite::GldLike, Method::Tl, 3);
        assert_eq!(g.order, vec![1, 2, 3]);
        assert_eq!(g.arch().channels, 3);
    }

    #[test]
    fn snapshot_round_trips() {
        let mut c = RunConfig::new(Suite::GldLike, Method::Ewc, 9);
        c.order = vec![3, 1, 2];
        c.accumulate_fisher = true;
        c.ratio = RatioPolicy::Fixed(0.25);
        c.data_dir = Some("data/x".into());
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn unknown_and_malformed_keys_rejected() {
        let err = RunConfig::parse("epochs = 3\nlearning_rate = 1\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }), "{err}");
        assert!(matches!(
            RunConfig::parse("epochs 3").unwrap_err(),
            Error::Config { line: 1, .. }
        ));
        assert!(matches!(
            RunConfig::parse("epochs = x").unwrap_err(),
            Error::Config { line: 1, .. }
        ));
        assert!(RunConfig::parse("epochs = 2\nepochs = 3").is_err());
    }

    #[test]
    fn contradictions_rejected() {
        assert!(RunConfig::parse("method = tl\nmask_heuristics = true").is_err());
        assert!(RunConfig::parse("method = ewc\nmask_heuristics = true").is_err());
        assert!(RunConfig::parse("method = tl\naccumulate_fisher = true").is_err());
        assert!(RunConfig::parse("order = 1,2,2,4").is_err());
        assert!(RunConfig::parse("suite = gld\norder = 1,2,3,4").is_err());
        assert!(
            RunConfig::parse("method = assoc\nmask_feature = false\nmask_heuristics = false")
                .is_ok()
        );
    }

    #[test]
    fn comments_and_master_seed() {
        let c = RunConfig::parse("# experiment\nseed = 5  # master\nmethod = jl\n").unwrap();
        assert_eq!(c.seeds, Seeds::from_master(5));
        assert_eq!(c.method, Method::Jl);
        let c = RunConfig::parse("seed = 5\ntrain_seed = 7").unwrap();
        assert_eq!(c.seeds.train, 7);
        assert_eq!(c.seeds.data, Seeds::from_master(5).data);
    }

    #[test]
    fn order_forms() {
        assert_eq!(parse_order("4321").unwrap(), vec![4, 3, 2, 1]);
        assert_eq!(parse_order("2, 1, 3").unwrap(), vec![2, 1, 3]);
        assert_eq!(parse_order("1-3-2").unwrap(), vec![1, 3, 2]);
        assert!(parse_order("1,a").is_err());
    }

    #[test]
    fn trajectory_key_identifies_equivalent_runs() {
        let base = RunConfig::default();
        let tl = base.with_method(Method::Tl);
        let mut adv_only = base.with_method(Method::Assoc);
        adv_only.mask = ABLATIONS[2].1;
        adv_only.run_id = "ablate-adv".into();
        assert_eq!(tl.trajectory_key(), adv_only.trajectory_key());
        assert_ne!(
            tl.trajectory_key(),
            base.with_method(Method::Jl).trajectory_key()
        );
        let mut ewc_like = base.clone();
        ewc_like.mask = ABLATIONS[3].1;
        assert_eq!(
            ewc_like.trajectory_key(),
            base.with_method(Method::Ewc).trajectory_key()
        );
        assert_eq!(base.with_method(Method::Assoc).trajectory_key(), {
            let mut f = base.clone();
            f.mask = ABLATIONS[5].1;
            f.trajectory_key()
        });
    }
}
