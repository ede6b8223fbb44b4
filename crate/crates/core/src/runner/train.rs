//! Sequential-task training for every method, evaluation, and the
//! train-split access audit.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::continual::{estimate_diag_fisher, FisherSnapshot, GeneratorPass, LossComponents};
use crate::data::{load_task, Pair, Suite, TaskSpec};
use crate::error::{Error, Result};
use crate::heuristics::{
    association_slots, synthesize_association_batch, train_mapper, MappingMemory,
};
use crate::metrics::{psnr, ssim};
use crate::models::{self, ArchSpec, Role};
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::{adam_update, OptimState, ParamSet, Tape, Tensor};

use super::config::{Method, RunConfig};

/// Directory of one task inside `gen-data` output.
pub fn task_dir(root: &Path, task: usize) -> PathBuf {
    root.join(format!("task{task}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Access {
    pub task: usize,
    pub split: Split,
    /// The task had already been completed when it was read.
    pub after_completion: bool,
}

struct Slot {
    train: Option<Vec<Pair>>,
    test: Vec<Pair>,
    retired: bool,
}

/// Task datasets behind an access log. For methods that may not revisit
/// raw data, a completed task's train split is dropped and further reads
/// fail.
pub struct TaskStore {
    suite: Suite,
    slots: Vec<Option<Slot>>,
    source: Option<PathBuf>,
    sizes: (usize, usize),
    data_seed: u64,
    forbid_past: bool,
    log: Vec<Access>,
}

impl TaskStore {
    pub fn open(cfg: &RunConfig) -> TaskStore {
        TaskStore {
            suite: cfg.suite,
            slots: (0..=cfg.suite.task_count()).map(|_| None).collect(),
            source: cfg.data_dir.clone(),
            sizes: (cfg.train_size, cfg.test_size),
            data_seed: cfg.seeds.data,
            forbid_past: cfg.method != Method::Jl,
            log: Vec::new(),
        }
    }

    fn slot(&mut self, task: usize) -> Result<&mut Slot> {
        if task == 0 || task > self.suite.task_count() {
            return Err(Error::Invalid(format!(
                "task {task} not in {}",
                self.suite.name()
            )));
        }
        if self.slots[task].is_none() {
            let spec = match &self.source {
                Some(root) => {
                    let t = load_task(&task_dir(root, task))?;
                    if t.suite != self.suite
                        || t.task != task
                        || (t.train.len(), t.test.len()) != self.sizes
                    {
                        return Err(Error::Invalid(format!(
                            "{} holds {} task {} with {}/{} pairs; config wants {} task {task} with {}/{}",
                            task_dir(root, task).display(),
                            t.suite.name(),
                            t.task,
                            t.train.len(),
                            t.test.len(),
                            self.suite.name(),
                            self.sizes.0,
                            self.sizes.1
                        )));
                    }
                    t
                }
                None => self
                    .suite
                    .generate(task, self.sizes.0, self.sizes.1, self.data_seed)?,
            };
            let TaskSpec { train, test, .. } = spec;
            self.slots[task] = Some(Slot {
                train: Some(train),
                test,
                retired: false,
            });
        }
        Ok(self.slots[task].as_mut().expect("filled above"))
    }

    pub fn train(&mut self, task: usize) -> Result<&[Pair]> {
        let forbid = self.forbid_past;
        let retired = self.slot(task)?.retired;
        self.log.push(Access {
            task,
            split: Split::Train,
            after_completion: retired,
        });
        if retired && forbid {
            return Err(Error::Audit(format!(
                "train split of completed task {task} requested"
            )));
        }
        let slot = self.slots[task].as_ref().expect("loaded");
        Ok(slot.train.as_deref().expect("present until retired"))
    }

    pub fn test(&mut self, task: usize) -> Result<&[Pair]> {
        let retired = self.slot(task)?.retired;
        self.log.push(Access {
            task,
            split: Split::Test,
            after_completion: retired,
        });
        Ok(&self.slots[task].as_ref().expect("loaded").test)
    }

    /// Mark `task` completed.
    pub fn retire(&mut self, task: usize) -> Result<()> {
        let forbid = self.forbid_past;
        let slot = self.slot(task)?;
        slot.retired = true;
        if forbid {
            slot.train = None;
        }
        Ok(())
    }

    pub fn log(&self) -> &[Access] {
        &self.log
    }

    /// Train-split requests, served or refused, for tasks already complete.
    pub fn past_train_reads(&self) -> usize {
        self.log
            .iter()
            .filter(|a| a.split == Split::Train && a.after_completion)
            .count()
    }
}

/// Stored-bytes breakdown; every part is a checkpoint container size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Storage {
    pub model: usize,
    pub memory: usize,
    pub snapshot: usize,
    pub replay: usize,
}

impl Storage {
    pub fn total(&self) -> usize {
        self.model + self.memory + self.snapshot + self.replay
    }
}

pub struct TrainState {
    pub spec: ArchSpec,
    pub gen: ParamSet,
    pub disc: ParamSet,
    pub opt_g: OptimState,
    pub opt_d: OptimState,
    pub memory: MappingMemory,
    pub snapshot: Option<FisherSnapshot>,
    /// Raw pairs retained per completed task (REPLAY only).
    pub replay: Vec<(usize, Vec<Pair>)>,
    /// Task ids in completion order.
    pub completed: Vec<usize>,
    /// Seconds spent in training steps and in post-task work.
    pub train_s: f64,
    pub post_s: f64,
    batch_rng: SplitMix64,
    controller_rng: SplitMix64,
}

impl TrainState {
    pub fn new(cfg: &RunConfig) -> Result<TrainState> {
        cfg.validate()?;
        let spec = cfg.arch();
        let gen = models::init_params(&spec, Role::Generator, cfg.seeds.init)?;
        let disc = models::init_params(&spec, Role::Discriminator, cfg.seeds.init)?;
        Ok(TrainState {
            opt_g: OptimState::new(&gen, cfg.optim),
            opt_d: OptimState::new(&disc, cfg.optim),
            spec,
            gen,
            disc,
            memory: MappingMemory::new(cfg.ratio, cfg.seeds.controller),
            snapshot: None,
            replay: Vec::new(),
            completed: Vec::new(),
            train_s: 0.0,
            post_s: 0.0,
            batch_rng: SplitMix64::new(cfg.seeds.train),
            controller_rng: SplitMix64::new(cfg.seeds.controller),
        })
    }

    pub fn storage(&self) -> Storage {
        Storage {
            model: self.gen.serialized_len() + self.disc.serialized_len(),
            memory: self.memory.stored_bytes(),
            snapshot: self
                .snapshot
                .as_ref()
                .map_or(0, |s| s.to_params().serialized_len()),
            replay: if self.replay.is_empty() {
                0
            } else {
                replay_container(&self.replay).serialized_len()
            },
        }
    }
}

/// Retained raw pairs as one container: `task{t}.x` and `task{t}.y` per task.
pub fn replay_container(buffer: &[(usize, Vec<Pair>)]) -> ParamSet {
    let mut p = ParamSet::new();
    for (task, pairs) in buffer {
        let xs: Vec<&Tensor> = pairs.iter().map(|p| &p.x).collect();
        let ys: Vec<&Tensor> = pairs.iter().map(|p| &p.y).collect();
        p.insert(
            format!("task{task}.x"),
            Tensor::stack(&xs).expect("uniform shapes"),
        )
        .expect("unique task");
        p.insert(
            format!("task{task}.y"),
            Tensor::stack(&ys).expect("uniform shapes"),
        )
        .expect("unique task");
    }
    p
}

fn stack_pairs(batch: &[Pair]) -> Result<(Tensor, Tensor)> {
    let xs: Vec<&Tensor> = batch.iter().map(|p| &p.x).collect();
    let ys: Vec<&Tensor> = batch.iter().map(|p| &p.y).collect();
    Ok((Tensor::stack(&xs)?, Tensor::stack(&ys)?))
}

/// One discriminator update: `mean(−log D(y)) + mean(−log(1 − D(G(x))))`.
pub fn discriminator_step(
    disc: &mut ParamSet,
    opt: &mut OptimState,
    spec: &ArchSpec,
    real: &Tensor,
    fake: &Tensor,
) -> Result<f64> {
    if real.shape() != fake.shape() {
        return Err(Error::shape(
            "discriminator_step",
            format!("{:?} vs {:?}", real.shape(), fake.shape()),
        ));
    }
    let b = real.shape()[0];
    let mut shape = real.shape().to_vec();
    shape[0] = 2 * b;
    let data = real.data().iter().chain(fake.data()).copied().collect();
    let signs: Vec<f64> = (0..2 * b).map(|i| if i < b { 1.0 } else { -1.0 }).collect();

    let mut tape = Tape::new();
    let d = disc.bind(&mut tape);
    let images = tape.leaf(Tensor::new(shape, data)?);
    let sign = tape.leaf(Tensor::new(vec![2 * b, 1], signs)?);
    let logits = models::discriminator_logits(&mut tape, &d, spec, images)?;
    // σ(−z) = 1 − σ(z), so both halves reduce to log σ(s·z).
    let z = tape.mul(logits, sign)?;
    let ls = tape.log_sigmoid(z)?;
    let m = tape.mean(ls)?;
    let loss = tape.scale(m, -2.0)?;
    let value = tape.value(loss).item();
    let grads = d.grads(&tape.backward(loss)?);
    adam_update(disc, &grads, opt)?;
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalCell {
    pub task: usize,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Per-task mean PSNR and SSIM on the test split of each task in `tasks`.
pub fn evaluate_all(
    gen: &ParamSet,
    spec: &ArchSpec,
    store: &mut TaskStore,
    tasks: &[usize],
) -> Result<Vec<EvalCell>> {
    let mut out = Vec::with_capacity(tasks.len());
    for &task in tasks {
        let test = store.test(task)?;
        let (x, _) = stack_pairs(test)?;
        let generated = models::generator_forward(gen, spec, &x)?.unstack();
        let (mut p, mut s) = (0.0, 0.0);
        for (g, pair) in generated.iter().zip(test) {
            p += psnr(g, &pair.y, 1.0)?;
            s += ssim(g, &pair.y)?;
        }
        let n = test.len() as f64;
        out.push(EvalCell {
            task,
            psnr_db: p / n,
            ssim: s / n,
        });
    }
    Ok(out)
}

/// Arithmetic mean over the evaluated tasks.
pub fn average(cells: &[EvalCell]) -> (f64, f64) {
    let n = cells.len() as f64;
    (
        cells.iter().map(|c| c.psnr_db).sum::<f64>() / n,
        cells.iter().map(|c| c.ssim).sum::<f64>() / n,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutcome {
    pub task: usize,
    /// Mean loss components over the final epoch.
    pub losses: LossComponents,
    /// Evaluation of every seen task after each epoch.
    pub epochs: Vec<Vec<EvalCell>>,
    pub train_s: f64,
    pub post_s: f64,
}

/// Train the next task in the sequence, then run the method's post-task
/// bookkeeping (mapper, Fisher snapshot, replay subset).
pub fn train_task(
    state: &mut TrainState,
    store: &mut TaskStore,
    cfg: &RunConfig,
    task: usize,
) -> Result<TaskOutcome> {
    if state.completed.contains(&task) {
        return Err(Error::Invalid(format!("task {task} already trained")));
    }
    let position = state.completed.len() + 1;
    let started = Instant::now();

    let sources: Vec<usize> = if cfg.method == Method::Jl {
        state.completed.iter().copied().chain([task]).collect()
    } else {
        vec![task]
    };
    let mut pool: Vec<Pair> = Vec::new();
    for &t in &sources {
        pool.extend_from_slice(store.train(t)?);
    }

    let ratio = cfg.ratio.ratio_for_task(position);
    let use_assoc = cfg.effective_mask().heuristics && ratio > 0.0 && !state.memory.is_empty();
    let use_replay = cfg.method == Method::Replay && ratio > 0.0 && !state.replay.is_empty();
    let snapshot = if cfg.effective_mask().feature {
        state.snapshot.clone()
    } else {
        None
    };
    let mask = cfg.effective_mask().loss_mask();

    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut cursor = order.len();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut losses = LossComponents::default();
    let spe = cfg.steps_per_epoch();
    let seen: Vec<usize> = state.completed.iter().copied().chain([task]).collect();

    for epoch in 0..cfg.epochs {
        let mut acc = LossComponents::default();
        for s in 0..spe {
            let step = epoch * spe + s;
            if cursor + cfg.batch > order.len() {
                state.batch_rng.shuffle(&mut order);
                cursor = 0;
            }
            let mut batch: Vec<Pair> = order[cursor..cursor + cfg.batch]
                .iter()
                .map(|&i| pool[i].clone())
                .collect();
            cursor += cfg.batch;

            if use_assoc {
                batch = synthesize_association_batch(
                    &state.memory,
                    &batch,
                    ratio,
                    &state.spec,
                    &mut state.controller_rng,
                )?
                .pairs();
            } else if use_replay {
                let rng = &mut state.controller_rng;
                for slot in association_slots(batch.len(), ratio, rng) {
                    let (_, stored) = &state.replay[rng.below(state.replay.len())];
                    batch[slot] = stored[rng.below(stored.len())].clone();
                }
            }

            let (x, y) = stack_pairs(&batch)?;
            let pass = GeneratorPass::forward(
                &state.gen,
                &state.spec,
                x,
                y,
                cfg.effective_mask().updates_generator(),
            )?;
            let fake = pass.generated().clone();
            let real = pass.tape.value(pass.target).clone();
            discriminator_step(&mut state.disc, &mut state.opt_d, &state.spec, &real, &fake)
                .map_err(|e| non_finite_as_step(e, task, step))?;
            let (c, grads) = pass
                .finish(
                    &state.disc,
                    &state.spec,
                    snapshot.as_ref(),
                    &cfg.weights,
                    mask,
                    &state.gen,
                )
                .map_err(|e| non_finite_as_step(e, task, step))?;
            if let Some(g) = grads {
                adam_update(&mut state.gen, &g, &mut state.opt_g)?;
            }
            acc.l_mse += c.l_mse;
            acc.l_adv += c.l_adv;
            acc.l_feature += c.l_feature;
            acc.total += c.total;
        }
        let n = spe as f64;
        losses = LossComponents {
            l_mse: acc.l_mse / n,
            l_adv: acc.l_adv / n,
            l_feature: acc.l_feature / n,
            total: acc.total / n,
        };
        epochs.push(evaluate_all(&state.gen, &state.spec, store, &seen)?);
    }
    let train_s = started.elapsed().as_secs_f64();

    let post = Instant::now();
    if cfg.mask.heuristics {
        let train = store.train(task)?;
        let (mapper, record) = train_mapper(
            train,
            &state.spec,
            &cfg.mapper,
            derive_seed(cfg.seeds.init, 0x4D50 + task as u64),
        )?;
        state.memory.store_mapping(task, mapper, record)?;
    }
    if cfg.effective_mask().feature {
        let train = store.train(task)?;
        let fresh = estimate_diag_fisher(&state.gen, &state.spec, train, cfg.fisher_m(), task)?;
        state.snapshot = Some(match (&state.snapshot, cfg.accumulate_fisher) {
            (Some(prev), true) => prev.accumulate_into(fresh)?,
            _ => fresh,
        });
    }
    if cfg.method == Method::Replay {
        let train = store.train(task)?;
        let keep = cfg.replay_per_task.min(train.len());
        state.replay.push((task, train[..keep].to_vec()));
    }
    store.retire(task)?;
    state.completed.push(task);
    let post_s = post.elapsed().as_secs_f64();
    state.train_s += train_s;
    state.post_s += post_s;

    Ok(TaskOutcome {
        task,
        losses,
        epochs,
        train_s,
        post_s,
    })
}

fn non_finite_as_step(e: Error, task: usize, step: usize) -> Error {
    match e {
        Error::NonFinite { .. } => Error::NonFiniteLoss { task, step },
        other => other,
    }
}
