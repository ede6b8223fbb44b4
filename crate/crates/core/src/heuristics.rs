//! Association memory: one inverse mapper `ψ⁻¹_j: Y → X_j` per finished
//! task, and a controller that rewrites part of each batch into pseudo
//! past-task pairs `(ψ⁻¹_j(y), y)` built from the current ground truth.
//!
//! Only mapper parameters are stored; no past images are ever kept.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::Pair;
use crate::error::{Error, Result};
use crate::models::{self, ArchSpec, Role};
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::{adam_update, AdamConfig, OptimState, ParamSet, Tape, Tensor};

/// How the association ratio is chosen for task `i` (1-based).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RatioPolicy {
    /// `min((i−1)/i, cap)`
    Auto { cap: f64 },
    /// `r` for every task after the first.
    Fixed(f64),
}

impl Default for RatioPolicy {
    fn default() -> Self {
        RatioPolicy::Auto { cap: 0.5 }
    }
}

impl RatioPolicy {
    pub fn ratio_for_task(&self, task_index: usize) -> f64 {
        if task_index <= 1 {
            return 0.0;
        }
        match *self {
            RatioPolicy::Auto { cap } => ((task_index - 1) as f64 / task_index as f64).min(cap),
            RatioPolicy::Fixed(r) => r,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if let Some(cap) = s.strip_prefix("auto:") {
            let cap: f64 = cap
                .parse()
                .map_err(|_| Error::Invalid(format!("bad ratio cap `{cap}`")))?;
            return Ok(RatioPolicy::Auto { cap });
        }
        if s == "auto" {
            return Ok(RatioPolicy::default());
        }
        let r: f64 = s
            .parse()
            .map_err(|_| Error::Invalid(format!("bad association ratio `{s}`")))?;
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Invalid(format!(
                "association ratio {r} outside [0,1]"
            )));
        }
        Ok(RatioPolicy::Fixed(r))
    }
}

impl std::fmt::Display for RatioPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RatioPolicy::Auto { cap } => write!(f, "auto:{cap}"),
            RatioPolicy::Fixed(r) => write!(f, "{r}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapperConfig {
    pub steps: usize,
    pub batch: usize,
    pub optim: AdamConfig,
}

impl Default for MapperConfig {
    fn default() -> Self {
        MapperConfig {
            steps: 300,
            batch: 16,
            optim: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
        }
    }
}

/// Training summary kept alongside a stored mapper.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapperRecord {
    /// Mean per-pixel squared error over the last tenth of training steps.
    pub final_mse: f64,
    pub steps: usize,
}

/// Fit `ψ⁻¹: y → x` on `pairs` with a per-pixel MSE objective.
pub fn train_mapper(
    pairs: &[Pair],
    spec: &ArchSpec,
    cfg: &MapperConfig,
    seed: u64,
) -> Result<(ParamSet, MapperRecord)> {
    if pairs.is_empty() {
        return Err(Error::Empty("mapper training data"));
    }
    let mut params = models::init_params(spec, Role::Mapper, seed)?;
    let mut state = OptimState::new(&params, cfg.optim);
    let mut rng = SplitMix64::new(derive_seed(seed, 0x3A77));
    let batch = cfg.batch.min(pairs.len()).max(1);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut cursor = order.len();
    let tail_from = cfg.steps - cfg.steps / 10 - 1;
    let (mut tail_sum, mut tail_n) = (0.0, 0);

    for step in 0..cfg.steps {
        if cursor + batch > order.len() {
            rng.shuffle(&mut order);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + batch];
        cursor += batch;
        let ys: Vec<&Tensor> = idx.iter().map(|&i| &pairs[i].y).collect();
        let xs: Vec<&Tensor> = idx.iter().map(|&i| &pairs[i].x).collect();

        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let input = tape.leaf(Tensor::stack(&ys)?);
        let target = tape.leaf(Tensor::stack(&xs)?);
        let out = models::mapper(&mut tape, &p, spec, input)?;
        let diff = tape.sub(out, target)?;
        let sq = tape.square(diff)?;
        let loss = tape.mean(sq)?;
        let value = tape.value(loss).item();
        if step >= tail_from {
            tail_sum += value;
            tail_n += 1;
        }
        let grads = p.grads(&tape.backward(loss)?);
        adam_update(&mut params, &grads, &mut state)?;
    }
    let final_mse = if tail_n > 0 {
        tail_sum / tail_n as f64
    } else {
        f64::NAN
    };
    Ok((
        params,
        MapperRecord {
            final_mse,
            steps: cfg.steps,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub task_id: usize,
    pub mapper: ParamSet,
    pub record: MapperRecord,
}

impl MemoryEntry {
    fn to_params(&self) -> ParamSet {
        let mut p = self.mapper.clone();
        let rec = Tensor::new(
            vec![2],
            vec![self.record.final_mse, self.record.steps as f64],
        )
        .expect("two values");
        p.insert("__record", rec)
            .expect("mapper names never start with __");
        p
    }

    fn from_params(task_id: usize, mut p: ParamSet) -> Result<Self> {
        let rec = p.get("__record")?.data().to_vec();
        if rec.len() != 2 {
            return Err(Error::Invalid("mapper record must hold two values".into()));
        }
        let mut mapper = ParamSet::new();
        for (name, t) in p.iter_mut() {
            if name != "__record" {
                mapper.insert(name, std::mem::replace(t, Tensor::scalar(0.0)))?;
            }
        }
        Ok(MemoryEntry {
            task_id,
            mapper,
            record: MapperRecord {
                final_mse: rec[0],
                steps: rec[1] as usize,
            },
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_params().to_bytes()
    }

    /// Serialized container size.
    pub fn stored_bytes(&self) -> usize {
        self.to_params().serialized_len()
    }
}

/// Stored inverse mappers plus the controller's configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingMemory {
    entries: Vec<MemoryEntry>,
    pub policy: RatioPolicy,
    pub controller_seed: u64,
}

impl MappingMemory {
    pub fn new(policy: RatioPolicy, controller_seed: u64) -> Self {
        MappingMemory {
            entries: Vec::new(),
            policy,
            controller_seed,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn task_ids(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.task_id).collect()
    }

    pub fn stored_bytes(&self) -> usize {
        self.entries.iter().map(MemoryEntry::stored_bytes).sum()
    }

    /// Append a mapper for a task not yet in memory.
    pub fn store_mapping(
        &mut self,
        task_id: usize,
        mapper: ParamSet,
        record: MapperRecord,
    ) -> Result<()> {
        if self.entries.iter().any(|e| e.task_id == task_id) {
            return Err(Error::Duplicate(format!("mapping for task {task_id}")));
        }
        self.entries.push(MemoryEntry {
            task_id,
            mapper,
            record,
        });
        Ok(())
    }

    /// One container per entry plus `index.tsv`:
    /// a `controller` line, then `task_id, file, bytes` per entry.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut index = format!("controller\t{}\t{}\n", self.policy, self.controller_seed);
        for e in &self.entries {
            let file = format!("mapper_task{}.acls", e.task_id);
            let bytes = e.to_bytes();
            fs::write(dir.join(&file), &bytes)?;
            let _ = writeln!(index, "{}\t{}\t{}", e.task_id, file, bytes.len());
        }
        fs::write(dir.join("index.tsv"), index)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index = fs::read_to_string(dir.join("index.tsv"))?;
        let mut lines = index.lines().enumerate();
        let bad = |line: usize, message: &str| Error::Config {
            line: line + 1,
            message: message.into(),
        };
        let (_, header) = lines.next().ok_or_else(|| bad(0, "empty index"))?;
        let h: Vec<&str> = header.split('\t').collect();
        if h.len() != 3 || h[0] != "controller" {
            return Err(bad(0, "expected controller header"));
        }
        let policy = RatioPolicy::parse(h[1])?;
        let seed = h[2].parse().map_err(|_| bad(0, "bad controller seed"))?;
        let mut memory = MappingMemory::new(policy, seed);
        for (i, line) in lines {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(bad(i, "expected task_id, file, bytes"));
            }
            let task_id: usize = f[0].parse().map_err(|_| bad(i, "bad task id"))?;
            let size: usize = f[2].parse().map_err(|_| bad(i, "bad byte size"))?;
            let bytes = fs::read(dir.join(f[1]))?;
            if bytes.len() != size {
                return Err(bad(i, "file size disagrees with index"));
            }
            let entry = MemoryEntry::from_params(task_id, ParamSet::from_bytes(&bytes)?)?;
            memory.store_mapping(entry.task_id, entry.mapper, entry.record)?;
        }
        Ok(memory)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Current,
    /// Synthesized through the mapper of this past task.
    Associated(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssocItem {
    pub pair: Pair,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssocBatch {
    pub items: Vec<AssocItem>,
}

impl AssocBatch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn associated(&self) -> usize {
        self.items
            .iter()
            .filter(|i| i.provenance != Provenance::Current)
            .count()
    }

    pub fn pairs(&self) -> Vec<Pair> {
        self.items.iter().map(|i| i.pair.clone()).collect()
    }
}

/// Positions to rewrite: `round(r·B)` distinct indices, in ascending order.
pub fn association_slots(batch: usize, ratio: f64, rng: &mut SplitMix64) -> Vec<usize> {
    let k = (ratio * batch as f64).round() as usize;
    let mut idx: Vec<usize> = (0..batch).collect();
    for i in 0..k.min(batch) {
        let j = i + rng.below(batch - i);
        idx.swap(i, j);
    }
    let mut chosen = idx[..k.min(batch)].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Replace `round(r·B)` inputs with `ψ⁻¹_j(y)`, `j` uniform over memory.
pub fn synthesize_association_batch(
    memory: &MappingMemory,
    current: &[Pair],
    ratio: f64,
    spec: &ArchSpec,
    rng: &mut SplitMix64,
) -> Result<AssocBatch> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Invalid(format!(
            "association ratio {ratio} outside [0,1]"
        )));
    }
    let slots = association_slots(current.len(), ratio, rng);
    if !slots.is_empty() && memory.is_empty() {
        return Err(Error::Invalid(
            "association requested with an empty mapping memory".into(),
        ));
    }
    let picks: Vec<usize> = slots.iter().map(|_| rng.below(memory.len())).collect();

    let mut items: Vec<AssocItem> = current
        .iter()
        .map(|p| AssocItem {
            pair: p.clone(),
            provenance: Provenance::Current,
        })
        .collect();
    // One forward per mapper over all positions that drew it.
    for (j, entry) in memory.entries.iter().enumerate() {
        let positions: Vec<usize> = slots
            .iter()
            .zip(&picks)
            .filter(|(_, &p)| p == j)
            .map(|(&s, _)| s)
            .collect();
        if positions.is_empty() {
            continue;
        }
        let ys: Vec<&Tensor> = positions.iter().map(|&s| &current[s].y).collect();
        let mapped = models::mapper_forward(&entry.mapper, spec, &Tensor::stack(&ys)?)?.unstack();
        for (&s, x) in positions.iter().zip(mapped) {
            items[s] = AssocItem {
                pair: Pair {
                    x,
                    y: current[s].y.clone(),
                },
                provenance: Provenance::Associated(entry.task_id),
            };
        }
    }
    Ok(AssocBatch { items })
}
