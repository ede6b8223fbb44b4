//! Diagonal-Fisher distillation: snapshot the previous task's optimum,
//! estimate per-parameter precision, and anchor later training to it with
//! `½ Σ_j F_j (θ_j − θ*_j)²`.
//!
//! The likelihood behind the Fisher estimate is the per-sample content loss
//! `‖G(x) − y‖²` summed over pixels, i.e. a unit Gaussian observation model
//! up to constants, so `F_j = (1/m) Σ_i (∂ℓ_i/∂θ_j)²`.

use crate::data::Pair;
use crate::error::{Error, Result};
use crate::models::{self, ArchSpec};
use crate::tensor::{Bound, ParamSet, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Weight of the adversarial term.
    pub lambda_adv: f64,
    /// Weight of the distillation term.
    pub lambda_prime: f64,
    /// Fraction of each batch synthesized from stored mappings.
    pub assoc_ratio: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_adv: 1e-3,
            lambda_prime: 5.0,
            assoc_ratio: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda_adv, self.lambda_prime]
            .iter()
            .any(|w| w.is_nan() || *w < 0.0)
        {
            return Err(Error::Invalid("loss weights must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.assoc_ratio) {
            return Err(Error::Invalid(format!(
                "association ratio {} outside [0,1]",
                self.assoc_ratio
            )));
        }
        Ok(())
    }
}

/// Which terms of the generator objective receive gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossMask {
    pub mse: bool,
    pub adv: bool,
    pub feature: bool,
}

impl LossMask {
    pub const ALL: LossMask = LossMask {
        mse: true,
        adv: true,
        feature: true,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub l_mse: f64,
    pub l_adv: f64,
    pub l_feature: f64,
    pub total: f64,
}

/// Frozen optimum of the previous task with its diagonal Fisher.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherSnapshot {
    pub theta_star: Vec<f64>,
    pub fisher: Vec<f64>,
    pub sample_count: usize,
    pub source_task: usize,
}

impl FisherSnapshot {
    pub fn new(
        theta_star: Vec<f64>,
        fisher: Vec<f64>,
        sample_count: usize,
        source_task: usize,
    ) -> Result<Self> {
        if theta_star.len() != fisher.len() {
            return Err(Error::shape(
                "fisher_snapshot",
                format!(
                    "{} parameters vs {} Fisher entries",
                    theta_star.len(),
                    fisher.len()
                ),
            ));
        }
        if fisher.iter().any(|&f| !f.is_finite() || f < 0.0) {
            return Err(Error::Invalid(
                "Fisher entries must be finite and non-negative".into(),
            ));
        }
        Ok(FisherSnapshot {
            theta_star,
            fisher,
            sample_count,
            source_task,
        })
    }

    pub fn len(&self) -> usize {
        self.fisher.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fisher.is_empty()
    }

    /// Sum this snapshot's Fisher into `next`, keeping `next`'s anchor.
    pub fn accumulate_into(&self, mut next: FisherSnapshot) -> Result<FisherSnapshot> {
        if next.len() != self.len() {
            return Err(Error::shape(
                "accumulate_fisher",
                format!("{} vs {}", self.len(), next.len()),
            ));
        }
        for (n, o) in next.fisher.iter_mut().zip(&self.fisher) {
            *n += o;
        }
        Ok(next)
    }

    /// Container form: `__theta_star`, `__fisher` and a `__meta` record
    /// holding `[source_task, sample_count]`.
    pub fn to_params(&self) -> ParamSet {
        let n = self.len();
        let mut p = ParamSet::new();
        let meta = vec![self.source_task as f64, self.sample_count as f64];
        p.insert(
            "__theta_star",
            Tensor::new(vec![n], self.theta_star.clone()).expect("non-empty"),
        )
        .expect("fresh set");
        p.insert(
            "__fisher",
            Tensor::new(vec![n], self.fisher.clone()).expect("non-empty"),
        )
        .expect("fresh set");
        p.insert("__meta", Tensor::new(vec![2], meta).expect("two values"))
            .expect("fresh set");
        p
    }

    pub fn from_params(p: &ParamSet) -> Result<Self> {
        let meta = p.get("__meta")?.data();
        if meta.len() != 2 {
            return Err(Error::Invalid(
                "snapshot metadata must hold two values".into(),
            ));
        }
        FisherSnapshot::new(
            p.get("__theta_star")?.data().to_vec(),
            p.get("__fisher")?.data().to_vec(),
            meta[1] as usize,
            meta[0] as usize,
        )
    }
}

/// Empirical diagonal Fisher from per-sample gradients.
///
/// `grad_of(i)` returns the gradient of the `i`-th sample's loss; the first
/// `m` samples are used.
pub fn diag_fisher_from_grads(
    params: &ParamSet,
    m: usize,
    source_task: usize,
    mut grad_of: impl FnMut(usize) -> Result<ParamSet>,
) -> Result<FisherSnapshot> {
    if m == 0 {
        return Err(Error::Empty("fisher samples"));
    }
    let mut fisher = vec![0.0; params.numel()];
    for i in 0..m {
        let g = grad_of(i)?.flatten();
        if g.len() != fisher.len() {
            return Err(Error::shape(
                "estimate_diag_fisher",
                format!("gradient length {}", g.len()),
            ));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { sample: i });
        }
        for (f, g) in fisher.iter_mut().zip(&g) {
            *f += g * g;
        }
    }
    for f in &mut fisher {
        *f /= m as f64;
    }
    FisherSnapshot::new(params.flatten(), fisher, m, source_task)
}

/// Per-sample content-loss Fisher of a generator on the first `m` pairs.
pub fn estimate_diag_fisher(
    gen: &ParamSet,
    spec: &ArchSpec,
    pairs: &[Pair],
    m: usize,
    source_task: usize,
) -> Result<FisherSnapshot> {
    if pairs.is_empty() {
        return Err(Error::Empty("fisher dataset"));
    }
    if m > pairs.len() {
        return Err(Error::Invalid(format!(
            "m = {m} exceeds dataset size {}",
            pairs.len()
        )));
    }
    diag_fisher_from_grads(gen, m, source_task, |i| {
        let x = Tensor::stack(&[&pairs[i].x])?;
        let y = Tensor::stack(&[&pairs[i].y])?;
        let mut pass = GeneratorPass::forward(gen, spec, x, y, true)?;
        let sse = pass.content_loss()?;
        let grads = pass.tape.backward(sse)?;
        Ok(pass.gen.grads(&grads))
    })
}

fn check_len(current: &ParamSet, snap: &FisherSnapshot) -> Result<Vec<f64>> {
    let theta = current.flatten();
    if theta.len() != snap.len() {
        return Err(Error::shape(
            "distill_penalty",
            format!("{} parameters vs snapshot of {}", theta.len(), snap.len()),
        ));
    }
    Ok(theta)
}

/// `½ Σ_j F_j (θ_j − θ*_j)²`
pub fn distill_penalty(current: &ParamSet, snap: &FisherSnapshot) -> Result<f64> {
    let theta = check_len(current, snap)?;
    Ok(0.5
        * theta
            .iter()
            .zip(&snap.theta_star)
            .zip(&snap.fisher)
            .map(|((t, s), f)| f * (t - s) * (t - s))
            .sum::<f64>())
}

/// `∂/∂θ_j = F_j (θ_j − θ*_j)`, shaped like `current`.
pub fn distill_gradient(current: &ParamSet, snap: &FisherSnapshot) -> Result<ParamSet> {
    let theta = check_len(current, snap)?;
    let g: Vec<f64> = theta
        .iter()
        .zip(&snap.theta_star)
        .zip(&snap.fisher)
        .map(|((t, s), f)| f * (t - s))
        .collect();
    current.unflatten(&g)
}

/// A generator forward pass kept open on its tape so the caller can update
/// the discriminator on the detached output before finishing the objective.
pub struct GeneratorPass {
    pub tape: Tape,
    pub gen: Bound,
    pub out: Var,
    pub target: Var,
}

impl GeneratorPass {
    pub fn forward(
        gen: &ParamSet,
        spec: &ArchSpec,
        x: Tensor,
        y: Tensor,
        record: bool,
    ) -> Result<Self> {
        if x.shape() != y.shape() {
            return Err(Error::shape(
                "total_loss",
                format!("x {:?} vs y {:?}", x.shape(), y.shape()),
            ));
        }
        let mut tape = if record {
            Tape::new()
        } else {
            Tape::inference()
        };
        let bound = gen.bind(&mut tape);
        let input = tape.leaf(x);
        let target = tape.leaf(y);
        let out = models::generator(&mut tape, &bound, spec, input)?;
        Ok(GeneratorPass {
            tape,
            gen: bound,
            out,
            target,
        })
    }

    pub fn generated(&self) -> &Tensor {
        self.tape.value(self.out)
    }

    fn batch(&self) -> usize {
        self.tape.value(self.out).shape()[0]
    }

    /// Sum over the batch of per-pair squared error.
    fn content_loss(&mut self) -> Result<Var> {
        let diff = self.tape.sub(self.out, self.target)?;
        let sq = self.tape.square(diff)?;
        self.tape.sum(sq)
    }

    /// Evaluate every component against `disc`, and differentiate the
    /// masked, weighted total with respect to the generator.
    pub fn finish(
        mut self,
        disc: &ParamSet,
        spec: &ArchSpec,
        snap: Option<&FisherSnapshot>,
        weights: &LossWeights,
        mask: LossMask,
        current: &ParamSet,
    ) -> Result<(LossComponents, Option<ParamSet>)> {
        let inv_b = 1.0 / self.batch() as f64;
        let sse = self.content_loss()?;
        let l_mse = self.tape.scale(sse, inv_b)?;

        let d = disc.bind(&mut self.tape);
        let logits = models::discriminator_logits(&mut self.tape, &d, spec, self.out)?;
        let log_p = self.tape.log_sigmoid(logits)?;
        let l_adv = self.tape.mean(log_p)?;
        let l_adv = self.tape.scale(l_adv, -1.0)?;

        let l_feature = match snap {
            Some(s) => distill_penalty(current, s)?,
            None => 0.0,
        };

        let mut terms = Vec::new();
        if mask.mse {
            terms.push(l_mse);
        }
        if mask.adv {
            terms.push(self.tape.scale(l_adv, weights.lambda_adv)?);
        }
        let objective = match terms.split_first() {
            Some((&first, rest)) => {
                let mut acc = first;
                for &t in rest {
                    acc = self.tape.add(acc, t)?;
                }
                Some(acc)
            }
            None => None,
        };

        let feature_on = mask.feature && snap.is_some();
        let mut total = objective.map_or(0.0, |v| self.tape.value(v).item());
        if feature_on {
            total += weights.lambda_prime * l_feature;
        }
        let components = LossComponents {
            l_mse: self.tape.value(l_mse).item(),
            l_adv: self.tape.value(l_adv).item(),
            l_feature,
            total,
        };
        if !total.is_finite() {
            return Err(Error::NonFinite { op: "total_loss" });
        }

        if !self.tape.records() {
            return Ok((components, None));
        }
        let mut grads = match objective {
            Some(v) => self.gen.grads(&self.tape.backward(v)?),
            None => current.zeros_like(),
        };
        if let (true, Some(s)) = (feature_on, snap) {
            let pg = distill_gradient(current, s)?;
            for ((_, g), (_, p)) in grads.iter_mut().zip(pg.iter()) {
                for (g, p) in g.data_mut().iter_mut().zip(p.data()) {
                    *g += weights.lambda_prime * p;
                }
            }
        }
        Ok((components, Some(grads)))
    }
}

fn batch_tensors(batch: &[Pair]) -> Result<(Tensor, Tensor)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let xs: Vec<&Tensor> = batch.iter().map(|p| &p.x).collect();
    let ys: Vec<&Tensor> = batch.iter().map(|p| &p.y).collect();
    Ok((Tensor::stack(&xs)?, Tensor::stack(&ys)?))
}

/// `L′ = L_mse + λ·L_adv + λ′·L_feature` on a batch, all terms reported.
pub fn total_loss(
    batch: &[Pair],
    gen: &ParamSet,
    disc: &ParamSet,
    spec: &ArchSpec,
    snap: Option<&FisherSnapshot>,
    weights: &LossWeights,
) -> Result<LossComponents> {
    let (x, y) = batch_tensors(batch)?;
    let pass = GeneratorPass::forward(gen, spec, x, y, false)?;
    Ok(pass
        .finish(disc, spec, snap, weights, LossMask::ALL, gen)?
        .0)
}

/// [`total_loss`] plus its gradient with respect to the generator, with
/// terms switched off by `mask` contributing neither value nor gradient.
pub fn total_loss_with_grad(
    batch: &[Pair],
    gen: &ParamSet,
    disc: &ParamSet,
    spec: &ArchSpec,
    snap: Option<&FisherSnapshot>,
    weights: &LossWeights,
    mask: LossMask,
) -> Result<(LossComponents, ParamSet)> {
    let (x, y) = batch_tensors(batch)?;
    let pass = GeneratorPass::forward(gen, spec, x, y, true)?;
    let (c, g) = pass.finish(disc, spec, snap, weights, mask, gen)?;
    Ok((c, g.expect("recording tape yields gradients")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{adam_update, AdamConfig, OptimState};

    fn scalar(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("theta", Tensor::scalar(v)).unwrap();
        p
    }

    fn vector(v: &[f64]) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("theta", Tensor::new(vec![v.len()], v.to_vec()).unwrap())
            .unwrap();
        p
    }

    /// Gradient of (θx − y)² for the scalar model y = θ·x.
    fn toy_grad(theta: f64, x: f64, y: f64) -> f64 {
        let mut tape = Tape::new();
        let t = tape.leaf(Tensor::scalar(theta));
        let xv = tape.leaf(Tensor::scalar(x));
        let yv = tape.leaf(Tensor::scalar(y));
        let pred = tape.mul(t, xv).unwrap();
        let r = tape.sub(pred, yv).unwrap();
        let l = tape.square(r).unwrap();
        tape.backward(l).unwrap().wrt(t).item()
    }

    #[test]
    fn scalar_toy_fisher() {
        let g = toy_grad(0.3, 1.0, 0.0);
        assert!((g - 0.6).abs() < 1e-15);
        let fd = ((0.3f64 + 1e-6).powi(2) - (0.3f64 - 1e-6).powi(2)) / 2e-6;
        assert!((fd - 0.6).abs() < 1e-9);
        let snap =
            diag_fisher_from_grads(&scalar(0.3), 1, 1, |_| Ok(scalar(toy_grad(0.3, 1.0, 0.0))))
                .unwrap();
        assert!((snap.fisher[0] - 0.36).abs() < 1e-15);
        assert_eq!(snap.theta_star, vec![0.3]);
    }

    #[test]
    fn two_sample_fisher_is_mean_of_squares() {
        let data = [(1.0, 0.0), (2.0, 1.5)];
        let snap = diag_fisher_from_grads(&scalar(0.3), 2, 1, |i| {
            let (x, y) = data[i];
            Ok(scalar(toy_grad(0.3, x, y)))
        })
        .unwrap();
        let g1 = 2.0 * (0.3 * 1.0 - 0.0) * 1.0;
        let g2 = 2.0 * (0.3 * 2.0 - 1.5) * 2.0;
        assert!((snap.fisher[0] - (g1 * g1 + g2 * g2) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_fit_gives_zero_fisher() {
        let snap =
            diag_fisher_from_grads(&scalar(0.5), 3, 1, |_| Ok(scalar(toy_grad(0.5, 2.0, 1.0))))
                .unwrap();
        assert_eq!(snap.fisher, vec![0.0]);
    }

    #[test]
    fn non_finite_gradient_names_sample() {
        let err = diag_fisher_from_grads(&scalar(0.5), 3, 1, |i| {
            Ok(scalar(if i == 2 { f64::NAN } else { 0.0 }))
        })
        .unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { sample: 2 }));
    }

    #[test]
    fn penalty_closed_form() {
        let snap = FisherSnapshot::new(vec![0.0, 0.0], vec![2.0, 4.0], 1, 1).unwrap();
        let p = distill_penalty(&vector(&[0.1, -0.2]), &snap).unwrap();
        assert!((p - 0.09).abs() < 1e-15);
        assert_eq!(distill_penalty(&vector(&[0.0, 0.0]), &snap).unwrap(), 0.0);
        assert!(distill_penalty(&vector(&[0.0]), &snap).is_err());
    }

    #[test]
    fn snapshot_round_trips_through_container() {
        let snap = FisherSnapshot::new(vec![0.5, -1.0, 2.0], vec![0.0, 1.5, 3.0], 200, 3).unwrap();
        let bytes = snap.to_params().to_bytes();
        assert_eq!(
            FisherSnapshot::from_params(&ParamSet::from_bytes(&bytes).unwrap()).unwrap(),
            snap
        );
        assert!(FisherSnapshot::new(vec![0.0], vec![-1.0], 1, 1).is_err());
    }

    #[test]
    fn accumulate_sums_and_takes_new_anchor() {
        let old = FisherSnapshot::new(vec![1.0, 1.0], vec![1.0, 2.0], 5, 1).unwrap();
        let new = FisherSnapshot::new(vec![2.0, 3.0], vec![0.5, 0.5], 5, 2).unwrap();
        let acc = old.accumulate_into(new).unwrap();
        assert_eq!(acc.fisher, vec![1.5, 2.5]);
        assert_eq!(acc.theta_star, vec![2.0, 3.0]);
        assert_eq!(acc.source_task, 2);
    }

    #[test]
    fn adam_step_on_penalty_moves_toward_anchor() {
        let snap = FisherSnapshot::new(vec![0.0; 4], vec![1.0, 0.5, 2.0, 3.0], 1, 1).unwrap();
        let mut theta = vector(&[0.3, -0.4, 0.2, 0.1]);
        let before = distill_penalty(&theta, &snap).unwrap();
        let mut state = OptimState::new(
            &theta,
            AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
        );
        let mut g = distill_gradient(&theta, &snap).unwrap();
        for (_, t) in g.iter_mut() {
            for v in t.data_mut() {
                *v *= 5.0;
            }
        }
        adam_update(&mut theta, &g, &mut state).unwrap();
        assert!(distill_penalty(&theta, &snap).unwrap() < before);
    }
}
