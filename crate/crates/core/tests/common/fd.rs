//! Central finite differences against the tape.

use assoc_core::continual::{
    total_loss, total_loss_with_grad, FisherSnapshot, LossMask, LossWeights,
};
use assoc_core::data::gen_dfd_like;
use assoc_core::models::{init_params, ArchSpec, Role};
use assoc_core::rng::SplitMix64;
use assoc_core::tensor::{Tape, Var};
use assoc_core::Tensor;

pub const CASES: u64 = 50;
const H: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, 1e-3)`.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn random(rng: &mut SplitMix64, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.uniform(lo, hi)).collect(),
    )
    .unwrap()
}

/// Values away from zero, so leaky ReLU's kink is never straddled.
fn off_zero(rng: &mut SplitMix64, shape: &[usize]) -> Tensor {
    let mut t = random(rng, shape, 0.05, 1.0);
    for v in t.data_mut() {
        if rng.next_f64() < 0.5 {
            *v = -*v;
        }
    }
    t
}

type Build = dyn Fn(&mut Tape, &[Var]) -> Var;

/// Scalar probe `Σ w ⊙ op(inputs)` with a fixed random `w`.
fn probe(inputs: &[Tensor], build: &Build, seed: u64, grads: bool) -> (f64, Vec<Tensor>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let shape = tape.value(out).shape().to_vec();
    let w = random(&mut SplitMix64::new(seed ^ 0xABCD), &shape, -1.0, 1.0);
    let w = tape.leaf(w);
    let prod = tape.mul(out, w).unwrap();
    let loss = tape.sum(prod).unwrap();
    let value = tape.value(loss).item();
    if !grads {
        return (value, Vec::new());
    }
    let g = tape.backward(loss).unwrap();
    (value, vars.iter().map(|&v| g.wrt(v)).collect())
}

fn max_rel_err(inputs: Vec<Tensor>, build: &Build, seed: u64) -> f64 {
    let (_, grads) = probe(&inputs, build, seed, true);
    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[j] += H;
            let mut minus = inputs.clone();
            minus[k].data_mut()[j] -= H;
            let numeric = (probe(&plus, build, seed, false).0
                - probe(&minus, build, seed, false).0)
                / (2.0 * H);
            worst = worst.max(rel_err(grads[k].data()[j], numeric));
        }
    }
    worst
}

fn worst_over_cases(make: impl Fn(&mut SplitMix64) -> Vec<Tensor>, build: &Build) -> f64 {
    let mut worst: f64 = 0.0;
    for case in 0..CASES {
        let mut rng = SplitMix64::new(case * 7919 + 1);
        worst = worst.max(max_rel_err(make(&mut rng), build, case));
    }
    worst
}

fn dims(rng: &mut SplitMix64) -> (usize, usize, usize, usize) {
    (
        1 + rng.below(2),
        1 + rng.below(3),
        2 * (1 + rng.below(3)),
        2 * (1 + rng.below(3)),
    )
}

/// Worst relative error per primitive over [`CASES`] random cases.
pub fn primitive_errors() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let mut check = |name, make: &dyn Fn(&mut SplitMix64) -> Vec<Tensor>, build: &Build| {
        out.push((name, worst_over_cases(make, build)));
    };
    check(
        "conv2d_same",
        &|r| {
            let (n, c, h, w) = dims(r);
            let o = 1 + r.below(3);
            let k = [1, 3][r.below(2)];
            vec![
                random(r, &[n, c, h, w], -1.0, 1.0),
                random(r, &[o, c, k, k], -1.0, 1.0),
                random(r, &[o], -1.0, 1.0),
            ]
        },
        &|t, v| t.conv2d_same(v[0], v[1], v[2]).unwrap(),
    );
    check(
        "dense",
        &|r| {
            let (n, f, o) = (1 + r.below(3), 1 + r.below(5), 1 + r.below(4));
            vec![
                random(r, &[n, f], -1.0, 1.0),
                random(r, &[o, f], -1.0, 1.0),
                random(r, &[o], -1.0, 1.0),
            ]
        },
        &|t, v| t.dense(v[0], v[1], v[2]).unwrap(),
    );
    check(
        "pool_avg2",
        &|r| {
            let (n, c, h, w) = dims(r);
            vec![random(r, &[n, c, h, w], -1.0, 1.0)]
        },
        &|t, v| t.pool_avg2(v[0]).unwrap(),
    );
    check(
        "upsample_nearest2",
        &|r| {
            let (n, c, h, w) = dims(r);
            vec![random(r, &[n, c, h, w], -1.0, 1.0)]
        },
        &|t, v| t.upsample_nearest2(v[0]).unwrap(),
    );
    check(
        "concat_channels",
        &|r| {
            let (n, c, h, w) = dims(r);
            let c2 = 1 + r.below(3);
            vec![
                random(r, &[n, c, h, w], -1.0, 1.0),
                random(r, &[n, c2, h, w], -1.0, 1.0),
            ]
        },
        &|t, v| t.concat_channels(v[0], v[1]).unwrap(),
    );
    check(
        "reshape",
        &|r| {
            let (n, c, h, w) = dims(r);
            vec![random(r, &[n, c, h, w], -1.0, 1.0)]
        },
        &|t, v| {
            let len = t.value(v[0]).len();
            t.reshape(v[0], &[len]).unwrap()
        },
    );
    let vector = |r: &mut SplitMix64| {
        let n = 1 + r.below(12);
        vec![off_zero(r, &[n])]
    };
    check("leaky_relu", &vector, &|t, v| {
        t.leaky_relu(v[0], 0.2).unwrap()
    });
    check("sigmoid", &vector, &|t, v| t.sigmoid(v[0]).unwrap());
    check("tanh", &vector, &|t, v| t.tanh(v[0]).unwrap());
    check(
        "log_sigmoid",
        &|r| {
            let n = 1 + r.below(12);
            vec![random(r, &[n], -30.0, 30.0)]
        },
        &|t, v| t.log_sigmoid(v[0]).unwrap(),
    );
    check("square", &vector, &|t, v| t.square(v[0]).unwrap());
    check("scale", &vector, &|t, v| t.scale(v[0], -1.7).unwrap());
    check("sum", &vector, &|t, v| t.sum(v[0]).unwrap());
    check("mean", &vector, &|t, v| t.mean(v[0]).unwrap());
    let two = |r: &mut SplitMix64| {
        let n = 1 + r.below(12);
        vec![random(r, &[n], -1.0, 1.0), random(r, &[n], -1.0, 1.0)]
    };
    check("add", &two, &|t, v| t.add(v[0], v[1]).unwrap());
    check("sub", &two, &|t, v| t.sub(v[0], v[1]).unwrap());
    check("mul", &two, &|t, v| t.mul(v[0], v[1]).unwrap());
    out
}

/// Worst relative error of the generator objective's gradient, checked on
/// four random coordinates in each of [`CASES`] cases.
pub fn end_to_end_error() -> f64 {
    let spec = ArchSpec::default();
    let weights = LossWeights {
        lambda_adv: 0.5,
        lambda_prime: 5.0,
        assoc_ratio: 0.0,
    };
    let mut worst: f64 = 0.0;
    for case in 0..CASES {
        let mut rng = SplitMix64::new(case + 100);
        let batch = gen_dfd_like(1 + rng.below(4), 2, 0, case).unwrap().train;
        let gen = init_params(&spec, Role::Generator, case).unwrap();
        // Zero-initialized biases are perturbed too.
        let disc = init_params(&spec, Role::Discriminator, case + 1000).unwrap();
        let d: Vec<f64> = disc
            .flatten()
            .iter()
            .map(|v| v + rng.uniform(-0.1, 0.1))
            .collect();
        let disc = disc.unflatten(&d).unwrap();
        let theta = gen.flatten();
        let star: Vec<f64> = theta.iter().map(|t| t + rng.uniform(-0.05, 0.05)).collect();
        let fisher: Vec<f64> = theta.iter().map(|_| rng.uniform(0.0, 2.0)).collect();
        let snap = FisherSnapshot::new(star, fisher, 1, 1).unwrap();

        let (_, grads) = total_loss_with_grad(
            &batch,
            &gen,
            &disc,
            &spec,
            Some(&snap),
            &weights,
            LossMask::ALL,
        )
        .unwrap();
        let flat = grads.flatten();
        for _ in 0..4 {
            let j = rng.below(theta.len());
            let at = |delta: f64| {
                let mut t = theta.clone();
                t[j] += delta;
                let p = gen.unflatten(&t).unwrap();
                total_loss(&batch, &p, &disc, &spec, Some(&snap), &weights)
                    .unwrap()
                    .total
            };
            let numeric = (at(H) - at(-H)) / (2.0 * H);
            worst = worst.max(rel_err(flat[j], numeric));
        }
    }
    worst
}
