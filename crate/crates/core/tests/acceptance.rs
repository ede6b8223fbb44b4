//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if
//! any criterion fails. Runs share one cached runner, so configurations
//! with identical trajectories train once.

mod common;

use std::time::Instant;

use assoc_core::continual::{
    diag_fisher_from_grads, distill_gradient, distill_penalty, FisherSnapshot,
};
use assoc_core::data::{Metric, Suite};
use assoc_core::metrics::{psnr, ssim};
use assoc_core::rng::SplitMix64;
use assoc_core::runner::{
    ablation_configs, write_outputs, Method, RunConfig, RunResult, Runner, ABLATIONS,
};
use assoc_core::tensor::Tape;
use assoc_core::{ParamSet, Tensor};

use common::fd::{end_to_end_error, primitive_errors, CASES};
use common::oracle::{naive_psnr, naive_ssim};

const SEEDS: [u64; 3] = [1, 2, 3];

type Criterion = Box<dyn FnOnce(&mut Runner) -> Outcome>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let prims = primitive_errors();
    let worst_prim = prims.iter().map(|p| p.1).fold(0.0, f64::max);
    let e2e = end_to_end_error();
    let secs = start.elapsed().as_secs_f64();
    let failing: Vec<String> = prims
        .iter()
        .filter(|p| p.1 >= 1e-6)
        .map(|p| format!("{}={:.1e}", p.0, p.1))
        .collect();
    outcome(
        failing.is_empty() && e2e < 1e-5 && secs < 30.0,
        format!(
            "{} primitives x {CASES} cases, worst {worst_prim:.1e} (< 1e-6) {failing:?}; end-to-end worst {e2e:.1e} (< 1e-5); {secs:.1}s (< 30s)",
            prims.len()
        ),
    )
}

fn metric_oracles() -> Outcome {
    let mut rng = SplitMix64::new(2024);
    let (mut dp, mut ds) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let a: Vec<f64> = (0..256).map(|_| rng.next_f64()).collect();
        let b: Vec<f64> = (0..256).map(|_| rng.next_f64()).collect();
        let a = Tensor::new(vec![1, 16, 16], a).unwrap();
        let b = Tensor::new(vec![1, 16, 16], b).unwrap();
        dp = dp.max((psnr(&a, &b, 1.0).unwrap() - naive_psnr(&a, &b)).abs());
        ds = ds.max((ssim(&a, &b).unwrap() - naive_ssim(&a, &b)).abs());
    }
    let x = Tensor::new(vec![1, 16, 16], (0..256).map(|_| rng.next_f64()).collect()).unwrap();
    let self_ssim = ssim(&x, &x).unwrap();
    let constant = ssim(
        &Tensor::full(&[1, 16, 16], 0.2),
        &Tensor::full(&[1, 16, 16], 0.8),
    )
    .unwrap();
    outcome(
        dp < 1e-9 && ds < 1e-9 && self_ssim == 1.0 && (constant - 0.4707).abs() < 5e-5,
        format!("max |psnr diff| {dp:.1e}, max |ssim diff| {ds:.1e} (< 1e-9); ssim(x,x) = {self_ssim}; constant pair {constant:.5} (0.4707)"),
    )
}

fn distillation() -> Outcome {
    let mut rng = SplitMix64::new(99);
    let n = 64;
    let theta: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let star: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let fisher: Vec<f64> = (0..n).map(|_| rng.uniform(0.0, 3.0)).collect();
    let vector = |v: &[f64]| {
        let mut p = ParamSet::new();
        p.insert("theta", Tensor::new(vec![v.len()], v.to_vec()).unwrap())
            .unwrap();
        p
    };
    let snap = FisherSnapshot::new(star.clone(), fisher.clone(), 1, 1).unwrap();
    let at_star = distill_penalty(&vector(&star), &snap).unwrap();
    let g = distill_gradient(&vector(&theta), &snap).unwrap().flatten();
    let mut grad_err: f64 = 0.0;
    for j in 0..n {
        let h = 1e-4;
        let mut plus = theta.clone();
        plus[j] += h;
        let mut minus = theta.clone();
        minus[j] -= h;
        let fd = (distill_penalty(&vector(&plus), &snap).unwrap()
            - distill_penalty(&vector(&minus), &snap).unwrap())
            / (2.0 * h);
        grad_err = grad_err
            .max((g[j] - fisher[j] * (theta[j] - star[j])).abs())
            .max((fd - g[j]).abs());
    }
    // y = θ·x at θ = 0.3 on the single sample (x, y) = (1, 0): ∂(θx − y)²/∂θ = 0.6.
    let toy = diag_fisher_from_grads(&vector(&[0.3]), 1, 1, |_| {
        let mut tape = Tape::new();
        let t = tape.leaf(Tensor::scalar(0.3));
        let x = tape.leaf(Tensor::scalar(1.0));
        let y = tape.leaf(Tensor::scalar(0.0));
        let pred = tape.mul(t, x)?;
        let r = tape.sub(pred, y)?;
        let l = tape.square(r)?;
        Ok(vector(&[tape.backward(l)?.wrt(t).item()]))
    })
    .unwrap()
    .fisher[0];
    outcome(
        at_star == 0.0 && grad_err < 1e-8 && (toy - 0.36).abs() < 1e-12,
        format!(
            "penalty(θ*) = {at_star}; gradient error {grad_err:.1e} (< 1e-8); toy Fisher {toy}"
        ),
    )
}

fn dfd(method: Method, seed: u64) -> RunConfig {
    RunConfig::new(Suite::DfdLike, method, seed)
}

fn forgetting_ordering(runner: &mut Runner) -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let tl = runner.run(&dfd(Method::Tl, seed)).unwrap();
        let assoc = runner.run(&dfd(Method::Assoc, seed)).unwrap();
        let jl = runner.run(&dfd(Method::Jl, seed)).unwrap();
        let (t, a, j) = (
            tl.final_avg(Metric::Psnr),
            assoc.final_avg(Metric::Psnr),
            jl.final_avg(Metric::Psnr),
        );
        let (td, ad) = (
            tl.first_task_drop(Metric::Psnr),
            assoc.first_task_drop(Metric::Psnr),
        );
        let ok = t + 1.0 < a && a <= j + 0.5 && td > 0.0 && ad <= td / 2.0;
        pass &= ok;
        parts.push(format!(
            "seed {seed}: TL {t:.2} ASSOC {a:.2} JL {j:.2}, task-1 drop TL {td:.2} ASSOC {ad:.2}"
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 600.0;
    outcome(pass, format!("{}; {secs:.0}s (< 600s)", parts.join("; ")))
}

fn ablation_direction(runner: &mut Runner) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let v: Vec<f64> = ablation_configs(&dfd(Method::Assoc, seed))
            .iter()
            .map(|c| runner.run(c).unwrap().final_avg(Metric::Psnr))
            .collect();
        let (backbone, mse, adv, feature, heur, full) = (v[0], v[1], v[2], v[3], v[4], v[5]);
        let ok = backbone <= mse
            && mse <= adv
            && adv <= feature
            && adv <= heur
            && feature <= full
            && heur <= full
            && full - adv >= 1.0;
        pass &= ok;
        let cells: Vec<String> = ABLATIONS
            .iter()
            .zip(&v)
            .map(|((name, _), x)| format!("{name} {x:.2}"))
            .collect();
        parts.push(format!("seed {seed}: {}", cells.join(" ")));
    }
    outcome(pass, parts.join("; "))
}

fn lambda_prime_retention(runner: &mut Runner) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let retention = |runner: &mut Runner, lp: f64| {
            let mut c = dfd(Method::Assoc, seed);
            c.weights.lambda_prime = lp;
            runner.run(&c).unwrap().first_task_final(Metric::Psnr)
        };
        let (r0, r5) = (retention(runner, 0.0), retention(runner, 5.0));
        pass &= r5 > r0;
        parts.push(format!("seed {seed}: λ′=0 {r0:.2} λ′=5 {r5:.2}"));
    }
    outcome(
        pass,
        format!("task-1 PSNR after the sequence, {}", parts.join("; ")),
    )
}

fn stored(r: &RunResult) -> Vec<usize> {
    r.post_states.iter().map(|p| p.storage.total()).collect()
}

fn accounting(runner: &mut Runner) -> Outcome {
    let assoc = stored(&runner.run(&dfd(Method::Assoc, 1)).unwrap());
    let replay = stored(&runner.run(&dfd(Method::Replay, 1)).unwrap());
    let c1 = assoc[1] as i64 - assoc[0] as i64;
    let c0 = assoc[0] as i64 - c1;
    let affine = assoc
        .iter()
        .enumerate()
        .all(|(i, &s)| s as i64 == c0 + c1 * (i as i64 + 1));
    let replay_larger = (2..replay.len()).all(|i| replay[i] > assoc[i]);
    outcome(
        affine && replay_larger,
        format!("ASSOC bytes {assoc:?} = {c0} + {c1}·i; REPLAY bytes {replay:?}"),
    )
}

fn determinism(runner: &mut Runner) -> Outcome {
    let cfgs: Vec<RunConfig> = Method::ALL.iter().map(|&m| dfd(m, 1)).collect();
    let first: Vec<RunResult> = cfgs.iter().map(|c| runner.run(c).unwrap()).collect();
    let mut fresh = Runner::uncached();
    let second: Vec<RunResult> = cfgs.iter().map(|c| fresh.run(c).unwrap()).collect();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_outputs(a.path(), &first).unwrap();
    write_outputs(b.path(), &second).unwrap();
    let x = std::fs::read(a.path().join("metrics.csv")).unwrap();
    let y = std::fs::read(b.path().join("metrics.csv")).unwrap();
    outcome(
        x == y,
        format!(
            "two executions of the 5-method DFD-like suite, metrics.csv {} bytes, identical: {}",
            x.len(),
            x == y
        ),
    )
}

fn gld_ordering(runner: &mut Runner) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let at = |runner: &mut Runner, m| {
            runner
                .run(&RunConfig::new(Suite::GldLike, m, seed))
                .unwrap()
                .final_avg(Metric::Ssim)
        };
        let (t, a, j) = (
            at(runner, Method::Tl),
            at(runner, Method::Assoc),
            at(runner, Method::Jl),
        );
        pass &= t + 0.03 < a && a <= j + 0.02;
        parts.push(format!("seed {seed}: TL {t:.4} ASSOC {a:.4} JL {j:.4}"));
    }
    outcome(pass, parts.join("; "))
}

fn main() {
    let mut runner = Runner::new();
    let criteria: Vec<(&str, Criterion)> = vec![
        ("gradient suite", Box::new(|_| gradients())),
        ("metric oracles", Box::new(|_| metric_oracles())),
        ("distillation correctness", Box::new(|_| distillation())),
        (
            "forgetting ordering (DFD-like)",
            Box::new(forgetting_ordering),
        ),
        ("ablation direction", Box::new(ablation_direction)),
        ("lambda' sweep retention", Box::new(lambda_prime_retention)),
        ("stored-bytes accounting", Box::new(accounting)),
        ("determinism", Box::new(determinism)),
        ("GLD-like SSIM ordering", Box::new(gld_ordering)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let o = check(&mut runner);
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} criterion {}: {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail
        );
    }
    println!("acceptance: {} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
