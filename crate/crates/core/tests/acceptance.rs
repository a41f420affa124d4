//! Acceptance suite. Each criterion prints one PASS/FAIL line with the
//! measured value, its threshold and the wall time.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ensemble_gp::bayes_opt::{optimize_with, sample_simplex, BoConfig, BoError};
use ensemble_gp::data_io::{synth_generate, SynthConfig};
use ensemble_gp::evaluation::compute_metrics;
use ensemble_gp::gp::GpModel;
use ensemble_gp::kernels::{
    gram_symmetric, Covariance, Ensemble, EnsembleWeights, KernelSpec, Matern, MaternNu, RationalQuadratic, Rbf,
};
use ensemble_gp::pipeline::{run_optimize, PipelineConfig};
use ensemble_gp::transforms::{skewness, QuantileMap, YeoJohnsonTransform};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, LogNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(id: usize, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= limit;
    let pass = out.pass && in_time;
    println!(
        "[{}] {id}. {name}: {} ({:.2}s, limit {}s{})",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        limit.as_secs(),
        if in_time { "" } else { ", too slow" }
    );
    pass
}

fn transform_efficacy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let exp: Vec<f64> = (0..1000).map(|_| Exp1.sample(&mut rng)).collect();
    let q = QuantileMap::fit(&exp).unwrap();
    let q_skew = skewness(&exp.iter().map(|&x| q.forward(x)).collect::<Vec<_>>()).unwrap();

    let ln = LogNormal::new(0.0, 0.8).unwrap();
    let data: Vec<f64> = (0..1000).map(|_| ln.sample(&mut rng)).collect();
    let before = skewness(&data).unwrap();
    let yj = YeoJohnsonTransform::fit(&data).unwrap();
    let after = skewness(&data.iter().map(|&x| yj.forward(x)).collect::<Vec<_>>()).unwrap();
    let reduction = 1.0 - after.abs() / before.abs();

    Outcome {
        pass: q_skew.abs() < 0.05 && reduction >= 0.8,
        detail: format!(
            "quantile |skew| {:.2e} < 0.05; yeo-johnson skew {before:.3} -> {after:.3} (lambda {:.3}), reduction {:.1}% >= 80%",
            q_skew.abs(),
            yj.lambda,
            100.0 * reduction
        ),
    }
}

fn random_spec(rng: &mut ChaCha8Rng, which: usize) -> KernelSpec {
    let mut log_uniform = |lo: f64, hi: f64| (rng.random_range(lo.ln()..hi.ln())).exp();
    let rbf = Rbf { lengthscale: log_uniform(0.3, 3.0) };
    let rq = RationalQuadratic {
        variance: log_uniform(0.2, 5.0),
        lengthscale: log_uniform(0.3, 3.0),
        alpha: log_uniform(0.1, 10.0),
    };
    let nu = [MaternNu::Half, MaternNu::ThreeHalves, MaternNu::FiveHalves][which % 3];
    let matern = Matern { variance: log_uniform(0.2, 5.0), lengthscale: log_uniform(0.3, 3.0), nu };
    match which % 4 {
        0 => KernelSpec::Rbf(rbf),
        1 => KernelSpec::RationalQuadratic(rq),
        2 => KernelSpec::Matern(matern),
        _ => KernelSpec::Ensemble(Ensemble { weights: sample_simplex(rng), rbf, rq, matern }),
    }
}

// Posterior from an explicit inverse of the jittered noisy Gram matrix.
fn dense_posterior(model: &GpModel, x_star: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let x = model.x_train();
    let k = model.kernel();
    let n = x.nrows();
    let mut a = gram_symmetric(x, k);
    for i in 0..n {
        a[(i, i)] += model.noise_variance() + model.jitter();
    }
    let a_inv = a.try_inverse().expect("invertible");
    let y_c = model.y_train().add_scalar(-model.y_offset());
    let row = |m: &DMatrix<f64>, i: usize| -> Vec<f64> { m.row(i).iter().copied().collect() };
    let m = x_star.nrows();
    let mut mean = DVector::zeros(m);
    let mut var = DVector::zeros(m);
    for s in 0..m {
        let xs = row(x_star, s);
        let ks = DVector::from_fn(n, |i, _| k.eval(&row(x, i), &xs).unwrap());
        mean[s] = ks.dot(&(&a_inv * &y_c)) + model.y_offset();
        var[s] = k.eval(&xs, &xs).unwrap() - ks.dot(&(&a_inv * &ks));
    }
    (mean, var)
}

fn gp_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_mean = 0.0_f64;
    let mut worst_var = 0.0_f64;
    for trial in 0..12 {
        let n = rng.random_range(5..=50);
        let d = rng.random_range(1..=3);
        let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(0.0..4.0));
        let y = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let spec = random_spec(&mut rng, trial);
        let model = GpModel::fit(&x, &y, spec, 1e-2).unwrap();
        let x_star = DMatrix::from_fn(10, d, |_, _| rng.random_range(-0.5..4.5));
        let p = model.predict(&x_star).unwrap();
        let (mean, var) = dense_posterior(&model, &x_star);
        worst_mean = worst_mean.max((&p.mean - mean).amax());
        worst_var = worst_var.max((&p.variance - var.map(|v| v.max(0.0))).amax());
    }

    // Noiseless interpolation on a well-separated 5x5 grid.
    let mut worst_interp = 0.0_f64;
    let grid = DMatrix::from_fn(25, 2, |i, j| if j == 0 { (i / 5) as f64 } else { (i % 5) as f64 });
    let y = DVector::from_fn(25, |i, _| (i as f64 * 0.7).sin() * 3.0);
    for which in 0..4 {
        let spec = match random_spec(&mut rng, which) {
            KernelSpec::Rbf(_) => KernelSpec::Rbf(Rbf { lengthscale: 0.5 }),
            KernelSpec::RationalQuadratic(k) => {
                KernelSpec::RationalQuadratic(RationalQuadratic { lengthscale: 0.5, ..k })
            }
            KernelSpec::Matern(k) => KernelSpec::Matern(Matern { lengthscale: 0.5, ..k }),
            other => other,
        };
        let model = GpModel::fit(&grid, &y, spec, 0.0).unwrap();
        let p = model.predict(&grid).unwrap();
        worst_interp = worst_interp.max((&p.mean - &y).amax());
    }
    Outcome {
        pass: worst_mean <= 1e-8 && worst_var <= 1e-8 && worst_interp <= 1e-5,
        detail: format!(
            "vs dense inverse: mean {worst_mean:.1e}, variance {worst_var:.1e} (<= 1e-8); interpolation {worst_interp:.1e} (<= 1e-5)"
        ),
    }
}

fn kernel_validity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut min_eig = f64::INFINITY;
    for trial in 0..200 {
        let n = rng.random_range(2..=40);
        let d = rng.random_range(1..=4);
        let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-3.0..3.0));
        let spec = random_spec(&mut rng, 3 + 4 * (trial % 3));
        let g = gram_symmetric(&x, &spec);
        let e = SymmetricEigen::new(g).eigenvalues.min();
        min_eig = min_eig.min(e);
    }

    let mut exp_err = 0.0_f64;
    let mut rq_err = 0.0_f64;
    for _ in 0..100 {
        let l = rng.random_range(0.1..5.0);
        let v = rng.random_range(0.1..5.0);
        let a = [rng.random_range(-3.0..3.0)];
        let b = [rng.random_range(-3.0..3.0)];
        let dist: f64 = a[0] - b[0];
        let m = Matern { variance: v, lengthscale: l, nu: MaternNu::Half };
        let exact = v * (-dist.abs() / l).exp();
        exp_err = exp_err.max((m.eval(&a, &b).unwrap() - exact).abs() / exact.max(f64::MIN_POSITIVE));
        let rq = RationalQuadratic { variance: v, lengthscale: l, alpha: 1e6 };
        let rbf = v * Rbf { lengthscale: l }.eval(&a, &b).unwrap();
        // The relative gap grows like (d/l)^4 / (8 alpha); compare within d/l <= 5.
        if dist.abs() / l <= 5.0 {
            rq_err = rq_err.max((rq.eval(&a, &b).unwrap() - rbf).abs() / rbf);
        }
    }
    Outcome {
        pass: min_eig >= -1e-8 && exp_err <= 4.0 * f64::EPSILON && rq_err <= 1e-4,
        detail: format!(
            "min Gram eigenvalue over 200 configs {min_eig:.2e} (>= -1e-8); Matern-1/2 vs exp rel {exp_err:.1e}; RQ(1e6) vs RBF rel {rq_err:.1e} for d/l <= 5 (<= 1e-4)"
        ),
    }
}

const OPTIMUM: [f64; 3] = [0.6, 0.3, 0.1];

fn stub(w: &EnsembleWeights) -> Result<f64, BoError> {
    Ok(-w.as_array().iter().zip(OPTIMUM).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
}

fn bo_effectiveness() -> Outcome {
    let budget = 40;
    let config = |seed| BoConfig { initial_designs: 5, iterations: budget - 5, seed, ..BoConfig::default() };
    let out = optimize_with(&config(42), stub).unwrap();
    let linf = out.weights.as_array().iter().zip(OPTIMUM).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let trials = 50;
    let mut wins = 0;
    for seed in 0..trials {
        let bo = optimize_with(&config(seed), stub).unwrap().score;
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let random = (0..budget).map(|_| stub(&sample_simplex(&mut rng)).unwrap()).fold(f64::MIN, f64::max);
        if bo >= random {
            wins += 1;
        }
    }
    Outcome {
        pass: linf <= 0.08 && wins * 10 >= trials * 7,
        detail: format!(
            "40-evaluation incumbent linf error {linf:.4} (<= 0.08); beats 40-evaluation random search in {wins}/{trials} (>= 70%)"
        ),
    }
}

fn ensemble_non_inferiority() -> Outcome {
    let data = synth_generate(&SynthConfig::default()).unwrap();
    let report = run_optimize(&data, &PipelineConfig::default()).unwrap();
    let best = report.baselines.iter().map(|(f, s)| (s.transformed.r2, f.as_str())).fold((f64::MIN, ""), |a, b| {
        if b.0 > a.0 {
            b
        } else {
            a
        }
    });
    let ens = report.ensemble.transformed.r2;
    let [a, b, c] = report.weights().as_array();
    Outcome {
        pass: ens >= best.0 - 0.005,
        detail: format!(
            "ensemble CV R2 {ens:.5} vs best single ({}) {:.5}, margin {:+.5} (>= -0.005); weights ({a:.3}, {b:.3}, {c:.3})",
            best.1,
            best.0,
            ens - best.0
        ),
    }
}

fn run_optimize_cli(bin: &Path, data: &Path, out: &Path) -> Vec<u8> {
    let result = Command::new(bin)
        .args(["optimize", "--input"])
        .arg(data)
        .arg("--output")
        .arg(out)
        .output()
        .expect("run binary");
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    result.stdout
}

fn end_to_end_determinism() -> Outcome {
    let bin = Path::new(env!("CARGO_BIN_EXE_ensemble-gp"));
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let status = Command::new(bin).args(["synth", "--output"]).arg(&data).status().unwrap();
    assert!(status.success());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out_a = run_optimize_cli(bin, &data, &a);
    let out_b = run_optimize_cli(bin, &data, &b);
    let mut same = Vec::new();
    let mut differ = Vec::new();
    for f in ["weights.txt", "trace.csv", "metrics.csv", "model.txt"] {
        let x = std::fs::read(a.join(f)).unwrap();
        let y = std::fs::read(b.join(f)).unwrap();
        if x == y {
            same.push(f)
        } else {
            differ.push(f)
        }
    }
    // Stdout names the output directory, which differs by construction.
    let strip = |s: Vec<u8>| {
        String::from_utf8(s).unwrap().lines().filter(|l| !l.starts_with("outputs in")).collect::<Vec<_>>().join("\n")
    };
    let stdout_same = strip(out_a) == strip(out_b);
    Outcome {
        pass: differ.is_empty() && stdout_same,
        detail: format!(
            "identical across two runs: {}{}; stdout report identical: {stdout_same}",
            same.join(", "),
            if differ.is_empty() { String::new() } else { format!("; DIFFERENT: {}", differ.join(", ")) }
        ),
    }
}

fn metric_definitions() -> Outcome {
    let m = compute_metrics(&[0.0, 1.0, 2.0], &[0.0, 1.0, 3.0]).unwrap();
    let hand = m.mse == 1.0 / 3.0 && m.mae == 1.0 / 3.0 && m.r2 == 0.5;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..50);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let Ok(m) = compute_metrics(&y, &p) else { continue };
        worst = worst.max((m.rmse * m.rmse - m.mse).abs() / m.mse.max(f64::MIN_POSITIVE));
    }
    Outcome {
        pass: hand && worst <= 1e-12,
        detail: format!(
            "hand example mse {} mae {} r2 {} (exact 1/3, 1/3, 0.5: {hand}); max rel |rmse^2 - mse| over 1000 vectors {worst:.1e}",
            m.mse, m.mae, m.r2
        ),
    }
}

#[test]
fn acceptance_criteria() {
    let s = Duration::from_secs;
    let results = [
        check(1, "transform efficacy", s(1), transform_efficacy),
        check(2, "GP correctness", s(5), gp_correctness),
        check(3, "kernel validity", s(10), kernel_validity),
        check(4, "BO effectiveness", s(30), bo_effectiveness),
        check(5, "ensemble non-inferiority", s(120), ensemble_non_inferiority),
        check(6, "end-to-end determinism", s(300), end_to_end_determinism),
        check(7, "metric definitions", s(1), metric_definitions),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    assert_eq!(passed, results.len());
}
