//! Acceptance suite. Every criterion prints one `PASS`/`FAIL` line; the
//! process fails if any criterion fails.

mod common;

use std::time::Instant;

use ipsampler::{
    drift, empirical_covariance, gaussian_initial_ensemble, pooled_moments, psd_sqrt, simulate, CovarianceScheme,
    Dynamics, DynamicsVariant, Ensemble, GaussianPotential, MomentEstimate, NoiseStream, StepConfig, SymMatrix,
};
use ipsampler_cli::{
    cmd_regression_demo, cmd_sample, cmd_verify_divergence, RegressionDemoArgs, RunSummary, VerifyDivergenceArgs,
};

const SEED: u64 = 7;
const DT: f64 = 0.005;
const N_STEPS: u64 = 400_000;
const RECORD_EVERY: u64 = 10;
const BURN_IN: f64 = 0.25;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Box<dyn FnOnce() -> Outcome>);

fn gaussian_1d_run(dynamics: &Dynamics, j: usize, dt: f64, n_steps: u64) -> MomentEstimate {
    let target = GaussianPotential::centered_1d(1.0).unwrap();
    let e0 = gaussian_initial_ensemble(j, &[0.0], 1.0, SEED).unwrap();
    let cfg = StepConfig::new(dt, n_steps, SEED).unwrap();
    let traj = simulate(&e0, &target, dynamics, &cfg, RECORD_EVERY).unwrap();
    pooled_moments(&traj, BURN_IN).unwrap()
}

fn in_band(v: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&v)
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let args = VerifyDivergenceArgs {
        cases: vec![(1, 4), (2, 6), (3, 8), (5, 12)],
        trials: 50,
        h: None,
        tol: 1e-6,
        alpha: 0.1,
        seed: 0,
        out: None,
    };
    let result = cmd_verify_divergence(&args, &mut std::io::sink());
    let elapsed = started.elapsed().as_secs_f64();
    let report = match result {
        Ok(r) => r,
        Err(e) => return Err(format!("verify-divergence failed: {e}")),
    };
    let worst = |scheme: &str| {
        report
            .rows
            .iter()
            .filter(|r| r.scheme == scheme)
            .map(|r| r.max_rel_err)
            .fold(0.0, f64::max)
    };
    let (full, reg, loo) = (worst("full"), worst("regularized"), worst("leave_one_out"));
    verdict(
        full <= 1e-6 && reg <= 1e-6 && loo <= 1e-8 && elapsed < 30.0,
        format!("full {full:.2e}, regularized {reg:.2e}, leave-one-out self-derivative {loo:.2e}, {elapsed:.1} s"),
    )
}

fn criterion_2() -> Outcome {
    let dynamics = Dynamics::uncorrected(CovarianceScheme::Full).unwrap();
    let v4 = gaussian_1d_run(&dynamics, 4, DT, N_STEPS);
    let v32 = gaussian_1d_run(&dynamics, 32, DT, N_STEPS);
    let (s4, s32) = (v4.covariance.get(0, 0), v32.covariance.get(0, 0));
    verdict(
        in_band(s4, 0.45, 0.55) && in_band(s32, 0.90, 1.00),
        format!(
            "J=4 variance {s4:.4} ± {:.4} (predicted 0.5), J=32 variance {s32:.4} ± {:.4} (predicted 0.9375)",
            v4.var_stderr[0], v32.var_stderr[0]
        ),
    )
}

fn criterion_3() -> Outcome {
    let dynamics = Dynamics::corrected(CovarianceScheme::Full).unwrap();
    let coarse = gaussian_1d_run(&dynamics, 4, DT, N_STEPS);
    let fine = gaussian_1d_run(&dynamics, 4, DT / 2.0, 2 * N_STEPS);
    let (s, s_half, m) = (coarse.covariance.get(0, 0), fine.covariance.get(0, 0), coarse.mean[0]);
    let guard = (s_half - 1.0).abs() <= (s - 1.0).abs() || in_band(s_half, 0.94, 1.06);
    verdict(
        in_band(s, 0.94, 1.06) && guard && m.abs() <= 0.05,
        format!(
            "variance {s:.4} ± {:.4}, dt/2 variance {s_half:.4} ± {:.4}, mean {m:+.4} ± {:.4}",
            coarse.var_stderr[0], fine.var_stderr[0], coarse.mean_stderr[0]
        ),
    )
}

fn criterion_4() -> Outcome {
    let est = gaussian_1d_run(&Dynamics::leave_one_out(), 4, DT, N_STEPS);
    let s = est.covariance.get(0, 0);
    verdict(
        in_band(s, 0.94, 1.06),
        format!("leave-one-out variance {s:.4} ± {:.4}", est.var_stderr[0]),
    )
}

fn criterion_5() -> Outcome {
    let scheme = CovarianceScheme::regularized(0.3, SymMatrix::identity(1)).unwrap();
    let est = gaussian_1d_run(&Dynamics::corrected(scheme).unwrap(), 4, DT, N_STEPS);
    let s = est.covariance.get(0, 0);
    verdict(
        in_band(s, 0.94, 1.06),
        format!("regularized (alpha 0.3) variance {s:.4} ± {:.4}", est.var_stderr[0]),
    )
}

fn criterion_6() -> Outcome {
    let cov = SymMatrix::diagonal(&[1.0, 4.0]);
    let target = GaussianPotential::new(vec![0.0, 0.0], cov).unwrap();
    let e0 = gaussian_initial_ensemble(16, &[0.0, 0.0], 1.0, SEED).unwrap();
    let cfg = StepConfig::new(DT, N_STEPS, SEED).unwrap();
    let dynamics = Dynamics::corrected(CovarianceScheme::Full).unwrap();
    let traj = simulate(&e0, &target, &dynamics, &cfg, RECORD_EVERY).unwrap();
    let est = pooled_moments(&traj, BURN_IN).unwrap();
    let c = &est.covariance;
    let gaussian_ok = (c.get(0, 0) - 1.0).abs() <= 0.1 && (c.get(1, 1) - 4.0).abs() <= 0.4 && c.get(0, 1).abs() <= 0.1;

    let dir = tempfile::tempdir().unwrap();
    let args = RegressionDemoArgs {
        data: common::regression_data(),
        gamma: 0.5,
        sigma0: 10.0,
        variant: DynamicsVariant::Corrected,
        scheme: None,
        alpha: 0.1,
        j: 16,
        dt: DT,
        n_steps: N_STEPS,
        seed: SEED,
        record_every: RECORD_EVERY,
        burn_in_fraction: BURN_IN,
        out: dir.path().join("regression.json"),
        trajectory: None,
    };
    let summary = match cmd_regression_demo(&args, &mut std::io::sink()) {
        Ok(s) => s,
        Err(e) => return Err(format!("regression-demo failed: {e}")),
    };
    let z: Vec<f64> = summary.z_mean.iter().chain(&summary.z_var).flatten().copied().collect();
    let z_max = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    verdict(
        gaussian_ok && z_max <= 4.0,
        format!(
            "covariance [[{:.4}, {:.4}], [{:.4}, {:.4}]] vs diag(1, 4); regression max |z| {z_max:.2}",
            c.get(0, 0),
            c.get(0, 1),
            c.get(1, 0),
            c.get(1, 1)
        ),
    )
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("kl.toml");
    std::fs::write(
        &cfg,
        format!(
            r#"[target]
kind = "gaussian"
b = 1.0

[dynamics]
variant = "corrected"

[ensemble]
J = 4
d = 1
init = {{ kind = "gaussian", mean = 5.0, scale = 1.0 }}

[step]
dt = {DT}
n_steps = 200000
seed = {SEED}
record_every = {RECORD_EVERY}

[output]
trajectory = "trajectory.csv"
summary = "summary.json"
kl_window = 400
"#
        ),
    )
    .unwrap();
    if let Err(e) = cmd_sample(&cfg, &mut std::io::sink()) {
        return Err(format!("sample failed: {e}"));
    }
    let summary = RunSummary::from_json(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let kl: Vec<f64> = summary.kl_trace.iter().map(|p| p.kl).collect();
    let third = kl.len() / 3;
    if third == 0 {
        return Err(format!("only {} KL windows", kl.len()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (first, last) = (mean(&kl[..third]), mean(&kl[kl.len() - third..]));
    let final_kl = *kl.last().unwrap();
    verdict(
        first > last && final_kl < 0.05,
        format!(
            "{} windows, first-third mean KL {first:.4}, last-third mean KL {last:.4}, final KL {final_kl:.4}",
            kl.len()
        ),
    )
}

struct Draws {
    noise: NoiseStream,
    counter: usize,
}

impl Draws {
    fn new(seed: u64) -> Self {
        Self {
            noise: NoiseStream::new(seed),
            counter: 0,
        }
    }

    fn normals(&mut self, n: usize) -> Vec<f64> {
        self.counter += 1;
        self.noise.normals(0, self.counter, n)
    }

    fn ensemble(&mut self, j: usize, d: usize) -> Ensemble {
        Ensemble::from_flat(d, self.normals(j * d)).unwrap()
    }

    /// A well-conditioned matrix `I + 0.3 G` stored row-major.
    fn matrix(&mut self, d: usize) -> Vec<f64> {
        let g = self.normals(d * d);
        (0..d * d)
            .map(|k| if k / d == k % d { 1.0 } else { 0.0 } + 0.3 * g[k])
            .collect()
    }

    fn spd(&mut self, d: usize) -> SymMatrix {
        let a = self.matrix(d);
        SymMatrix::from_upper_fn(d, |i, j| {
            (0..d).map(|k| a[i * d + k] * a[j * d + k]).sum::<f64>() + if i == j { 0.5 } else { 0.0 }
        })
    }
}

fn apply(a: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    (0..d).map(|i| (0..d).map(|k| a[i * d + k] * v[k]).sum()).collect()
}

fn conjugate(a: &[f64], m: &SymMatrix) -> SymMatrix {
    let d = m.dim();
    SymMatrix::from_upper_fn(d, |i, j| {
        (0..d)
            .map(|k| (0..d).map(|l| a[i * d + k] * m.get(k, l) * a[j * d + l]).sum::<f64>())
            .sum()
    })
}

fn max_abs_diff(a: &SymMatrix, b: &SymMatrix) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

const PROPERTY_DIMS: [(usize, usize); 4] = [(1, 4), (2, 6), (3, 8), (5, 12)];

fn property_psd_sqrt(draws: &mut Draws) -> Outcome {
    let mut worst: f64 = 0.0;
    for &(d, j) in &PROPERTY_DIMS {
        for _ in 0..25 {
            let spd = draws.spd(d);
            let rank_deficient = empirical_covariance(&draws.ensemble(d.min(j).max(2), d).to_vecs()).unwrap();
            for m in [spd, rank_deficient] {
                let s = psd_sqrt(&m, 0.0).unwrap();
                let square = s.matmul(&s);
                let err = square
                    .iter()
                    .zip(m.as_slice())
                    .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
                worst = worst.max(err);
            }
        }
    }
    verdict(worst <= 1e-10, format!("psd_sqrt reconstruction error {worst:.2e}"))
}

fn property_covariance_invariance(draws: &mut Draws) -> Outcome {
    let (mut translation, mut conjugation): (f64, f64) = (0.0, 0.0);
    for &(d, j) in &PROPERTY_DIMS {
        for _ in 0..25 {
            let e = draws.ensemble(j, d);
            let shift = draws.normals(d);
            let a = draws.matrix(d);
            let c = e.covariance();
            let shifted = e.map(|_, k, v| v + 3.0 * shift[k]).unwrap();
            translation = translation.max(max_abs_diff(&shifted.covariance(), &c));
            let mapped: Vec<Vec<f64>> = e.particles().map(|u| apply(&a, u)).collect();
            let mapped = Ensemble::new(&mapped).unwrap();
            conjugation = conjugation.max(max_abs_diff(&mapped.covariance(), &conjugate(&a, &c)));
        }
    }
    verdict(
        translation <= 1e-10 && conjugation <= 1e-10,
        format!("translation {translation:.2e}, conjugation {conjugation:.2e}"),
    )
}

fn property_drift_equivariance(draws: &mut Draws) -> Outcome {
    let mut worst: f64 = 0.0;
    for &(d, j) in &PROPERTY_DIMS {
        for _ in 0..10 {
            let e = draws.ensemble(j, d);
            let a = draws.matrix(d);
            let b = draws.normals(d);
            let mean = draws.normals(d);
            let cov = draws.spd(d);
            let c0 = draws.spd(d);
            let target = GaussianPotential::new(mean.clone(), cov.clone()).unwrap();
            let moved_mean: Vec<f64> = apply(&a, &mean).iter().zip(&b).map(|(x, y)| x + y).collect();
            let moved_target = GaussianPotential::new(moved_mean, conjugate(&a, &cov)).unwrap();
            let moved: Vec<Vec<f64>> = e
                .particles()
                .map(|u| apply(&a, u).iter().zip(&b).map(|(x, y)| x + y).collect())
                .collect();
            let moved = Ensemble::new(&moved).unwrap();
            let pairs = [
                (
                    Dynamics::uncorrected(CovarianceScheme::Full).unwrap(),
                    Dynamics::uncorrected(CovarianceScheme::Full).unwrap(),
                ),
                (
                    Dynamics::corrected(CovarianceScheme::Full).unwrap(),
                    Dynamics::corrected(CovarianceScheme::Full).unwrap(),
                ),
                (
                    Dynamics::corrected(CovarianceScheme::regularized(0.3, c0.clone()).unwrap()).unwrap(),
                    Dynamics::corrected(CovarianceScheme::regularized(0.3, conjugate(&a, &c0)).unwrap()).unwrap(),
                ),
                (Dynamics::leave_one_out(), Dynamics::leave_one_out()),
            ];
            for (dyn_u, dyn_v) in &pairs {
                let original = drift(&e, &target, dyn_u).unwrap();
                let transformed = drift(&moved, &moved_target, dyn_v).unwrap();
                for (o, t) in original.iter().zip(&transformed) {
                    let expected = apply(&a, o);
                    let scale = expected.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                    for (x, y) in expected.iter().zip(t) {
                        worst = worst.max((x - y).abs() / scale);
                    }
                }
            }
        }
    }
    verdict(worst <= 1e-10, format!("relative drift mismatch {worst:.2e}"))
}

/// Largest distance of any particle from the affine hull of `reference`.
fn distance_from_hull(reference: &Ensemble, e: &Ensemble) -> f64 {
    let anchor = reference.particle(0);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for p in reference.particles().skip(1) {
        let mut v: Vec<f64> = p.iter().zip(anchor).map(|(x, a)| x - a).collect();
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            basis.push(v.iter().map(|x| x / norm).collect());
        }
    }
    e.particles()
        .map(|p| {
            let mut r: Vec<f64> = p.iter().zip(anchor).map(|(x, a)| x - a).collect();
            for _ in 0..2 {
                for b in &basis {
                    let dot: f64 = r.iter().zip(b).map(|(x, y)| x * y).sum();
                    r.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
                }
            }
            r.iter().map(|x| x * x).sum::<f64>().sqrt()
        })
        .fold(0.0, f64::max)
}

fn property_subspace_confinement(draws: &mut Draws) -> Outcome {
    let mut worst: f64 = 0.0;
    for &(d, j) in &[(2, 2), (3, 3), (4, 4), (5, 3), (5, 5)] {
        let e0 = draws.ensemble(j, d);
        let mean = vec![1.0; d];
        let target = GaussianPotential::new(mean, draws.spd(d)).unwrap();
        let cfg = StepConfig::new(0.01, 1000, SEED).unwrap();
        let mut variants = vec![
            Dynamics::uncorrected(CovarianceScheme::Full).unwrap(),
            Dynamics::corrected(CovarianceScheme::Full).unwrap(),
        ];
        if j >= 3 {
            variants.push(Dynamics::leave_one_out());
        }
        for dynamics in &variants {
            let traj = match simulate(&e0, &target, dynamics, &cfg, 1) {
                Ok(t) => t,
                Err(e) => return Err(format!("{} at d={d}, J={j}: {e}", dynamics.variant().name())),
            };
            for snap in traj.snapshots() {
                worst = worst.max(distance_from_hull(&e0, snap));
            }
        }
    }
    verdict(
        worst <= 1e-8,
        format!("largest distance from initial affine hull {worst:.2e}"),
    )
}

fn property_corrections_sum_to_zero(draws: &mut Draws) -> Outcome {
    let mut worst: f64 = 0.0;
    for &(d, j) in &PROPERTY_DIMS {
        for _ in 0..25 {
            let e = draws.ensemble(j, d);
            let scale = e.as_flat().iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for scheme in [CovarianceScheme::Full, CovarianceScheme::default_regularized(d)] {
                let corr = ipsampler::divergence_correction(&e, &scheme);
                for c in 0..d {
                    let total: f64 = corr.iter().map(|v| v[c]).sum();
                    worst = worst.max(total.abs() / scale);
                }
            }
        }
    }
    verdict(
        worst <= 64.0 * f64::EPSILON,
        format!("largest relative column sum {worst:.2e}"),
    )
}

fn property_golden_determinism() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, run) in common::GOLDEN_RUNS {
        match common::check_golden(run) {
            Ok(()) => lines.push(format!("{name} ok")),
            Err(e) => {
                ok = false;
                lines.push(format!("{name}: {e}"));
            }
        }
    }
    verdict(ok, lines.join(", "))
}

fn main() {
    let mut draws = Draws::new(2024);
    let criteria: Vec<Criterion> = vec![
        ("1 divergence formula", Box::new(criterion_1)),
        ("2 uncorrected variance bias", Box::new(criterion_2)),
        ("3 corrected dynamics", Box::new(criterion_3)),
        ("4 leave-one-out dynamics", Box::new(criterion_4)),
        ("5 regularized corrected dynamics", Box::new(criterion_5)),
        ("6 multivariate and regression targets", Box::new(criterion_6)),
        ("7 KL decay", Box::new(criterion_7)),
        (
            "8a psd_sqrt reconstruction",
            Box::new(|| property_psd_sqrt(&mut Draws::new(1))),
        ),
        (
            "8b covariance invariances",
            Box::new(|| property_covariance_invariance(&mut Draws::new(2))),
        ),
        (
            "8c drift affine equivariance",
            Box::new(|| property_drift_equivariance(&mut Draws::new(3))),
        ),
        (
            "8d subspace confinement",
            Box::new(|| property_subspace_confinement(&mut Draws::new(4))),
        ),
        (
            "8e corrections sum to zero",
            Box::new(move || property_corrections_sum_to_zero(&mut draws)),
        ),
        ("8f golden-file determinism", Box::new(property_golden_determinism)),
    ];
    let mut failures = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        let outcome = check();
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failures += 1;
                println!("FAIL criterion {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
