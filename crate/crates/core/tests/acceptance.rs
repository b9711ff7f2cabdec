//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test -p fwic-core --test acceptance` runs all ten; pass criterion
//! numbers (`-- 1 5 9`) to run a subset.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::gradcheck::{dropout_worst, layer_worst, ste_worst, LAYERS, TOL};
use common::misfit_against_analytic;
use common::selection::{brute_force_choice, optimal_inertia, random_codes, random_instance, separated_instance};
use fwic::dcl::{train_dcl, DclArchitecture};
use fwic::fwi::{invert, FwiConfig, FwiProblem, StopReason, StoppingRule};
use fwic::geomodel::{GridSpec, VelocityModel};
use fwic::harness::{
    dcl_samples, model_for_seed, run_experiment, training_surveys, ExperimentManifest, ExperimentOutcome, Method,
    ResultRow,
};
use fwic::par::Execution;
use fwic::profile::Profile;
use fwic::rlselect::{kmeans, rank_patterns, KMEANS_RESTARTS};
use fwic::seed::derive_seed;
use fwic::wavesim::{AcquisitionGeometry, Boundary, ForwardSetup, SolverOptions, SourceWavelet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const MINUTE: Duration = Duration::from_secs(60);
const HOUR: Duration = Duration::from_secs(3600);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Shared fresh run of the shipped manifest, used by criteria 7, 8 and 10.
#[derive(Default)]
struct Context {
    run: Option<(TempDir, ExperimentOutcome, Duration)>,
}

fn shipped_manifest() -> ExperimentManifest {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../manifests/desk.json");
    ExperimentManifest::load(&path).expect("shipped manifest")
}

fn fresh_run() -> (TempDir, ExperimentOutcome, Duration) {
    let dir = tempfile::tempdir().unwrap();
    let mut m = shipped_manifest();
    m.output_dir = dir.path().to_path_buf();
    let t = Instant::now();
    let out = run_experiment(&m, Execution::available()).expect("manifest run");
    (dir, out, t.elapsed())
}

impl Context {
    fn run(&mut self) -> &(TempDir, ExperimentOutcome, Duration) {
        self.run.get_or_insert_with(fresh_run)
    }
}

fn solver_vs_analytic(_: &mut Context) -> Outcome {
    let misfits: Vec<f64> =
        [(20.0, 2e-3), (10.0, 1e-3), (5.0, 5e-4)].iter().map(|&(dx, dt)| misfit_against_analytic(dx, dt)).collect();
    let first = (misfits[0] / misfits[1]).log2();
    let mean = (misfits[0] / misfits[2]).log2() / 2.0;
    outcome(
        misfits[1] < 0.05 && first >= 1.5 && mean >= 1.5,
        format!(
            "misfit at 10 m {:.4} < 0.05; order {first:.2} (first halving), {mean:.2} (mean) >= 1.5",
            misfits[1]
        ),
    )
}

fn adjoint_vs_finite_differences(_: &mut Context) -> Outcome {
    let p = Profile::desk();
    let setup = p.setup().unwrap();
    let truth = model_for_seed(&p, 101).unwrap();
    let data = setup.simulate_survey(&truth, Execution::available()).unwrap();
    let m = p.fwi_config(vec![0]).starting_model(&truth).unwrap();
    let shots: Vec<usize> = (0..p.n_shots).collect();
    let problem = FwiProblem::new(&setup, &data, &shots, Execution::available()).unwrap();
    let (_, g) = problem.objective_and_gradient(&m).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let n_cells = 6;
    for _ in 0..n_cells {
        let (iz, ix) = (rng.random_range(2..p.grid.nz), rng.random_range(0..p.grid.nx));
        let mut best = f64::INFINITY;
        for h in [1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4] {
            let mut plus = m.clone();
            plus.values[[iz, ix]] += h;
            let mut minus = m.clone();
            minus.values[[iz, ix]] -= h;
            let fd = (problem.objective(&plus).unwrap() - problem.objective(&minus).unwrap()) / (2.0 * h);
            best = best.min((fd - g[[iz, ix]]).abs() / fd.abs().max(g[[iz, ix]].abs()));
        }
        worst = worst.max(best);
    }
    outcome(worst < 1e-2, format!("{n_cells} random cells on a 96x48 model, worst best-over-h relative error {worst:.2e} < 1e-2"))
}

fn neural_gradients(_: &mut Context) -> Outcome {
    let mut worst = ("", 0.0f64);
    for name in LAYERS {
        let e = layer_worst(name);
        if e >= worst.1 {
            worst = (name, e);
        }
    }
    for (name, e) in [("dropout", dropout_worst()), ("ste-mixed-loss", ste_worst())] {
        if e >= worst.1 {
            worst = (name, e);
        }
    }
    outcome(
        worst.1 < TOL,
        format!("{} layers + dropout + STE mixed loss, worst {:.2e} ({}) < {TOL:.0e}", LAYERS.len(), worst.1, worst.0),
    )
}

fn ste_rate_control(_: &mut Context) -> Outcome {
    let m = shipped_manifest();
    let p = Profile::from_kind(m.profile);
    let config = m.dcl.clone().expect("manifest dcl config");
    let arch = DclArchitecture::for_profile(&p).unwrap();
    let (train, val) = training_surveys(&p, m.seed, m.train_models, m.val_models, Execution::available()).unwrap();
    let (train, val) = (dcl_samples(&train, &arch).unwrap(), dcl_samples(&val, &arch).unwrap());
    let tol = 1.0 / (2.0 * p.n_shots as f64);
    let mut pass = true;
    let mut parts = Vec::new();
    for &k in &m.shot_counts {
        let rate = k as f64 / p.n_shots as f64;
        let run = train_dcl(&arch, &train, &val, rate, derive_seed(m.seed, &[99, k as u64]), &config).unwrap();
        let r_hat = run.history.last().unwrap().rate_hat;
        pass &= (r_hat - rate).abs() < tol && run.pattern.indices.len() == k;
        parts.push(format!("K={k}: R_hat {r_hat:.3}, {} indices", run.pattern.indices.len()));
    }
    outcome(pass, format!("{} ({} epochs; |R_hat - R| < {tol:.4})", parts.join("; "), config.epochs))
}

fn selection_oracle(_: &mut Context) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 2000;
    let mut mismatches = 0;
    for _ in 0..n {
        let (bank, labels, codes) = random_instance(&mut rng);
        if rank_patterns(&bank, &labels, &codes).unwrap().0 != brute_force_choice(&bank, &labels, &codes) {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches} mismatches against the brute-force oracle over {n} instances"))
}

fn kmeans_oracle(_: &mut Context) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 2000;
    let mut worst = 0.0f64;
    for trial in 0..n {
        let size = rng.random_range(1..=8);
        let k = rng.random_range(1..=3.min(size));
        let dim = rng.random_range(1..=3);
        let codes = random_codes(&mut rng, size, dim);
        let c = kmeans(&codes, k, trial, KMEANS_RESTARTS).unwrap();
        let opt = optimal_inertia(&codes, k);
        worst = worst.max(if opt > 0.0 { c.inertia / opt - 1.0 } else { c.inertia });
    }
    let separated = 500;
    let mut inexact = 0;
    for trial in 0..separated {
        let (codes, k) = separated_instance(&mut rng);
        let c = kmeans(&codes, k, trial, KMEANS_RESTARTS).unwrap();
        let opt = optimal_inertia(&codes, k);
        if (c.inertia - opt).abs() > 1e-9 * (1.0 + opt) {
            inexact += 1;
        }
    }
    outcome(
        worst <= 0.05 && inexact == 0,
        format!(
            "worst excess {:.2}% <= 5% over {n} instances; {inexact}/{separated} well-separated sets off the optimum",
            100.0 * worst
        ),
    )
}

fn mean_mae(rows: &[ResultRow], shots: usize, method: Method) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter(|r| r.shots == shots && r.method == method).map(|r| r.mae).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn desk_trend(ctx: &mut Context) -> Outcome {
    let m = shipped_manifest();
    let (_, out, elapsed) = ctx.run();
    let all = out.rows.iter().filter(|r| r.method == Method::All).map(|r| r.mae).sum::<f64>()
        / out.rows.iter().filter(|r| r.method == Method::All).count().max(1) as f64;
    let mut pass = m.test_model_seeds.len() >= 10 && [2, 3, 4].iter().all(|k| m.shot_counts.contains(k));
    let mut parts = vec![format!("all {all:.4}")];
    for &k in &m.shot_counts {
        let rl = mean_mae(&out.rows, k, Method::DclRl);
        let random = mean_mae(&out.rows, k, Method::Random);
        let dcl = mean_mae(&out.rows, k, Method::Dcl);
        match (rl, random, dcl) {
            (Some(rl), Some(random), Some(dcl)) => {
                pass &= rl <= random && all <= rl && all <= random && all <= dcl;
                parts.push(format!("K={k}: dcl-rl {rl:.4} random {random:.4} dcl {dcl:.4}"));
            }
            _ => {
                pass = false;
                parts.push(format!("K={k}: missing rows"));
            }
        }
    }
    outcome(
        pass,
        format!("{} models; mean MAE {} (run {:.0} s)", m.test_model_seeds.len(), parts.join(", "), elapsed.as_secs_f64()),
    )
}

fn timing_line(ctx: &mut Context) -> Outcome {
    let (_, out, _) = ctx.run();
    let Some(curve) = &out.timing else {
        return outcome(false, "manifest run produced no timing curve");
    };
    let counts: Vec<usize> = curve.points.iter().map(|p| p.0).collect();
    outcome(
        curve.r_squared > 0.95 && curve.slope > 0.0 && counts == [2, 3, 4, 5, 8],
        format!("shots {counts:?}: slope {:.4} s/shot > 0, R2 {:.4} > 0.95", curve.slope, curve.r_squared),
    )
}

fn tiny_inversion(truth_shift: f64, config: &FwiConfig) -> StopReason {
    let spec = GridSpec::new(10, 8, 20.0).unwrap();
    let setup = ForwardSetup {
        geometry: AcquisitionGeometry::surface(&spec, 2, 0.3, 150).unwrap(),
        wavelet: SourceWavelet::ricker(15.0),
        solver: SolverOptions::new(Boundary::free_surface(6)).with_v_bound(4.75),
    };
    let truth = VelocityModel::constant(spec, 2.5).unwrap();
    let data = setup.simulate_survey(&truth, Execution::Sequential).unwrap();
    let m0 = VelocityModel::constant(spec, 2.5 + truth_shift).unwrap();
    invert(&m0, &setup, &data, config, Execution::Sequential).unwrap().stop_reason
}

fn stopping_rules(_: &mut Context) -> Outcome {
    let rule = StoppingRule { max_iterations: 500, patience: 10, loss_threshold: 0.05 };
    let falling: Vec<f64> = (0..40).map(|i| 1.0 - i as f64 * 0.025).collect();
    let mut flat = vec![1.0, 0.5];
    flat.extend(std::iter::repeat_n(0.6, 12));
    let slow: Vec<f64> = (0..600).map(|i| 1.0 - i as f64 * 1e-4).collect();
    let cases = [
        ("threshold", falling.as_slice(), (39, StopReason::Threshold)),
        ("patience", flat.as_slice(), (12, StopReason::Patience)),
        ("max-iterations", slow.as_slice(), (500, StopReason::MaxIterations)),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, trace, expected) in cases {
        let got = rule.replay(trace);
        pass &= got == Some(expected);
        parts.push(format!("{name} -> {:?}", got.map(|g| (g.0, g.1.to_string()))));
    }
    let mut config = FwiConfig::new(vec![0, 1]);
    let at_truth = tiny_inversion(0.0, &config);
    config.max_iterations = 3;
    config.loss_threshold = 1e-12;
    let budget = tiny_inversion(0.3, &config);
    pass &= at_truth == StopReason::Threshold && budget == StopReason::MaxIterations;
    parts.push(format!("inversion reports {at_truth} and {budget}"));
    outcome(pass, parts.join("; "))
}

fn without_timing(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    let keep: Vec<usize> =
        (0..headers.len()).filter(|&i| !ResultRow::TIMING_COLUMNS.contains(&&headers[i])).collect();
    let mut rows = vec![keep.iter().map(|&i| headers[i].to_string()).collect()];
    for rec in r.records() {
        let rec = rec.unwrap();
        rows.push(keep.iter().map(|&i| rec[i].to_string()).collect());
    }
    rows
}

fn reproducibility(ctx: &mut Context) -> Outcome {
    let first = ctx.run().0.path().join("results.csv");
    let (dir, _, elapsed) = fresh_run();
    let a = without_timing(&first);
    let b = without_timing(&dir.path().join("results.csv"));
    let differing = a.iter().zip(&b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len());
    outcome(
        differing == 0 && elapsed < 6 * HOUR,
        format!(
            "{} rows, {differing} differ outside {:?} (rerun {:.0} s)",
            a.len() - 1,
            ResultRow::TIMING_COLUMNS,
            elapsed.as_secs_f64()
        ),
    )
}

type Check = fn(&mut Context) -> Outcome;

fn main() -> ExitCode {
    let criteria: [(u32, &str, Duration, Check); 10] = [
        (1, "solver vs analytic line source", 2 * MINUTE, solver_vs_analytic),
        (2, "adjoint gradient vs finite differences", 5 * MINUTE, adjoint_vs_finite_differences),
        (3, "neural gradient checks", 2 * MINUTE, neural_gradients),
        (4, "STE rate control", 30 * MINUTE, ste_rate_control),
        (5, "selection oracle equivalence", MINUTE, selection_oracle),
        (6, "k-means oracle", 2 * MINUTE, kmeans_oracle),
        (7, "desk trend", 6 * HOUR, desk_trend),
        (8, "timing vs shot count", HOUR, timing_line),
        (9, "stopping conditions", Duration::from_secs(1), stopping_rules),
        (10, "reproducibility", 6 * HOUR, reproducibility),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut ctx = Context::default();
    let mut failed = 0;
    for (id, name, budget, check) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let o = check(&mut ctx);
        let elapsed = t.elapsed();
        let pass = o.pass && elapsed < budget;
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {id:>2} {name}: {} [{:.1} s, budget {:.0} s]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            budget.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        println!("all selected criteria passed");
        ExitCode::SUCCESS
    }
}
