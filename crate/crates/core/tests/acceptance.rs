//! Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero if any fail.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

mod common;

use std::fs::File;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::BigRational;
use reidrisk::analytic::{single_risk, single_risk_closed};
use reidrisk::anonymizer::{class_histogram, k_anonymize, parse_dataset, verify_k_anonymity, RecordSchema, UndersizedPolicy};
use reidrisk::calibrate::{calibrate_k, CalibrationRequest, LeakSpec};
use reidrisk::combinatorics::relative_difference;
use reidrisk::recursive::{RecursionState, RecursiveSolver};
use reidrisk::report::{compare_class_distributions, derive_seed, figure_data, CompareOptions, FigureId, FigureParams};
use reidrisk::simulation::{simulate_multi, simulate_single, RiskEstimate, SimulationConfig};
use reidrisk::{AttackScenario, Backend, ClassSizeDistribution, Execution, Probability};

type Outcome = Result<String, String>;

const SEED: u64 = 20_240_601;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn risk(d: u64, l: u64, k: u64, backend: Backend) -> Probability {
    single_risk(&AttackScenario::homogeneous(d, l, k).unwrap(), backend).unwrap()
}

/// `|mean - expected| <= 3 SE`. A zero SE means every trial returned the same
/// value; the point then agrees if it matches to floating-point precision,
/// or, when every trial was 0, if `expected` is below the 95% zero-hit bound `3/T`.
fn within_3se(est: &RiskEstimate, expected: f64) -> bool {
    let diff = (est.mean - expected).abs();
    if est.standard_error > 0.0 {
        return diff <= 3.0 * est.standard_error;
    }
    diff <= 1e-12 * expected.abs() || (est.mean == 0.0 && expected <= 3.0 / est.trials as f64)
}

fn ac1() -> Outcome {
    let start = Instant::now();
    let mut cases = 0;
    for d in 1..=10usize {
        for k in (1..=d).filter(|k| d % k == 0) {
            for l in 1..=d {
                let got = risk(d as u64, l as u64, k as u64, Backend::Exact);
                let want = common::to_big(common::brute_single(&common::homogeneous_labels(d, k), l));
                ensure!(got.as_exact() == Some(&want), "D={d} k={k} L={l}: {got} != {want}");
                cases += 1;
            }
        }
    }
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(60), "took {t:?}");
    Ok(format!("{cases} cases equal, {t:.2?}"))
}

fn grid2() -> impl Iterator<Item = (u64, u64)> {
    [1u64, 2, 5, 10, 20].into_iter().flat_map(|k| (1_000..=4_000).step_by(500).map(move |l| (k, l)))
}

fn ac2() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for (k, l) in grid2() {
        let s = AttackScenario::homogeneous(10_000, l, k).unwrap();
        let a = single_risk(&s, Backend::Log).unwrap().value();
        let b = single_risk_closed(&s, Backend::Log).unwrap().value();
        let r = relative_difference(a, b);
        ensure!(r <= 1e-12, "k={k} L={l}: {a} vs {b} (rel {r:e})");
        worst = worst.max(r);
    }
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(5), "took {t:?}");
    Ok(format!("max relative difference {worst:.1e}, {t:.2?}"))
}

fn ac3() -> Outcome {
    let d = 10_000;
    for k in [1u64, 2, 5, 10, 20] {
        ensure!(risk(d, d, k, Backend::Exact) == Probability::ratio(1, k), "L=D, k={k}");
        ensure!(risk(d, d, k, Backend::Log).value() == 1.0 / k as f64, "L=D, k={k} (log)");
        ensure!(risk(d, 1, k, Backend::Exact) == Probability::ratio(1, d), "L=1, k={k}");
    }
    for l in (1_000..=4_000).step_by(500) {
        ensure!(risk(d, l, 1, Backend::Exact) == Probability::ratio(l, d), "k=1, L={l}");
    }
    for (k, l) in grid2() {
        let p = risk(d, l, k, Backend::Log).value();
        ensure!(p <= 1.0 / k as f64, "bound broken at k={k} L={l}: {p}");
    }
    Ok("1/k, 1/D, L/D exact; P <= 1/k on grid".into())
}

fn ac4() -> Outcome {
    let start = Instant::now();
    let ks = [1u64, 5, 10, 20];
    let ls = [1_000u64, 2_000, 3_000, 4_000];
    let mut worst_z = 0.0f64;
    for (i, &k) in ks.iter().enumerate() {
        for (j, &l) in ls.iter().enumerate() {
            let s = AttackScenario::homogeneous(10_000, l, k).unwrap();
            let p = single_risk(&s, Backend::Log).unwrap().value();
            let est = simulate_single(&s, &SimulationConfig::new(1_000, derive_seed(SEED, (i * 4 + j) as u64))).unwrap();
            ensure!(within_3se(&est, p), "k={k} L={l}: sim {} +/- {} vs {p}", est.mean, est.standard_error);
            if est.standard_error > 0.0 {
                worst_z = worst_z.max(est.z_score(p));
            }
        }
    }
    for k in ks {
        let row: Vec<f64> = (1_000..=4_000).step_by(500).map(|l| risk(10_000, l, k, Backend::Log).value()).collect();
        ensure!(row.windows(2).all(|w| w[0] <= w[1]), "not nondecreasing in L at k={k}");
    }
    for l in ls {
        let col: Vec<f64> = [1u64, 2, 5, 10, 20].iter().map(|&k| risk(10_000, l, k, Backend::Log).value()).collect();
        ensure!(col.windows(2).all(|w| w[0] >= w[1]), "not nonincreasing in k at L={l}");
    }
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(600), "took {t:?}");
    Ok(format!("16 points within 3 SE (max z {worst_z:.2}), monotone, {t:.2?}"))
}

fn ac5() -> Outcome {
    let mut worst = 0.0f64;
    for d in [100u64, 1_000, 10_000] {
        for l in [d / 10, d / 2, d] {
            for k in [2u64, 5, 10, 20] {
                let single = risk(d, l, k, Backend::Auto).value();
                let state = RecursionState::new(ClassSizeDistribution::homogeneous(k, d / k), l, 1).unwrap();
                let rec = RecursiveSolver::new(Backend::Auto).probability(&state).unwrap().value();
                let r = relative_difference(single, rec);
                ensure!(r <= 1e-10, "D={d} L={l} k={k}: {single} vs {rec}");
                worst = worst.max(r);
            }
        }
    }
    Ok(format!("36 points, max relative difference {worst:.1e}"))
}

fn ac6() -> Outcome {
    let start = Instant::now();
    let d = 1_000;
    let mut worst_z = 0.0f64;
    for (i, k) in [5u64, 10, 20].into_iter().enumerate() {
        let s = AttackScenario::homogeneous(d, d, k).unwrap();
        let mut solver = RecursiveSolver::new(Backend::Log);
        let mut curve = Vec::new();
        for n in 1..=15u64 {
            let p = solver.probability(&RecursionState::new(s.distribution(), d, n).unwrap()).unwrap().value();
            let cfg = SimulationConfig::new(10_000, derive_seed(SEED, 100 + i as u64 * 16 + n));
            let est = simulate_multi(&s, n, &cfg).unwrap();
            ensure!(within_3se(&est, p), "k={k} n={n}: sim {} +/- {} vs {p:e}", est.mean, est.standard_error);
            if est.standard_error > 0.0 {
                worst_z = worst_z.max(est.z_score(p));
            }
            curve.push(p);
        }
        ensure!(curve.windows(2).all(|w| w[1] <= w[0]), "recursive curve increases in n at k={k}");
    }
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(900), "took {t:?}");
    Ok(format!("45 points within 3 SE (max z {worst_z:.2}), nonincreasing, {t:.2?}"))
}

fn ac7() -> Outcome {
    let third = BigRational::new(BigInt::from(1), BigInt::from(3));
    let state = RecursionState::new(ClassSizeDistribution::new(vec![0, 0, 2]), 4, 2).unwrap();
    let rec = RecursiveSolver::new(Backend::Exact).probability(&state).unwrap();
    ensure!(rec.as_exact() == Some(&third), "recursion gave {rec}");
    let brute = common::to_big(common::brute_multi(&[0, 0, 1, 1], 4, 2));
    ensure!(brute == third, "enumeration gave {brute}");
    // First target: 1/2. Second: a classmate (1/3) is then certain, else 1/2.
    let half = BigRational::new(BigInt::from(1), BigInt::from(2));
    let hand = half.clone() * (BigRational::new(BigInt::from(1), BigInt::from(3)) + BigRational::new(BigInt::from(2), BigInt::from(3)) * half);
    ensure!(hand == third, "hand derivation gave {hand}");
    Ok("recursion = enumeration = hand = 1/3".into())
}

fn ac8() -> Outcome {
    let cmp = compare_class_distributions(1_000, 5, 20, 10, SEED, &CompareOptions::default()).map_err(|e| e.to_string())?;
    ensure!(cmp.heterogeneous.len() == 20, "expected 20 samples");
    if let Some(v) = cmp.violations.first() {
        return Err(format!(
            "{} violations; first: sample {} n={} heterogeneous {:e} > homogeneous {:e}",
            cmp.violations.len(),
            v.sample,
            v.n,
            v.heterogeneous,
            v.homogeneous
        ));
    }
    let min_ratio = cmp
        .heterogeneous
        .iter()
        .flat_map(|c| c.iter().zip(&cmp.homogeneous).map(|(h, b)| b / h))
        .fold(f64::INFINITY, f64::min);
    Ok(format!("homogeneous dominates 20 samples for n=1..10 (min ratio {min_ratio:.3})"))
}

fn ac9() -> Outcome {
    let at = |threshold| calibrate_k(&CalibrationRequest::analytic(10_000, LeakSpec::Absolute(4_000), threshold)).map_err(|e| e.to_string());
    let a = at(0.33)?;
    ensure!(a.k_min == 2, "threshold 0.33 gave k={}", a.k_min);
    let p2 = a.probability.value();
    ensure!((p2 - 0.3200).abs() < 5e-5, "P(2) = {p2}");
    let b = at(0.05)?;
    ensure!(b.k_min == 20, "threshold 0.05 gave k={}", b.k_min);
    let p19 = b.trace[18].probability.value();
    let p20 = b.probability.value();
    ensure!(p19 > 0.05 && 0.05 >= p20, "P(19)={p19} P(20)={p20}");
    // Exact backend agrees with the log scan at reduced scale.
    for threshold in [0.33, 0.05] {
        let mut req = CalibrationRequest::analytic(1_000, LeakSpec::Absolute(400), threshold);
        let log = calibrate_k(&req).map_err(|e| e.to_string())?;
        req.backend = Backend::Exact;
        let exact = calibrate_k(&req).map_err(|e| e.to_string())?;
        ensure!(log.k_min == exact.k_min, "reduced scale: log k={} exact k={}", log.k_min, exact.k_min);
        for (x, y) in log.trace.iter().zip(&exact.trace) {
            ensure!(relative_difference(x.probability.value(), y.probability.value()) < 1e-12, "trace mismatch at k={}", x.k);
        }
    }
    let exact_p2 = risk(10_000, 4_000, 2, Backend::Exact).value();
    ensure!(relative_difference(exact_p2, p2) < 1e-12, "exact P(2) = {exact_p2}");
    Ok(format!("k=2 (P={p2:.6}), k=20 (P(19)={p19:.6}, P(20)={p20:.6})"))
}

fn ac10() -> Outcome {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let schema = RecordSchema::from_path(dir.join("admissions_schema.json")).map_err(|e| e.to_string())?;
    let ds = parse_dataset(File::open(dir.join("admissions.csv")).unwrap(), &schema, b',').map_err(|e| e.to_string())?;
    ensure!(ds.record_count() == 14 && ds.patients.len() == 10, "parsed {} rows / {} patients", ds.record_count(), ds.patients.len());
    let out = k_anonymize(&ds, &schema, 3, UndersizedPolicy::Suppress, SEED).map_err(|e| e.to_string())?;
    let mut sizes: Vec<usize> = out.classes.iter().map(|c| c.patients.len()).collect();
    sizes.sort_unstable();
    ensure!(sizes == [3, 3, 4], "class sizes {sizes:?}");
    let hist = class_histogram(&out);
    ensure!(hist.count(3) == 2 && hist.count(4) == 1 && hist.class_count() == 3, "histogram {hist}");
    let v = verify_k_anonymity(&out, 3);
    ensure!(v.is_empty(), "violations {v:?}");
    Ok(format!("classes {sizes:?}, histogram {hist}"))
}

fn ac11() -> Outcome {
    let p = |k| risk(10_000, 4_000, k, Backend::Log).value();
    let (p1, p10, p20) = (p(1), p(10), p(20));
    ensure!(p10 - p20 < p1 - p10, "P1={p1} P10={p10} P20={p20}");
    let s = AttackScenario::homogeneous(10_000, 4_000, 1).unwrap();
    let est = simulate_single(&s, &SimulationConfig::new(200, SEED).with_histogram(true)).unwrap();
    let hist = est.histogram.unwrap();
    let off: f64 = hist.iter().filter(|b| !(b.low == b.high && (b.low == 0.0 || b.low == 1.0))).map(|b| b.frequency).sum();
    ensure!(off == 0.0, "mass {off} outside {{0, 1}}");
    Ok(format!("drop 1->10 {:.4} > drop 10->20 {:.4}; k=1 histogram on {{0,1}}", p1 - p10, p10 - p20))
}

fn stochastic_payload(exec: Execution) -> String {
    let s = AttackScenario::homogeneous(2_000, 800, 5).unwrap();
    let cfg = SimulationConfig::new(500, SEED).with_execution(exec).with_histogram(true);
    let single = simulate_single(&s, &cfg).unwrap();
    let full = AttackScenario::homogeneous(1_000, 1_000, 10).unwrap();
    let multi = simulate_multi(&full, 4, &cfg).unwrap();
    let cmp = compare_class_distributions(500, 5, 4, 5, SEED, &CompareOptions { execution: exec, ..Default::default() }).unwrap();
    let fig = figure_data(
        FigureId::Fig2,
        &FigureParams {
            dataset_size: Some(1_000),
            leak_sizes: Some(vec![100, 400]),
            ks: Some(vec![1, 5]),
            trials: Some(200),
            execution: exec,
            ..Default::default()
        },
        SEED,
    )
    .unwrap();
    serde_json::to_string(&(single, multi, cmp, fig)).unwrap()
}

fn ac12() -> Outcome {
    let reference = stochastic_payload(Execution::Sequential);
    for threads in [1, 2, 4, 8] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let got = pool.install(|| stochastic_payload(Execution::Parallel));
        ensure!(got == reference, "payload differs with {threads} threads");
    }
    ensure!(stochastic_payload(Execution::Sequential) == reference, "sequential rerun differs");
    Ok(format!("{} byte payload identical: sequential, 1/2/4/8 threads", reference.len()))
}

fn main() {
    let criteria: [(&str, &str, fn() -> Outcome); 12] = [
        ("AC1", "exact-oracle equivalence", ac1),
        ("AC2", "closed-form identity", ac2),
        ("AC3", "endpoints and 1/k bound", ac3),
        ("AC4", "single-patient simulation vs analytic", ac4),
        ("AC5", "recursion vs analytic (n=1)", ac5),
        ("AC6", "multi-patient recursion vs simulation", ac6),
        ("AC7", "tiny multi-patient exactness", ac7),
        ("AC8", "homogeneous upper bound", ac8),
        ("AC9", "calibration", ac9),
        ("AC10", "anonymizer fixture", ac10),
        ("AC11", "plateau and k=1 histogram", ac11),
        ("AC12", "determinism across workers", ac12),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with("AC")).collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let t = start.elapsed();
        match outcome {
            Ok(detail) => println!("{id} PASS {name}: {detail} [{t:.1?}]"),
            Err(why) => {
                failed += 1;
                println!("{id} FAIL {name}: {why} [{t:.1?}]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
