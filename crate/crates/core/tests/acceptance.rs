//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_RED` are reported as FAIL but do not fail the
//! process; every other FAIL does.

mod common;

use std::time::Instant;

use common::*;
use maskreg::attacks::{cpa_attack, cpa_rank_analysis, kpa_scenario_one, ldp_ratio, ldp_sweep, RankClass};
use maskreg::cli::{run_experiment, Command, ExperimentConfig};
use maskreg::keygen::{BlockPolicy, KeygenConfig};
use maskreg::matrix::Mat;
use maskreg::model::{cross_validate_encrypted, cross_validate_plain};
use maskreg::protocol::{
    Actor, Federation, FederationConfig, Perturbation, TamperAction, TamperPlan, TcpLoopback, TransportKind, Verdict,
};
use maskreg::seed::stream;
use maskreg::{AgencyId, Dataset, Mode};
use rand::Rng;

/// The toy attack instance's printed solutions cannot be reproduced from its
/// printed inputs; see the project notes.
const KNOWN_RED: &[&str] = &["AC4"];

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Check {
    Check {
        pass,
        detail: detail.into(),
    }
}

fn all(parts: Vec<Check>) -> Check {
    let pass = parts.iter().all(|c| c.pass);
    let detail = parts
        .iter()
        .map(|c| format!("[{}] {}", if c.pass { "ok" } else { "x" }, c.detail))
        .collect::<Vec<_>>()
        .join("; ");
    check(pass, detail)
}

struct Instance {
    data: Dataset,
    k: usize,
    seed: u64,
}

fn grid(label: &str, count: usize) -> Vec<Instance> {
    let mut rng = stream(2024, label, 0);
    (0..count)
        .map(|i| {
            let n = rng.random_range(50..=500);
            let p = rng.random_range(2..=30);
            let k = [1, 2, 3, 5][rng.random_range(0..4)];
            let seed = 1000 + i as u64;
            Instance {
                data: synthetic(seed, n, p),
                k,
                seed,
            }
        })
        .collect()
}

fn ac1() -> Check {
    let started = Instant::now();
    let mut worst = 0.0f64;
    let mut errors = Vec::new();
    let instances = grid("ac1", 50);
    for inst in &instances {
        let fed = federation(&inst.data, inst.k, Mode::Linear, 0.0, inst.seed);
        match fed.run(&bus()) {
            Ok(out) => worst = worst.max(rel_max_diff(&out.beta(), &oracle_ols(&inst.data.x, &inst.data.y))),
            Err(e) => errors.push(e.to_string()),
        }
    }
    let secs = started.elapsed().as_secs_f64();
    all(vec![
        check(errors.is_empty(), format!("{} runs failed {:?}", errors.len(), errors.first())),
        check(worst <= 1e-8, format!("50 instances, worst relative max-norm error {worst:.2e} (tol 1e-8)")),
        check(secs < 60.0, format!("{secs:.1} s (limit 60 s)")),
    ])
}

fn ac2() -> Check {
    let mut worst = 0.0f64;
    let mut worst_btb = 0.0f64;
    let mut errors = Vec::new();
    for (i, inst) in grid("ac2", 50).iter().enumerate() {
        let lambda = [0.1, 1.0, 10.0][i % 3];
        let fed = federation(&inst.data, inst.k, Mode::Ridge, lambda, inst.seed);
        match fed.run(&bus()) {
            Ok(out) => {
                worst = worst.max(rel_max_diff(&out.beta(), &oracle_ridge(&inst.data.x, &inst.data.y, lambda)))
            }
            Err(e) => errors.push(e.to_string()),
        }
        if i % 10 == 0 {
            let b = fed.keys().iter().fold(Mat::identity(inst.data.p()), |m, k| m.matmul(k.b_matrix()));
            match fed.release_btb(&bus()) {
                Ok(btb) => worst_btb = worst_btb.max(btb.rel_max_diff(&b.gram())),
                Err(e) => errors.push(e.to_string()),
            }
        }
    }
    all(vec![
        check(errors.is_empty(), format!("{} runs failed {:?}", errors.len(), errors.first())),
        check(worst <= 1e-8, format!("50 ridge instances, worst relative error {worst:.2e} (tol 1e-8)")),
        check(worst_btb <= 1e-8, format!("released BᵀB vs ΠB_i Gram {worst_btb:.2e}")),
    ])
}

fn violations() -> Vec<(&'static str, TamperPlan)> {
    let agency = |action| TamperPlan {
        actor: Actor::Agency(AgencyId(2)),
        action,
    };
    vec![
        ("skip_pseudo_response", agency(TamperAction::SkipPseudoResponse)),
        ("non_commutative_key", agency(TamperAction::NonCommutativeKey)),
        (
            "perturb_result",
            TamperPlan {
                actor: Actor::Cloud,
                action: TamperAction::PerturbResult(Perturbation::Gaussian { magnitude: 1e-3 }),
            },
        ),
        ("wrong_decrypt", agency(TamperAction::WrongDecrypt)),
    ]
}

fn ac3() -> Check {
    let mut parts = Vec::new();
    for (mode, lambda) in [(Mode::Linear, 0.0), (Mode::Ridge, 1.0)] {
        let mut honest_worst = 0.0f64;
        let mut honest_ok = 0;
        for seed in 0..20u64 {
            let data = synthetic(300 + seed, 80, 6);
            if let Ok(out) = federation(&data, 3, mode, lambda, 300 + seed).run(&bus()) {
                honest_worst = honest_worst.max(out.verification.max_deviation);
                honest_ok += usize::from(out.verification.verdict == Verdict::Accepted);
            }
        }
        parts.push(check(
            honest_ok == 20 && honest_worst <= 1e-6,
            format!("{mode}: {honest_ok}/20 honest accepted, worst deviation {honest_worst:.1e}"),
        ));
        for (name, plan) in violations() {
            let mut detected = 0;
            for seed in 0..100u64 {
                let data = synthetic(500 + seed, 60, 4);
                let mut fed = federation(&data, 3, mode, lambda, 500 + seed);
                fed.inject_tamper(plan).unwrap();
                if let Ok(out) = fed.run(&bus()) {
                    detected += usize::from(out.verification.verdict == Verdict::Tampered);
                }
            }
            parts.push(check(detected == 100, format!("{mode} {name}: {detected}/100 detected")));
        }
    }
    all(parts)
}

fn ac4() -> Check {
    let b0 = Mat::from_rows(&[[-0.626, 1.595, 0.487], [0.184, 0.330, 0.738], [-0.836, -0.820, 0.576]]);
    let x1 = Mat::from_rows(&[[0.695, 0.379, 0.955], [2.512, -1.215, 0.984], [1.390, 2.125, 1.944]]);
    let x1_new = Mat::from_rows(&[[7.517, -5.452, -6.865], [11.13, -16.98, -2.897], [17.12, -23.77, -38.04]]);
    let truth = [8.0, 0.3, -2.0];
    let expected = [[-5.71, 3.47, 0.40], [-11.0, -1.65, 4.15], [-3.45, -4.90, 5.24]];
    let r = match cpa_attack(&x1, &x1_new, &b0, &Mat::identity(3), 3, Some(&truth)) {
        Ok(r) => r,
        Err(e) => return check(false, format!("attack failed: {e}")),
    };
    let mut parts = Vec::new();
    for (j, want) in expected.iter().enumerate() {
        let got = r.per_column_solution[j].coeffs();
        let ok = got.is_some_and(|g| g.iter().zip(want).all(|(a, b)| (a - b).abs() <= 0.01));
        parts.push(check(ok, format!("column {} solution {:?} vs printed {:?}", j + 1, got.map(|g| g.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>()), want)));
    }
    parts.push(check(!r.consistent, format!("consistent = {}", r.consistent)));
    let res = r.true_coeff_residual.clone().unwrap_or_default();
    parts.push(check(
        res.iter().any(|&v| v > 1e-3),
        format!("true-vector column residuals {:?}", res.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>()),
    ));
    all(parts)
}

fn ac5() -> Check {
    let mut parts = vec![
        check(cpa_rank_analysis(10, 5, 5).ok() == Some(RankClass::NoSolution), "n=10 p=5 rank 5 -> NoSolution"),
        check(cpa_rank_analysis(3, 5, 3).ok() == Some(RankClass::Infinite), "n=3 p=5 rank 3 -> Infinite"),
        check(cpa_rank_analysis(3, 3, 3).ok() == Some(RankClass::Infinite), "n=3 p=3 rank 3 -> Infinite"),
    ];
    let mut table_ok = true;
    let mut never_unique = true;
    for n in 1..=12 {
        for p in 2..=8 {
            let full = cpa_rank_analysis(n, p, n.min(p)).ok();
            let want = if n > p { RankClass::NoSolution } else { RankClass::Infinite };
            table_ok &= full == Some(want);
            for rank in 1..=n.min(p) {
                never_unique &= cpa_rank_analysis(n, p, rank).ok() != Some(RankClass::Unique);
            }
        }
    }
    parts.push(check(table_ok, "full-rank table n in 1..=12, p in 2..=8"));
    parts.push(check(never_unique, "no rank ever classified Unique for p >= 2"));

    // rank(X*₁[B₀ … B₀ᵖ]) equals rank(X*₁) < p², computed directly.
    let mut rank_ok = true;
    let mut rng = stream(5, "ac5", 0);
    for (n, p) in [(4, 3), (3, 4), (6, 2), (2, 5)] {
        let x = Mat::gaussian(n, p, 1.0, &mut rng);
        let b0 = Mat::gaussian(p, p, 1.0, &mut rng);
        let mut power = Mat::identity(p);
        let mut blocks = Vec::new();
        for _ in 0..p {
            power = power.matmul(&b0);
            blocks.push(x.matmul(&power));
        }
        let r = Mat::from_fn(n, p * p, |i, c| blocks[c / p][(i, c % p)]);
        rank_ok &= r.rank() == n.min(p) && r.rank() < p * p;
    }
    parts.push(check(rank_ok, "numerical rank of R matches rank(X*1) < p^2"));
    all(parts)
}

fn ac6() -> Check {
    let (n, p) = (100, 5);
    let mut x = Mat::gaussian(n, p, 1.0, &mut stream(6, "ac6", 0));
    for c in 0..p {
        let col = x.column(c);
        let mean = col.iter().sum::<f64>() / n as f64;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let z: Vec<f64> = col.iter().map(|v| (v - mean) / sd).collect();
        x.set_column(c, &z);
    }
    let mut medians = Vec::new();
    for (si, sigma) in [1e-2, 1e-3, 1e-4].into_iter().enumerate() {
        let mut maxes: Vec<f64> = (0..50)
            .map(|s| {
                kpa_scenario_one(&x, sigma, &mut stream(s, "ac6-b", si as u64))
                    .map(|r| r.recovered.max_abs())
                    .unwrap_or(f64::NAN)
            })
            .collect();
        maxes.sort_by(f64::total_cmp);
        medians.push(0.5 * (maxes[24] + maxes[25]));
    }
    check(
        medians[0] > medians[1] && medians[1] > medians[2],
        format!("medians {:?}", medians.iter().map(|m| format!("{m:.3e}")).collect::<Vec<_>>()),
    )
}

/// `P(|Z| < t)` for `Z ~ N(0, s²)` by composite Simpson on `[-t, t]`.
fn simpson_mass(t: f64, s: f64) -> f64 {
    let m = 200_000;
    let h = 2.0 * t / m as f64;
    let pdf = |z: f64| (-(z * z) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
    let mut acc = pdf(-t) + pdf(t);
    for i in 1..m {
        acc += pdf(-t + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

fn ac7() -> Check {
    let sigmas: Vec<f64> = (0..=20).map(|i| 10f64.powf(1.0 - 0.25 * f64::from(i))).collect();
    let mut parts = Vec::new();
    for norm2 in [5.0, 0.5] {
        let r = ldp_ratio(1.0, 1.0, norm2, 1e-3).unwrap();
        parts.push(check((r - 1.0).abs() < 1e-3, format!("norms (1,{norm2}) at sigma 1e-3: |ratio-1| = {:.1e}", (r - 1.0).abs())));
        let curve = ldp_sweep(1.0, 1.0, norm2, &sigmas).unwrap();
        parts.push(check(curve.is_monotone(), format!("norms (1,{norm2}) sweep monotone")));
    }
    let got = ldp_ratio(1.0, 1.0, 5.0, 0.1).unwrap();
    let want = simpson_mass(1.0, 0.1) / simpson_mass(1.0, 0.5);
    parts.push(check((got - want).abs() <= 1e-6, format!("ratio(1,1,5,0.1) = {got:.9} vs quadrature {want:.9}")));
    all(parts)
}

fn cv_federation(data: &Dataset, folds: usize, seed: u64, sigma_b: f64) -> Federation {
    let cfg = FederationConfig {
        mode: Mode::Linear,
        seed,
        keygen: KeygenConfig {
            sigma_b,
            block: BlockPolicy::PerShard(folds),
            ..KeygenConfig::default()
        },
        ..FederationConfig::default()
    };
    Federation::setup(split(data, 2), cfg).unwrap()
}

fn ac8() -> Check {
    let mut worst = 0.0f64;
    let mut sweep_worst = 0.0f64;
    let mut errors = 0;
    for seed in 0..10u64 {
        let data = synthetic(800 + seed, 200, 5);
        for folds in [5, 10] {
            let fed = cv_federation(&data, folds, 800 + seed, 1.0);
            let Ok(agg) = fed.encrypted_aggregate(&bus()) else {
                errors += 1;
                continue;
            };
            let (Ok(enc), Ok(plain)) = (
                cross_validate_encrypted(&agg, &fed, folds, Mode::Linear, &[]),
                cross_validate_plain(&data, &agg.fold_rows(folds).unwrap(), Mode::Linear, &[]),
            ) else {
                errors += 1;
                continue;
            };
            worst = worst.max(rel_max_diff(&enc.fold_metric, &plain.fold_metric));
        }
        let fold_mses: Vec<Vec<f64>> = [1e-2, 1e-3, 1e-4]
            .into_iter()
            .filter_map(|sb| {
                let fed = cv_federation(&data, 5, 800 + seed, sb);
                let agg = fed.encrypted_aggregate(&bus()).ok()?;
                cross_validate_encrypted(&agg, &fed, 5, Mode::Linear, &[]).ok().map(|r| r.fold_metric)
            })
            .collect();
        if fold_mses.len() != 3 {
            errors += 1;
            continue;
        }
        for other in &fold_mses[1..] {
            sweep_worst = sweep_worst.max(rel_max_diff(other, &fold_mses[0]));
        }
    }
    all(vec![
        check(errors == 0, format!("{errors} failed runs")),
        check(worst <= 1e-8, format!("5/10-fold encrypted vs plaintext, worst {worst:.2e} (tol 1e-8)")),
        check(sweep_worst <= 1e-7, format!("sigma_b sweep fold MSE spread {sweep_worst:.2e} (tol 1e-7)")),
    ])
}

fn stripped_report(cfg: &ExperimentConfig) -> Option<serde_json::Value> {
    let out = run_experiment(cfg).ok()?;
    let mut v = serde_json::to_value(&out.report).ok()?;
    let obj = v.as_object_mut()?;
    obj.remove("timings");
    obj.get_mut("config")?.as_object_mut()?.remove("transport");
    Some(v)
}

fn ac9() -> Check {
    let mut parts = Vec::new();
    for (k, mode, lambda) in [(2, Mode::Linear, 0.0), (3, Mode::Ridge, 1.0), (5, Mode::Linear, 0.0)] {
        let data = synthetic(900 + k as u64, 150, 6);
        let fed = federation(&data, k, mode, lambda, 900 + k as u64);
        let (Ok(a), Ok(b)) = (fed.run(&bus()), fed.run(&TcpLoopback::default())) else {
            parts.push(check(false, format!("K={k} {mode}: run failed")));
            continue;
        };
        let same = a.estimate.as_slice().iter().zip(b.estimate.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits());
        parts.push(check(same, format!("K={k} {mode}: decrypted estimate bit-identical over bus and tcp")));
    }
    let dir = tempfile::tempdir().unwrap();
    for command in [Command::Run, Command::Tamper, Command::Cv] {
        let mut reports = Vec::new();
        for transport in [TransportKind::Bus, TransportKind::Tcp] {
            let cfg = ExperimentConfig {
                command: Some(command),
                k: 3,
                seed: Some(17),
                transport,
                out: dir.path().join(command.name()),
                ..ExperimentConfig::default()
            };
            reports.push(stripped_report(&cfg).map(|v| serde_json::to_string_pretty(&v).unwrap()));
        }
        let ok = reports[0].is_some() && reports[0] == reports[1];
        parts.push(check(ok, format!("{} report identical over bus and tcp", command.name())));
    }
    all(parts)
}

fn main() {
    type Criterion = (&'static str, fn() -> Check);
    let criteria: [Criterion; 9] = [
        ("AC1", ac1),
        ("AC2", ac2),
        ("AC3", ac3),
        ("AC4", ac4),
        ("AC5", ac5),
        ("AC6", ac6),
        ("AC7", ac7),
        ("AC8", ac8),
        ("AC9", ac9),
    ];
    let mut unexpected = Vec::new();
    for (name, f) in criteria {
        let started = Instant::now();
        let c = f();
        let status = if c.pass { "PASS" } else { "FAIL" };
        let note = if !c.pass && KNOWN_RED.contains(&name) { " (known unattainable)" } else { "" };
        println!("{name} {status}{note} ({:.1} s): {}", started.elapsed().as_secs_f64(), c.detail);
        if !c.pass && !KNOWN_RED.contains(&name) {
            unexpected.push(name);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("failing criteria: {unexpected:?}");
        std::process::exit(1);
    }
}
