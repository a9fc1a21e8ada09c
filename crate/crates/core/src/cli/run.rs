use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};

use crate::attacks::{
    cpa_attack, cpa_instance, cpa_rank_analysis, kpa_scenario_one, kpa_scenario_two, kpa_two_instance, ldp_sweep,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::keygen::{BlockPolicy, Mode};
use crate::matrix::Mat;
use crate::model::{auc, binary_classes, cross_validate_encrypted, cross_validate_plain, fit, mse, predict};
use crate::protocol::{Federation, PhaseTimings, TamperPlan, Verdict};
use crate::seed::stream;

use super::config::{Command, ExperimentConfig, KpaChoice};
use super::io::{parse_csv, sha256_hex, split_horizontal, ResponseColumn, SplitPolicy};
use super::report::{Report, EXIT_OK, EXIT_TAMPERED};

/// A finished experiment.
#[derive(Debug)]
pub struct Outcome {
    pub report: Report,
    pub exit_code: i32,
    pub files: Vec<PathBuf>,
}

fn rows_of(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn synthetic(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    let s = &cfg.data.synthetic;
    if s.n == 0 || s.p == 0 {
        return Err(Error::InvalidConfig("synthetic data needs n, p >= 1".into()));
    }
    let mut rng = stream(seed, "synthetic", 0);
    let x = Mat::gaussian(s.n, s.p, 1.0, &mut rng);
    let beta: Vec<f64> = (0..s.p).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut y = x.mul_vec(&beta);
    for v in &mut y {
        let e: f64 = StandardNormal.sample(&mut rng);
        *v += s.noise * e;
    }
    if s.binary {
        let mut sorted = y.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        y.iter_mut().for_each(|v| *v = f64::from(u8::from(*v >= median)));
    }
    Dataset::new(x, y)
}

/// Reads the configured CSV, or draws synthetic data. Returns the data and
/// the input hashes for the report.
pub fn load_input(cfg: &ExperimentConfig) -> Result<(Dataset, BTreeMap<String, String>)> {
    let mut inputs = BTreeMap::new();
    let data = match &cfg.data.path {
        Some(path) => {
            let bytes = std::fs::read(path)?;
            let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
            inputs.insert(name, sha256_hex(&bytes));
            let response = cfg.data.response.as_deref().map_or(ResponseColumn::Last, ResponseColumn::parse);
            parse_csv(&bytes, &response, cfg.data.header)?
        }
        None => synthetic(cfg, cfg.seed.unwrap_or(0))?,
    };
    Ok((data, inputs))
}

fn shards(cfg: &ExperimentConfig, data: &Dataset) -> Result<Vec<Dataset>> {
    let policy = match &cfg.data.split {
        Some(sizes) => SplitPolicy::Sizes(sizes.clone()),
        None => SplitPolicy::Equal,
    };
    split_horizontal(data, cfg.k, &policy)
}

fn metrics(data: &Dataset, beta: &[f64]) -> Result<Value> {
    let pred = predict(&data.x, beta);
    let mut m = json!({ "mse": mse(&data.y, &pred)? });
    if binary_classes(&data.y).is_some() {
        m["auc"] = json!(auc(&data.y, &pred)?);
    }
    Ok(m)
}

/// Runs one experiment, writes its artifacts into `cfg.out`, and returns
/// the report with the process exit code.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut cfg = cfg.clone();
    cfg.resolve_seed()?;
    cfg.validate()?;
    let command = cfg
        .command
        .ok_or_else(|| Error::InvalidConfig("no command given".into()))?;
    let (result, inputs, timings, extra, exit_code) = match command {
        Command::Run => protocol_run(&cfg, None)?,
        Command::Tamper => protocol_run(&cfg, Some(cfg.tamper.plan()))?,
        Command::Cv => cv(&cfg)?,
        Command::AttackCpa => (cpa(&cfg)?, BTreeMap::new(), None, Vec::new(), EXIT_OK),
        Command::AttackKpa => {
            let (r, files) = kpa(&cfg)?;
            (r, BTreeMap::new(), None, files, EXIT_OK)
        }
        Command::Ldp => {
            let curve = ldp_sweep(cfg.ldp.t, cfg.ldp.norm1, cfg.ldp.norm2, &cfg.ldp.sigmas)?;
            let r = json!({ "monotone": curve.is_monotone(), "curve": curve });
            (r, BTreeMap::new(), None, vec![("curve.csv", curve.to_csv())], EXIT_OK)
        }
    };
    let report = Report {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config: cfg.clone(),
        inputs,
        result,
        timings,
    };
    let files = report.write(&cfg.out, &extra)?;
    Ok(Outcome { report, exit_code, files })
}

type Parts = (Value, BTreeMap<String, String>, Option<PhaseTimings>, Vec<(&'static str, String)>, i32);

fn protocol_run(cfg: &ExperimentConfig, plan: Option<TamperPlan>) -> Result<Parts> {
    let (data, inputs) = load_input(cfg)?;
    let parts = shards(cfg, &data)?;
    let sizes: Vec<usize> = parts.iter().map(Dataset::n).collect();
    let mut fed = Federation::setup(parts, cfg.federation(BlockPolicy::Size(cfg.keygen.block_size))?)?;
    if let Some(plan) = plan {
        fed.inject_tamper(plan)?;
    }
    let transport = cfg.transport.build();
    let out = fed.run(transport.as_ref())?;
    let beta = out.beta();

    // Plaintext reference on the pooled data.
    let (ref_mode, ref_lambda) = match cfg.mode {
        Mode::Ridge if cfg.lambda > 0.0 => (Mode::Ridge, cfg.lambda),
        _ => (Mode::Linear, 0.0),
    };
    let reference = fit(&data.x, &data.y, ref_mode, ref_lambda)?;
    let diff = beta
        .iter()
        .zip(&reference.beta)
        .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max);

    let accepted = out.verification.verdict == Verdict::Accepted;
    let mut result = json!({
        "k": cfg.k,
        "n": data.n(),
        "p": data.p(),
        "mode": cfg.mode,
        "lambda": cfg.lambda,
        "shard_sizes": sizes,
        "beta": beta,
        "estimate": rows_of(&out.estimate),
        "verification": out.verification,
        "metrics": metrics(&data, &beta)?,
        "plaintext_beta": reference.beta,
        "max_rel_diff_vs_plaintext": diff,
    });
    if plan.is_some() {
        result["tamper"] = json!(fed.tamper_plan());
    }
    let code = if accepted { EXIT_OK } else { EXIT_TAMPERED };
    Ok((result, inputs, Some(out.timings), Vec::new(), code))
}

fn cv(cfg: &ExperimentConfig) -> Result<Parts> {
    let started = Instant::now();
    let (data, inputs) = load_input(cfg)?;
    let parts = shards(cfg, &data)?;
    let fed = Federation::setup(parts, cfg.federation(BlockPolicy::PerShard(cfg.folds))?)?;
    let transport = cfg.transport.build();
    let agg = fed.encrypted_aggregate(transport.as_ref())?;
    let pre = started.elapsed();
    let enc = cross_validate_encrypted(&agg, &fed, cfg.folds, cfg.mode, &cfg.lambda_grid)?;
    let modeling = started.elapsed() - pre;
    let plain = cross_validate_plain(&data, &agg.fold_rows(cfg.folds)?, cfg.mode, &cfg.lambda_grid)?;
    let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
    let timings = PhaseTimings {
        pre_modeling_ms: ms(pre),
        modeling_ms: ms(modeling),
        post_modeling_ms: 0.0,
        total_ms: ms(started.elapsed()),
    };
    let code = if enc.verified { EXIT_OK } else { EXIT_TAMPERED };
    let result = json!({
        "k": cfg.k,
        "n": data.n(),
        "p": data.p(),
        "mode": cfg.mode,
        "metric": "mse",
        "encrypted": enc,
        "plaintext_mean_metric": plain.mean_metric,
        "plaintext_chosen_lambda": plain.chosen_lambda,
    });
    Ok((result, inputs, Some(timings), Vec::new(), code))
}

fn cpa(cfg: &ExperimentConfig) -> Result<Value> {
    let c = &cfg.cpa;
    let seed = cfg.seed.unwrap_or(0);
    let mut blind_consistent = 0;
    let mut blind_recovered = 0;
    let mut informed_recovered = 0;
    let mut trials = Vec::with_capacity(c.trials);
    let mut rank = None;
    for t in 0..c.trials {
        let inst = cpa_instance(c.n, c.p, c.degree, &mut stream(seed, "cpa", t as u64))?;
        rank.get_or_insert(inst.x_star_1.rank());
        let recovers = |r: &crate::attacks::CpaReport| {
            r.consistent
                && r.per_column_solution.iter().filter_map(|s| s.coeffs()).all(|b| {
                    b.iter().zip(&inst.true_coeffs).all(|(x, y)| (x - y).abs() <= 1e-6)
                })
        };
        // Without the orthogonal pass the attacker must guess A⁺ = I.
        let blind = cpa_attack(&inst.x_star_1, &inst.x_star_new, &inst.basis, &Mat::identity(c.n), c.degree, Some(&inst.true_coeffs))?;
        let informed = cpa_attack(&inst.x_star_1, &inst.x_star_new, &inst.basis, &inst.a_true, c.degree, Some(&inst.true_coeffs))?;
        blind_consistent += usize::from(blind.consistent);
        blind_recovered += usize::from(recovers(&blind));
        informed_recovered += usize::from(recovers(&informed));
        trials.push(json!({ "blind": blind, "with_true_pass": { "consistent": informed.consistent } }));
    }
    let rank = rank.unwrap_or(c.n.min(c.p));
    Ok(json!({
        "n": c.n,
        "p": c.p,
        "degree": c.degree,
        "trials": c.trials,
        "rank_x_star": rank,
        "rank_class": cpa_rank_analysis(c.n, c.p, rank)?,
        "blind_consistent": blind_consistent,
        "blind_recovered": blind_recovered,
        "with_true_pass_recovered": informed_recovered,
        "per_trial": trials,
    }))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn kpa(cfg: &ExperimentConfig) -> Result<(Value, Vec<(&'static str, String)>)> {
    let k = &cfg.kpa;
    if k.trials == 0 {
        return Err(Error::InvalidConfig("kpa trials must be >= 1".into()));
    }
    let seed = cfg.seed.unwrap_or(0);
    let mut result = json!({});
    let mut files = Vec::new();

    if matches!(k.scenario, KpaChoice::One | KpaChoice::Both) {
        let x22 = match &cfg.data.path {
            Some(_) => load_input(cfg)?.0.x,
            None => Mat::gaussian(k.rows, k.p, 1.0, &mut stream(seed, "kpa-data", 0)),
        };
        let p = x22.cols();
        let mut heat = String::from("sigma_b,row");
        for c in 0..p {
            let _ = write!(heat, ",c{c}");
        }
        heat.push('\n');
        let truth = x22.gram();
        let mut push_grid = |label: &str, m: &Mat| {
            for r in 0..p {
                let _ = write!(heat, "{label},{r}");
                for v in m.row(r) {
                    let _ = write!(heat, ",{v}");
                }
                heat.push('\n');
            }
        };
        push_grid("truth", &truth);
        let scale = truth.max_abs();
        let mut sweep = Vec::with_capacity(k.sigmas.len());
        for (si, &sigma) in k.sigmas.iter().enumerate() {
            let mut devs = Vec::with_capacity(k.trials);
            for t in 0..k.trials {
                let r = kpa_scenario_one(&x22, sigma, &mut stream(seed, "kpa-one", (si * k.trials + t) as u64))?;
                if t == 0 {
                    push_grid(&sigma.to_string(), &r.recovered);
                }
                devs.push(r.deviation_max);
            }
            let max = devs.iter().copied().fold(0.0, f64::max);
            sweep.push(json!({
                "sigma_b": sigma,
                "median_deviation": median(&mut devs),
                "max_deviation": max,
                "truth_max_abs": scale,
            }));
        }
        result["scenario_one"] = json!({
            "rows": x22.rows(),
            "p": p,
            "trials": k.trials,
            "convention": "raw N(0, sigma_b^2) entries, no rescale",
            "sweep": sweep,
        });
        files.push(("heatmap.csv", heat));
    }

    if matches!(k.scenario, KpaChoice::Two | KpaChoice::Both) {
        let mut csv = String::from("trial,masked,recovered,truth\n");
        let mut summary = Vec::new();
        for masked in [true, false] {
            let mut devs = Vec::with_capacity(k.trials);
            for t in 0..k.trials {
                let inst = kpa_two_instance(k.block, masked, &mut stream(seed, "kpa-two", t as u64))?;
                let r = kpa_scenario_two(&inst.x11, &inst.z_star_11, &inst.z_star_22, &inst.x22)?;
                for (rec, tru) in r.deviation_pairs() {
                    let _ = writeln!(csv, "{t},{masked},{rec},{tru}");
                }
                devs.push(r.deviation_max);
            }
            summary.push(json!({
                "masked": masked,
                "median_deviation": median(&mut devs),
                "max_deviation": devs.iter().copied().fold(0.0, f64::max),
            }));
        }
        result["scenario_two"] = json!({ "block": k.block, "trials": k.trials, "summary": summary });
        files.push(("deviation.csv", csv));
    }
    Ok((result, files))
}
