mod common;

use common::*;
use maskreg::keygen::{BlockPolicy, KeygenConfig};
use maskreg::model::{cross_validate_encrypted, cross_validate_plain};
use maskreg::protocol::{Federation, FederationConfig};
use maskreg::{Dataset, Error, Mode};

fn blocked(data: &Dataset, k: usize, folds: usize, mode: Mode, seed: u64, sigma_b: f64, identity: bool) -> Federation {
    let cfg = FederationConfig {
        mode,
        lambda: if mode == Mode::Ridge { 1.0 } else { 0.0 },
        seed,
        identity_keys: identity,
        keygen: KeygenConfig {
            sigma_b,
            block: BlockPolicy::PerShard(folds),
            ..KeygenConfig::default()
        },
        ..FederationConfig::default()
    };
    Federation::setup(split(data, k), cfg).unwrap()
}

#[test]
fn identity_keys_match_plaintext_cv_exactly() {
    let data = synthetic(31, 100, 4);
    let fed = blocked(&data, 2, 10, Mode::Linear, 31, 1.0, true);
    let agg = fed.encrypted_aggregate(&bus()).unwrap();
    let enc = cross_validate_encrypted(&agg, &fed, 10, Mode::Linear, &[]).unwrap();
    let plain = cross_validate_plain(&data, &agg.fold_rows(10).unwrap(), Mode::Linear, &[]).unwrap();
    assert!(rel_max_diff(&enc.fold_metric, &plain.fold_metric) <= 1e-12);
    assert!(enc.verified);
}

#[test]
fn masked_cv_matches_plaintext_cv() {
    let data = synthetic(32, 150, 5);
    let fed = blocked(&data, 3, 5, Mode::Linear, 32, 1.0, false);
    let agg = fed.encrypted_aggregate(&bus()).unwrap();
    let enc = cross_validate_encrypted(&agg, &fed, 5, Mode::Linear, &[]).unwrap();
    let plain = cross_validate_plain(&data, &agg.fold_rows(5).unwrap(), Mode::Linear, &[]).unwrap();
    assert!(rel_max_diff(&enc.fold_metric, &plain.fold_metric) <= 1e-8);
    assert!((enc.mean_metric - enc.fold_metric.iter().sum::<f64>() / 5.0).abs() < 1e-15);
}

#[test]
fn ridge_grid_picks_the_plaintext_choice() {
    // Nearly collinear columns make the grid matter.
    let mut data = synthetic(33, 120, 4);
    for r in 0..data.n() {
        let v = data.x[(r, 0)];
        data.x[(r, 1)] = v + 1e-3 * data.x[(r, 1)];
    }
    let grid = [0.1, 1.0, 10.0];
    let fed = blocked(&data, 2, 5, Mode::Ridge, 33, 1.0, false);
    let agg = fed.encrypted_aggregate(&bus()).unwrap();
    let enc = cross_validate_encrypted(&agg, &fed, 5, Mode::Ridge, &grid).unwrap();
    let plain = cross_validate_plain(&data, &agg.fold_rows(5).unwrap(), Mode::Ridge, &grid).unwrap();
    assert_eq!(enc.chosen_lambda, plain.chosen_lambda);
    for (e, p) in enc.lambda_grid.unwrap().iter().zip(plain.lambda_grid.unwrap()) {
        assert!(rel_max_diff(&e.fold_metric, &p.fold_metric) <= 1e-8);
    }
    assert!(enc.verified);
}

#[test]
fn too_few_blocks_is_misaligned() {
    let data = synthetic(34, 40, 3);
    let fed = blocked(&data, 2, 3, Mode::Linear, 34, 1.0, false);
    let agg = fed.encrypted_aggregate(&bus()).unwrap();
    assert!(matches!(
        cross_validate_encrypted(&agg, &fed, 5, Mode::Linear, &[]),
        Err(Error::FoldBlockMisaligned(_))
    ));
}

#[test]
fn ridge_cv_requires_grid() {
    let data = synthetic(35, 60, 3);
    let fed = blocked(&data, 2, 5, Mode::Ridge, 35, 1.0, false);
    let agg = fed.encrypted_aggregate(&bus()).unwrap();
    assert!(cross_validate_encrypted(&agg, &fed, 5, Mode::Ridge, &[]).is_err());
}
