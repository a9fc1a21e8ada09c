mod common;

use common::*;
use maskreg::keygen::{AgencyId, BlockPolicy, KeygenConfig};
use maskreg::matrix::Mat;
use maskreg::protocol::{
    Actor, CloudPlacement, Federation, FederationConfig, Perturbation, TamperAction, TamperPlan, TcpLoopback, Verdict,
};
use maskreg::{Dataset, Mode};

#[test]
fn linear_run_matches_plaintext_ols() {
    for (k, seed) in [(1, 1), (2, 2), (3, 3), (5, 4)] {
        let data = synthetic(seed, 120, 6);
        let out = federation(&data, k, Mode::Linear, 0.0, seed).run(&bus()).unwrap();
        let err = rel_max_diff(&out.beta(), &oracle_ols(&data.x, &data.y));
        assert!(err <= 1e-8, "K={k}: rel err {err:e}");
        assert_eq!(out.verification.verdict, Verdict::Accepted);
        assert!(out.verification.max_deviation <= 1e-6);
    }
}

#[test]
fn ridge_run_matches_plaintext_ridge() {
    for lambda in [0.1, 1.0, 10.0] {
        let data = synthetic(7, 90, 5);
        let out = federation(&data, 3, Mode::Ridge, lambda, 7).run(&bus()).unwrap();
        let err = rel_max_diff(&out.beta(), &oracle_ridge(&data.x, &data.y, lambda));
        assert!(err <= 1e-8, "lambda={lambda}: rel err {err:e}");
        assert_eq!(out.verification.verdict, Verdict::Accepted);
    }
}

#[test]
fn identity_keys_aggregate_is_plaintext_stack() {
    let data = synthetic(11, 15, 3);
    let cfg = FederationConfig {
        identity_keys: true,
        ..FederationConfig::default()
    };
    let fed = Federation::setup(split(&data, 3), cfg).unwrap();
    let agg = fed.run_pre_modeling(&bus()).unwrap();
    assert_eq!(agg.x_star, data.x);
    assert_eq!(agg.y_star.column(0), data.y);
}

#[test]
fn aggregate_gram_matches_masked_plaintext_gram() {
    let data = synthetic(12, 40, 4);
    let fed = federation(&data, 2, Mode::Linear, 0.0, 12);
    let agg = fed.run_pre_modeling(&bus()).unwrap();
    let b = fed.keys()[0].b_matrix().matmul(fed.keys()[1].b_matrix());
    let expected = b.transpose().matmul(&data.x.gram()).matmul(&b);
    assert!(agg.x_star.gram().rel_max_diff(&expected) <= 1e-8);
}

#[test]
fn single_agency_aggregate_equals_local_encrypt() {
    let data = synthetic(13, 20, 3);
    let fed = federation(&data, 1, Mode::Linear, 0.0, 13);
    let agg = fed.run_pre_modeling(&bus()).unwrap();
    let keys = &fed.keys()[0];
    let a = maskreg::matrix::block_diag(keys.blocks_for(AgencyId(1)).unwrap());
    assert!(agg.x_star.rel_max_diff(&a.matmul(&data.x).matmul(keys.b_matrix())) <= 1e-12);
}

#[test]
fn custom_rings_leave_gram_unchanged() {
    let data = synthetic(14, 60, 4);
    let base = federation(&data, 3, Mode::Linear, 0.0, 14).run_pre_modeling(&bus()).unwrap();
    let cfg = FederationConfig {
        seed: 14,
        rings: Some(vec![ids(&[1, 3, 2]), ids(&[2, 1, 3]), ids(&[3, 2, 1])]),
        ..FederationConfig::default()
    };
    let other = Federation::setup(split(&data, 3), cfg).unwrap().run_pre_modeling(&bus()).unwrap();
    assert!(other.x_star.gram().rel_max_diff(&base.x_star.gram()) <= 1e-9);
}

#[test]
fn release_btb_matches_direct_product() {
    let data = synthetic(15, 30, 4);
    let fed = federation(&data, 3, Mode::Ridge, 1.0, 15);
    let btb = fed.release_btb(&bus()).unwrap();
    let k = fed.keys();
    let b = k[0].b_matrix().matmul(k[1].b_matrix()).matmul(k[2].b_matrix());
    assert!(btb.rel_max_diff(&b.gram()) <= 1e-8);

    let single = federation(&data, 1, Mode::Ridge, 1.0, 15);
    let b1 = single.keys()[0].b_matrix().clone();
    assert!(single.release_btb(&bus()).unwrap().rel_max_diff(&b1.gram()) <= 1e-10);

    let ident = Federation::setup(
        split(&data, 2),
        FederationConfig {
            identity_keys: true,
            mode: Mode::Ridge,
            lambda: 1.0,
            ..FederationConfig::default()
        },
    )
    .unwrap();
    assert_eq!(ident.release_btb(&bus()).unwrap(), Mat::identity(4));
}

#[test]
fn decryption_order_does_not_matter() {
    let data = synthetic(16, 80, 5);
    let a = federation(&data, 3, Mode::Linear, 0.0, 16).run(&bus()).unwrap();
    let cfg = FederationConfig {
        seed: 16,
        decrypt_order: Some(ids(&[3, 1, 2])),
        ..FederationConfig::default()
    };
    let b = Federation::setup(split(&data, 3), cfg).unwrap().run(&bus()).unwrap();
    assert!(a.estimate.sub(&b.estimate).max_abs() <= 1e-9 * a.estimate.max_abs());
}

#[test]
fn cloud_hosted_on_an_agency() {
    let data = synthetic(17, 60, 3);
    let cfg = FederationConfig {
        seed: 17,
        cloud: CloudPlacement::Agency(AgencyId(2)),
        ..FederationConfig::default()
    };
    let out = Federation::setup(split(&data, 3), cfg).unwrap().run(&bus()).unwrap();
    assert!(rel_max_diff(&out.beta(), &oracle_ols(&data.x, &data.y)) <= 1e-8);
    let tcp = Federation::setup(
        split(&data, 3),
        FederationConfig {
            seed: 17,
            cloud: CloudPlacement::Agency(AgencyId(2)),
            ..FederationConfig::default()
        },
    )
    .unwrap()
    .run(&TcpLoopback::default())
    .unwrap();
    assert_eq!(tcp.estimate, out.estimate);
}

#[test]
fn tcp_and_bus_agree_bit_for_bit() {
    let data = synthetic(18, 100, 4);
    for mode in [Mode::Linear, Mode::Ridge] {
        let lambda = if mode == Mode::Ridge { 2.0 } else { 0.0 };
        let fed = federation(&data, 4, mode, lambda, 18);
        let a = fed.run(&bus()).unwrap();
        let b = fed.run(&TcpLoopback::default()).unwrap();
        assert_eq!(a.estimate, b.estimate);
        assert_eq!(a.encrypted_estimate, b.encrypted_estimate);
        assert_eq!(b.transport, "tcp");
    }
}

#[test]
fn every_violation_is_detected() {
    let data = synthetic(19, 60, 4);
    let plans = [
        (Actor::Agency(AgencyId(1)), TamperAction::SkipPseudoResponse),
        (Actor::Agency(AgencyId(2)), TamperAction::NonCommutativeKey),
        (Actor::Cloud, TamperAction::PerturbResult(Perturbation::Entry { row: 0, col: 0, delta: 0.01 })),
        (Actor::Agency(AgencyId(2)), TamperAction::WrongDecrypt),
    ];
    for mode in [Mode::Linear, Mode::Ridge] {
        let lambda = if mode == Mode::Ridge { 1.0 } else { 0.0 };
        for (actor, action) in plans {
            let mut fed = federation(&data, 2, mode, lambda, 19);
            fed.inject_tamper(TamperPlan { actor, action }).unwrap();
            let out = fed.run(&bus()).unwrap();
            assert_eq!(out.verification.verdict, Verdict::Tampered, "{mode} {action:?} slipped through");
        }
        let mut fed = federation(&data, 2, mode, lambda, 19);
        fed.inject_tamper(TamperPlan::honest()).unwrap();
        assert_eq!(fed.run(&bus()).unwrap().verification.verdict, Verdict::Accepted);
    }
}

#[test]
fn setup_rejects_bad_configs() {
    let data = synthetic(20, 30, 3);
    let bad = |cfg: FederationConfig| Federation::setup(split(&data, 3), cfg).is_err();
    assert!(bad(FederationConfig {
        lambda: 1.0,
        ..FederationConfig::default()
    }));
    assert!(bad(FederationConfig {
        decrypt_order: Some(ids(&[1, 1, 2])),
        ..FederationConfig::default()
    }));
    assert!(bad(FederationConfig {
        cloud: CloudPlacement::Agency(AgencyId(4)),
        ..FederationConfig::default()
    }));
    assert!(bad(FederationConfig {
        rings: Some(vec![ids(&[1, 2, 3]), ids(&[1, 2, 3]), ids(&[3, 1, 2])]),
        ..FederationConfig::default()
    }));
    let mixed = vec![data.clone(), Dataset::new(Mat::zeros(3, 2), vec![0.0; 3]).unwrap()];
    assert!(Federation::setup(mixed, FederationConfig::default()).is_err());
}

#[test]
fn blocked_keys_keep_exactness() {
    let data = synthetic(21, 100, 5);
    let cfg = FederationConfig {
        seed: 21,
        keygen: KeygenConfig {
            block: BlockPolicy::PerShard(5),
            ..KeygenConfig::default()
        },
        ..FederationConfig::default()
    };
    let out = Federation::setup(split(&data, 2), cfg).unwrap().run(&bus()).unwrap();
    assert!(rel_max_diff(&out.beta(), &oracle_ols(&data.x, &data.y)) <= 1e-8);
    assert_eq!(out.aggregate.blocks.len(), 10);
}
