//! Adversary workbench: chosen-plaintext, known-plaintext and LDP analyses.

mod cpa;
mod kpa;
mod ldp;

pub use cpa::{cpa_attack, cpa_instance, cpa_rank_analysis, ColumnSolution, CpaInstance, CpaReport, RankClass};
pub use kpa::{
    kpa_scenario_one, kpa_scenario_two, kpa_two_instance, projection_variance, KpaReport, KpaScenario, KpaTwoInstance,
};
pub use ldp::{ldp_ratio, ldp_sweep, LdpCurve};
