//! K-agency protocol: ring encryption, cloud fit, round-robin decryption.

mod cloud;
mod estimate;
mod federation;
mod node;
mod shard;
mod tamper;
mod transport;
pub mod wire;

pub use cloud::{
    cloud_fit, cloud_fit_rows, complement, mask_factor_round, mask_factor_seed, residual_gram, EncryptedAggregate,
    MaskFactor, RowBlock,
};
pub use estimate::{
    decrypt_residual_gram_round, decrypt_round, verify_estimate, EstimateMatrix, Stage, Verdict, Verification,
    VERIFY_TOL,
};
pub use federation::{rings_with, CloudPlacement, Decryptor, Federation, FederationConfig, PhaseTimings, RunOutcome};
pub use node::{Node, NodeId, Outgoing, Scope, STANDALONE_CLOUD};
pub use shard::{local_encrypt, local_encrypt_with, noisy_features, pass_encrypt, EncryptedShard};
pub use tamper::{
    apply_perturbation, non_commutative_masks, wrong_decrypt_masks, Actor, Perturbation, TamperAction, TamperPlan,
};
pub use transport::{InProcessBus, TcpLoopback, Transport, TransportKind};
