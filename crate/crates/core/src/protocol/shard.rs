use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::keygen::{make_responses, AgencyId, AgencyKeys, Mode, ResponseBundle};
use crate::matrix::Mat;

/// An agency's masked `(X*, Y*)` with the ledger of applied passes.
#[derive(Clone, Debug, PartialEq)]
pub struct EncryptedShard {
    pub origin: AgencyId,
    pub x_star: Mat,
    pub y_star: Mat,
    /// Row layout of the orthogonal blocks masking this shard. Public.
    pub block_sizes: Vec<usize>,
    pub applied: Vec<AgencyId>,
}

impl EncryptedShard {
    pub fn n(&self) -> usize {
        self.x_star.rows()
    }

    pub fn is_complete(&self, k: usize) -> bool {
        self.applied.len() == k
    }
}

/// `X* = A_ii (X_i + Δ_i) B_i`, `Y* = A_ii [y, Y_s1, Y_s2] C_i`.
pub fn local_encrypt<R: Rng + ?Sized>(
    keys: &AgencyKeys,
    data: &Dataset,
    mode: Mode,
    rng: &mut R,
) -> Result<EncryptedShard> {
    let x_tilde = noisy_features(keys, data)?;
    let responses = make_responses(&x_tilde, &data.y, mode, rng)?;
    local_encrypt_with(keys, &x_tilde, &responses)
}

/// `X_i + Δ_i`, checking the data against the key dimensions.
pub fn noisy_features(keys: &AgencyKeys, data: &Dataset) -> Result<Mat> {
    if data.x.shape() != keys.delta.shape() {
        return Err(Error::DimMismatch(format!(
            "agency {} holds {}x{} data but keys were made for {}x{}",
            keys.agency_id,
            data.n(),
            data.p(),
            keys.delta.rows(),
            keys.delta.cols()
        )));
    }
    Ok(data.x.add(&keys.delta))
}

/// Masks already-prepared features and responses.
pub fn local_encrypt_with(keys: &AgencyKeys, x_tilde: &Mat, responses: &ResponseBundle) -> Result<EncryptedShard> {
    let own = keys.blocks_for(keys.agency_id)?;
    if x_tilde.cols() != keys.b_matrix().rows() {
        return Err(Error::DimMismatch(format!(
            "{} features but B is {}x{}",
            x_tilde.cols(),
            keys.b_matrix().rows(),
            keys.b_matrix().cols()
        )));
    }
    let y = responses.to_mat();
    if y.rows() != x_tilde.rows() {
        return Err(Error::DimMismatch("response and feature rows differ".into()));
    }
    let x_star = own.apply_left(x_tilde)?.matmul(keys.b_matrix());
    let y_star = own.apply_left(&y)?.matmul(keys.c_matrix());
    Ok(EncryptedShard {
        origin: keys.agency_id,
        x_star,
        y_star,
        block_sizes: own.block_sizes(),
        applied: vec![keys.agency_id],
    })
}

/// One ring hop: `X* ← A_{j,origin} X* B_j`, `Y* ← A_{j,origin} Y* C_j`.
pub fn pass_encrypt(shard: &EncryptedShard, passer: &AgencyKeys) -> Result<EncryptedShard> {
    let id = passer.agency_id;
    if shard.applied.contains(&id) {
        return Err(Error::DuplicatePass(id));
    }
    let blocks = passer.blocks_for(shard.origin)?;
    if blocks.block_sizes() != shard.block_sizes {
        return Err(Error::DimMismatch(format!(
            "agency {id} block layout for shard {} differs from the shard's",
            shard.origin
        )));
    }
    if shard.x_star.cols() != passer.b_matrix().rows() || shard.y_star.cols() != 3 {
        return Err(Error::DimMismatch("shard width does not match passer keys".into()));
    }
    let mut applied = shard.applied.clone();
    applied.push(id);
    Ok(EncryptedShard {
        origin: shard.origin,
        x_star: blocks.apply_left(&shard.x_star)?.matmul(passer.b_matrix()),
        y_star: blocks.apply_left(&shard.y_star)?.matmul(passer.c_matrix()),
        block_sizes: shard.block_sizes.clone(),
        applied,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keygen::{derive_bases, gen_agency_keys, BlockPolicy, KeygenConfig, SharedSeed};
    use crate::matrix::{block_diag, OrthoBlocks};
    use crate::seed::stream;

    fn identity_keys(id: u8, sizes: &[usize], p: usize) -> AgencyKeys {
        AgencyKeys::identity(AgencyId(id), sizes, p, BlockPolicy::Size(100)).unwrap()
    }

    #[test]
    fn identity_masking_is_transparent() {
        let keys = identity_keys(1, &[3], 2);
        let data = Dataset::new(Mat::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 7.0]]), vec![1.0, 0.0, 2.0]).unwrap();
        let shard = local_encrypt(&keys, &data, Mode::Linear, &mut stream(1, "r", 0)).unwrap();
        assert_eq!(shard.x_star, data.x);
        assert_eq!(shard.y_star.column(0), data.y);
        assert_eq!(shard.y_star.column(1), vec![3.0, 7.0, 12.0]);
        assert_eq!(shard.applied, vec![AgencyId(1)]);
    }

    #[test]
    fn orthogonal_mask_keeps_column_norms() {
        let mut keys = identity_keys(1, &[6], 3);
        keys.a_blocks_for
            .insert(AgencyId(1), crate::matrix::random_ortho_blocks(&[6], &mut stream(2, "a", 0)).unwrap());
        let data = Dataset::new(Mat::gaussian(6, 3, 1.0, &mut stream(2, "x", 0)), vec![0.0; 6]).unwrap();
        let shard = local_encrypt(&keys, &data, Mode::Linear, &mut stream(1, "r", 0)).unwrap();
        for (a, b) in shard.x_star.column_norms().iter().zip(data.x.column_norms()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn swap_basis_by_hand() {
        let mut keys = identity_keys(1, &[2], 2);
        let swap = Mat::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        keys.override_masks(swap.clone(), Mat::identity(3)).unwrap();
        let data = Dataset::new(Mat::identity(2), vec![1.0, 1.0]).unwrap();
        let shard = local_encrypt(&keys, &data, Mode::Linear, &mut stream(1, "r", 0)).unwrap();
        assert_eq!(shard.x_star, swap);
    }

    #[test]
    fn identity_pass_only_updates_ledger() {
        let k1 = identity_keys(1, &[3, 3], 2);
        let k2 = identity_keys(2, &[3, 3], 2);
        let data = Dataset::new(Mat::gaussian(3, 2, 1.0, &mut stream(3, "x", 0)), vec![1.0, 2.0, 3.0]).unwrap();
        let s1 = local_encrypt(&k1, &data, Mode::Linear, &mut stream(1, "r", 0)).unwrap();
        let s2 = pass_encrypt(&s1, &k2).unwrap();
        assert_eq!(s2.x_star, s1.x_star);
        assert_eq!(s2.y_star, s1.y_star);
        assert_eq!(s2.applied, vec![AgencyId(1), AgencyId(2)]);
        assert!(matches!(pass_encrypt(&s2, &k2), Err(Error::DuplicatePass(AgencyId(2)))));
    }

    fn two_agency_keys(seed: u64, n: usize, p: usize) -> (AgencyKeys, AgencyKeys) {
        let cfg = KeygenConfig {
            block: BlockPolicy::Size(3),
            ..KeygenConfig::default()
        };
        let bases = derive_bases(SharedSeed(seed), p, &cfg).unwrap();
        let k1 = gen_agency_keys(&bases, AgencyId(1), &[n, n], &cfg, &mut stream(seed, "k", 1)).unwrap();
        let k2 = gen_agency_keys(&bases, AgencyId(2), &[n, n], &cfg, &mut stream(seed, "k", 2)).unwrap();
        (k1, k2)
    }

    #[test]
    fn full_ring_matches_closed_form() {
        let (k1, k2) = two_agency_keys(8, 6, 4);
        let data = Dataset::new(Mat::gaussian(6, 4, 1.0, &mut stream(8, "x", 0)), vec![0.5; 6]).unwrap();
        let s = pass_encrypt(&local_encrypt(&k1, &data, Mode::Linear, &mut stream(1, "r", 0)).unwrap(), &k2).unwrap();
        let a11 = block_diag(k1.blocks_for(AgencyId(1)).unwrap());
        let a21 = block_diag(k2.blocks_for(AgencyId(1)).unwrap());
        let expected = a21.matmul(&a11).matmul(&data.x).matmul(k1.b_matrix()).matmul(k2.b_matrix());
        assert!(s.x_star.rel_max_diff(&expected) <= 1e-12);
    }

    #[test]
    fn passer_order_of_right_masks_is_irrelevant() {
        let (k1, k2) = two_agency_keys(9, 6, 4);
        let x = Mat::gaussian(6, 4, 1.0, &mut stream(9, "x", 0));
        let y = Mat::gaussian(6, 3, 1.0, &mut stream(9, "y", 0));
        let b12 = x.matmul(k1.b_matrix()).matmul(k2.b_matrix());
        let b21 = x.matmul(k2.b_matrix()).matmul(k1.b_matrix());
        assert!(b12.sub(&b21).max_abs() <= 1e-9);
        let c12 = y.matmul(k1.c_matrix()).matmul(k2.c_matrix());
        let c21 = y.matmul(k2.c_matrix()).matmul(k1.c_matrix());
        assert!(c12.sub(&c21).max_abs() <= 1e-9);
    }

    #[test]
    fn wrong_data_shape_is_rejected() {
        let keys = identity_keys(1, &[3], 2);
        let data = Dataset::new(Mat::zeros(4, 2), vec![0.0; 4]).unwrap();
        let r = local_encrypt(&keys, &data, Mode::Linear, &mut stream(1, "r", 0));
        assert!(matches!(r, Err(Error::DimMismatch(_))));
    }

    #[test]
    fn pass_rejects_layout_mismatch() {
        let k1 = identity_keys(1, &[4, 4], 2);
        let mut k2 = identity_keys(2, &[4, 4], 2);
        k2.a_blocks_for.insert(AgencyId(1), OrthoBlocks::identity(&[2, 2]).unwrap());
        let data = Dataset::new(Mat::zeros(4, 2), vec![0.0; 4]).unwrap();
        let s1 = local_encrypt(&k1, &data, Mode::Linear, &mut stream(1, "r", 0)).unwrap();
        assert!(matches!(pass_encrypt(&s1, &k2), Err(Error::DimMismatch(_))));
    }
}
