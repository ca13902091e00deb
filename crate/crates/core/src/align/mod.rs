//! Functional alignment: score block correspondences between adjacent layers and
//! pick the permutation that places matched blocks at the same index.

mod assignment;
mod similarity;

pub use assignment::{
    greedy_top_k, random_permutation, solve_assignment, solve_assignment_seeded, solve_exact, solve_screened,
    AlignConfig, SolverPolicy,
};
pub use similarity::{
    activation_similarity, cosine, hybrid_similarity, residual_energy_costs, weight_similarity,
    ActivationSummary, SimilarityKind, SimilarityMatrix,
};

use crate::blocks::{apply_permutation, BlockSet, Permutation};
use crate::error::{Error, Result};

/// Seed component identifying one (layer, type) stream.
pub fn stream_seed(layer: usize, type_id: u16) -> u64 {
    (layer as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((type_id as u64) << 48 | 0xA5A5)
}

/// Score matrix used for alignment: hybrid when both activation summaries are present,
/// weight-only otherwise.
pub fn alignment_scores(
    ref_aligned: &BlockSet,
    cand: &BlockSet,
    ref_act: Option<&ActivationSummary>,
    cand_act: Option<&ActivationSummary>,
    alpha: f64,
) -> Result<SimilarityMatrix> {
    let sw = weight_similarity(ref_aligned, cand)?;
    match (ref_act, cand_act) {
        (Some(ra), Some(ca)) => {
            if ra.means.len() != cand.len() || ca.means.len() != cand.len() {
                return Err(Error::ShapeMismatch("activation summary block count".into()));
            }
            let sa = activation_similarity(ra, ca)?;
            hybrid_similarity(&sw, &sa, alpha)
        }
        _ => Ok(sw),
    }
}

/// Align `cand` (layer ℓ, canonical order) against the already aligned layer ℓ−1.
pub fn align_layer_pair(
    ref_aligned: &BlockSet,
    cand: &BlockSet,
    ref_act: Option<&ActivationSummary>,
    cand_act: Option<&ActivationSummary>,
    cfg: &AlignConfig,
) -> Result<(Permutation, BlockSet)> {
    if ref_aligned.len() != cand.len() {
        return Err(Error::BlockCountMismatch(format!(
            "reference has {} blocks, candidate {}",
            ref_aligned.len(),
            cand.len()
        )));
    }
    let n = cand.len();
    let perm = if n <= 1 || cfg.policy == SolverPolicy::Identity {
        Permutation::identity(n)
    } else if cfg.policy == SolverPolicy::Random {
        random_permutation(n, cfg.seed ^ stream_seed(cand.layer, cand.type_id))
    } else {
        let s = alignment_scores(ref_aligned, cand, ref_act, cand_act, cfg.alpha)?;
        solve_assignment_seeded(&s, cfg, stream_seed(cand.layer, cand.type_id))?
    };
    let aligned = apply_permutation(cand, &perm)?;
    Ok((perm, aligned))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(rng: &mut ChaCha8Rng, n: usize, d: usize) -> BlockSet {
        BlockSet {
            layer: 1,
            type_id: 0,
            blocks: (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
        }
    }

    #[test]
    fn recovers_planted_shuffle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let reference = random_set(&mut rng, 12, 8);
        let sigma = random_permutation(12, 5);
        let mut cand = apply_permutation(&reference, &sigma.inverse()).unwrap();
        cand.layer = 2;
        let (pi, aligned) = align_layer_pair(&reference, &cand, None, None, &AlignConfig::default()).unwrap();
        assert_eq!(aligned.blocks, reference.blocks);
        assert_eq!(pi, sigma);
    }

    #[test]
    fn identity_policy_and_single_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_set(&mut rng, 5, 3);
        let b = random_set(&mut rng, 5, 3);
        let cfg = AlignConfig { policy: SolverPolicy::Identity, ..Default::default() };
        assert!(align_layer_pair(&a, &b, None, None, &cfg).unwrap().0.is_identity());
        let one_a = random_set(&mut rng, 1, 3);
        let one_b = random_set(&mut rng, 1, 3);
        let (p, _) = align_layer_pair(&one_a, &one_b, None, None, &AlignConfig::default()).unwrap();
        assert!(p.is_identity());
    }
}
