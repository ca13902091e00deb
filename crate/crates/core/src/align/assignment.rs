//! Linear assignment: maximize Σ S(i, π(i)).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::similarity::SimilarityMatrix;
use crate::blocks::Permutation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverPolicy {
    /// Exact when B ≤ threshold, screened greedy otherwise.
    Adaptive,
    Exact,
    Screened,
    Identity,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    pub alpha: f64,
    pub policy: SolverPolicy,
    pub k_cand: usize,
    pub refine_passes: usize,
    pub exact_threshold: usize,
    pub seed: u64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            alpha: 0.7,
            policy: SolverPolicy::Adaptive,
            k_cand: 16,
            refine_passes: 1,
            exact_threshold: 256,
            seed: 0,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.k_cand == 0 {
            return Err(Error::InvalidConfig("k_cand must be at least 1".into()));
        }
        if self.exact_threshold == 0 {
            return Err(Error::InvalidConfig("exact_threshold must be positive".into()));
        }
        Ok(())
    }
}

fn check(s: &SimilarityMatrix) -> Result<()> {
    if s.rows != s.cols {
        return Err(Error::NonSquare { rows: s.rows, cols: s.cols });
    }
    if let Some(k) = s.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(k / s.cols, k % s.cols));
    }
    Ok(())
}

/// Hungarian method (shortest augmenting paths with potentials), O(n³).
/// Columns are scanned in index order so results are reproducible.
pub fn solve_exact(s: &SimilarityMatrix) -> Result<Permutation> {
    check(s)?;
    let n = s.rows;
    if n == 0 {
        return Ok(Permutation::identity(0));
    }
    let cost = |i: usize, j: usize| -s.get(i - 1, j - 1);
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0u32; n];
    for j in 1..=n {
        assign[p[j] - 1] = (j - 1) as u32;
    }
    Permutation::new(assign)
}

fn top_k(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    let k = k.min(row.len());
    // stable: ties keep the lower column first
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Greedy assignment over each row's top-`k` candidates in global score order.
/// Rows left without a candidate take the best remaining column, in row order.
pub fn greedy_top_k(s: &SimilarityMatrix, k: usize) -> Result<(Permutation, Vec<Vec<usize>>)> {
    check(s)?;
    let n = s.rows;
    let cands: Vec<Vec<usize>> = (0..n).map(|i| top_k(s.row(i), k)).collect();
    let mut pairs: Vec<(f64, usize, usize)> = cands
        .iter()
        .enumerate()
        .flat_map(|(i, cs)| cs.iter().map(move |&j| (s.get(i, j), i, j)))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut row_to = vec![usize::MAX; n];
    let mut col_taken = vec![false; n];
    for (_, i, j) in pairs {
        if row_to[i] == usize::MAX && !col_taken[j] {
            row_to[i] = j;
            col_taken[j] = true;
        }
    }
    for i in 0..n {
        if row_to[i] != usize::MAX {
            continue;
        }
        let mut best: Option<usize> = None;
        for j in (0..n).filter(|&j| !col_taken[j]) {
            if best.is_none_or(|b| s.get(i, j) > s.get(i, b)) {
                best = Some(j);
            }
        }
        let j = best.expect("a free column exists while a row is free");
        row_to[i] = j;
        col_taken[j] = true;
    }
    let perm = Permutation::new(row_to.into_iter().map(|j| j as u32).collect())?;
    Ok((perm, cands))
}

/// One pass of pairwise swaps inside the candidate neighbourhood, strictly improving only.
fn refine_swaps(s: &SimilarityMatrix, assign: &mut [u32], cands: &[Vec<usize>]) -> bool {
    let n = assign.len();
    let mut owner = vec![0usize; n];
    for (i, &j) in assign.iter().enumerate() {
        owner[j as usize] = i;
    }
    let mut improved = false;
    for i in 0..n {
        for &c in &cands[i] {
            let j = owner[c];
            if j == i {
                continue;
            }
            let (ci, cj) = (assign[i] as usize, assign[j] as usize);
            let before = s.get(i, ci) + s.get(j, cj);
            let after = s.get(i, cj) + s.get(j, ci);
            if after > before {
                assign[i] = cj as u32;
                assign[j] = ci as u32;
                owner[cj] = i;
                owner[ci] = j;
                improved = true;
            }
        }
    }
    improved
}

pub fn solve_screened(s: &SimilarityMatrix, k: usize, passes: usize) -> Result<Permutation> {
    let (perm, cands) = greedy_top_k(s, k)?;
    let mut assign = perm.as_slice().to_vec();
    for _ in 0..passes {
        if !refine_swaps(s, &mut assign, &cands) {
            break;
        }
    }
    Permutation::new(assign)
}

pub fn random_permutation(n: usize, seed: u64) -> Permutation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<u32> = (0..n as u32).collect();
    v.shuffle(&mut rng);
    Permutation::new(v).expect("shuffle is a bijection")
}

/// Solve under `cfg.policy`. `stream_seed` individualizes the random policy per (layer, type).
pub fn solve_assignment_seeded(s: &SimilarityMatrix, cfg: &AlignConfig, stream_seed: u64) -> Result<Permutation> {
    check(s)?;
    let n = s.rows;
    match cfg.policy {
        SolverPolicy::Identity => Ok(Permutation::identity(n)),
        SolverPolicy::Random => Ok(random_permutation(n, cfg.seed ^ stream_seed)),
        SolverPolicy::Exact => solve_exact(s),
        SolverPolicy::Screened => solve_screened(s, cfg.k_cand, cfg.refine_passes),
        SolverPolicy::Adaptive => {
            if n <= cfg.exact_threshold {
                solve_exact(s)
            } else {
                solve_screened(s, cfg.k_cand, cfg.refine_passes)
            }
        }
    }
}

pub fn solve_assignment(s: &SimilarityMatrix, cfg: &AlignConfig) -> Result<Permutation> {
    solve_assignment_seeded(s, cfg, 0)
}

#[cfg(test)]
mod tests {
    use super::super::similarity::SimilarityKind;
    use super::*;

    fn m(rows: Vec<Vec<f64>>) -> SimilarityMatrix {
        SimilarityMatrix::from_rows(rows, SimilarityKind::Weight)
    }

    #[test]
    fn identity_matrix_gives_identity() {
        let n = 6;
        let s = m((0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect());
        for policy in [SolverPolicy::Exact, SolverPolicy::Screened, SolverPolicy::Adaptive] {
            let cfg = AlignConfig { policy, ..Default::default() };
            assert!(solve_assignment(&s, &cfg).unwrap().is_identity());
        }
    }

    #[test]
    fn two_by_two_swap() {
        let s = m(vec![vec![0.1, 0.9], vec![0.9, 0.1]]);
        let p = solve_exact(&s).unwrap();
        assert_eq!(p.to_one_based(), vec![2, 1]);
    }

    #[test]
    fn rejects_bad_matrices() {
        let s = SimilarityMatrix { rows: 2, cols: 3, data: vec![0.0; 6], kind: SimilarityKind::Weight };
        assert!(matches!(solve_exact(&s), Err(Error::NonSquare { .. })));
        let s = m(vec![vec![0.0, f64::NAN], vec![0.0, 0.0]]);
        assert!(matches!(solve_exact(&s), Err(Error::NonFinite(0, 1))));
    }

    #[test]
    fn identity_policy_ignores_scores() {
        let s = m(vec![vec![0.1, 0.9], vec![0.9, 0.1]]);
        let cfg = AlignConfig { policy: SolverPolicy::Identity, ..Default::default() };
        assert!(solve_assignment(&s, &cfg).unwrap().is_identity());
    }

    #[test]
    fn random_policy_is_seeded() {
        let a = random_permutation(50, 3);
        assert_eq!(a, random_permutation(50, 3));
        assert_ne!(a, random_permutation(50, 4));
    }

    #[test]
    fn refinement_fixes_greedy_trap() {
        // greedy takes (0,0)=1.0 first and is forced into (1,1)=-1; swapping gives 0.9+0.9
        let s = m(vec![vec![1.0, 0.9], vec![0.9, -1.0]]);
        let (g, _) = greedy_top_k(&s, 2).unwrap();
        assert!(g.is_identity());
        let r = solve_screened(&s, 2, 1).unwrap();
        assert_eq!(r.to_one_based(), vec![2, 1]);
    }
}
