use serde::{Deserialize, Serialize};

use crate::blocks::BlockSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    Weight,
    Activation,
    Hybrid,
    NegResidualEnergy,
}

/// Dense square score matrix; larger is better. Row = reference index, column = candidate index.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub kind: SimilarityKind,
}

impl SimilarityMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>, kind: SimilarityKind) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        SimilarityMatrix { rows: r, cols: c, data: rows.concat(), kind }
    }

    pub fn n(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Total matched score of an assignment `row i -> column assign[i]`.
    pub fn score(&self, assign: &[u32]) -> f64 {
        assign.iter().enumerate().map(|(i, &j)| self.get(i, j as usize)).sum()
    }
}

/// Per-block mean activation vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSummary {
    pub means: Vec<Vec<f32>>,
}

fn dot_norms(a: &[f32], b: &[f32]) -> (f64, f64, f64) {
    let (mut d, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        d += x * y;
        na += x * x;
        nb += y * y;
    }
    (d, na, nb)
}

/// Cosine similarity; zero-norm vectors score 0 against everything.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (d, na, nb) = dot_norms(a, b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (d / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

fn cosine_matrix(refs: &[Vec<f32>], cands: &[Vec<f32>], kind: SimilarityKind) -> Result<SimilarityMatrix> {
    if refs.len() != cands.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} blocks", refs.len(), cands.len())));
    }
    let dim = refs.first().map_or(0, Vec::len);
    if refs.iter().chain(cands).any(|v| v.len() != dim) {
        return Err(Error::ShapeMismatch("blocks differ in length".into()));
    }
    let norms = |vs: &[Vec<f32>]| -> Vec<f64> {
        vs.iter().map(|v| v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()).collect()
    };
    let (rn, cn) = (norms(refs), norms(cands));
    let n = refs.len();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if rn[i] == 0.0 || cn[j] == 0.0 {
                continue;
            }
            let d: f64 = refs[i].iter().zip(&cands[j]).map(|(&x, &y)| x as f64 * y as f64).sum();
            data[i * n + j] = (d / (rn[i] * cn[j])).clamp(-1.0, 1.0);
        }
    }
    Ok(SimilarityMatrix { rows: n, cols: n, data, kind })
}

pub fn weight_similarity(reference: &BlockSet, cand: &BlockSet) -> Result<SimilarityMatrix> {
    cosine_matrix(&reference.blocks, &cand.blocks, SimilarityKind::Weight)
}

pub fn activation_similarity(reference: &ActivationSummary, cand: &ActivationSummary) -> Result<SimilarityMatrix> {
    cosine_matrix(&reference.means, &cand.means, SimilarityKind::Activation)
}

/// `α·s_w + (1−α)·s_a`, elementwise.
pub fn hybrid_similarity(sw: &SimilarityMatrix, sa: &SimilarityMatrix, alpha: f64) -> Result<SimilarityMatrix> {
    if sw.rows != sa.rows || sw.cols != sa.cols {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            sw.rows, sw.cols, sa.rows, sa.cols
        )));
    }
    // endpoints reproduce the pure matrices bit-exactly
    let data = if alpha == 1.0 {
        sw.data.clone()
    } else if alpha == 0.0 {
        sa.data.clone()
    } else {
        sw.data.iter().zip(&sa.data).map(|(w, a)| alpha * w + (1.0 - alpha) * a).collect()
    };
    Ok(SimilarityMatrix { rows: sw.rows, cols: sw.cols, data, kind: SimilarityKind::Hybrid })
}

/// Entry (i, j) = −‖cand_j − predicted_i‖².
pub fn residual_energy_costs(cand: &BlockSet, predicted: &BlockSet) -> Result<SimilarityMatrix> {
    let n = cand.len();
    if predicted.len() != n {
        return Err(Error::ShapeMismatch(format!("{} vs {} blocks", n, predicted.len())));
    }
    let dim = cand.block_len();
    if cand.blocks.iter().chain(&predicted.blocks).any(|b| b.len() != dim) {
        return Err(Error::ShapeMismatch("blocks differ in length".into()));
    }
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let e: f64 = predicted.blocks[i]
                .iter()
                .zip(&cand.blocks[j])
                .map(|(&p, &c)| {
                    let d = c as f64 - p as f64;
                    d * d
                })
                .sum();
            data[i * n + j] = -e;
        }
    }
    Ok(SimilarityMatrix { rows: n, cols: n, data, kind: SimilarityKind::NegResidualEnergy })
}
