//! Per-group scalar quantization of residuals and keyframe values.
//!
//! Groups are contiguous runs of `group_len` elements in the flattened record
//! (one group per block for block types, one per leading-axis row otherwise).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STEP_FLOOR: f32 = 1e-8;
pub const Q_MAX_RESIDUAL: u32 = 127;
pub const Q_MAX_KEYFRAME: u32 = 255;
pub const DEFAULT_GAMMA: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerParams {
    pub step: Vec<f32>,
    /// Per-group means; `None` is the symmetric quantizer (m = 0).
    pub mean: Option<Vec<f32>>,
    pub group_len: usize,
    pub q_max: u32,
}

/// How step sizes are chosen for a record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StepRule {
    /// `s = γ·std` of the group.
    Gamma { gamma: f64 },
    /// `s = max|x| / q_max` of the group (no clipping).
    Range,
    /// The same step for every group.
    Fixed { step: f32 },
}

impl QuantizerParams {
    pub fn num_groups(&self) -> usize {
        self.step.len()
    }

    pub fn num_elements(&self) -> usize {
        self.step.len() * self.group_len
    }

    #[inline]
    pub fn mean_of(&self, g: usize) -> f32 {
        self.mean.as_ref().map_or(0.0, |m| m[g])
    }

    pub fn validate(&self) -> Result<()> {
        if self.q_max == 0 {
            return Err(Error::InvalidConfig("q_max must be at least 1".into()));
        }
        if self.group_len == 0 {
            return Err(Error::EmptyGroup(0));
        }
        if let Some(g) = self.step.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::corrupt(format!("step of group {g} is not positive")));
        }
        if let Some(m) = &self.mean {
            if m.len() != self.step.len() || m.iter().any(|v| !v.is_finite()) {
                return Err(Error::corrupt("quantizer means malformed"));
            }
        }
        Ok(())
    }

    /// Exact reconstruction value of code `c` in group `g`.
    #[inline]
    pub fn reconstruct(&self, c: i32, g: usize) -> f64 {
        self.step[g] as f64 * c as f64 + self.mean_of(g) as f64
    }
}

fn check_groups(values: &[f32], group_len: usize) -> Result<usize> {
    if group_len == 0 || values.is_empty() {
        return Err(Error::EmptyGroup(0));
    }
    if !values.len().is_multiple_of(group_len) {
        return Err(Error::LengthMismatch { expected: values.len().next_multiple_of(group_len), got: values.len() });
    }
    Ok(values.len() / group_len)
}

fn group_mean_std(vals: &[f32]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = vals.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `s = γ·std(group)` floored at 1e−8; means are kept only when `learned_means`.
pub fn init_quantizer(values: &[f32], group_len: usize, gamma: f64, q_max: u32, learned_means: bool) -> Result<QuantizerParams> {
    init_with_rule(values, group_len, StepRule::Gamma { gamma }, q_max, learned_means)
}

pub fn init_with_rule(
    values: &[f32],
    group_len: usize,
    rule: StepRule,
    q_max: u32,
    learned_means: bool,
) -> Result<QuantizerParams> {
    let groups = check_groups(values, group_len)?;
    if q_max == 0 {
        return Err(Error::InvalidConfig("q_max must be at least 1".into()));
    }
    let mut step = Vec::with_capacity(groups);
    let mut mean = Vec::with_capacity(groups);
    for vals in values.chunks(group_len) {
        let (mu, sd) = group_mean_std(vals);
        let m = if learned_means { mu } else { 0.0 };
        let s = match rule {
            StepRule::Gamma { gamma } => {
                if !(gamma > 0.0) {
                    return Err(Error::InvalidConfig(format!("gamma {gamma} must be positive")));
                }
                gamma * sd
            }
            StepRule::Range => {
                let amax = vals.iter().map(|&v| (v as f64 - m).abs()).fold(0.0, f64::max);
                amax / q_max as f64
            }
            StepRule::Fixed { step } => step as f64,
        };
        step.push((s as f32).max(STEP_FLOOR));
        mean.push(m as f32);
    }
    Ok(QuantizerParams { step, mean: learned_means.then_some(mean), group_len, q_max })
}

/// Codes `clamp(round((r − m)/s), ±q_max)` with ties away from zero, plus the number
/// of clipped elements.
pub fn quantize(r: &[f32], q: &QuantizerParams) -> Result<(Vec<i32>, usize)> {
    if r.len() != q.num_elements() {
        return Err(Error::LengthMismatch { expected: q.num_elements(), got: r.len() });
    }
    let qm = q.q_max as f64;
    let mut clipped = 0;
    let codes = r
        .chunks(q.group_len)
        .enumerate()
        .flat_map(|(g, vals)| {
            let s = q.step[g] as f64;
            let m = q.mean_of(g) as f64;
            vals.iter().map(move |&v| ((v as f64 - m) / s).round())
        })
        .map(|c| {
            if c.abs() > qm {
                clipped += 1;
            }
            c.clamp(-qm, qm) as i32
        })
        .collect();
    Ok((codes, clipped))
}

pub fn dequantize(c: &[i32], q: &QuantizerParams) -> Result<Vec<f32>> {
    if c.len() != q.num_elements() {
        return Err(Error::LengthMismatch { expected: q.num_elements(), got: c.len() });
    }
    let mut out = Vec::with_capacity(c.len());
    for (g, codes) in c.chunks(q.group_len).enumerate() {
        for &code in codes {
            if code.unsigned_abs() > q.q_max {
                return Err(Error::CodeOutOfRange { code, q_max: q.q_max });
            }
            out.push(q.reconstruct(code, g) as f32);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(s: f32, q_max: u32) -> QuantizerParams {
        QuantizerParams { step: vec![s], mean: None, group_len: 1, q_max }
    }

    #[test]
    fn init_examples() {
        let q = init_quantizer(&[0.0; 4], 4, 0.8, 127, true).unwrap();
        assert_eq!(q.step, vec![1e-8]);
        assert_eq!(q.mean, Some(vec![0.0]));
        let q = init_quantizer(&[-1.0, 1.0], 2, 0.8, 127, false).unwrap();
        assert_eq!(q.step, vec![0.8]);
        assert!(matches!(init_quantizer(&[], 2, 0.8, 127, false), Err(Error::EmptyGroup(_))));
    }

    #[test]
    fn quantize_examples() {
        let q = single(0.5, 127);
        assert_eq!(quantize(&[0.74], &q).unwrap().0, vec![1]);
        assert_eq!(quantize(&[0.0], &q).unwrap().0, vec![0]);
        assert_eq!(quantize(&[1e6], &q).unwrap(), (vec![127], 1));
        assert_eq!(quantize(&[0.75], &q).unwrap().0, vec![2]);
        assert_eq!(quantize(&[-0.75], &q).unwrap().0, vec![-2]);
        let r = dequantize(&[1], &q).unwrap();
        assert_eq!(r, vec![0.5]);
        assert!(matches!(dequantize(&[128], &q), Err(Error::CodeOutOfRange { code: 128, .. })));
    }

    #[test]
    fn range_rule_never_clips() {
        let v = [0.3f32, -2.0, 1.7, 0.0];
        let q = init_with_rule(&v, 4, StepRule::Range, 255, false).unwrap();
        let (c, clipped) = quantize(&v, &q).unwrap();
        assert_eq!(clipped, 0);
        assert_eq!(c[1], -255);
    }

    #[test]
    fn fixed_point_over_code_range() {
        let q = QuantizerParams { step: vec![0.0137], mean: Some(vec![-0.31]), group_len: 1, q_max: 255 };
        for c in -255..=255 {
            let r = dequantize(&[c], &q).unwrap();
            assert_eq!(quantize(&r, &q).unwrap().0, vec![c]);
        }
    }
}
