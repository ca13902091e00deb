use super::rangecoder::Cdf;
use crate::detmath;
use crate::error::{Error, Result};

/// Probability floor applied before renormalization (one unit of the 16-bit table).
pub const P_MIN: f64 = 1.0 / 65536.0;
pub const BETA_FLOOR: f64 = 1e-3;

/// Mass of the logistic(α, β) distribution on `[lo, hi]`, computed on the side of
/// the median that avoids cancellation. `None` bounds are ±∞.
fn logistic_mass(lo: Option<f64>, hi: Option<f64>, alpha: f64, beta: f64) -> f64 {
    let z = |x: f64| (x - alpha) / beta;
    match (lo, hi) {
        (None, None) => 1.0,
        (None, Some(h)) => detmath::sigmoid(z(h)),
        (Some(l), None) => detmath::sigmoid(-z(l)),
        (Some(l), Some(h)) => {
            let (zl, zh) = (z(l), z(h));
            if zl > 0.0 {
                detmath::sigmoid(-zl) - detmath::sigmoid(-zh)
            } else {
                detmath::sigmoid(zh) - detmath::sigmoid(zl)
            }
        }
    }
}

/// Unfloored discretized-logistic mass of code `c` on `[-q_max, q_max]`, with the
/// boundary bins absorbing the tails.
pub fn raw_mass(c: i64, alpha: f64, beta: f64, q_max: u32) -> f64 {
    let q = q_max as i64;
    let lo = (c > -q).then_some(c as f64 - 0.5);
    let hi = (c < q).then_some(c as f64 + 0.5);
    logistic_mass(lo, hi, alpha, beta)
}

/// Full floored, renormalized pmf over `[-q_max, q_max]` (index `c + q_max`).
pub fn pmf_table(alpha: f64, beta: f64, q_max: u32) -> Vec<f64> {
    let beta = beta.max(BETA_FLOOR);
    let q = q_max as i64;
    let mut p: Vec<f64> = (-q..=q).map(|c| raw_mass(c, alpha, beta, q_max).max(P_MIN)).collect();
    let total: f64 = p.iter().sum();
    for v in &mut p {
        *v /= total;
    }
    p
}

pub fn logistic_pmf(c: i64, alpha: f64, beta: f64, q_max: u32) -> Result<f64> {
    if c.unsigned_abs() > q_max as u64 {
        return Err(Error::OutOfSupport(c));
    }
    Ok(pmf_table(alpha, beta, q_max)[(c + q_max as i64) as usize])
}

/// 16-bit coding table for the discretized logistic.
pub fn logistic_cdf(alpha: f64, beta: f64, q_max: u32) -> Result<Cdf> {
    Cdf::from_probs(&pmf_table(alpha, beta, q_max))
}
