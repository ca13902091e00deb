//! Exact per-component bit accounting of a bitstream.

use serde::Serialize;

use crate::codec::decoder::{record_table, Stream};
use crate::codec::format::{read_record, TRAILER_ENTRY_LEN, TRAILER_FOOTER_LEN};
use crate::codec::wire::Reader;
use crate::error::Result;

pub const COMPONENT_NAMES: [&str; 5] =
    ["Keyframe codes", "Residual codes", "Permutation side-info", "Quantizer side-info", "Other overhead"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct RateBreakdown {
    pub keyframe_code_bits: u64,
    pub residual_code_bits: u64,
    pub perm_bits: u64,
    pub qparam_bits: u64,
    /// Headers, serialized models, record framing and the trailer.
    pub meta_bits: u64,
    pub meta_header_bits: u64,
    pub meta_model_bits: u64,
    pub meta_framing_bits: u64,
    pub theta_bits: u64,
    pub psi_bits: u64,
    pub eta_bits: u64,
    pub total_bits: u64,
    pub param_count: u64,
}

impl RateBreakdown {
    /// A breakdown from the five top-level components alone (no sub-lines, no parameters).
    pub fn from_components(keyframe: u64, residual: u64, perm: u64, qparam: u64, meta: u64) -> Self {
        RateBreakdown {
            keyframe_code_bits: keyframe,
            residual_code_bits: residual,
            perm_bits: perm,
            qparam_bits: qparam,
            meta_bits: meta,
            total_bits: keyframe + residual + perm + qparam + meta,
            ..Default::default()
        }
    }

    pub fn code_bits(&self) -> u64 {
        self.keyframe_code_bits + self.residual_code_bits
    }

    pub fn components(&self) -> [(&'static str, u64); 5] {
        [
            (COMPONENT_NAMES[0], self.keyframe_code_bits),
            (COMPONENT_NAMES[1], self.residual_code_bits),
            (COMPONENT_NAMES[2], self.perm_bits),
            (COMPONENT_NAMES[3], self.qparam_bits),
            (COMPONENT_NAMES[4], self.meta_bits),
        ]
    }

    /// Percent of the total per component; all zero for an empty breakdown.
    pub fn fractions(&self) -> [f64; 5] {
        let t = self.total_bits as f64;
        self.components().map(|(_, b)| if t > 0.0 { 100.0 * b as f64 / t } else { 0.0 })
    }

    pub fn bits_per_param(&self) -> f64 {
        if self.param_count == 0 {
            0.0
        } else {
            self.total_bits as f64 / self.param_count as f64
        }
    }

    /// Components sum to the total; meta sub-lines, when present, sum to meta.
    pub fn is_consistent(&self) -> bool {
        let sub = self.meta_header_bits + self.meta_model_bits + self.meta_framing_bits;
        self.components().iter().map(|(_, b)| b).sum::<u64>() == self.total_bits
            && (sub == 0 || sub == self.meta_bits)
            && self.theta_bits + self.psi_bits + self.eta_bits <= self.meta_model_bits
    }

    /// Plain-text table: component, bits, share of total.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let fr = self.fractions();
        for ((name, bits), f) in self.components().iter().zip(fr) {
            s.push_str(&format!("{name:<24}{bits:>16}  {f:>5.1}%\n"));
        }
        if self.meta_bits > 0 && self.meta_header_bits + self.meta_model_bits + self.meta_framing_bits == self.meta_bits {
            s.push_str(&format!("  {:<22}{:>16}\n", "header", self.meta_header_bits));
            s.push_str(&format!(
                "  {:<22}{:>16}  (θ {}, ψ {}, η {})\n",
                "models", self.meta_model_bits, self.theta_bits, self.psi_bits, self.eta_bits
            ));
            s.push_str(&format!("  {:<22}{:>16}\n", "framing + trailer", self.meta_framing_bits));
        }
        s.push_str(&format!("{:<24}{:>16}  100.0%\n", "Total", self.total_bits));
        if self.param_count > 0 {
            s.push_str(&format!("{:<24}{:>16.4}\n", "bits/param", self.bits_per_param()));
        }
        s
    }
}

/// Attribute every byte of `bytes` to exactly one component.
pub fn rate_report(bytes: &[u8]) -> Result<RateBreakdown> {
    let s = Stream::open(bytes)?;
    let entries = record_table(&s)?;
    let l = &s.layout;
    let bits = |n: usize| 8 * n as u64;
    let mut rb = RateBreakdown {
        meta_header_bits: bits(l.fixed.len() + l.tail.len()),
        theta_bits: bits(l.theta.len()),
        psi_bits: bits(l.psi.len()),
        eta_bits: bits(l.eta.len()),
        qparam_bits: bits(l.shared_q.len()),
        meta_framing_bits: bits(entries.len() * TRAILER_ENTRY_LEN + TRAILER_FOOTER_LEN),
        param_count: s.plan.param_count(),
        ..Default::default()
    };
    rb.meta_model_bits = rb.theta_bits + rb.psi_bits + rb.eta_bits;
    let ids = s.plan.record_ids();
    let modes = s.plan.layers.iter().flat_map(|lp| lp.blocks.iter().map(|b| b.keyframe).chain(lp.tensors.iter().map(|_| true)));
    let mut r = Reader::new(bytes);
    r.bytes(l.end())?;
    for (id, keyframe) in ids.into_iter().zip(modes) {
        let f = read_record(&mut r, id, keyframe).map_err(|e| e.at_record(id))?;
        let code = bits(f.codes.len());
        if f.keyframe {
            rb.keyframe_code_bits += code;
        } else {
            rb.residual_code_bits += code;
        }
        rb.perm_bits += bits(f.perm.len());
        rb.qparam_bits += bits(f.qinfo_bytes);
        rb.meta_framing_bits += bits(f.total_bytes - f.perm.len() - f.codes.len() - f.qinfo_bytes);
    }
    rb.meta_bits = rb.meta_header_bits + rb.meta_model_bits + rb.meta_framing_bits;
    rb.total_bits = rb.code_bits() + rb.perm_bits + rb.qparam_bits + rb.meta_bits;
    if rb.total_bits != bits(bytes.len()) {
        return Err(crate::error::Error::corrupt("records do not tile the region between header and trailer"));
    }
    Ok(rb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_fractions() {
        let rb = RateBreakdown::from_components(620_000_000, 1_550_000_000, 130_000_000, 60_000_000, 40_000_000);
        assert_eq!(rb.total_bits, 2_400_000_000);
        let f: Vec<String> = rb.fractions().iter().map(|v| format!("{v:.1}")).collect();
        assert_eq!(f, ["25.8", "64.6", "5.4", "2.5", "1.7"]);
        assert!(rb.is_consistent());
    }

    #[test]
    fn degenerate_stream_is_all_meta() {
        let rb = RateBreakdown::from_components(0, 0, 0, 0, 4096);
        assert_eq!(rb.fractions(), [0.0, 0.0, 0.0, 0.0, 100.0]);
    }
}
