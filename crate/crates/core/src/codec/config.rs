use serde::{Deserialize, Serialize};

use crate::align::AlignConfig;
use crate::blocks::BlockTypeSpec;
use crate::entropy::EntropyFitConfig;
use crate::error::{Error, Result};
use crate::permcode::DEFAULT_THRESHOLD;
use crate::predictor::{PredictorConfig, TrainConfig};
use crate::quant::{StepRule, DEFAULT_GAMMA, Q_MAX_KEYFRAME, Q_MAX_RESIDUAL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantConfig {
    pub gamma: f64,
    pub q_max_residual: u32,
    pub q_max_keyframe: u32,
    /// Step rule for keyframe records and uncovered tensors.
    pub keyframe_rule: StepRule,
    /// Fixed residual step shared by every residual record (shared-table QInfo);
    /// `None` fits `γ·std` per group.
    pub residual_step: Option<f32>,
    pub learned_means: bool,
}

impl Default for QuantConfig {
    fn default() -> Self {
        QuantConfig {
            gamma: DEFAULT_GAMMA,
            q_max_residual: Q_MAX_RESIDUAL,
            q_max_keyframe: Q_MAX_KEYFRAME,
            keyframe_rule: StepRule::Range,
            residual_step: None,
            learned_means: false,
        }
    }
}

impl QuantConfig {
    pub fn residual_rule(&self) -> StepRule {
        match self.residual_step {
            Some(step) => StepRule::Fixed { step },
            None => StepRule::Gamma { gamma: self.gamma },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    pub no_alignment: bool,
    pub random_alignment: bool,
    /// Identity prediction from the previous decoded block.
    pub no_predictor: bool,
    /// Codes stored in `ceil(log2(2·q_max+1))` bits each.
    pub fixed_length_codes: bool,
    /// Permutations stored in `ceil(log2(B))` bits per entry.
    pub fixed_length_perms: bool,
    pub residual_energy_alignment: bool,
    /// Disable delta coding of Lehmer digits across layers.
    pub no_delta_perm_coding: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    pub keyframe_interval: u32,
    pub lambda: f64,
    pub seed: u64,
    pub align: AlignConfig,
    /// Fall back to the identity permutation when the estimated residual saving does not
    /// pay for the permutation side information.
    pub alignment_gating: bool,
    /// Training steps between alignment recomputations (residual-energy alignment only).
    pub recompute_period: usize,
    pub predictor: PredictorConfig,
    pub train: TrainConfig,
    pub entropy: EntropyFitConfig,
    pub quant: QuantConfig,
    pub perm_threshold: u32,
    pub ablation: Ablations,
    pub block_types: Vec<BlockTypeSpec>,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            keyframe_interval: 4,
            lambda: 0.01,
            seed: 0,
            align: AlignConfig::default(),
            alignment_gating: true,
            recompute_period: 500,
            predictor: PredictorConfig::default(),
            train: TrainConfig::default(),
            entropy: EntropyFitConfig::default(),
            quant: QuantConfig::default(),
            perm_threshold: DEFAULT_THRESHOLD,
            ablation: Ablations::default(),
            block_types: Vec::new(),
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.keyframe_interval == 0 {
            return Err(Error::InvalidConfig("keyframe interval must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda {} must be finite and non-negative", self.lambda)));
        }
        if self.ablation.no_alignment && self.ablation.random_alignment {
            return Err(Error::InvalidConfig("no_alignment and random_alignment are exclusive".into()));
        }
        let q = &self.quant;
        if q.q_max_residual == 0 || q.q_max_keyframe == 0 || q.q_max_residual > 32767 || q.q_max_keyframe > 32767 {
            return Err(Error::InvalidConfig("q_max must lie in 1..=32767".into()));
        }
        if !(q.gamma > 0.0) {
            return Err(Error::InvalidConfig(format!("gamma {} must be positive", q.gamma)));
        }
        if let Some(s) = q.residual_step {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidConfig(format!("residual step {s} must be positive")));
            }
        }
        if self.perm_threshold == 0 || self.perm_threshold > 4096 {
            return Err(Error::InvalidConfig("perm_threshold must lie in 1..=4096".into()));
        }
        if self.recompute_period == 0 {
            return Err(Error::InvalidConfig("recompute_period must be positive".into()));
        }
        if self.entropy.hidden == 0 || self.entropy.embed_dim == 0 {
            return Err(Error::InvalidConfig("entropy model dimensions must be positive".into()));
        }
        self.align.validate()?;
        self.predictor.validate()
    }
}
