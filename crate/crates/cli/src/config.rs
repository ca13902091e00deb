use std::path::Path;

use mcwc_core::blocks::BlockTypeSpec;
use mcwc_core::codec::CodecConfig;
use mcwc_core::diagnostics::DeploymentScenario;
use serde::{Deserialize, Serialize};

/// λ values to encode at; empty uses `codec.lambda` alone.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
    /// Total bits/param budget for picking a sweep point.
    pub target_bpp: Option<f64>,
}

/// The whole configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Document {
    pub codec: CodecConfig,
    pub sweep: SweepConfig,
    pub scenario: DeploymentScenario,
}

impl Default for Document {
    fn default() -> Self {
        Document { codec: CodecConfig::default(), sweep: SweepConfig::default(), scenario: DeploymentScenario::pythia_1_4b() }
    }
}

impl Document {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SpecFile {
    List(Vec<BlockTypeSpec>),
    Object { block_types: Vec<BlockTypeSpec> },
}

/// Block types from a JSON spec: a list of types, or an object with a `block_types` list.
pub fn load_block_spec(path: &Path) -> Result<Vec<BlockTypeSpec>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    match serde_json::from_str::<SpecFile>(&text).map_err(|e| format!("{}: {e}", path.display()))? {
        SpecFile::List(v) | SpecFile::Object { block_types: v } => Ok(v),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_document_round_trips_through_toml() {
        let d = Document::default();
        let back: Document = toml::from_str(&d.to_toml()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn partial_document_fills_defaults() {
        let d: Document = toml::from_str("[codec]\nkeyframe_interval = 8\n[codec.ablation]\nno_predictor = true\n").unwrap();
        assert_eq!(d.codec.keyframe_interval, 8);
        assert!(d.codec.ablation.no_predictor);
        assert_eq!(d.codec.lambda, CodecConfig::default().lambda);
        assert!(toml::from_str::<Document>("[codec]\nbogus = 1\n").is_err());
    }
}
