//! Experiment configuration: a strict JSON schema with defaults.

use serde::{Deserialize, Serialize};
use tunnelqmc::qmc::EscapeConfig;
use tunnelqmc::{Boundary, CostFunction, ModelSpec};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub n_spins: usize,
    pub beta: f64,
    pub gamma: f64,
    /// ascending coefficients of `g(m)`
    pub g_poly: Vec<f64>,
}

impl Default for ModelBlock {
    fn default() -> Self {
        Self { n_spins: 16, beta: 4.0, gamma: 0.5, g_poly: vec![0.0, 0.0, 0.0, 1.0] }
    }
}

impl ModelBlock {
    pub fn spec(&self) -> Result<ModelSpec, tunnelqmc::Error> {
        ModelSpec::new(self.n_spins, self.beta, self.gamma, CostFunction::polynomial(self.g_poly.clone())?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QmcBlock {
    pub replicas: usize,
    pub boundary: Boundary,
    pub seeds: u64,
    pub budget: u64,
    pub base_seed: u64,
    pub threshold: Option<f64>,
    pub start_well: Option<f64>,
    pub min_uncensored: usize,
    pub bootstrap: usize,
}

impl Default for QmcBlock {
    fn default() -> Self {
        Self {
            replicas: 64,
            boundary: Boundary::Open,
            seeds: 40,
            budget: 1_000_000,
            base_seed: 1,
            threshold: None,
            start_well: None,
            min_uncensored: 40,
            bootstrap: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepBlock {
    pub betas: Vec<f64>,
    pub n_values: Vec<usize>,
    /// replica counts per β; empty means `16 β`
    pub replicas: Vec<usize>,
}

impl Default for SweepBlock {
    fn default() -> Self {
        Self { betas: vec![2.0, 4.0, 8.0], n_values: vec![8, 10, 12, 14, 16], replicas: Vec::new() }
    }
}

impl SweepBlock {
    pub fn replicas_for(&self, idx: usize, beta: f64) -> usize {
        self.replicas.get(idx).copied().unwrap_or(((16.0 * beta).round() as usize).max(4))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub manifest_version: u32,
    #[serde(default)]
    pub model: ModelBlock,
    #[serde(default)]
    pub qmc: QmcBlock,
    #[serde(default)]
    pub sweep: SweepBlock,
    #[serde(default)]
    pub output_dir: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            manifest_version: MANIFEST_VERSION,
            model: ModelBlock::default(),
            qmc: QmcBlock::default(),
            sweep: SweepBlock::default(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let c: Self = serde_json::from_str(text).map_err(|e| format!("config: {e}"))?;
        if c.manifest_version != MANIFEST_VERSION {
            return Err(format!("config: manifest_version {} unsupported (expected {MANIFEST_VERSION})", c.manifest_version));
        }
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn escape_config(&self, boundary: Boundary, n_values: Vec<usize>) -> EscapeConfig {
        let q = &self.qmc;
        EscapeConfig {
            replicas: q.replicas,
            boundary,
            n_values,
            seeds: q.seeds,
            budget: q.budget,
            base_seed: q.base_seed,
            threshold: q.threshold,
            start_well: q.start_well,
            min_uncensored: q.min_uncensored,
            bootstrap: q.bootstrap,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        let mut c = ExperimentConfig::default();
        c.model.beta = 0.1 + 0.2;
        c.model.g_poly = vec![1e-300, -0.3, std::f64::consts::PI];
        c.qmc.threshold = Some(-0.06669972181358041);
        c.sweep.replicas = vec![32, 64];
        c.output_dir = Some("runs/a".into());
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"manifest_version":1,"modle":{}}"#).is_err());
        let t = r#"{"manifest_version":1,"qmc":{"replicas":8,"seed":3}}"#;
        assert!(ExperimentConfig::from_json(t).is_err());
    }

    #[test]
    fn defaults_fill_missing_blocks() {
        let c = ExperimentConfig::from_json(r#"{"manifest_version":1}"#).unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert!(ExperimentConfig::from_json(r#"{"manifest_version":7}"#).is_err());
    }
}
