//! Run configuration: a JSON document with every field optional, plus
//! dotted `key=value` overrides applied before validation.

use std::fs;
use std::path::{Path, PathBuf};

use gad_core::attribution::Method;
use gad_core::eval::{SelectionMode, SensitivityOutput};
use gad_core::gad::{AlphaPair, AlphaSchedule};
use gad_core::zoo::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Directory of `<class>/<image>` PGM/PPM files; synthetic data when absent.
    pub path: Option<PathBuf>,
    pub classes: usize,
    pub channels: usize,
    pub images_per_class: usize,
    pub noise_std: f32,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            path: None,
            classes: 2,
            channels: 1,
            images_per_class: 80,
            noise_std: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PairingConfig {
    TwoClass {
        k: usize,
        l: usize,
    },
    OneVsAll {
        k: usize,
    },
    /// Clusters are derived from the trained classifier's mean logits.
    Half,
}

impl Default for PairingConfig {
    fn default() -> Self {
        PairingConfig::TwoClass { k: 0, l: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds data generation, the train/eval split and weight initialization.
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub classifier: TrainConfig,
    pub support: TrainConfig,
    pub pairing: PairingConfig,
    pub alphas: Vec<AlphaPair>,
    pub methods: Vec<Method>,
    pub selection: SelectionMode,
    pub sensitivity: SensitivityOutput,
    pub ig_steps: usize,
    /// Overlays rendered for this many least-activated eval images per class.
    pub overlays_per_class: usize,
    /// Images explained by `explain`; the whole eval split when empty.
    pub explain_ids: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            dataset: DatasetConfig::default(),
            classifier: TrainConfig::default(),
            support: TrainConfig::default(),
            pairing: PairingConfig::default(),
            alphas: AlphaSchedule::default().pairs().to_vec(),
            methods: Method::ALL.to_vec(),
            selection: SelectionMode::default(),
            sensitivity: SensitivityOutput::default(),
            ig_steps: 32,
            overlays_per_class: 3,
            explain_ids: Vec::new(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (or starts from defaults) and applies `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut doc = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig =
            serde_json::from_value(doc).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.classifier
            .validate()
            .map_err(|e| CliError::Config(format!("classifier: {e}")))?;
        self.support
            .validate()
            .map_err(|e| CliError::Config(format!("support: {e}")))?;
        self.schedule()?;
        self.selection
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        if self.ig_steps == 0 {
            return bad("ig_steps must be positive".into());
        }
        if self.dataset.path.is_none() && !matches!(self.dataset.classes, 2 | 4) {
            return bad(format!(
                "synthetic data has 2 or 4 classes, got {}",
                self.dataset.classes
            ));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<AlphaSchedule, CliError> {
        AlphaSchedule::new(self.alphas.clone())
            .map_err(|e| CliError::Config(format!("alphas: {e}")))
    }
}

/// `a.b.c=value`, where `value` is parsed as JSON and falls back to a plain
/// string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(CliError::Config(format!("empty key segment in {key:?}")));
        }
        let obj = match node {
            Value::Object(m) => m,
            _ => {
                return Err(CliError::Config(format!(
                    "{key:?} descends into a non-object"
                )))
            }
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_protocol() {
        let c = RunConfig::load(None, &[]).unwrap();
        assert_eq!(c.support.learning_rate, 4e-5);
        assert_eq!(c.support.epochs, 10);
        let alphas: Vec<f32> = c.alphas.iter().map(|a| a.k).collect();
        assert_eq!(alphas, vec![0.0, 2.0, 4.0, 6.0, 8.0]);
        assert_eq!(c.methods.len(), 5);
    }

    #[test]
    fn overrides_nest() {
        let c = RunConfig::load(
            None,
            &[
                "classifier.epochs=0".into(),
                "pairing={\"kind\":\"one_vs_all\",\"k\":2}".into(),
                "dataset.classes=4".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.classifier.epochs, 0);
        assert_eq!(c.pairing, PairingConfig::OneVsAll { k: 2 });
        let c = RunConfig::load(None, &["pairing.kind=half".into()]).unwrap();
        assert_eq!(c.pairing, PairingConfig::Half);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            RunConfig::load(None, &["colour=1".into()]),
            Err(CliError::Config(_))
        ));
        assert!(RunConfig::load(None, &["classifier.momentum=1".into()]).is_err());
        assert!(RunConfig::load(None, &["noequals".into()]).is_err());
        assert!(RunConfig::load(
            None,
            &["alphas=[{\"k\":2,\"l\":2},{\"k\":1,\"l\":1}]".into()]
        )
        .is_err());
    }
}
