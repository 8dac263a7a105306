//! `key=value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are errors.
//! Defaults follow [`PipelineConfig::default`].

use std::path::Path;

use kgeir_core::cdm::ModelKind;
use kgeir_core::embeddings::EmbeddingConfig;
use kgeir_core::graph::{RelationConstraint, RelationKind};
use kgeir_core::harness::PipelineConfig;
use kgeir_core::representativeness::EcovVariant;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub pipeline: PipelineConfig,
}

pub const KEYS: &[&str] = &[
    "attention_embed_size",
    "hidden1",
    "hidden2",
    "clip_k",
    "history_window",
    "edge_values",
    "use_exercise_factor",
    "use_student_factor",
    "monotone",
    "embedding_dim",
    "gcn_layers",
    "delta_a",
    "learning_rate",
    "epochs",
    "dropout",
    "batch_size",
    "seed",
    "finetune_epochs",
    "heldout_fraction",
    "mirt_dim",
    "phi",
    "cdm",
    "steps",
    "top_k",
    "alpha1",
    "alpha2",
    "alpha3",
    "update_steps",
    "update_lr",
    "ecov",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("{key}: cannot parse {value:?}"))
}

fn parse_bool(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("{key}: expected true or false, found {value:?}")),
    }
}

/// A preset name (`all`, `prerequisite`, `application`, `hierarchy`) or a `|`-separated
/// list of relation kinds.
pub fn parse_phi(value: &str) -> std::result::Result<RelationConstraint, String> {
    if let Some(preset) = RelationConstraint::preset(value) {
        return Ok(preset);
    }
    let kinds = value
        .split('|')
        .map(|k| k.trim().parse::<RelationKind>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    RelationConstraint::only(&kinds).map_err(|e| e.to_string())
}

fn render_phi(phi: &RelationConstraint) -> String {
    phi.kinds().iter().map(|k| k.as_str()).collect::<Vec<_>>().join("|")
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config { line: i + 1, reason: format!("expected key=value, found {line:?}") })?;
            cfg.set(key.trim(), value.trim()).map_err(|reason| Error::Config { line: i + 1, reason })?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let p = &mut self.pipeline;
        match key {
            "attention_embed_size" => p.nacd.attention_dim = parse(key, value)?,
            "hidden1" => p.nacd.hidden1 = parse(key, value)?,
            "hidden2" => p.nacd.hidden2 = parse(key, value)?,
            "clip_k" => p.nacd.clip_k = parse(key, value)?,
            "history_window" => p.nacd.history_window = parse(key, value)?,
            "edge_values" => p.nacd.edge_values = parse_bool(key, value)?,
            "use_exercise_factor" => p.nacd.use_exercise_factor = parse_bool(key, value)?,
            "use_student_factor" => p.nacd.use_student_factor = parse_bool(key, value)?,
            "monotone" => p.nacd.monotone = parse_bool(key, value)?,
            "embedding_dim" => {
                let dim: usize = parse(key, value)?;
                p.nacd.embeddings = match (dim, p.nacd.embeddings) {
                    (0, _) => None,
                    (dim, Some(e)) => Some(EmbeddingConfig { dim, ..e }),
                    (dim, None) => Some(EmbeddingConfig { dim, ..EmbeddingConfig::default() }),
                }
            }
            "gcn_layers" | "delta_a" => {
                let mut e = p.nacd.embeddings.unwrap_or_default();
                if key == "gcn_layers" {
                    e.layers = parse(key, value)?;
                } else {
                    e.delta_a = parse(key, value)?;
                }
                if p.nacd.embeddings.is_some() {
                    p.nacd.embeddings = Some(e);
                }
            }
            "learning_rate" => p.train.learning_rate = parse(key, value)?,
            "epochs" => p.train.epochs = parse(key, value)?,
            "dropout" => p.train.dropout = parse(key, value)?,
            "batch_size" => p.train.batch_size = parse(key, value)?,
            "seed" => {
                p.train.seed = parse(key, value)?;
                p.simulation.seed = p.train.seed;
            }
            "finetune_epochs" => p.finetune_epochs = parse(key, value)?,
            "heldout_fraction" => p.heldout_fraction = parse(key, value)?,
            "mirt_dim" => p.mirt_dim = parse(key, value)?,
            "phi" => p.phi = parse_phi(value)?,
            "cdm" => p.simulation.cdm = value.parse::<ModelKind>().map_err(|e| e.to_string())?,
            "steps" => p.simulation.steps = parse(key, value)?,
            "top_k" => p.simulation.top_k = parse(key, value)?,
            "alpha1" => p.simulation.alphas.coverage = parse(key, value)?,
            "alpha2" => p.simulation.alphas.response = parse(key, value)?,
            "alpha3" => p.simulation.alphas.diversity = parse(key, value)?,
            "update_steps" => p.simulation.update_steps = parse(key, value)?,
            "update_lr" => p.simulation.update_lr = parse(key, value)?,
            "ecov" => {
                p.simulation.ecov = match value {
                    "saturating" => EcovVariant::Saturating,
                    "literal" => EcovVariant::Literal,
                    _ => return Err(format!("ecov: expected saturating or literal, found {value:?}")),
                }
            }
            _ => return Err(format!("unknown key {key}")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let p = &self.pipeline;
        let e = p.nacd.embeddings;
        Some(match key {
            "attention_embed_size" => p.nacd.attention_dim.to_string(),
            "hidden1" => p.nacd.hidden1.to_string(),
            "hidden2" => p.nacd.hidden2.to_string(),
            "clip_k" => p.nacd.clip_k.to_string(),
            "history_window" => p.nacd.history_window.to_string(),
            "edge_values" => p.nacd.edge_values.to_string(),
            "use_exercise_factor" => p.nacd.use_exercise_factor.to_string(),
            "use_student_factor" => p.nacd.use_student_factor.to_string(),
            "monotone" => p.nacd.monotone.to_string(),
            "embedding_dim" => e.map_or(0, |e| e.dim).to_string(),
            "gcn_layers" => e.unwrap_or_default().layers.to_string(),
            "delta_a" => e.unwrap_or_default().delta_a.to_string(),
            "learning_rate" => p.train.learning_rate.to_string(),
            "epochs" => p.train.epochs.to_string(),
            "dropout" => p.train.dropout.to_string(),
            "batch_size" => p.train.batch_size.to_string(),
            "seed" => p.train.seed.to_string(),
            "finetune_epochs" => p.finetune_epochs.to_string(),
            "heldout_fraction" => p.heldout_fraction.to_string(),
            "mirt_dim" => p.mirt_dim.to_string(),
            "phi" => render_phi(&p.phi),
            "cdm" => p.simulation.cdm.as_str().to_string(),
            "steps" => p.simulation.steps.to_string(),
            "top_k" => p.simulation.top_k.to_string(),
            "alpha1" => p.simulation.alphas.coverage.to_string(),
            "alpha2" => p.simulation.alphas.response.to_string(),
            "alpha3" => p.simulation.alphas.diversity.to_string(),
            "update_steps" => p.simulation.update_steps.to_string(),
            "update_lr" => p.simulation.update_lr.to_string(),
            "ecov" => match p.simulation.ecov {
                EcovVariant::Saturating => "saturating".into(),
                EcovVariant::Literal => "literal".into(),
            },
            _ => return None,
        })
    }

    /// Every key in a fixed order; parsing the result gives back the same configuration.
    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{k}={}\n", self.get(k).expect("listed key"))).collect()
    }

    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_text().as_bytes()))
    }
}
