//! Model checkpoints: one CSV per named parameter plus `manifest.json`.

use std::fs::File;
use std::path::Path;

use kgeir_core::autodiff::ParamStore;
use kgeir_core::cdm::{AnyModel, DiagnosisModel, IrtModel, MirtModel, ModelKind, NacdModel};
use kgeir_core::data::Corpus;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::export::{create, read_matrix, write_matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub file: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub model_kind: String,
    pub seed: u64,
    pub config_hash: String,
    /// Full configuration as `key=value` lines.
    pub config: String,
    /// Q-matrix skill weights the model was trained with.
    pub skill_weights: Vec<f64>,
    pub parameters: Vec<ParamEntry>,
}

fn file_name(name: &str) -> String {
    let safe: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' { c } else { '_' }).collect();
    format!("{safe}.csv")
}

pub fn save(dir: &Path, model: &AnyModel, config: &Config, skill_weights: &[f64]) -> Result<CheckpointManifest> {
    let mut parameters = Vec::new();
    for (_, name, m) in model.params().iter() {
        let file = file_name(name);
        let ids: Vec<String> = (0..m.rows()).map(|r| r.to_string()).collect();
        write_matrix(&ids, m, create(&dir.join(&file))?)?;
        parameters.push(ParamEntry { name: name.to_string(), file, rows: m.rows(), cols: m.cols() });
    }
    let manifest = CheckpointManifest {
        model_kind: model.kind().as_str().to_string(),
        seed: config.pipeline.train.seed,
        config_hash: config.hash(),
        config: config.to_text(),
        skill_weights: skill_weights.to_vec(),
        parameters,
    };
    let path = dir.join("manifest.json");
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    std::io::Write::flush(&mut w).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join("manifest.json");
    let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

/// Restores a model. `corpus` must be the one the model was trained on (same students,
/// exercises and skills); NACD rebuilds its relation matrices from it.
pub fn load(dir: &Path, corpus: &Corpus) -> Result<(AnyModel, CheckpointManifest)> {
    let manifest = read_manifest(dir)?;
    let config = Config::parse(&manifest.config)?;
    if config.hash() != manifest.config_hash {
        return Err(Error::Checkpoint("config hash does not match the stored config".into()));
    }
    let mut store = ParamStore::new();
    for p in &manifest.parameters {
        let path = dir.join(&p.file);
        let (_, m) = read_matrix(File::open(&path).map_err(|e| Error::io(&path, e))?)?;
        if m.shape() != (p.rows, p.cols) {
            return Err(Error::Checkpoint(format!("{} has shape {:?}, manifest says {:?}", p.file, m.shape(), (p.rows, p.cols))));
        }
        store.add(p.name.clone(), m);
    }
    let kind: ModelKind = manifest.model_kind.parse()?;
    let model = match kind {
        ModelKind::Irt => AnyModel::Irt(IrtModel::from_store(store)?),
        ModelKind::Mirt => AnyModel::Mirt(MirtModel::from_store(store)?),
        ModelKind::Nacd => AnyModel::Nacd(NacdModel::from_store(store, corpus, config.pipeline.nacd, &manifest.skill_weights)?),
    };
    if model.num_students() != corpus.num_students() || model.num_exercises() != corpus.num_exercises() {
        return Err(Error::Checkpoint("checkpoint does not fit this corpus".into()));
    }
    Ok((model, manifest))
}
