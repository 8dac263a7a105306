//! End-to-end runs behind the command line.

use std::fs::File;
use std::path::{Path, PathBuf};

use kgeir_core::cdm::{self, AnyModel, ModelKind, NacdModel};
use kgeir_core::data::Corpus;
use kgeir_core::harness::{
    aggregate, eligible_students, prepare, run_population, untested_pool, MetricsTrace, Prepared, SessionOutput,
    StepSummary, StrategyKind,
};
use kgeir_core::informativeness::score_untested;
use kgeir_core::metrics::auc;
use kgeir_core::synth::{self, SynthConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::export::{self, create, RunManifest};
use crate::formats::Dataset;
use crate::{checkpoint, Result};

/// Where the data for a run comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Files { log: PathBuf, q: PathBuf, graph: PathBuf, vocabulary: Option<PathBuf> },
    Synthetic(SynthConfig),
}

impl Source {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            Source::Files { log, q, graph, vocabulary } => Dataset::load(log, q, graph, vocabulary.as_deref()),
            Source::Synthetic(cfg) => {
                let s = synth::generate(cfg)?;
                Ok(Dataset { log: s.log, q: s.q, graph: s.graph })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestSummary {
    pub students: usize,
    pub records: usize,
    pub exercises: usize,
    pub exercises_answered: usize,
    pub skills: usize,
    pub graph_nodes: usize,
    pub graph_edges: usize,
    pub dataset_hash: String,
}

pub fn ingest(data: &Dataset) -> Result<IngestSummary> {
    Ok(IngestSummary {
        students: data.log.num_students(),
        records: data.log.num_records(),
        exercises: data.q.num_exercises(),
        exercises_answered: data.log.exercise_ids().len(),
        skills: data.q.num_skills(),
        graph_nodes: data.graph.num_nodes(),
        graph_edges: data.graph.num_edges(),
        dataset_hash: data.fingerprint()?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub heldout_auc: Option<f64>,
}

/// Fits `kind` on the observed part of a chronological split and writes a checkpoint.
/// NACD is trained with unit skill weights.
pub fn train(data: &Dataset, config: &Config, kind: ModelKind, out: &Path) -> Result<TrainReport> {
    let corpus = Corpus::new(&data.log, data.q.clone())?;
    let p = &config.pipeline;
    let (observed, heldout) = corpus.chronological_split(p.heldout_fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(p.train.seed);
    let mut model = match kind {
        ModelKind::Irt => AnyModel::Irt(cdm::IrtModel::new(observed.num_students(), observed.num_exercises(), &mut rng)),
        ModelKind::Mirt => AnyModel::Mirt(cdm::MirtModel::new(observed.num_students(), observed.num_exercises(), p.mirt_dim, &mut rng)?),
        ModelKind::Nacd => AnyModel::Nacd(NacdModel::new(&observed, p.nacd, &mut rng)?),
    };
    let losses = cdm::train(&mut model, &observed, &p.train)?;
    let preds = cdm::heldout_predictions(&model, &observed, &heldout)?;
    let (scores, labels): (Vec<f64>, Vec<bool>) = preds.into_iter().unzip();
    checkpoint::save(out, &model, config, &vec![1.0; observed.num_skills()])?;
    Ok(TrainReport { losses, heldout_auc: auc(&scores, &labels) })
}

/// Runs the full preparation and writes the skill importance table to `out`.
pub fn weights(data: &Dataset, config: &Config, out: &Path) -> Result<Prepared> {
    let corpus = Corpus::new(&data.log, data.q.clone())?;
    let mut pipeline = config.pipeline.clone();
    pipeline.simulation.cdm = ModelKind::Nacd;
    let prep = prepare(&corpus, &data.graph, &pipeline)?;
    export::write_importance(&prep.importance, create(out)?)?;
    Ok(prep)
}

#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub prepared: Prepared,
    pub outputs: Vec<(String, Vec<SessionOutput>)>,
    pub summaries: Vec<(String, Vec<StepSummary>)>,
    pub files: Vec<String>,
}

/// Prepares the environment once, replays every strategy and writes the exports into
/// `out`: per-step means, heatmap grid, traces, audit, initial EMC scores, skill
/// importance, embeddings and the run manifest.
pub fn simulate(data: &Dataset, config: &Config, strategies: &[StrategyKind], out: &Path) -> Result<SimulationRun> {
    let corpus = Corpus::new(&data.log, data.q.clone())?;
    let prepared = prepare(&corpus, &data.graph, &config.pipeline)?;
    let sim = &config.pipeline.simulation;
    let env = prepared.env();
    let mut outputs = Vec::new();
    let mut summaries = Vec::new();
    for &kind in strategies {
        let outs = run_population(&env, kind, sim)?;
        let traces: Vec<MetricsTrace> = outs.iter().map(|o| o.trace.clone()).collect();
        summaries.push((kind.label(), aggregate(&traces)?));
        outputs.push((kind.label(), outs));
    }
    let q = &prepared.observed.q;
    let mut files = Vec::new();
    let mut file = |name: &str| {
        files.push(name.to_string());
        create(&out.join(name))
    };
    export::write_step_means(&summaries, file("steps.csv")?)?;
    export::write_heatmap(&summaries, file("heatmap.csv")?)?;
    let traces: Vec<MetricsTrace> = outputs.iter().flat_map(|(_, o)| o.iter().map(|s| s.trace.clone())).collect();
    export::write_traces(&traces, q, file("traces.csv")?)?;
    export::write_audit(&outputs, q, file("audit.csv")?)?;
    export::write_emc(&initial_emc(&prepared, sim.steps)?, file("emc.csv")?)?;
    export::write_importance(&prepared.importance, file("importance.csv")?)?;
    if let Some(set) = &prepared.embeddings {
        export::write_embeddings(&out.join("embeddings"), set, q)?;
        files.extend(["e_hat.csv", "s_hat.csv", "e_star.csv", "s_star.csv"].map(|f| format!("embeddings/{f}")));
    }
    files.push("manifest.json".into());
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        dataset_hash: data.fingerprint()?,
        config_hash: config.hash(),
        seed: sim.seed,
        config: crate::config::KEYS.iter().map(|k| (k.to_string(), config.get(k).expect("listed key"))).collect(),
        strategies: summaries.iter().map(|(s, _)| s.clone()).collect(),
        students: outputs.first().map_or(0, |(_, o)| o.len()),
        embedding_fallback: prepared.embedding_fallback,
        files: files.clone(),
    };
    export::write_manifest(&out.join("manifest.json"), &manifest)?;
    Ok(SimulationRun { prepared, outputs, summaries, files })
}

/// EMC of every pool question before the first selection, for each replayed student.
fn initial_emc(prep: &Prepared, steps: usize) -> Result<Vec<(String, String, f64)>> {
    let env = prep.env();
    let q = &prep.observed.q;
    let mut rows = Vec::new();
    for s in eligible_students(&env, steps) {
        let history: Vec<usize> = prep.observed.sequences[s].iter().map(|r| r.exercise).collect();
        let pool = untested_pool(&prep.heldout[s]).into_iter().map(|r| r.exercise);
        for score in score_untested(&prep.model, s, pool, &history)? {
            rows.push((prep.observed.students[s].clone(), q.exercise_ids()[score.exercise].clone(), score.emc));
        }
    }
    Ok(rows)
}

/// Recomputes `steps.csv` and `heatmap.csv` from a run directory's `traces.csv`.
pub fn export_plots(data: &Dataset, run_dir: &Path, out: &Path) -> Result<Vec<(String, Vec<StepSummary>)>> {
    let path = run_dir.join("traces.csv");
    let traces = export::read_traces(File::open(&path).map_err(|e| crate::Error::io(&path, e))?, &data.q)?;
    let mut strategies: Vec<String> = Vec::new();
    for t in &traces {
        if !strategies.contains(&t.strategy) {
            strategies.push(t.strategy.clone());
        }
    }
    let summaries = strategies
        .into_iter()
        .map(|s| {
            let group: Vec<MetricsTrace> = traces.iter().filter(|t| t.strategy == s).cloned().collect();
            Ok((s, aggregate(&group)?))
        })
        .collect::<Result<Vec<_>>>()?;
    export::write_step_means(&summaries, create(&out.join("steps.csv"))?)?;
    export::write_heatmap(&summaries, create(&out.join("heatmap.csv"))?)?;
    Ok(summaries)
}

/// The session model's held-out AUC, for reporting.
pub fn heldout_auc(prep: &Prepared) -> Result<Option<f64>> {
    let preds = cdm::heldout_predictions(&prep.model, &prep.observed, &prep.heldout)?;
    let (scores, labels): (Vec<f64>, Vec<bool>) = preds.into_iter().unzip();
    Ok(auc(&scores, &labels))
}
