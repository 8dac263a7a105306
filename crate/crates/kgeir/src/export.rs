//! CSV and JSON exports. Every writer emits rows in a fixed order and formats floats
//! with their shortest round-trip representation, so reruns are byte-identical.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use kgeir_core::data::QMatrix;
use kgeir_core::embeddings::EmbeddingSet;
use kgeir_core::harness::{MetricsTrace, SessionOutput, StepRecord, StepSummary};
use kgeir_core::importance::SkillImportanceTable;
use kgeir_core::Matrix;

use crate::{Error, Result};

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn finish<W: Write>(w: csv::Writer<W>) -> Result<()> {
    w.into_inner().map_err(|e| Error::io("<csv writer>", e.into_error()))?.flush().map_err(|e| Error::io("<csv writer>", e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `entity_id,dim_0..dim_{d-1}`, one row per matrix row.
pub fn write_matrix<W: Write>(ids: &[String], m: &Matrix, writer: W) -> Result<()> {
    if ids.len() != m.rows() {
        return Err(kgeir_core::Error::DimensionMismatch { context: "matrix export ids", expected: (m.rows(), m.cols()), found: (ids.len(), m.cols()) }.into());
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["entity_id".to_string()];
    header.extend((0..m.cols()).map(|d| format!("dim_{d}")));
    w.write_record(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(m.row(i).iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    finish(w)
}

pub fn read_matrix<R: Read>(reader: R) -> Result<(Vec<String>, Matrix)> {
    let mut rdr = csv::Reader::from_reader(reader);
    let cols = rdr.headers()?.len().saturating_sub(1);
    let (mut ids, mut data) = (Vec::new(), Vec::new());
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line()) as usize;
        ids.push(row.get(0).unwrap_or_default().to_string());
        for v in row.iter().skip(1) {
            data.push(v.parse::<f64>().map_err(|_| kgeir_core::Error::InvalidRecord { line: Some(line), reason: format!("not a number: {v:?}") })?);
        }
    }
    let n = ids.len();
    Ok((ids, Matrix::from_vec(n, cols, data)))
}

/// Writes `e_hat.csv`, `s_hat.csv`, `e_star.csv` and `s_star.csv` into `dir`.
pub fn write_embeddings(dir: &Path, set: &EmbeddingSet, q: &QMatrix) -> Result<()> {
    for (name, m, ids) in [
        ("e_hat.csv", &set.e_hat, q.exercise_ids()),
        ("s_hat.csv", &set.s_hat, q.skill_ids()),
        ("e_star.csv", &set.e_star, q.exercise_ids()),
        ("s_star.csv", &set.s_star, q.skill_ids()),
    ] {
        write_matrix(ids, m, create(&dir.join(name))?)?;
    }
    Ok(())
}

pub fn read_embeddings(dir: &Path) -> Result<EmbeddingSet> {
    let load = |name: &str| -> Result<Matrix> {
        let p = dir.join(name);
        Ok(read_matrix(File::open(&p).map_err(|e| Error::io(&p, e))?)?.1)
    };
    Ok(EmbeddingSet { e_hat: load("e_hat.csv")?, s_hat: load("s_hat.csv")?, e_star: load("e_star.csv")?, s_star: load("s_star.csv")? })
}

/// `skill_id,f1,f2,f3,f4,f5,w_nov,w_pop,w_k` with raw feature values.
pub fn write_importance<W: Write>(table: &SkillImportanceTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["skill_id", "f1", "f2", "f3", "f4", "f5", "w_nov", "w_pop", "w_k"])?;
    for r in &table.rows {
        let mut row = vec![r.skill_id.clone()];
        row.extend(r.raw.to_array().iter().chain(&[r.w_nov, r.w_pop, r.w_k]).map(f64::to_string));
        w.write_record(&row)?;
    }
    finish(w)
}

/// `student_id,exercise_id,emc`.
pub fn write_emc<W: Write>(rows: &[(String, String, f64)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["student_id", "exercise_id", "emc"])?;
    for (s, e, v) in rows {
        w.write_record([s.as_str(), e, &v.to_string()])?;
    }
    finish(w)
}

/// Representativeness audit of every scored candidate:
/// `strategy,student_id,step,candidate_id,coverage_term,pn_term,diss_term,total,selected`.
pub fn write_audit<W: Write>(outputs: &[(String, Vec<SessionOutput>)], q: &QMatrix, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["strategy", "student_id", "step", "candidate_id", "coverage_term", "pn_term", "diss_term", "total", "selected"])?;
    for (strategy, outs) in outputs {
        for out in outs {
            for a in &out.audit {
                let s = a.score;
                w.write_record([
                    strategy.as_str(),
                    &out.trace.student,
                    &a.step.to_string(),
                    &q.exercise_ids()[s.exercise],
                    &s.coverage.to_string(),
                    &s.response.to_string(),
                    &s.diversity.to_string(),
                    &s.total.to_string(),
                    if a.selected { "1" } else { "0" },
                ])?;
            }
        }
    }
    finish(w)
}

/// Per-student traces: `strategy,student_id,step,exercise_id,inf,cov`. An empty `inf`
/// marks a step whose remaining questions held a single class.
pub fn write_traces<W: Write>(traces: &[MetricsTrace], q: &QMatrix, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["strategy", "student_id", "step", "exercise_id", "inf", "cov"])?;
    for t in traces {
        for s in &t.steps {
            w.write_record([
                t.strategy.as_str(),
                &t.student,
                &s.step.to_string(),
                &q.exercise_ids()[s.selected],
                &opt(s.inf),
                &s.cov.to_string(),
            ])?;
        }
    }
    finish(w)
}

/// Reads [`write_traces`] output back, grouped by strategy in first-seen order. Exercise
/// ids are resolved against `q`.
pub fn read_traces<R: Read>(reader: R, q: &QMatrix) -> Result<Vec<MetricsTrace>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut traces: Vec<MetricsTrace> = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line()) as usize;
        let bad = |what: &str| -> Error { kgeir_core::Error::InvalidRecord { line: Some(line), reason: format!("bad {what}") }.into() };
        let get = |i: usize| row.get(i).unwrap_or_default();
        let record = StepRecord {
            step: get(2).parse().map_err(|_| bad("step"))?,
            selected: q.exercise_index(get(3)).ok_or_else(|| kgeir_core::Error::UnknownExercise(get(3).into()))?,
            inf: if get(4).is_empty() { None } else { Some(get(4).parse().map_err(|_| bad("inf"))?) },
            cov: get(5).parse().map_err(|_| bad("cov"))?,
            tested: 0,
        };
        match traces.last_mut().filter(|t| t.strategy == get(0) && t.student == get(1)) {
            Some(t) => {
                let record = StepRecord { tested: t.steps.len() + 1, ..record };
                t.steps.push(record);
            }
            None => traces.push(MetricsTrace { student: get(1).into(), strategy: get(0).into(), steps: vec![StepRecord { tested: 1, ..record }] }),
        }
    }
    Ok(traces)
}

/// Per-step means: `strategy,step,inf,inf_students,cov`.
pub fn write_step_means<W: Write>(summaries: &[(String, Vec<StepSummary>)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["strategy", "step", "inf", "inf_students", "cov"])?;
    for (strategy, steps) in summaries {
        for s in steps {
            w.write_record([strategy.as_str(), &s.step.to_string(), &opt(s.inf), &s.inf_count.to_string(), &s.cov.to_string()])?;
        }
    }
    finish(w)
}

/// Strategy × phase grid of mean AUC. Phases are numbered from 0, so phase `t` holds
/// the value after `t + 1` selections.
pub fn write_heatmap<W: Write>(summaries: &[(String, Vec<StepSummary>)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let phases = summaries.iter().map(|(_, s)| s.len()).max().unwrap_or(0);
    let mut header = vec!["strategy".to_string()];
    header.extend((0..phases).map(|p| p.to_string()));
    w.write_record(&header)?;
    for (strategy, steps) in summaries {
        let mut row = vec![strategy.clone()];
        row.extend((0..phases).map(|p| opt(steps.get(p).and_then(|s| s.inf))));
        w.write_record(&row)?;
    }
    finish(w)
}

/// Run manifest contents. Maps keep key order stable.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub dataset_hash: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub strategies: Vec<String>,
    pub students: usize,
    pub embedding_fallback: bool,
    pub files: Vec<String>,
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, manifest)?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}
