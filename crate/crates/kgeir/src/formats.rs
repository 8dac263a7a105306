//! On-disk formats: interaction log CSV, Q-matrix CSV, skill vocabulary and graph JSON.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use kgeir_core::data::{InteractionLog, InteractionRecord, QMatrix};
use kgeir_core::graph::{ClassLevel, KnowledgeGraph, LearningObject, RelationEdge, RelationKind};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader)
}

fn column(headers: &csv::StringRecord, name: &'static str) -> Result<usize> {
    headers.iter().position(|h| h == name).ok_or(Error::MissingColumn(name))
}

fn invalid(line: u64, reason: String) -> Error {
    kgeir_core::Error::InvalidRecord { line: Some(line as usize), reason }.into()
}

/// Reads `student_id,exercise_id,correct,timestamp` rows, in any column order.
pub fn read_interaction_log<R: Read>(reader: R) -> Result<InteractionLog> {
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols = [
        column(&headers, "student_id")?,
        column(&headers, "exercise_id")?,
        column(&headers, "correct")?,
        column(&headers, "timestamp")?,
    ];
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(cols[i]).unwrap_or("");
        let correct = match field(2) {
            "0" => false,
            "1" => true,
            other => return Err(invalid(line, format!("correct must be 0 or 1, found {other:?}"))),
        };
        let timestamp: i64 =
            field(3).parse().map_err(|_| invalid(line, format!("timestamp {:?} is not an integer", field(3))))?;
        if field(0).is_empty() || field(1).is_empty() {
            return Err(invalid(line, "empty student or exercise id".into()));
        }
        records.push(InteractionRecord::new(field(0), field(1), correct, timestamp));
    }
    Ok(InteractionLog::from_records(records)?)
}

pub fn load_interaction_log(path: impl AsRef<Path>) -> Result<InteractionLog> {
    read_interaction_log(open(path.as_ref())?)
}

/// Writes the records in their stored order.
pub fn write_interaction_log<W: Write>(log: &InteractionLog, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["student_id", "exercise_id", "correct", "timestamp"])?;
    for r in log.records() {
        w.write_record([r.student_id.as_str(), &r.exercise_id, if r.correct { "1" } else { "0" }, &r.timestamp.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<log writer>", e))?;
    Ok(())
}

/// Reads `exercise_id,skill_id` pairs. A row with an empty skill declares the exercise
/// without giving it a skill.
pub fn read_q_matrix<R: Read>(reader: R, vocabulary: Option<&[String]>) -> Result<QMatrix> {
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers()?.clone();
    let (ce, cs) = (column(&headers, "exercise_id")?, column(&headers, "skill_id")?);
    let mut pairs = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let e = row.get(ce).unwrap_or("");
        if e.is_empty() {
            return Err(invalid(line, "empty exercise id".into()));
        }
        let s = row.get(cs).filter(|s| !s.is_empty()).map(str::to_owned);
        pairs.push((e.to_owned(), s));
    }
    Ok(QMatrix::from_pairs(pairs, vocabulary)?)
}

pub fn load_q_matrix(path: impl AsRef<Path>, vocabulary: Option<&[String]>) -> Result<QMatrix> {
    read_q_matrix(open(path.as_ref())?, vocabulary)
}

pub fn write_q_matrix<W: Write>(q: &QMatrix, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["exercise_id", "skill_id"])?;
    for (e, s) in q.pairs() {
        w.write_record([e, s])?;
    }
    w.flush().map_err(|e| Error::io("<q-matrix writer>", e))?;
    Ok(())
}

/// A skill vocabulary file: a `skill_id` column, one skill per row.
pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let mut rdr = csv_reader(open(path.as_ref())?);
    let col = column(&rdr.headers()?.clone(), "skill_id")?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        if let Some(s) = row.get(col).filter(|s| !s.is_empty()) {
            out.push(s.to_owned());
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphFile {
    nodes: Vec<NodeFile>,
    edges: Vec<EdgeFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeFile {
    id: String,
    #[serde(default)]
    label: String,
    class_level: LevelField,
}

/// Class levels may be written by name or by index.
#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum LevelField {
    Index(u8),
    Name(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeFile {
    from: String,
    to: String,
    kind: String,
}

fn level_name(level: ClassLevel) -> &'static str {
    match level {
        ClassLevel::Subject => "Subject",
        ClassLevel::Basic => "Basic",
        ClassLevel::Task => "Task",
    }
}

fn parse_level(id: &str, field: &LevelField) -> Result<ClassLevel> {
    let level = match field {
        LevelField::Index(i) => ClassLevel::from_index(*i),
        LevelField::Name(n) => [ClassLevel::Subject, ClassLevel::Basic, ClassLevel::Task].into_iter().find(|l| level_name(*l) == n),
    };
    level.ok_or_else(|| kgeir_core::Error::InvalidRecord { line: None, reason: format!("node {id}: unknown class level") }.into())
}

pub fn read_graph<R: Read>(reader: R) -> Result<KnowledgeGraph> {
    let file: GraphFile = serde_json::from_reader(reader)?;
    let nodes = file
        .nodes
        .iter()
        .map(|n| Ok(LearningObject::new(n.id.clone(), n.label.clone(), parse_level(&n.id, &n.class_level)?)))
        .collect::<Result<Vec<_>>>()?;
    let edges = file
        .edges
        .into_iter()
        .map(|e| Ok(RelationEdge::new(e.from, e.to, e.kind.parse::<RelationKind>()?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(KnowledgeGraph::new(nodes, edges)?)
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<KnowledgeGraph> {
    read_graph(open(path.as_ref())?)
}

pub fn write_graph<W: Write>(kg: &KnowledgeGraph, writer: W) -> Result<()> {
    let file = GraphFile {
        nodes: kg
            .nodes()
            .map(|n| NodeFile { id: n.id.clone(), label: n.label.clone(), class_level: LevelField::Name(level_name(n.class_level).into()) })
            .collect(),
        edges: kg.edges().iter().map(|e| EdgeFile { from: e.from.clone(), to: e.to.clone(), kind: e.kind.as_str().into() }).collect(),
    };
    serde_json::to_writer_pretty(writer, &file)?;
    Ok(())
}

/// A loaded dataset: log, Q-matrix and knowledge graph.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub log: InteractionLog,
    pub q: QMatrix,
    pub graph: KnowledgeGraph,
}

impl Dataset {
    pub fn load(log: &Path, q: &Path, graph: &Path, vocabulary: Option<&Path>) -> Result<Self> {
        let vocab = vocabulary.map(load_vocabulary).transpose()?;
        let q = load_q_matrix(q, vocab.as_deref())?;
        let log = load_interaction_log(log)?;
        log.validate_against(&q)?;
        Ok(Dataset { log, q, graph: load_graph(graph)? })
    }

    /// Writes `log.csv`, `q_matrix.csv` and `graph.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let create = |name: &str| {
            let p = dir.join(name);
            File::create(&p).map(std::io::BufWriter::new).map_err(|e| Error::io(p, e))
        };
        write_interaction_log(&self.log, create("log.csv")?)?;
        write_q_matrix(&self.q, create("q_matrix.csv")?)?;
        write_graph(&self.graph, create("graph.json")?)?;
        Ok(())
    }

    /// SHA-256 over the canonical serialization of all three parts.
    pub fn fingerprint(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        let mut buf = Vec::new();
        write_interaction_log(&self.log, &mut buf)?;
        write_q_matrix(&self.q, &mut buf)?;
        write_graph(&self.graph, &mut buf)?;
        Ok(format!("{:x}", Sha256::digest(&buf)))
    }
}
