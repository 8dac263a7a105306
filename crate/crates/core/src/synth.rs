//! Synthetic DINA-style populations for desk-scale evaluation.
//!
//! A student masters skill `k` when `θ_s + ε_sk > δ_k`, with a shared ability
//! `θ_s ~ N(0, 1)`, per-skill noise `ε_sk ~ N(0, spread²)` and skill thresholds `δ_k`
//! spaced evenly over `[-1.2, 1.2]`. An answer is correct with probability `1 − slip`
//! when every required skill is mastered and `guess` otherwise.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Corpus, InteractionLog, InteractionRecord, QMatrix};
use crate::graph::{ClassLevel, KnowledgeGraph, LearningObject, RelationEdge, RelationKind};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub students: usize,
    pub exercises: usize,
    pub skills: usize,
    pub max_skills_per_exercise: usize,
    pub answers_per_student: usize,
    pub slip: f64,
    pub guess: f64,
    /// Standard deviation of the per-skill deviation from the shared ability.
    pub skill_spread: f64,
    pub tasks: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            students: 200,
            exercises: 100,
            skills: 10,
            max_skills_per_exercise: 3,
            answers_per_student: 60,
            slip: 0.1,
            guess: 0.1,
            skill_spread: 1.0,
            tasks: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub log: InteractionLog,
    pub q: QMatrix,
    pub graph: KnowledgeGraph,
    /// `mastery[s][k]` in student-id order.
    pub mastery: Vec<Vec<bool>>,
}

impl Synthetic {
    pub fn corpus(&self) -> Result<Corpus> {
        Corpus::new(&self.log, self.q.clone())
    }
}

pub fn student_id(s: usize) -> String {
    format!("s{s:04}")
}

pub fn exercise_id(e: usize) -> String {
    format!("e{e:04}")
}

pub fn skill_id(k: usize) -> String {
    format!("k{k:03}")
}

pub fn generate(cfg: &SynthConfig) -> Result<Synthetic> {
    if cfg.students == 0 || cfg.exercises == 0 || cfg.skills == 0 || cfg.max_skills_per_exercise == 0 {
        return Err(Error::InvalidArgument("synthetic population sizes must be positive".into()));
    }
    if cfg.answers_per_student > cfg.exercises {
        return Err(Error::InvalidArgument(format!(
            "{} answers per student exceed {} exercises",
            cfg.answers_per_student, cfg.exercises
        )));
    }
    for (name, p) in [("slip", cfg.slip), ("guess", cfg.guess)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("{name} {p} outside [0, 1]")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.skills;

    let mut pairs = Vec::new();
    let mut required: Vec<Vec<usize>> = Vec::with_capacity(cfg.exercises);
    for e in 0..cfg.exercises {
        let n = rng.gen_range(1..=cfg.max_skills_per_exercise.min(k));
        let mut skills = alloc::vec![e % k];
        let mut others: Vec<usize> = (0..k).filter(|&s| s != e % k).collect();
        others.shuffle(&mut rng);
        skills.extend(others.into_iter().take(n - 1));
        skills.sort_unstable();
        for &s in &skills {
            pairs.push((exercise_id(e), Some(skill_id(s))));
        }
        required.push(skills);
    }
    let vocabulary: Vec<String> = (0..k).map(skill_id).collect();
    let q = QMatrix::from_pairs(pairs, Some(&vocabulary))?;

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let spread = Normal::new(0.0, cfg.skill_spread.max(0.0)).map_err(|_| Error::InvalidArgument("skill spread".into()))?;
    let mut thresholds: Vec<f64> =
        (0..k).map(|i| if k == 1 { 0.0 } else { -1.2 + 2.4 * i as f64 / (k - 1) as f64 }).collect();
    thresholds.shuffle(&mut rng);

    let mut mastery = Vec::with_capacity(cfg.students);
    let mut records = Vec::with_capacity(cfg.students * cfg.answers_per_student);
    let mut order: Vec<usize> = (0..cfg.exercises).collect();
    for s in 0..cfg.students {
        let theta: f64 = normal.sample(&mut rng);
        let m: Vec<bool> = thresholds.iter().map(|&d| theta + spread.sample(&mut rng) > d).collect();
        order.shuffle(&mut rng);
        for (t, &e) in order.iter().take(cfg.answers_per_student).enumerate() {
            let knows = required[e].iter().all(|&sk| m[sk]);
            let p = if knows { 1.0 - cfg.slip } else { cfg.guess };
            records.push(InteractionRecord::new(student_id(s), exercise_id(e), rng.gen_bool(p), t as i64));
        }
        mastery.push(m);
    }
    let log = InteractionLog::from_records(records)?;
    let graph = random_graph(k, cfg.tasks, &mut rng)?;
    Ok(Synthetic { log, q, graph, mastery })
}

/// One subject node, `skills` basic nodes and `tasks` task nodes. Skills form a random
/// prerequisite DAG with a few subclass links; every task is implemented by 1–3 skills
/// and the subject applies to a handful of skills.
pub fn random_graph(skills: usize, tasks: usize, rng: &mut impl Rng) -> Result<KnowledgeGraph> {
    let mut nodes = alloc::vec![LearningObject::new("subject", "subject", ClassLevel::Subject)];
    nodes.extend((0..skills).map(|s| LearningObject::new(skill_id(s), format!("skill {s}"), ClassLevel::Basic)));
    nodes.extend((0..tasks).map(|t| LearningObject::new(format!("task{t}"), format!("task {t}"), ClassLevel::Task)));
    let mut edges = Vec::new();
    for i in 0..skills {
        for j in i + 1..skills {
            if rng.gen_bool(0.2) {
                edges.push(RelationEdge::new(skill_id(i), skill_id(j), RelationKind::PreKnowledge));
            } else if rng.gen_bool(0.05) {
                edges.push(RelationEdge::new(skill_id(i), skill_id(j), RelationKind::Subclass));
            }
        }
    }
    for t in 0..tasks {
        let n = rng.gen_range(1..=3.min(skills));
        let mut pick: Vec<usize> = (0..skills).collect();
        pick.shuffle(rng);
        for &s in pick.iter().take(n) {
            edges.push(RelationEdge::new(skill_id(s), format!("task{t}"), RelationKind::Implement));
        }
    }
    for s in 0..skills {
        if rng.gen_bool(0.3) {
            edges.push(RelationEdge::new("subject", skill_id(s), RelationKind::ApplyToBasic));
        }
    }
    KnowledgeGraph::new(nodes, edges)
}
