//! Skill features and the skill importance weight `W_K`.
//!
//! Five features are computed per skill: mean level in learning paths (f1), path
//! frequency (f2), connectivity (f3), embedding similarity (f4) and cognitive
//! difficulty (f5). After min-max normalization across skills, a novelty and a
//! popularity preference combine them linearly, and `W_K = tanh(w_nov + w_pop)`.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{Corpus, InteractionLog, QMatrix};
use crate::graph::PathSet;
use crate::{math, Error, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SkillFeatures {
    pub f1_level: f64,
    pub f2_frequency: f64,
    pub f3_connection: f64,
    pub f4_similarity: f64,
    pub f5_difficulty: f64,
}

impl SkillFeatures {
    pub fn to_array(self) -> [f64; 5] {
        [self.f1_level, self.f2_frequency, self.f3_connection, self.f4_similarity, self.f5_difficulty]
    }

    pub fn from_array(f: [f64; 5]) -> Self {
        SkillFeatures { f1_level: f[0], f2_frequency: f[1], f3_connection: f[2], f4_similarity: f[3], f5_difficulty: f[4] }
    }
}

/// Non-negative weights over the five features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreferenceWeights([f64; 5]);

impl PreferenceWeights {
    /// Level and difficulty.
    pub const NOVELTY: PreferenceWeights = PreferenceWeights([0.5, 0.0, 0.0, 0.0, 0.5]);
    /// Frequency, connection and similarity.
    pub const POPULARITY: PreferenceWeights = PreferenceWeights([0.0, 0.6, 0.1, 0.3, 0.0]);

    pub fn new(w: [f64; 5]) -> Result<Self> {
        if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("preference weights must be finite and >= 0, got {w:?}")));
        }
        if w.iter().all(|&x| x == 0.0) {
            return Err(Error::InvalidArgument("preference weights are all zero".into()));
        }
        Ok(PreferenceWeights(w))
    }

    pub fn weights(&self) -> [f64; 5] {
        self.0
    }
}

/// Mean zero-based level of `kc` over the paths containing it; 0 when none do.
pub fn f1_level(paths: &PathSet, kc: &str) -> f64 {
    let occ = paths.occurrences(kc);
    if occ.is_empty() {
        return 0.0;
    }
    occ.iter().map(|&(_, level)| level as f64).sum::<f64>() / occ.len() as f64
}

/// Fraction of all paths that contain `kc`.
pub fn f2_frequency(paths: &PathSet, kc: &str) -> Result<f64> {
    if paths.is_empty() {
        return Err(Error::EmptyInput("path set"));
    }
    Ok(paths.containing(kc) as f64 / paths.len() as f64)
}

/// Distinct other objects sharing at least one path with `kc`.
pub fn connect_set<'p>(paths: &'p PathSet, kc: &str) -> BTreeSet<&'p str> {
    let mut set = BTreeSet::new();
    for &(p, _) in paths.occurrences(kc) {
        for n in paths.paths()[p].nodes() {
            if n != kc {
                set.insert(n.as_str());
            }
        }
    }
    set
}

/// `|ConnectSet(kc)| / total_skills`.
pub fn f3_connection(paths: &PathSet, kc: &str, total_skills: usize) -> Result<f64> {
    if total_skills == 0 {
        return Err(Error::InvalidArgument("skill count must be at least 1".into()));
    }
    Ok(connect_set(paths, kc).len() as f64 / total_skills as f64)
}

/// Like [`f3_connection`], counting only connected objects that are skills of `vocabulary`.
pub fn f3_connection_within(paths: &PathSet, kc: &str, vocabulary: &BTreeSet<&str>) -> Result<f64> {
    if vocabulary.is_empty() {
        return Err(Error::InvalidArgument("skill count must be at least 1".into()));
    }
    let hits = connect_set(paths, kc).into_iter().filter(|n| vocabulary.contains(n)).count();
    Ok(hits as f64 / vocabulary.len() as f64)
}

/// Mean cosine similarity of skill `kc` (a row index of `s_star`) to every other skill.
pub fn f4_similarity(s_star: &Matrix, kc: usize) -> Result<f64> {
    let k = s_star.rows();
    if k < 2 {
        return Err(Error::InvalidArgument("similarity needs at least two skills".into()));
    }
    let mut total = 0.0;
    for j in (0..k).filter(|&j| j != kc) {
        total += math::cosine(s_star.row(kc), s_star.row(j)).ok_or_else(|| {
            let bad = if math::l2_norm(s_star.row(kc)) == 0.0 { kc } else { j };
            Error::ZeroNorm(format!("skill #{bad}"))
        })?;
    }
    Ok(total / (k - 1) as f64)
}

/// Difficulty level from a window of attempts: `floor(wrong / attempts * 4)` with at
/// least five attempts, otherwise 5.
pub fn difficulty_level(attempts: usize, wrong: usize) -> u8 {
    if attempts >= 5 {
        math::floor(wrong as f64 / attempts as f64 * 4.0) as u8
    } else {
        5
    }
}

/// Cognitive difficulty of `kc` for one student over attempts with timestamp `< t`.
pub fn pi_difficulty(log: &InteractionLog, q: &QMatrix, student: &str, kc: &str, t: i64) -> Result<u8> {
    let skill = q.skill_index(kc).ok_or_else(|| Error::UnknownSkill(kc.into()))?;
    let mut attempts = 0;
    let mut wrong = 0;
    for r in log.student_records(student)? {
        if r.timestamp >= t {
            continue;
        }
        let e = q.exercise_index(&r.exercise_id).ok_or_else(|| Error::UnknownExercise(r.exercise_id.clone()))?;
        if q.contains(e, skill) {
            attempts += 1;
            wrong += usize::from(!r.correct);
        }
    }
    Ok(difficulty_level(attempts, wrong))
}

/// Mean of [`pi_difficulty`] over every student and every checkpoint.
pub fn f5_difficulty(log: &InteractionLog, q: &QMatrix, kc: &str, checkpoints: &[i64]) -> Result<f64> {
    if checkpoints.is_empty() {
        return Err(Error::EmptyInput("checkpoint list"));
    }
    if log.num_students() == 0 {
        return Err(Error::EmptyInput("interaction log"));
    }
    let mut total = 0.0;
    for s in log.student_ids() {
        for &t in checkpoints {
            total += f64::from(pi_difficulty(log, q, s, kc, t)?);
        }
    }
    Ok(total / (log.num_students() * checkpoints.len()) as f64)
}

/// f5 with one checkpoint per student placed after that student's last record.
pub fn f5_difficulty_at_end(log: &InteractionLog, q: &QMatrix, kc: &str) -> Result<f64> {
    if log.num_students() == 0 {
        return Err(Error::EmptyInput("interaction log"));
    }
    let mut total = 0.0;
    for s in log.student_ids() {
        let end = log.student_records(s)?.last().map_or(0, |r| r.timestamp.saturating_add(1));
        total += f64::from(pi_difficulty(log, q, s, kc, end)?);
    }
    Ok(total / log.num_students() as f64)
}

/// f5 for every skill of an indexed corpus, each student's whole sequence forming the window.
pub fn difficulty_by_skill(corpus: &Corpus) -> Result<Vec<f64>> {
    if corpus.num_students() == 0 {
        return Err(Error::EmptyInput("interaction log"));
    }
    let k = corpus.num_skills();
    let mut totals = alloc::vec![0.0; k];
    for seq in &corpus.sequences {
        let mut attempts = alloc::vec![0usize; k];
        let mut wrong = alloc::vec![0usize; k];
        for r in seq {
            for skill in corpus.q.skills_of(r.exercise) {
                attempts[skill] += 1;
                wrong[skill] += usize::from(!r.correct);
            }
        }
        for skill in 0..k {
            totals[skill] += f64::from(difficulty_level(attempts[skill], wrong[skill]));
        }
    }
    Ok(totals.into_iter().map(|t| t / corpus.num_students() as f64).collect())
}

/// Min-max scaling to [0, 1]; a constant column maps to 0.5.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return alloc::vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// `Σ w_i · f_i` over (normalized) features.
pub fn combine(features: &SkillFeatures, w: &PreferenceWeights) -> f64 {
    features.to_array().iter().zip(w.weights()).map(|(f, w)| f * w).sum()
}

/// `tanh(w_nov + w_pop)`.
pub fn skill_importance(w_nov: f64, w_pop: f64) -> f64 {
    math::tanh(w_nov + w_pop)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkillImportanceRow {
    pub skill_id: String,
    pub raw: SkillFeatures,
    pub normalized: SkillFeatures,
    pub w_nov: f64,
    pub w_pop: f64,
    pub w_skill: f64,
    pub w_k: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkillImportanceTable {
    pub rows: Vec<SkillImportanceRow>,
}

impl SkillImportanceTable {
    /// Builds the table for `skill_ids`, in that order. `s_star` holds one embedding row
    /// per skill in the same order and `difficulty` the f5 value per skill.
    pub fn compute(skill_ids: &[String], paths: &PathSet, s_star: &Matrix, difficulty: &[f64]) -> Result<Self> {
        let k = skill_ids.len();
        if k == 0 {
            return Err(Error::EmptyInput("skill vocabulary"));
        }
        if s_star.rows() != k || difficulty.len() != k {
            return Err(Error::DimensionMismatch {
                context: "skill importance inputs",
                expected: (k, s_star.cols()),
                found: (s_star.rows(), difficulty.len()),
            });
        }
        let vocab: BTreeSet<&str> = skill_ids.iter().map(String::as_str).collect();
        let mut raw = Vec::with_capacity(k);
        for (i, id) in skill_ids.iter().enumerate() {
            raw.push(SkillFeatures {
                f1_level: f1_level(paths, id),
                f2_frequency: f2_frequency(paths, id)?,
                f3_connection: f3_connection_within(paths, id, &vocab)?,
                f4_similarity: if k >= 2 { f4_similarity(s_star, i)? } else { 1.0 },
                f5_difficulty: difficulty[i],
            });
        }
        let columns: Vec<Vec<f64>> =
            (0..5).map(|f| min_max_normalize(&raw.iter().map(|r| r.to_array()[f]).collect::<Vec<_>>())).collect();
        let rows = skill_ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let normalized = SkillFeatures::from_array(core::array::from_fn(|f| columns[f][i]));
                let w_nov = combine(&normalized, &PreferenceWeights::NOVELTY);
                let w_pop = combine(&normalized, &PreferenceWeights::POPULARITY);
                SkillImportanceRow {
                    skill_id: id.clone(),
                    raw: raw[i],
                    normalized,
                    w_nov,
                    w_pop,
                    w_skill: w_nov + w_pop,
                    w_k: skill_importance(w_nov, w_pop),
                }
            })
            .collect();
        Ok(SkillImportanceTable { rows })
    }

    /// Every skill weighted 1.
    pub fn uniform(skill_ids: &[String]) -> Self {
        let rows = skill_ids
            .iter()
            .map(|id| SkillImportanceRow {
                skill_id: id.clone(),
                raw: SkillFeatures::default(),
                normalized: SkillFeatures::default(),
                w_nov: 0.0,
                w_pop: 0.0,
                w_skill: 0.0,
                w_k: 1.0,
            })
            .collect();
        SkillImportanceTable { rows }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.w_k).collect()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}
