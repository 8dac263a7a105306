//! Interaction logs, Q-matrices and chronological holdout splits.
//!
//! Everything here is immutable once constructed. Parsing from disk is done by the
//! companion crate; this module owns validation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::{math, Error, Matrix, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionRecord {
    pub student_id: String,
    pub exercise_id: String,
    pub correct: bool,
    pub timestamp: i64,
}

impl InteractionRecord {
    pub fn new(student_id: impl Into<String>, exercise_id: impl Into<String>, correct: bool, timestamp: i64) -> Self {
        InteractionRecord { student_id: student_id.into(), exercise_id: exercise_id.into(), correct, timestamp }
    }
}

/// Records in input order plus a per-student chronological view.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionLog {
    records: Vec<InteractionRecord>,
    student_index: BTreeMap<String, Vec<usize>>,
}

impl InteractionLog {
    /// Builds the log, rejecting duplicate (student, exercise, timestamp) triples.
    /// Each student's view is ordered by timestamp, then by input position.
    pub fn from_records(records: Vec<InteractionRecord>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut student_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if !seen.insert((r.student_id.as_str(), r.exercise_id.as_str(), r.timestamp)) {
                return Err(Error::DuplicateRecord {
                    student: r.student_id.clone(),
                    exercise: r.exercise_id.clone(),
                    timestamp: r.timestamp,
                });
            }
            student_index.entry(r.student_id.clone()).or_default().push(i);
        }
        for view in student_index.values_mut() {
            // stable sort keeps input order among equal timestamps
            view.sort_by_key(|&i| records[i].timestamp);
        }
        Ok(InteractionLog { records, student_index })
    }

    pub fn records(&self) -> &[InteractionRecord] {
        &self.records
    }

    pub fn num_records(&self) -> usize {
        self.records.len()
    }

    pub fn num_students(&self) -> usize {
        self.student_index.len()
    }

    /// Student ids in lexicographic order.
    pub fn student_ids(&self) -> impl Iterator<Item = &str> {
        self.student_index.keys().map(String::as_str)
    }

    /// Distinct exercise ids in lexicographic order.
    pub fn exercise_ids(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self.records.iter().map(|r| r.exercise_id.as_str()).collect();
        set.into_iter().collect()
    }

    pub fn contains_student(&self, student: &str) -> bool {
        self.student_index.contains_key(student)
    }

    /// The student's records in chronological order.
    pub fn student_records(&self, student: &str) -> Result<Vec<&InteractionRecord>> {
        let view = self
            .student_index
            .get(student)
            .ok_or_else(|| Error::UnknownStudent(student.into()))?;
        Ok(view.iter().map(|&i| &self.records[i]).collect())
    }

    /// Checks that every exercise referenced by the log exists in `q`.
    pub fn validate_against(&self, q: &QMatrix) -> Result<()> {
        for r in &self.records {
            if q.exercise_index(&r.exercise_id).is_none() {
                return Err(Error::UnknownExercise(r.exercise_id.clone()));
            }
        }
        Ok(())
    }
}

/// Binary exercise × skill incidence matrix. Both id lists are sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct QMatrix {
    exercise_ids: Vec<String>,
    skill_ids: Vec<String>,
    entries: Vec<bool>,
    exercise_lookup: BTreeMap<String, usize>,
    skill_lookup: BTreeMap<String, usize>,
}

impl QMatrix {
    /// Builds the matrix from `(exercise, skill)` pairs. A pair whose skill is `None`
    /// declares an exercise without contributing a skill; an exercise that ends up
    /// with no skill at all is rejected. When `vocabulary` is given, every skill must
    /// belong to it and the skill axis spans the whole vocabulary.
    pub fn from_pairs<E, S>(pairs: impl IntoIterator<Item = (E, Option<S>)>, vocabulary: Option<&[String]>) -> Result<Self>
    where
        E: Into<String>,
        S: Into<String>,
    {
        let mut by_exercise: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (e, s) in pairs {
            let skills = by_exercise.entry(e.into()).or_default();
            if let Some(s) = s {
                skills.insert(s.into());
            }
        }
        if by_exercise.is_empty() {
            return Err(Error::EmptyInput("q-matrix"));
        }
        let skill_set: BTreeSet<String> = match vocabulary {
            Some(vocab) => {
                let vocab: BTreeSet<String> = vocab.iter().cloned().collect();
                for skill in by_exercise.values().flatten() {
                    if !vocab.contains(skill) {
                        return Err(Error::UnknownSkill(skill.clone()));
                    }
                }
                vocab
            }
            None => by_exercise.values().flatten().cloned().collect(),
        };
        if let Some((e, _)) = by_exercise.iter().find(|(_, s)| s.is_empty()) {
            return Err(Error::ExerciseWithoutSkill(e.clone()));
        }
        let skill_ids: Vec<String> = skill_set.into_iter().collect();
        let skill_lookup: BTreeMap<String, usize> =
            skill_ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let k = skill_ids.len();
        let mut entries = vec![false; by_exercise.len() * k];
        let mut exercise_ids = Vec::with_capacity(by_exercise.len());
        for (row, (e, skills)) in by_exercise.into_iter().enumerate() {
            for s in &skills {
                entries[row * k + skill_lookup[s]] = true;
            }
            exercise_ids.push(e);
        }
        let exercise_lookup = exercise_ids.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();
        Ok(QMatrix { exercise_ids, skill_ids, entries, exercise_lookup, skill_lookup })
    }

    pub fn num_exercises(&self) -> usize {
        self.exercise_ids.len()
    }

    pub fn num_skills(&self) -> usize {
        self.skill_ids.len()
    }

    pub fn exercise_ids(&self) -> &[String] {
        &self.exercise_ids
    }

    pub fn skill_ids(&self) -> &[String] {
        &self.skill_ids
    }

    pub fn exercise_index(&self, id: &str) -> Option<usize> {
        self.exercise_lookup.get(id).copied()
    }

    pub fn skill_index(&self, id: &str) -> Option<usize> {
        self.skill_lookup.get(id).copied()
    }

    pub fn contains(&self, exercise: usize, skill: usize) -> bool {
        self.entries[exercise * self.skill_ids.len() + skill]
    }

    pub fn row(&self, exercise: usize) -> &[bool] {
        let k = self.skill_ids.len();
        &self.entries[exercise * k..(exercise + 1) * k]
    }

    /// Skill indices of an exercise, ascending.
    pub fn skills_of(&self, exercise: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(exercise).iter().enumerate().filter(|(_, &b)| b).map(|(k, _)| k)
    }

    pub fn row_sum(&self, exercise: usize) -> usize {
        self.row(exercise).iter().filter(|&&b| b).count()
    }

    /// Dense 0/1 matrix.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(
            self.num_exercises(),
            self.num_skills(),
            self.entries.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
    }

    /// Q-matrix with ones replaced by the per-skill weight.
    pub fn weighted(&self, skill_weights: &[f64]) -> Result<Matrix> {
        if skill_weights.len() != self.num_skills() {
            return Err(Error::DimensionMismatch {
                context: "weighted q-matrix",
                expected: (1, self.num_skills()),
                found: (1, skill_weights.len()),
            });
        }
        let k = self.num_skills();
        let data = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, &b)| if b { skill_weights[i % k] } else { 0.0 })
            .collect();
        Ok(Matrix::from_vec(self.num_exercises(), k, data))
    }

    /// Iterates `(exercise_id, skill_id)` pairs in sorted order.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        (0..self.num_exercises()).flat_map(move |e| {
            self.skills_of(e).map(move |k| (self.exercise_ids[e].as_str(), self.skill_ids[k].as_str()))
        })
    }
}

/// One answered exercise, by index into the Q-matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Response {
    pub exercise: usize,
    pub correct: bool,
}

/// A log indexed against a Q-matrix: students sorted by id, each with a
/// chronological response sequence.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub q: QMatrix,
    pub students: Vec<String>,
    pub sequences: Vec<Vec<Response>>,
}

impl Corpus {
    pub fn new(log: &InteractionLog, q: QMatrix) -> Result<Self> {
        log.validate_against(&q)?;
        let mut students = Vec::with_capacity(log.num_students());
        let mut sequences = Vec::with_capacity(log.num_students());
        for s in log.student_ids() {
            let seq = log
                .student_records(s)?
                .into_iter()
                .map(|r| Response {
                    exercise: q.exercise_index(&r.exercise_id).expect("validated above"),
                    correct: r.correct,
                })
                .collect();
            students.push(String::from(s));
            sequences.push(seq);
        }
        Ok(Corpus { q, students, sequences })
    }

    pub fn from_sequences(q: QMatrix, students: Vec<String>, sequences: Vec<Vec<Response>>) -> Self {
        assert_eq!(students.len(), sequences.len());
        Corpus { q, students, sequences }
    }

    pub fn num_students(&self) -> usize {
        self.students.len()
    }

    pub fn num_exercises(&self) -> usize {
        self.q.num_exercises()
    }

    pub fn num_skills(&self) -> usize {
        self.q.num_skills()
    }

    pub fn num_records(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    pub fn student_index(&self, id: &str) -> Option<usize> {
        self.students.binary_search_by(|s| s.as_str().cmp(id)).ok()
    }

    /// Flattened `(student, response)` list in student-then-time order.
    pub fn flat_records(&self) -> Vec<(usize, usize, Response)> {
        self.sequences
            .iter()
            .enumerate()
            .flat_map(|(s, seq)| seq.iter().enumerate().map(move |(pos, &r)| (s, pos, r)))
            .collect()
    }

    /// Splits every student's sequence chronologically; students too short to yield a
    /// nonempty heldout part keep all of their records observed.
    pub fn chronological_split(&self, heldout_fraction: f64) -> (Corpus, Vec<Vec<Response>>) {
        let mut observed = Vec::with_capacity(self.sequences.len());
        let mut heldout = Vec::with_capacity(self.sequences.len());
        for seq in &self.sequences {
            let cut = observed_count(seq.len(), heldout_fraction).unwrap_or(seq.len());
            observed.push(seq[..cut].to_vec());
            heldout.push(seq[cut..].to_vec());
        }
        (Corpus { q: self.q.clone(), students: self.students.clone(), sequences: observed }, heldout)
    }
}

/// Number of leading records kept as observed: `ceil((1 - fraction) * n)`.
/// Returns `None` when the heldout part would be empty.
pub fn observed_count(n: usize, heldout_fraction: f64) -> Option<usize> {
    if !(0.0..1.0).contains(&heldout_fraction) || n == 0 {
        return None;
    }
    // tolerance absorbs representation error such as (1 - 0.7) * 10 = 3.0000000000000004
    let raw = (1.0 - heldout_fraction) * n as f64;
    let cut = math::ceil(raw - 1e-9).max(0.0) as usize;
    (cut < n).then_some(cut)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionSplit {
    pub student_id: String,
    pub observed: Vec<InteractionRecord>,
    pub heldout: Vec<InteractionRecord>,
    pub seed: u64,
}

/// Chronological split of one student's records: the earliest
/// `ceil((1 - fraction) * n)` are observed, the rest heldout. The seed is recorded for
/// provenance; the split itself does not depend on it.
pub fn split_holdout(log: &InteractionLog, student: &str, fraction: f64, seed: u64) -> Result<SessionSplit> {
    let records = log.student_records(student)?;
    if records.len() < 2 {
        return Err(Error::InsufficientRecords { student: student.into(), needed: 2, found: records.len() });
    }
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("holdout fraction {fraction} outside [0, 1)")));
    }
    let cut = observed_count(records.len(), fraction).ok_or_else(|| {
        Error::InvalidArgument(format!("holdout fraction {fraction} leaves the heldout part empty"))
    })?;
    let owned: Vec<InteractionRecord> = records.into_iter().cloned().collect();
    let (observed, heldout) = owned.split_at(cut);
    Ok(SessionSplit { student_id: student.into(), observed: observed.to_vec(), heldout: heldout.to_vec(), seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn rec(s: &str, e: &str, c: bool, t: i64) -> InteractionRecord {
        InteractionRecord::new(s, e, c, t)
    }

    fn q_simple() -> QMatrix {
        QMatrix::from_pairs(
            [("e1", Some("k1")), ("e1", Some("k2")), ("e2", Some("k3")), ("e3", Some("k1"))],
            None,
        )
        .unwrap()
    }

    #[test]
    fn log_counts_and_ordering() {
        let log = InteractionLog::from_records(alloc::vec![
            rec("s1", "e2", true, 5),
            rec("s2", "e1", false, 1),
            rec("s1", "e1", false, 2),
        ])
        .unwrap();
        assert_eq!(log.num_records(), 3);
        assert_eq!(log.num_students(), 2);
        let s1: Vec<_> = log.student_records("s1").unwrap().iter().map(|r| r.timestamp).collect();
        assert_eq!(s1, [2, 5]);
    }

    #[test]
    fn equal_timestamps_keep_input_order() {
        let log = InteractionLog::from_records(alloc::vec![rec("s", "b", true, 1), rec("s", "a", true, 1)]).unwrap();
        let ids: Vec<_> = log.student_records("s").unwrap().iter().map(|r| r.exercise_id.clone()).collect();
        assert_eq!(ids, ["b", "a"]);
    }

    #[test]
    fn duplicate_triple_is_rejected() {
        let err = InteractionLog::from_records(alloc::vec![rec("s", "e", true, 1), rec("s", "e", false, 1)]).unwrap_err();
        assert!(matches!(err, Error::DuplicateRecord { .. }));
    }

    #[test]
    fn q_matrix_row_mapping() {
        let vocab = ["k1".to_string(), "k2".to_string(), "k3".to_string()];
        let q = QMatrix::from_pairs([("e1", Some("k1")), ("e1", Some("k2"))], Some(&vocab)).unwrap();
        assert_eq!(q.row(0), &[true, true, false]);
    }

    #[test]
    fn q_matrix_errors() {
        let err = QMatrix::from_pairs([("e1", Some("k1")), ("e5", None::<&str>)], None).unwrap_err();
        assert_eq!(err, Error::ExerciseWithoutSkill("e5".into()));
        assert_eq!(err.to_string(), "exercise with no skill: e5");
        let vocab = ["k1".to_string()];
        let err = QMatrix::from_pairs([("e1", Some("k9"))], Some(&vocab)).unwrap_err();
        assert_eq!(err, Error::UnknownSkill("k9".into()));
    }

    #[test]
    fn q_matrix_ids_are_sorted_and_weighted() {
        let q = q_simple();
        assert_eq!(q.exercise_ids(), ["e1", "e2", "e3"]);
        assert_eq!(q.skill_ids(), ["k1", "k2", "k3"]);
        let w = q.weighted(&[0.7, 0.2, 0.1]).unwrap();
        assert_eq!(w.row(0), &[0.7, 0.2, 0.0]);
        assert_eq!(w.row(1), &[0.0, 0.0, 0.1]);
        for e in 0..q.num_exercises() {
            assert!(q.row_sum(e) >= 1);
        }
    }

    #[test]
    fn unknown_exercise_in_log() {
        let log = InteractionLog::from_records(alloc::vec![rec("s", "zz", true, 1)]).unwrap();
        assert_eq!(Corpus::new(&log, q_simple()).unwrap_err(), Error::UnknownExercise("zz".into()));
    }

    fn log_with(n: usize) -> InteractionLog {
        InteractionLog::from_records((0..n).map(|i| rec("s", &alloc::format!("e{i}"), i % 2 == 0, i as i64)).collect())
            .unwrap()
    }

    #[test]
    fn split_arithmetic() {
        let split = split_holdout(&log_with(10), "s", 0.5, 0).unwrap();
        assert_eq!((split.observed.len(), split.heldout.len()), (5, 5));
        assert!(split.observed.last().unwrap().timestamp < split.heldout[0].timestamp);

        let split = split_holdout(&log_with(7), "s", 0.4, 1).unwrap();
        // reference: ceil(0.6 * 7) = ceil(4.2) = 5
        let reference = (0..=7).find(|&k| k as f64 >= 0.6 * 7.0 - 1e-12).unwrap();
        assert_eq!(reference, 5);
        assert_eq!((split.observed.len(), split.heldout.len()), (5, 2));
    }

    #[test]
    fn split_errors() {
        assert!(matches!(split_holdout(&log_with(10), "s", 0.0, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(split_holdout(&log_with(10), "nobody", 0.5, 0), Err(Error::UnknownStudent(_))));
        assert!(matches!(split_holdout(&log_with(1), "s", 0.5, 0), Err(Error::InsufficientRecords { .. })));
        assert!(matches!(split_holdout(&log_with(10), "s", 0.01, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn observed_count_absorbs_rounding() {
        assert_eq!(observed_count(10, 0.7), Some(3));
        assert_eq!(observed_count(10, 0.2), Some(8));
        assert_eq!(observed_count(10, 0.0), None);
    }
}
