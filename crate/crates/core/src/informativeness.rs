//! Expected model change (EMC) and top-K candidate selection.
//!
//! For a binary answer the expectation is exact:
//! `EMC = p ‖g(1)‖ + (1 − p) ‖g(0)‖`, with `g(y)` the gradient of the single-record
//! loss with respect to the student's own parameters.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::cdm::{student_gradient, DiagnosisModel, Query};
use crate::{math, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InformativenessScore {
    pub exercise: usize,
    pub emc: f64,
}

/// Untested, candidate and tested question sets of one session.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QuestionPartition {
    pub q_u: BTreeSet<usize>,
    pub q_c: Vec<usize>,
    pub q_t: Vec<usize>,
}

impl QuestionPartition {
    pub fn new(untested: impl IntoIterator<Item = usize>) -> Self {
        QuestionPartition { q_u: untested.into_iter().collect(), q_c: Vec::new(), q_t: Vec::new() }
    }

    /// Moves `exercise` from the untested set to the tested list and clears the candidates.
    pub fn mark_tested(&mut self, exercise: usize) -> Result<()> {
        if !self.q_u.remove(&exercise) {
            return Err(Error::InvalidArgument(alloc::format!("exercise #{exercise} is not untested")));
        }
        self.q_c.clear();
        self.q_t.push(exercise);
        Ok(())
    }
}

pub fn expected_model_change<M: DiagnosisModel + ?Sized>(
    model: &M,
    student: usize,
    exercise: usize,
    history: &[usize],
) -> Result<InformativenessScore> {
    let q = Query::new(student, exercise, history);
    let p = model.predict(&q)?;
    let g1 = math::l2_norm(&student_gradient(model, &q, true)?);
    let g0 = math::l2_norm(&student_gradient(model, &q, false)?);
    Ok(InformativenessScore { exercise, emc: p * g1 + (1.0 - p) * g0 })
}

pub fn score_untested<M: DiagnosisModel + ?Sized>(
    model: &M,
    student: usize,
    untested: impl IntoIterator<Item = usize>,
    history: &[usize],
) -> Result<Vec<InformativenessScore>> {
    untested.into_iter().map(|e| expected_model_change(model, student, e, history)).collect()
}

/// The `k` highest-EMC exercises, ties to the lower exercise id.
pub fn select_candidates(scores: &[InformativenessScore], k: usize) -> Result<Vec<usize>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("informativeness scores"));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("top-k must be at least 1".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.emc.total_cmp(&a.emc).then(a.exercise.cmp(&b.exercise)));
    Ok(sorted.into_iter().take(k).map(|s| s.exercise).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdm::{IrtModel, NacdConfig, NacdModel};
    use crate::data::{Corpus, QMatrix, Response};
    use alloc::string::ToString;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn irt() -> IrtModel {
        let mut m = IrtModel::new(1, 4, &mut ChaCha8Rng::seed_from_u64(0));
        m.set_item(0, 1.0, 0.0);
        m.set_item(1, 2.0, 0.0);
        m.set_item(2, 1.0, 1.5);
        m.set_item(3, 0.5, -1.0);
        m
    }

    #[test]
    fn irt_closed_form() {
        let mut m = irt();
        m.set_theta(0, 0.3);
        for j in 0..4 {
            let (a, _) = m.item(j);
            let p = m.probability(0, j).unwrap();
            let s = expected_model_change(&m, 0, j, &[]).unwrap();
            assert!((s.emc - a * 2.0 * p * (1.0 - p)).abs() < 1e-12);
            assert!(s.emc >= 0.0);
        }
    }

    #[test]
    fn higher_discrimination_wins_at_theta_equal_b() {
        let m = irt();
        let e0 = expected_model_change(&m, 0, 0, &[]).unwrap().emc;
        let e1 = expected_model_change(&m, 0, 1, &[]).unwrap().emc;
        assert!(e1 > e0);
        assert!((e1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn emc_ranking_equals_uncertainty_ranking_at_fixed_a() {
        let mut m = IrtModel::new(1, 6, &mut ChaCha8Rng::seed_from_u64(0));
        for (j, b) in [-2.0, -0.5, 0.1, 0.4, 1.0, 3.0].into_iter().enumerate() {
            m.set_item(j, 1.3, b);
        }
        m.set_theta(0, 0.2);
        let scores = score_untested(&m, 0, 0..6, &[]).unwrap();
        let by_emc = select_candidates(&scores, 6).unwrap();
        let mut by_unc: Vec<usize> = (0..6).collect();
        let u = |j: usize| {
            let p = m.probability(0, j).unwrap();
            p * (1.0 - p)
        };
        by_unc.sort_by(|&a, &b| u(b).total_cmp(&u(a)).then(a.cmp(&b)));
        assert_eq!(by_emc, by_unc);
    }

    #[test]
    fn scoring_does_not_mutate() {
        let m = irt();
        let before = m.clone();
        score_untested(&m, 0, 0..4, &[]).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn frozen_student_parameters_give_zero() {
        let q = QMatrix::from_pairs([("e0", Some("k0")), ("e1", Some("k1"))], None).unwrap();
        let c = Corpus::from_sequences(q, vec!["s".to_string()], vec![vec![Response { exercise: 0, correct: true }]]);
        let cfg = NacdConfig {
            attention_dim: 2,
            hidden1: 2,
            hidden2: 2,
            use_student_factor: false,
            embeddings: None,
            ..NacdConfig::default()
        };
        let m = NacdModel::new(&c, cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(expected_model_change(&m, 0, 1, &[0]).unwrap().emc, 0.0);
    }

    #[test]
    fn candidate_selection_contract() {
        let s = |exercise, emc| InformativenessScore { exercise, emc };
        let scores = [s(4, 0.5), s(2, 0.9), s(7, 0.5), s(1, 0.1), s(3, 0.5)];
        assert_eq!(select_candidates(&scores, 3).unwrap(), vec![2, 3, 4]);
        assert_eq!(select_candidates(&scores, 10).unwrap().len(), 5);
        assert!(select_candidates(&[], 5).is_err());
        assert!(select_candidates(&scores, 0).is_err());
    }

    #[test]
    fn partition_moves() {
        let mut p = QuestionPartition::new([3, 1, 2]);
        p.q_c = vec![1, 2];
        p.mark_tested(2).unwrap();
        assert_eq!(p.q_u.iter().copied().collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(p.q_t, vec![2]);
        assert!(p.q_c.is_empty());
        assert!(p.mark_tested(2).is_err());
    }
}
