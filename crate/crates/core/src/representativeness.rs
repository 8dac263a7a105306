//! Coverage, response and diversity terms used to pick the next question.
//!
//! ```text
//! ECov(c)   = 2σ(c) − 1              (saturating, default)
//!           = c·σ(c)                  (literal)
//! EWKC(Q_T) = Σ_κ W_κ ECov(cnt(κ)) / Σ_κ W_κ
//! R(q)      = α1 EWKC(Q_T ∪ {q}) + α2 P_n(s, q) + α3 d̄(q, Q_T)
//! ```
//!
//! `d̄` is the mean dissimilarity from `q` to the tested questions, 1 when none are tested.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::cdm::{DiagnosisModel, Query};
use crate::data::{Corpus, QMatrix};
use crate::{math, Error, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EcovVariant {
    #[default]
    Saturating,
    Literal,
}

pub fn ecov(cnt: u32, variant: EcovVariant) -> f64 {
    let c = cnt as f64;
    match variant {
        EcovVariant::Saturating => 2.0 * math::sigmoid(c) - 1.0,
        EcovVariant::Literal => c * math::sigmoid(c),
    }
}

/// Fraction of skills appearing in at least one exercise of `q_set`.
pub fn skc(q_set: &[usize], q: &QMatrix) -> f64 {
    crate::metrics::coverage(q_set, q)
}

pub fn ewkc(counts: &[u32], weights: &[f64], variant: EcovVariant) -> Result<f64> {
    if counts.len() != weights.len() {
        return Err(Error::DimensionMismatch { context: "ewkc", expected: (1, weights.len()), found: (1, counts.len()) });
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("skill weights sum to zero".into()));
    }
    Ok(counts.iter().zip(weights).map(|(&c, &w)| w * ecov(c, variant)).sum::<f64>() / total)
}

/// Per-skill counts over the tested set together with the skill weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageState {
    counts: Vec<u32>,
    weights: Vec<f64>,
    variant: EcovVariant,
}

impl CoverageState {
    pub fn new(weights: Vec<f64>, variant: EcovVariant) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("skill weights must be finite and nonnegative".into()));
        }
        if !(weights.iter().sum::<f64>() > 0.0) {
            return Err(Error::InvalidArgument("skill weights sum to zero".into()));
        }
        Ok(CoverageState { counts: vec![0; weights.len()], weights, variant })
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn add(&mut self, exercise: usize, q: &QMatrix) {
        for s in q.skills_of(exercise) {
            self.counts[s] += 1;
        }
    }

    pub fn ewkc(&self) -> f64 {
        ewkc(&self.counts, &self.weights, self.variant).expect("weights validated at construction")
    }

    /// EWKC after hypothetically adding `exercise`.
    pub fn ewkc_with(&self, exercise: usize, q: &QMatrix) -> f64 {
        let mut counts = self.counts.clone();
        for s in q.skills_of(exercise) {
            counts[s] += 1;
        }
        ewkc(&counts, &self.weights, self.variant).expect("weights validated at construction")
    }
}

/// `|S| × N_e` predicted correctness for every logged (student, exercise) pair, zero elsewhere.
/// Each cell is predicted with the student's earlier exercises as history.
pub fn response_matrix<M: DiagnosisModel + ?Sized>(model: &M, corpus: &Corpus) -> Result<Matrix> {
    let mut out = Matrix::zeros(corpus.num_students(), corpus.num_exercises());
    for (s, seq) in corpus.sequences.iter().enumerate() {
        let exercises: Vec<usize> = seq.iter().map(|r| r.exercise).collect();
        let batch: Vec<Query<'_>> = exercises.iter().enumerate().map(|(i, &e)| Query::new(s, e, &exercises[..i])).collect();
        for (&e, p) in exercises.iter().zip(model.predict_batch(&batch)?) {
            out[(s, e)] = p;
        }
    }
    Ok(out)
}

/// `1 − cosine(e*_i, e*_j)` for every pair.
pub fn dissimilarity(e_star: &Matrix) -> Result<Matrix> {
    let n = e_star.rows();
    if let Some(i) = (0..n).find(|&i| math::l2_norm(e_star.row(i)) == 0.0) {
        return Err(Error::ZeroNorm(format!("exercise embedding #{i}")));
    }
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let c = math::cosine(e_star.row(i), e_star.row(j)).expect("norms checked above");
            let d = (1.0 - c).clamp(0.0, 2.0);
            out[(i, j)] = d;
            out[(j, i)] = d;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alphas {
    pub coverage: f64,
    pub response: f64,
    pub diversity: f64,
}

impl Default for Alphas {
    fn default() -> Self {
        Alphas { coverage: 0.7, response: 0.15, diversity: 0.15 }
    }
}

/// The three weighted terms of one candidate's score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreBreakdown {
    pub exercise: usize,
    pub coverage: f64,
    pub response: f64,
    pub diversity: f64,
    pub total: f64,
}

pub struct ScoreContext<'a> {
    pub q: &'a QMatrix,
    pub state: &'a CoverageState,
    pub tested: &'a [usize],
    pub dissimilarity: &'a Matrix,
    pub alphas: Alphas,
}

/// Scores `candidate` given its response probability `p_n` for the current student.
pub fn representativeness_score(candidate: usize, p_n: f64, ctx: &ScoreContext<'_>) -> Result<ScoreBreakdown> {
    if ctx.tested.contains(&candidate) {
        return Err(Error::InvalidArgument(format!("exercise #{candidate} is already tested")));
    }
    if candidate >= ctx.q.num_exercises() {
        return Err(Error::UnknownExercise(format!("#{candidate}")));
    }
    let diversity = if ctx.tested.is_empty() {
        1.0
    } else {
        ctx.tested.iter().map(|&t| ctx.dissimilarity[(candidate, t)]).sum::<f64>() / ctx.tested.len() as f64
    };
    let a = ctx.alphas;
    let coverage = a.coverage * ctx.state.ewkc_with(candidate, ctx.q);
    let response = a.response * p_n;
    let diversity = a.diversity * diversity;
    Ok(ScoreBreakdown { exercise: candidate, coverage, response, diversity, total: coverage + response + diversity })
}

/// Index of the best breakdown; ties go to the lower exercise id.
pub fn select_representative(scored: &[ScoreBreakdown]) -> Result<usize> {
    scored
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.total.total_cmp(&b.total).then(b.exercise.cmp(&a.exercise)))
        .map(|(i, _)| i)
        .ok_or(Error::EmptyInput("candidate set"))
}

/// Greedy EWKC maximization over `candidates` with a budget; ties to the lower id.
pub fn greedy_ewkc(candidates: &[usize], budget: usize, q: &QMatrix, weights: &[f64], variant: EcovVariant) -> Result<Vec<usize>> {
    let mut state = CoverageState::new(weights.to_vec(), variant)?;
    let mut pool: Vec<usize> = candidates.to_vec();
    pool.sort_unstable();
    pool.dedup();
    let mut chosen = Vec::new();
    while chosen.len() < budget && !pool.is_empty() {
        let (best, _) = pool
            .iter()
            .enumerate()
            .map(|(i, &e)| (i, state.ewkc_with(e, q)))
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        let e = pool.remove(best);
        state.add(e, q);
        chosen.push(e);
    }
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdm::IrtModel;
    use crate::data::Response;
    use alloc::string::{String, ToString};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sigma(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn q4() -> QMatrix {
        // e0 {a}, e1 {b}, e2 {a, c}, e3 {d}
        QMatrix::from_pairs(
            [("e0", Some("a")), ("e1", Some("b")), ("e2", Some("a")), ("e2", Some("c")), ("e3", Some("d"))],
            None,
        )
        .unwrap()
    }

    #[test]
    fn ecov_values() {
        assert_eq!(ecov(0, EcovVariant::Saturating), 0.0);
        assert_eq!(ecov(0, EcovVariant::Literal), 0.0);
        assert!((ecov(1, EcovVariant::Saturating) - 0.462_117).abs() < 1e-6);
        assert!((ecov(2, EcovVariant::Literal) - 2.0 * sigma(2.0)).abs() < 1e-15);
        assert!(ecov(2, EcovVariant::Literal) > 1.76);
        for c in 0..30 {
            let (a, b, d) = (ecov(c, EcovVariant::Saturating), ecov(c + 1, EcovVariant::Saturating), ecov(c + 2, EcovVariant::Saturating));
            assert!(a < 1.0 && b > a && (d - b) - (b - a) <= 1e-15);
        }
    }

    #[test]
    fn skc_cases() {
        let q = q4();
        assert_eq!(skc(&[0, 1], &q), 0.5);
        assert_eq!(skc(&[], &q), 0.0);
        assert_eq!(skc(&[1, 2, 3], &q), 1.0);
    }

    #[test]
    fn ewkc_cases() {
        let s = EcovVariant::Saturating;
        let counts = [1, 0, 2];
        let uniform = ewkc(&counts, &[1.0; 3], s).unwrap();
        let plain = (ecov(1, s) + ecov(0, s) + ecov(2, s)) / 3.0;
        assert!((uniform - plain).abs() < 1e-15);
        let hand = (0.7 * (2.0 * sigma(1.0) - 1.0) + 0.1 * (2.0 * sigma(2.0) - 1.0)) / 1.0;
        assert!((ewkc(&counts, &[0.7, 0.2, 0.1], s).unwrap() - hand).abs() < 1e-15);
        assert_eq!(ewkc(&[5, 0], &[0.0, 1.0], s).unwrap(), 0.0);
        assert!(ewkc(&[1], &[0.0], s).is_err());
        assert!(CoverageState::new(vec![0.0, 0.0], s).is_err());
    }

    #[test]
    fn dissimilarity_cases() {
        let e = Matrix::from_rows(&[&[1.0, 0.0], &[2.0, 0.0], &[0.0, 3.0], &[-1.0, 0.0]]);
        let d = dissimilarity(&e).unwrap();
        assert!(d[(0, 1)].abs() < 1e-15);
        assert!((d[(0, 2)] - 1.0).abs() < 1e-15);
        assert!((d[(0, 3)] - 2.0).abs() < 1e-15);
        for i in 0..4 {
            assert_eq!(d[(i, i)], 0.0);
            for j in 0..4 {
                assert_eq!(d[(i, j)], d[(j, i)]);
            }
        }
        let zero = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]);
        assert!(matches!(dissimilarity(&zero), Err(Error::ZeroNorm(m)) if m.contains("#1")));
    }

    #[test]
    fn response_matrix_zero_fill() {
        let q = q4();
        let r = |exercise| Response { exercise, correct: true };
        let c = Corpus::from_sequences(q, vec!["s0".to_string(), "s1".to_string()], vec![vec![r(0), r(2)], vec![r(3)]]);
        let m = IrtModel::new(2, 4, &mut ChaCha8Rng::seed_from_u64(0));
        let mut m = m;
        for j in 0..4 {
            m.set_item(j, 0.0, 0.0);
        }
        let p = response_matrix(&m, &c).unwrap();
        assert_eq!(p.shape(), (2, 4));
        assert_eq!(p.row(0), &[0.5, 0.0, 0.5, 0.0]);
        assert_eq!(p.row(1), &[0.0, 0.0, 0.0, 0.5]);
    }

    fn ctx<'a>(q: &'a QMatrix, state: &'a CoverageState, tested: &'a [usize], d: &'a Matrix, alphas: Alphas) -> ScoreContext<'a> {
        ScoreContext { q, state, tested, dissimilarity: d, alphas }
    }

    #[test]
    fn score_hand_case_empty_tested() {
        let q = q4();
        let state = CoverageState::new(vec![0.4, 0.3, 0.2, 0.1], EcovVariant::Saturating).unwrap();
        let d = Matrix::zeros(4, 4);
        let c = ctx(&q, &state, &[], &d, Alphas::default());
        let e1 = 2.0 * sigma(1.0) - 1.0;
        let s0 = representativeness_score(0, 0.8, &c).unwrap();
        let s2 = representativeness_score(2, 0.3, &c).unwrap();
        assert!((s0.total - (0.7 * 0.4 * e1 + 0.15 * 0.8 + 0.15)).abs() < 1e-15);
        assert!((s2.total - (0.7 * 0.6 * e1 + 0.15 * 0.3 + 0.15)).abs() < 1e-15);
        assert_eq!(s0.diversity, s2.diversity);
        let pure = ctx(&q, &state, &[], &d, Alphas { coverage: 1.0, response: 0.0, diversity: 0.0 });
        assert_eq!(representativeness_score(0, 0.8, &pure).unwrap().total, state.ewkc_with(0, &q));
    }

    #[test]
    fn new_high_weight_skill_beats_repeat() {
        let q = q4();
        let mut state = CoverageState::new(vec![0.1, 0.9, 0.5, 0.5], EcovVariant::Saturating).unwrap();
        state.add(0, &q);
        let d = Matrix::filled(4, 4, 0.5);
        let c = ctx(&q, &state, &[0], &d, Alphas::default());
        let scored: Vec<ScoreBreakdown> = [1, 2].iter().map(|&e| representativeness_score(e, 0.5, &c).unwrap()).collect();
        assert_eq!(scored[select_representative(&scored).unwrap()].exercise, 1);
        assert!(representativeness_score(0, 0.5, &c).is_err());
    }

    #[test]
    fn selection_ties_and_singleton() {
        let b = |exercise, total| ScoreBreakdown { exercise, coverage: 0.0, response: 0.0, diversity: 0.0, total };
        assert_eq!(select_representative(&[b(7, 0.1)]).unwrap(), 0);
        let tied = [b(5, 0.4), b(2, 0.4), b(9, 0.1)];
        assert_eq!(tied[select_representative(&tied).unwrap()].exercise, 2);
        assert!(select_representative(&[]).is_err());
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (QMatrix, Vec<f64>, usize) {
        let n = rng.gen_range(2..=8);
        let k = rng.gen_range(1..=6);
        let mut pairs: Vec<(String, Option<String>)> = Vec::new();
        for e in 0..n {
            let first = rng.gen_range(0..k);
            pairs.push((format!("e{e}"), Some(format!("k{first}"))));
            for s in 0..k {
                if s != first && rng.gen_bool(0.3) {
                    pairs.push((format!("e{e}"), Some(format!("k{s}"))));
                }
            }
        }
        let vocab: Vec<String> = (0..k).map(|s| format!("k{s}")).collect();
        let q = QMatrix::from_pairs(pairs, Some(&vocab)).unwrap();
        let w = (0..k).map(|_| 1.0 - rng.gen::<f64>()).collect();
        (q, w, rng.gen_range(1..=3))
    }

    fn brute_best(q: &QMatrix, w: &[f64], budget: usize) -> f64 {
        let n = q.num_exercises();
        let mut best: f64 = 0.0;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize > budget {
                continue;
            }
            let mut st = CoverageState::new(w.to_vec(), EcovVariant::Saturating).unwrap();
            for e in 0..n {
                if mask & (1 << e) != 0 {
                    st.add(e, q);
                }
            }
            best = best.max(st.ewkc());
        }
        best
    }

    #[test]
    fn greedy_within_bound_of_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let (q, w, budget) = random_instance(&mut rng);
            let all: Vec<usize> = (0..q.num_exercises()).collect();
            let chosen = greedy_ewkc(&all, budget, &q, &w, EcovVariant::Saturating).unwrap();
            let mut st = CoverageState::new(w.clone(), EcovVariant::Saturating).unwrap();
            for &e in &chosen {
                st.add(e, &q);
            }
            assert!(st.ewkc() >= (1.0 - 1.0 / core::f64::consts::E) * brute_best(&q, &w, budget) - 1e-12);
        }
    }

    proptest! {
        #[test]
        fn ewkc_is_monotone(counts in proptest::collection::vec(0u32..6, 1..6), seed in 0u64..1000, extra in 0usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w: Vec<f64> = counts.iter().map(|_| rng.gen::<f64>()).collect();
            prop_assume!(w.iter().sum::<f64>() > 0.0);
            let before = ewkc(&counts, &w, EcovVariant::Saturating).unwrap();
            let mut more = counts.clone();
            let i = extra % more.len();
            more[i] += 1;
            prop_assert!(ewkc(&more, &w, EcovVariant::Saturating).unwrap() >= before);
            prop_assert!(before < 1.0);
        }
    }
}
