//! Cognitive diagnosis models and their training / replay machinery.
//!
//! Three models share the [`DiagnosisModel`] trait:
//!
//! * [`IrtModel`]: `p = σ(a_j (θ_s − b_j))` with `a_j ≥ 0`,
//! * [`MirtModel`]: `p = σ(a_j · θ_s − b_j)`,
//! * [`NacdModel`]: an exercise factor (relative-position attention over the
//!   student's history) plus a student factor (proficiency minus slipping, gated by
//!   guessing), combined as `p = σ(F^S W_s + F^E W_e + b_p)`.
//!
//! Every model marks some parameters as student-owned (one row per student). Replay
//! updates and expected model change only look at those rows.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::data::{Corpus, QMatrix, Response};
use crate::embeddings::{build_relation_matrices, xavier, EmbeddingConfig, EmbeddingNet, EmbeddingSet};
use crate::{math, Error, Matrix, Result};

/// Predictions are kept this far from 0 and 1.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    Irt,
    Mirt,
    Nacd,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Irt => "irt",
            ModelKind::Mirt => "mirt",
            ModelKind::Nacd => "nacd",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "irt" => Ok(ModelKind::Irt),
            "mirt" => Ok(ModelKind::Mirt),
            "nacd" => Ok(ModelKind::Nacd),
            _ => Err(Error::InvalidArgument(format!("unknown model kind {s}"))),
        }
    }
}

/// One prediction request. `history` is the student's earlier exercises, oldest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Query<'h> {
    pub student: usize,
    pub exercise: usize,
    pub history: &'h [usize],
}

impl<'h> Query<'h> {
    pub fn new(student: usize, exercise: usize, history: &'h [usize]) -> Self {
        Query { student, exercise, history }
    }
}

pub enum Mode<'r> {
    Eval,
    Train { dropout: f64, rng: &'r mut ChaCha8Rng },
}

pub trait DiagnosisModel {
    fn kind(&self) -> ModelKind;
    fn num_students(&self) -> usize;
    fn num_exercises(&self) -> usize;
    fn params(&self) -> &ParamStore;
    /// Mutable access to every parameter. Drops any cached derived values.
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Parameters holding one row per student.
    fn student_params(&self) -> Vec<ParamId>;
    /// Records a `B × 1` logit column for `batch`.
    fn logits(&self, tape: &mut Tape<'_>, batch: &[Query<'_>], mode: &mut Mode<'_>) -> Result<Var>;

    /// Row `student` of a student-owned parameter. Cached values stay valid.
    fn student_row_mut(&mut self, id: ParamId, student: usize) -> &mut [f64];

    /// Called after each optimizer step (projections onto constraints).
    fn after_step(&mut self) {}

    /// Rebuilds caches after a round of training.
    fn refresh(&mut self) -> Result<()> {
        Ok(())
    }

    fn check(&self, q: &Query<'_>) -> Result<()> {
        if q.student >= self.num_students() {
            return Err(Error::UnknownStudent(format!("#{}", q.student)));
        }
        if let Some(&e) = core::iter::once(&q.exercise).chain(q.history).find(|&&e| e >= self.num_exercises()) {
            return Err(Error::UnknownExercise(format!("#{e}")));
        }
        Ok(())
    }

    fn predict_batch(&self, batch: &[Query<'_>]) -> Result<Vec<f64>> {
        tape_predict_batch(self, batch)
    }

    fn predict(&self, query: &Query<'_>) -> Result<f64> {
        Ok(self.predict_batch(core::slice::from_ref(query))?[0])
    }

    /// See [`student_gradient`]. Models with a closed form override this.
    fn student_gradient(&self, query: &Query<'_>, correct: bool) -> Result<Vec<f64>> {
        tape_student_gradient(self, query, correct)
    }

    /// The part of each query's logit that student-owned parameters cannot change, when
    /// the model separates it out. Pair with [`DiagnosisModel::predict_frozen`] to
    /// re-predict cheaply while only student rows move.
    fn frozen_logits(&self, _batch: &[Query<'_>]) -> Result<Option<Vec<f64>>> {
        Ok(None)
    }

    /// Prediction reusing a value from [`DiagnosisModel::frozen_logits`] for the same query.
    fn predict_frozen(&self, query: &Query<'_>, _frozen: f64) -> Result<f64> {
        self.predict(query)
    }

    /// Whether a student update on exercise `a` can move the prediction for exercise `b`.
    fn coupled(&self, _a: usize, _b: usize) -> bool {
        true
    }
}

/// Evaluation-mode predictions through the tape.
pub fn tape_predict_batch<M: DiagnosisModel + ?Sized>(model: &M, batch: &[Query<'_>]) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    let mut tape = Tape::new(model.params());
    let z = model.logits(&mut tape, batch, &mut Mode::Eval)?;
    let out = tape.value(z);
    if !out.all_finite() {
        return Err(Error::NonFinite { context: String::from("prediction logits") });
    }
    Ok(out.as_slice().iter().map(|&z| clamp_prob(math::sigmoid(z))).collect())
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

pub fn clip(x: i64, k: i64) -> i64 {
    x.clamp(-k, k)
}

/// Gradient of one record's cross-entropy with respect to the querying student's rows,
/// flattened in `student_params` order. The model is not touched.
pub fn student_gradient<M: DiagnosisModel + ?Sized>(model: &M, query: &Query<'_>, correct: bool) -> Result<Vec<f64>> {
    model.student_gradient(query, correct)
}

/// [`student_gradient`] through the tape.
pub fn tape_student_gradient<M: DiagnosisModel + ?Sized>(model: &M, query: &Query<'_>, correct: bool) -> Result<Vec<f64>> {
    let mut tape = Tape::new(model.params());
    let z = model.logits(&mut tape, core::slice::from_ref(query), &mut Mode::Eval)?;
    let loss = tape.bce_with_logits(z, &[if correct { 1.0 } else { 0.0 }]);
    let grads = tape.backward(loss)?;
    let mut out = Vec::new();
    for id in model.student_params() {
        let width = model.params().get(id).cols();
        match grads.get(id) {
            Some(g) => out.extend_from_slice(g.row(query.student)),
            None => out.extend(core::iter::repeat(0.0).take(width)),
        }
    }
    Ok(out)
}

/// `steps` plain gradient steps of size `lr` on one record, student rows only.
pub fn update_incremental<M: DiagnosisModel + ?Sized>(
    model: &mut M,
    query: &Query<'_>,
    correct: bool,
    steps: usize,
    lr: f64,
) -> Result<()> {
    model.check(query)?;
    let ids = model.student_params();
    for _ in 0..steps {
        let g = student_gradient(model, query, correct)?;
        let mut offset = 0;
        for &id in &ids {
            let row = model.student_row_mut(id, query.student);
            for (w, d) in row.iter_mut().zip(&g[offset..]) {
                *w -= lr * d;
            }
            offset += row.len();
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub dropout: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 0.002, epochs: 100, dropout: 0.2, batch_size: 128, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

struct Adam {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(store: &ParamStore) -> Self {
        let zeros = |(_, _, m): (ParamId, &str, &Matrix)| Matrix::zeros(m.rows(), m.cols());
        Adam { m: store.iter().map(zeros).collect(), v: store.iter().map(zeros).collect(), t: 0 }
    }

    fn step(&mut self, store: &mut ParamStore, grads: &crate::autodiff::Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(Self::B1, self.t as f64);
        let c2 = 1.0 - libm::pow(Self::B2, self.t as f64);
        for (id, g) in grads.iter() {
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            let w = store.get_mut(id).as_mut_slice();
            for (((w, m), v), &g) in
                w.iter_mut().zip(m.as_mut_slice()).zip(v.as_mut_slice()).zip(g.as_slice())
            {
                *m = Self::B1 * *m + (1.0 - Self::B1) * g;
                *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
                *w -= lr * (*m / c1) / (math::sqrt(*v / c2) + Self::EPS);
            }
        }
    }
}

/// Per-student exercise sequences of a corpus.
pub fn exercise_sequences(corpus: &Corpus) -> Vec<Vec<usize>> {
    corpus.sequences.iter().map(|s| s.iter().map(|r| r.exercise).collect()).collect()
}

/// Minimizes mean binary cross-entropy with Adam over shuffled mini-batches.
/// Returns the mean training loss of every epoch.
pub fn train<M: DiagnosisModel + ?Sized>(model: &mut M, corpus: &Corpus, cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if corpus.num_records() == 0 {
        return Err(Error::EmptyInput("training log"));
    }
    if corpus.num_students() != model.num_students() || corpus.num_exercises() != model.num_exercises() {
        return Err(Error::DimensionMismatch {
            context: "training corpus",
            expected: (model.num_students(), model.num_exercises()),
            found: (corpus.num_students(), corpus.num_exercises()),
        });
    }
    let seqs = exercise_sequences(corpus);
    let mut records: Vec<(usize, usize, bool)> = corpus.flat_records().into_iter().map(|(s, p, r)| (s, p, r.correct)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.params());
    let mut losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        records.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in records.chunks(cfg.batch_size) {
            let batch: Vec<Query<'_>> = chunk.iter().map(|&(s, p, _)| Query::new(s, seqs[s][p], &seqs[s][..p])).collect();
            let targets: Vec<f64> = chunk.iter().map(|&(_, _, y)| if y { 1.0 } else { 0.0 }).collect();
            let grads = {
                let mut tape = Tape::new(model.params());
                let mut mode = Mode::Train { dropout: cfg.dropout, rng: &mut rng };
                let z = model.logits(&mut tape, &batch, &mut mode).map_err(|_| Error::Divergence { epoch })?;
                let loss = tape.bce_with_logits(z, &targets);
                let lv = tape.value(loss)[(0, 0)];
                if !lv.is_finite() {
                    return Err(Error::Divergence { epoch });
                }
                total += lv * chunk.len() as f64;
                tape.backward(loss).map_err(|_| Error::Divergence { epoch })?
            };
            adam.step(model.params_mut(), &grads, cfg.learning_rate);
            model.after_step();
        }
        let mean = total / records.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        losses.push(mean);
    }
    model.refresh()?;
    Ok(losses)
}

/// `(probability, label)` for every held-out response, predicted with the observed
/// exercises and the earlier held-out exercises as history.
pub fn heldout_predictions<M: DiagnosisModel + ?Sized>(
    model: &M,
    observed: &Corpus,
    heldout: &[Vec<Response>],
) -> Result<Vec<(f64, bool)>> {
    let mut out = Vec::new();
    for (s, held) in heldout.iter().enumerate() {
        if held.is_empty() {
            continue;
        }
        let mut history: Vec<usize> = observed.sequences[s].iter().map(|r| r.exercise).collect();
        let start = history.len();
        history.extend(held.iter().map(|r| r.exercise));
        let batch: Vec<Query<'_>> =
            held.iter().enumerate().map(|(h, r)| Query::new(s, r.exercise, &history[..start + h])).collect();
        let probs = model.predict_batch(&batch)?;
        out.extend(probs.into_iter().zip(held.iter().map(|r| r.correct)));
    }
    Ok(out)
}

fn index_column(tape: &mut Tape<'_>, param: ParamId, idx: &[usize]) -> Var {
    let p = tape.param(param);
    tape.gather_rows(p, idx)
}

// ---------------------------------------------------------------- IRT

#[derive(Debug, Clone, PartialEq)]
pub struct IrtModel {
    store: ParamStore,
    theta: ParamId,
    discrimination: ParamId,
    difficulty: ParamId,
}

impl IrtModel {
    pub fn new(num_students: usize, num_exercises: usize, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let theta = store.add("irt.theta", Matrix::zeros(num_students, 1));
        let discrimination = store.add("irt.a", Matrix::filled(num_exercises, 1, 1.0));
        let b = (0..num_exercises).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let difficulty = store.add("irt.b", Matrix::from_vec(num_exercises, 1, b));
        IrtModel { store, theta, discrimination, difficulty }
    }

    pub fn from_store(store: ParamStore) -> Result<Self> {
        let id = |n: &str| store.id(n).ok_or(Error::InvalidArgument(format!("missing parameter {n}")));
        let (theta, discrimination, difficulty) = (id("irt.theta")?, id("irt.a")?, id("irt.b")?);
        Ok(IrtModel { store, theta, discrimination, difficulty })
    }

    pub fn theta(&self, s: usize) -> f64 {
        self.store.get(self.theta)[(s, 0)]
    }

    pub fn set_theta(&mut self, s: usize, v: f64) {
        self.store.get_mut(self.theta)[(s, 0)] = v;
    }

    pub fn set_item(&mut self, j: usize, a: f64, b: f64) {
        self.store.get_mut(self.discrimination)[(j, 0)] = a.max(0.0);
        self.store.get_mut(self.difficulty)[(j, 0)] = b;
    }

    pub fn item(&self, j: usize) -> (f64, f64) {
        (self.store.get(self.discrimination)[(j, 0)], self.store.get(self.difficulty)[(j, 0)])
    }

    pub fn probability(&self, s: usize, j: usize) -> Result<f64> {
        self.check(&Query::new(s, j, &[]))?;
        let (a, b) = self.item(j);
        Ok(clamp_prob(math::sigmoid(a * (self.theta(s) - b))))
    }
}

impl DiagnosisModel for IrtModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Irt
    }
    fn num_students(&self) -> usize {
        self.store.get(self.theta).rows()
    }
    fn num_exercises(&self) -> usize {
        self.store.get(self.difficulty).rows()
    }
    fn params(&self) -> &ParamStore {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
    fn student_params(&self) -> Vec<ParamId> {
        vec![self.theta]
    }
    fn student_row_mut(&mut self, id: ParamId, student: usize) -> &mut [f64] {
        self.store.get_mut(id).row_mut(student)
    }
    fn after_step(&mut self) {
        for a in self.store.get_mut(self.discrimination).as_mut_slice() {
            *a = a.max(0.0);
        }
    }
    fn logits(&self, tape: &mut Tape<'_>, batch: &[Query<'_>], _mode: &mut Mode<'_>) -> Result<Var> {
        for q in batch {
            self.check(q)?;
        }
        let s: Vec<usize> = batch.iter().map(|q| q.student).collect();
        let e: Vec<usize> = batch.iter().map(|q| q.exercise).collect();
        let th = index_column(tape, self.theta, &s);
        let a = index_column(tape, self.discrimination, &e);
        let b = index_column(tape, self.difficulty, &e);
        let d = tape.sub(th, b);
        Ok(tape.mul(a, d))
    }
    fn predict(&self, q: &Query<'_>) -> Result<f64> {
        self.probability(q.student, q.exercise)
    }
    fn predict_batch(&self, batch: &[Query<'_>]) -> Result<Vec<f64>> {
        batch.iter().map(|q| self.probability(q.student, q.exercise)).collect()
    }
    fn student_gradient(&self, q: &Query<'_>, correct: bool) -> Result<Vec<f64>> {
        self.check(q)?;
        let (a, b) = self.item(q.exercise);
        let p = math::sigmoid(a * (self.theta(q.student) - b));
        Ok(vec![a * (p - if correct { 1.0 } else { 0.0 })])
    }
}

// ---------------------------------------------------------------- MIRT

#[derive(Debug, Clone, PartialEq)]
pub struct MirtModel {
    store: ParamStore,
    theta: ParamId,
    loading: ParamId,
    intercept: ParamId,
}

impl MirtModel {
    pub fn new(num_students: usize, num_exercises: usize, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("mirt dimension must be positive".into()));
        }
        let mut store = ParamStore::new();
        let mut uniform = |n: usize, lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.gen_range(lo..hi)).collect() };
        let theta = store.add("mirt.theta", Matrix::from_vec(num_students, dim, uniform(num_students * dim, -0.1, 0.1)));
        let loading =
            store.add("mirt.a", Matrix::from_vec(num_exercises, dim, uniform(num_exercises * dim, 0.2, 0.6)));
        let intercept = store.add("mirt.b", Matrix::from_vec(num_exercises, 1, uniform(num_exercises, -0.1, 0.1)));
        Ok(MirtModel { store, theta, loading, intercept })
    }

    pub fn from_store(store: ParamStore) -> Result<Self> {
        let id = |n: &str| store.id(n).ok_or(Error::InvalidArgument(format!("missing parameter {n}")));
        let (theta, loading, intercept) = (id("mirt.theta")?, id("mirt.a")?, id("mirt.b")?);
        Ok(MirtModel { store, theta, loading, intercept })
    }

    pub fn dim(&self) -> usize {
        self.store.get(self.theta).cols()
    }

    pub fn probability(&self, s: usize, j: usize) -> Result<f64> {
        self.check(&Query::new(s, j, &[]))?;
        let th = self.store.get(self.theta).row(s);
        let a = self.store.get(self.loading).row(j);
        let z: f64 = th.iter().zip(a).map(|(t, a)| t * a).sum::<f64>() - self.store.get(self.intercept)[(j, 0)];
        Ok(clamp_prob(math::sigmoid(z)))
    }
}

impl DiagnosisModel for MirtModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Mirt
    }
    fn num_students(&self) -> usize {
        self.store.get(self.theta).rows()
    }
    fn num_exercises(&self) -> usize {
        self.store.get(self.intercept).rows()
    }
    fn params(&self) -> &ParamStore {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
    fn student_params(&self) -> Vec<ParamId> {
        vec![self.theta]
    }
    fn student_row_mut(&mut self, id: ParamId, student: usize) -> &mut [f64] {
        self.store.get_mut(id).row_mut(student)
    }
    fn logits(&self, tape: &mut Tape<'_>, batch: &[Query<'_>], _mode: &mut Mode<'_>) -> Result<Var> {
        for q in batch {
            self.check(q)?;
        }
        let s: Vec<usize> = batch.iter().map(|q| q.student).collect();
        let e: Vec<usize> = batch.iter().map(|q| q.exercise).collect();
        let th = index_column(tape, self.theta, &s);
        let a = index_column(tape, self.loading, &e);
        let b = index_column(tape, self.intercept, &e);
        let prod = tape.mul(th, a);
        let ones = tape.constant(Matrix::filled(self.dim(), 1, 1.0));
        let dot = tape.matmul(prod, ones);
        Ok(tape.sub(dot, b))
    }
    fn predict(&self, q: &Query<'_>) -> Result<f64> {
        self.probability(q.student, q.exercise)
    }
    fn predict_batch(&self, batch: &[Query<'_>]) -> Result<Vec<f64>> {
        batch.iter().map(|q| self.probability(q.student, q.exercise)).collect()
    }
    fn student_gradient(&self, q: &Query<'_>, correct: bool) -> Result<Vec<f64>> {
        self.check(q)?;
        let th = self.store.get(self.theta).row(q.student);
        let a = self.store.get(self.loading).row(q.exercise);
        let z: f64 = th.iter().zip(a).map(|(t, a)| t * a).sum::<f64>() - self.store.get(self.intercept)[(q.exercise, 0)];
        let r = math::sigmoid(z) - if correct { 1.0 } else { 0.0 };
        Ok(a.iter().map(|a| r * a).collect())
    }
}

// ---------------------------------------------------------------- NACD

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NacdConfig {
    /// Width of the attention projections in the exercise factor.
    pub attention_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub clip_k: usize,
    pub history_window: usize,
    /// Add the relative-position value term inside the attention sum.
    pub edge_values: bool,
    pub use_exercise_factor: bool,
    pub use_student_factor: bool,
    /// Keep `W1`, `W2` and `W_s` nonnegative so the prediction rises with proficiency.
    pub monotone: bool,
    /// Feed learned exercise / skill embeddings into the exercise factor.
    pub embeddings: Option<EmbeddingConfig>,
}

impl Default for NacdConfig {
    fn default() -> Self {
        NacdConfig {
            attention_dim: 200,
            hidden1: 128,
            hidden2: 64,
            clip_k: 4,
            history_window: 50,
            edge_values: true,
            use_exercise_factor: true,
            use_student_factor: true,
            monotone: true,
            embeddings: Some(EmbeddingConfig::default()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct NacdIds {
    a: ParamId,
    b: ParamId,
    c: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    w_q: ParamId,
    w_k: ParamId,
    w_v: ParamId,
    rel_k: ParamId,
    rel_v: ParamId,
    w_s: ParamId,
    w_e: ParamId,
    b_p: ParamId,
}

const NACD_NAMES: [&str; 15] = [
    "nacd.A", "nacd.B", "nacd.C", "nacd.W1", "nacd.b1", "nacd.W2", "nacd.b2", "nacd.WQ", "nacd.WK", "nacd.WV",
    "nacd.relK", "nacd.relV", "nacd.Ws", "nacd.We", "nacd.bp",
];

#[derive(Debug, Clone, PartialEq)]
struct Projections {
    q: Matrix,
    k: Matrix,
    v: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NacdModel {
    store: ParamStore,
    config: NacdConfig,
    ids: NacdIds,
    q: QMatrix,
    q_weighted: Matrix,
    /// Binary Q-matrix with rows scaled to sum to 1; averages skill embeddings per exercise.
    q_mean: Matrix,
    embeddings: Option<EmbeddingNet>,
    cache: Option<Projections>,
    /// Per exercise, `(skill, q·σ(C), q·σ(C)·σ(B))` over its skills.
    items: Option<Vec<Vec<(usize, f64, f64)>>>,
}

impl NacdModel {
    /// `corpus` supplies the Q-matrix, the population size and the relation matrices
    /// behind the embeddings. Skill weights start at 1.
    pub fn new(corpus: &Corpus, config: NacdConfig, rng: &mut impl Rng) -> Result<Self> {
        let q = corpus.q.clone();
        let (n_s, n_e, k) = (corpus.num_students(), q.num_exercises(), q.num_skills());
        if config.attention_dim == 0 || config.hidden1 == 0 || config.hidden2 == 0 {
            return Err(Error::InvalidArgument("nacd layer widths must be positive".into()));
        }
        if !config.use_exercise_factor && !config.use_student_factor {
            return Err(Error::InvalidArgument("nacd needs at least one of the two factors".into()));
        }
        let mut store = ParamStore::new();
        let embeddings = match config.embeddings {
            Some(cfg) => Some(EmbeddingNet::init(&mut store, build_relation_matrices(corpus), cfg, rng)?),
            None => None,
        };
        let input = Self::input_dim(k, &config);
        let d = config.attention_dim;
        let rel_rows = 2 * config.clip_k + 1;
        let mut small = |r: usize, c: usize| -> Matrix { Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-0.1..0.1)).collect()) };
        let a = store.add(NACD_NAMES[0], small(n_s, k));
        let b = store.add(NACD_NAMES[1], small(n_e, k));
        let c = store.add(NACD_NAMES[2], small(n_e, k));
        let rel_k_init = small(rel_rows, d);
        let rel_v_init = small(rel_rows, d);
        let signed = |m: Matrix| if config.monotone { m.map(f64::abs) } else { m };
        let w1 = store.add(NACD_NAMES[3], signed(xavier(rng, k, config.hidden1)));
        let b1 = store.add(NACD_NAMES[4], Matrix::zeros(1, config.hidden1));
        let w2 = store.add(NACD_NAMES[5], signed(xavier(rng, config.hidden1, config.hidden2)));
        let b2 = store.add(NACD_NAMES[6], Matrix::zeros(1, config.hidden2));
        let w_q = store.add(NACD_NAMES[7], xavier(rng, input, d));
        let w_k = store.add(NACD_NAMES[8], xavier(rng, input, d));
        let w_v = store.add(NACD_NAMES[9], xavier(rng, input, d));
        let rel_k = store.add(NACD_NAMES[10], rel_k_init);
        let rel_v = store.add(NACD_NAMES[11], rel_v_init);
        let w_s = store.add(NACD_NAMES[12], signed(xavier(rng, config.hidden2, 1)));
        let w_e = store.add(NACD_NAMES[13], xavier(rng, d, 1));
        let b_p = store.add(NACD_NAMES[14], Matrix::zeros(1, 1));
        let ids = NacdIds { a, b, c, w1, b1, w2, b2, w_q, w_k, w_v, rel_k, rel_v, w_s, w_e, b_p };
        Self::assemble(store, config, ids, q, embeddings)
    }

    /// Rebuilds a model around a parameter store produced by an earlier instance with the
    /// same configuration and corpus vocabulary.
    pub fn from_store(store: ParamStore, corpus: &Corpus, config: NacdConfig, skill_weights: &[f64]) -> Result<Self> {
        let mut id = NACD_NAMES.iter().map(|n| store.id(n).ok_or(Error::InvalidArgument(format!("missing parameter {n}"))));
        let mut next = || id.next().unwrap();
        let ids = NacdIds {
            a: next()?,
            b: next()?,
            c: next()?,
            w1: next()?,
            b1: next()?,
            w2: next()?,
            b2: next()?,
            w_q: next()?,
            w_k: next()?,
            w_v: next()?,
            rel_k: next()?,
            rel_v: next()?,
            w_s: next()?,
            w_e: next()?,
            b_p: next()?,
        };
        let embeddings = match config.embeddings {
            Some(cfg) => Some(EmbeddingNet::from_store(&store, build_relation_matrices(corpus), cfg)?),
            None => None,
        };
        let expected = (corpus.num_students(), corpus.num_skills());
        if store.get(ids.a).shape() != expected {
            return Err(Error::DimensionMismatch { context: "nacd student matrix", expected, found: store.get(ids.a).shape() });
        }
        let mut model = Self::assemble(store, config, ids, corpus.q.clone(), embeddings)?;
        model.set_skill_weights(skill_weights)?;
        Ok(model)
    }

    fn assemble(store: ParamStore, config: NacdConfig, ids: NacdIds, q: QMatrix, embeddings: Option<EmbeddingNet>) -> Result<Self> {
        let q_weighted = q.to_matrix();
        let mut q_mean = q.to_matrix();
        for e in 0..q_mean.rows() {
            let n = q.row_sum(e).max(1) as f64;
            for x in q_mean.row_mut(e) {
                *x /= n;
            }
        }
        let mut model = NacdModel { store, config, ids, q, q_weighted, q_mean, embeddings, cache: None, items: None };
        model.refresh()?;
        Ok(model)
    }

    fn input_dim(k: usize, config: &NacdConfig) -> usize {
        k + config.embeddings.map_or(0, |e| 2 * e.dim)
    }

    pub fn config(&self) -> &NacdConfig {
        &self.config
    }

    pub fn q_matrix(&self) -> &QMatrix {
        &self.q
    }

    pub fn weighted_q(&self) -> &Matrix {
        &self.q_weighted
    }

    /// Replaces the Q-matrix entries with per-skill importance weights.
    pub fn set_skill_weights(&mut self, weights: &[f64]) -> Result<()> {
        self.q_weighted = self.q.weighted(weights)?;
        self.refresh()
    }

    pub fn skill_weights(&self) -> Vec<f64> {
        let k = self.q.num_skills();
        (0..k)
            .map(|s| (0..self.q.num_exercises()).find(|&e| self.q.contains(e, s)).map_or(1.0, |e| self.q_weighted[(e, s)]))
            .collect()
    }

    /// The weighted Q-row of `exercise`.
    pub fn knowledge_vector(&self, exercise: usize) -> Result<Vec<f64>> {
        knowledge_vector(&self.q_weighted, exercise)
    }

    pub fn embeddings(&self) -> Result<Option<EmbeddingSet>> {
        self.embeddings.as_ref().map(|net| net.compute(&self.store)).transpose()
    }

    /// Records the `N_e × input` exercise input matrix `[K^V ; e* ; mean s*]`.
    fn exercise_inputs(&self, tape: &mut Tape<'_>) -> Result<Var> {
        let qw = tape.constant(self.q_weighted.clone());
        let Some(net) = &self.embeddings else { return Ok(qw) };
        let (_, e_star) = net.forward_exercises(tape)?;
        let (_, s_star) = net.forward_skills(tape)?;
        let qm = tape.constant(self.q_mean.clone());
        let skill_mix = tape.matmul(qm, s_star);
        let x = tape.concat_cols(qw, e_star);
        Ok(tape.concat_cols(x, skill_mix))
    }

    fn projections(&self, tape: &mut Tape<'_>) -> Result<(Var, Var, Var)> {
        let x = self.exercise_inputs(tape)?;
        let (wq, wk, wv) = (tape.param(self.ids.w_q), tape.param(self.ids.w_k), tape.param(self.ids.w_v));
        Ok((tape.matmul(x, wq), tape.matmul(x, wk), tape.matmul(x, wv)))
    }

    /// Exercise input rows `x_j` for a list of exercises, evaluated outside training.
    pub fn exercise_input_rows(&self, exercises: &[usize]) -> Result<Matrix> {
        let mut tape = Tape::new(&self.store);
        let x = self.exercise_inputs(&mut tape)?;
        Ok(tape.value(x).gather_rows(exercises))
    }

    pub fn exercise_factor_params(&self) -> ExerciseFactorParams<'_> {
        ExerciseFactorParams {
            w_q: self.store.get(self.ids.w_q),
            w_k: self.store.get(self.ids.w_k),
            w_v: self.store.get(self.ids.w_v),
            rel_k: self.store.get(self.ids.rel_k),
            rel_v: self.store.get(self.ids.rel_v),
            clip_k: self.config.clip_k,
            edge_values: self.config.edge_values,
        }
    }

    fn window<'h>(&self, history: &'h [usize]) -> &'h [usize] {
        &history[history.len().saturating_sub(self.config.history_window)..]
    }

    fn exercise_factor_batch(&self, tape: &mut Tape<'_>, batch: &[Query<'_>], train: bool) -> Result<Var> {
        let k = self.config.clip_k as i64;
        let scale = 1.0 / math::sqrt(self.config.attention_dim as f64);
        let live = if train || self.cache.is_none() { Some(self.projections(tape)?) } else { None };
        let rel_k = tape.param(self.ids.rel_k);
        let rel_v = tape.param(self.ids.rel_v);
        let mut rows = Vec::with_capacity(batch.len());
        for q in batch {
            let hist = self.window(q.history);
            let mut idx: Vec<usize> = hist.to_vec();
            idx.push(q.exercise);
            let last = idx.len() as i64 - 1;
            let rel_idx: Vec<usize> = (0..idx.len() as i64).map(|j| (clip(j - last, k) + k) as usize).collect();
            let (query, keys, values) = match (&live, &self.cache) {
                (Some((pq, pk, pv)), _) => {
                    let query = tape.gather_rows(*pq, &[q.exercise]);
                    (query, tape.gather_rows(*pk, &idx), tape.gather_rows(*pv, &idx))
                }
                (None, Some(c)) => (
                    tape.constant(c.q.gather_rows(&[q.exercise])),
                    tape.constant(c.k.gather_rows(&idx)),
                    tape.constant(c.v.gather_rows(&idx)),
                ),
                (None, None) => unreachable!("projections are computed when no cache exists"),
            };
            let ak = tape.gather_rows(rel_k, &rel_idx);
            let keys = tape.add(keys, ak);
            let scores = tape.matmul_t(query, keys);
            let scores = tape.scale(scores, scale);
            let att = tape.softmax_rows(scores);
            let values = if self.config.edge_values {
                let av = tape.gather_rows(rel_v, &rel_idx);
                tape.add(values, av)
            } else {
                values
            };
            rows.push(tape.matmul(att, values));
        }
        Ok(tape.stack_rows(&rows))
    }

    fn student_factor_batch(&self, tape: &mut Tape<'_>, batch: &[Query<'_>], mode: &mut Mode<'_>) -> Var {
        let s: Vec<usize> = batch.iter().map(|q| q.student).collect();
        let e: Vec<usize> = batch.iter().map(|q| q.exercise).collect();
        let hs = index_column(tape, self.ids.a, &s);
        let hs = tape.sigmoid(hs);
        let slip = index_column(tape, self.ids.b, &e);
        let slip = tape.sigmoid(slip);
        let guess = index_column(tape, self.ids.c, &e);
        let guess = tape.sigmoid(guess);
        let mask = tape.constant(self.q_weighted.gather_rows(&e));
        let diff = tape.sub(hs, slip);
        let x = tape.mul(mask, diff);
        let x = tape.mul(x, guess);
        let (w1, b1, w2, b2) =
            (tape.param(self.ids.w1), tape.param(self.ids.b1), tape.param(self.ids.w2), tape.param(self.ids.b2));
        let h = tape.matmul(x, w1);
        let h = tape.add_row(h, b1);
        let mut h = tape.sigmoid(h);
        if let Mode::Train { dropout, rng } = mode {
            if *dropout > 0.0 {
                let keep = 1.0 - *dropout;
                let (r, c) = tape.value(h).shape();
                let m = (0..r * c).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
                let m = tape.constant(Matrix::from_vec(r, c, m));
                h = tape.mul(h, m);
            }
        }
        let f = tape.matmul(h, w2);
        let f = tape.add_row(f, b2);
        tape.sigmoid(f)
    }

    /// `W_s · F^S` and, on request, its gradient with respect to the student's row of `A`
    /// (nonzero only on the exercise's skills). `None` until the caches are built.
    fn student_term(&self, student: usize, exercise: usize, with_grad: bool) -> Option<(f64, Option<Vec<f64>>)> {
        if !self.config.use_student_factor {
            return Some((0.0, with_grad.then(|| vec![0.0; self.q.num_skills()])));
        }
        let items = &self.items.as_ref()?[exercise];
        let a = self.store.get(self.ids.a).row(student);
        let (w1, b1) = (self.store.get(self.ids.w1), self.store.get(self.ids.b1));
        let (w2, b2) = (self.store.get(self.ids.w2), self.store.get(self.ids.b2));
        let w_s = self.store.get(self.ids.w_s);
        let hs: Vec<f64> = items.iter().map(|&(k, _, _)| math::sigmoid(a[k])).collect();
        let h1: Vec<f64> = (0..w1.cols())
            .map(|j| {
                let pre = items.iter().zip(&hs).map(|(&(k, gate, offset), h)| (gate * h - offset) * w1[(k, j)]).sum::<f64>();
                math::sigmoid(b1[(0, j)] + pre)
            })
            .collect();
        let h2: Vec<f64> = (0..w2.cols())
            .map(|j| math::sigmoid(b2[(0, j)] + h1.iter().enumerate().map(|(i, v)| v * w2[(i, j)]).sum::<f64>()))
            .collect();
        let z = h2.iter().enumerate().map(|(j, v)| v * w_s[(j, 0)]).sum();
        if !with_grad {
            return Some((z, None));
        }
        let d2: Vec<f64> = h2.iter().enumerate().map(|(j, h)| w_s[(j, 0)] * h * (1.0 - h)).collect();
        let d1: Vec<f64> = h1
            .iter()
            .enumerate()
            .map(|(i, h)| d2.iter().enumerate().map(|(j, d)| d * w2[(i, j)]).sum::<f64>() * h * (1.0 - h))
            .collect();
        let mut grad = vec![0.0; a.len()];
        for (&(k, gate, _), h) in items.iter().zip(&hs) {
            let dx = d1.iter().enumerate().map(|(j, d)| d * w1[(k, j)]).sum::<f64>();
            grad[k] = dx * gate * h * (1.0 - h);
        }
        Some((z, Some(grad)))
    }

    /// `W_e · F^E + b_p` from the projection cache, or `None` when there is no cache.
    fn exercise_term(&self, exercise: usize, history: &[usize]) -> Option<f64> {
        let b_p = self.store.get(self.ids.b_p)[(0, 0)];
        if !self.config.use_exercise_factor {
            return Some(b_p);
        }
        let cache = self.cache.as_ref()?;
        let hist = self.window(history);
        let n = hist.len() + 1;
        let at = |j: usize| if j + 1 == n { exercise } else { hist[j] };
        let k = self.config.clip_k as i64;
        let d = self.config.attention_dim;
        let scale = 1.0 / math::sqrt(d as f64);
        let (rel_k, rel_v) = (self.store.get(self.ids.rel_k), self.store.get(self.ids.rel_v));
        let query = cache.q.row(exercise);
        let last = n as i64 - 1;
        let rel = |j: usize| (clip(j as i64 - last, k) + k) as usize;
        let scores: Vec<f64> = (0..n)
            .map(|j| {
                let (key, edge) = (cache.k.row(at(j)), rel_k.row(rel(j)));
                query.iter().zip(key).zip(edge).map(|((q, k), e)| q * (k + e)).sum::<f64>() * scale
            })
            .collect();
        let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = scores.iter().map(|s| math::exp(s - top)).collect();
        let total: f64 = weights.iter().sum();
        let w_e = self.store.get(self.ids.w_e);
        let mut z = b_p;
        for (j, w) in weights.iter().enumerate() {
            let value = cache.v.row(at(j));
            let edge = rel_v.row(rel(j));
            let dot: f64 = (0..d)
                .map(|c| (value[c] + if self.config.edge_values { edge[c] } else { 0.0 }) * w_e[(c, 0)])
                .sum();
            z += w / total * dot;
        }
        Some(z)
    }

    /// `F^S` for one student / exercise pair (evaluation mode).
    pub fn student_factor(&self, student: usize, exercise: usize) -> Result<Matrix> {
        let q = Query::new(student, exercise, &[]);
        self.check(&q)?;
        let mut tape = Tape::new(&self.store);
        let f = self.student_factor_batch(&mut tape, &[q], &mut Mode::Eval);
        Ok(tape.value(f).clone())
    }
}

impl DiagnosisModel for NacdModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Nacd
    }
    fn num_students(&self) -> usize {
        self.store.get(self.ids.a).rows()
    }
    fn num_exercises(&self) -> usize {
        self.q.num_exercises()
    }
    fn params(&self) -> &ParamStore {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        self.cache = None;
        self.items = None;
        &mut self.store
    }
    fn student_params(&self) -> Vec<ParamId> {
        vec![self.ids.a]
    }
    fn student_row_mut(&mut self, id: ParamId, student: usize) -> &mut [f64] {
        debug_assert_eq!(id, self.ids.a, "only the student matrix is student-owned");
        self.store.get_mut(id).row_mut(student)
    }
    fn predict_batch(&self, batch: &[Query<'_>]) -> Result<Vec<f64>> {
        let Some(frozen) = self.frozen_logits(batch)? else { return tape_predict_batch(self, batch) };
        batch.iter().zip(frozen).map(|(q, f)| self.predict_frozen(q, f)).collect()
    }
    fn student_gradient(&self, q: &Query<'_>, correct: bool) -> Result<Vec<f64>> {
        let Some(frozen) = self.frozen_logits(core::slice::from_ref(q))? else {
            return tape_student_gradient(self, q, correct);
        };
        let Some((z, grad)) = self.student_term(q.student, q.exercise, true) else {
            return tape_student_gradient(self, q, correct);
        };
        let r = math::sigmoid(z + frozen[0]) - if correct { 1.0 } else { 0.0 };
        Ok(grad.expect("requested").into_iter().map(|g| r * g).collect())
    }
    fn frozen_logits(&self, batch: &[Query<'_>]) -> Result<Option<Vec<f64>>> {
        let mut out = Vec::with_capacity(batch.len());
        if self.items.is_none() {
            return Ok(None);
        }
        for q in batch {
            self.check(q)?;
            match self.exercise_term(q.exercise, q.history) {
                Some(z) => out.push(z),
                None => return Ok(None),
            }
        }
        if out.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite { context: String::from("prediction logits") });
        }
        Ok(Some(out))
    }
    fn predict_frozen(&self, q: &Query<'_>, frozen: f64) -> Result<f64> {
        self.check(q)?;
        let Some((z, _)) = self.student_term(q.student, q.exercise, false) else { return self.predict(q) };
        let z = z + frozen;
        if !z.is_finite() {
            return Err(Error::NonFinite { context: String::from("prediction logits") });
        }
        Ok(clamp_prob(math::sigmoid(z)))
    }
    fn coupled(&self, a: usize, b: usize) -> bool {
        !self.config.use_student_factor || self.q.skills_of(a).any(|k| self.q.contains(b, k))
    }
    fn after_step(&mut self) {
        if self.config.monotone {
            for id in [self.ids.w1, self.ids.w2, self.ids.w_s] {
                for w in self.store.get_mut(id).as_mut_slice() {
                    *w = w.max(0.0);
                }
            }
        }
    }
    fn refresh(&mut self) -> Result<()> {
        self.cache = None;
        let (b, c) = (self.store.get(self.ids.b), self.store.get(self.ids.c));
        self.items = Some(
            (0..self.q.num_exercises())
                .map(|e| {
                    self.q
                        .skills_of(e)
                        .filter(|&k| self.q_weighted[(e, k)] != 0.0)
                        .map(|k| {
                            let gate = self.q_weighted[(e, k)] * math::sigmoid(c[(e, k)]);
                            (k, gate, gate * math::sigmoid(b[(e, k)]))
                        })
                        .collect()
                })
                .collect(),
        );
        if !self.config.use_exercise_factor {
            return Ok(());
        }
        let mut tape = Tape::new(&self.store);
        let (q, k, v) = self.projections(&mut tape)?;
        let cache = Projections { q: tape.value(q).clone(), k: tape.value(k).clone(), v: tape.value(v).clone() };
        if !(cache.q.all_finite() && cache.k.all_finite() && cache.v.all_finite()) {
            return Err(Error::NonFinite { context: String::from("exercise projections") });
        }
        self.cache = Some(cache);
        Ok(())
    }
    fn logits(&self, tape: &mut Tape<'_>, batch: &[Query<'_>], mode: &mut Mode<'_>) -> Result<Var> {
        for q in batch {
            self.check(q)?;
        }
        let train = matches!(mode, Mode::Train { .. });
        let mut z = None;
        if self.config.use_student_factor {
            let fs = self.student_factor_batch(tape, batch, mode);
            let ws = tape.param(self.ids.w_s);
            z = Some(tape.matmul(fs, ws));
        }
        if self.config.use_exercise_factor {
            let fe = self.exercise_factor_batch(tape, batch, train)?;
            let we = tape.param(self.ids.w_e);
            let term = tape.matmul(fe, we);
            z = Some(match z {
                Some(zs) => tape.add(zs, term),
                None => term,
            });
        }
        let z = z.expect("at least one factor is enabled");
        let bp = tape.param(self.ids.b_p);
        Ok(tape.add_row(z, bp))
    }
}

/// The weighted Q-row of `exercise`.
pub fn knowledge_vector(q_weighted: &Matrix, exercise: usize) -> Result<Vec<f64>> {
    if exercise >= q_weighted.rows() {
        return Err(Error::UnknownExercise(format!("#{exercise}")));
    }
    Ok(q_weighted.row(exercise).to_vec())
}

/// Borrowed exercise-factor parameters.
#[derive(Debug, Clone, Copy)]
pub struct ExerciseFactorParams<'p> {
    pub w_q: &'p Matrix,
    pub w_k: &'p Matrix,
    pub w_v: &'p Matrix,
    /// `(2k + 1) × d` tables; row `clip(j − i, k) + k` holds the edge vector.
    pub rel_k: &'p Matrix,
    pub rel_v: &'p Matrix,
    pub clip_k: usize,
    pub edge_values: bool,
}

/// Relative-position self-attention over a whole sequence (`n × input`). Returns
/// `F^E` (one row per position) and the attention matrix.
pub fn exercise_factor(sequence: &Matrix, p: &ExerciseFactorParams<'_>) -> Result<(Matrix, Matrix)> {
    let n = sequence.rows();
    if n == 0 {
        return Err(Error::EmptyInput("exercise sequence"));
    }
    let d = p.w_q.cols();
    let rel_rows = 2 * p.clip_k + 1;
    for (m, name) in [(p.w_q, "w_q"), (p.w_k, "w_k"), (p.w_v, "w_v")] {
        if m.shape() != (sequence.cols(), d) {
            return Err(Error::DimensionMismatch { context: name_context(name), expected: (sequence.cols(), d), found: m.shape() });
        }
    }
    for m in [p.rel_k, p.rel_v] {
        if m.shape() != (rel_rows, d) {
            return Err(Error::DimensionMismatch { context: "relative position table", expected: (rel_rows, d), found: m.shape() });
        }
    }
    let q = sequence.matmul(p.w_q);
    let k = sequence.matmul(p.w_k);
    let v = sequence.matmul(p.w_v);
    let kk = p.clip_k as i64;
    let scale = 1.0 / math::sqrt(d as f64);
    let mut att = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let edge = p.rel_k.row((clip(j as i64 - i as i64, kk) + kk) as usize);
            att[(i, j)] = q.row(i).iter().zip(k.row(j)).zip(edge).map(|((a, b), e)| a * (b + e)).sum::<f64>() * scale;
        }
    }
    let att = crate::autodiff::softmax_rows(&att);
    let mut out = Matrix::zeros(n, d);
    for i in 0..n {
        for j in 0..n {
            let a = att[(i, j)];
            let edge = p.rel_v.row((clip(j as i64 - i as i64, kk) + kk) as usize);
            for c in 0..d {
                let ev = if p.edge_values { edge[c] } else { 0.0 };
                out[(i, c)] += a * (v[(j, c)] + ev);
            }
        }
    }
    if !out.all_finite() {
        return Err(Error::NonFinite { context: String::from("exercise factor") });
    }
    Ok((out, att))
}

fn name_context(name: &str) -> &'static str {
    match name {
        "w_q" => "query projection",
        "w_k" => "key projection",
        _ => "value projection",
    }
}

// ---------------------------------------------------------------- dispatch

#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Irt(IrtModel),
    Mirt(MirtModel),
    Nacd(NacdModel),
}

macro_rules! dispatch {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            AnyModel::Irt($m) => $e,
            AnyModel::Mirt($m) => $e,
            AnyModel::Nacd($m) => $e,
        }
    };
}

impl DiagnosisModel for AnyModel {
    fn kind(&self) -> ModelKind {
        dispatch!(self, m => m.kind())
    }
    fn num_students(&self) -> usize {
        dispatch!(self, m => m.num_students())
    }
    fn num_exercises(&self) -> usize {
        dispatch!(self, m => m.num_exercises())
    }
    fn params(&self) -> &ParamStore {
        dispatch!(self, m => m.params())
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        dispatch!(self, m => m.params_mut())
    }
    fn student_params(&self) -> Vec<ParamId> {
        dispatch!(self, m => m.student_params())
    }
    fn logits(&self, tape: &mut Tape<'_>, batch: &[Query<'_>], mode: &mut Mode<'_>) -> Result<Var> {
        dispatch!(self, m => m.logits(tape, batch, mode))
    }
    fn student_row_mut(&mut self, id: ParamId, student: usize) -> &mut [f64] {
        dispatch!(self, m => m.student_row_mut(id, student))
    }
    fn after_step(&mut self) {
        dispatch!(self, m => m.after_step())
    }
    fn refresh(&mut self) -> Result<()> {
        dispatch!(self, m => m.refresh())
    }
    fn predict(&self, q: &Query<'_>) -> Result<f64> {
        dispatch!(self, m => m.predict(q))
    }
    fn predict_batch(&self, batch: &[Query<'_>]) -> Result<Vec<f64>> {
        dispatch!(self, m => m.predict_batch(batch))
    }
    fn student_gradient(&self, q: &Query<'_>, correct: bool) -> Result<Vec<f64>> {
        dispatch!(self, m => DiagnosisModel::student_gradient(m, q, correct))
    }
    fn frozen_logits(&self, batch: &[Query<'_>]) -> Result<Option<Vec<f64>>> {
        dispatch!(self, m => m.frozen_logits(batch))
    }
    fn predict_frozen(&self, q: &Query<'_>, frozen: f64) -> Result<f64> {
        dispatch!(self, m => m.predict_frozen(q, frozen))
    }
    fn coupled(&self, a: usize, b: usize) -> bool {
        dispatch!(self, m => m.coupled(a, b))
    }
}

#[cfg(test)]
mod tests;
