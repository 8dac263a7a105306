//! Replay sessions, selection strategies and metric traces.
//!
//! Each student's log is split chronologically. The diagnosis model is fitted on the
//! observed parts; the held-out questions form the untested pool `Q_U`. At every step a
//! strategy picks one question, its logged answer is revealed, the student's own
//! parameters take a few gradient steps, and Inf (AUC on what is still untested) and
//! Cov (skills touched by the tested set) are recorded.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cdm::{
    self, update_incremental, AnyModel, DiagnosisModel, IrtModel, MirtModel, ModelKind, NacdConfig, NacdModel,
    Query, TrainConfig,
};
use crate::data::{Corpus, Response};
use crate::embeddings::EmbeddingSet;
use crate::graph::{paths_from_targets, KnowledgeGraph, PathSet, RelationConstraint};
use crate::importance::{difficulty_by_skill, SkillImportanceTable};
use crate::informativeness::{score_untested, select_candidates, InformativenessScore};
use crate::metrics::{auc, coverage, mean};
use crate::representativeness::{
    dissimilarity, representativeness_score, select_representative, Alphas, CoverageState, EcovVariant,
    ScoreBreakdown, ScoreContext,
};
use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Strategy {
    Random,
    Expectimax,
    KgEir,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Ablation {
    pub disable_informativeness: bool,
    pub disable_representativeness: bool,
    pub disable_knowledge_importance: bool,
}

impl Ablation {
    pub fn is_none(&self) -> bool {
        *self == Ablation::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StrategyKind {
    pub strategy: Strategy,
    pub ablation: Ablation,
}

impl StrategyKind {
    pub const RANDOM: StrategyKind = StrategyKind { strategy: Strategy::Random, ablation: NO_ABLATION };
    pub const EXPECTIMAX: StrategyKind = StrategyKind { strategy: Strategy::Expectimax, ablation: NO_ABLATION };
    pub const KG_EIR: StrategyKind = StrategyKind { strategy: Strategy::KgEir, ablation: NO_ABLATION };

    pub fn kg_eir(ablation: Ablation) -> Self {
        StrategyKind { strategy: Strategy::KgEir, ablation }
    }

    pub fn new(strategy: Strategy, ablation: Ablation) -> Result<Self> {
        if strategy != Strategy::KgEir && !ablation.is_none() {
            return Err(Error::InvalidArgument("ablation flags only apply to kg-eir".into()));
        }
        Ok(StrategyKind { strategy, ablation })
    }

    /// The full model followed by the three single-component ablations.
    pub fn ablation_variants() -> [StrategyKind; 4] {
        let a = |i, r, k| {
            StrategyKind::kg_eir(Ablation {
                disable_informativeness: i,
                disable_representativeness: r,
                disable_knowledge_importance: k,
            })
        };
        [a(false, false, false), a(true, false, false), a(false, true, false), a(false, false, true)]
    }

    pub fn label(&self) -> String {
        let base = match self.strategy {
            Strategy::Random => "random",
            Strategy::Expectimax => "expectimax",
            Strategy::KgEir => "kg-eir",
        };
        let mut s = String::from(base);
        let a = self.ablation;
        for (on, tag) in [
            (a.disable_informativeness, "-no-if"),
            (a.disable_representativeness, "-no-er"),
            (a.disable_knowledge_importance, "-no-ki"),
        ] {
            if on {
                s.push_str(tag);
            }
        }
        s
    }
}

const NO_ABLATION: Ablation =
    Ablation { disable_informativeness: false, disable_representativeness: false, disable_knowledge_importance: false };

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "expectimax" => Ok(Strategy::Expectimax),
            "kg-eir" | "kgeir" => Ok(Strategy::KgEir),
            _ => Err(Error::InvalidArgument(format!("unknown strategy {s}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationConfig {
    pub steps: usize,
    pub top_k: usize,
    pub alphas: Alphas,
    pub seed: u64,
    pub cdm: ModelKind,
    /// Gradient steps on the student's parameters after each revealed answer.
    pub update_steps: usize,
    pub update_lr: f64,
    pub ecov: EcovVariant,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            steps: 20,
            top_k: 5,
            alphas: Alphas::default(),
            seed: 0,
            cdm: ModelKind::Nacd,
            update_steps: 1,
            update_lr: 0.1,
            ecov: EcovVariant::Saturating,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.top_k == 0 {
            return Err(Error::InvalidArgument("steps and top-k must be at least 1".into()));
        }
        if !(self.update_lr >= 0.0) {
            return Err(Error::InvalidArgument(format!("update learning rate {} is negative", self.update_lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// 1-based step index.
    pub step: usize,
    pub selected: usize,
    /// AUC on the still-untested questions; `None` when they hold a single class.
    pub inf: Option<f64>,
    pub cov: f64,
    pub tested: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTrace {
    pub student: String,
    pub strategy: String,
    pub steps: Vec<StepRecord>,
}

/// One scored candidate of the representativeness stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditRow {
    pub step: usize,
    pub score: ScoreBreakdown,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutput {
    pub trace: MetricsTrace,
    pub audit: Vec<AuditRow>,
}

/// Everything a replay session reads.
#[derive(Debug, Clone, Copy)]
pub struct SessionEnv<'a> {
    pub model: &'a AnyModel,
    pub observed: &'a Corpus,
    pub heldout: &'a [Vec<Response>],
    pub skill_weights: &'a [f64],
    pub dissimilarity: &'a Matrix,
}

/// Held-out questions of `student`, first logged answer per exercise.
pub fn untested_pool(heldout: &[Response]) -> Vec<Response> {
    let mut seen = BTreeSet::new();
    heldout.iter().filter(|r| seen.insert(r.exercise)).copied().collect()
}

/// Students whose pool has at least `steps` questions.
pub fn eligible_students(env: &SessionEnv<'_>, steps: usize) -> Vec<usize> {
    (0..env.observed.num_students()).filter(|&s| untested_pool(&env.heldout[s]).len() >= steps).collect()
}

pub fn strategy_random(q_u: &[usize], rng: &mut impl Rng) -> Result<usize> {
    if q_u.is_empty() {
        return Err(Error::EmptyInput("untested questions"));
    }
    Ok(q_u[rng.gen_range(0..q_u.len())])
}

fn student_rows<M: DiagnosisModel + ?Sized>(model: &mut M, student: usize) -> Vec<Vec<f64>> {
    model.student_params().into_iter().map(|id| model.student_row_mut(id, student).to_vec()).collect()
}

fn restore_rows<M: DiagnosisModel + ?Sized>(model: &mut M, student: usize, rows: &[Vec<f64>]) {
    for (id, row) in model.student_params().into_iter().zip(rows) {
        model.student_row_mut(id, student).copy_from_slice(row);
    }
}

/// Depth-1 expectimax: the question minimizing the expected summed uncertainty
/// `Σ p'(1 − p')` of the remaining pool after its answer is revealed. The look-ahead
/// re-predicts the pool with the pre-step history and simulated updates are rolled back.
pub fn strategy_expectimax<M: DiagnosisModel + ?Sized>(
    model: &mut M,
    student: usize,
    q_u: &[usize],
    history: &[usize],
    update_steps: usize,
    update_lr: f64,
) -> Result<usize> {
    if q_u.is_empty() {
        return Err(Error::EmptyInput("untested questions"));
    }
    if q_u.len() == 1 {
        return Ok(q_u[0]);
    }
    let saved = student_rows(model, student);
    let queries: Vec<Query<'_>> = q_u.iter().map(|&e| Query::new(student, e, history)).collect();
    let frozen = model.frozen_logits(&queries)?;
    let now = match &frozen {
        Some(f) => queries.iter().zip(f).map(|(q, &f)| model.predict_frozen(q, f)).collect::<Result<Vec<_>>>()?,
        None => model.predict_batch(&queries)?,
    };
    let uncertainty = |p: f64| p * (1.0 - p);
    let total: f64 = now.iter().map(|&p| uncertainty(p)).sum();
    let mut best = (f64::INFINITY, usize::MAX);
    for (i, &q) in q_u.iter().enumerate() {
        // only predictions coupled to q can move
        let moved: Vec<usize> = (0..q_u.len()).filter(|&j| j != i && model.coupled(q, q_u[j])).collect();
        let fixed = total - uncertainty(now[i]) - moved.iter().map(|&j| uncertainty(now[j])).sum::<f64>();
        let mut expected = 0.0;
        for (y, weight) in [(true, now[i]), (false, 1.0 - now[i])] {
            update_incremental(model, &queries[i], y, update_steps, update_lr)?;
            let after = match &frozen {
                Some(f) => moved.iter().map(|&j| model.predict_frozen(&queries[j], f[j])).collect::<Result<Vec<_>>>()?,
                None => model.predict_batch(&moved.iter().map(|&j| queries[j]).collect::<Vec<_>>())?,
            };
            restore_rows(model, student, &saved);
            expected += weight * (fixed + after.into_iter().map(uncertainty).sum::<f64>());
        }
        if expected < best.0 || (expected == best.0 && q < best.1) {
            best = (expected, q);
        }
    }
    Ok(best.1)
}

fn inf_metric<M: DiagnosisModel + ?Sized>(model: &M, student: usize, pool: &[Response], history: &[usize]) -> Result<Option<f64>> {
    let batch: Vec<Query<'_>> = pool.iter().map(|r| Query::new(student, r.exercise, history)).collect();
    let scores = model.predict_batch(&batch)?;
    let labels: Vec<bool> = pool.iter().map(|r| r.correct).collect();
    Ok(auc(&scores, &labels))
}

/// Replays one student's held-out questions under `kind`.
pub fn run_session(env: &SessionEnv<'_>, student: usize, kind: StrategyKind, cfg: &SimulationConfig) -> Result<SessionOutput> {
    cfg.validate()?;
    if kind.strategy != Strategy::KgEir && !kind.ablation.is_none() {
        return Err(Error::InvalidArgument("ablation flags only apply to kg-eir".into()));
    }
    let corpus = env.observed;
    if student >= corpus.num_students() {
        return Err(Error::UnknownStudent(format!("#{student}")));
    }
    let mut pool = untested_pool(&env.heldout[student]);
    if pool.len() < cfg.steps {
        return Err(Error::InsufficientRecords {
            student: corpus.students[student].clone(),
            needed: cfg.steps,
            found: pool.len(),
        });
    }
    let q = &corpus.q;
    let mut model = env.model.clone();
    let mut history: Vec<usize> = corpus.sequences[student].iter().map(|r| r.exercise).collect();
    let mut tested: Vec<usize> = Vec::new();
    let weights = if kind.ablation.disable_knowledge_importance { vec![1.0; q.num_skills()] } else { env.skill_weights.to_vec() };
    let mut state = CoverageState::new(weights, cfg.ecov)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(student as u64);
    let mut steps = Vec::with_capacity(cfg.steps);
    let mut audit = Vec::new();

    for step in 1..=cfg.steps {
        let q_u: Vec<usize> = pool.iter().map(|r| r.exercise).collect();
        let choice = match kind.strategy {
            Strategy::Random => strategy_random(&q_u, &mut rng)?,
            Strategy::Expectimax => {
                strategy_expectimax(&mut model, student, &q_u, &history, cfg.update_steps, cfg.update_lr)?
            }
            Strategy::KgEir => {
                let a = kind.ablation;
                if a.disable_representativeness {
                    let scores = score_untested(&model, student, q_u.iter().copied(), &history)?;
                    select_candidates(&scores, 1)?[0]
                } else {
                    let q_c = if a.disable_informativeness {
                        q_u.clone()
                    } else {
                        let scores: Vec<InformativenessScore> = score_untested(&model, student, q_u.iter().copied(), &history)?;
                        select_candidates(&scores, cfg.top_k)?
                    };
                    let ctx = ScoreContext { q, state: &state, tested: &tested, dissimilarity: env.dissimilarity, alphas: cfg.alphas };
                    let batch: Vec<Query<'_>> = q_c.iter().map(|&e| Query::new(student, e, &history)).collect();
                    let p_n = model.predict_batch(&batch)?;
                    let scored = q_c
                        .iter()
                        .zip(p_n)
                        .map(|(&e, p)| representativeness_score(e, p, &ctx))
                        .collect::<Result<Vec<_>>>()?;
                    let best = select_representative(&scored)?;
                    audit.extend(scored.iter().enumerate().map(|(i, s)| AuditRow { step, score: *s, selected: i == best }));
                    scored[best].exercise
                }
            }
        };
        let idx = pool.iter().position(|r| r.exercise == choice).expect("strategies pick from the pool");
        let answer = pool.remove(idx);
        update_incremental(&mut model, &Query::new(student, choice, &history), answer.correct, cfg.update_steps, cfg.update_lr)?;
        history.push(choice);
        tested.push(choice);
        state.add(choice, q);
        steps.push(StepRecord {
            step,
            selected: choice,
            inf: inf_metric(&model, student, &pool, &history)?,
            cov: coverage(&tested, q),
            tested: tested.len(),
        });
    }
    Ok(SessionOutput {
        trace: MetricsTrace { student: corpus.students[student].clone(), strategy: kind.label(), steps },
        audit,
    })
}

/// Runs every eligible student, in student-id order.
pub fn run_population(env: &SessionEnv<'_>, kind: StrategyKind, cfg: &SimulationConfig) -> Result<Vec<SessionOutput>> {
    let students = eligible_students(env, cfg.steps);
    if students.is_empty() {
        return Err(Error::EmptyInput("students with enough held-out questions"));
    }
    students.into_iter().map(|s| run_session(env, s, kind, cfg)).collect()
}

/// Mean metrics over students at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSummary {
    pub step: usize,
    pub inf: Option<f64>,
    /// Students whose AUC was defined at this step.
    pub inf_count: usize,
    pub cov: f64,
}

/// Per-step means over traces, skipping undefined AUC cells. Traces are reduced in
/// student-id order.
pub fn aggregate(traces: &[MetricsTrace]) -> Result<Vec<StepSummary>> {
    let first = traces.first().ok_or(Error::EmptyInput("metric traces"))?;
    let steps = first.steps.len();
    if traces.iter().any(|t| t.steps.len() != steps) {
        return Err(Error::InvalidArgument("traces have different lengths".into()));
    }
    let mut order: Vec<&MetricsTrace> = traces.iter().collect();
    order.sort_by(|a, b| a.student.cmp(&b.student));
    Ok((0..steps)
        .map(|i| {
            let infs: Vec<f64> = order.iter().filter_map(|t| t.steps[i].inf).collect();
            StepSummary {
                step: i + 1,
                inf: mean(infs.iter().copied()),
                inf_count: infs.len(),
                cov: mean(order.iter().map(|t| t.steps[i].cov)).unwrap_or(0.0),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub heldout_fraction: f64,
    pub train: TrainConfig,
    /// Extra epochs on the NACD model after the skill weights enter its Q-matrix.
    pub finetune_epochs: usize,
    pub nacd: NacdConfig,
    pub mirt_dim: usize,
    /// Relation kinds followed when extracting learning paths.
    pub phi: RelationConstraint,
    pub simulation: SimulationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            heldout_fraction: 0.2,
            train: TrainConfig::default(),
            finetune_epochs: 10,
            nacd: NacdConfig::default(),
            mirt_dim: 10,
            phi: RelationConstraint::unconstrained(),
            simulation: SimulationConfig::default(),
        }
    }
}

/// A fitted environment for replay.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub observed: Corpus,
    pub heldout: Vec<Vec<Response>>,
    pub nacd: NacdModel,
    pub nacd_losses: Vec<f64>,
    /// The model driving the sessions (the NACD model itself when `cdm` is NACD).
    pub model: AnyModel,
    pub model_losses: Vec<f64>,
    pub embeddings: Option<EmbeddingSet>,
    pub paths: PathSet,
    pub importance: SkillImportanceTable,
    pub skill_weights: Vec<f64>,
    pub dissimilarity: Matrix,
    /// Set when a trained embedding table had a zero row and the Q-matrix based
    /// stand-ins (weighted Q rows for exercises, one-hot skills) were used instead.
    pub embedding_fallback: bool,
}

impl Prepared {
    pub fn env(&self) -> SessionEnv<'_> {
        SessionEnv {
            model: &self.model,
            observed: &self.observed,
            heldout: &self.heldout,
            skill_weights: &self.skill_weights,
            dissimilarity: &self.dissimilarity,
        }
    }
}

/// Fits a standalone IRT / MIRT model, or returns `None` for NACD.
pub fn fit_baseline(kind: ModelKind, corpus: &Corpus, cfg: &PipelineConfig, rng: &mut ChaCha8Rng) -> Result<Option<(AnyModel, Vec<f64>)>> {
    let mut model = match kind {
        ModelKind::Irt => AnyModel::Irt(IrtModel::new(corpus.num_students(), corpus.num_exercises(), rng)),
        ModelKind::Mirt => AnyModel::Mirt(MirtModel::new(corpus.num_students(), corpus.num_exercises(), cfg.mirt_dim, rng)?),
        ModelKind::Nacd => return Ok(None),
    };
    let losses = cdm::train(&mut model, corpus, &cfg.train)?;
    Ok(Some((model, losses)))
}

/// Split, fit NACD (embeddings included), compute skill importance, push the weights into
/// the NACD Q-matrix, fine-tune, and fit the session model.
pub fn prepare(corpus: &Corpus, graph: &KnowledgeGraph, cfg: &PipelineConfig) -> Result<Prepared> {
    let (observed, heldout) = corpus.chronological_split(cfg.heldout_fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut nacd = NacdModel::new(&observed, cfg.nacd, &mut rng)?;
    let mut nacd_losses = cdm::train(&mut nacd, &observed, &cfg.train)?;

    let skills = observed.q.skill_ids().to_vec();
    let paths = paths_from_targets(graph, skills.iter().map(String::as_str), &cfg.phi)?;
    let embeddings = nacd.embeddings()?;
    let mut embedding_fallback = false;
    let s_star = match &embeddings {
        Some(e) if all_rows_nonzero(&e.s_star) => e.s_star.clone(),
        other => {
            embedding_fallback |= other.is_some();
            Matrix::identity(skills.len())
        }
    };
    let importance = SkillImportanceTable::compute(&skills, &paths, &s_star, &difficulty_by_skill(&observed)?)?;
    nacd.set_skill_weights(&importance.weights())?;
    if cfg.finetune_epochs > 0 {
        let tune = TrainConfig { epochs: cfg.finetune_epochs, seed: cfg.train.seed.wrapping_add(1), ..cfg.train };
        nacd_losses.extend(cdm::train(&mut nacd, &observed, &tune)?);
    }
    // embeddings after fine-tuning
    let embeddings = nacd.embeddings()?;
    let exercise_vectors = match &embeddings {
        Some(e) if all_rows_nonzero(&e.e_star) => e.e_star.clone(),
        other => {
            embedding_fallback |= other.is_some();
            nacd.weighted_q().clone()
        }
    };
    let dissimilarity = dissimilarity(&exercise_vectors)?;
    let (model, model_losses) = match fit_baseline(cfg.simulation.cdm, &observed, cfg, &mut rng)? {
        Some(fit) => fit,
        None => (AnyModel::Nacd(nacd.clone()), nacd_losses.clone()),
    };
    let skill_weights = importance.weights();
    Ok(Prepared {
        observed,
        heldout,
        nacd,
        nacd_losses,
        model,
        model_losses,
        embeddings,
        paths,
        importance,
        skill_weights,
        dissimilarity,
        embedding_fallback,
    })
}

/// ReLU units can all die during training, leaving zero rows that have no direction.
fn all_rows_nonzero(m: &Matrix) -> bool {
    (0..m.rows()).all(|r| m.row(r).iter().any(|&x| x != 0.0))
}
