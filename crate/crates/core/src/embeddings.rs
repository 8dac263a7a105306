//! Exercise and skill embeddings.
//!
//! Exercises are linked when one student answered both or when they share a skill;
//! skills are linked when one exercise contains both. Each relation matrix keeps a
//! self-loop on every row and is row-normalized. A GCN propagates one-hot identities
//! over these links, then a relation-aware attention mixes the learned attention
//! weights with the relation matrix:
//!
//! ```text
//! alpha = softmax((H Wq)(H Wk)^T / sqrt(d))
//! beta  = delta_a * alpha + (1 - delta_a) * R
//! out   = beta (H Wv)
//! ```

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{softmax_rows, ParamId, ParamStore, SparseRows, Tape, Var};
use crate::data::Corpus;
use crate::{math, Error, Matrix, Result};

/// Row-stochastic exercise (`R_E`) and skill (`R_S`) relation matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationMatrices {
    pub exercise: Rc<SparseRows>,
    pub skill: Rc<SparseRows>,
}

fn normalized(support: Vec<BTreeSet<usize>>) -> SparseRows {
    let cols = support.len();
    let rows = support
        .into_iter()
        .map(|set| {
            let w = 1.0 / set.len() as f64;
            set.into_iter().map(|j| (j, w)).collect()
        })
        .collect();
    SparseRows { cols, rows }
}

/// Builds `R_E` from co-answering students and shared skills, and `R_S` from skills
/// co-occurring in an exercise.
pub fn build_relation_matrices(corpus: &Corpus) -> RelationMatrices {
    let n_e = corpus.num_exercises();
    let k = corpus.num_skills();
    let q = &corpus.q;

    let mut ex: Vec<BTreeSet<usize>> = (0..n_e).map(|i| BTreeSet::from([i])).collect();
    for seq in &corpus.sequences {
        let answered: BTreeSet<usize> = seq.iter().map(|r| r.exercise).collect();
        for &i in &answered {
            ex[i].extend(answered.iter().copied());
        }
    }
    let mut by_skill: Vec<Vec<usize>> = alloc::vec![Vec::new(); k];
    for e in 0..n_e {
        for s in q.skills_of(e) {
            by_skill[s].push(e);
        }
    }
    for members in &by_skill {
        for &i in members {
            ex[i].extend(members.iter().copied());
        }
    }

    let mut sk: Vec<BTreeSet<usize>> = (0..k).map(|i| BTreeSet::from([i])).collect();
    for e in 0..n_e {
        let skills: Vec<usize> = q.skills_of(e).collect();
        for &a in &skills {
            sk[a].extend(skills.iter().copied());
        }
    }
    RelationMatrices { exercise: Rc::new(normalized(ex)), skill: Rc::new(normalized(sk)) }
}

/// One GCN layer's `(weight, bias)` parameter ids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcnLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams {
    pub layers: Vec<GcnLayer>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub delta_a: f64,
}

impl GcnParams {
    /// Records `ReLU(R · H · W + b)` for every layer. With `x = None` the input is the
    /// one-hot identity, so the first layer reads `R · W` directly.
    pub fn forward(&self, tape: &mut Tape, x: Option<Var>, rel: &Rc<SparseRows>) -> Result<Var> {
        let mut h = x;
        for (l, layer) in self.layers.iter().enumerate() {
            let w = tape.param(layer.weight);
            let b = tape.param(layer.bias);
            let agg = match h {
                Some(h) => {
                    let (rows, cols) = tape.value(h).shape();
                    let wd = tape.value(w).rows();
                    if cols != wd || rows != rel.num_rows() {
                        return Err(Error::DimensionMismatch {
                            context: "gcn layer input",
                            expected: (rel.num_rows(), wd),
                            found: (rows, cols),
                        });
                    }
                    let a = tape.sparse_matmul(rel, h);
                    tape.matmul(a, w)
                }
                None => {
                    if tape.value(w).rows() != rel.cols {
                        return Err(Error::DimensionMismatch {
                            context: "gcn one-hot input",
                            expected: (rel.cols, tape.value(w).cols()),
                            found: tape.value(w).shape(),
                        });
                    }
                    tape.sparse_matmul(rel, w)
                }
            };
            let pre = tape.add_row(agg, b);
            let out = tape.relu(pre);
            if !tape.value(out).all_finite() {
                return Err(Error::NonFinite { context: format!("gcn layer {l}") });
            }
            h = Some(out);
        }
        h.ok_or(Error::InvalidArgument(String::from("gcn has no layers")))
    }
}

impl AttentionParams {
    /// Records the relation-aware attention refinement of `hidden` (n × d).
    pub fn forward(&self, tape: &mut Tape, hidden: Var, rel: &Matrix) -> Result<Var> {
        let (n, d) = tape.value(hidden).shape();
        if rel.shape() != (n, n) {
            return Err(Error::DimensionMismatch { context: "attention relation matrix", expected: (n, n), found: rel.shape() });
        }
        let wq = tape.param(self.w_q);
        let wk = tape.param(self.w_k);
        let wv = tape.param(self.w_v);
        let q = tape.matmul(hidden, wq);
        let k = tape.matmul(hidden, wk);
        let v = tape.matmul(hidden, wv);
        let scores = tape.matmul_t(q, k);
        let scaled = tape.scale(scores, 1.0 / math::sqrt(d as f64));
        let alpha = tape.softmax_rows(scaled);
        let alpha = tape.scale(alpha, self.delta_a);
        let r = tape.constant(rel.scaled(1.0 - self.delta_a));
        let beta = tape.add(alpha, r);
        let out = tape.matmul(beta, v);
        if !tape.value(out).all_finite() {
            return Err(Error::NonFinite { context: String::from("relation attention output") });
        }
        Ok(out)
    }
}

/// GCN propagation outside a training tape.
pub fn gcn_forward(store: &ParamStore, x: &Matrix, rel: &Rc<SparseRows>, params: &GcnParams) -> Result<Matrix> {
    let mut tape = Tape::new(store);
    let xv = tape.constant(x.clone());
    let out = params.forward(&mut tape, Some(xv), rel)?;
    Ok(tape.value(out).clone())
}

/// Attention weights `beta` and refined embeddings, outside a training tape.
pub fn refine_attention(
    store: &ParamStore,
    hidden: &Matrix,
    rel: &Matrix,
    params: &AttentionParams,
) -> Result<(Matrix, Matrix)> {
    let (n, d) = hidden.shape();
    if rel.shape() != (n, n) {
        return Err(Error::DimensionMismatch { context: "attention relation matrix", expected: (n, n), found: rel.shape() });
    }
    let q = hidden.matmul(store.get(params.w_q));
    let k = hidden.matmul(store.get(params.w_k));
    let v = hidden.matmul(store.get(params.w_v));
    let alpha = softmax_rows(&q.matmul_t(&k).scaled(1.0 / math::sqrt(d as f64)));
    let beta = alpha.zip_map(rel, |a, r| params.delta_a * a + (1.0 - params.delta_a) * r);
    let out = beta.matmul(&v);
    if !out.all_finite() {
        return Err(Error::NonFinite { context: String::from("relation attention output") });
    }
    Ok((beta, out))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub layers: usize,
    pub delta_a: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig { dim: 200, layers: 2, delta_a: 0.5 }
    }
}

/// GCN + attention stacks for exercises and skills, with parameters held in a shared store.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingNet {
    pub config: EmbeddingConfig,
    pub exercise_gcn: GcnParams,
    pub skill_gcn: GcnParams,
    pub exercise_attention: AttentionParams,
    pub skill_attention: AttentionParams,
    pub relations: RelationMatrices,
    exercise_rel_dense: Matrix,
    skill_rel_dense: Matrix,
}

/// Hidden GCN states and attention-refined embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub e_hat: Matrix,
    pub s_hat: Matrix,
    pub e_star: Matrix,
    pub s_star: Matrix,
}

pub(crate) fn xavier(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    let limit = math::sqrt(6.0 / (rows + cols) as f64);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect())
}

impl EmbeddingNet {
    pub fn init(
        store: &mut ParamStore,
        relations: RelationMatrices,
        config: EmbeddingConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if config.layers == 0 || config.dim == 0 {
            return Err(Error::InvalidArgument("embedding needs at least one layer and a positive dimension".into()));
        }
        if !(0.0..=1.0).contains(&config.delta_a) {
            return Err(Error::InvalidArgument(format!("delta_a {} outside [0, 1]", config.delta_a)));
        }
        let n_e = relations.exercise.num_rows();
        let k = relations.skill.num_rows();
        let mut gcn = |store: &mut ParamStore, prefix: &str, input: usize| {
            let layers = (0..config.layers)
                .map(|l| {
                    let fan_in = if l == 0 { input } else { config.dim };
                    GcnLayer {
                        weight: store.add(format!("{prefix}.gcn{l}.weight"), xavier(rng, fan_in, config.dim)),
                        bias: store.add(format!("{prefix}.gcn{l}.bias"), Matrix::filled(1, config.dim, 0.01)),
                    }
                })
                .collect();
            GcnParams { layers }
        };
        let exercise_gcn = gcn(store, "emb.exercise", n_e);
        let skill_gcn = gcn(store, "emb.skill", k);
        let mut attention = |store: &mut ParamStore, prefix: &str| AttentionParams {
            w_q: store.add(format!("{prefix}.attn.wq"), xavier(rng, config.dim, config.dim)),
            w_k: store.add(format!("{prefix}.attn.wk"), xavier(rng, config.dim, config.dim)),
            w_v: store.add(format!("{prefix}.attn.wv"), xavier(rng, config.dim, config.dim)),
            delta_a: config.delta_a,
        };
        let exercise_attention = attention(store, "emb.exercise");
        let skill_attention = attention(store, "emb.skill");
        Ok(Self::from_parts(config, exercise_gcn, skill_gcn, exercise_attention, skill_attention, relations))
    }

    /// Reattaches an embedding stack to parameters already present in `store`.
    pub fn from_store(store: &ParamStore, relations: RelationMatrices, config: EmbeddingConfig) -> Result<Self> {
        let id = |name: String| store.id(&name).ok_or(Error::InvalidArgument(format!("missing parameter {name}")));
        let gcn = |prefix: &str| -> Result<GcnParams> {
            let layers = (0..config.layers)
                .map(|l| {
                    Ok(GcnLayer {
                        weight: id(format!("{prefix}.gcn{l}.weight"))?,
                        bias: id(format!("{prefix}.gcn{l}.bias"))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(GcnParams { layers })
        };
        let attention = |prefix: &str| -> Result<AttentionParams> {
            Ok(AttentionParams {
                w_q: id(format!("{prefix}.attn.wq"))?,
                w_k: id(format!("{prefix}.attn.wk"))?,
                w_v: id(format!("{prefix}.attn.wv"))?,
                delta_a: config.delta_a,
            })
        };
        Ok(Self::from_parts(
            config,
            gcn("emb.exercise")?,
            gcn("emb.skill")?,
            attention("emb.exercise")?,
            attention("emb.skill")?,
            relations,
        ))
    }

    fn from_parts(
        config: EmbeddingConfig,
        exercise_gcn: GcnParams,
        skill_gcn: GcnParams,
        exercise_attention: AttentionParams,
        skill_attention: AttentionParams,
        relations: RelationMatrices,
    ) -> Self {
        let exercise_rel_dense = relations.exercise.to_dense();
        let skill_rel_dense = relations.skill.to_dense();
        EmbeddingNet {
            config,
            exercise_gcn,
            skill_gcn,
            exercise_attention,
            skill_attention,
            relations,
            exercise_rel_dense,
            skill_rel_dense,
        }
    }

    /// Records the exercise pipeline; returns `(e_hat, e_star)`.
    pub fn forward_exercises(&self, tape: &mut Tape) -> Result<(Var, Var)> {
        let hidden = self.exercise_gcn.forward(tape, None, &self.relations.exercise)?;
        let refined = self.exercise_attention.forward(tape, hidden, &self.exercise_rel_dense)?;
        Ok((hidden, refined))
    }

    /// Records the skill pipeline; returns `(s_hat, s_star)`.
    pub fn forward_skills(&self, tape: &mut Tape) -> Result<(Var, Var)> {
        let hidden = self.skill_gcn.forward(tape, None, &self.relations.skill)?;
        let refined = self.skill_attention.forward(tape, hidden, &self.skill_rel_dense)?;
        Ok((hidden, refined))
    }

    pub fn compute(&self, store: &ParamStore) -> Result<EmbeddingSet> {
        let mut tape = Tape::new(store);
        let (e_hat, e_star) = self.forward_exercises(&mut tape)?;
        let (s_hat, s_star) = self.forward_skills(&mut tape)?;
        Ok(EmbeddingSet {
            e_hat: tape.value(e_hat).clone(),
            s_hat: tape.value(s_hat).clone(),
            e_star: tape.value(e_star).clone(),
            s_star: tape.value(s_star).clone(),
        })
    }
}
