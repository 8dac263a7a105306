use super::*;
use alloc::string::ToString;
use rand::Rng;

fn sigma(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn toy_corpus() -> Corpus {
    // e0 {k0}, e1 {k1}, e2 {k0, k1}
    let q = QMatrix::from_pairs(
        [("e0", Some("k0")), ("e1", Some("k1")), ("e2", Some("k0")), ("e2", Some("k1"))],
        None,
    )
    .unwrap();
    let r = |exercise, correct| Response { exercise, correct };
    Corpus::from_sequences(
        q,
        vec!["s0".to_string(), "s1".to_string()],
        vec![vec![r(0, true), r(1, false), r(2, true)], vec![r(2, false), r(0, true)]],
    )
}

fn small_config(embeddings: bool) -> NacdConfig {
    NacdConfig {
        attention_dim: 3,
        hidden1: 4,
        hidden2: 3,
        clip_k: 1,
        history_window: 50,
        edge_values: true,
        use_exercise_factor: true,
        use_student_factor: true,
        monotone: false,
        embeddings: embeddings.then_some(EmbeddingConfig { dim: 2, layers: 2, delta_a: 0.5 }),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn set(model: &mut impl DiagnosisModel, name: &str, value: Matrix) {
    let id = model.params().id(name).unwrap();
    model.params_mut().set(id, value).unwrap();
}

#[test]
fn clip_examples() {
    assert_eq!(clip(3, 2), 2);
    assert_eq!(clip(-5, 2), -2);
    assert_eq!(clip(1, 2), 1);
    assert_eq!(clip(0, 0), 0);
}

#[test]
fn irt_examples() {
    let mut m = IrtModel::new(1, 2, &mut rng(0));
    m.set_theta(0, 0.4);
    m.set_item(0, 1.7, 0.4);
    assert_eq!(m.probability(0, 0).unwrap(), 0.5);
    m.set_item(1, 0.0, -3.0);
    m.set_theta(0, 25.0);
    assert_eq!(m.probability(0, 1).unwrap(), 0.5);
    m.set_theta(0, 1.0);
    m.set_item(0, 1.0, 0.0);
    assert!((m.probability(0, 0).unwrap() - 0.731_058_578_630_004_9).abs() < 1e-15);
    assert!(matches!(m.probability(3, 0), Err(Error::UnknownStudent(_))));
    assert!(matches!(m.probability(0, 9), Err(Error::UnknownExercise(_))));
}

#[test]
fn mirt_matches_direct_evaluation() {
    let mut m = MirtModel::new(2, 2, 3, &mut rng(1)).unwrap();
    set(&mut m, "mirt.theta", Matrix::from_rows(&[&[0.5, -1.0, 2.0], &[0.0, 0.0, 0.0]]));
    set(&mut m, "mirt.a", Matrix::from_rows(&[&[1.0, 0.5, 0.25], &[0.0, 0.0, 0.0]]));
    set(&mut m, "mirt.b", Matrix::from_rows(&[&[0.2], &[-0.3]]));
    let z = 0.5 - 0.5 + 0.5 - 0.2;
    assert!((m.probability(0, 0).unwrap() - sigma(z)).abs() < 1e-15);
    let tape_p = m.predict_batch(&[Query::new(0, 0, &[])]).unwrap()[0];
    assert!((tape_p - sigma(z)).abs() < 1e-15);
    assert!((m.probability(1, 1).unwrap() - sigma(0.3)).abs() < 1e-15);
}

#[test]
fn irt_uncertainty_peaks_at_half() {
    let (a, b) = (1.3, 0.2);
    let grid: Vec<f64> = (-400..=400).map(|i| b + i as f64 * 0.01).collect();
    let best = grid
        .iter()
        .copied()
        .max_by(|x, y| {
            let f = |t: f64| {
                let p = sigma(a * (t - b));
                2.0 * a * p * (1.0 - p)
            };
            f(*x).partial_cmp(&f(*y)).unwrap()
        })
        .unwrap();
    assert!((sigma(a * (best - b)) - 0.5).abs() < 1e-12);
}

#[test]
fn knowledge_vector_examples() {
    let c = toy_corpus();
    let mut m = NacdModel::new(&c, small_config(false), &mut rng(2)).unwrap();
    m.set_skill_weights(&[0.7, 0.3]).unwrap();
    assert_eq!(m.knowledge_vector(0).unwrap(), vec![0.7, 0.0]);
    let two = m.knowledge_vector(2).unwrap();
    assert_eq!(two.iter().filter(|&&x| x != 0.0).count(), 2);
    let binary = c.q.to_matrix();
    for e in 0..3 {
        let scaled: Vec<f64> = binary.row(e).iter().zip([0.7, 0.3]).map(|(b, w)| b * w).collect();
        assert_eq!(m.knowledge_vector(e).unwrap(), scaled);
    }
    assert_eq!(m.skill_weights(), vec![0.7, 0.3]);
    assert!(m.knowledge_vector(3).is_err());
}

fn params_2d<'a>(eye: &'a Matrix, rel_k: &'a Matrix, rel_v: &'a Matrix, edge_values: bool) -> ExerciseFactorParams<'a> {
    ExerciseFactorParams { w_q: eye, w_k: eye, w_v: eye, rel_k, rel_v, clip_k: 1, edge_values }
}

#[test]
fn exercise_factor_single_position() {
    let eye = Matrix::identity(2);
    let rel_k = Matrix::from_rows(&[&[9.0, 9.0], &[0.1, 0.2], &[9.0, 9.0]]);
    let rel_v = Matrix::from_rows(&[&[5.0, 5.0], &[0.3, -0.4], &[5.0, 5.0]]);
    let x = Matrix::from_rows(&[&[1.5, -2.0]]);
    let (f, att) = exercise_factor(&x, &params_2d(&eye, &rel_k, &rel_v, true)).unwrap();
    assert_eq!(att, Matrix::scalar(1.0));
    assert_eq!(f, Matrix::from_rows(&[&[1.8, -2.4]]));
    let (f, _) = exercise_factor(&x, &params_2d(&eye, &rel_k, &rel_v, false)).unwrap();
    assert_eq!(f, x);
}

#[test]
fn exercise_factor_all_zero() {
    let z2 = Matrix::zeros(2, 2);
    let z3 = Matrix::zeros(3, 2);
    let x = Matrix::zeros(4, 2);
    let (f, att) = exercise_factor(&x, &params_2d(&z2, &z3, &z3, true)).unwrap();
    assert_eq!(f, Matrix::zeros(4, 2));
    for s in att.row_sums() {
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn exercise_factor_length_two_by_hand() {
    let eye = Matrix::identity(2);
    // rows: offset -1, 0, +1
    let rel_k = Matrix::from_rows(&[&[0.5, 0.0], &[0.0, 0.0], &[0.0, 1.0]]);
    let rel_v = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 0.0], &[0.0, 2.0]]);
    let x = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
    let (f, att) = exercise_factor(&x, &params_2d(&eye, &rel_k, &rel_v, true)).unwrap();
    let s = 1.0 / 2f64.sqrt();
    // i = 0: e00 = x0·x0 = 1, e01 = x0·(x1 + k(+1)) = 0
    // i = 1: e10 = x1·(x0 + k(-1)) = 0, e11 = x1·x1 = 1
    let a_same = (s).exp() / ((s).exp() + 1.0);
    let a_other = 1.0 - a_same;
    assert!((att[(0, 0)] - a_same).abs() < 1e-15 && (att[(0, 1)] - a_other).abs() < 1e-15);
    assert!((att[(1, 1)] - a_same).abs() < 1e-15 && (att[(1, 0)] - a_other).abs() < 1e-15);
    // F0 = a00 x0 + a01 (x1 + v(+1)) ; F1 = a10 (x0 + v(-1)) + a11 x1
    let f0 = [a_same, a_other * 3.0];
    let f1 = [a_other * 2.0, a_same];
    for c in 0..2 {
        assert!((f[(0, c)] - f0[c]).abs() < 1e-15);
        assert!((f[(1, c)] - f1[c]).abs() < 1e-15);
    }
}

#[test]
fn exercise_factor_rejects_bad_shapes() {
    let eye = Matrix::identity(2);
    let rel = Matrix::zeros(3, 2);
    let x = Matrix::zeros(2, 3);
    assert!(matches!(exercise_factor(&x, &params_2d(&eye, &rel, &rel, true)), Err(Error::DimensionMismatch { .. })));
    assert!(matches!(exercise_factor(&Matrix::zeros(0, 2), &params_2d(&eye, &rel, &rel, true)), Err(Error::EmptyInput(_))));
}

fn hand_nacd() -> NacdModel {
    let c = toy_corpus();
    let mut cfg = small_config(false);
    cfg.attention_dim = 2;
    cfg.hidden1 = 2;
    cfg.hidden2 = 1;
    let mut m = NacdModel::new(&c, cfg, &mut rng(3)).unwrap();
    set(&mut m, "nacd.A", Matrix::from_rows(&[&[0.0, 0.0], &[1.0, -1.0]]));
    set(&mut m, "nacd.B", Matrix::from_rows(&[&[-1.0, 0.0], &[0.0, -2.0], &[0.5, 0.5]]));
    set(&mut m, "nacd.C", Matrix::from_rows(&[&[2.0, 0.0], &[0.0, 1.0], &[1.0, -1.0]]));
    set(&mut m, "nacd.W1", Matrix::from_rows(&[&[1.0, -0.5], &[0.25, 2.0]]));
    set(&mut m, "nacd.b1", Matrix::from_rows(&[&[0.1, -0.1]]));
    set(&mut m, "nacd.W2", Matrix::from_rows(&[&[1.5], &[-1.0]]));
    set(&mut m, "nacd.b2", Matrix::scalar(0.2));
    set(&mut m, "nacd.WQ", Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]));
    set(&mut m, "nacd.WK", Matrix::from_rows(&[&[0.5, 0.0], &[0.0, 1.0]]));
    set(&mut m, "nacd.WV", Matrix::from_rows(&[&[1.0, 1.0], &[0.0, 1.0]]));
    set(&mut m, "nacd.relK", Matrix::from_rows(&[&[0.1, 0.0], &[0.0, 0.0], &[0.0, 0.2]]));
    set(&mut m, "nacd.relV", Matrix::from_rows(&[&[0.3, 0.0], &[0.0, 0.1], &[0.0, 0.0]]));
    set(&mut m, "nacd.Ws", Matrix::scalar(0.8));
    set(&mut m, "nacd.We", Matrix::from_rows(&[&[0.6], &[-0.4]]));
    set(&mut m, "nacd.bp", Matrix::scalar(-0.1));
    m.refresh().unwrap();
    m
}

fn hand_student_factor(m: &NacdModel, s: usize, e: usize) -> f64 {
    let p = m.params();
    let get = |n: &str| p.get(p.id(n).unwrap()).clone();
    let (a, b, c) = (get("nacd.A"), get("nacd.B"), get("nacd.C"));
    let (w1, b1, w2, b2) = (get("nacd.W1"), get("nacd.b1"), get("nacd.W2"), get("nacd.b2"));
    let q = m.knowledge_vector(e).unwrap();
    let x: Vec<f64> = (0..2).map(|k| q[k] * (sigma(a[(s, k)]) - sigma(b[(e, k)])) * sigma(c[(e, k)])).collect();
    let h: Vec<f64> = (0..2).map(|j| sigma(x[0] * w1[(0, j)] + x[1] * w1[(1, j)] + b1[(0, j)])).collect();
    sigma(h[0] * w2[(0, 0)] + h[1] * w2[(1, 0)] + b2[(0, 0)])
}

#[test]
fn student_factor_by_hand() {
    let m = hand_nacd();
    for (s, e) in [(0, 0), (1, 2), (1, 1)] {
        let f = m.student_factor(s, e).unwrap();
        assert!((f[(0, 0)] - hand_student_factor(&m, s, e)).abs() < 1e-15);
    }
    // a zero A-row gives proficiency 0.5 on every skill
    let f = m.student_factor(0, 2).unwrap()[(0, 0)];
    let p = m.params();
    let (b, c) = (p.get(p.id("nacd.B").unwrap()), p.get(p.id("nacd.C").unwrap()));
    let x: Vec<f64> = (0..2).map(|k| (0.5 - sigma(b[(2, k)])) * sigma(c[(2, k)])).collect();
    let (w1, b1) = (p.get(p.id("nacd.W1").unwrap()), p.get(p.id("nacd.b1").unwrap()));
    let h: Vec<f64> = (0..2).map(|j| sigma(x[0] * w1[(0, j)] + x[1] * w1[(1, j)] + b1[(0, j)])).collect();
    assert!((f - sigma(h[0] * 1.5 - h[1] + 0.2)).abs() < 1e-15);
}

#[test]
fn nacd_prediction_end_to_end() {
    let m = hand_nacd();
    let history = [0usize, 1];
    let p = m.predict(&Query::new(1, 2, &history)).unwrap();
    // exercise factor at the target (last) position of [e0, e1, e2]
    let seq = m.exercise_input_rows(&[0, 1, 2]).unwrap();
    let (fe, att) = exercise_factor(&seq, &m.exercise_factor_params()).unwrap();
    for s in att.row_sums() {
        assert!((s - 1.0).abs() < 1e-9);
    }
    let fs = hand_student_factor(&m, 1, 2);
    let z = 0.8 * fs + 0.6 * fe[(2, 0)] - 0.4 * fe[(2, 1)] - 0.1;
    assert!((p - sigma(z)).abs() < 1e-14);
    // cached and live paths agree
    let mut live = m.clone();
    live.params_mut();
    assert!((live.predict(&Query::new(1, 2, &history)).unwrap() - p).abs() < 1e-15);
}

#[test]
fn nacd_zero_weights_and_bias_monotone() {
    let mut m = hand_nacd();
    set(&mut m, "nacd.Ws", Matrix::scalar(0.0));
    set(&mut m, "nacd.We", Matrix::zeros(2, 1));
    set(&mut m, "nacd.bp", Matrix::scalar(0.0));
    m.refresh().unwrap();
    assert_eq!(m.predict(&Query::new(0, 1, &[0])).unwrap(), 0.5);
    let mut m = hand_nacd();
    let mut last = 0.0;
    for b in [-2.0, -0.5, 0.0, 0.7, 3.0] {
        set(&mut m, "nacd.bp", Matrix::scalar(b));
        m.refresh().unwrap();
        let p = m.predict(&Query::new(1, 0, &[2])).unwrap();
        assert!(p > last);
        last = p;
    }
}

#[test]
fn history_window_caps_sequence() {
    let c = toy_corpus();
    let mut cfg = small_config(false);
    cfg.history_window = 2;
    let m = NacdModel::new(&c, cfg, &mut rng(4)).unwrap();
    let long = [2usize, 2, 2, 0, 1];
    let p1 = m.predict(&Query::new(0, 2, &long)).unwrap();
    let p2 = m.predict(&Query::new(0, 2, &long[3..])).unwrap();
    assert_eq!(p1, p2);
}

#[test]
fn ablated_models_are_valid() {
    let c = toy_corpus();
    for (fe, fs) in [(false, true), (true, false)] {
        let mut cfg = small_config(true);
        cfg.use_exercise_factor = fe;
        cfg.use_student_factor = fs;
        let mut m = NacdModel::new(&c, cfg, &mut rng(5)).unwrap();
        let losses = train(&mut m, &c, &TrainConfig { epochs: 3, ..TrainConfig::default() }).unwrap();
        assert_eq!(losses.len(), 3);
        let p = m.predict(&Query::new(1, 1, &[2, 0])).unwrap();
        assert!(p > 0.0 && p < 1.0);
    }
    let mut cfg = small_config(false);
    cfg.use_exercise_factor = false;
    cfg.use_student_factor = false;
    assert!(NacdModel::new(&c, cfg, &mut rng(5)).is_err());
}

/// Perturbs every entry of every parameter that receives a gradient and returns the
/// largest relative error between tape and central differences.
fn gradcheck(model: &mut AnyModel, batch: &[(usize, usize, Vec<usize>, bool)]) -> f64 {
    model.params_mut();
    let loss = |m: &AnyModel| -> (f64, Gradients) {
        let queries: Vec<Query<'_>> = batch.iter().map(|(s, e, h, _)| Query::new(*s, *e, h)).collect();
        let targets: Vec<f64> = batch.iter().map(|b| if b.3 { 1.0 } else { 0.0 }).collect();
        let mut tape = Tape::new(m.params());
        let z = m.logits(&mut tape, &queries, &mut Mode::Eval).unwrap();
        let l = tape.bce_with_logits(z, &targets);
        (tape.value(l)[(0, 0)], tape.backward(l).unwrap())
    };
    let (_, grads) = loss(model);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let ids: Vec<ParamId> = model.params().iter().map(|(id, _, _)| id).collect();
    for id in ids {
        let Some(g) = grads.get(id).cloned() else { continue };
        for i in 0..g.len() {
            let orig = model.params().get(id).as_slice()[i];
            model.params_mut().get_mut(id).as_mut_slice()[i] = orig + h;
            let up = loss(model).0;
            model.params_mut().get_mut(id).as_mut_slice()[i] = orig - h;
            let down = loss(model).0;
            model.params_mut().get_mut(id).as_mut_slice()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let a = g.as_slice()[i];
            let err = (a - fd).abs() / (a.abs() + fd.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

use crate::autodiff::Gradients;

#[test]
fn nacd_gradients_match_finite_differences() {
    let c = toy_corpus();
    let batch = vec![(0, 1, vec![0], false), (1, 0, vec![2], true)];
    let mut m = AnyModel::Nacd(NacdModel::new(&c, small_config(true), &mut rng(6)).unwrap());
    assert!(gradcheck(&mut m, &batch) < 1e-4);
    let mut cfg = small_config(false);
    cfg.edge_values = false;
    let mut m = AnyModel::Nacd(NacdModel::new(&c, cfg, &mut rng(7)).unwrap());
    assert!(gradcheck(&mut m, &batch) < 1e-4);
}

#[test]
fn irt_and_mirt_gradients_match_finite_differences() {
    let mut r = rng(8);
    let batch = vec![(0, 1, vec![], false), (1, 0, vec![], true), (1, 2, vec![], true)];
    let mut irt = IrtModel::new(2, 3, &mut r);
    for s in 0..2 {
        irt.set_theta(s, r.gen_range(-2.0..2.0));
    }
    let mut m = AnyModel::Irt(irt);
    assert!(gradcheck(&mut m, &batch) < 1e-4);
    let mut m = AnyModel::Mirt(MirtModel::new(2, 3, 4, &mut r).unwrap());
    assert!(gradcheck(&mut m, &batch) < 1e-4);
}

#[test]
fn student_gradient_matches_sign_and_leaves_model() {
    let mut m = IrtModel::new(1, 1, &mut rng(9));
    m.set_item(0, 1.5, 0.3);
    m.set_theta(0, -0.2);
    let before = m.clone();
    let g = student_gradient(&m, &Query::new(0, 0, &[]), true).unwrap();
    let p = m.probability(0, 0).unwrap();
    assert!((g[0] - 1.5 * (p - 1.0)).abs() < 1e-12);
    assert_eq!(m, before);
}

#[test]
fn incremental_updates() {
    let mut m = IrtModel::new(1, 1, &mut rng(10));
    m.set_item(0, 1.2, 0.5);
    let before = m.clone();
    let q = Query::new(0, 0, &[]);
    update_incremental(&mut m, &q, true, 0, 0.1).unwrap();
    assert_eq!(m, before);
    update_incremental(&mut m, &q, true, 1, 0.1).unwrap();
    assert!(m.theta(0) > before.theta(0));
    assert_eq!(m.item(0), before.item(0));

    let c = toy_corpus();
    let mut n = NacdModel::new(&c, small_config(true), &mut rng(11)).unwrap();
    let hist = [0usize];
    let q = Query::new(0, 2, &hist);
    let frozen: Vec<Matrix> = n.params().iter().filter(|(id, _, _)| *id != n.student_params()[0]).map(|(_, _, m)| m.clone()).collect();
    let mut last = n.predict(&q).unwrap();
    for _ in 0..10 {
        update_incremental(&mut n, &q, true, 1, 0.5).unwrap();
        let p = n.predict(&q).unwrap();
        assert!(p >= last);
        last = p;
    }
    let after: Vec<Matrix> = n.params().iter().filter(|(id, _, _)| *id != n.student_params()[0]).map(|(_, _, m)| m.clone()).collect();
    assert_eq!(frozen, after);
}

fn separable_corpus() -> Corpus {
    // students 0..4 answer everything right, 4..8 everything wrong
    let q = QMatrix::from_pairs((0..4).map(|e| (alloc::format!("e{e}"), Some("k0"))), None).unwrap();
    let students = (0..8).map(|s| alloc::format!("s{s}")).collect();
    let sequences = (0..8).map(|s| (0..4).map(|e| Response { exercise: e, correct: s < 4 }).collect()).collect();
    Corpus::from_sequences(q, students, sequences)
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let c = separable_corpus();
    let cfg = TrainConfig { learning_rate: 0.05, epochs: 30, batch_size: 8, seed: 42, ..TrainConfig::default() };
    let mut a = AnyModel::Irt(IrtModel::new(8, 4, &mut rng(12)));
    let la = train(&mut a, &c, &cfg).unwrap();
    assert!(la.last().unwrap() < la.first().unwrap());
    let mut b = AnyModel::Irt(IrtModel::new(8, 4, &mut rng(12)));
    assert_eq!(train(&mut b, &c, &cfg).unwrap(), la);

    let mut n1 = NacdModel::new(&c, small_config(true), &mut rng(13)).unwrap();
    let mut n2 = n1.clone();
    let l1 = train(&mut n1, &c, &cfg).unwrap();
    let l2 = train(&mut n2, &c, &cfg).unwrap();
    assert!(l1.iter().zip(&l2).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(l1.last().unwrap() < l1.first().unwrap());
}

#[test]
fn training_validates_config_and_reports_divergence() {
    let c = separable_corpus();
    let mut m = IrtModel::new(8, 4, &mut rng(14));
    assert!(train(&mut m, &c, &TrainConfig { epochs: 0, ..TrainConfig::default() }).is_err());
    assert!(train(&mut m, &c, &TrainConfig { learning_rate: -1.0, ..TrainConfig::default() }).is_err());
    assert!(train(&mut m, &c, &TrainConfig { dropout: 1.0, ..TrainConfig::default() }).is_err());
    let id = m.params().id("irt.b").unwrap();
    m.params_mut().get_mut(id)[(0, 0)] = f64::NAN;
    assert!(matches!(train(&mut m, &c, &TrainConfig::default()), Err(Error::Divergence { epoch: 0 })));
}

#[test]
fn model_kind_round_trip() {
    for k in [ModelKind::Irt, ModelKind::Mirt, ModelKind::Nacd] {
        assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
    }
    assert!("ncdm".parse::<ModelKind>().is_err());
}

#[test]
fn heldout_predictions_cover_every_heldout_record() {
    let c = toy_corpus();
    let (obs, held) = c.chronological_split(0.5);
    let m = NacdModel::new(&obs, small_config(false), &mut rng(15)).unwrap();
    let preds = heldout_predictions(&m, &obs, &held).unwrap();
    assert_eq!(preds.len(), held.iter().map(Vec::len).sum::<usize>());
    assert!(preds.iter().all(|(p, _)| *p > 0.0 && *p < 1.0));
}

#[test]
fn closed_form_student_gradients_match_tape() {
    let mut r = rng(16);
    let mut irt = IrtModel::new(3, 4, &mut r);
    irt.set_theta(1, 0.7);
    irt.set_item(2, 1.4, -0.3);
    let mirt = MirtModel::new(3, 4, 3, &mut r).unwrap();
    for y in [true, false] {
        let q = Query::new(1, 2, &[]);
        let (a, b) = (student_gradient(&irt, &q, y).unwrap(), tape_student_gradient(&irt, &q, y).unwrap());
        assert!((a[0] - b[0]).abs() < 1e-14);
        let (a, b) = (student_gradient(&mirt, &q, y).unwrap(), tape_student_gradient(&mirt, &q, y).unwrap());
        assert_eq!(a.len(), 3);
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-14));
    }
}

#[test]
fn monotone_nacd_prediction_rises_with_proficiency() {
    let c = toy_corpus();
    let cfg = NacdConfig { monotone: true, ..small_config(false) };
    let mut m = NacdModel::new(&c, cfg, &mut rng(17)).unwrap();
    train(&mut m, &c, &TrainConfig { learning_rate: 0.05, epochs: 20, dropout: 0.0, batch_size: 2, seed: 0 }).unwrap();
    for name in ["nacd.W1", "nacd.W2", "nacd.Ws"] {
        assert!(m.params().get(m.params().id(name).unwrap()).as_slice().iter().all(|&w| w >= 0.0));
    }
    let a = m.params().id("nacd.A").unwrap();
    for e in 0..3 {
        let mut last = 0.0;
        for step in 0..8 {
            m.student_row_mut(a, 0)[0] = -2.0 + step as f64 * 0.5;
            let p = m.predict(&Query::new(0, e, &[1])).unwrap();
            assert!(p >= last, "exercise {e}: {p} < {last}");
            last = p;
        }
    }
}

#[test]
fn nacd_fast_path_matches_tape() {
    let c = toy_corpus();
    let variants = [
        small_config(true),
        small_config(false),
        NacdConfig { edge_values: false, ..small_config(false) },
        NacdConfig { use_exercise_factor: false, ..small_config(false) },
        NacdConfig { use_student_factor: false, ..small_config(true) },
    ];
    let mut r = rng(18);
    for (i, cfg) in variants.into_iter().enumerate() {
        let mut m = NacdModel::new(&c, cfg, &mut r).unwrap();
        for name in ["nacd.A", "nacd.B", "nacd.C", "nacd.W2", "nacd.relK", "nacd.relV", "nacd.bp"] {
            let id = m.params().id(name).unwrap();
            let (rows, cols) = m.params().get(id).shape();
            let v = Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.gen_range(-1.5..1.5)).collect());
            m.params_mut().set(id, v).unwrap();
        }
        m.refresh().unwrap();
        let histories: [&[usize]; 4] = [&[], &[2], &[0, 1, 2, 1], &[1, 1, 0, 2, 2, 0]];
        for s in 0..2 {
            for e in 0..3 {
                for h in histories {
                    let q = Query::new(s, e, h);
                    assert!(m.frozen_logits(&[q]).unwrap().is_some());
                    let fast = m.predict(&q).unwrap();
                    let slow = tape_predict_batch(&m, &[q]).unwrap()[0];
                    assert!((fast - slow).abs() < 1e-12, "variant {i}: {fast} vs {slow}");
                    for y in [true, false] {
                        let g = student_gradient(&m, &q, y).unwrap();
                        let t = tape_student_gradient(&m, &q, y).unwrap();
                        assert!(g.iter().zip(&t).all(|(a, b)| (a - b).abs() < 1e-12), "variant {i}: {g:?} vs {t:?}");
                    }
                }
            }
        }
    }
}

#[test]
fn nacd_without_cache_falls_back_to_tape() {
    let c = toy_corpus();
    let mut m = NacdModel::new(&c, small_config(false), &mut rng(19)).unwrap();
    let q = Query::new(0, 1, &[0]);
    let before = m.predict(&q).unwrap();
    let id = m.params().id("nacd.bp").unwrap();
    m.params_mut().set(id, Matrix::scalar(0.5)).unwrap();
    assert!(m.frozen_logits(&[q]).unwrap().is_none());
    let after = m.predict(&q).unwrap();
    assert!(after > before);
    m.refresh().unwrap();
    assert_eq!(m.predict(&q).unwrap(), after);
}
