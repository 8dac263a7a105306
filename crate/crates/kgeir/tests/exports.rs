use std::path::Path;

use kgeir::config::Config;
use kgeir::core::cdm::{heldout_predictions, DiagnosisModel, ModelKind};
use kgeir::core::data::Corpus;
use kgeir::core::harness::{MetricsTrace, StepRecord, StepSummary, StrategyKind};
use kgeir::core::synth::{generate, SynthConfig};
use kgeir::core::Matrix;
use kgeir::export::*;
use kgeir::formats::Dataset;
use kgeir::{checkpoint, run};

fn small_dataset(seed: u64) -> Dataset {
    let s = generate(&SynthConfig { students: 40, answers_per_student: 40, seed, ..SynthConfig::default() }).unwrap();
    Dataset { log: s.log, q: s.q, graph: s.graph }
}

fn small_config() -> Config {
    let mut c = Config::default();
    for (k, v) in [
        ("attention_embed_size", "8"),
        ("hidden1", "8"),
        ("hidden2", "4"),
        ("embedding_dim", "8"),
        ("epochs", "2"),
        ("finetune_epochs", "1"),
        ("learning_rate", "0.01"),
        ("heldout_fraction", "0.6"),
        ("mirt_dim", "3"),
        ("steps", "6"),
    ] {
        c.set(k, v).unwrap();
    }
    c
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn matrix_csv_round_trip() {
    let m = Matrix::from_vec(2, 3, vec![0.1, -2.5, 1e-17, 3.0, f64::MAX, -0.0]);
    let ids = vec!["a".to_string(), "b".to_string()];
    let mut buf = Vec::new();
    write_matrix(&ids, &m, &mut buf).unwrap();
    assert!(String::from_utf8(buf.clone()).unwrap().starts_with("entity_id,dim_0,dim_1,dim_2\n"));
    let (back_ids, back) = read_matrix(buf.as_slice()).unwrap();
    assert_eq!(back_ids, ids);
    assert_eq!(back.as_slice(), m.as_slice());
}

#[test]
fn matrix_export_checks_id_count() {
    assert!(write_matrix(&["a".into()], &Matrix::zeros(2, 1), Vec::new()).is_err());
}

fn summary(step: usize, inf: Option<f64>) -> StepSummary {
    StepSummary { step, inf, inf_count: usize::from(inf.is_some()), cov: 0.5 }
}

#[test]
fn heatmap_shape_and_blank_cells() {
    let one: Vec<(String, Vec<StepSummary>)> = vec![("kg-eir".into(), (1..=20).map(|s| summary(s, Some(0.5))).collect())];
    let mut buf = Vec::new();
    write_heatmap(&one, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0].split(',').count(), 21);
    assert_eq!(lines[0].split(',').nth(1), Some("0"));
    assert_eq!(lines[0].split(',').last(), Some("19"));
    assert_eq!(lines[1].split(',').count(), 21);

    let gap = vec![("random".to_string(), vec![summary(1, None), summary(2, Some(0.25))])];
    let mut buf = Vec::new();
    write_heatmap(&gap, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "strategy,0,1\nrandom,,0.25\n");
}

#[test]
fn traces_round_trip() {
    let q = small_dataset(0).q;
    let trace = |student: &str, strategy: &str| MetricsTrace {
        student: student.into(),
        strategy: strategy.into(),
        steps: vec![
            StepRecord { step: 1, selected: 4, inf: Some(0.75), cov: 0.2, tested: 1 },
            StepRecord { step: 2, selected: 9, inf: None, cov: 0.3, tested: 2 },
        ],
    };
    let traces = vec![trace("s1", "random"), trace("s2", "random"), trace("s1", "kg-eir")];
    let mut buf = Vec::new();
    write_traces(&traces, &q, &mut buf).unwrap();
    assert_eq!(read_traces(buf.as_slice(), &q).unwrap(), traces);
}

#[test]
fn checkpoints_restore_every_model() {
    let data = small_dataset(1);
    let cfg = small_config();
    let corpus = Corpus::new(&data.log, data.q.clone()).unwrap();
    let (observed, heldout) = corpus.chronological_split(cfg.pipeline.heldout_fraction);
    for kind in [ModelKind::Irt, ModelKind::Mirt, ModelKind::Nacd] {
        let dir = tempfile::tempdir().unwrap();
        let report = run::train(&data, &cfg, kind, dir.path()).unwrap();
        assert!(report.heldout_auc.is_some());
        let (model, manifest) = checkpoint::load(dir.path(), &observed).unwrap();
        assert_eq!(model.kind(), kind);
        assert_eq!(manifest.config_hash, cfg.hash());
        assert_eq!(manifest.parameters.len(), model.params().len());
        let preds: Vec<(f64, bool)> = heldout_predictions(&model, &observed, &heldout).unwrap();
        let (scores, labels): (Vec<f64>, Vec<bool>) = preds.into_iter().unzip();
        assert_eq!(kgeir::core::metrics::auc(&scores, &labels), report.heldout_auc, "{kind}");
    }
}

#[test]
fn tampered_checkpoint_is_rejected() {
    let data = small_dataset(2);
    let mut cfg = small_config();
    cfg.set("epochs", "1").unwrap();
    let dir = tempfile::tempdir().unwrap();
    run::train(&data, &cfg, ModelKind::Irt, dir.path()).unwrap();
    let corpus = Corpus::new(&data.log, data.q.clone()).unwrap().chronological_split(0.6).0;
    let manifest = dir.path().join("manifest.json");
    let text = read(&manifest).replace("\"rows\": 40", "\"rows\": 41");
    std::fs::write(&manifest, text).unwrap();
    assert!(matches!(checkpoint::load(dir.path(), &corpus), Err(kgeir::Error::Checkpoint(_))));
}

#[test]
fn simulation_exports_are_deterministic() {
    let data = small_dataset(3);
    let cfg = small_config();
    let strategies = [StrategyKind::RANDOM, StrategyKind::KG_EIR];
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let run_a = run::simulate(&data, &cfg, &strategies, a.path()).unwrap();
    run::simulate(&data, &cfg, &strategies, b.path()).unwrap();
    for f in &run_a.files {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let manifest = read_manifest(&a.path().join("manifest.json")).unwrap();
    assert_eq!(manifest.dataset_hash, data.fingerprint().unwrap());
    assert_eq!(manifest.strategies, ["random", "kg-eir"]);
    assert_eq!(manifest.config["steps"], "6");

    let steps = read(&a.path().join("steps.csv"));
    assert_eq!(steps.lines().count(), 1 + 2 * 6);
    let heat = read(&a.path().join("heatmap.csv"));
    assert_eq!(heat.lines().count(), 3);
    let audit = read(&a.path().join("audit.csv"));
    assert!(audit.lines().skip(1).all(|l| l.starts_with("kg-eir,")));
    let selected = audit.lines().filter(|l| l.ends_with(",1")).count();
    assert_eq!(selected, manifest.students * 6);

    // plot data rebuilt from the traces matches the originals
    let c = tempfile::tempdir().unwrap();
    run::export_plots(&data, a.path(), c.path()).unwrap();
    assert_eq!(read(&c.path().join("steps.csv")), steps);
    assert_eq!(read(&c.path().join("heatmap.csv")), heat);

    if run_a.prepared.embeddings.is_some() {
        let set = read_embeddings(&a.path().join("embeddings")).unwrap();
        assert_eq!(&set, run_a.prepared.embeddings.as_ref().unwrap());
    }
}

#[test]
fn importance_table_columns() {
    let data = small_dataset(4);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w.csv");
    let prep = run::weights(&data, &small_config(), &out).unwrap();
    let text = read(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("skill_id,f1,f2,f3,f4,f5,w_nov,w_pop,w_k"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), data.q.num_skills());
    for (row, r) in rows.iter().zip(&prep.importance.rows) {
        assert_eq!(row[0], r.skill_id);
        let w_k: f64 = row[8].parse().unwrap();
        assert_eq!(w_k, r.w_k);
        assert!((w_k - (r.w_nov + r.w_pop).tanh()).abs() < 1e-15);
    }
}

#[test]
fn emc_rows() {
    let mut buf = Vec::new();
    write_emc(&[("s".into(), "e1".into(), 0.5)], &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "student_id,exercise_id,emc\ns,e1,0.5\n");
}
