use kgeir::config::{parse_phi, Config, KEYS};
use kgeir::core::cdm::ModelKind;
use kgeir::core::graph::{RelationConstraint, RelationKind};
use kgeir::Error;

#[test]
fn defaults_mirror_the_settings_table() {
    let c = Config::default();
    for (k, v) in [
        ("attention_embed_size", "200"),
        ("top_k", "5"),
        ("dropout", "0.2"),
        ("learning_rate", "0.002"),
        ("epochs", "100"),
        ("alpha1", "0.7"),
        ("alpha2", "0.15"),
        ("alpha3", "0.15"),
    ] {
        assert_eq!(c.get(k).as_deref(), Some(v), "{k}");
    }
}

#[test]
fn parse_file_text() {
    let c = Config::parse("# run\n\nepochs = 7\ncdm=mirt\nphi=prerequisite\nembedding_dim=0\nseed=9\n").unwrap();
    let p = &c.pipeline;
    assert_eq!(p.train.epochs, 7);
    assert_eq!(p.simulation.cdm, ModelKind::Mirt);
    assert_eq!(p.phi, RelationConstraint::preset("prerequisite").unwrap());
    assert_eq!(p.nacd.embeddings, None);
    assert_eq!((p.train.seed, p.simulation.seed), (9, 9));
}

#[test]
fn errors_carry_line_numbers() {
    match Config::parse("epochs=3\n\nbogus=1\n") {
        Err(Error::Config { line: 3, reason }) => assert!(reason.contains("bogus")),
        other => panic!("{other:?}"),
    }
    assert!(matches!(Config::parse("epochs\n"), Err(Error::Config { line: 1, .. })));
    assert!(matches!(Config::parse("epochs=many\n"), Err(Error::Config { line: 1, .. })));
    assert!(matches!(Config::parse("monotone=maybe\n"), Err(Error::Config { line: 1, .. })));
}

#[test]
fn text_round_trip_and_hash() {
    let mut c = Config::default();
    c.set("embedding_dim", "12").unwrap();
    c.set("delta_a", "0.25").unwrap();
    c.set("phi", "Subclass|Implement").unwrap();
    c.set("ecov", "literal").unwrap();
    c.set("update_lr", "0.375").unwrap();
    let back = Config::parse(&c.to_text()).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.hash(), c.hash());
    assert_ne!(Config::default().hash(), c.hash());
    assert_eq!(c.to_text().lines().count(), KEYS.len());
}

#[test]
fn phi_lists() {
    let phi = parse_phi("PreKnowledge|ApplyToBasic").unwrap();
    assert!(phi.allows(RelationKind::PreKnowledge) && !phi.allows(RelationKind::Subclass));
    assert!(parse_phi("Sibling").is_err());
}

#[test]
fn load_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("run.cfg");
    std::fs::write(&p, "top_k=3\n").unwrap();
    assert_eq!(Config::load(&p).unwrap().pipeline.simulation.top_k, 3);
}
