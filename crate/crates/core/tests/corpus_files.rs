use lace_core::corpus::{load_corpus, write_examples};
use lace_core::evaluation::evaluate;
use lace_core::model::{load_checkpoint, save_checkpoint};
use lace_core::{generate_synthetic, ModelDims, ModelParams, TopicGroup};

#[test]
fn synthetic_corpus_survives_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.jsonl");
    let groups = generate_synthetic(21, 4, 3, 0.3);
    write_examples(&path, groups.iter().flat_map(TopicGroup::members)).unwrap();
    let loaded = load_corpus(&path).unwrap();
    assert_eq!(loaded, groups);

    let again = dir.path().join("again.jsonl");
    write_examples(&again, loaded.iter().flat_map(TopicGroup::members)).unwrap();
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(&again).unwrap()
    );
}

#[test]
fn checkpoint_file_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let groups = generate_synthetic(2, 3, 2, 0.0);
    let vocab =
        lace_core::corpus::Vocabulary::from_examples(groups.iter().flat_map(TopicGroup::members));
    let params = ModelParams::init(ModelDims::new(6, 4).unwrap(), vocab, 4);
    let path = dir.path().join("model.json");
    save_checkpoint(&params, &path).unwrap();
    let restored = load_checkpoint(&path).unwrap();
    assert_eq!(
        evaluate(&params, &groups).unwrap(),
        evaluate(&restored, &groups).unwrap()
    );
}
