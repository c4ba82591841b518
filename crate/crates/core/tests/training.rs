use std::path::PathBuf;
use std::time::Instant;

use icd_chapter::nn::{
    build_vocab, evaluate, read_model, train, write_model, Example, ModelConfig, ModelKind,
};
use serde::Deserialize;

#[derive(Deserialize)]
struct Doc {
    doc_id: String,
    label: u8,
    text: String,
}

fn corpus() -> Vec<Doc> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/separable_200.jsonl");
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn split(kind: ModelKind) -> (ModelConfig, icd_chapter::nn::Vocab, Vec<Example>, Vec<Example>) {
    let docs = corpus();
    let (tr, te) = docs.split_at(160);
    let config = ModelConfig::desk(kind);
    let vocab = build_vocab(tr.iter().map(|d| d.text.as_str()), 1).unwrap();
    let enc = |ds: &[Doc]| {
        ds.iter()
            .map(|d| Example::encode(d.doc_id.clone(), &d.text, d.label, &vocab, config.max_len))
            .collect::<Vec<_>>()
    };
    let (a, b) = (enc(tr), enc(te));
    (config, vocab, a, b)
}

#[test]
fn both_architectures_learn_the_separable_corpus() {
    for kind in ModelKind::ALL {
        let (config, vocab, tr, te) = split(kind);
        let start = Instant::now();
        let model = train(&config, vocab, &tr, Some(&te)).unwrap();
        let res = evaluate(&model, &te).unwrap();
        assert!(res.f1 >= 0.95, "{kind} f1 {}", res.f1);
        assert!(start.elapsed().as_secs() < 300);
        let losses: Vec<f64> = model.training_log.iter().map(|e| e.train_loss).collect();
        assert!(losses[0] > losses[1] && losses[1] > losses[2], "{kind} {losses:?}");
    }
}

#[test]
fn same_seed_gives_bit_identical_models() {
    for kind in ModelKind::ALL {
        let (mut config, vocab, tr, _) = split(kind);
        config.epochs = 2;
        let a = train(&config, vocab.clone(), &tr, None).unwrap();
        let b = train(&config, vocab.clone(), &tr, None).unwrap();
        let mut ba = Vec::new();
        let mut bb = Vec::new();
        write_model(&a, &mut ba).unwrap();
        write_model(&b, &mut bb).unwrap();
        assert_eq!(ba, bb);
        assert_eq!(read_model(ba.as_slice()).unwrap(), a);
        config.seed += 1;
        let c = train(&config, vocab, &tr, None).unwrap();
        assert_ne!(c.params, a.params);
    }
}

