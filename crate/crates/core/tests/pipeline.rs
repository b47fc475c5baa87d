use std::sync::OnceLock;

use glosslate::corpus::{load_corpus, DEFAULT_GLOSS_DELIMITER, write_corpus, Corpus, Split};
use glosslate::error::Error;
use glosslate::generator::DecodeMode;
use glosslate::pipeline::*;
use glosslate::retrieval::RetrievalMemory;
use glosslate::synth::{synthesize, SynthConfig};
use glosslate::tokenizer::TokenizerKind;

fn config(epochs: usize) -> ModelConfig {
    let mut c = ModelConfig {
        d_model: 16,
        epochs,
        batch_size: 8,
        learning_rate: 1e-3,
        max_target_len: 16,
        eval_every: 0,
        seed: 3,
        ..Default::default()
    };
    c.vision.layers = 1;
    c.vision.heads = 2;
    c.vision.dropout = 0.0;
    c.generator.enc_layers = 1;
    c.generator.dec_layers = 1;
    c.generator.heads = 2;
    c.generator.dropout = 0.0;
    c
}

fn corpus(n: usize, seed: u64) -> Corpus {
    let cfg = SynthConfig {
        n_samples: n,
        d_model: 16,
        seed,
        ..Default::default()
    };
    Corpus::new(synthesize(&cfg), Split::Train).unwrap()
}

fn empty() -> Corpus {
    Corpus::new(vec![], Split::Dev).unwrap()
}

/// A model trained to memorize a 20-sample corpus, shared across tests.
fn memorized() -> &'static (Corpus, TrainOutcome) {
    static CELL: OnceLock<(Corpus, TrainOutcome)> = OnceLock::new();
    CELL.get_or_init(|| {
        let c = corpus(20, 31);
        let out = train(&config(150), &c, &empty()).unwrap();
        (c, out)
    })
}

#[test]
fn translate_recovers_memorized_sentences() {
    let (c, out) = memorized();
    let mut hits = 0;
    for s in c.iter() {
        let t = translate(&out.model, &out.memory, &s.gloss, Some(&s.frame_features)).unwrap();
        assert_eq!(t.neighbors.len(), 3);
        assert!(t.neighbors.iter().all(|n| n.doc_id != s.sample_id));
        hits += (t.text == s.target) as usize;
    }
    assert_eq!(hits, 20, "{hits}/20 memorized");
}

#[test]
fn translate_requires_features_unless_property_is_ablated() {
    let (c, out) = memorized();
    let s = &c.samples[0];
    assert!(matches!(
        translate(&out.model, &out.memory, &s.gloss, None),
        Err(Error::MissingFeatures)
    ));
    assert!(matches!(
        translate(&out.model, &out.memory, &[], Some(&s.frame_features)),
        Err(Error::EmptyGloss)
    ));

    let cfg = ModelConfig {
        ablation: vec!["no_property".into()],
        ..config(1)
    };
    let ablated = train(&cfg, c, &empty()).unwrap();
    assert!(ablated.model.vision.is_none());
    let t = translate(&ablated.model, &ablated.memory, &s.gloss, None).unwrap();
    assert!(t.properties.is_none());
}

#[test]
fn no_cont_know_uses_the_bare_gloss() {
    let c = corpus(10, 4);
    let cfg = ModelConfig {
        ablation: vec!["no_cont_know".into()],
        ..config(1)
    };
    let out = train(&cfg, &c, &empty()).unwrap();
    let s = &c.samples[0];
    let t = translate(&out.model, &out.memory, &s.gloss, Some(&s.frame_features)).unwrap();
    assert!(t.neighbors.is_empty());
    assert_eq!(out.memory.exact_match(&s.gloss), Some(s.sample_id.as_str()));
    assert_eq!(out.memory.exact_match(&["unseen".to_string()]), None);
    let p = out.model.prepare(s, &out.memory);
    assert_eq!(p.context.serialized, s.gloss);
    assert_eq!(out.model.encoder_rows(&p).unwrap(), s.gloss.len() + 2);
}

#[test]
fn evaluate_checkpoint_contracts() {
    let (c, out) = memorized();
    let cfg = out.checkpoint.config.clone();
    let report = evaluate(&out.checkpoint, c, &cfg).unwrap();
    assert!(report.metrics.bleu_n(1) >= report.metrics.bleu_n(4));
    assert!(report.metrics.bleu_n(4) >= 90.0, "{:?}", report.metrics);
    assert_eq!(report.decoding, "greedy");
    assert_eq!(report.predictions.len(), 20);
    assert!(matches!(evaluate(&out.checkpoint, &empty(), &cfg), Err(Error::EmptyCorpus)));

    let mut word = cfg.clone();
    word.generator.tokenizer = TokenizerKind::Word;
    assert!(matches!(evaluate(&out.checkpoint, c, &word), Err(Error::VocabMismatch(_))));
    let mut delim = cfg.clone();
    delim.gloss_delimiter = "|".into();
    assert!(matches!(evaluate(&out.checkpoint, c, &delim), Err(Error::VocabMismatch(_))));

    let beam = ModelConfig {
        decoding: DecodeMode::Beam { width: 3 },
        ..cfg
    };
    let report = evaluate(&out.checkpoint, c, &beam).unwrap();
    assert_eq!(report.decoding, "beam(3)");
}

#[test]
fn checkpoint_round_trips_through_disk() {
    let (c, out) = memorized();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    out.checkpoint.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let (model, memory) = loaded.restore().unwrap();
    assert_eq!(memory, out.memory);
    let s = &c.samples[3];
    let a = translate(&model, &memory, &s.gloss, Some(&s.frame_features)).unwrap();
    let b = translate(&out.model, &out.memory, &s.gloss, Some(&s.frame_features)).unwrap();
    assert_eq!(a, b);

    let mut bad = loaded.clone();
    bad.format = "something-else".into();
    assert!(matches!(bad.restore(), Err(Error::Checkpoint(_))));
}

#[test]
fn evaluation_excludes_each_sample_from_its_own_context() {
    // With self-exclusion every neighbor is another sample, so the memory
    // size bounds the retrievable set.
    let (c, out) = memorized();
    let memory = RetrievalMemory::from_corpus(c, 1.2, 0.75).unwrap();
    for s in c.iter() {
        let p = out.model.prepare(s, &memory);
        assert!(p.context.neighbors.iter().all(|n| n.doc_id != s.sample_id));
    }
}

#[test]
fn corpus_files_feed_training() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(8, 12);
    let path = dir.path().join("train.jsonl");
    write_corpus(&path, &c.samples, true, DEFAULT_GLOSS_DELIMITER).unwrap();
    let loaded = load_corpus(&path, Split::Train).unwrap();
    assert_eq!(loaded.len(), 8);
    for (a, b) in loaded.iter().zip(c.iter()) {
        assert_eq!(a.gloss, b.gloss);
        assert_eq!(a.target, b.target);
        // Sidecar features are stored as f32.
        assert!((&a.frame_features - &b.frame_features).iter().all(|d| d.abs() < 1e-6));
    }
    let out = train(&config(1), &loaded, &empty()).unwrap();
    assert_eq!(out.state.loss_history.len(), 1);
}

#[test]
fn wrong_feature_width_is_rejected() {
    let c = corpus(4, 2);
    let cfg = ModelConfig {
        d_model: 32,
        ..config(1)
    };
    assert!(matches!(
        train(&cfg, &c, &empty()),
        Err(Error::Dimension { expected: 32, found: 16 })
    ));
}

#[test]
fn config_round_trips_through_toml() {
    let mut cfg = config(7);
    cfg.ablation = vec!["no_type".into()];
    cfg.decoding = DecodeMode::Beam { width: 4 };
    cfg.generator.tokenizer = TokenizerKind::Word;
    cfg.generator.ff_dim = Some(48);
    let text = cfg.to_toml_string().unwrap();
    assert_eq!(ModelConfig::from_toml_str(&text).unwrap(), cfg);

    let partial = ModelConfig::from_toml_str("K = 5\nalpha = 0.5\n[vision]\nlayers = 3\n").unwrap();
    assert_eq!(partial.k, 5);
    assert_eq!(partial.alpha, 0.5);
    assert_eq!(partial.vision.layers, 3);
    assert_eq!(partial.beta, 1.0);
    assert!(ModelConfig::from_toml_str("bogus = 1").is_err());
    let bad_flag = ModelConfig::from_toml_str("ablation = [\"no_vision\"]").unwrap();
    assert!(matches!(apply_ablation(&bad_flag), Err(Error::Config(_))));
}

#[test]
fn default_architecture_matches_defaults() {
    let arch = apply_ablation(&ModelConfig::default()).unwrap();
    assert_eq!((arch.alpha, arch.beta, arch.k), (1.0, 1.0, 3));
    assert_eq!(arch.encoder_input_len(10), 12);
    assert_eq!(ModelConfig::default().learning_rate, 1e-5);
}

#[test]
fn parallel_and_sequential_runs_agree() {
    let c = corpus(10, 21);
    let dev = corpus(3, 22);
    let mut cfg = config(2);
    cfg.eval_every = 1;
    cfg.vision.dropout = 0.1;
    cfg.generator.dropout = 0.1;
    let par = train(&ModelConfig { parallelism: glosslate::exec::Parallelism::Parallel, ..cfg.clone() }, &c, &dev).unwrap();
    let seq = train(&ModelConfig { parallelism: glosslate::exec::Parallelism::Sequential, ..cfg }, &c, &dev).unwrap();
    assert_eq!(par.state.loss_history, seq.state.loss_history);
    assert_eq!(par.checkpoint.params, seq.checkpoint.params);
}

#[test]
fn documented_config_parses() {
    let text = r#"
alpha = 1.0
beta = 1.0
K = 3
d_model = 768
epochs = 40
batch_size = 8
learning_rate = 1e-5
grad_clip = 1.0
ablation = ["no_cont_know"]
seed = 0
parallelism = "sequential"

[decoding]
strategy = "beam"
width = 4

[vision]
layers = 2
heads = 8

[generator]
enc_layers = 2
dec_layers = 2
tokenizer = "word"
"#;
    let cfg = ModelConfig::from_toml_str(text).unwrap();
    assert_eq!(cfg.decoding, DecodeMode::Beam { width: 4 });
    assert_eq!(cfg.generator.tokenizer, TokenizerKind::Word);
    assert_eq!(apply_ablation(&cfg).unwrap().k, 0);
    assert_eq!(ModelConfig::from_toml_str("[decoding]\nstrategy = \"greedy\"\n").unwrap().decoding, DecodeMode::Greedy);
}
