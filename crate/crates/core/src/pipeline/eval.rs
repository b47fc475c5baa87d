//! Held-out evaluation and single-input translation.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::{class_of, Corpus};
use crate::error::{Error, Result};
use crate::exec;
use crate::generator::DecodeMode;
use crate::metrics::{evaluate_sentences, EvalReport};
use crate::retrieval::{Neighbor, RetrievalMemory};
use crate::vision::PropertyEncoding;

use super::checkpoint::Checkpoint;
use super::config::ModelConfig;
use super::model::GlossModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub hypothesis: String,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub metrics: EvalReport,
    /// Fraction of samples whose type head picks the gold class; absent when
    /// the vision encoder is ablated away.
    pub type_accuracy: Option<f64>,
    pub structure_accuracy: Option<f64>,
    /// Fraction of hypotheses whose derived labels match the reference's.
    pub punctuation_match: f64,
    pub decoding: String,
    pub predictions: Vec<Prediction>,
}

/// Evaluates `ckpt` on `corpus`, decoding with `config.decoding`.
///
/// The tokenizer and gloss delimiter must match the checkpoint's, since the
/// vocabulary was built with them.
pub fn evaluate(ckpt: &Checkpoint, corpus: &Corpus, config: &ModelConfig) -> Result<EvaluationSummary> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if config.generator.tokenizer != ckpt.config.generator.tokenizer {
        return Err(Error::VocabMismatch(format!(
            "tokenizer {:?} differs from the checkpoint's {:?}",
            config.generator.tokenizer, ckpt.config.generator.tokenizer
        )));
    }
    if config.gloss_delimiter != ckpt.config.gloss_delimiter {
        return Err(Error::VocabMismatch(format!(
            "gloss delimiter {:?} differs from the checkpoint's {:?}",
            config.gloss_delimiter, ckpt.config.gloss_delimiter
        )));
    }
    let (mut model, memory) = ckpt.restore()?;
    model.config.decoding = config.decoding;
    model.config.parallelism = config.parallelism;
    evaluate_model(&model, &memory, corpus)
}

/// Evaluates an in-memory model. A sample that is itself indexed never
/// appears among its own neighbors.
pub fn evaluate_model(model: &GlossModel, memory: &RetrievalMemory, corpus: &Corpus) -> Result<EvaluationSummary> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let tokenizer = model.tokenizer();
    let rules = model.config.punctuation();
    let outputs = exec::try_map(model.config.parallelism, &corpus.samples, |s| {
        let ctx = memory.context_for(&s.gloss, model.arch.k, Some(&s.sample_id), tokenizer.as_ref());
        let (out, enc) = model.generate(&ctx, Some(&s.frame_features))?;
        Ok::<_, Error>((out.text, enc))
    })?;

    let hyps: Vec<&str> = outputs.iter().map(|(t, _)| t.as_str()).collect();
    let refs: Vec<&str> = corpus.iter().map(|s| s.target.as_str()).collect();
    let metrics = evaluate_sentences(&hyps, &refs, tokenizer.as_ref())?;

    let n = corpus.len() as f64;
    let mut type_hits = 0usize;
    let mut stru_hits = 0usize;
    let mut punct_hits = 0usize;
    let mut have_vision = false;
    for ((hyp, enc), s) in outputs.iter().zip(corpus.iter()) {
        let gold = rules.labels(&s.target);
        if let Some(e) = enc {
            have_vision = true;
            type_hits += (class_of(&e.p_hat_st) == gold.type_class()) as usize;
            stru_hits += (class_of(&e.p_hat_ss) == gold.structure_class()) as usize;
        }
        punct_hits += (rules.labels(hyp) == gold) as usize;
    }
    let predictions = outputs
        .iter()
        .zip(corpus.iter())
        .map(|((hyp, _), s)| Prediction {
            sample_id: s.sample_id.clone(),
            hypothesis: hyp.clone(),
            reference: s.target.clone(),
        })
        .collect();
    Ok(EvaluationSummary {
        metrics,
        type_accuracy: have_vision.then(|| type_hits as f64 / n),
        structure_accuracy: have_vision.then(|| stru_hits as f64 / n),
        punctuation_match: punct_hits as f64 / n,
        decoding: model.config.decoding.to_string(),
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Translation {
    pub text: String,
    pub neighbors: Vec<Neighbor>,
    pub properties: Option<PropertyEncoding>,
    pub decoding: DecodeMode,
}

/// Translates one gloss sequence. A memory entry with exactly this gloss is
/// skipped, as the sample's own entry is during training, so a memorized
/// gloss sees the same context it was trained on.
pub fn translate(
    model: &GlossModel,
    memory: &RetrievalMemory,
    gloss: &[String],
    frame_features: Option<&Array2<f64>>,
) -> Result<Translation> {
    if gloss.is_empty() {
        return Err(Error::EmptyGloss);
    }
    let tokenizer = model.tokenizer();
    let ctx = memory.context_for(gloss, model.arch.k, memory.exact_match(gloss), tokenizer.as_ref());
    let (out, properties) = model.generate(&ctx, frame_features)?;
    Ok(Translation {
        text: out.text,
        neighbors: ctx.neighbors,
        properties,
        decoding: model.config.decoding,
    })
}
