//! The full model: vision property encoder plus generator, wired according
//! to the effective (post-ablation) architecture.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{PropertyLabels, SignSample};
use crate::error::{Error, Result};
use crate::generator::{GenerationOutput, Generator, Vocab, PAD_ID};
use crate::nn::layers::Dropout;
use crate::nn::{Gradients, Graph, ParamStore, Var};
use crate::retrieval::{ContextInput, RetrievalMemory};
use crate::tokenizer::Tokenizer;
use crate::vision::{encoding_from, PropertyEncoder, PropertyEncoding};

use super::config::{apply_ablation, EffectiveArchitecture, ModelConfig};

/// One training or evaluation example with its context already retrieved
/// and every token mapped to an id.
#[derive(Debug, Clone)]
pub struct PreparedSample<'a> {
    pub sample: &'a SignSample,
    pub context: ContextInput,
    pub source_ids: Vec<usize>,
    pub target_ids: Vec<usize>,
    pub labels: PropertyLabels,
}

impl PreparedSample<'_> {
    /// The serialized context length `U`.
    pub fn context_len(&self) -> usize {
        self.source_ids.len()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub gen: f64,
    pub st: f64,
    pub ss: f64,
}

impl LossBreakdown {
    pub fn scaled(self, s: f64) -> Self {
        Self {
            total: self.total * s,
            gen: self.gen * s,
            st: self.st * s,
            ss: self.ss * s,
        }
    }

    pub fn plus(self, o: Self) -> Self {
        Self {
            total: self.total + o.total,
            gen: self.gen + o.gen,
            st: self.st + o.st,
            ss: self.ss + o.ss,
        }
    }
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub total: Var,
    pub encoder_output: Var,
    pub breakdown: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct GlossModel {
    pub config: ModelConfig,
    pub arch: EffectiveArchitecture,
    pub vocab: Vocab,
    pub store: ParamStore,
    pub vision: Option<PropertyEncoder>,
    pub generator: Generator,
}

impl GlossModel {
    /// Fresh parameters drawn from `config.seed`.
    pub fn new(config: ModelConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        let arch = apply_ablation(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::default();
        let vision = if arch.run_vision {
            Some(PropertyEncoder::new(&mut store, config.vision_config(), &mut rng)?)
        } else {
            None
        };
        let generator = Generator::new(&mut store, config.generator_config(vocab.len()), &mut rng)?;
        Ok(Self {
            config,
            arch,
            vocab,
            store,
            vision,
            generator,
        })
    }

    pub fn tokenizer(&self) -> Box<dyn Tokenizer> {
        self.config.generator.tokenizer.build()
    }

    /// Retrieves context for `sample` (never returning the sample itself)
    /// and maps everything to ids.
    pub fn prepare<'a>(&self, sample: &'a SignSample, memory: &RetrievalMemory) -> PreparedSample<'a> {
        let tokenizer = self.tokenizer();
        let context = memory.context_for(&sample.gloss, self.arch.k, Some(&sample.sample_id), tokenizer.as_ref());
        let (source_ids, _) = self.vocab.encode(&context.serialized);
        let (target_ids, _) = self.vocab.encode(&tokenizer.tokenize(&sample.target));
        PreparedSample {
            sample,
            context,
            source_ids,
            target_ids,
            labels: self.config.punctuation().labels(&sample.target),
        }
    }

    /// Builds the full combined-loss graph for one sample.
    pub fn forward(
        &self,
        g: &mut Graph,
        prepared: &PreparedSample,
        vision_dropout: &mut Dropout,
        generator_dropout: &mut Dropout,
    ) -> Result<ForwardVars> {
        let mut indicators = Vec::with_capacity(2);
        let mut property_terms: Vec<(Var, f64)> = Vec::new();
        let (mut st, mut ss) = (0.0, 0.0);
        if let Some(vision) = &self.vision {
            let vv = vision.forward(g, &prepared.sample.frame_features, vision_dropout)?;
            let lst = g.cross_entropy(vv.logits_st, &[Some(prepared.labels.type_class())]);
            let lss = g.cross_entropy(vv.logits_ss, &[Some(prepared.labels.structure_class())]);
            st = g.scalar(lst);
            ss = g.scalar(lss);
            let feed = |g: &mut Graph, z: Var| if self.config.stop_generation_grad { g.detach(z) } else { z };
            if self.arch.use_type_indicator {
                indicators.push(feed(g, vv.z_st));
            }
            if self.arch.use_structure_indicator {
                indicators.push(feed(g, vv.z_ss));
            }
            if self.arch.alpha > 0.0 {
                property_terms.push((lst, self.arch.alpha));
            }
            if self.arch.beta > 0.0 {
                property_terms.push((lss, self.arch.beta));
            }
        }
        let e_g = self.generator.embed(g, &prepared.source_ids);
        let z_g = self.generator.encode_vars(g, &indicators, e_g, generator_dropout)?;
        let (inputs, gold) = self.generator.teacher_forcing_pair(&prepared.target_ids);
        let logits = self.generator.decode_logits(g, z_g, &inputs, generator_dropout)?;
        let targets: Vec<Option<usize>> = gold.iter().map(|&t| (t != PAD_ID).then_some(t)).collect();
        let lgen = g.cross_entropy(logits, &targets);
        let mut terms = vec![(lgen, 1.0)];
        terms.extend(property_terms);
        let total = g.weighted_sum(&terms);
        let breakdown = LossBreakdown {
            total: g.scalar(total),
            gen: g.scalar(lgen),
            st,
            ss,
        };
        Ok(ForwardVars {
            total,
            encoder_output: z_g,
            breakdown,
        })
    }

    /// Combined loss in evaluation mode (no dropout).
    pub fn loss(&self, store: &ParamStore, prepared: &PreparedSample) -> Result<LossBreakdown> {
        let mut g = Graph::new(store);
        let v = self.forward(&mut g, prepared, &mut Dropout::eval(), &mut Dropout::eval())?;
        Ok(v.breakdown)
    }

    /// Gradients of the combined loss with respect to every parameter.
    pub fn gradients(
        &self,
        store: &ParamStore,
        prepared: &PreparedSample,
        dropout_seed: Option<u64>,
    ) -> Result<(Gradients, LossBreakdown)> {
        let (mut vd, mut gd) = match dropout_seed {
            Some(seed) => (
                Dropout::train(self.config.vision.dropout, ChaCha8Rng::seed_from_u64(seed)),
                Dropout::train(self.config.generator.dropout, ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15)),
            ),
            None => (Dropout::eval(), Dropout::eval()),
        };
        let mut g = Graph::new(store);
        let v = self.forward(&mut g, prepared, &mut vd, &mut gd)?;
        Ok((g.backward(v.total), v.breakdown))
    }

    /// Encoder input row count for `prepared` (`U`, `U + 1` or `U + 2`).
    pub fn encoder_rows(&self, prepared: &PreparedSample) -> Result<usize> {
        let mut g = Graph::new(&self.store);
        let v = self.forward(&mut g, prepared, &mut Dropout::eval(), &mut Dropout::eval())?;
        Ok(g.shape(v.encoder_output).0)
    }

    /// Runs vision (when active) and the generator encoder for an inference
    /// input.
    pub fn encode_input(
        &self,
        context: &ContextInput,
        frame_features: Option<&Array2<f64>>,
    ) -> Result<(Array2<f64>, Option<PropertyEncoding>)> {
        let mut g = Graph::new(&self.store);
        let mut indicators = Vec::new();
        let mut encoding = None;
        if let Some(vision) = &self.vision {
            let frames = frame_features.ok_or(Error::MissingFeatures)?;
            let vv = vision.forward(&mut g, frames, &mut Dropout::eval())?;
            encoding = Some(encoding_from(&g, &vv));
            if self.arch.use_type_indicator {
                indicators.push(vv.z_st);
            }
            if self.arch.use_structure_indicator {
                indicators.push(vv.z_ss);
            }
        }
        let (ids, _) = self.vocab.encode(&context.serialized);
        let e_g = self.generator.embed(&mut g, &ids);
        let z_g = self.generator.encode_vars(&mut g, &indicators, e_g, &mut Dropout::eval())?;
        Ok((g.value(z_g).clone(), encoding))
    }

    pub fn generate(&self, context: &ContextInput, frame_features: Option<&Array2<f64>>) -> Result<(GenerationOutput, Option<PropertyEncoding>)> {
        let (z_g, enc) = self.encode_input(context, frame_features)?;
        let out = self.generator.generate(&self.store, &self.vocab, &z_g, self.config.decoding)?;
        Ok((out, enc))
    }
}

/// Vocabulary over training glosses and tokenized training targets.
pub fn build_vocab<'a>(samples: impl IntoIterator<Item = &'a SignSample>, tokenizer: &dyn Tokenizer) -> Vocab {
    let mut vocab = Vocab::build(std::iter::empty::<&str>());
    for s in samples {
        for t in &s.gloss {
            vocab.insert(t);
        }
        for t in tokenizer.tokenize(&s.target) {
            vocab.insert(&t);
        }
    }
    vocab
}
