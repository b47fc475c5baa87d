//! Sequence-to-sequence spoken-language generation conditioned on
//! `[z_st; z_ss; E_g]`.

mod decode;
pub mod vocab;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{DecoderStack, Dropout, EncoderStack, Linear};
use crate::nn::positional::sinusoidal_positions;
use crate::nn::{softmax_rows, Graph, ParamId, ParamStore, Var};
use crate::retrieval::ContextInput;
use crate::tokenizer::TokenizerKind;

pub use decode::{DecodeMode, GenerationOutput};
pub use vocab::{Vocab, BOS_ID, EOS_ID, PAD_ID, UNK_ID};

const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backbone {
    /// Small Transformer trained from zero.
    #[default]
    Scratch,
    /// Slot for an externally supplied pretrained encoder-decoder.
    PretrainedAdapter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    /// Width of incoming indicator embeddings; a linear adapter bridges it
    /// when it differs from `d_model`.
    pub indicator_dim: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    /// Cap on decoded tokens, `<eos>` included.
    pub max_target_len: usize,
    pub backbone: Backbone,
    pub tokenizer: TokenizerKind,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < vocab::RESERVED.len() {
            return Err(Error::Config(format!(
                "vocab_size {} cannot hold the {} reserved tokens",
                self.vocab_size,
                vocab::RESERVED.len()
            )));
        }
        if self.max_target_len == 0 {
            return Err(Error::Config("max_target_len must be at least 1".into()));
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) || !self.d_model.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "generator d_model {} must be even and divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.enc_layers == 0 || self.dec_layers == 0 {
            return Err(Error::Config("generator needs at least one encoder and decoder layer".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub embedding: ParamId,
    pub adapter: Option<Linear>,
    pub encoder: EncoderStack,
    pub decoder: DecoderStack,
    pub output: Linear,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: GeneratorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if config.backbone == Backbone::PretrainedAdapter {
            return Err(Error::Config(
                "the pretrained-adapter backbone needs external weights, which this build does not bundle".into(),
            ));
        }
        let d = config.d_model;
        let embedding = store.add_normal("generator.embedding", config.vocab_size, d, 1.0, rng);
        let adapter = (config.indicator_dim != d)
            .then(|| Linear::new(store, "generator.adapter", config.indicator_dim, d, rng));
        let encoder = EncoderStack::new(store, "generator.encoder", config.enc_layers, d, config.heads, config.ff_dim, rng);
        let decoder = DecoderStack::new(store, "generator.decoder", config.dec_layers, d, config.heads, config.ff_dim, rng);
        let output = Linear::new(store, "generator.output", d, config.vocab_size, rng);
        Ok(Self {
            config,
            embedding,
            adapter,
            encoder,
            decoder,
            output,
        })
    }

    pub fn embed(&self, g: &mut Graph, ids: &[usize]) -> Var {
        let table = g.param(self.embedding);
        g.gather(table, ids)
    }

    /// `E_g` for a serialized context. Unknown tokens map to `<unk>`; their
    /// count is returned alongside.
    pub fn embed_context(&self, store: &ParamStore, vocab: &Vocab, context: &ContextInput) -> (Array2<f64>, usize) {
        let (ids, unknown) = vocab.encode(&context.serialized);
        let mut g = Graph::new(store);
        let e = self.embed(&mut g, &ids);
        (g.value(e).clone(), unknown)
    }

    /// Prepends the (adapted) indicator rows to `e_g`, adds positions over
    /// every slot and runs the encoder. `indicators` may hold zero, one or two
    /// `1 × indicator_dim` rows.
    pub fn encode_vars(&self, g: &mut Graph, indicators: &[Var], e_g: Var, dropout: &mut Dropout) -> Result<Var> {
        let d = self.config.d_model;
        let (u, width) = g.shape(e_g);
        if u == 0 {
            return Err(Error::Contract("context embedding has no rows".into()));
        }
        if width != d {
            return Err(Error::Dimension { expected: d, found: width });
        }
        let mut rows = Vec::with_capacity(indicators.len() + 1);
        for &z in indicators {
            let zw = g.shape(z).1;
            if zw != self.config.indicator_dim {
                return Err(Error::Dimension {
                    expected: self.config.indicator_dim,
                    found: zw,
                });
            }
            rows.push(match &self.adapter {
                Some(a) => a.forward(g, z),
                None => z,
            });
        }
        rows.push(e_g);
        let e = if rows.len() == 1 { e_g } else { g.concat_rows(&rows) };
        let slots = g.shape(e).0;
        let x = g.add_const(e, &sinusoidal_positions(slots, d)?);
        let x = dropout.apply(g, x);
        Ok(self.encoder.forward(g, x, None, dropout))
    }

    /// `Z_g` for concrete inputs, in evaluation mode.
    pub fn encode(&self, store: &ParamStore, indicators: &[&Array1<f64>], e_g: &Array2<f64>) -> Result<Array2<f64>> {
        let mut g = Graph::new(store);
        let zs: Vec<Var> = indicators
            .iter()
            .map(|z| g.constant(z.view().insert_axis(ndarray::Axis(0)).to_owned()))
            .collect();
        let e = g.constant(e_g.clone());
        let out = self.encode_vars(&mut g, &zs, e, &mut Dropout::eval())?;
        Ok(g.value(out).clone())
    }

    /// Decoder logits for every position of `input_ids` (`<bos>` first).
    pub fn decode_logits(&self, g: &mut Graph, memory: Var, input_ids: &[usize], dropout: &mut Dropout) -> Result<Var> {
        let d = self.config.d_model;
        let y = self.embed(g, input_ids);
        let y = g.add_const(y, &sinusoidal_positions(input_ids.len(), d)?);
        let y = dropout.apply(g, y);
        let h = self.decoder.forward(g, y, memory, None, dropout);
        Ok(self.output.forward(g, h))
    }

    /// Teacher-forced decoder inputs and gold targets for `target_ids`
    /// (specials excluded), truncated so that `<eos>` fits under the cap.
    pub fn teacher_forcing_pair(&self, target_ids: &[usize]) -> (Vec<usize>, Vec<usize>) {
        let keep = target_ids.len().min(self.config.max_target_len - 1);
        let mut inputs = Vec::with_capacity(keep + 1);
        inputs.push(BOS_ID);
        inputs.extend_from_slice(&target_ids[..keep]);
        let mut gold = target_ids[..keep].to_vec();
        gold.push(EOS_ID);
        (inputs, gold)
    }

    /// Teacher-forced next-token distributions, one per gold position.
    pub fn teacher_forced_dists(&self, store: &ParamStore, z_g: &Array2<f64>, target_ids: &[usize]) -> Result<Vec<Vec<f64>>> {
        let (inputs, _) = self.teacher_forcing_pair(target_ids);
        let mut g = Graph::new(store);
        let memory = g.constant(z_g.clone());
        let logits = self.decode_logits(&mut g, memory, &inputs, &mut Dropout::eval())?;
        Ok(softmax_rows(g.value(logits)).rows().into_iter().map(|r| r.to_vec()).collect())
    }

    /// `ŷ_i` given the previously decoded ids (without `<bos>`).
    pub fn decode_step(&self, store: &ParamStore, z_g: &Array2<f64>, prefix: &[usize]) -> Result<Vec<f64>> {
        if prefix.len() >= self.config.max_target_len {
            return Err(Error::Capacity {
                len: prefix.len(),
                cap: self.config.max_target_len,
            });
        }
        let mut inputs = Vec::with_capacity(prefix.len() + 1);
        inputs.push(BOS_ID);
        inputs.extend_from_slice(prefix);
        let mut g = Graph::new(store);
        let memory = g.constant(z_g.clone());
        let logits = self.decode_logits(&mut g, memory, &inputs, &mut Dropout::eval())?;
        let last = g.slice_rows(logits, inputs.len() - 1, 1);
        Ok(softmax_rows(g.value(last)).row(0).to_vec())
    }

    pub fn generate(&self, store: &ParamStore, vocab: &Vocab, z_g: &Array2<f64>, mode: DecodeMode) -> Result<GenerationOutput> {
        decode::generate(self, store, vocab, z_g, mode, false)
    }

    pub fn generate_with_dists(
        &self,
        store: &ParamStore,
        vocab: &Vocab,
        z_g: &Array2<f64>,
        mode: DecodeMode,
    ) -> Result<GenerationOutput> {
        decode::generate(self, store, vocab, z_g, mode, true)
    }
}

/// Mean negative log-likelihood of the gold ids, skipping `<pad>` targets.
pub fn generation_loss(stepwise_dists: &[Vec<f64>], target_ids: &[usize]) -> Result<f64> {
    if stepwise_dists.len() != target_ids.len() {
        return Err(Error::Contract(format!(
            "{} distributions for {} targets",
            stepwise_dists.len(),
            target_ids.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (dist, &t) in stepwise_dists.iter().zip(target_ids) {
        if t == PAD_ID {
            continue;
        }
        let p = *dist
            .get(t)
            .ok_or_else(|| Error::Contract(format!("target id {t} outside distribution of size {}", dist.len())))?;
        total -= p.max(LOG_FLOOR).ln();
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// `L = L_gen + α·L_st + β·L_ss`.
pub fn combined_loss(l_gen: f64, l_st: f64, l_ss: f64, alpha: f64, beta: f64) -> Result<f64> {
    if alpha < 0.0 || beta < 0.0 || !alpha.is_finite() || !beta.is_finite() {
        return Err(Error::Config(format!("loss weights must be non-negative, got α={alpha}, β={beta}")));
    }
    Ok(l_gen + alpha * l_st + beta * l_ss)
}
