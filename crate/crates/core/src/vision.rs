//! Vision-based sentence-property learning.
//!
//! Two learned prefix tokens are prepended to the frame features, positions
//! are added over all `N_V + 2` slots, and a Transformer encoder runs over the
//! result. The first two output rows are the sentence-type and
//! sentence-structure indicator embeddings; each feeds a linear two-way head.

use log::warn;
use ndarray::{s, Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::PropertyLabels;
use crate::error::{Error, Result};
use crate::nn::layers::{Dropout, EncoderStack, Linear};
use crate::nn::{softmax_rows, Graph, ParamId, ParamStore, Var};

pub use crate::nn::positional::sinusoidal_positions;

const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyEncoderConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    /// Positional capacity, prefix slots included.
    pub max_frames: usize,
    pub ff_dim: usize,
    pub dropout: f64,
}

impl Default for PropertyEncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 768,
            layers: 2,
            heads: 8,
            max_frames: 512,
            ff_dim: 4 * 768,
            dropout: 0.1,
        }
    }
}

impl PropertyEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "vision d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(Error::Config("vision d_model must be even".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("vision encoder needs at least one layer".into()));
        }
        if self.max_frames < 3 {
            return Err(Error::Config("vision max_frames must leave room for at least one frame".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Indicator embeddings and head distributions for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyEncoding {
    pub z_st: Array1<f64>,
    pub z_ss: Array1<f64>,
    pub p_hat_st: [f64; 2],
    pub p_hat_ss: [f64; 2],
}

/// Graph handles produced by [`PropertyEncoder::forward`].
#[derive(Debug, Clone, Copy)]
pub struct VisionVars {
    /// Full encoder output `Z`, `(N_V + 2) × D1`.
    pub encoded: Var,
    pub z_st: Var,
    pub z_ss: Var,
    pub logits_st: Var,
    pub logits_ss: Var,
}

#[derive(Debug, Clone)]
pub struct PropertyEncoder {
    pub config: PropertyEncoderConfig,
    pub prefix_st: ParamId,
    pub prefix_ss: ParamId,
    pub encoder: EncoderStack,
    pub type_head: Linear,
    pub structure_head: Linear,
}

impl PropertyEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: PropertyEncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let prefix_st = store.add_normal("vision.prefix_st", 1, d, 0.02, rng);
        let prefix_ss = store.add_normal("vision.prefix_ss", 1, d, 0.02, rng);
        let encoder = EncoderStack::new(store, "vision.encoder", config.layers, d, config.heads, config.ff_dim, rng);
        let type_head = Linear::new(store, "vision.type_head", d, 2, rng);
        let structure_head = Linear::new(store, "vision.structure_head", d, 2, rng);
        Ok(Self {
            config,
            prefix_st,
            prefix_ss,
            encoder,
            type_head,
            structure_head,
        })
    }

    /// Frames beyond `max_frames - 2` are dropped from the tail.
    pub fn forward(&self, g: &mut Graph, frames: &Array2<f64>, dropout: &mut Dropout) -> Result<VisionVars> {
        let d = self.config.d_model;
        if frames.ncols() != d {
            return Err(Error::Dimension {
                expected: d,
                found: frames.ncols(),
            });
        }
        if frames.nrows() == 0 {
            return Err(Error::Contract("video has no frames".into()));
        }
        let cap = self.config.max_frames - 2;
        let frames = if frames.nrows() > cap {
            warn!("truncating video from {} to {cap} frames", frames.nrows());
            frames.slice(s![..cap, ..]).to_owned()
        } else {
            frames.clone()
        };
        let slots = frames.nrows() + 2;
        let m_st = g.param(self.prefix_st);
        let m_ss = g.param(self.prefix_ss);
        let f = g.constant(frames);
        let stacked = g.concat_rows(&[m_st, m_ss, f]);
        let pe = sinusoidal_positions(slots, d)?;
        let x = g.add_const(stacked, &pe);
        let x = dropout.apply(g, x);
        let encoded = self.encoder.forward(g, x, None, dropout);
        let z_st = g.slice_rows(encoded, 0, 1);
        let z_ss = g.slice_rows(encoded, 1, 1);
        let logits_st = self.type_head.forward(g, z_st);
        let logits_ss = self.structure_head.forward(g, z_ss);
        Ok(VisionVars {
            encoded,
            z_st,
            z_ss,
            logits_st,
            logits_ss,
        })
    }

    /// Output row count and indicator embeddings for one video, in evaluation mode.
    pub fn encode_video(&self, store: &ParamStore, frames: &Array2<f64>) -> Result<(usize, PropertyEncoding)> {
        let mut g = Graph::new(store);
        let vars = self.forward(&mut g, frames, &mut Dropout::eval())?;
        let rows = g.shape(vars.encoded).0;
        Ok((rows, encoding_from(&g, &vars)))
    }
}

pub(crate) fn encoding_from(g: &Graph, vars: &VisionVars) -> PropertyEncoding {
    let pst = softmax_rows(g.value(vars.logits_st));
    let pss = softmax_rows(g.value(vars.logits_ss));
    PropertyEncoding {
        z_st: g.value(vars.z_st).row(0).to_owned(),
        z_ss: g.value(vars.z_ss).row(0).to_owned(),
        p_hat_st: [pst[[0, 0]], pst[[0, 1]]],
        p_hat_ss: [pss[[0, 0]], pss[[0, 1]]],
    }
}

/// Cross-entropy of one-hot `label` under `p_hat`, with a `1e-12` log floor.
pub fn binary_cross_entropy(p_hat: &[f64; 2], label: &[f64; 2]) -> f64 {
    -label
        .iter()
        .zip(p_hat)
        .map(|(p, q)| p * q.max(LOG_FLOOR).ln())
        .sum::<f64>()
}

/// `(L_st, L_ss)`.
pub fn property_losses(encoding: &PropertyEncoding, labels: &PropertyLabels) -> (f64, f64) {
    (
        binary_cross_entropy(&encoding.p_hat_st, &labels.sentence_type),
        binary_cross_entropy(&encoding.p_hat_ss, &labels.sentence_structure),
    )
}
