//! Transformer building blocks on top of [`Graph`](super::graph::Graph).
//!
//! Layers hold only [`ParamId`]s; values live in the [`ParamStore`]. All
//! blocks are pre-norm: `x + f(LN(x))`.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};

const MASKED: f64 = -1e9;

/// Dropout state for one forward pass. `None` rng means evaluation mode.
pub struct Dropout {
    rate: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub fn train(rate: f64, rng: ChaCha8Rng) -> Self {
        Self {
            rate,
            rng: Some(rng),
        }
    }

    pub fn eval() -> Self {
        Self { rate: 0.0, rng: None }
    }

    pub fn apply(&mut self, g: &mut Graph, x: Var) -> Var {
        let Some(rng) = self.rng.as_mut() else { return x };
        if self.rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - self.rate;
        let (r, c) = g.shape(x);
        let mask = Array2::from_shape_simple_fn((r, c), || {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        g.mul_const(x, mask)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: store.add_xavier(format!("{name}.weight"), d_in, d_out, rng),
            bias: store.add_zeros(format!("{name}.bias"), 1, d_out),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        Self {
            gain: store.add_ones(format!("{name}.gain"), 1, d),
            bias: store.add_zeros(format!("{name}.bias"), 1, d),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias)
    }
}

/// Additive attention mask (`0` keeps, large negative drops).
pub fn attention_mask(q_len: usize, k_len: usize, causal: bool, key_pad: Option<&[bool]>) -> Option<Array2<f64>> {
    let has_pad = key_pad.is_some_and(|p| p.iter().any(|&b| b));
    if !causal && !has_pad {
        return None;
    }
    Some(Array2::from_shape_fn((q_len, k_len), |(q, k)| {
        let future = causal && k > q;
        let pad = key_pad.is_some_and(|p| p[k]);
        if future || pad {
            MASKED
        } else {
            0.0
        }
    }))
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        assert!(heads > 0 && d_model.is_multiple_of(heads), "d_model must divide into heads");
        Self {
            query: Linear::new(store, &format!("{name}.query"), d_model, d_model, rng),
            key: Linear::new(store, &format!("{name}.key"), d_model, d_model, rng),
            value: Linear::new(store, &format!("{name}.value"), d_model, d_model, rng),
            output: Linear::new(store, &format!("{name}.output"), d_model, d_model, rng),
            heads,
        }
    }

    pub fn forward(&self, g: &mut Graph, query: Var, memory: Var, mask: Option<&Array2<f64>>) -> Var {
        let q = self.query.forward(g, query);
        let k = self.key.forward(g, memory);
        let v = self.value.forward(g, memory);
        let d_model = g.shape(q).1;
        let d_head = d_model / self.heads;
        let scale = 1.0 / (d_head as f64).sqrt();
        let mut contexts = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * d_head, d_head);
            let kh = g.slice_cols(k, h * d_head, d_head);
            let vh = g.slice_cols(v, h * d_head, d_head);
            let scores = g.matmul_t(qh, kh);
            let scores = g.scale(scores, scale);
            let scores = match mask {
                Some(m) => g.add_const(scores, m),
                None => scores,
            };
            let attn = g.softmax(scores);
            contexts.push(g.matmul(attn, vh));
        }
        let joined = if contexts.len() == 1 {
            contexts[0]
        } else {
            g.concat_cols(&contexts)
        };
        self.output.forward(g, joined)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub expand: Linear,
    pub contract: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_model: usize, d_ff: usize, rng: &mut R) -> Self {
        Self {
            expand: Linear::new(store, &format!("{name}.expand"), d_model, d_ff, rng),
            contract: Linear::new(store, &format!("{name}.contract"), d_ff, d_model, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, dropout: &mut Dropout) -> Var {
        let h = self.expand.forward(g, x);
        let h = g.gelu(h);
        let h = dropout.apply(g, h);
        self.contract.forward(g, h)
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub attn_norm: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ff_norm: LayerNorm,
    pub ff: FeedForward,
}

impl EncoderLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        d_ff: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), d_model),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d_model, heads, rng),
            ff_norm: LayerNorm::new(store, &format!("{name}.ff_norm"), d_model),
            ff: FeedForward::new(store, &format!("{name}.ff"), d_model, d_ff, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, mask: Option<&Array2<f64>>, dropout: &mut Dropout) -> Var {
        let h = self.attn_norm.forward(g, x);
        let h = self.attn.forward(g, h, h, mask);
        let h = dropout.apply(g, h);
        let x = g.add(x, h);
        let h = self.ff_norm.forward(g, x);
        let h = self.ff.forward(g, h, dropout);
        let h = dropout.apply(g, h);
        g.add(x, h)
    }
}

#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub self_norm: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub cross_norm: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub ff_norm: LayerNorm,
    pub ff: FeedForward,
}

impl DecoderLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        d_ff: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            self_norm: LayerNorm::new(store, &format!("{name}.self_norm"), d_model),
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), d_model, heads, rng),
            cross_norm: LayerNorm::new(store, &format!("{name}.cross_norm"), d_model),
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), d_model, heads, rng),
            ff_norm: LayerNorm::new(store, &format!("{name}.ff_norm"), d_model),
            ff: FeedForward::new(store, &format!("{name}.ff"), d_model, d_ff, rng),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        x: Var,
        memory: Var,
        self_mask: Option<&Array2<f64>>,
        cross_mask: Option<&Array2<f64>>,
        dropout: &mut Dropout,
    ) -> Var {
        let h = self.self_norm.forward(g, x);
        let h = self.self_attn.forward(g, h, h, self_mask);
        let h = dropout.apply(g, h);
        let x = g.add(x, h);
        let h = self.cross_norm.forward(g, x);
        let h = self.cross_attn.forward(g, h, memory, cross_mask);
        let h = dropout.apply(g, h);
        let x = g.add(x, h);
        let h = self.ff_norm.forward(g, x);
        let h = self.ff.forward(g, h, dropout);
        let h = dropout.apply(g, h);
        g.add(x, h)
    }
}

/// A stack of pre-norm encoder layers with a closing layer norm.
#[derive(Debug, Clone)]
pub struct EncoderStack {
    pub layers: Vec<EncoderLayer>,
    pub final_norm: LayerNorm,
}

impl EncoderStack {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        depth: usize,
        d_model: usize,
        heads: usize,
        d_ff: usize,
        rng: &mut R,
    ) -> Self {
        let layers = (0..depth)
            .map(|i| EncoderLayer::new(store, &format!("{name}.layers.{i}"), d_model, heads, d_ff, rng))
            .collect();
        Self {
            layers,
            final_norm: LayerNorm::new(store, &format!("{name}.final_norm"), d_model),
        }
    }

    pub fn forward(&self, g: &mut Graph, mut x: Var, mask: Option<&Array2<f64>>, dropout: &mut Dropout) -> Var {
        for layer in &self.layers {
            x = layer.forward(g, x, mask, dropout);
        }
        self.final_norm.forward(g, x)
    }
}

#[derive(Debug, Clone)]
pub struct DecoderStack {
    pub layers: Vec<DecoderLayer>,
    pub final_norm: LayerNorm,
}

impl DecoderStack {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        depth: usize,
        d_model: usize,
        heads: usize,
        d_ff: usize,
        rng: &mut R,
    ) -> Self {
        let layers = (0..depth)
            .map(|i| DecoderLayer::new(store, &format!("{name}.layers.{i}"), d_model, heads, d_ff, rng))
            .collect();
        Self {
            layers,
            final_norm: LayerNorm::new(store, &format!("{name}.final_norm"), d_model),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        mut x: Var,
        memory: Var,
        cross_mask: Option<&Array2<f64>>,
        dropout: &mut Dropout,
    ) -> Var {
        let len = g.shape(x).0;
        let causal = attention_mask(len, len, true, None);
        for layer in &self.layers {
            x = layer.forward(g, x, memory, causal.as_ref(), cross_mask, dropout);
        }
        self.final_norm.forward(g, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn causal_mask_blocks_future_only() {
        let m = attention_mask(3, 3, true, None).unwrap();
        assert_eq!(m[[0, 1]], MASKED);
        assert_eq!(m[[2, 1]], 0.0);
        assert!(attention_mask(3, 3, false, Some(&[false, false, false])).is_none());
        let p = attention_mask(2, 3, false, Some(&[false, true, false])).unwrap();
        assert_eq!(p[[0, 1]], MASKED);
        assert_eq!(p[[1, 2]], 0.0);
    }

    #[test]
    fn decoder_is_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::default();
        let dec = DecoderStack::new(&mut store, "dec", 1, 8, 2, 16, &mut rng);
        let mem = Array2::from_shape_fn((3, 8), |(r, c)| ((r * 8 + c) as f64).sin());
        let a = Array2::from_shape_fn((4, 8), |(r, c)| ((r + 2 * c) as f64).cos());
        let mut b = a.clone();
        b.row_mut(3).fill(5.0);
        let run = |x: &Array2<f64>| {
            let mut g = Graph::new(&store);
            let m = g.constant(mem.clone());
            let xv = g.constant(x.clone());
            let out = dec.forward(&mut g, xv, m, None, &mut Dropout::eval());
            g.value(out).clone()
        };
        let (oa, ob) = (run(&a), run(&b));
        for r in 0..3 {
            for c in 0..8 {
                assert!((oa[[r, c]] - ob[[r, c]]).abs() < 1e-12);
            }
        }
        assert!((0..8).any(|c| (oa[[3, c]] - ob[[3, c]]).abs() > 1e-6));
    }

    #[test]
    fn eval_dropout_is_identity() {
        let store = ParamStore::default();
        let mut g = Graph::new(&store);
        let x = g.constant(Array2::ones((2, 2)));
        let y = Dropout::eval().apply(&mut g, x);
        assert_eq!(x, y);
    }
}
