use std::cmp::Ordering;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::vocab::{Vocab, BOS_ID, EOS_ID, PAD_ID};
use super::Generator;
use crate::error::{Error, Result};
use crate::nn::ParamStore;

const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "strategy")]
pub enum DecodeMode {
    #[default]
    Greedy,
    /// Length-normalized beam search.
    Beam { width: usize },
}

impl std::fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DecodeMode::Greedy => write!(f, "greedy"),
            DecodeMode::Beam { width } => write!(f, "beam({width})"),
        }
    }
}

/// Accepts `greedy`, `beam:N` and `beam(N)`.
impl std::str::FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "greedy" {
            return Ok(DecodeMode::Greedy);
        }
        let width = s
            .strip_prefix("beam:")
            .or_else(|| s.strip_prefix("beam(").and_then(|r| r.strip_suffix(')')))
            .and_then(|w| w.parse::<usize>().ok())
            .filter(|&w| w > 0)
            .ok_or_else(|| Error::Config(format!("unknown decoding mode {s:?}")))?;
        Ok(DecodeMode::Beam { width })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutput {
    /// Decoded ids, ending at `<eos>` unless the length cap was hit.
    pub tokens: Vec<usize>,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stepwise_dists: Option<Vec<Vec<f64>>>,
}

impl GenerationOutput {
    pub fn content_tokens(&self, vocab: &Vocab) -> Vec<String> {
        vocab.decode(&self.tokens)
    }
}

/// Tokens that may never be emitted.
fn blocked(id: usize) -> bool {
    id == PAD_ID || id == BOS_ID
}

struct Hypothesis {
    tokens: Vec<usize>,
    log_prob: f64,
    dists: Vec<Vec<f64>>,
}

impl Hypothesis {
    fn normalized(&self) -> f64 {
        self.log_prob / self.tokens.len().max(1) as f64
    }
}

pub(super) fn generate(
    generator: &Generator,
    store: &ParamStore,
    vocab: &Vocab,
    z_g: &Array2<f64>,
    mode: DecodeMode,
    keep_dists: bool,
) -> Result<GenerationOutput> {
    let cap = generator.config.max_target_len;
    let best = match mode {
        DecodeMode::Greedy => {
            let mut h = Hypothesis {
                tokens: Vec::new(),
                log_prob: 0.0,
                dists: Vec::new(),
            };
            while h.tokens.len() < cap {
                let dist = generator.decode_step(store, z_g, &h.tokens)?;
                let tok = argmax(&dist);
                h.log_prob += dist[tok].max(LOG_FLOOR).ln();
                h.tokens.push(tok);
                if keep_dists {
                    h.dists.push(dist);
                }
                if tok == EOS_ID {
                    break;
                }
            }
            h
        }
        DecodeMode::Beam { width } => beam(generator, store, z_g, width.max(1), keep_dists)?,
    };
    let tokenizer = generator.config.tokenizer.build();
    let text = tokenizer.detokenize(&vocab.decode(&best.tokens));
    Ok(GenerationOutput {
        tokens: best.tokens,
        text,
        stepwise_dists: keep_dists.then_some(best.dists),
    })
}

/// Lowest id among the maxima of `dist`, skipping blocked ids.
fn argmax(dist: &[f64]) -> usize {
    let mut best = None;
    for (i, &p) in dist.iter().enumerate() {
        if blocked(i) {
            continue;
        }
        match best {
            Some((_, bp)) if p <= bp => {}
            _ => best = Some((i, p)),
        }
    }
    best.map_or(EOS_ID, |(i, _)| i)
}

fn beam(generator: &Generator, store: &ParamStore, z_g: &Array2<f64>, width: usize, keep_dists: bool) -> Result<Hypothesis> {
    let cap = generator.config.max_target_len;
    let mut alive = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        dists: Vec::new(),
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    while !alive.is_empty() && finished.len() < width {
        let dists: Vec<Vec<f64>> = alive
            .iter()
            .map(|h| generator.decode_step(store, z_g, &h.tokens))
            .collect::<Result<_>>()?;
        // (score, beam, token); ranked by score desc then beam, token asc.
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (b, (h, dist)) in alive.iter().zip(&dists).enumerate() {
            for (tok, &p) in dist.iter().enumerate() {
                if !blocked(tok) {
                    candidates.push((h.log_prob + p.max(LOG_FLOOR).ln(), b, tok));
                }
            }
        }
        candidates.sort_by(|x, y| {
            y.0.partial_cmp(&x.0)
                .unwrap_or(Ordering::Equal)
                .then(x.1.cmp(&y.1))
                .then(x.2.cmp(&y.2))
        });
        let mut next = Vec::with_capacity(width);
        for &(score, b, tok) in candidates.iter().take(width) {
            let parent = &alive[b];
            let mut tokens = parent.tokens.clone();
            tokens.push(tok);
            let mut hd = Vec::new();
            if keep_dists {
                hd = parent.dists.clone();
                hd.push(dists[b].clone());
            }
            let h = Hypothesis {
                tokens,
                log_prob: score,
                dists: hd,
            };
            if tok == EOS_ID || h.tokens.len() >= cap {
                finished.push(h);
            } else {
                next.push(h);
            }
        }
        alive = next;
    }
    finished.extend(alive);
    let best = finished
        .into_iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            a.normalized()
                .partial_cmp(&b.normalized())
                .unwrap_or(Ordering::Equal)
                .then(ib.cmp(ia))
        })
        .map(|(_, h)| h)
        .expect("beam search keeps at least one hypothesis");
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::tests::tiny_config;
    use crate::generator::GeneratorConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn mode_parses_its_display_form() {
        for m in [DecodeMode::Greedy, DecodeMode::Beam { width: 4 }] {
            assert_eq!(m.to_string().parse::<DecodeMode>().unwrap(), m);
        }
        assert_eq!("beam:2".parse::<DecodeMode>().unwrap(), DecodeMode::Beam { width: 2 });
        assert!("beam:0".parse::<DecodeMode>().is_err());
        assert!("sample".parse::<DecodeMode>().is_err());
    }

    fn setup(seed: u64, cap: usize) -> (ParamStore, Generator, Vocab, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        let cfg = GeneratorConfig {
            max_target_len: cap,
            ..tiny_config(12)
        };
        let g = Generator::new(&mut store, cfg, &mut rng).unwrap();
        let vocab = Vocab::build(["a", "b", "c", "d", "e", "f"]);
        let n = Normal::new(0.0, 1.0).unwrap();
        let z = Array2::from_shape_simple_fn((5, 8), || n.sample(&mut rng));
        (store, g, vocab, z)
    }

    #[test]
    fn argmax_prefers_lowest_id_on_ties_and_skips_blocked() {
        assert_eq!(argmax(&[0.9, 0.05, 0.01, 0.02, 0.02]), 3);
        assert_eq!(argmax(&[0.0, 0.9, 0.05, 0.05]), 2);
    }

    #[test]
    fn output_respects_cap() {
        for seed in 0..6 {
            let (store, g, vocab, z) = setup(seed, 4);
            for mode in [DecodeMode::Greedy, DecodeMode::Beam { width: 3 }] {
                let out = g.generate(&store, &vocab, &z, mode).unwrap();
                assert!(out.tokens.len() <= 4);
                assert!(!out.tokens.is_empty());
            }
        }
    }

    #[test]
    fn beam_of_one_equals_greedy() {
        for seed in 0..8 {
            let (store, g, vocab, z) = setup(seed, 6);
            let greedy = g.generate(&store, &vocab, &z, DecodeMode::Greedy).unwrap();
            let beam = g.generate(&store, &vocab, &z, DecodeMode::Beam { width: 1 }).unwrap();
            assert_eq!(greedy.tokens, beam.tokens, "seed {seed}");
        }
    }

    #[test]
    fn decoding_is_deterministic() {
        let (store, g, vocab, z) = setup(3, 6);
        for mode in [DecodeMode::Greedy, DecodeMode::Beam { width: 4 }] {
            let a = g.generate(&store, &vocab, &z, mode).unwrap();
            let b = g.generate(&store, &vocab, &z, mode).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn stepwise_dists_are_normalized() {
        let (store, g, vocab, z) = setup(5, 6);
        let out = g.generate_with_dists(&store, &vocab, &z, DecodeMode::Greedy).unwrap();
        let dists = out.stepwise_dists.unwrap();
        assert_eq!(dists.len(), out.tokens.len());
        for d in dists {
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn mode_display() {
        assert_eq!(DecodeMode::Greedy.to_string(), "greedy");
        assert_eq!(DecodeMode::Beam { width: 4 }.to_string(), "beam(4)");
    }
}
