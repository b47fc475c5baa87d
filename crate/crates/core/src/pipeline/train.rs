//! Training loop over the combined objective.

use std::path::PathBuf;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::exec;
use crate::nn::optim::{clip_global_norm, Adam};
use crate::nn::Gradients;
use crate::retrieval::RetrievalMemory;

use super::checkpoint::Checkpoint;
use super::config::ModelConfig;
use super::eval::evaluate_model;
use super::model::{build_vocab, GlossModel, LossBreakdown, PreparedSample};

/// Batches whose samples are sorted by context length are drawn from pools
/// of this many batches.
const BUCKET_POOL_BATCHES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: usize,
    pub epoch: usize,
    pub total: f64,
    pub gen: f64,
    pub st: f64,
    pub ss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestDev {
    pub metric: String,
    pub value: f64,
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub step: usize,
    pub alpha: f64,
    pub beta: f64,
    pub loss_history: Vec<StepLoss>,
    pub best_dev: Option<BestDev>,
}

impl TrainState {
    /// Largest `|L − (L_gen + α·L_st + β·L_ss)|` over the history.
    pub fn max_identity_error(&self) -> f64 {
        self.loss_history
            .iter()
            .map(|s| (s.total - (s.gen + self.alpha * s.st + self.beta * s.ss)).abs())
            .fold(0.0, f64::max)
    }

    /// Mean generation loss over the last logged epoch.
    pub fn final_epoch_gen_loss(&self) -> Option<f64> {
        let last = self.loss_history.last()?.epoch;
        let xs: Vec<f64> = self.loss_history.iter().filter(|s| s.epoch == last).map(|s| s.gen).collect();
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Where to write `best.ckpt.json` whenever dev BLEU-4 improves.
    pub out_dir: Option<PathBuf>,
}

pub struct TrainOutcome {
    /// Parameters after the final epoch.
    pub model: GlossModel,
    pub memory: RetrievalMemory,
    /// Best checkpoint by dev BLEU-4, or the final one without dev evaluation.
    pub checkpoint: Checkpoint,
    pub state: TrainState,
}

pub fn train(config: &ModelConfig, train_corpus: &Corpus, dev_corpus: &Corpus) -> Result<TrainOutcome> {
    train_with_options(config, train_corpus, dev_corpus, &TrainOptions::default())
}

pub fn train_with_options(
    config: &ModelConfig,
    train_corpus: &Corpus,
    dev_corpus: &Corpus,
    options: &TrainOptions,
) -> Result<TrainOutcome> {
    if train_corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    config.validate()?;
    for s in train_corpus.iter() {
        if s.feature_dim() != config.d_model {
            return Err(Error::Dimension {
                expected: config.d_model,
                found: s.feature_dim(),
            });
        }
    }
    let tokenizer = config.generator.tokenizer.build();
    let vocab = build_vocab(train_corpus.iter(), tokenizer.as_ref());
    let memory = RetrievalMemory::from_corpus(train_corpus, config.bm25_k1, config.bm25_b)?;
    let mut model = GlossModel::new(config.clone(), vocab)?;
    let mode = config.parallelism;

    let order: Vec<usize> = (0..train_corpus.len()).collect();
    let prepared: Vec<PreparedSample> = exec::map(mode, &order, |&i| model.prepare(&train_corpus.samples[i], &memory));
    info!(
        "training on {} samples, vocabulary {}, {} parameters",
        prepared.len(),
        model.vocab.len(),
        model.store.num_scalars()
    );

    let mut adam = Adam::new(config.adam(), &model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut state = TrainState {
        epoch: 0,
        step: 0,
        alpha: model.arch.alpha,
        beta: model.arch.beta,
        loss_history: Vec::new(),
        best_dev: None,
    };
    let mut best: Option<Checkpoint> = None;
    if let Some(dir) = &options.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    for epoch in 0..config.epochs {
        state.epoch = epoch;
        for batch in make_batches(&prepared, config.batch_size, &mut rng) {
            let step = state.step;
            let results = exec::try_map(mode, &batch, |&i| {
                let seed = dropout_seed(config.seed, step, i);
                model.gradients(&model.store, &prepared[i], Some(seed))
            })?;
            let mut grads = Gradients::zeros_like(&model.store);
            let mut loss = LossBreakdown::default();
            for (g, l) in &results {
                grads.add_assign(g);
                loss = loss.plus(*l);
            }
            let inv = 1.0 / results.len() as f64;
            grads.scale(inv);
            let loss = loss.scaled(inv);
            if !loss.total.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence {
                    step,
                    detail: format!(
                        "L = {}, L_gen = {}, L_st = {}, L_ss = {}",
                        loss.total, loss.gen, loss.st, loss.ss
                    ),
                });
            }
            clip_global_norm(&mut grads, config.grad_clip);
            adam.step(&mut model.store, &grads);
            state.loss_history.push(StepLoss {
                step,
                epoch,
                total: loss.total,
                gen: loss.gen,
                st: loss.st,
                ss: loss.ss,
            });
            state.step += 1;
        }

        let last = state.loss_history.last().copied();
        let evaluate_now = config.eval_every > 0 && !dev_corpus.is_empty() && (epoch + 1) % config.eval_every == 0;
        if evaluate_now {
            let report = evaluate_model(&model, &memory, dev_corpus)?;
            let bleu4 = report.metrics.bleu_n(4);
            info!("epoch {epoch}: dev BLEU-4 {bleu4:.2}, last L {:.4}", last.map_or(f64::NAN, |l| l.total));
            // Ties go to the later, longer-trained epoch.
            let improved = state.best_dev.as_ref().is_none_or(|b| bleu4 >= b.value);
            if improved {
                state.best_dev = Some(BestDev {
                    metric: "bleu4".into(),
                    value: bleu4,
                    epoch,
                });
                let ckpt = Checkpoint::capture(&model, &memory, epoch, Some(bleu4));
                if let Some(dir) = &options.out_dir {
                    ckpt.save(&dir.join("best.ckpt.json"))?;
                }
                best = Some(ckpt);
            }
        } else if let Some(l) = last {
            info!("epoch {epoch}: last L {:.4} (L_gen {:.4})", l.total, l.gen);
        }
    }

    let checkpoint = match best {
        Some(c) => c,
        None => {
            if config.eval_every > 0 && !dev_corpus.is_empty() {
                warn!("no dev evaluation ran; keeping final parameters");
            }
            let c = Checkpoint::capture(&model, &memory, config.epochs.saturating_sub(1), None);
            if let Some(dir) = &options.out_dir {
                c.save(&dir.join("best.ckpt.json"))?;
            }
            c
        }
    };
    Ok(TrainOutcome {
        model,
        memory,
        checkpoint,
        state,
    })
}

fn dropout_seed(seed: u64, step: usize, sample: usize) -> u64 {
    seed.wrapping_mul(0x2545_f491_4f6c_dd1d)
        .wrapping_add((step as u64) << 20)
        .wrapping_add(sample as u64)
}

/// Shuffles, sorts each pool of `BUCKET_POOL_BATCHES` batches by context
/// length, cuts batches, then shuffles batch order.
fn make_batches(prepared: &[PreparedSample], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    for pool in order.chunks_mut(batch_size * BUCKET_POOL_BATCHES) {
        pool.sort_by_key(|&i| prepared[i].context_len());
        batches.extend(pool.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}
