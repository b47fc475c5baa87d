use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::json;

use glosslate::corpus::{load_corpus_with, tokenize_gloss_with, write_corpus, Corpus, LoadOptions, Split};
use glosslate::features::read_any;
use glosslate::generator::DecodeMode;
use glosslate::metrics::evaluate_sentences;
use glosslate::pipeline::{evaluate, train_with_options, translate, Checkpoint, ModelConfig, TrainOptions};
use glosslate::retrieval::{build_index, Bm25Index, DEFAULT_B, DEFAULT_K1};
use glosslate::synth::{synthesize, SynthConfig};
use glosslate::tokenizer::TokenizerKind;

#[derive(Parser)]
#[command(name = "glosslate", version, about = "Gloss-to-text translation with retrieved context")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TokenizerArg {
    Char,
    Word,
}

impl From<TokenizerArg> for TokenizerKind {
    fn from(t: TokenizerArg) -> Self {
        match t {
            TokenizerArg::Char => TokenizerKind::Char,
            TokenizerArg::Word => TokenizerKind::Word,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train on <data>/train.jsonl, selecting on <data>/dev.jsonl.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Score a checkpoint on a split, or score hypothesis/reference files.
    Eval {
        #[arg(long, requires = "data", conflicts_with_all = ["hyp", "reference"])]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
        /// `greedy`, `beam:N` or `beam(N)`; defaults to the checkpoint's.
        #[arg(long)]
        decoding: Option<DecodeMode>,
        #[arg(long, requires = "reference")]
        hyp: Option<PathBuf>,
        #[arg(long = "ref", requires = "hyp")]
        reference: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "char")]
        tokenizer: TokenizerArg,
    },
    /// BLEU-1..4 and ROUGE-L of one-sentence-per-line files.
    EvalMetrics {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, value_enum, default_value = "char")]
        tokenizer: TokenizerArg,
    },
    /// Translate one gloss sequence.
    Translate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        gloss: String,
        /// `.vkf` sidecar or `.json` nested array of frame features.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        decoding: Option<DecodeMode>,
    },
    /// Rank indexed glosses against a query; prints JSON lines.
    Retrieve {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long)]
        exclude: Option<String>,
        #[arg(long, default_value = "/")]
        delimiter: String,
    },
    /// Build a BM25 index over a split's glosses.
    Index {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "train")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_K1)]
        k1: f64,
        #[arg(long, default_value_t = DEFAULT_B)]
        b: f64,
        #[arg(long, default_value = "/")]
        delimiter: String,
    },
    /// Write a synthetic corpus (train/dev/test) and a matching config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        train: usize,
        #[arg(long, default_value_t = 10)]
        dev: usize,
        #[arg(long, default_value_t = 10)]
        test: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train { config, data, out } => cmd_train(&config, &data, &out),
        Command::Eval {
            ckpt,
            data,
            split,
            decoding,
            hyp,
            reference,
            tokenizer,
        } => match (ckpt, data, hyp, reference) {
            (Some(ckpt), Some(data), None, None) => cmd_eval(&ckpt, &data, split, decoding),
            (None, _, Some(hyp), Some(reference)) => cmd_eval_metrics(&hyp, &reference, tokenizer),
            _ => bail!("eval needs either --ckpt and --data, or --hyp and --ref"),
        },
        Command::EvalMetrics {
            hyp,
            reference,
            tokenizer,
        } => cmd_eval_metrics(&hyp, &reference, tokenizer),
        Command::Translate {
            ckpt,
            gloss,
            features,
            decoding,
        } => cmd_translate(&ckpt, &gloss, features.as_deref(), decoding),
        Command::Retrieve {
            index,
            query,
            k,
            exclude,
            delimiter,
        } => cmd_retrieve(&index, &query, k, exclude.as_deref(), &delimiter),
        Command::Index {
            data,
            split,
            out,
            k1,
            b,
            delimiter,
        } => cmd_index(&data, split, &out, k1, b, &delimiter),
        Command::Synth {
            out,
            train,
            dev,
            test,
            dim,
            seed,
        } => cmd_synth(&out, [train, dev, test], dim, seed),
    }
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn split_path(data: &Path, split: Split) -> PathBuf {
    data.join(format!("{}.jsonl", split.file_stem()))
}

fn load_split(data: &Path, split: Split, options: &LoadOptions) -> Result<Corpus> {
    let path = split_path(data, split);
    load_corpus_with(&path, split, options).with_context(|| format!("loading {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn cmd_train(config_path: &Path, data: &Path, out: &Path) -> Result<()> {
    let mut config = ModelConfig::from_file(config_path)?;
    config.apply_env_overrides()?;
    config.validate()?;
    let options = LoadOptions {
        expected_dim: Some(config.d_model),
        gloss_delimiter: config.gloss_delimiter.clone(),
    };
    let train_corpus = load_split(data, Split::Train, &options)?;
    let dev_path = split_path(data, Split::Dev);
    let dev_corpus = if dev_path.exists() {
        load_split(data, Split::Dev, &options)?
    } else {
        log::warn!("{} not found; training without dev selection", dev_path.display());
        Corpus::new(Vec::new(), Split::Dev)?
    };
    let outcome = train_with_options(
        &config,
        &train_corpus,
        &dev_corpus,
        &TrainOptions {
            out_dir: Some(out.to_path_buf()),
        },
    )?;
    outcome.memory.index.save(&out.join("index.json"))?;
    fs::write(out.join("train_state.json"), serde_json::to_string_pretty(&outcome.state)?)?;
    info!("wrote {}", out.display());
    let last = outcome.state.loss_history.last();
    print_json(&json!({
        "checkpoint": out.join("best.ckpt.json"),
        "epochs": config.epochs,
        "steps": outcome.state.step,
        "seed": config.seed,
        "best_dev": outcome.state.best_dev,
        "final_loss": last,
    }))
}

fn cmd_eval(ckpt_path: &Path, data: &Path, split: Split, decoding: Option<DecodeMode>) -> Result<()> {
    let ckpt = load_checkpoint(ckpt_path)?;
    let mut config = ckpt.config.clone();
    if let Some(d) = decoding {
        config.decoding = d;
    }
    let options = LoadOptions {
        expected_dim: Some(config.d_model),
        gloss_delimiter: config.gloss_delimiter.clone(),
    };
    let corpus = load_split(data, split, &options)?;
    let summary = evaluate(&ckpt, &corpus, &config)?;
    print_json(&serde_json::to_value(&summary)?)
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::to_owned).collect())
}

fn cmd_eval_metrics(hyp: &Path, reference: &Path, tokenizer: TokenizerArg) -> Result<()> {
    let hyps = read_lines(hyp)?;
    let refs = read_lines(reference)?;
    let tok = TokenizerKind::from(tokenizer).build();
    let report = evaluate_sentences(&hyps, &refs, tok.as_ref())?;
    print_json(&serde_json::to_value(&report)?)
}

fn cmd_translate(ckpt_path: &Path, gloss: &str, features: Option<&Path>, decoding: Option<DecodeMode>) -> Result<()> {
    let ckpt = load_checkpoint(ckpt_path)?;
    let (mut model, memory) = ckpt.restore()?;
    if let Some(d) = decoding {
        model.config.decoding = d;
    }
    let gloss = tokenize_gloss_with(gloss, &model.config.gloss_delimiter)?;
    let frames = features
        .map(|p| read_any(p).with_context(|| format!("reading features {}", p.display())))
        .transpose()?;
    let t = translate(&model, &memory, &gloss, frames.as_ref())?;
    let properties = t.properties.as_ref().map(|p| {
        json!({
            "p_interrogative": p.p_hat_st[0],
            "p_compound": p.p_hat_ss[0],
        })
    });
    print_json(&json!({
        "text": t.text,
        "gloss": gloss,
        "neighbors": t.neighbors,
        "properties": properties,
        "decoding": t.decoding.to_string(),
    }))
}

fn cmd_retrieve(index: &Path, query: &str, k: usize, exclude: Option<&str>, delimiter: &str) -> Result<()> {
    let index = Bm25Index::load(index).with_context(|| format!("loading index {}", index.display()))?;
    let query = tokenize_gloss_with(query, delimiter)?;
    for (rank, (id, score)) in index.retrieve_top_k(&query, k, exclude).into_iter().enumerate() {
        println!("{}", json!({ "rank": rank + 1, "id": id, "score": score }));
    }
    Ok(())
}

fn cmd_index(data: &Path, split: Split, out: &Path, k1: f64, b: f64, delimiter: &str) -> Result<()> {
    let options = LoadOptions {
        expected_dim: None,
        gloss_delimiter: delimiter.to_owned(),
    };
    let corpus = load_split(data, split, &options)?;
    let index = build_index(&corpus, k1, b)?;
    index.save(out)?;
    print_json(&json!({ "documents": index.len(), "avg_len": index.avg_len(), "out": out }))
}

fn cmd_synth(out: &Path, sizes: [usize; 3], dim: usize, seed: u64) -> Result<()> {
    if dim < 4 {
        bail!("--dim must be at least 4");
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (i, (split, n)) in [Split::Train, Split::Dev, Split::Test].into_iter().zip(sizes).enumerate() {
        let samples = synthesize(&SynthConfig {
            n_samples: n,
            d_model: dim,
            seed: seed.wrapping_add(i as u64),
            id_prefix: format!("{}-", split.file_stem()),
            ..Default::default()
        });
        write_corpus(&split_path(out, split), &samples, true, "/")?;
    }
    let mut config = ModelConfig {
        d_model: dim,
        epochs: 100,
        learning_rate: 1e-3,
        max_target_len: 16,
        eval_every: 10,
        seed,
        ..Default::default()
    };
    config.vision.layers = 1;
    config.vision.heads = 2;
    config.vision.ff_dim = Some(2 * dim);
    config.vision.dropout = 0.0;
    config.generator.enc_layers = 1;
    config.generator.dec_layers = 1;
    config.generator.heads = 2;
    config.generator.ff_dim = Some(2 * dim);
    config.generator.dropout = 0.0;
    let config_path = out.join("config.toml");
    fs::write(&config_path, config.to_toml_string()?)?;
    print_json(&json!({ "out": out, "config": config_path, "sizes": sizes }))
}
