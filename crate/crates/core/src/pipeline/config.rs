use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{PunctuationRules, DEFAULT_GLOSS_DELIMITER};
use crate::error::{Error, Result};
use crate::exec::Parallelism;
use crate::generator::{Backbone, DecodeMode, GeneratorConfig};
use crate::nn::optim::AdamConfig;
use crate::retrieval::{DEFAULT_B, DEFAULT_K1};
use crate::tokenizer::TokenizerKind;
use crate::vision::PropertyEncoderConfig;

pub const SEED_ENV: &str = "GLOSSLATE_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisionSettings {
    pub layers: usize,
    pub heads: usize,
    pub max_frames: usize,
    /// Defaults to `4 · d_model`.
    pub ff_dim: Option<usize>,
    pub dropout: f64,
}

impl Default for VisionSettings {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 8,
            max_frames: 512,
            ff_dim: None,
            dropout: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSettings {
    /// Defaults to the top-level `d_model`.
    pub d_model: Option<usize>,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub ff_dim: Option<usize>,
    pub dropout: f64,
    pub backbone: Backbone,
    pub tokenizer: TokenizerKind,
}

impl Default for GeneratorSettings {
    fn default() -> Self {
        Self {
            d_model: None,
            enc_layers: 2,
            dec_layers: 2,
            heads: 8,
            ff_dim: None,
            dropout: 0.1,
            backbone: Backbone::Scratch,
            tokenizer: TokenizerKind::Char,
        }
    }
}

/// Every hyperparameter of a run. Serializes to and from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub alpha: f64,
    pub beta: f64,
    #[serde(alias = "K")]
    pub k: usize,
    /// Frame-feature width `D1`.
    pub d_model: usize,
    pub vision: VisionSettings,
    pub generator: GeneratorSettings,
    pub max_target_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; `0` disables.
    pub grad_clip: f64,
    pub ablation: Vec<String>,
    pub seed: u64,
    pub decoding: DecodeMode,
    /// Block generation-loss gradients from reaching the vision encoder.
    pub stop_generation_grad: bool,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub gloss_delimiter: String,
    pub enumeration_comma_is_pause: bool,
    /// Dev evaluation period in epochs; `0` disables it.
    pub eval_every: usize,
    pub parallelism: Parallelism,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            k: 3,
            d_model: 768,
            vision: VisionSettings::default(),
            generator: GeneratorSettings::default(),
            max_target_len: 60,
            epochs: 40,
            batch_size: 8,
            learning_rate: 1e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 1.0,
            ablation: Vec::new(),
            seed: 0,
            decoding: DecodeMode::Greedy,
            stop_generation_grad: false,
            bm25_k1: DEFAULT_K1,
            bm25_b: DEFAULT_B,
            gloss_delimiter: DEFAULT_GLOSS_DELIMITER.to_owned(),
            enumeration_comma_is_pause: false,
            eval_every: 1,
            parallelism: Parallelism::Parallel,
        }
    }
}

impl ModelConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Applies `GLOSSLATE_SEED` when set.
    pub fn apply_env_overrides(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn generator_width(&self) -> usize {
        self.generator.d_model.unwrap_or(self.d_model)
    }

    pub fn vision_config(&self) -> PropertyEncoderConfig {
        PropertyEncoderConfig {
            d_model: self.d_model,
            layers: self.vision.layers,
            heads: self.vision.heads,
            max_frames: self.vision.max_frames,
            ff_dim: self.vision.ff_dim.unwrap_or(4 * self.d_model),
            dropout: self.vision.dropout,
        }
    }

    pub fn generator_config(&self, vocab_size: usize) -> GeneratorConfig {
        let d = self.generator_width();
        GeneratorConfig {
            vocab_size,
            d_model: d,
            indicator_dim: self.d_model,
            enc_layers: self.generator.enc_layers,
            dec_layers: self.generator.dec_layers,
            heads: self.generator.heads,
            ff_dim: self.generator.ff_dim.unwrap_or(4 * d),
            dropout: self.generator.dropout,
            max_target_len: self.max_target_len,
            backbone: self.generator.backbone,
            tokenizer: self.generator.tokenizer,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn punctuation(&self) -> PunctuationRules {
        let rules = PunctuationRules::default();
        if self.enumeration_comma_is_pause {
            rules.with_enumeration_comma()
        } else {
            rules
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::Config("alpha and beta must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.gloss_delimiter.is_empty() {
            return Err(Error::Config("gloss_delimiter must not be empty".into()));
        }
        apply_ablation(self)?;
        self.vision_config().validate()?;
        self.generator_config(crate::generator::vocab::RESERVED.len()).validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationFlag {
    /// Drop both indicators and both property losses.
    NoProperty,
    /// Drop `z_st` and `L_st`.
    NoType,
    /// Drop `z_ss` and `L_ss`.
    NoStru,
    /// Keep both indicators but zero both property weights.
    NoPropertyObj,
    /// Use `G' = {G}`.
    NoContKnow,
}

impl AblationFlag {
    pub const ALL: [AblationFlag; 5] = [
        AblationFlag::NoProperty,
        AblationFlag::NoType,
        AblationFlag::NoStru,
        AblationFlag::NoPropertyObj,
        AblationFlag::NoContKnow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationFlag::NoProperty => "no_property",
            AblationFlag::NoType => "no_type",
            AblationFlag::NoStru => "no_stru",
            AblationFlag::NoPropertyObj => "no_property_obj",
            AblationFlag::NoContKnow => "no_cont_know",
        }
    }
}

impl fmt::Display for AblationFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationFlag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationFlag::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation flag {s:?}")))
    }
}

/// What a configuration actually trains and runs after ablations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveArchitecture {
    pub flags: BTreeSet<AblationFlag>,
    pub use_type_indicator: bool,
    pub use_structure_indicator: bool,
    /// Whether the vision encoder runs at all.
    pub run_vision: bool,
    /// Effective weight on `L_st`.
    pub alpha: f64,
    /// Effective weight on `L_ss`.
    pub beta: f64,
    /// Effective retrieval depth.
    pub k: usize,
}

impl EffectiveArchitecture {
    /// Indicator rows prepended to `E_g`.
    pub fn prefix_rows(&self) -> usize {
        self.use_type_indicator as usize + self.use_structure_indicator as usize
    }

    pub fn encoder_input_len(&self, u: usize) -> usize {
        u + self.prefix_rows()
    }

    /// Loss terms that carry non-zero weight.
    pub fn active_losses(&self) -> Vec<&'static str> {
        let mut v = vec!["gen"];
        if self.alpha > 0.0 {
            v.push("st");
        }
        if self.beta > 0.0 {
            v.push("ss");
        }
        v
    }
}

pub fn parse_flags(names: &[String]) -> Result<BTreeSet<AblationFlag>> {
    names.iter().map(|n| n.parse()).collect()
}

pub fn apply_ablation(config: &ModelConfig) -> Result<EffectiveArchitecture> {
    use AblationFlag::*;
    let flags = parse_flags(&config.ablation)?;
    let no_property = flags.contains(&NoProperty);
    let use_type = !no_property && !flags.contains(&NoType);
    let use_stru = !no_property && !flags.contains(&NoStru);
    let objectives_off = flags.contains(&NoPropertyObj);
    let alpha = if use_type && !objectives_off { config.alpha } else { 0.0 };
    let beta = if use_stru && !objectives_off { config.beta } else { 0.0 };
    let k = if flags.contains(&NoContKnow) { 0 } else { config.k };
    Ok(EffectiveArchitecture {
        use_type_indicator: use_type,
        use_structure_indicator: use_stru,
        run_vision: use_type || use_stru,
        alpha,
        beta,
        k,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with(flags: &[&str]) -> ModelConfig {
        ModelConfig {
            ablation: flags.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn defaults_match_reference_setup() {
        let c = ModelConfig::default();
        assert_eq!((c.alpha, c.beta, c.k, c.d_model), (1.0, 1.0, 3, 768));
        assert_eq!((c.vision.layers, c.vision.heads), (2, 8));
        assert_eq!((c.max_target_len, c.epochs, c.batch_size), (60, 40, 8));
        assert_eq!(c.learning_rate, 1e-5);
        assert_eq!((c.adam_beta1, c.adam_beta2), (0.9, 0.999));
        c.validate().unwrap();
    }

    #[test]
    fn ablation_table() {
        let a = apply_ablation(&with(&[])).unwrap();
        assert_eq!((a.encoder_input_len(10), a.alpha, a.beta, a.k), (12, 1.0, 1.0, 3));

        let a = apply_ablation(&with(&["no_property"])).unwrap();
        assert_eq!((a.encoder_input_len(10), a.alpha, a.beta), (10, 0.0, 0.0));
        assert!(!a.run_vision);

        let a = apply_ablation(&with(&["no_type"])).unwrap();
        assert_eq!((a.encoder_input_len(10), a.alpha, a.beta), (11, 0.0, 1.0));
        assert!(a.use_structure_indicator && !a.use_type_indicator);

        let a = apply_ablation(&with(&["no_stru"])).unwrap();
        assert_eq!((a.encoder_input_len(10), a.alpha, a.beta), (11, 1.0, 0.0));

        let a = apply_ablation(&with(&["no_property_obj"])).unwrap();
        assert_eq!((a.encoder_input_len(10), a.alpha, a.beta), (12, 0.0, 0.0));
        assert!(a.run_vision);
        assert_eq!(a.active_losses(), ["gen"]);

        let a = apply_ablation(&with(&["no_cont_know"])).unwrap();
        assert_eq!((a.encoder_input_len(10), a.k), (12, 0));

        let a = apply_ablation(&with(&["no_property", "no_type"])).unwrap();
        assert_eq!(a.prefix_rows(), 0);
    }

    #[test]
    fn unknown_flag_rejected() {
        assert!(matches!(apply_ablation(&with(&["no_vision"])), Err(Error::Config(_))));
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = ModelConfig {
            d_model: 32,
            ablation: vec!["no_stru".into()],
            decoding: DecodeMode::Beam { width: 3 },
            ..Default::default()
        };
        let text = c.to_toml_string().unwrap();
        assert_eq!(ModelConfig::from_toml_str(&text).unwrap(), c);

        let partial = ModelConfig::from_toml_str("d_model = 64\nK = 2\n[vision]\nlayers = 1\n").unwrap();
        assert_eq!((partial.d_model, partial.k, partial.vision.layers), (64, 2, 1));
        assert_eq!(partial.vision.heads, 8);
        assert!(ModelConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn generator_width_override_creates_adapter_dims() {
        let mut c = ModelConfig {
            d_model: 32,
            ..Default::default()
        };
        c.generator.d_model = Some(16);
        let g = c.generator_config(20);
        assert_eq!((g.d_model, g.indicator_dim, g.ff_dim), (16, 32, 64));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(ModelConfig { alpha: -1.0, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(ModelConfig { d_model: 30, ..Default::default() }.validate().is_err());
    }
}
