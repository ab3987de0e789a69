//! Training configuration and its flat `key = value` text form.
//!
//! One key per line, `#` starts a comment, blank lines are ignored. Every
//! field is addressable by its key, and [`TrainConfig::to_text`] writes all
//! of them back in a fixed order so that the text round-trips exactly.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::augment::{AugmentConfig, Strategy};
use crate::error::{Error, Result};
use crate::fusion::GateMode;
use crate::losses::{InfoNceVariant, LossWeights};
use crate::model::Variant;

/// Comma-separated strategy list for the hybrid augmentation stages.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageList(pub Vec<Strategy>);

impl fmt::Display for StageList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|s| s.name()).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for StageList {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        s.split(',')
            .map(|p| p.trim().parse())
            .collect::<Result<Vec<_>>>()
            .map(StageList)
    }
}

/// Optional file path; the empty string means unset.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OptPath(pub Option<String>);

impl fmt::Display for OptPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0.as_deref().unwrap_or(""))
    }
}

impl FromStr for OptPath {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(OptPath((!s.is_empty()).then(|| s.to_owned())))
    }
}

macro_rules! train_config {
    ($( $(#[doc = $doc:literal])* $field:ident : $ty:ty = $default:expr ),* $(,)?) => {
        #[derive(Clone, Debug, PartialEq)]
        pub struct TrainConfig {
            $( $(#[doc = $doc])* pub $field: $ty, )*
        }

        impl Default for TrainConfig {
            fn default() -> Self {
                Self { $( $field: $default, )* }
            }
        }

        impl TrainConfig {
            /// Every key, in the order [`TrainConfig::to_text`] writes them,
            /// with its one-line description.
            pub const KEYS: &'static [(&'static str, &'static str)] = &[
                $( (stringify!($field), concat!($($doc),*)), )*
            ];

            /// Sets one field from its text form.
            pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
                match key {
                    $( stringify!($field) => {
                        self.$field = value.parse::<$ty>().map_err(|e| {
                            format!("bad value '{value}' for {key}: {e}")
                        })?;
                        Ok(())
                    } )*
                    _ => Err(format!("unknown key '{key}'")),
                }
            }

            /// Text form of one field.
            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $( stringify!($field) => Some(self.$field.to_string()), )*
                    _ => None,
                }
            }
        }
    };
}

train_config! {
    /// initial learning rate
    lr: f64 = 1e-3,
    /// decoupled weight decay coefficient
    weight_decay: f64 = 0.01,
    /// examples per optimizer step (at least 2)
    batch_size: usize = 32,
    /// maximum joint-training epochs
    max_epochs: usize = 50,
    /// epochs without validation improvement before stopping
    patience: usize = 5,
    /// minimum validation-loss decrease that counts as improvement
    min_delta: f64 = 1e-4,
    /// linear warmup steps at the start of each stage
    warmup_steps: usize = 100,
    /// base seed for initialization, shuffling, augmentation and splits
    seed: u64 = 7,
    /// contrastive pretraining epochs before joint training
    stage1_epochs: usize = 10,
    /// validate every this many epochs
    eval_every: usize = 1,
    /// contrastive loss weight
    alpha1: f64 = 1.0,
    /// stance loss weight
    alpha2: f64 = 1.0,
    /// veracity classification loss weight
    alpha3: f64 = 1.0,
    /// InfoNCE temperature
    tau: f64 = 0.07,
    /// L2 regularization coefficient
    lambda: f64 = 1e-4,
    /// InfoNCE denominator: standard or literal
    infonce: InfoNceVariant = InfoNceVariant::Standard,
    /// fusion gate: elementwise or scalar
    gate: GateMode = GateMode::Elementwise,
    /// model wiring: full, no_cl, no_isr or no_fusion
    variant: Variant = Variant::Full,
    /// embedding width
    embed_dim: usize = 32,
    /// encoder output width (even)
    width: usize = 64,
    /// token sequence length after truncation or padding
    seq_len: usize = 64,
    /// minimum training-split count for a vocabulary token
    min_count: usize = 1,
    /// training split fraction
    train_ratio: f64 = 0.8,
    /// validation split fraction
    val_ratio: f64 = 0.1,
    /// test split fraction
    test_ratio: f64 = 0.1,
    /// augmentation strategy: deletion, synonym, insertion or hybrid
    augment: Strategy = Strategy::Hybrid,
    /// augmentation rate per stage
    augment_rate: f64 = 0.1,
    /// stages of the hybrid strategy, in order
    hybrid_stages: StageList = StageList(vec![Strategy::Deletion, Strategy::Synonym]),
    /// synonym table file (empty for the built-in table)
    synonyms: OptPath = OptPath(None),
    /// stopword file (empty for the built-in list)
    stopwords: OptPath = OptPath(None),
}

impl TrainConfig {
    /// Defaults with the learning rate used for fine-tuning pretrained
    /// transformers.
    pub fn transformer_preset() -> Self {
        Self {
            lr: 2e-5,
            ..Self::default()
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            alpha3: self.alpha3,
            tau: self.tau,
            lambda: self.lambda,
        }
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            strategy: self.augment,
            rate: self.augment_rate,
            seed: self.seed,
            hybrid_stages: self.hybrid_stages.0.clone(),
        }
    }

    pub fn ratios(&self) -> [f64; 3] {
        [self.train_ratio, self.val_ratio, self.test_ratio]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if self.patience < 1 {
            return bad("patience must be at least 1".into());
        }
        if self.max_epochs < 1 || self.eval_every < 1 {
            return bad("max_epochs and eval_every must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be ≥ 0, got {}", self.weight_decay));
        }
        if !(self.min_delta >= 0.0) {
            return bad("min_delta must be ≥ 0".into());
        }
        if self.seq_len < 1 || self.embed_dim < 1 {
            return bad("seq_len and embed_dim must be at least 1".into());
        }
        if self.width == 0 || !self.width.is_multiple_of(2) {
            return bad(format!("width must be even and positive, got {}", self.width));
        }
        self.weights().validate()?;
        self.augment_config().validate()?;
        Ok(())
    }

    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines to `self`; errors carry 1-based line numbers.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                msg: format!("expected 'key = value', got '{line}'"),
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|msg| Error::Config { line: i + 1, msg })?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config { line, msg } => Error::format(path, format!("config line {line}: {msg}")),
            other => other,
        })
    }

    pub fn to_text(&self) -> String {
        Self::KEYS
            .iter()
            .map(|(k, _)| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        assert_eq!(TrainConfig::transformer_preset().lr, 2e-5);
        assert_eq!(TrainConfig::default().tau, 0.07);
        assert_eq!(TrainConfig::default().lambda, 1e-4);
    }

    #[test]
    fn text_round_trips() {
        let cfg = TrainConfig {
            lr: 0.0123,
            variant: Variant::NoFusion,
            synonyms: OptPath(Some("syn.tsv".into())),
            hybrid_stages: StageList(vec![Strategy::Insertion, Strategy::Deletion]),
            ..TrainConfig::default()
        };
        let back = TrainConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), cfg.to_text());
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = TrainConfig::parse("# desk run\n\nbatch_size = 16  # small\ntau=0.5\n").unwrap();
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.tau, 0.5);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = TrainConfig::parse("lr = 1\nbogus = 3\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }), "{err}");
        let err = TrainConfig::parse("\n\nbatch_size = many\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 3, .. }));
        let err = TrainConfig::parse("lr 1\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 1, .. }));
    }

    #[test]
    fn invalid_values_rejected() {
        for text in [
            "batch_size = 1",
            "patience = 0",
            "width = 7",
            "tau = 0",
            "augment_rate = 2",
        ] {
            let cfg = TrainConfig::parse(text).unwrap();
            assert!(cfg.validate().is_err(), "{text}");
        }
    }

    #[test]
    fn every_key_is_settable_from_its_own_text() {
        let cfg = TrainConfig::default();
        let mut other = TrainConfig::default();
        for (k, doc) in TrainConfig::KEYS {
            assert!(!doc.is_empty());
            other.set(k, &cfg.get(k).unwrap()).unwrap();
        }
        assert_eq!(other, cfg);
    }
}
