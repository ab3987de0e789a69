//! Token-level augmentation producing the two views of each example used
//! by the contrastive objective.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Deletion,
    Synonym,
    Insertion,
    Hybrid,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Deletion,
        Strategy::Synonym,
        Strategy::Insertion,
        Strategy::Hybrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Deletion => "deletion",
            Strategy::Synonym => "synonym",
            Strategy::Insertion => "insertion",
            Strategy::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown augmentation strategy '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub strategy: Strategy,
    /// Per-stage rate in [0, 1].
    pub rate: f64,
    pub seed: u64,
    /// Stages applied in order when `strategy` is `Hybrid`.
    pub hybrid_stages: Vec<Strategy>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Hybrid,
            rate: 0.1,
            seed: 0,
            hybrid_stages: vec![Strategy::Deletion, Strategy::Synonym],
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::InvalidArgument(format!(
                "augmentation rate {} outside [0, 1]",
                self.rate
            )));
        }
        if self.hybrid_stages.contains(&Strategy::Hybrid) || self.hybrid_stages.is_empty() {
            return Err(Error::InvalidArgument(
                "hybrid stages must be a non-empty list of single strategies".into(),
            ));
        }
        Ok(())
    }
}

/// Token → replacement candidates. A token never maps to itself.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SynonymTable {
    map: BTreeMap<String, Vec<String>>,
}

impl SynonymTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, token: &str, synonyms: &[&str]) {
        let syns: Vec<String> = synonyms
            .iter()
            .filter(|s| **s != token && !s.is_empty())
            .map(|s| s.to_string())
            .collect();
        if !syns.is_empty() {
            self.map.entry(token.to_owned()).or_default().extend(syns);
        }
    }

    /// Parses `token<TAB>syn1,syn2,…` lines.
    pub fn parse(text: &str) -> std::result::Result<Self, (usize, String)> {
        let mut table = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (tok, syns) = line
                .split_once('\t')
                .ok_or_else(|| (i + 1, "expected token<TAB>synonyms".to_string()))?;
            let syns: Vec<&str> = syns.split(',').map(str::trim).collect();
            table.insert(tok.trim(), &syns);
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|(line, msg)| Error::format(path, format!("line {line}: {msg}")))
    }

    pub fn to_text(&self) -> String {
        self.map
            .iter()
            .map(|(k, v)| format!("{k}\t{}\n", v.join(",")))
            .collect()
    }

    pub fn get(&self, token: &str) -> Option<&[String]> {
        self.map.get(token).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Deletes each token with probability `rate`; if everything went, one
/// uniformly chosen token survives.
pub fn random_deletion<R: Rng>(tokens: &[String], rate: f64, rng: &mut R) -> Vec<String> {
    if tokens.is_empty() {
        return Vec::new();
    }
    let out: Vec<String> = tokens.iter().filter(|_| rng.gen::<f64>() >= rate).cloned().collect();
    if out.is_empty() {
        vec![tokens[rng.gen_range(0..tokens.len())].clone()]
    } else {
        out
    }
}

pub fn synonym_replacement<R: Rng>(tokens: &[String], rate: f64, table: &SynonymTable, rng: &mut R) -> Vec<String> {
    tokens
        .iter()
        .map(|t| match table.get(t) {
            Some(syns) if rng.gen::<f64>() < rate => syns.choose(rng).expect("non-empty synonym list").clone(),
            _ => t.clone(),
        })
        .collect()
}

/// Number of insertions for `len` tokens: ⌈rate·len⌉.
pub fn insertion_count(rate: f64, len: usize) -> usize {
    // tolerance keeps e.g. 0.3·10 from rounding up to 4
    (rate * len as f64 - 1e-9).ceil().max(0.0) as usize
}

pub fn random_insertion<R: Rng>(tokens: &[String], rate: f64, pool: &[String], rng: &mut R) -> Result<Vec<String>> {
    let k = insertion_count(rate, tokens.len());
    if k > 0 && pool.is_empty() {
        return Err(Error::InvalidArgument("insertion vocabulary is empty".into()));
    }
    let mut out = tokens.to_vec();
    for _ in 0..k {
        let tok = pool.choose(rng).expect("non-empty pool").clone();
        let pos = rng.gen_range(0..=out.len());
        out.insert(pos, tok);
    }
    Ok(out)
}

/// A configured augmentation pipeline.
#[derive(Clone, Debug)]
pub struct Augmenter {
    pub config: AugmentConfig,
    pub synonyms: SynonymTable,
    /// Candidate tokens for random insertion (vocabulary without PAD/UNK).
    pub insert_pool: Vec<String>,
}

impl Augmenter {
    pub fn new(config: AugmentConfig, synonyms: SynonymTable, insert_pool: Vec<String>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            synonyms,
            insert_pool,
        })
    }

    fn apply<R: Rng>(&self, strategy: Strategy, tokens: &[String], rng: &mut R) -> Result<Vec<String>> {
        let rate = self.config.rate;
        match strategy {
            Strategy::Deletion => Ok(random_deletion(tokens, rate, rng)),
            Strategy::Synonym => Ok(synonym_replacement(tokens, rate, &self.synonyms, rng)),
            Strategy::Insertion => random_insertion(tokens, rate, &self.insert_pool, rng),
            Strategy::Hybrid => {
                let mut cur = tokens.to_vec();
                for &stage in &self.config.hybrid_stages {
                    cur = self.apply(stage, &cur, rng)?;
                }
                Ok(cur)
            }
        }
    }

    pub fn augment<R: Rng>(&self, tokens: &[String], rng: &mut R) -> Result<Vec<String>> {
        self.apply(self.config.strategy, tokens, rng)
    }

    /// Two independent augmentations of the same token list.
    pub fn make_views<R: Rng>(&self, tokens: &[String], rng: &mut R) -> Result<(Vec<String>, Vec<String>)> {
        let v = self.augment(tokens, rng)?;
        let w = self.augment(tokens, rng)?;
        Ok((v, w))
    }

    /// Views for example `index` at `epoch`, from a seed derived off the
    /// configured base seed.
    pub fn views_for(&self, tokens: &[String], epoch: u64, index: u64) -> Result<(Vec<String>, Vec<String>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &[epoch, index]));
        self.make_views(tokens, &mut rng)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of indices into an independent stream seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}
