//! Record format, cleaning, whitespace tokenization, vocabulary and
//! fixed-length encoding.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Stopword list shipped with the crate.
pub const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Real,
    Misleading,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Real => 0,
            Label::Misleading => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Real),
            1 => Some(Label::Misleading),
            _ => None,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        Label::from_index(v as usize).ok_or_else(|| format!("label must be 0 or 1, got {v}"))
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.index() as u8
    }
}

/// Attitude toward the topic; class index order is oppose, neutral, support.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Stance {
    Oppose,
    Neutral,
    Support,
}

impl Stance {
    pub const ALL: [Stance; 3] = [Stance::Oppose, Stance::Neutral, Stance::Support];

    pub fn class_index(self) -> usize {
        match self {
            Stance::Oppose => 0,
            Stance::Neutral => 1,
            Stance::Support => 2,
        }
    }

    pub fn value(self) -> i8 {
        self.class_index() as i8 - 1
    }
}

impl TryFrom<i8> for Stance {
    type Error = String;
    fn try_from(v: i8) -> Result<Self, String> {
        match v {
            -1 => Ok(Stance::Oppose),
            0 => Ok(Stance::Neutral),
            1 => Ok(Stance::Support),
            _ => Err(format!("stance must be -1, 0 or 1, got {v}")),
        }
    }
}

impl From<Stance> for i8 {
    fn from(s: Stance) -> i8 {
        s.value()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub text: String,
    pub label: Label,
    pub stance: Option<Stance>,
    pub domain: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedExample {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    pub label: Label,
    pub stance: Option<Stance>,
    pub domain: String,
}

impl EncodedExample {
    /// Number of real (unmasked) tokens; always a prefix.
    pub fn len(&self) -> usize {
        self.mask.iter().take_while(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, Default)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    pub fn none() -> Self {
        Self::default()
    }

    /// One word per line; blank lines ignored.
    pub fn parse(text: &str) -> Self {
        Self(
            text.lines()
                .map(|l| l.trim().to_lowercase())
                .filter(|l| !l.is_empty())
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        fs::read_to_string(path)
            .map(|t| Self::parse(&t))
            .map_err(|e| Error::io(path, e))
    }

    pub fn contains(&self, w: &str) -> bool {
        self.0.contains(w)
    }
}

impl Stopwords {
    /// The shipped default list.
    pub fn builtin() -> &'static Stopwords {
        static BUILTIN: OnceLock<Stopwords> = OnceLock::new();
        BUILTIN.get_or_init(|| Stopwords::parse(DEFAULT_STOPWORDS))
    }
}

fn url_pattern() -> &'static Regex {
    static URL: OnceLock<Regex> = OnceLock::new();
    URL.get_or_init(|| Regex::new(r"(?i)(?:\b[a-z][a-z0-9+.\-]*://|\bwww\.)\S*").unwrap())
}

/// Removes URLs, symbols and emoji, lowercases, drops stopwords and
/// collapses whitespace.
pub fn clean_text(raw: &str, stopwords: &Stopwords) -> String {
    let no_urls = url_pattern().replace_all(raw, " ");
    let mut letters = String::with_capacity(no_urls.len());
    for ch in no_urls.chars() {
        if ch.is_alphanumeric() {
            letters.extend(ch.to_lowercase());
        } else if ch == '\'' || ch == '\u{2019}' {
            // dropped so contractions stay one token
        } else {
            letters.push(' ');
        }
    }
    letters
        .split_whitespace()
        .filter(|w| !stopwords.contains(w))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn tokenize(clean: &str) -> Vec<String> {
    clean.split_whitespace().map(str::to_owned).collect()
}

/// Cleans with the default stopword list, then tokenizes.
pub fn preprocess(raw: &str) -> Vec<String> {
    tokenize(&clean_text(raw, Stopwords::builtin()))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_count: usize,
}

impl Vocab {
    /// Builds from tokenized documents: tokens seen at least `min_count`
    /// times, ordered by descending count then lexicographically.
    pub fn build<'a, I>(docs: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in docs {
            for t in doc {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_count.max(1) && t != PAD_TOKEN && t != UNK_TOKEN)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens = [PAD_TOKEN, UNK_TOKEN]
            .into_iter()
            .chain(kept.into_iter().map(|(t, _)| t))
            .map(str::to_owned)
            .collect();
        Self::from_tokens(tokens, min_count).expect("built vocab is well formed")
    }

    /// Rebuilds from an id-ordered token list (as stored in a checkpoint).
    pub fn from_tokens(tokens: Vec<String>, min_count: usize) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(Error::InvalidArgument("vocab must start with <pad>, <unk>".into()));
        }
        let index: HashMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != tokens.len() {
            return Err(Error::InvalidArgument("duplicate vocab token".into()));
        }
        Ok(Self {
            tokens,
            index,
            min_count,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Real tokens, excluding PAD and UNK.
    pub fn content_tokens(&self) -> &[String] {
        &self.tokens[2..]
    }
}

/// Ids and mask of exactly `len` positions: truncated or PAD-filled, with an
/// empty input mapped to a single UNK.
pub fn encode_ids(tokens: &[String], vocab: &Vocab, len: usize) -> (Vec<usize>, Vec<bool>) {
    assert!(len >= 1, "sequence length must be at least 1");
    let mut ids: Vec<usize> = tokens.iter().take(len).map(|t| vocab.id(t)).collect();
    if ids.is_empty() {
        ids.push(UNK);
    }
    let real = ids.len();
    ids.resize(len, PAD);
    let mask = (0..len).map(|i| i < real).collect();
    (ids, mask)
}

pub fn encode(
    tokens: &[String],
    vocab: &Vocab,
    len: usize,
    label: Label,
    stance: Option<Stance>,
    domain: &str,
) -> EncodedExample {
    let (ids, mask) = encode_ids(tokens, vocab, len);
    EncodedExample {
        ids,
        mask,
        label,
        stance,
        domain: domain.to_owned(),
    }
}

pub fn read_records(path: &Path) -> Result<Vec<RawRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord =
            serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[RawRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
