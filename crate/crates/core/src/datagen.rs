//! Seeded synthetic corpora whose misleading signal is carried by emotional
//! cue words and by stance-flip constructions, plus stratified splitting.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::SynonymTable;
use crate::error::{Error, Result};
use crate::text::{Label, RawRecord, Stance};

/// How the two cue channels are assigned to misleading records.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelMode {
    /// Emotional cues and stance flips are drawn independently.
    Both,
    /// Each misleading record is assigned exactly one channel.
    Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub domain: String,
    pub n_examples: usize,
    pub subjects: Vec<String>,
    pub predicates: Vec<String>,
    pub sources: Vec<String>,
    /// Emotional cue vocabulary, most common first.
    pub cue_words: Vec<String>,
    /// Zipf exponent over `cue_words`; 0 draws them uniformly.
    pub cue_skew: f64,
    /// Probability that each assigned cue channel fires on a misleading record.
    pub cue_strength: f64,
    /// Per-token probability of inserting a filler word.
    pub noise_rate: f64,
    /// Fraction of misleading records.
    pub balance: f64,
    /// Fraction of records that carry a stance label.
    pub stance_fraction: f64,
    pub channels: ChannelMode,
    pub seed: u64,
}

/// Plain reporting templates by stance. Slots: `{src}`, `{subj}`, `{pred}`.
const SUPPORT_TEMPLATES: &[&str] = &[
    "{src} confirm that {subj} {pred}",
    "new data from {src} show {subj} {pred}",
    "according to {src} {subj} {pred}",
    "{src} report {subj} {pred} in a recent review",
];
const NEUTRAL_TEMPLATES: &[&str] = &[
    "{src} are reviewing whether {subj} {pred}",
    "{src} will discuss whether {subj} {pred} next month",
    "it remains unclear whether {subj} {pred} say {src}",
    "{src} plan a study on whether {subj} {pred}",
];
const OPPOSE_TEMPLATES: &[&str] = &[
    "{src} found no evidence that {subj} {pred}",
    "{src} reject reports that {subj} {pred}",
    "a review by {src} does not support that {subj} {pred}",
];
/// Misleading constructions that turn against the reported claim.
const FLIP_TEMPLATES: &[&str] = &[
    "{src} say {subj} {pred} but the truth is they are hiding what happened",
    "they claim {subj} {pred} but actually it does the opposite",
    "{src} insist {subj} {pred} yet insiders know it really fails",
    "sure {subj} {pred} if you believe {src} but nobody is telling you the real story",
];
/// Words that occur only in [`FLIP_TEMPLATES`].
pub const FLIP_MARKERS: &[&str] = &[
    "but", "truth", "they", "hiding", "happened", "claim", "actually", "opposite", "insist", "yet", "insiders", "know",
    "really", "fails", "sure", "if", "you", "believe", "nobody", "telling", "real", "story", "what",
];
const FILLERS: &[&str] = &[
    "today",
    "local",
    "people",
    "online",
    "week",
    "many",
    "recent",
    "public",
    "update",
    "morning",
    "latest",
    "community",
];

/// Emotional cue families: the first word of each is the common form.
const CUE_FAMILIES: &[&[&str]] = &[
    &["shocking", "stunning", "astonishing", "jawdropping"],
    &["outrageous", "scandalous", "disgraceful", "appalling"],
    &["terrifying", "horrifying", "frightening", "alarming"],
    &["secret", "covert", "concealed", "suppressed"],
    &["miracle", "wonder", "marvel", "phenomenal"],
    &["exposed", "unmasked", "busted", "leaked"],
    &["unbelievable", "incredible", "insane", "mindblowing"],
    &["disaster", "catastrophe", "calamity", "nightmare"],
];

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// All emotional cue words, common forms first.
pub fn all_cue_words() -> Vec<String> {
    let common = CUE_FAMILIES.iter().map(|f| f[0]);
    let rare = CUE_FAMILIES.iter().flat_map(|f| f[1..].iter().copied());
    common.chain(rare).map(str::to_owned).collect()
}

/// Synonym table linking every member of each cue family, plus a few
/// reporting words so synonym views also perturb plain text.
pub fn builtin_synonyms() -> SynonymTable {
    let mut table = SynonymTable::new();
    let general: &[&[&str]] = &[
        &["confirm", "verify", "affirm"],
        &["reviewing", "examining", "assessing"],
        &["reject", "dismiss", "refute"],
        &["recent", "latest", "new"],
        &["study", "analysis", "survey"],
    ];
    for fam in CUE_FAMILIES.iter().chain(general) {
        for &w in fam.iter() {
            let others: Vec<&str> = fam.iter().copied().filter(|&o| o != w).collect();
            table.insert(w, &others);
        }
    }
    table
}

impl CorpusSpec {
    fn base(domain: &str, subjects: &[&str], predicates: &[&str], sources: &[&str]) -> Self {
        Self {
            domain: domain.into(),
            n_examples: 2000,
            subjects: words(subjects),
            predicates: words(predicates),
            sources: words(sources),
            cue_words: CUE_FAMILIES.iter().map(|f| f[0].to_string()).collect(),
            cue_skew: 0.0,
            cue_strength: 0.9,
            noise_rate: 0.05,
            balance: 0.5,
            stance_fraction: 1.0,
            channels: ChannelMode::Both,
            seed: 7,
        }
    }

    pub fn health() -> Self {
        Self::base(
            "health",
            &[
                "the flu vaccine",
                "vitamin supplements",
                "the new diet regimen",
                "the hospital program",
                "daily exercise",
                "the clinical trial",
                "green tea",
                "the sleep study",
                "lower sugar intake",
                "the antibiotic course",
            ],
            &[
                "lowers infection rates",
                "improves heart health",
                "reduces recovery time",
                "helps older patients",
                "cuts hospital visits",
                "supports immune function",
                "eases chronic pain",
                "boosts energy levels",
            ],
            &[
                "doctors",
                "the health ministry",
                "nurses",
                "researchers",
                "the medical board",
            ],
        )
    }

    pub fn politics() -> Self {
        Self::base(
            "politics",
            &[
                "the senate bill",
                "the tax reform",
                "the governor",
                "the border policy",
                "the city council",
                "the trade deal",
                "the voting law",
                "the housing scheme",
                "the pension reform",
                "the mayor",
            ],
            &[
                "trims household costs",
                "creates factory jobs",
                "raises public wages",
                "shrinks the deficit",
                "expands rural services",
                "grows school funding",
                "shortens commute times",
                "strengthens the economy",
            ],
            &[
                "the election office",
                "analysts",
                "the press office",
                "lawmakers",
                "the budget committee",
            ],
        )
    }

    /// Smaller corpus for ablations: one cue channel per misleading record,
    /// emotional cues spread over rare paraphrases.
    pub fn ablation() -> Self {
        Self {
            domain: "ablation".into(),
            n_examples: 2000,
            cue_words: all_cue_words(),
            cue_skew: 1.2,
            cue_strength: 0.95,
            noise_rate: 0.1,
            channels: ChannelMode::Split,
            ..Self::health()
        }
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "health" => Ok(Self::health()),
            "politics" => Ok(Self::politics()),
            "ablation" => Ok(Self::ablation()),
            _ => Err(Error::InvalidArgument(format!(
                "unknown corpus '{name}' (expected health, politics or ablation)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("balance", self.balance)?;
        unit("cue_strength", self.cue_strength)?;
        unit("noise_rate", self.noise_rate)?;
        unit("stance_fraction", self.stance_fraction)?;
        if self.subjects.is_empty() || self.predicates.is_empty() || self.sources.is_empty() {
            return Err(Error::InvalidArgument("corpus lexicon is empty".into()));
        }
        if self.cue_words.is_empty() {
            return Err(Error::InvalidArgument("no cue words".into()));
        }
        if !(self.cue_skew >= 0.0) {
            return Err(Error::InvalidArgument("cue_skew must be ≥ 0".into()));
        }
        Ok(())
    }

    /// Words whose presence marks a record as cued: the emotional cue
    /// vocabulary and the stance-flip markers.
    pub fn cue_vocabulary(&self) -> BTreeSet<String> {
        self.cue_words
            .iter()
            .cloned()
            .chain(FLIP_MARKERS.iter().map(|s| s.to_string()))
            .collect()
    }
}

fn fill(template: &str, src: &str, subj: &str, pred: &str) -> String {
    template
        .replace("{src}", src)
        .replace("{subj}", subj)
        .replace("{pred}", pred)
}

fn pick_cue<R: Rng>(spec: &CorpusSpec, rng: &mut R) -> String {
    if spec.cue_skew == 0.0 {
        return spec.cue_words.choose(rng).expect("validated").clone();
    }
    let weights: Vec<f64> = (1..=spec.cue_words.len())
        .map(|r| (r as f64).powf(-spec.cue_skew))
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (w, word) in weights.iter().zip(&spec.cue_words) {
        if u < *w {
            return word.clone();
        }
        u -= w;
    }
    spec.cue_words.last().expect("validated").clone()
}

fn add_noise<R: Rng>(text: &str, rate: f64, rng: &mut R) -> String {
    let mut out: Vec<&str> = Vec::new();
    for tok in text.split_whitespace() {
        out.push(tok);
        if rng.gen::<f64>() < rate {
            out.push(FILLERS.choose(rng).expect("non-empty"));
        }
    }
    out.join(" ")
}

fn generate_one<R: Rng>(spec: &CorpusSpec, index: usize, label: Label, rng: &mut R) -> RawRecord {
    let src = spec.sources.choose(rng).expect("validated");
    let subj = spec.subjects.choose(rng).expect("validated");
    let pred = spec.predicates.choose(rng).expect("validated");
    let (emotional, flip) = match label {
        Label::Real => (false, false),
        Label::Misleading => match spec.channels {
            ChannelMode::Both => (
                rng.gen::<f64>() < spec.cue_strength,
                rng.gen::<f64>() < spec.cue_strength,
            ),
            ChannelMode::Split => {
                let fires = rng.gen::<f64>() < spec.cue_strength;
                if rng.gen::<bool>() {
                    (fires, false)
                } else {
                    (false, fires)
                }
            }
        },
    };
    let (templates, stance) = if flip {
        (FLIP_TEMPLATES, Stance::Oppose)
    } else {
        let plain: &[(&[&str], Stance)] = match label {
            Label::Real => &[
                (SUPPORT_TEMPLATES, Stance::Support),
                (NEUTRAL_TEMPLATES, Stance::Neutral),
                (OPPOSE_TEMPLATES, Stance::Oppose),
            ],
            // misleading text without a flip poses as a plain claim
            Label::Misleading => &[
                (SUPPORT_TEMPLATES, Stance::Support),
                (NEUTRAL_TEMPLATES, Stance::Neutral),
            ],
        };
        *plain.choose(rng).expect("non-empty")
    };
    let mut text = fill(templates.choose(rng).expect("non-empty"), src, subj, pred);
    if emotional {
        let first = pick_cue(spec, rng);
        text = format!("{first} {text}");
        if rng.gen::<bool>() {
            let second = pick_cue(spec, rng);
            text = format!("{text} {second}!!");
        }
    }
    text = add_noise(&text, spec.noise_rate, rng);
    if rng.gen::<f64>() < 0.1 {
        text.push_str(&format!(" https://example.org/post/{index}"));
    }
    let stance = (rng.gen::<f64>() < spec.stance_fraction).then_some(stance);
    RawRecord {
        id: format!("{}-{index:05}", spec.domain),
        text,
        label,
        stance,
        domain: spec.domain.clone(),
    }
}

/// Deterministic corpus with exactly `round(n · balance)` misleading records.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<RawRecord>> {
    spec.validate()?;
    let n = spec.n_examples;
    let n_mis = (n as f64 * spec.balance).round() as usize;
    let mut labels: Vec<Label> = (0..n)
        .map(|i| if i < n_mis { Label::Misleading } else { Label::Real })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    labels.shuffle(&mut rng);
    Ok(labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| generate_one(spec, i, label, &mut rng))
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Vec<RawRecord>,
    pub val: Vec<RawRecord>,
    pub test: Vec<RawRecord>,
}

/// Label-stratified train/validation/test split; each split keeps corpus order.
pub fn split(corpus: &[RawRecord], ratios: [f64; 3], seed: u64) -> Result<Splits> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios {ratios:?} must be non-negative and sum to 1"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assign = vec![0u8; corpus.len()];
    for label in [Label::Real, Label::Misleading] {
        let mut idx: Vec<usize> = (0..corpus.len()).filter(|&i| corpus[i].label == label).collect();
        idx.shuffle(&mut rng);
        let n = idx.len() as f64;
        let n_train = (n * ratios[0]).round() as usize;
        let n_val = ((n * ratios[1]).round() as usize).min(idx.len() - n_train);
        for (k, &i) in idx.iter().enumerate() {
            assign[i] = if k < n_train {
                0
            } else if k < n_train + n_val {
                1
            } else {
                2
            };
        }
    }
    let pick = |s: u8| -> Vec<RawRecord> {
        corpus
            .iter()
            .zip(&assign)
            .filter(|(_, &a)| a == s)
            .map(|(r, _)| r.clone())
            .collect()
    };
    let out = Splits {
        train: pick(0),
        val: pick(1),
        test: pick(2),
    };
    for (name, part) in [("train", &out.train), ("validation", &out.val), ("test", &out.test)] {
        if part.is_empty() {
            return Err(Error::EmptySplit(name));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::preprocess;

    fn small(n: usize) -> CorpusSpec {
        CorpusSpec {
            n_examples: n,
            ..CorpusSpec::health()
        }
    }

    #[test]
    fn empty_and_deterministic() {
        assert!(generate_corpus(&small(0)).unwrap().is_empty());
        assert_eq!(
            generate_corpus(&small(50)).unwrap(),
            generate_corpus(&small(50)).unwrap()
        );
        let other = CorpusSpec { seed: 8, ..small(50) };
        assert_ne!(generate_corpus(&small(50)).unwrap(), generate_corpus(&other).unwrap());
    }

    #[test]
    fn balance_is_respected() {
        for (n, b) in [(101, 0.5), (10, 0.3), (7, 1.0), (7, 0.0)] {
            let c = generate_corpus(&CorpusSpec { balance: b, ..small(n) }).unwrap();
            let mis = c.iter().filter(|r| r.label == Label::Misleading).count() as f64;
            assert!((mis - n as f64 * b).abs() <= 1.0);
        }
        assert!(generate_corpus(&CorpusSpec {
            balance: 1.5,
            ..small(5)
        })
        .is_err());
    }

    #[test]
    fn flip_markers_never_in_plain_templates() {
        for t in SUPPORT_TEMPLATES
            .iter()
            .chain(NEUTRAL_TEMPLATES)
            .chain(OPPOSE_TEMPLATES)
        {
            for w in preprocess(t) {
                assert!(!FLIP_MARKERS.contains(&w.as_str()), "{w} in {t}");
            }
        }
        for spec in [CorpusSpec::health(), CorpusSpec::politics()] {
            let lex = spec.subjects.iter().chain(&spec.predicates).chain(&spec.sources);
            for phrase in lex {
                for w in preprocess(phrase) {
                    assert!(!spec.cue_vocabulary().contains(&w), "{w}");
                }
            }
        }
        for t in FLIP_TEMPLATES {
            assert!(preprocess(t).iter().any(|w| FLIP_MARKERS.contains(&w.as_str())));
        }
    }

    #[test]
    fn domains_have_disjoint_topic_words() {
        let words = |s: &CorpusSpec| -> BTreeSet<String> {
            s.subjects
                .iter()
                .chain(&s.predicates)
                .chain(&s.sources)
                .flat_map(|p| preprocess(p))
                .collect()
        };
        let (h, p) = (words(&CorpusSpec::health()), words(&CorpusSpec::politics()));
        assert!(h.is_disjoint(&p), "{:?}", h.intersection(&p).collect::<Vec<_>>());
    }

    #[test]
    fn stance_fraction_controls_missing_labels() {
        let c = generate_corpus(&CorpusSpec {
            stance_fraction: 0.0,
            ..small(40)
        })
        .unwrap();
        assert!(c.iter().all(|r| r.stance.is_none()));
        let c = generate_corpus(&small(40)).unwrap();
        assert!(c.iter().all(|r| r.stance.is_some()));
    }

    #[test]
    fn synonym_table_links_cue_families() {
        let t = builtin_synonyms();
        assert!(t.get("shocking").unwrap().contains(&"stunning".to_string()));
        assert!(t.get("stunning").unwrap().contains(&"shocking".to_string()));
        assert_eq!(all_cue_words().len(), 32);
    }

    #[test]
    fn split_arithmetic_and_partition() {
        let c = generate_corpus(&small(100)).unwrap();
        let s = split(&c, [0.8, 0.1, 0.1], 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));
        for part in [&s.train, &s.val, &s.test] {
            let mis = part.iter().filter(|r| r.label == Label::Misleading).count();
            assert_eq!(mis * 2, part.len());
        }
        let mut ids: Vec<&str> = s
            .train
            .iter()
            .chain(&s.val)
            .chain(&s.test)
            .map(|r| r.id.as_str())
            .collect();
        ids.sort();
        let mut all: Vec<&str> = c.iter().map(|r| r.id.as_str()).collect();
        all.sort();
        assert_eq!(ids, all);
        assert_eq!(split(&c, [0.8, 0.1, 0.1], 1).unwrap(), s);
    }

    #[test]
    fn split_guards() {
        let c = generate_corpus(&small(100)).unwrap();
        assert!(matches!(
            split(&c, [1.0, 0.0, 0.0], 1),
            Err(Error::EmptySplit("validation"))
        ));
        assert!(split(&c, [0.5, 0.1, 0.1], 1).is_err());
    }
}
