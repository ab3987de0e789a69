//! The full detector: contrastive encoder, stance encoder and head, gated
//! fusion and classifier, plus the ablated wirings.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::Serialize;

use crate::autodiff::{Graph, Var};
use crate::encoders::{encode, EncoderParams, SeqBatch, StanceHead};
use crate::error::{Error, Result};
use crate::fusion::{fuse, FusionParams, GateMode};
use crate::losses::{cross_entropy, info_nce, l2_reg, total_loss, InfoNceVariant, LossTerms, LossWeights};
use crate::params::{Group, ParamId, ParamStore};
use crate::tensor::{softmax, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// No contrastive term and no augmented views.
    NoCl,
    /// Stance features replaced by zeros, no stance term.
    NoIsr,
    /// Gate fixed at 0.5.
    NoFusion,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoCl, Variant::NoIsr, Variant::NoFusion];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoCl => "no_cl",
            Variant::NoIsr => "no_isr",
            Variant::NoFusion => "no_fusion",
        }
    }

    pub fn uses_views(self) -> bool {
        self != Variant::NoCl
    }

    /// Loss weights after switching off the terms this variant removes.
    pub fn effective_weights(self, w: &LossWeights) -> LossWeights {
        match self {
            Variant::NoCl => LossWeights { alpha1: 0.0, ..*w },
            Variant::NoIsr => LossWeights { alpha2: 0.0, ..*w },
            _ => *w,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub width: usize,
    pub gate: GateMode,
    pub infonce: InfoNceVariant,
    pub variant: Variant,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub cl: EncoderParams,
    pub stance: EncoderParams,
    pub stance_head: StanceHead,
    pub fusion: FusionParams,
}

/// One training batch. `views` holds the two augmented versions of `x`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: SeqBatch,
    pub views: Option<(SeqBatch, SeqBatch)>,
    pub labels: Vec<usize>,
    pub stances: Vec<Option<usize>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Contrastive term plus regularization of the contrastive encoder only.
    Pretrain,
    Joint,
}

impl Stage {
    pub fn groups(self) -> &'static [Group] {
        match self {
            Stage::Pretrain => &[Group::Theta],
            Stage::Joint => &Group::ALL,
        }
    }
}

pub struct Forward {
    pub total: Var,
    pub terms: LossTerms,
    pub logits: Option<Var>,
}

impl Model {
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let (v, e, d) = (config.vocab_size, config.embed_dim, config.width);
        let cl = EncoderParams::new(&mut store, "cl", Group::Theta, v, e, d, true, rng)?;
        let stance = EncoderParams::new(&mut store, "stance", Group::Phi, v, e, d, false, rng)?;
        let stance_head = StanceHead::new(&mut store, "stance_head", d, rng);
        let fusion = FusionParams::new(&mut store, d, config.gate, rng);
        Ok(Self {
            config,
            store,
            cl,
            stance,
            stance_head,
            fusion,
        })
    }

    pub fn stance_head_ids(&self) -> [ParamId; 2] {
        [self.stance_head.w, self.stance_head.b]
    }

    /// Stance features for `x`, or zeros when stance reasoning is ablated.
    fn stance_features(&self, g: &mut Graph, x: &SeqBatch) -> Result<Option<Var>> {
        if self.config.variant == Variant::NoIsr {
            return Ok(None);
        }
        Ok(Some(encode(g, &self.store, &self.stance, x)?.features))
    }

    fn fused_logits(&self, g: &mut Graph, h: Var, s: Option<Var>) -> Result<Var> {
        let s = match s {
            Some(s) => s,
            None => g.constant(Tensor::zeros(g.value(h).shape())),
        };
        let beta = if self.config.variant == Variant::NoFusion {
            g.constant(Tensor::full(g.value(h).shape(), 0.5))
        } else {
            self.fusion.gate(g, &self.store, h, s)?
        };
        let r = fuse(g, h, s, beta);
        Ok(self.fusion.classify(g, &self.store, r))
    }

    /// Veracity logits `[B, 2]`.
    pub fn logits(&self, g: &mut Graph, x: &SeqBatch) -> Result<Var> {
        let h = encode(g, &self.store, &self.cl, x)?.features;
        let s = self.stance_features(g, x)?;
        self.fused_logits(g, h, s)
    }

    /// Builds the training objective for one batch.
    pub fn forward(&self, g: &mut Graph, batch: &Batch, weights: &LossWeights, stage: Stage) -> Result<Forward> {
        let w = self.config.variant.effective_weights(weights);
        let n = batch.x.batch();
        if batch.labels.len() != n || batch.stances.len() != n {
            return Err(Error::Shape(format!(
                "{} labels and {} stances for batch of {n}",
                batch.labels.len(),
                batch.stances.len()
            )));
        }
        let want_cl = match stage {
            Stage::Pretrain => true,
            Stage::Joint => w.alpha1 != 0.0,
        };
        let views = batch.views.as_ref().filter(|_| want_cl);
        if stage == Stage::Pretrain && views.is_none() {
            return Err(Error::InvalidArgument("pretraining needs augmented views".into()));
        }

        let mut terms = LossTerms::default();
        let mut logits = None;
        match stage {
            Stage::Pretrain => {
                let (v1, v2) = views.expect("checked above");
                let both = SeqBatch::concat(&[v1, v2])?;
                let feats = encode(g, &self.store, &self.cl, &both)?.features;
                let h1 = g.rows(feats, 0, n);
                let h2 = g.rows(feats, n, n);
                terms.cl = Some(info_nce(g, h1, h2, w.tau, self.config.infonce)?);
                terms.reg = l2_reg(g, &self.store, stage.groups(), w.lambda);
                let unit = LossWeights { alpha1: 1.0, ..w };
                let total = total_loss(g, &terms, &unit);
                return Ok(Forward { total, terms, logits });
            }
            Stage::Joint => {
                // one pass of the contrastive encoder over x, v and v′ together
                let h = match views {
                    Some((v1, v2)) => {
                        let all = SeqBatch::concat(&[&batch.x, v1, v2])?;
                        let feats = encode(g, &self.store, &self.cl, &all)?.features;
                        let h1 = g.rows(feats, n, n);
                        let h2 = g.rows(feats, 2 * n, n);
                        terms.cl = Some(info_nce(g, h1, h2, w.tau, self.config.infonce)?);
                        g.rows(feats, 0, n)
                    }
                    None => encode(g, &self.store, &self.cl, &batch.x)?.features,
                };
                let s = self.stance_features(g, &batch.x)?;
                if let (Some(s), true) = (s, w.alpha2 != 0.0) {
                    let z = self.stance_head.logits(g, &self.store, s);
                    terms.isr = cross_entropy(g, z, &batch.stances)?;
                }
                let z = self.fused_logits(g, h, s)?;
                if w.alpha3 != 0.0 {
                    let targets: Vec<Option<usize>> = batch.labels.iter().map(|&l| Some(l)).collect();
                    terms.class = cross_entropy(g, z, &targets)?;
                }
                logits = Some(z);
                terms.reg = l2_reg(g, &self.store, stage.groups(), w.lambda);
            }
        }
        let total = total_loss(g, &terms, &w);
        Ok(Forward { total, terms, logits })
    }

    /// Class probabilities per row, `[P(real), P(misleading)]`.
    pub fn probabilities(&self, x: &SeqBatch) -> Result<Vec<[f64; 2]>> {
        let mut g = Graph::new();
        let z = self.logits(&mut g, x)?;
        let zv = g.value(z);
        (0..zv.rows())
            .map(|r| {
                let p = softmax(zv.row(r), None)?;
                Ok([p[0], p[1]])
            })
            .collect()
    }

    /// Argmax class per row; ties go to class 0.
    pub fn predict(&self, x: &SeqBatch) -> Result<Vec<usize>> {
        let mut g = Graph::new();
        let z = self.logits(&mut g, x)?;
        let zv = g.value(z);
        Ok((0..zv.rows())
            .map(|r| usize::from(zv.get2(r, 1) > zv.get2(r, 0)))
            .collect())
    }
}
