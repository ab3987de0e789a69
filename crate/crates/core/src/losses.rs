//! Objective terms: contrastive InfoNCE, masked cross-entropy, L2
//! regularization and their weighted total.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{Group, ParamStore};
use crate::tensor::{Tensor, COSINE_EPS};

/// Which vectors make up the InfoNCE denominator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InfoNceVariant {
    /// `Σ_j exp(sim(h_i, h′_j)/τ)`, positive included.
    Standard,
    /// `Σ_j exp(sim(h_i, h_j)/τ)` over first views only.
    Literal,
}

impl fmt::Display for InfoNceVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InfoNceVariant::Standard => "standard",
            InfoNceVariant::Literal => "literal",
        })
    }
}

impl FromStr for InfoNceVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(InfoNceVariant::Standard),
            "literal" => Ok(InfoNceVariant::Literal),
            _ => Err(Error::InvalidArgument(format!("unknown InfoNCE variant '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub tau: f64,
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 1.0,
            alpha3: 1.0,
            tau: 0.07,
            lambda: 1e-4,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "{name} must be finite and ≥ 0, got {v}"
                )))
            }
        };
        finite_nonneg("alpha1", self.alpha1)?;
        finite_nonneg("alpha2", self.alpha2)?;
        finite_nonneg("alpha3", self.alpha3)?;
        finite_nonneg("lambda", self.lambda)?;
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidArgument(format!("tau must be > 0, got {}", self.tau)));
        }
        Ok(())
    }
}

/// `[n, m]` matrix of cosine similarities between the rows of `a` and `b`.
pub fn cosine_matrix(g: &mut Graph, a: Var, b: Var) -> Var {
    let dots = g.matmul_bt(a, b);
    let na = g.row_sum_sq(a);
    let na = g.sqrt(na);
    let nb = g.row_sum_sq(b);
    let nb = g.sqrt(nb);
    let denom = g.matmul_bt(na, nb);
    let denom = g.clamp_min(denom, COSINE_EPS);
    g.div(dots, denom)
}

/// Mean InfoNCE over a batch of aligned view pairs `h[i] ↔ h2[i]`.
pub fn info_nce(g: &mut Graph, h: Var, h2: Var, tau: f64, variant: InfoNceVariant) -> Result<Var> {
    let (hv, h2v) = (g.value(h), g.value(h2));
    if hv.shape() != h2v.shape() || hv.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "InfoNCE views {:?} and {:?}",
            hv.shape(),
            h2v.shape()
        )));
    }
    let n = hv.rows();
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be > 0, got {tau}")));
    }
    let diag: Vec<usize> = (0..n).collect();
    let cross = cosine_matrix(g, h, h2);
    let cross = g.scale(cross, 1.0 / tau);
    let per_row = match variant {
        InfoNceVariant::Standard => {
            let lsm = g.log_softmax_rows(cross);
            g.pick_per_row(lsm, &diag)
        }
        InfoNceVariant::Literal => {
            // log(exp(pos) / Σ_j exp(self_ij)) = pos − lse_i, with lse_i = self_ii − logsm_ii
            let own = cosine_matrix(g, h, h);
            let own = g.scale(own, 1.0 / tau);
            let lsm = g.log_softmax_rows(own);
            let own_diag = g.pick_per_row(own, &diag);
            let lsm_diag = g.pick_per_row(lsm, &diag);
            let pos = g.pick_per_row(cross, &diag);
            let lse = g.sub(own_diag, lsm_diag);
            g.sub(pos, lse)
        }
    };
    Ok(g.weighted_sum(per_row, &vec![-1.0 / n as f64; n]))
}

/// Mean cross-entropy over the rows whose target is present. Rows without a
/// target contribute nothing and are left out of the count. Returns `None`
/// when no row has a target.
pub fn cross_entropy(g: &mut Graph, logits: Var, targets: &[Option<usize>]) -> Result<Option<Var>> {
    let lv = g.value(logits);
    let (m, k) = (lv.rows(), lv.cols());
    if targets.len() != m {
        return Err(Error::Shape(format!("{} targets for {m} rows", targets.len())));
    }
    if let Some(&t) = targets.iter().flatten().find(|&&t| t >= k) {
        return Err(Error::InvalidTarget { target: t, classes: k });
    }
    let count = targets.iter().flatten().count();
    if count == 0 {
        return Ok(None);
    }
    let idx: Vec<usize> = targets.iter().map(|t| t.unwrap_or(0)).collect();
    let weights: Vec<f64> = targets
        .iter()
        .map(|t| if t.is_some() { -1.0 / count as f64 } else { 0.0 })
        .collect();
    let lsm = g.log_softmax_rows(logits);
    let picked = g.pick_per_row(lsm, &idx);
    Ok(Some(g.weighted_sum(picked, &weights)))
}

/// `λ Σ ‖p‖²` over every parameter in `groups`; frozen PAD rows excluded.
/// Returns `None` for λ = 0 or an empty selection.
pub fn l2_reg(g: &mut Graph, store: &ParamStore, groups: &[Group], lambda: f64) -> Option<Var> {
    if lambda == 0.0 {
        return None;
    }
    let mut acc: Option<Var> = None;
    for &group in groups {
        for id in store.ids_in(group) {
            let p = g.param(store, id);
            let sq = g.sum_sq(p, store.get(id).frozen_first_row);
            acc = Some(match acc {
                None => sq,
                Some(a) => g.add(a, sq),
            });
        }
    }
    acc.map(|a| g.scale(a, lambda))
}

pub fn l2_reg_value(store: &ParamStore, groups: &[Group], lambda: f64) -> f64 {
    let total: f64 = groups
        .iter()
        .flat_map(|&grp| store.ids_in(grp))
        .map(|id| {
            let p = store.get(id);
            p.value.data()[p.trainable_range()].iter().map(|x| x * x).sum::<f64>()
        })
        .sum();
    lambda * total
}

/// Individual loss components of one batch; absent terms are not built.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossTerms {
    pub cl: Option<Var>,
    pub isr: Option<Var>,
    pub class: Option<Var>,
    pub reg: Option<Var>,
}

/// `α₁ L_CL + α₂ L_ISR + α₃ L_class + L_reg`. A term with a zero weight is
/// left out of the graph, so it contributes exactly zero gradient.
pub fn total_loss(g: &mut Graph, terms: &LossTerms, w: &LossWeights) -> Var {
    let weighted = [
        (terms.cl, w.alpha1),
        (terms.isr, w.alpha2),
        (terms.class, w.alpha3),
        (terms.reg, 1.0),
    ];
    let mut acc: Option<Var> = None;
    for (term, alpha) in weighted {
        let Some(t) = term else { continue };
        if alpha == 0.0 {
            continue;
        }
        let t = if alpha == 1.0 { t } else { g.scale(t, alpha) };
        acc = Some(match acc {
            None => t,
            Some(a) => g.add(a, t),
        });
    }
    acc.unwrap_or_else(|| g.constant(Tensor::scalar(0.0)))
}

/// Scalar form of [`total_loss`] for already-evaluated components.
pub fn total_value(cl: f64, isr: f64, class: f64, reg: f64, w: &LossWeights) -> f64 {
    w.alpha1 * cl + w.alpha2 * isr + w.alpha3 * class + reg
}

/// InfoNCE on plain row vectors.
pub fn info_nce_value(h: &[Vec<f64>], h2: &[Vec<f64>], tau: f64, variant: InfoNceVariant) -> Result<f64> {
    let mut g = Graph::new();
    let a = g.constant(rows_to_tensor(h)?);
    let b = g.constant(rows_to_tensor(h2)?);
    let l = info_nce(&mut g, a, b, tau, variant)?;
    Ok(g.value(l).item())
}

/// Cross-entropy of a single logit vector.
pub fn cross_entropy_value(logits: &[f64], target: usize) -> Result<f64> {
    let mut g = Graph::new();
    let z = g.constant(Tensor::matrix(1, logits.len(), logits.to_vec())?);
    let l = cross_entropy(&mut g, z, &[Some(target)])?.expect("one target");
    Ok(g.value(l).item())
}

fn rows_to_tensor(rows: &[Vec<f64>]) -> Result<Tensor> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Shape("ragged rows".into()));
    }
    Tensor::matrix(rows.len(), cols, rows.concat())
}
