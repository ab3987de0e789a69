//! Sigmoid gate blending the contrastive and stance features, followed by
//! the two-way veracity classifier.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{uniform_init, Group, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateMode {
    /// One gate value per feature dimension.
    Elementwise,
    /// A single gate value per example, broadcast over dimensions.
    Scalar,
}

impl fmt::Display for GateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateMode::Elementwise => "elementwise",
            GateMode::Scalar => "scalar",
        })
    }
}

impl FromStr for GateMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "elementwise" => Ok(GateMode::Elementwise),
            "scalar" => Ok(GateMode::Scalar),
            _ => Err(Error::InvalidArgument(format!("unknown gate mode '{s}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FusionParams {
    pub w_h: ParamId,
    pub w_s: ParamId,
    pub b: ParamId,
    pub cls_w: ParamId,
    pub cls_b: ParamId,
    pub mode: GateMode,
    pub width: usize,
}

impl FusionParams {
    pub fn new<R: Rng>(store: &mut ParamStore, width: usize, mode: GateMode, rng: &mut R) -> Self {
        let gate_out = match mode {
            GateMode::Elementwise => width,
            GateMode::Scalar => 1,
        };
        Self {
            w_h: store.add("fusion.w_h", Group::Omega, uniform_init(rng, &[width, gate_out], width)),
            w_s: store.add("fusion.w_s", Group::Omega, uniform_init(rng, &[width, gate_out], width)),
            b: store.add("fusion.b", Group::Omega, Tensor::zeros(&[gate_out])),
            cls_w: store.add("classifier.w", Group::Omega, uniform_init(rng, &[width, 2], width)),
            cls_b: store.add("classifier.b", Group::Omega, Tensor::zeros(&[2])),
            mode,
            width,
        }
    }

    pub fn param_ids(&self) -> [ParamId; 5] {
        [self.w_h, self.w_s, self.b, self.cls_w, self.cls_b]
    }

    /// `β = σ(h W_h + s W_s + b)`, shape `[B, d]` or `[B, 1]` for a scalar gate.
    pub fn gate(&self, g: &mut Graph, store: &ParamStore, h: Var, s: Var) -> Result<Var> {
        let (hv, sv) = (g.value(h), g.value(s));
        if hv.shape() != sv.shape() || hv.cols() != self.width {
            return Err(Error::Shape(format!(
                "gate inputs {:?} and {:?}, expected width {}",
                hv.shape(),
                sv.shape(),
                self.width
            )));
        }
        let w_h = g.param(store, self.w_h);
        let w_s = g.param(store, self.w_s);
        let b = g.param(store, self.b);
        let zh = g.matmul(h, w_h);
        let zs = g.matmul(s, w_s);
        let z = g.add(zh, zs);
        let z = g.add_row(z, b);
        Ok(g.sigmoid(z))
    }

    pub fn classify(&self, g: &mut Graph, store: &ParamStore, r: Var) -> Var {
        let w = g.param(store, self.cls_w);
        let b = g.param(store, self.cls_b);
        let z = g.matmul(r, w);
        g.add_row(z, b)
    }
}

/// `r = β ⊙ h + (1 − β) ⊙ s`, computed as `s + β ⊙ (h − s)`. A `[B, 1]`
/// gate is broadcast across the feature dimension.
pub fn fuse(g: &mut Graph, h: Var, s: Var, beta: Var) -> Var {
    let diff = g.sub(h, s);
    let scaled = if g.value(beta).cols() == 1 && g.value(h).cols() != 1 {
        g.mul_col(diff, beta)
    } else {
        g.mul(diff, beta)
    };
    g.add(s, scaled)
}
