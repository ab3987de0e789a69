//! Central finite differences, used as the independent oracle for every
//! analytic gradient in the crate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::encoders::SeqBatch;
use crate::error::Result;
use crate::fusion::GateMode;
use crate::losses::{InfoNceVariant, LossWeights};
use crate::model::{Batch, Model, ModelConfig, Stage, Variant};
use crate::params::{Group, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Step for whole-model checks. The total loss is large enough at small
/// temperatures that cancellation noise at 1e-5 approaches the tolerance.
pub const MODEL_STEP: f64 = 1e-4;

/// Floor on the relative-error denominator; below it the comparison is
/// effectively absolute.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `(f(x+h) − f(x−h)) / 2h` for every coordinate of parameter `id`.
///
/// The parameter is perturbed in place and restored exactly afterwards.
pub fn finite_diff_gradient<F>(mut loss_fn: F, store: &mut ParamStore, id: ParamId, h: f64) -> Result<Tensor>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let n = store.get(id).value.len();
    let mut grad = Tensor::zeros(store.get(id).value.shape());
    for k in 0..n {
        let orig = store.get(id).value.data()[k];
        store.get_mut(id).value.data_mut()[k] = orig + h;
        let up = loss_fn(store);
        store.get_mut(id).value.data_mut()[k] = orig - h;
        let down = loss_fn(store);
        store.get_mut(id).value.data_mut()[k] = orig;
        grad.data_mut()[k] = (up? - down?) / (2.0 * h);
    }
    Ok(grad)
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
    (analytic - numeric).abs() / denom
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupError {
    pub group: Group,
    pub max_rel_err: f64,
    /// Parameter holding the worst coordinate.
    pub worst_param: String,
    pub checked: usize,
}

/// Compares the analytic gradients already stored in `store` against
/// finite differences of `loss_fn`, per group. Frozen rows are skipped.
pub fn check_groups<F>(mut loss_fn: F, store: &mut ParamStore, groups: &[Group], h: f64) -> Result<Vec<GroupError>>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let mut out = Vec::new();
    for &group in groups {
        let mut worst = GroupError {
            group,
            max_rel_err: 0.0,
            worst_param: String::new(),
            checked: 0,
        };
        for id in store.ids_in(group) {
            let numeric = finite_diff_gradient(&mut loss_fn, store, id, h)?;
            let p = store.get(id);
            let range = p.trainable_range();
            let err = max_relative_error(&p.grad.data()[range.clone()], &numeric.data()[range.clone()]);
            worst.checked += range.len();
            if err >= worst.max_rel_err {
                worst.max_rel_err = err;
                worst.worst_param = p.name.clone();
            }
        }
        out.push(worst);
    }
    Ok(out)
}

/// Size and loss settings for [`check_model`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelCheck {
    /// Embedding and encoder width.
    pub width: usize,
    pub seq_len: usize,
    pub batch: usize,
    pub vocab_size: usize,
    pub tau: f64,
    pub lambda: f64,
    pub gate: GateMode,
    pub infonce: InfoNceVariant,
    pub seed: u64,
    pub step: f64,
}

impl Default for ModelCheck {
    fn default() -> Self {
        Self {
            width: 8,
            seq_len: 12,
            batch: 4,
            vocab_size: 20,
            tau: 0.07,
            lambda: 1e-4,
            gate: GateMode::Elementwise,
            infonce: InfoNceVariant::Standard,
            seed: 7,
            step: MODEL_STEP,
        }
    }
}

fn random_batch<R: Rng>(rng: &mut R, n: usize, len: usize, vocab: usize) -> Result<SeqBatch> {
    let seqs: Vec<(Vec<usize>, Vec<bool>)> = (0..n)
        .map(|_| {
            let real = rng.gen_range(len / 2..=len).max(1);
            let ids = (0..len)
                .map(|t| if t < real { rng.gen_range(2..vocab) } else { 0 })
                .collect();
            (ids, (0..len).map(|t| t < real).collect())
        })
        .collect();
    let refs: Vec<(&[usize], &[bool])> = seqs.iter().map(|(i, m)| (i.as_slice(), m.as_slice())).collect();
    SeqBatch::new(&refs)
}

/// Builds a small full model and a random joint-training batch, and compares
/// analytic gradients of the total loss against finite differences for every
/// parameter group.
pub fn check_model(opts: &ModelCheck) -> Result<Vec<GroupError>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let config = ModelConfig {
        vocab_size: opts.vocab_size,
        embed_dim: opts.width,
        width: opts.width,
        gate: opts.gate,
        infonce: opts.infonce,
        variant: Variant::Full,
    };
    let mut model = Model::new(config, &mut rng)?;
    let (n, l, v) = (opts.batch, opts.seq_len, opts.vocab_size);
    let batch = Batch {
        x: random_batch(&mut rng, n, l, v)?,
        views: Some((random_batch(&mut rng, n, l, v)?, random_batch(&mut rng, n, l, v)?)),
        labels: (0..n).map(|i| i % 2).collect(),
        // one row without a stance label exercises the masked path
        stances: (0..n).map(|i| (i != 1).then_some(i % 3)).collect(),
    };
    let weights = LossWeights {
        tau: opts.tau,
        lambda: opts.lambda,
        ..LossWeights::default()
    };
    weights.validate()?;

    let mut g = Graph::new();
    let fwd = model.forward(&mut g, &batch, &weights, Stage::Joint)?;
    model.store.zero_grad();
    g.backward(fwd.total, &mut model.store)?;

    let mut probe = model.clone();
    let loss = |s: &ParamStore| {
        probe.store.clone_from(s);
        let mut g = Graph::new();
        let fwd = probe.forward(&mut g, &batch, &weights, Stage::Joint)?;
        Ok(g.value(fwd.total).item())
    };
    check_groups(loss, &mut model.store, &Group::ALL, opts.step)
}
