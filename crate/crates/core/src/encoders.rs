//! Text encoders: embedding → bidirectional LSTM → additive attention
//! pooling, with an optional linear+tanh projection head.
//!
//! The contrastive encoder and the stance encoder share this architecture
//! and own disjoint parameter sets. Matrices use the row-vector convention
//! (`x W`), so a `[in, out]` weight maps a batch `[B, in]` to `[B, out]`.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{uniform_init, Group, ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::text::EncodedExample;

/// A batch of encoded sequences laid out time-major, trimmed to the longest
/// real length in the batch. Trimming is exact: padded positions never
/// influence real ones.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqBatch {
    batch: usize,
    steps: usize,
    /// `ids[t * batch + b]`
    ids: Vec<usize>,
    /// `step_mask[t][b]`
    step_mask: Vec<Vec<bool>>,
    /// Row-major `[batch, steps]` mask for attention.
    attn_mask: Vec<bool>,
}

impl SeqBatch {
    pub fn new(seqs: &[(&[usize], &[bool])]) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut lens = Vec::with_capacity(seqs.len());
        for (ids, mask) in seqs {
            if ids.len() != mask.len() {
                return Err(Error::Shape("ids and mask lengths differ".into()));
            }
            let real = mask.iter().take_while(|&&m| m).count();
            if real == 0 {
                return Err(Error::InvalidArgument("sequence has no unmasked tokens".into()));
            }
            if mask[real..].iter().any(|&m| m) {
                return Err(Error::InvalidArgument("mask is not a true-prefix".into()));
            }
            lens.push(real);
        }
        let batch = seqs.len();
        let steps = *lens.iter().max().expect("non-empty");
        let mut ids = vec![crate::text::PAD; steps * batch];
        let mut step_mask = vec![vec![false; batch]; steps];
        let mut attn_mask = vec![false; batch * steps];
        for (b, ((seq, _), &len)) in seqs.iter().zip(&lens).enumerate() {
            for t in 0..len {
                ids[t * batch + b] = seq[t];
                step_mask[t][b] = true;
                attn_mask[b * steps + t] = true;
            }
        }
        Ok(Self {
            batch,
            steps,
            ids,
            step_mask,
            attn_mask,
        })
    }

    pub fn from_examples(examples: &[&EncodedExample]) -> Result<Self> {
        let seqs: Vec<(&[usize], &[bool])> = examples.iter().map(|e| (e.ids.as_slice(), e.mask.as_slice())).collect();
        Self::new(&seqs)
    }

    /// Stacks several batches row-wise into one.
    pub fn concat(parts: &[&SeqBatch]) -> Result<Self> {
        let mut seqs: Vec<(Vec<usize>, Vec<bool>)> = Vec::new();
        for p in parts {
            for b in 0..p.batch {
                let ids = (0..p.steps).map(|t| p.ids[t * p.batch + b]).collect();
                let mask = (0..p.steps).map(|t| p.step_mask[t][b]).collect();
                seqs.push((ids, mask));
            }
        }
        let refs: Vec<(&[usize], &[bool])> = seqs.iter().map(|(i, m)| (i.as_slice(), m.as_slice())).collect();
        Self::new(&refs)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn attn_mask(&self) -> &[bool] {
        &self.attn_mask
    }

    pub fn step_mask(&self, t: usize) -> &[bool] {
        &self.step_mask[t]
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }
}

/// One direction of an LSTM; gate blocks ordered input, forget, cell, output.
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmParams {
    fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        group: Group,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let w_x = store.add(
            format!("{prefix}.w_x"),
            group,
            uniform_init(rng, &[input, 4 * hidden], input),
        );
        let w_h = store.add(
            format!("{prefix}.w_h"),
            group,
            uniform_init(rng, &[hidden, 4 * hidden], hidden),
        );
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        let b = store.add(format!("{prefix}.b"), group, bias);
        Self { w_x, w_h, b, hidden }
    }
}

/// `e = vᵀ tanh(W h + b)` scoring for attention pooling.
#[derive(Clone, Debug)]
pub struct AttnPoolParams {
    pub w: ParamId,
    pub b: ParamId,
    pub v: ParamId,
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub group: Group,
    pub embedding: ParamId,
    pub fwd: LstmParams,
    pub bwd: LstmParams,
    pub attn: AttnPoolParams,
    /// Projection head `tanh(x W + b)`.
    pub head: Option<(ParamId, ParamId)>,
    pub width: usize,
}

impl EncoderParams {
    /// `width` must be even: each direction carries `width / 2` units.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        group: Group,
        vocab_size: usize,
        embed_dim: usize,
        width: usize,
        with_head: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if width == 0 || !width.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "encoder width must be even and positive, got {width}"
            )));
        }
        if vocab_size < 2 || embed_dim == 0 {
            return Err(Error::InvalidArgument("empty vocabulary or embedding".into()));
        }
        let half = width / 2;
        let embedding = store.add_with_frozen_first_row(
            format!("{prefix}.embedding"),
            group,
            // a lookup has one active input, so fan_in = 1
            uniform_init(rng, &[vocab_size, embed_dim], 1),
        );
        let fwd = LstmParams::new(store, &format!("{prefix}.lstm_fwd"), group, embed_dim, half, rng);
        let bwd = LstmParams::new(store, &format!("{prefix}.lstm_bwd"), group, embed_dim, half, rng);
        let attn = AttnPoolParams {
            w: store.add(
                format!("{prefix}.attn.w"),
                group,
                uniform_init(rng, &[width, width], width),
            ),
            b: store.add(format!("{prefix}.attn.b"), group, Tensor::zeros(&[width])),
            v: store.add(format!("{prefix}.attn.v"), group, uniform_init(rng, &[width, 1], width)),
        };
        let head = with_head.then(|| {
            (
                store.add(
                    format!("{prefix}.head.w"),
                    group,
                    uniform_init(rng, &[width, width], width),
                ),
                store.add(format!("{prefix}.head.b"), group, Tensor::zeros(&[width])),
            )
        });
        Ok(Self {
            group,
            embedding,
            fwd,
            bwd,
            attn,
            head,
            width,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![
            self.embedding,
            self.fwd.w_x,
            self.fwd.w_h,
            self.fwd.b,
            self.bwd.w_x,
            self.bwd.w_h,
            self.bwd.b,
            self.attn.w,
            self.attn.b,
            self.attn.v,
        ];
        if let Some((w, b)) = self.head {
            ids.extend([w, b]);
        }
        ids
    }
}

fn lstm_direction(
    g: &mut Graph,
    store: &ParamStore,
    p: &LstmParams,
    xw: Var,
    batch: &SeqBatch,
    reverse: bool,
) -> Vec<Var> {
    let (bsz, steps, hid) = (batch.batch(), batch.steps(), p.hidden);
    let w_h = g.param(store, p.w_h);
    let bias = g.param(store, p.b);
    let mut h = g.constant(Tensor::zeros(&[bsz, hid]));
    let mut c = g.constant(Tensor::zeros(&[bsz, hid]));
    let mut out = vec![h; steps];
    let order: Vec<usize> = if reverse {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    };
    for t in order {
        let x_t = g.rows(xw, t * bsz, bsz);
        let rec = g.matmul(h, w_h);
        let pre = g.add(x_t, rec);
        let gates = g.add_row(pre, bias);
        let i_pre = g.cols(gates, 0, hid);
        let f_pre = g.cols(gates, hid, hid);
        let c_pre = g.cols(gates, 2 * hid, hid);
        let o_pre = g.cols(gates, 3 * hid, hid);
        let i = g.sigmoid(i_pre);
        let f = g.sigmoid(f_pre);
        let cand = g.tanh(c_pre);
        let o = g.sigmoid(o_pre);
        let keep = g.mul(f, c);
        let write = g.mul(i, cand);
        let c_new = g.add(keep, write);
        let c_act = g.tanh(c_new);
        let h_new = g.mul(o, c_act);
        // padded rows carry the previous state unchanged
        let m = batch.step_mask(t);
        c = g.select_rows(m, c_new, c);
        h = g.select_rows(m, h_new, h);
        out[t] = h;
    }
    out
}

/// Per-step hidden states `[B, width]`, forward half then backward half.
pub fn birnn_forward(g: &mut Graph, store: &ParamStore, enc: &EncoderParams, batch: &SeqBatch) -> Vec<Var> {
    let table = g.param(store, enc.embedding);
    let x = g.gather(table, batch.ids());
    let wf = g.param(store, enc.fwd.w_x);
    let wb = g.param(store, enc.bwd.w_x);
    let xf = g.matmul(x, wf);
    let xb = g.matmul(x, wb);
    let fwd = lstm_direction(g, store, &enc.fwd, xf, batch, false);
    let bwd = lstm_direction(g, store, &enc.bwd, xb, batch, true);
    fwd.into_iter().zip(bwd).map(|(f, b)| g.concat_cols(&[f, b])).collect()
}

/// Additive attention over the unmasked steps. Returns the pooled
/// `[B, width]` vector and the `[B, steps]` attention weights.
pub fn attention_pool(
    g: &mut Graph,
    store: &ParamStore,
    attn: &AttnPoolParams,
    states: &[Var],
    attn_mask: &[bool],
) -> Result<(Var, Var)> {
    if states.is_empty() {
        return Err(Error::EmptySupport);
    }
    let steps = states.len();
    let bsz = g.value(states[0]).rows();
    let stacked = g.concat_rows(states);
    let w = g.param(store, attn.w);
    let b = g.param(store, attn.b);
    let v = g.param(store, attn.v);
    let proj = g.matmul(stacked, w);
    let proj = g.add_row(proj, b);
    let act = g.tanh(proj);
    let scores = g.matmul(act, v);
    let scores = g.reshape(scores, steps, bsz);
    let scores = g.transpose(scores);
    let alpha = g.softmax_rows(scores, Some(attn_mask))?;
    let mut pooled = None;
    for (t, &h_t) in states.iter().enumerate() {
        let a_t = g.cols(alpha, t, 1);
        let term = g.mul_col(h_t, a_t);
        pooled = Some(match pooled {
            None => term,
            Some(acc) => g.add(acc, term),
        });
    }
    Ok((pooled.expect("at least one step"), alpha))
}

pub struct Encoded {
    pub features: Var,
    pub attention: Var,
}

/// Full encoder stack; applies the projection head when present.
pub fn encode(g: &mut Graph, store: &ParamStore, enc: &EncoderParams, batch: &SeqBatch) -> Result<Encoded> {
    let states = birnn_forward(g, store, enc, batch);
    let (pooled, attention) = attention_pool(g, store, &enc.attn, &states, batch.attn_mask())?;
    let features = match enc.head {
        Some((w, b)) => {
            let w = g.param(store, w);
            let b = g.param(store, b);
            let z = g.matmul(pooled, w);
            let z = g.add_row(z, b);
            g.tanh(z)
        }
        None => pooled,
    };
    Ok(Encoded { features, attention })
}

/// Linear `width → 3` stance classifier (oppose, neutral, support).
#[derive(Clone, Debug)]
pub struct StanceHead {
    pub w: ParamId,
    pub b: ParamId,
}

impl StanceHead {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, width: usize, rng: &mut R) -> Self {
        Self {
            w: store.add(format!("{prefix}.w"), Group::Phi, uniform_init(rng, &[width, 3], width)),
            b: store.add(format!("{prefix}.b"), Group::Phi, Tensor::zeros(&[3])),
        }
    }

    pub fn logits(&self, g: &mut Graph, store: &ParamStore, s: Var) -> Var {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let z = g.matmul(s, w);
        g.add_row(z, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(width: usize) -> (ParamStore, EncoderParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = EncoderParams::new(&mut store, "enc", Group::Theta, 10, 3, width, true, &mut rng).unwrap();
        (store, enc)
    }

    #[test]
    fn seq_batch_layout_and_trim() {
        let b = SeqBatch::new(&[
            (&[2, 3, 0, 0], &[true, true, false, false]),
            (&[4, 0, 0, 0], &[true, false, false, false]),
        ])
        .unwrap();
        assert_eq!(b.steps(), 2);
        assert_eq!(b.ids(), &[2, 4, 3, 0]);
        assert_eq!(b.attn_mask(), &[true, true, true, false]);
        assert_eq!(b.step_mask(1), &[true, false]);
    }

    #[test]
    fn seq_batch_rejects_empty_and_holes() {
        assert!(SeqBatch::new(&[(&[0, 0], &[false, false])]).is_err());
        assert!(SeqBatch::new(&[(&[2, 0, 3], &[true, false, true])]).is_err());
    }

    #[test]
    fn odd_width_rejected() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(EncoderParams::new(&mut store, "e", Group::Phi, 5, 2, 3, false, &mut rng).is_err());
    }

    #[test]
    fn single_token_gives_one_state_and_pools_to_it() {
        let (store, enc) = tiny(4);
        let batch = SeqBatch::new(&[(&[5, 0, 0], &[true, false, false])]).unwrap();
        let mut g = Graph::new();
        let states = birnn_forward(&mut g, &store, &enc, &batch);
        assert_eq!(states.len(), 1);
        let h1 = g.value(states[0]).clone();
        assert!(h1.data()[..2].iter().all(|v| *v != 0.0));
        assert!(h1.data()[2..].iter().all(|v| *v != 0.0));
        let (pooled, alpha) = attention_pool(&mut g, &store, &enc.attn, &states, batch.attn_mask()).unwrap();
        assert_eq!(g.value(alpha).data(), &[1.0]);
        assert_eq!(g.value(pooled).data(), h1.data());
    }

    #[test]
    fn zero_weights_and_embeddings_give_zero_states() {
        let (mut store, enc) = tiny(4);
        for id in enc.param_ids() {
            store.get_mut(id).value.fill(0.0);
        }
        let batch = SeqBatch::new(&[(&[2, 3, 4], &[true, true, true])]).unwrap();
        let mut g = Graph::new();
        for s in birnn_forward(&mut g, &store, &enc, &batch) {
            assert!(g.value(s).data().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn identical_states_pool_to_that_state() {
        let (store, enc) = tiny(4);
        let mut g = Graph::new();
        let h = Tensor::matrix(1, 4, vec![0.3, -0.2, 0.9, 0.1]).unwrap();
        let states: Vec<Var> = (0..3).map(|_| g.constant(h.clone())).collect();
        let (pooled, alpha) = attention_pool(&mut g, &store, &enc.attn, &states, &[true, true, true]).unwrap();
        for a in g.value(alpha).data() {
            assert!((a - 1.0 / 3.0).abs() < 1e-15);
        }
        for (p, e) in g.value(pooled).data().iter().zip(h.data()) {
            assert!((p - e).abs() < 1e-15);
        }
    }

    #[test]
    fn dominant_score_saturates_pooling() {
        // v = e1, W = I, b = 0: e_j = tanh(h_j[0]); scale v so the gap is 20
        let (mut store, enc) = tiny(2);
        store.get_mut(enc.attn.w).value = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        store.get_mut(enc.attn.b).value.fill(0.0);
        let gap = 20.0 / 1f64.tanh();
        store.get_mut(enc.attn.v).value = Tensor::matrix(2, 1, vec![gap, 0.0]).unwrap();
        let mut g = Graph::new();
        let rows = [[1.0, 0.5], [0.0, -0.7], [0.0, 0.2]];
        let states: Vec<Var> = rows
            .iter()
            .map(|r| g.constant(Tensor::matrix(1, 2, r.to_vec()).unwrap()))
            .collect();
        let (pooled, _) = attention_pool(&mut g, &store, &enc.attn, &states, &[true, true, true]).unwrap();
        for (p, e) in g.value(pooled).data().iter().zip(rows[0]) {
            assert!((p - e).abs() < 1e-8, "{p} vs {e}");
        }
    }

    #[test]
    fn stance_logits_cases() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let head = StanceHead::new(&mut store, "stance_head", 4, &mut rng);
        let mut g = Graph::new();
        let s = g.constant(Tensor::matrix(1, 4, vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let z = head.logits(&mut g, &store, s);
        let p = crate::tensor::softmax(g.value(z).data(), None).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);

        store.get_mut(head.w).value.fill(0.0);
        let mut g = Graph::new();
        let s = g.constant(Tensor::matrix(1, 4, vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let z = head.logits(&mut g, &store, s);
        assert_eq!(g.value(z).data(), &[0.0, 0.0, 0.0]);
        store.get_mut(head.b).value = Tensor::vector(vec![10.0, 0.0, 0.0]);
        let mut g = Graph::new();
        let s = g.constant(Tensor::matrix(1, 4, vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let z = head.logits(&mut g, &store, s);
        let p = crate::tensor::softmax(g.value(z).data(), None).unwrap();
        assert!(p[0] > 0.9999);
    }
}
