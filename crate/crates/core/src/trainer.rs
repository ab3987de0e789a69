//! Data preparation, the two-stage training loop with early stopping, and
//! repeated seeded runs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::augment::{derive_seed, Augmenter, SynonymTable};
use crate::autodiff::Graph;
use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::datagen::{builtin_synonyms, Splits};
use crate::encoders::SeqBatch;
use crate::error::{Error, Result};
use crate::losses::cross_entropy;
use crate::metrics::{MetricSummary, Metrics};
use crate::model::{Batch, Model, Stage};
use crate::optim::{lr_at, AdamW};
use crate::text::{clean_text, encode, tokenize, EncodedExample, RawRecord, Stopwords, Vocab};

/// Rows per forward pass when scoring a split.
const EVAL_CHUNK: usize = 128;

#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub tokens: Vec<String>,
    pub example: EncodedExample,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub vocab: Vocab,
    pub train: Vec<Prepared>,
    pub val: Vec<Prepared>,
    pub test: Vec<Prepared>,
}

pub fn load_stopwords(cfg: &TrainConfig) -> Result<Stopwords> {
    match &cfg.stopwords.0 {
        Some(p) => Stopwords::load(p.as_ref()),
        None => Ok(Stopwords::builtin().clone()),
    }
}

pub fn load_synonyms(cfg: &TrainConfig) -> Result<SynonymTable> {
    match &cfg.synonyms.0 {
        Some(p) => SynonymTable::load(p.as_ref()),
        None => Ok(builtin_synonyms()),
    }
}

pub fn tokenize_record(record: &RawRecord, stopwords: &Stopwords) -> Vec<String> {
    tokenize(&clean_text(&record.text, stopwords))
}

/// Encodes records with an existing vocabulary; unknown tokens become UNK.
pub fn prepare_records(records: &[RawRecord], vocab: &Vocab, seq_len: usize, stopwords: &Stopwords) -> Vec<Prepared> {
    records
        .iter()
        .map(|r| {
            let tokens = tokenize_record(r, stopwords);
            let example = encode(&tokens, vocab, seq_len, r.label, r.stance, &r.domain);
            Prepared { tokens, example }
        })
        .collect()
}

impl Dataset {
    /// Tokenizes every split and builds the vocabulary from the training split only.
    pub fn build(splits: &Splits, cfg: &TrainConfig) -> Result<Self> {
        for (name, part) in [
            ("train", &splits.train),
            ("validation", &splits.val),
            ("test", &splits.test),
        ] {
            if part.is_empty() {
                return Err(Error::EmptySplit(name));
            }
        }
        let stopwords = load_stopwords(cfg)?;
        let train_tokens: Vec<Vec<String>> = splits.train.iter().map(|r| tokenize_record(r, &stopwords)).collect();
        let vocab = Vocab::build(train_tokens.iter().map(Vec::as_slice), cfg.min_count);
        Ok(Self {
            train: prepare_records(&splits.train, &vocab, cfg.seq_len, &stopwords),
            val: prepare_records(&splits.val, &vocab, cfg.seq_len, &stopwords),
            test: prepare_records(&splits.test, &vocab, cfg.seq_len, &stopwords),
            vocab,
        })
    }
}

/// Early-stopping bookkeeping. `T` is whatever snapshot the caller keeps for
/// the best epoch.
#[derive(Clone, Debug)]
pub struct EarlyStopState<T> {
    pub patience: usize,
    pub min_delta: f64,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
    pub best_checkpoint: Option<T>,
}

impl<T> EarlyStopState<T> {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best_val_loss: f64::INFINITY,
            best_epoch: 0,
            epochs_since_improvement: 0,
            best_checkpoint: None,
        }
    }

    /// Records the validation loss after `epoch`, `elapsed` epochs after the
    /// previous observation. Returns true when training should stop.
    pub fn observe(&mut self, epoch: usize, val_loss: f64, elapsed: usize, snapshot: impl FnOnce() -> T) -> bool {
        if self.best_checkpoint.is_none() || val_loss < self.best_val_loss - self.min_delta {
            self.best_val_loss = val_loss;
            self.best_epoch = epoch;
            self.epochs_since_improvement = 0;
            self.best_checkpoint = Some(snapshot());
        } else {
            self.epochs_since_improvement += elapsed;
        }
        self.epochs_since_improvement >= self.patience
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub stage: &'static str,
    /// 1-based within the stage.
    pub epoch: usize,
    /// Learning rate at the last step of the epoch.
    pub lr: f64,
    pub loss_total: f64,
    pub loss_cl: Option<f64>,
    pub loss_isr: Option<f64>,
    pub loss_class: Option<f64>,
    pub loss_reg: Option<f64>,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub val_f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub seed: u64,
    pub variant: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub joint_epochs_run: usize,
    pub stopped_early: bool,
    /// Number of augmented view pairs produced.
    pub views_made: u64,
    pub test: Metrics,
}

impl TrainReport {
    /// One JSON object per epoch, then a summary object.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("serializable"));
            out.push('\n');
        }
        let summary = serde_json::json!({
            "summary": {
                "seed": self.seed,
                "variant": self.variant,
                "best_epoch": self.best_epoch,
                "best_val_loss": self.best_val_loss,
                "joint_epochs_run": self.joint_epochs_run,
                "stopped_early": self.stopped_early,
                "views_made": self.views_made,
                "test": self.test,
            }
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub report: TrainReport,
}

/// Mean veracity cross-entropy and metrics of `model` on `examples`.
pub fn evaluate_model(model: &Model, examples: &[&EncodedExample]) -> Result<(f64, Metrics)> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut loss_sum = 0.0;
    let mut predicted = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(EVAL_CHUNK) {
        let x = SeqBatch::from_examples(chunk)?;
        let mut g = Graph::new();
        let z = model.logits(&mut g, &x)?;
        let targets: Vec<Option<usize>> = chunk.iter().map(|e| Some(e.label.index())).collect();
        let ce = cross_entropy(&mut g, z, &targets)?.expect("every row labelled");
        loss_sum += g.value(ce).item() * chunk.len() as f64;
        let zv = g.value(z);
        predicted.extend((0..zv.rows()).map(|r| usize::from(zv.get2(r, 1) > zv.get2(r, 0))));
    }
    let gold: Vec<usize> = examples.iter().map(|e| e.label.index()).collect();
    Ok((
        loss_sum / examples.len() as f64,
        Metrics::from_predictions(&predicted, &gold)?,
    ))
}

fn shuffled_batches(n: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out: Vec<Vec<usize>> = idx.chunks(batch_size).map(<[usize]>::to_vec).collect();
    // a trailing single example cannot form a contrastive batch
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

#[derive(Default)]
struct Running {
    steps: usize,
    total: f64,
    cl: (f64, usize),
    isr: (f64, usize),
    class: (f64, usize),
    reg: (f64, usize),
}

impl Running {
    fn mean(p: (f64, usize)) -> Option<f64> {
        (p.1 > 0).then(|| p.0 / p.1 as f64)
    }
}

struct Trainer<'a> {
    data: &'a Dataset,
    cfg: &'a TrainConfig,
    augmenter: Augmenter,
    model: Model,
    opt: AdamW,
    views_made: u64,
    last_good: Checkpoint,
    global_epoch: u64,
}

impl Trainer<'_> {
    fn snapshot(&self) -> Checkpoint {
        Checkpoint::capture(self.cfg, &self.data.vocab, &self.model.store)
    }

    fn diverged(&self, epoch: usize, msg: String) -> Error {
        Error::Diverged {
            epoch,
            msg,
            last_good: Box::new(self.last_good.clone()),
        }
    }

    fn make_batch(&mut self, idx: &[usize], with_views: bool) -> Result<Batch> {
        let items: Vec<&Prepared> = idx.iter().map(|&i| &self.data.train[i]).collect();
        let examples: Vec<&EncodedExample> = items.iter().map(|p| &p.example).collect();
        let x = SeqBatch::from_examples(&examples)?;
        let views = if with_views {
            let (mut a, mut b) = (Vec::with_capacity(idx.len()), Vec::with_capacity(idx.len()));
            for (&i, p) in idx.iter().zip(&items) {
                let (v1, v2) = self.augmenter.views_for(&p.tokens, self.global_epoch, i as u64)?;
                self.views_made += 1;
                let e = &p.example;
                a.push(encode(
                    &v1,
                    &self.data.vocab,
                    self.cfg.seq_len,
                    e.label,
                    e.stance,
                    &e.domain,
                ));
                b.push(encode(
                    &v2,
                    &self.data.vocab,
                    self.cfg.seq_len,
                    e.label,
                    e.stance,
                    &e.domain,
                ));
            }
            let a: Vec<&EncodedExample> = a.iter().collect();
            let b: Vec<&EncodedExample> = b.iter().collect();
            Some((SeqBatch::from_examples(&a)?, SeqBatch::from_examples(&b)?))
        } else {
            None
        };
        Ok(Batch {
            x,
            views,
            labels: examples.iter().map(|e| e.label.index()).collect(),
            stances: examples.iter().map(|e| e.stance.map(|s| s.class_index())).collect(),
        })
    }

    /// One pass over the training split. `step` is the stage-local step counter.
    fn run_epoch(
        &mut self,
        stage: Stage,
        epoch: usize,
        step: &mut usize,
        total_steps: usize,
    ) -> Result<(f64, Running)> {
        let weights = self.model.config.variant.effective_weights(&self.cfg.weights());
        let with_views = self.model.config.variant.uses_views() && (stage == Stage::Pretrain || weights.alpha1 != 0.0);
        let batches = shuffled_batches(
            self.data.train.len(),
            self.cfg.batch_size,
            derive_seed(self.cfg.seed, &[2, self.global_epoch]),
        );
        let mut run = Running::default();
        let mut lr = 0.0;
        for idx in batches {
            let batch = self.make_batch(&idx, with_views)?;
            let mut g = Graph::new();
            let fwd = self.model.forward(&mut g, &batch, &weights, stage)?;
            let total = g.value(fwd.total).item();
            if !total.is_finite() {
                return Err(self.diverged(epoch, format!("non-finite loss {total}")));
            }
            self.model.store.zero_grad();
            g.backward(fwd.total, &mut self.model.store)?;
            lr = lr_at(*step, total_steps, self.cfg.warmup_steps, self.cfg.lr)?;
            match self.opt.step(&mut self.model.store, stage.groups(), lr) {
                Ok(()) => {}
                Err(e @ Error::NonFiniteGrad(_)) => return Err(self.diverged(epoch, e.to_string())),
                Err(e) => return Err(e),
            }
            *step += 1;
            run.steps += 1;
            run.total += total;
            let add = |acc: &mut (f64, usize), v: Option<crate::autodiff::Var>| {
                if let Some(v) = v {
                    acc.0 += g.value(v).item();
                    acc.1 += 1;
                }
            };
            add(&mut run.cl, fwd.terms.cl);
            add(&mut run.isr, fwd.terms.isr);
            add(&mut run.class, fwd.terms.class);
            add(&mut run.reg, fwd.terms.reg);
        }
        self.global_epoch += 1;
        Ok((lr, run))
    }
}

fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    shuffled_batches(n, batch_size, 0).len()
}

/// Trains one model: optional contrastive pretraining of the contrastive
/// encoder, then joint training with early stopping on validation loss.
/// Returns the best-validation checkpoint.
pub fn train(data: &Dataset, cfg: &TrainConfig, synonyms: &SynonymTable) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.len() < 2 {
        return Err(Error::BatchTooSmall(data.train.len()));
    }
    if data.val.is_empty() {
        return Err(Error::EmptySplit("validation"));
    }
    if data.test.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0]));
    let model = Model::new(cfg.model_config(data.vocab.len()), &mut init_rng)?;
    let augmenter = Augmenter::new(
        cfg.augment_config(),
        synonyms.clone(),
        data.vocab.content_tokens().to_vec(),
    )?;
    let opt = AdamW::new(&model.store, cfg.weight_decay);
    let last_good = Checkpoint::capture(cfg, &data.vocab, &model.store);
    let mut t = Trainer {
        data,
        cfg,
        augmenter,
        model,
        opt,
        views_made: 0,
        last_good,
        global_epoch: 0,
    };
    let spe = steps_per_epoch(data.train.len(), cfg.batch_size);
    let mut records = Vec::new();

    let pretrain = cfg.stage1_epochs > 0 && cfg.variant.uses_views();
    if pretrain {
        let total = cfg.stage1_epochs * spe;
        let mut step = 0;
        for epoch in 1..=cfg.stage1_epochs {
            let (lr, run) = t.run_epoch(Stage::Pretrain, epoch, &mut step, total)?;
            t.last_good = t.snapshot();
            log::info!("pretrain epoch {epoch}: loss {:.5}", run.total / run.steps as f64);
            records.push(EpochRecord {
                stage: "pretrain",
                epoch,
                lr,
                loss_total: run.total / run.steps as f64,
                loss_cl: Running::mean(run.cl),
                loss_isr: None,
                loss_class: None,
                loss_reg: Running::mean(run.reg),
                val_loss: None,
                val_accuracy: None,
                val_f1: None,
            });
        }
    }

    let val: Vec<&EncodedExample> = data.val.iter().map(|p| &p.example).collect();
    let total = cfg.max_epochs * spe;
    let mut step = 0;
    let mut stopper: EarlyStopState<Checkpoint> = EarlyStopState::new(cfg.patience, cfg.min_delta);
    let mut last_eval = 0;
    let mut stopped_early = false;
    let mut joint_epochs_run = 0;
    for epoch in 1..=cfg.max_epochs {
        let (lr, run) = t.run_epoch(Stage::Joint, epoch, &mut step, total)?;
        joint_epochs_run = epoch;
        let mut record = EpochRecord {
            stage: "joint",
            epoch,
            lr,
            loss_total: run.total / run.steps as f64,
            loss_cl: Running::mean(run.cl),
            loss_isr: Running::mean(run.isr),
            loss_class: Running::mean(run.class),
            loss_reg: Running::mean(run.reg),
            val_loss: None,
            val_accuracy: None,
            val_f1: None,
        };
        let evaluate_now = epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs;
        let mut stop = false;
        if evaluate_now {
            let (val_loss, m) = evaluate_model(&t.model, &val)?;
            if !val_loss.is_finite() {
                return Err(t.diverged(epoch, format!("non-finite validation loss {val_loss}")));
            }
            record.val_loss = Some(val_loss);
            record.val_accuracy = Some(m.accuracy);
            record.val_f1 = Some(m.f1);
            log::info!(
                "joint epoch {epoch}: loss {:.5} val_loss {val_loss:.5} val_f1 {:.4}",
                record.loss_total,
                m.f1
            );
            let elapsed = epoch - last_eval;
            last_eval = epoch;
            let snap = || t.snapshot();
            stop = stopper.observe(epoch, val_loss, elapsed, snap);
        }
        t.last_good = t.snapshot();
        records.push(record);
        if stop {
            stopped_early = true;
            break;
        }
    }

    let best = stopper.best_checkpoint.take().expect("at least one evaluation");
    best.restore_into(&mut t.model.store)?;
    let test: Vec<&EncodedExample> = data.test.iter().map(|p| &p.example).collect();
    let (_, test_metrics) = evaluate_model(&t.model, &test)?;
    let report = TrainReport {
        seed: cfg.seed,
        variant: cfg.variant.to_string(),
        epochs: records,
        best_epoch: stopper.best_epoch,
        best_val_loss: stopper.best_val_loss,
        joint_epochs_run,
        stopped_early,
        views_made: t.views_made,
        test: test_metrics,
    };
    Ok(TrainOutcome {
        checkpoint: best,
        report,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct MultiRun {
    pub seeds: Vec<u64>,
    pub test: Vec<Metrics>,
    pub epochs_to_stop: Vec<usize>,
    pub views_made: Vec<u64>,
    pub summary: MetricSummary,
}

/// `n_runs` trainings with seeds `cfg.seed`, `cfg.seed + 1`, … on the same data.
pub fn multi_run(data: &Dataset, cfg: &TrainConfig, synonyms: &SynonymTable, n_runs: usize) -> Result<MultiRun> {
    if n_runs == 0 {
        return Err(Error::InvalidArgument("n_runs must be at least 1".into()));
    }
    let mut out = MultiRun {
        seeds: Vec::new(),
        test: Vec::new(),
        epochs_to_stop: Vec::new(),
        views_made: Vec::new(),
        summary: MetricSummary::default(),
    };
    for k in 0..n_runs as u64 {
        let run_cfg = TrainConfig {
            seed: cfg.seed.wrapping_add(k),
            ..cfg.clone()
        };
        let outcome = train(data, &run_cfg, synonyms)?;
        out.seeds.push(run_cfg.seed);
        out.test.push(outcome.report.test);
        out.epochs_to_stop.push(outcome.report.joint_epochs_run);
        out.views_made.push(outcome.report.views_made);
    }
    out.summary = MetricSummary::of(&out.test);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stop_on_worsening_sequence() {
        let mut s: EarlyStopState<usize> = EarlyStopState::new(5, 1e-4);
        let losses = [1.0, 0.8, 0.7, 0.71, 0.72, 0.73, 0.74, 0.75, 0.76];
        let mut stopped_at = None;
        for (i, &l) in losses.iter().enumerate() {
            let epoch = i + 1;
            if s.observe(epoch, l, 1, || epoch) {
                stopped_at = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped_at, Some(3 + 5));
        assert_eq!(s.best_epoch, 3);
        assert_eq!(s.best_checkpoint, Some(3));
    }

    #[test]
    fn tiny_improvements_do_not_count() {
        let mut s: EarlyStopState<usize> = EarlyStopState::new(2, 1e-4);
        assert!(!s.observe(1, 1.0, 1, || 1));
        assert!(!s.observe(2, 1.0 - 5e-5, 1, || 2));
        assert!(s.observe(3, 1.0 - 9e-5, 1, || 3));
        assert_eq!(s.best_checkpoint, Some(1));
    }

    #[test]
    fn batches_cover_everything_without_singletons() {
        for n in [2, 5, 33, 64, 65] {
            let b = shuffled_batches(n, 32, 3);
            let mut all: Vec<usize> = b.concat();
            all.sort();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
            assert!(b.iter().all(|x| x.len() >= 2));
        }
        assert_eq!(shuffled_batches(10, 4, 1), shuffled_batches(10, 4, 1));
    }
}
