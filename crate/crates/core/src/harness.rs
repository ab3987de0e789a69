//! Evaluation of saved checkpoints, the ablation sweep, the augmentation
//! comparison and the cross-domain transfer matrix.

use std::fmt::Write as _;

use serde::Serialize;

use crate::augment::{Strategy, SynonymTable};
use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::metrics::{MetricSummary, Metrics};
use crate::model::Variant;
use crate::text::{EncodedExample, RawRecord};
use crate::trainer::{evaluate_model, load_stopwords, multi_run, prepare_records, train, Dataset};

/// Scores `records` with the checkpoint's model, encoding them with the
/// checkpoint's own vocabulary (unseen tokens map to UNK).
pub fn evaluate(checkpoint: &Checkpoint, records: &[RawRecord]) -> Result<Metrics> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let stopwords = load_stopwords(&checkpoint.config)?;
    let prepared = prepare_records(records, &checkpoint.vocab, checkpoint.config.seq_len, &stopwords);
    let model = checkpoint.model()?;
    let examples: Vec<&EncodedExample> = prepared.iter().map(|p| &p.example).collect();
    Ok(evaluate_model(&model, &examples)?.1)
}

fn pp(x: f64) -> f64 {
    100.0 * x
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub summary: MetricSummary,
    /// Mean accuracy of the variant minus that of the full model, in percentage points.
    pub delta_accuracy: f64,
    pub delta_recall: f64,
    pub delta_f1: f64,
    /// Mean of the accuracy and recall deltas.
    pub delta_comprehensive: f64,
    pub views_made: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<10} {:>8} {:>8} {:>8} {:>9} {:>9} {:>9} {:>9}\n",
            "variant", "acc", "recall", "f1", "d_acc", "d_recall", "d_f1", "d_comp"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<10} {:>8.2} {:>8.2} {:>8.2} {:>+9.2} {:>+9.2} {:>+9.2} {:>+9.2}",
                r.variant.name(),
                pp(r.summary.accuracy.mean),
                pp(r.summary.recall.mean),
                pp(r.summary.f1.mean),
                r.delta_accuracy,
                r.delta_recall,
                r.delta_f1,
                r.delta_comprehensive
            );
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("serializable") + "\n")
            .collect()
    }
}

/// Trains every variant with `n_runs` seeds under otherwise identical
/// configuration and reports metric deltas against the full model.
pub fn run_ablation(
    data: &Dataset,
    cfg: &TrainConfig,
    synonyms: &SynonymTable,
    n_runs: usize,
) -> Result<AblationTable> {
    let mut runs = Vec::new();
    for v in Variant::ALL {
        let run_cfg = TrainConfig {
            variant: v,
            ..cfg.clone()
        };
        log::info!("ablation: training {}", v.name());
        runs.push((v, multi_run(data, &run_cfg, synonyms, n_runs)?));
    }
    let full = runs[0].1.summary;
    let seeds = runs[0].1.seeds.clone();
    let rows = runs
        .into_iter()
        .map(|(variant, run)| {
            let s = run.summary;
            let delta_accuracy = pp(s.accuracy.mean - full.accuracy.mean);
            let delta_recall = pp(s.recall.mean - full.recall.mean);
            AblationRow {
                variant,
                summary: s,
                delta_accuracy,
                delta_recall,
                delta_f1: pp(s.f1.mean - full.f1.mean),
                delta_comprehensive: (delta_accuracy + delta_recall) / 2.0,
                views_made: run.views_made.iter().sum(),
            }
        })
        .collect();
    Ok(AblationTable { seeds, rows })
}

#[derive(Clone, Debug, Serialize)]
pub struct AugmentRow {
    pub strategy: Strategy,
    pub f1: f64,
    pub accuracy: f64,
    pub epochs_to_stop: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct AugmentTable {
    pub rows: Vec<AugmentRow>,
}

impl AugmentTable {
    pub fn render(&self) -> String {
        let mut out = format!("{:<10} {:>8} {:>8} {:>14}\n", "strategy", "f1", "acc", "epochs_to_stop");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<10} {:>8.2} {:>8.2} {:>14}",
                r.strategy.name(),
                pp(r.f1),
                pp(r.accuracy),
                r.epochs_to_stop
            );
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("serializable") + "\n")
            .collect()
    }
}

/// One training run per augmentation strategy.
pub fn run_augment_comparison(data: &Dataset, cfg: &TrainConfig, synonyms: &SynonymTable) -> Result<AugmentTable> {
    let mut rows = Vec::new();
    for strategy in Strategy::ALL {
        let run_cfg = TrainConfig {
            augment: strategy,
            ..cfg.clone()
        };
        log::info!("augmentation comparison: training with {}", strategy.name());
        let report = train(data, &run_cfg, synonyms)?.report;
        rows.push(AugmentRow {
            strategy,
            f1: report.test.f1,
            accuracy: report.test.accuracy,
            epochs_to_stop: report.joint_epochs_run,
        });
    }
    Ok(AugmentTable { rows })
}

/// `f1[a][b]`: model trained on domain `a`, scored on domain `b`'s test split.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransferMatrix {
    pub domains: Vec<String>,
    pub f1: Vec<Vec<f64>>,
}

impl TransferMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = format!("train\\test,{}\n", self.domains.join(","));
        for (a, row) in self.domains.iter().zip(&self.f1) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(out, "{a},{}", cells.join(","));
        }
        out
    }

    pub fn render(&self) -> String {
        let w = self.domains.iter().map(String::len).max().unwrap_or(0).max(10);
        let mut out = format!("{:<w$}", "train\\test");
        for d in &self.domains {
            let _ = write!(out, " {d:>w$}");
        }
        out.push('\n');
        for (a, row) in self.domains.iter().zip(&self.f1) {
            let _ = write!(out, "{a:<w$}");
            for v in row {
                let _ = write!(out, " {:>w$.2}", pp(*v));
            }
            out.push('\n');
        }
        out
    }
}

/// Scores each domain's checkpoint on each domain's held-out test records.
/// Both slices must list the same domains in the same order.
pub fn cross_domain_eval(
    checkpoints: &[(String, Checkpoint)],
    tests: &[(String, Vec<RawRecord>)],
) -> Result<TransferMatrix> {
    if checkpoints.is_empty() || checkpoints.len() != tests.len() {
        return Err(Error::InvalidArgument(format!(
            "need one checkpoint per test set, got {} and {}",
            checkpoints.len(),
            tests.len()
        )));
    }
    for ((a, _), (b, _)) in checkpoints.iter().zip(tests) {
        if a != b {
            return Err(Error::InvalidArgument(format!("domain order mismatch: '{a}' vs '{b}'")));
        }
    }
    let f1 = checkpoints
        .iter()
        .map(|(_, ck)| tests.iter().map(|(_, recs)| evaluate(ck, recs).map(|m| m.f1)).collect())
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(TransferMatrix {
        domains: checkpoints.iter().map(|(d, _)| d.clone()).collect(),
        f1,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct GridPoint {
    pub alphas: [f64; 3],
    pub best_val_loss: f64,
    pub val_f1: f64,
}

/// Trains once per loss-weight triple and returns the points sorted by best
/// validation loss, lowest first.
pub fn grid_search_alphas(
    data: &Dataset,
    cfg: &TrainConfig,
    synonyms: &SynonymTable,
    grid: &[[f64; 3]],
) -> Result<Vec<GridPoint>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty loss-weight grid".into()));
    }
    let mut points = Vec::with_capacity(grid.len());
    for &[alpha1, alpha2, alpha3] in grid {
        let run_cfg = TrainConfig {
            alpha1,
            alpha2,
            alpha3,
            ..cfg.clone()
        };
        let outcome = train(data, &run_cfg, synonyms)?;
        let val: Vec<&EncodedExample> = data.val.iter().map(|p| &p.example).collect();
        let model = outcome.checkpoint.model()?;
        let (_, m) = evaluate_model(&model, &val)?;
        points.push(GridPoint {
            alphas: [alpha1, alpha2, alpha3],
            best_val_loss: outcome.report.best_val_loss,
            val_f1: m.f1,
        });
    }
    points.sort_by(|a, b| a.best_val_loss.total_cmp(&b.best_val_loss));
    Ok(points)
}
