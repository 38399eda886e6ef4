//! Adaptive train-and-prune loop, best-epoch reporting, and heatmap binning
//! of checkpoint scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::importance::{keep_count, score_features, ImportanceReport, Metric, MetricInputs, ScoreConfig, ScoringContext};
use crate::matrix::Matrix;
use crate::models::{best_by_val, EpochRecord, Model, ModelSpec, Trainer};
use crate::optim::AdamConfig;

/// Active-feature bitvector `b`; at least one feature is always active.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureMask {
    bits: Vec<bool>,
}

impl FeatureMask {
    pub fn all(m: usize) -> Self {
        Self { bits: vec![true; m] }
    }

    pub fn from_bits(bits: Vec<bool>) -> Result<Self> {
        if !bits.iter().any(|&b| b) {
            return Err(Error::EmptyFeatureSet);
        }
        Ok(Self { bits })
    }

    pub fn from_indices(m: usize, active: &[usize]) -> Result<Self> {
        let mut bits = vec![false; m];
        for &i in active {
            *bits.get_mut(i).ok_or(Error::OutOfRange { index: i, len: m })? = true;
        }
        Self::from_bits(bits)
    }

    /// Total number of features (active or not).
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn is_active(&self, m: usize) -> bool {
        self.bits.get(m).copied().unwrap_or(false)
    }

    pub fn active_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&m| self.bits[m]).collect()
    }

    pub fn ratio(&self) -> f64 {
        self.active_count() as f64 / self.bits.len() as f64
    }

    /// Keeps the `keep` best of `ids` by `score` (descending), lower index
    /// first on ties.
    pub(crate) fn keep_top(&self, ids: &[usize], score: impl Fn(usize) -> f64, keep: usize) -> FeatureMask {
        let mut ranked = ids.to_vec();
        ranked.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
        let mut bits = vec![false; self.bits.len()];
        for &m in ranked.iter().take(keep.max(1)) {
            bits[m] = true;
        }
        FeatureMask { bits }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub burn_in: usize,
    pub interval: usize,
    /// Fraction `r` of active features kept at each checkpoint.
    pub keep_ratio: f64,
    pub max_epochs: usize,
    pub min_active: usize,
    /// Literal `δ̂_m < δ^(r)` pruning, under which threshold ties survive.
    /// Off by default: exactly `⌈r·|active|⌉` features are kept.
    pub strict_threshold: bool,
    /// When false, checkpoints score features but never prune.
    pub prune: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            burn_in: 50,
            interval: 50,
            keep_ratio: 0.5,
            max_epochs: 400,
            min_active: 1,
            strict_threshold: false,
            prune: true,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in == 0 || self.interval == 0 {
            return Err(Error::InvalidArgument("burn_in and interval must be >= 1".into()));
        }
        if !(self.keep_ratio > 0.0 && self.keep_ratio <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "keep_ratio {} outside (0, 1]",
                self.keep_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// 1-based checkpoint number.
    pub index: usize,
    /// Epoch after which scoring happened.
    pub epoch: usize,
    pub report: ImportanceReport,
    pub mask_after: FeatureMask,
    pub pruned: Vec<usize>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionTrace {
    pub n_feats: usize,
    pub epochs: Vec<EpochRecord>,
    pub checkpoints: Vec<Checkpoint>,
}

#[derive(Debug, Clone)]
pub struct AdaptiveOutcome {
    pub trace: SelectionTrace,
    pub model: Model,
    pub mask: FeatureMask,
    /// Scores from the last checkpoint, if any checkpoint fired.
    pub scores: Option<ImportanceReport>,
    /// Pruned feature matrix `X̂`.
    pub features: Matrix,
}

/// Nearest-rank `r`-quantile: element `⌊(1−r)·n⌋` of the ascending scores.
pub fn quantile_threshold(scores: &[f64], r: f64) -> f64 {
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    let idx = (((1.0 - r) * s.len() as f64 + 1e-9).floor() as usize).min(s.len() - 1);
    s[idx]
}

/// Decides the post-checkpoint mask from the active scores.
fn prune_mask(
    mask: &FeatureMask,
    scores: &[(usize, f64)],
    cfg: &SelectionConfig,
) -> (FeatureMask, Option<String>) {
    let ids: Vec<usize> = scores.iter().map(|&(m, _)| m).collect();
    let values: Vec<f64> = scores.iter().map(|&(_, v)| v).collect();
    let score_of = |m: usize| scores[ids.binary_search(&m).expect("scored")].1;
    let floor = cfg.min_active.max(1).min(ids.len());

    let target = if cfg.strict_threshold {
        let thr = quantile_threshold(&values, cfg.keep_ratio);
        values.iter().filter(|&&v| v >= thr).count()
    } else {
        keep_count(cfg.keep_ratio, ids.len())
    };
    let mut warning = None;
    let keep = if target < floor {
        warning = Some(format!(
            "pruning would leave {target} features; keeping the best {floor}"
        ));
        floor
    } else {
        target
    };
    (mask.keep_top(&ids, score_of, keep), warning)
}

/// Trains `spec` while periodically scoring and pruning features.
///
/// Each epoch takes one Adam step on the masked training loss and increments
/// a counter starting at 1. When the counter exceeds `max(interval, burn_in)`
/// it resets to 1, every active feature is scored with `metric`, and the
/// features below the `r`-quantile are dropped from the model (their
/// first-layer rows are deleted; the remaining weights continue training).
/// The loop stops at `max_epochs` or once no more than `min_active`
/// features remain.
pub fn run_adaptive(
    spec: ModelSpec,
    graph: &Graph,
    cfg: &SelectionConfig,
    adam: AdamConfig,
    score_cfg: &ScoreConfig,
    metric: Metric,
    seed: u64,
) -> Result<AdaptiveOutcome> {
    cfg.validate()?;
    let mut mask = FeatureMask::all(graph.n_feats());
    let mut trainer = Trainer::new(spec, graph, &mask, seed, adam)?;
    let eval_rows = graph.split_indices(score_cfg.eval_split);
    let gate = cfg.interval.max(cfg.burn_in);

    let mut epochs = Vec::with_capacity(cfg.max_epochs);
    let mut checkpoints = Vec::new();
    let mut counter = 1usize;
    while trainer.epochs_done() < cfg.max_epochs && mask.active_count() > cfg.min_active {
        epochs.push(trainer.step()?);
        counter += 1;
        if counter <= gate {
            continue;
        }
        counter = 1;

        let index = checkpoints.len() + 1;
        let active = trainer.active().to_vec();
        let report = {
            let ctx = ScoringContext {
                model: trainer.model(),
                prop: trainer.propagation(),
                x_active: trainer.active_features(),
                active: &active,
                labels: graph.labels(),
                eval_rows: &eval_rows,
            };
            let inputs = MetricInputs {
                graph,
                scoring: Some(ctx),
                active: &active,
                seed,
                checkpoint: index,
            };
            score_features(metric, &inputs, score_cfg)?
        };

        let (next, warning) = if cfg.prune {
            prune_mask(&mask, &report.active_scores(), cfg)
        } else {
            (mask.clone(), None)
        };
        let pruned: Vec<usize> = active.iter().copied().filter(|&m| !next.is_active(m)).collect();
        if !pruned.is_empty() {
            trainer.restrict(&next)?;
        }
        mask = next;
        checkpoints.push(Checkpoint {
            index,
            epoch: trainer.epochs_done(),
            report,
            mask_after: mask.clone(),
            pruned,
            warning,
        });
    }

    let scores = checkpoints.last().map(|c| c.report.clone());
    let features = trainer.active_features().clone();
    Ok(AdaptiveOutcome {
        trace: SelectionTrace {
            n_feats: graph.n_feats(),
            epochs,
            checkpoints,
        },
        model: trainer.into_model(),
        mask,
        scores,
        features,
    })
}

/// Best validation epoch within one between-checkpoint interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalBest {
    pub first_epoch: usize,
    pub last_epoch: usize,
    pub active_count: usize,
    /// Active features as a percentage of all features.
    pub active_percent: f64,
    pub best_epoch: usize,
    pub val_acc: f64,
    pub test_acc: f64,
}

/// Splits the epoch trace after each checkpoint epoch and reports, per
/// interval, the test accuracy at the highest validation accuracy (earliest
/// epoch on ties).
pub fn best_epoch_report(trace: &SelectionTrace) -> Vec<IntervalBest> {
    let cuts: Vec<usize> = trace.checkpoints.iter().map(|c| c.epoch).collect();
    best_epoch_by_cuts(&trace.epochs, &cuts, trace.n_feats)
}

pub fn best_epoch_by_cuts(epochs: &[EpochRecord], cuts: &[usize], n_feats: usize) -> Vec<IntervalBest> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut bounds: Vec<usize> = cuts
        .iter()
        .filter_map(|&e| epochs.iter().position(|r| r.epoch == e).map(|p| p + 1))
        .collect();
    bounds.push(epochs.len());
    for end in bounds {
        if end <= start {
            continue;
        }
        let seg = &epochs[start..end];
        if let Some(best) = best_by_val(seg) {
            out.push(IntervalBest {
                first_epoch: seg[0].epoch,
                last_epoch: seg[seg.len() - 1].epoch,
                active_count: seg[0].active_count,
                active_percent: 100.0 * seg[0].active_count as f64 / n_feats.max(1) as f64,
                best_epoch: best.epoch,
                val_acc: best.val_acc,
                test_acc: best.test_acc,
            });
        }
        start = end;
    }
    out
}

/// `n_bins × n_checkpoints` matrix of mean scores. Features are ordered by
/// their final-checkpoint score (ascending, lower index first on ties) and
/// split into contiguous bins whose sizes differ by at most one; row 0 is the
/// lowest-scoring bin. A feature that stops being scored keeps its last
/// score in later columns. Features never scored are left out.
pub fn heatmap_bins(reports: &[ImportanceReport], n_bins: usize) -> Result<Matrix> {
    let Some(first) = reports.first() else {
        return Err(Error::InvalidArgument("heatmap needs at least one checkpoint".into()));
    };
    let m = first.scores.len();
    if reports.iter().any(|r| r.scores.len() != m) {
        return Err(Error::InvalidArgument("checkpoints cover different feature sets".into()));
    }
    if n_bins == 0 {
        return Err(Error::InvalidArgument("n_bins must be >= 1".into()));
    }
    // carry-forward score table, one row per checkpoint
    let mut table: Vec<Vec<Option<f64>>> = Vec::with_capacity(reports.len());
    let mut last = vec![None; m];
    for r in reports {
        for (f, s) in r.scores.iter().enumerate() {
            if s.is_some() {
                last[f] = *s;
            }
        }
        table.push(last.clone());
    }
    let universe: Vec<usize> = (0..m).filter(|&f| last[f].is_some()).collect();
    if universe.len() < n_bins {
        return Err(Error::InvalidArgument(format!(
            "{} features cannot fill {n_bins} bins",
            universe.len()
        )));
    }
    let final_scores = table.last().expect("nonempty");
    let mut order = universe;
    order.sort_by(|&a, &b| {
        final_scores[a]
            .unwrap()
            .total_cmp(&final_scores[b].unwrap())
            .then(a.cmp(&b))
    });

    let n = order.len();
    let (base, extra) = (n / n_bins, n % n_bins);
    let mut out = Matrix::zeros(n_bins, reports.len());
    let mut start = 0;
    for bin in 0..n_bins {
        let size = base + usize::from(bin < extra);
        let members = &order[start..start + size];
        for (c, row) in table.iter().enumerate() {
            // a feature first scored after checkpoint c has no value yet there
            let vals: Vec<f64> = members.iter().filter_map(|&f| row[f]).collect();
            out[(bin, c)] = if vals.is_empty() {
                f64::NAN
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            };
        }
        start += size;
    }
    Ok(out)
}

impl SelectionTrace {
    pub fn reports(&self) -> Vec<ImportanceReport> {
        self.checkpoints.iter().map(|c| c.report.clone()).collect()
    }

    /// `epoch,loss,val_acc,test_acc,active_count`
    pub fn write_epochs_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "loss", "val_acc", "test_acc", "active_count"])?;
        for e in &self.epochs {
            out.write_record([
                e.epoch.to_string(),
                e.loss.to_string(),
                e.val_acc.to_string(),
                e.test_acc.to_string(),
                e.active_count.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("epochs.csv", e))?;
        Ok(())
    }

    /// `checkpoint,feature,score,pruned_flag` for every feature scored at
    /// each checkpoint.
    pub fn write_checkpoints_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["checkpoint", "feature", "score", "pruned_flag"])?;
        for c in &self.checkpoints {
            for (f, s) in c.report.active_scores() {
                let pruned = c.pruned.binary_search(&f).is_ok();
                out.write_record([
                    c.index.to_string(),
                    f.to_string(),
                    s.to_string(),
                    u8::from(pruned).to_string(),
                ])?;
            }
        }
        out.flush().map_err(|e| Error::io("checkpoints.csv", e))?;
        Ok(())
    }
}

/// `bin,checkpoint,mean_score`, checkpoints numbered from 1.
pub fn write_heatmap_csv<W: std::io::Write>(heatmap: &Matrix, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["bin", "checkpoint", "mean_score"])?;
    for b in 0..heatmap.rows() {
        for c in 0..heatmap.cols() {
            out.write_record([b.to_string(), (c + 1).to_string(), heatmap[(b, c)].to_string()])?;
        }
    }
    out.flush().map_err(|e| Error::io("heatmap.csv", e))?;
    Ok(())
}

/// Percent of features kept after `prunes` halvings-by-`r` of `m` features.
pub fn scheduled_percent(m: usize, r: f64, prunes: usize) -> f64 {
    let mut active = m;
    for _ in 0..prunes {
        active = keep_count(r, active);
    }
    100.0 * active as f64 / m as f64
}
