//! Feature importance scores: node feature permutation tests (NPT) and the
//! baselines they are compared against.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csr::CsrMatrix;
use crate::error::{Error, Result};
use crate::graph::{normalize, Graph, NormKind, Split};
use crate::matrix::Matrix;
use crate::metrics::accuracy;
use crate::models::Model;
use crate::perturb::{permute_column_in_place, sample_permutation};
use crate::rng::{self, tag};
use crate::selection::FeatureMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "npt")]
    Npt,
    #[serde(rename = "npt_mask")]
    NptMask,
    #[serde(rename = "mi")]
    Mi,
    #[serde(rename = "tfi")]
    Tfi,
    #[serde(rename = "h_attr")]
    HAttr,
    #[serde(rename = "h_euc")]
    HEuc,
    #[serde(rename = "h_ge")]
    HGe,
    #[serde(rename = "random")]
    Random,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::Npt,
        Metric::NptMask,
        Metric::Mi,
        Metric::Tfi,
        Metric::HAttr,
        Metric::HEuc,
        Metric::HGe,
        Metric::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Npt => "npt",
            Metric::NptMask => "npt_mask",
            Metric::Mi => "mi",
            Metric::Tfi => "tfi",
            Metric::HAttr => "h_attr",
            Metric::HEuc => "h_euc",
            Metric::HGe => "h_ge",
            Metric::Random => "random",
        }
    }

    /// Whether the score depends on a trained model.
    pub fn needs_model(self) -> bool {
        matches!(self, Metric::Npt | Metric::NptMask)
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == key)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown metric {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    /// Shuffles per feature for NPT.
    pub k_shuffles: usize,
    /// Quantile bins for MI and TFI.
    pub n_bins: usize,
    /// Low-pass filter passes for TFI.
    pub filter_passes: usize,
    pub eval_split: Split,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            k_shuffles: 10,
            n_bins: 16,
            filter_passes: 2,
            eval_split: Split::Val,
        }
    }
}

/// Per-feature scores over the full feature universe; `None` = not scored.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceReport {
    pub metric: Metric,
    pub scores: Vec<Option<f64>>,
    pub k_shuffles: usize,
    pub eval_split: Split,
    pub checkpoint: usize,
}

impl ImportanceReport {
    /// Scores of active features in ascending feature order.
    pub fn active_scores(&self) -> Vec<(usize, f64)> {
        self.scores
            .iter()
            .enumerate()
            .filter_map(|(m, s)| s.map(|v| (m, v)))
            .collect()
    }

    /// Dense score vector; unscored features get `fill`.
    pub fn dense(&self, fill: f64) -> Vec<f64> {
        self.scores.iter().map(|s| s.unwrap_or(fill)).collect()
    }

    /// CSV with columns `feature_index,metric,score,active,checkpoint`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        write_reports_csv(std::slice::from_ref(self), w)
    }
}

pub fn write_reports_csv<W: std::io::Write>(reports: &[ImportanceReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["feature_index", "metric", "score", "active", "checkpoint"])?;
    for r in reports {
        for (m, s) in r.scores.iter().enumerate() {
            out.write_record([
                m.to_string(),
                r.metric.to_string(),
                s.map_or_else(String::new, |v| v.to_string()),
                u8::from(s.is_some()).to_string(),
                r.checkpoint.to_string(),
            ])?;
        }
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Everything a model-based score reads: the model, its propagation operator,
/// the active feature matrix `X̂` and the evaluation nodes.
#[derive(Clone, Copy)]
pub struct ScoringContext<'a> {
    pub model: &'a Model,
    pub prop: Option<&'a CsrMatrix>,
    /// `X̂`: columns are the active features, in `active` order.
    pub x_active: &'a Matrix,
    /// Feature ids of the columns of `x_active`.
    pub active: &'a [usize],
    pub labels: &'a [usize],
    pub eval_rows: &'a [usize],
}

impl ScoringContext<'_> {
    fn position(&self, feature: usize) -> Result<usize> {
        self.active
            .iter()
            .position(|&f| f == feature)
            .ok_or(Error::InactiveFeature(feature))
    }

    fn check(&self) -> Result<()> {
        if self.eval_rows.is_empty() {
            return Err(Error::EmptyMask("evaluation split"));
        }
        Ok(())
    }

    /// `Acc(y_eval, f(X̂))`
    pub fn baseline_accuracy(&self) -> Result<f64> {
        self.check()?;
        self.accuracy_of(self.x_active)
    }

    fn accuracy_of(&self, x: &Matrix) -> Result<f64> {
        let logits = self.model.logits(x, self.prop)?;
        accuracy(&logits, self.labels, self.eval_rows)
    }
}

/// NPT score of one feature with an explicit RNG:
/// `(1/K) Σ_k [Acc(f(X̂)) − Acc(f(X̃^{(m),k}))]`.
pub fn npt_score<R: Rng + ?Sized>(
    ctx: &ScoringContext<'_>,
    feature: usize,
    k_shuffles: usize,
    rng: &mut R,
) -> Result<f64> {
    let base = ctx.baseline_accuracy()?;
    npt_with_baseline(ctx, base, feature, k_shuffles, |_| sample_permutation(ctx.x_active.rows(), rng))
}

fn npt_with_baseline(
    ctx: &ScoringContext<'_>,
    base: f64,
    feature: usize,
    k_shuffles: usize,
    mut perm: impl FnMut(usize) -> crate::perturb::Permutation,
) -> Result<f64> {
    if k_shuffles == 0 {
        return Err(Error::InvalidArgument("K must be >= 1".into()));
    }
    let col = ctx.position(feature)?;
    let mut x = ctx.x_active.clone();
    let mut total = 0.0;
    for k in 0..k_shuffles {
        permute_column_in_place(ctx.x_active, &mut x, col, &perm(k));
        total += base - ctx.accuracy_of(&x)?;
    }
    Ok(total / k_shuffles as f64)
}

/// NPT scores for every active feature. Feature `m`'s `k`-th shuffle draws
/// from its own sub-stream `(seed, checkpoint, m, k)`, so results do not
/// depend on thread scheduling. The baseline accuracy is computed once.
pub fn npt_scores(
    ctx: &ScoringContext<'_>,
    k_shuffles: usize,
    seed: u64,
    checkpoint: usize,
) -> Result<Vec<f64>> {
    let base = ctx.baseline_accuracy()?;
    let n = ctx.x_active.rows();
    ctx.active
        .par_iter()
        .map(|&m| {
            npt_with_baseline(ctx, base, m, k_shuffles, |k| {
                let mut r = rng::substream(seed, &[tag::PERMUTE, checkpoint as u64, m as u64, k as u64]);
                sample_permutation(n, &mut r)
            })
        })
        .collect()
}

/// Accuracy drop when feature `m` is set to zero for every node.
pub fn npt_mask_score(ctx: &ScoringContext<'_>, feature: usize) -> Result<f64> {
    let base = ctx.baseline_accuracy()?;
    mask_with_baseline(ctx, base, feature)
}

fn mask_with_baseline(ctx: &ScoringContext<'_>, base: f64, feature: usize) -> Result<f64> {
    let col = ctx.position(feature)?;
    let mut x = ctx.x_active.clone();
    for i in 0..x.rows() {
        x[(i, col)] = 0.0;
    }
    Ok(base - ctx.accuracy_of(&x)?)
}

pub fn npt_mask_scores(ctx: &ScoringContext<'_>) -> Result<Vec<f64>> {
    let base = ctx.baseline_accuracy()?;
    ctx.active
        .par_iter()
        .map(|&m| mask_with_baseline(ctx, base, m))
        .collect()
}

/// Equal-frequency bin index of every value. Bin edges are the values at
/// sorted positions `⌊b·n/n_bins⌋`, `b = 1..n_bins`; repeated edges merge.
pub fn quantile_bins(values: &[f64], n_bins: usize) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut edges: Vec<f64> = (1..n_bins).map(|b| sorted[b * n / n_bins]).collect();
    edges.dedup();
    values
        .iter()
        .map(|v| edges.partition_point(|e| e < v))
        .collect()
}

/// Plug-in mutual information (nats) between two discrete sequences.
pub fn discrete_mi(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    if n == 0 {
        return 0.0;
    }
    let na = a.iter().max().map_or(0, |m| m + 1);
    let nb = b.iter().max().map_or(0, |m| m + 1);
    let mut joint = vec![0usize; na * nb];
    let mut pa = vec![0usize; na];
    let mut pb = vec![0usize; nb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * nb + y] += 1;
        pa[x] += 1;
        pb[y] += 1;
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for x in 0..na {
        for y in 0..nb {
            let c = joint[x * nb + y];
            if c == 0 {
                continue;
            }
            let pxy = c as f64 / nf;
            mi += pxy * (c as f64 * nf / (pa[x] as f64 * pb[y] as f64)).ln();
        }
    }
    mi.max(0.0)
}

/// MI between a quantile-binned feature column and the labels, over `rows`.
pub fn mi_score(column: &[f64], labels: &[usize], rows: &[usize], n_bins: usize) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::EmptyMask("mi_score"));
    }
    if n_bins < 2 {
        return Err(Error::InvalidArgument("n_bins must be >= 2".into()));
    }
    let vals: Vec<f64> = rows.iter().map(|&i| column[i]).collect();
    let ys: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
    Ok(discrete_mi(&quantile_bins(&vals, n_bins), &ys))
}

pub fn mi_scores(
    x: &Matrix,
    features: &[usize],
    labels: &[usize],
    rows: &[usize],
    n_bins: usize,
) -> Result<Vec<f64>> {
    features
        .par_iter()
        .map(|&m| mi_score(&x.column(m), labels, rows, n_bins))
        .collect()
}

/// `(Ã_rw)^passes · X` restricted to `features`.
pub fn low_pass(x: &Matrix, adjacency: &CsrMatrix, features: &[usize], passes: usize) -> Result<Matrix> {
    let rw = normalize(adjacency, NormKind::RandomWalk)?.matrix;
    let mut f = x.select_columns(features);
    for _ in 0..passes {
        f = rw.matmul_dense(&f)?;
    }
    Ok(f)
}

/// MI between labels and low-pass-filtered features.
pub fn tfi_scores(
    x: &Matrix,
    adjacency: &CsrMatrix,
    features: &[usize],
    labels: &[usize],
    rows: &[usize],
    n_bins: usize,
    passes: usize,
) -> Result<Vec<f64>> {
    let filtered = low_pass(x, adjacency, features, passes)?;
    let cols: Vec<usize> = (0..features.len()).collect();
    mi_scores(&filtered, &cols, labels, rows, n_bins)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Homophily {
    Attr,
    Euc,
    Ge,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Per-feature edge smoothness scores over the undirected edges of `graph`.
///
/// - `Attr`: fraction of edges whose endpoints fall on the same side of the
///   feature median (`sign(x_i − med) = sign(x_j − med)`).
/// - `Euc`: `1 − Σ_E w (x_i − x_j)² / E_pair[Σ_E w (x_a − x_b)²]`, where the
///   reference is a degree-preserving random pairing of edge endpoints; its
///   expectation is `W · 2·Var_d(x)` with `Var_d` the degree-weighted
///   variance and `W` the total edge weight. Clipped to `[−1, 1]`.
/// - `Ge`: `1 − xᵀLx / (|E| · Var(x))` with `L` the combinatorial Laplacian
///   and the population variance; 0 for constant features.
pub fn homophily_scores(x: &Matrix, graph: &Graph, features: &[usize], variant: Homophily) -> Result<Vec<f64>> {
    let edges = graph.edges();
    if edges.is_empty() {
        return Err(Error::HomophilyUndefined);
    }
    let n_edges = edges.len() as f64;
    let degrees = graph.degrees();
    let total_deg: f64 = degrees.iter().sum();
    Ok(features
        .par_iter()
        .map(|&m| {
            let col = x.column(m);
            match variant {
                Homophily::Attr => {
                    let med = median(&col);
                    let agree = edges
                        .iter()
                        .filter(|&&(i, j, _)| sign(col[i] - med) == sign(col[j] - med))
                        .count();
                    agree as f64 / n_edges
                }
                Homophily::Euc => {
                    let num: f64 = edges.iter().map(|&(i, j, w)| w * (col[i] - col[j]).powi(2)).sum();
                    let mean_d: f64 = col.iter().zip(&degrees).map(|(v, d)| v * d).sum::<f64>() / total_deg;
                    let var_d: f64 = col
                        .iter()
                        .zip(&degrees)
                        .map(|(v, d)| d * (v - mean_d).powi(2))
                        .sum::<f64>()
                        / total_deg;
                    let weight: f64 = edges.iter().map(|e| e.2).sum();
                    let denom = weight * 2.0 * var_d;
                    if denom <= 0.0 {
                        0.0
                    } else {
                        (1.0 - num / denom).clamp(-1.0, 1.0)
                    }
                }
                Homophily::Ge => {
                    let quad: f64 = edges.iter().map(|&(i, j, w)| w * (col[i] - col[j]).powi(2)).sum();
                    let n = col.len() as f64;
                    let mean = col.iter().sum::<f64>() / n;
                    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    if var == 0.0 {
                        0.0
                    } else {
                        1.0 - quad / (n_edges * var)
                    }
                }
            }
        })
        .collect())
}

/// I.i.d. uniform scores in the open interval (0, 1).
pub fn random_scores<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Vec<f64> {
    (0..m)
        .map(|_| loop {
            let u: f64 = rng.random();
            if u > 0.0 {
                break u;
            }
        })
        .collect()
}

/// Inputs shared by all metrics when scoring one checkpoint.
pub struct MetricInputs<'a> {
    pub graph: &'a Graph,
    /// Needed by the model-based metrics only.
    pub scoring: Option<ScoringContext<'a>>,
    /// Active feature ids, ascending.
    pub active: &'a [usize],
    pub seed: u64,
    pub checkpoint: usize,
}

/// Scores the active features with `metric`; inactive features stay `None`.
pub fn score_features(metric: Metric, inputs: &MetricInputs<'_>, cfg: &ScoreConfig) -> Result<ImportanceReport> {
    let g = inputs.graph;
    let rows = g.split_indices(cfg.eval_split);
    let active = inputs.active;
    let need_ctx = || {
        inputs
            .scoring
            .ok_or_else(|| Error::InvalidArgument(format!("{metric} needs a trained model")))
    };
    let values = match metric {
        Metric::Npt => npt_scores(&need_ctx()?, cfg.k_shuffles, inputs.seed, inputs.checkpoint)?,
        Metric::NptMask => npt_mask_scores(&need_ctx()?)?,
        Metric::Mi => mi_scores(g.features(), active, g.labels(), &rows, cfg.n_bins)?,
        Metric::Tfi => tfi_scores(
            g.features(),
            g.adjacency(),
            active,
            g.labels(),
            &rows,
            cfg.n_bins,
            cfg.filter_passes,
        )?,
        Metric::HAttr => homophily_scores(g.features(), g, active, Homophily::Attr)?,
        Metric::HEuc => homophily_scores(g.features(), g, active, Homophily::Euc)?,
        Metric::HGe => homophily_scores(g.features(), g, active, Homophily::Ge)?,
        Metric::Random => {
            let mut r = rng::substream(inputs.seed, &[tag::RANDOM_SCORE, inputs.checkpoint as u64]);
            let all = random_scores(g.n_feats(), &mut r);
            active.iter().map(|&m| all[m]).collect()
        }
    };
    let mut scores = vec![None; g.n_feats()];
    for (&m, v) in active.iter().zip(values) {
        scores[m] = Some(v);
    }
    Ok(ImportanceReport {
        metric,
        scores,
        k_shuffles: cfg.k_shuffles,
        eval_split: cfg.eval_split,
        checkpoint: inputs.checkpoint,
    })
}

/// Number of features a keep-ratio `r` retains out of `active`: `⌈r·active⌉`,
/// at least one.
pub fn keep_count(r: f64, active: usize) -> usize {
    // products within 1e-9 of an integer count as that integer
    let raw = r * active as f64;
    let rounded = raw.round();
    let c = if (raw - rounded).abs() < 1e-9 { rounded } else { raw.ceil() };
    (c as usize).clamp(1, active.max(1))
}

/// Keeps the `⌈r·|active|⌉` highest-scoring active features; ties at the cut
/// keep the lower feature index.
pub fn select_top_ratio(scores: &[f64], active: &FeatureMask, r: f64) -> Result<FeatureMask> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::InvalidArgument(format!("keep ratio {r} outside (0, 1]")));
    }
    if scores.len() != active.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores for {} features",
            scores.len(),
            active.len()
        )));
    }
    let ids = active.active_indices();
    let keep = keep_count(r, ids.len());
    Ok(active.keep_top(&ids, |m| scores[m], keep))
}
