//! Multi-run experiment drivers: the perturbation study and the
//! score-then-retrain feature selection comparison.

use rayon::prelude::*;
use serde::Serialize;

use crate::data::sample_splits;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::importance::{score_features, select_top_ratio, Metric, MetricInputs, ScoreConfig, ScoringContext};
use crate::models::{propagation, train, Arch, ModelSpec, TrainConfig};
use crate::perturb::{er_same_density, gaussian_features, permute_rows, sample_permutation};
use crate::rng::{self, tag};
use crate::selection::FeatureMask;

/// Seed of run `i` of an experiment seeded with `seed`.
pub fn run_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add(i as u64)
}

/// The graph a run trains on: the input graph, with a fresh split drawn from
/// the run seed when `resample` is set.
pub fn run_graph(graph: &Graph, seed: u64, resample: bool) -> Result<Graph> {
    if resample {
        graph.with_splits(sample_splits(graph.n_nodes(), seed))
    } else {
        Ok(graph.clone())
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// GNN on the original features and graph.
    GnnXA,
    /// MLP on the original features.
    MlpX,
    /// GNN with node rows of `X` randomly permuted.
    GnnXPermA,
    /// GNN with Gaussian noise features.
    GnnWA,
    /// GNN on an Erdős–Rényi graph with the same edge count.
    GnnXEr,
}

impl Setting {
    pub const ALL: [Setting; 5] = [
        Setting::GnnXA,
        Setting::MlpX,
        Setting::GnnXPermA,
        Setting::GnnWA,
        Setting::GnnXEr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Setting::GnnXA => "gnn_x_a",
            Setting::MlpX => "mlp_x",
            Setting::GnnXPermA => "gnn_xperm_a",
            Setting::GnnWA => "gnn_w_a",
            Setting::GnnXEr => "gnn_x_er",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub val_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbRun {
    pub setting: &'static str,
    pub result: RunResult,
}

/// Flat CSV row for one training run.
#[derive(Serialize)]
struct RunRow<'a> {
    name: &'a str,
    ratio: f64,
    n_features: usize,
    run: usize,
    seed: u64,
    best_epoch: usize,
    val_acc: f64,
    test_acc: f64,
}

impl<'a> RunRow<'a> {
    fn new(name: &'a str, ratio: f64, n_features: usize, r: &RunResult) -> Self {
        Self {
            name,
            ratio,
            n_features,
            run: r.run,
            seed: r.seed,
            best_epoch: r.best_epoch,
            val_acc: r.val_acc,
            test_acc: r.test_acc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub name: String,
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
    pub n_runs: usize,
}

#[derive(Debug, Clone)]
pub struct PerturbStudy {
    pub runs: Vec<PerturbRun>,
    pub summary: Vec<SummaryRow>,
}

impl PerturbStudy {
    /// `name,ratio,n_features,run,seed,best_epoch,val_acc,test_acc`
    pub fn write_runs_csv<W: std::io::Write>(&self, n_feats: usize, w: W) -> Result<()> {
        let rows: Vec<RunRow<'_>> = self
            .runs
            .iter()
            .map(|r| RunRow::new(r.setting, 1.0, n_feats, &r.result))
            .collect();
        write_csv(&rows, w)
    }
}

fn fit(spec: ModelSpec, graph: &Graph, mask: &FeatureMask, run: usize, seed: u64, cfg: &TrainConfig) -> Result<RunResult> {
    let rec = train(spec, graph, mask, seed, cfg)?;
    let best = rec
        .best_val_test()
        .ok_or_else(|| Error::InvalidArgument("training ran for zero epochs".into()))?;
    Ok(RunResult {
        run,
        seed,
        best_epoch: best.epoch,
        val_acc: best.val_acc,
        test_acc: best.test_acc,
    })
}

/// Trains every setting of the perturbation study under one run seed.
pub fn perturb_run(
    graph: &Graph,
    spec: ModelSpec,
    cfg: &TrainConfig,
    run: usize,
    seed: u64,
) -> Result<Vec<PerturbRun>> {
    let n = graph.n_nodes();
    let all = FeatureMask::all(graph.n_feats());
    let mut out = Vec::with_capacity(Setting::ALL.len());
    for setting in Setting::ALL {
        let (g, s) = match setting {
            Setting::GnnXA => (graph.clone(), spec),
            Setting::MlpX => (graph.clone(), ModelSpec { arch: Arch::Mlp, ..spec }),
            Setting::GnnXPermA => {
                let perm = sample_permutation(n, &mut rng::substream(seed, &[tag::ROW_PERMUTE]));
                (graph.with_features(permute_rows(graph.features(), &perm)?)?, spec)
            }
            Setting::GnnWA => {
                let w = gaussian_features(n, graph.n_feats(), &mut rng::substream(seed, &[tag::GAUSSIAN]));
                (graph.with_features(w)?, spec)
            }
            Setting::GnnXEr => {
                let a = er_same_density(graph.adjacency(), &mut rng::substream(seed, &[tag::ER]))?;
                (graph.with_adjacency(a)?, spec)
            }
        };
        out.push(PerturbRun {
            setting: setting.as_str(),
            result: fit(s, &g, &all, run, seed, cfg)?,
        });
    }
    Ok(out)
}

/// Runs the perturbation study over `n_runs` seeds, in parallel across runs.
pub fn perturb_study(
    graph: &Graph,
    spec: ModelSpec,
    cfg: &TrainConfig,
    n_runs: usize,
    seed: u64,
    resample_splits: bool,
) -> Result<PerturbStudy> {
    let per_run: Vec<Vec<PerturbRun>> = (0..n_runs)
        .into_par_iter()
        .map(|i| {
            let s = run_seed(seed, i);
            perturb_run(&run_graph(graph, s, resample_splits)?, spec, cfg, i, s)
        })
        .collect::<Result<_>>()?;
    let runs: Vec<PerturbRun> = per_run.into_iter().flatten().collect();
    let summary = Setting::ALL
        .iter()
        .map(|s| {
            let accs: Vec<f64> = runs
                .iter()
                .filter(|r| r.setting == s.as_str())
                .map(|r| r.result.test_acc)
                .collect();
            let (mean, std) = mean_std(&accs);
            SummaryRow {
                name: s.as_str().to_string(),
                mean_test_acc: mean,
                std_test_acc: std,
                n_runs: accs.len(),
            }
        })
        .collect();
    Ok(PerturbStudy { runs, summary })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRun {
    /// Metric name, or `all` for the full-feature model.
    pub metric: String,
    pub ratio: f64,
    pub n_features: usize,
    pub result: RunResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub metric: String,
    pub ratio: f64,
    pub n_features: usize,
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
    pub n_runs: usize,
}

#[derive(Debug, Clone)]
pub struct FsComparison {
    pub runs: Vec<SelectionRun>,
    pub summary: Vec<CompareRow>,
}

impl FsComparison {
    /// `name,ratio,n_features,run,seed,best_epoch,val_acc,test_acc`
    pub fn write_runs_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let rows: Vec<RunRow<'_>> = self
            .runs
            .iter()
            .map(|r| RunRow::new(&r.metric, r.ratio, r.n_features, &r.result))
            .collect();
        write_csv(&rows, w)
    }
}

#[derive(Debug, Clone)]
pub struct CompareSetup<'a> {
    pub spec: ModelSpec,
    pub train: &'a TrainConfig,
    pub scoring: &'a ScoreConfig,
    pub metrics: &'a [Metric],
    pub ratios: &'a [f64],
}

/// One run of the comparison: train on all features, score every metric with
/// that model, then retrain on each metric's top-`r` features.
pub fn fs_compare_run(graph: &Graph, setup: &CompareSetup<'_>, run: usize, seed: u64) -> Result<Vec<SelectionRun>> {
    let m = graph.n_feats();
    let all = FeatureMask::all(m);
    let full = train(setup.spec, graph, &all, seed, setup.train)?;
    let best = full
        .best_val_test()
        .ok_or_else(|| Error::InvalidArgument("training ran for zero epochs".into()))?;
    let mut out = vec![SelectionRun {
        metric: "all".into(),
        ratio: 1.0,
        n_features: m,
        result: RunResult {
            run,
            seed,
            best_epoch: best.epoch,
            val_acc: best.val_acc,
            test_acc: best.test_acc,
        },
    }];

    let prop = propagation(&setup.spec, graph.adjacency())?;
    let active = all.active_indices();
    let eval_rows = graph.split_indices(setup.scoring.eval_split);
    for &metric in setup.metrics {
        let ctx = ScoringContext {
            model: &full.model,
            prop: prop.as_ref(),
            x_active: graph.features(),
            active: &active,
            labels: graph.labels(),
            eval_rows: &eval_rows,
        };
        let inputs = MetricInputs {
            graph,
            scoring: Some(ctx),
            active: &active,
            seed,
            checkpoint: 0,
        };
        let report = score_features(metric, &inputs, setup.scoring)?;
        let scores = report.dense(f64::NEG_INFINITY);
        for &r in setup.ratios {
            let mask = select_top_ratio(&scores, &all, r)?;
            out.push(SelectionRun {
                metric: metric.as_str().into(),
                ratio: r,
                n_features: mask.active_count(),
                result: fit(setup.spec, graph, &mask, run, seed, setup.train)?,
            });
        }
    }
    Ok(out)
}

pub fn fs_compare(
    graph: &Graph,
    setup: &CompareSetup<'_>,
    n_runs: usize,
    seed: u64,
    resample_splits: bool,
) -> Result<FsComparison> {
    let per_run: Vec<Vec<SelectionRun>> = (0..n_runs)
        .into_par_iter()
        .map(|i| {
            let s = run_seed(seed, i);
            fs_compare_run(&run_graph(graph, s, resample_splits)?, setup, i, s)
        })
        .collect::<Result<_>>()?;
    let runs: Vec<SelectionRun> = per_run.into_iter().flatten().collect();

    // rows keep first-appearance order: `all`, then metric × ratio
    let mut keys: Vec<(String, f64, usize)> = Vec::new();
    for r in &runs {
        if !keys.iter().any(|(m, q, _)| *m == r.metric && *q == r.ratio) {
            keys.push((r.metric.clone(), r.ratio, r.n_features));
        }
    }
    let summary = keys
        .into_iter()
        .map(|(metric, ratio, n_features)| {
            let accs: Vec<f64> = runs
                .iter()
                .filter(|r| r.metric == metric && r.ratio == ratio)
                .map(|r| r.result.test_acc)
                .collect();
            let (mean, std) = mean_std(&accs);
            CompareRow {
                metric,
                ratio,
                n_features,
                mean_test_acc: mean,
                std_test_acc: std,
                n_runs: accs.len(),
            }
        })
        .collect();
    Ok(FsComparison { runs, summary })
}

/// Writes serializable rows as CSV with a header.
pub fn write_csv<T: Serialize, W: std::io::Write>(rows: &[T], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| Error::io("csv output", e))
}
