use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use nfs_core::checkpoint::{self, SavedModel};
use nfs_core::config::ExperimentConfig;
use nfs_core::data::{generate_sbm, save_graph};
use nfs_core::experiments::{self, CompareSetup};
use nfs_core::importance::{write_reports_csv, Metric};
use nfs_core::models::{train, EpochRecord};
use nfs_core::selection::{
    best_epoch_report, heatmap_bins, run_adaptive, write_heatmap_csv, FeatureMask, SelectionTrace,
};
use nfs_core::theory::{self, BoundRow};

/// Node feature selection experiments for graph neural networks.
///
/// Every command reads an optional TOML config, applies flag overrides, and
/// writes its result files plus the resolved `config.toml` into the output
/// directory. Results depend only on the config and seed.
#[derive(Parser, Debug)]
#[command(name = "nfs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Experiment seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR", env = "NFS_OUT_DIR")]
    out: Option<PathBuf>,
    /// Importance metric for adaptive and heatmap runs
    /// (npt, npt_mask, mi, tfi, h_attr, h_euc, h_ge, random).
    #[arg(long, value_name = "NAME")]
    metric: Option<Metric>,
    /// Keep ratio: per-checkpoint ratio for adaptive runs, selected ratio for
    /// fs-compare.
    #[arg(long, value_name = "R")]
    ratio: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model on all features.
    Train(Common),
    /// Compare GNN(X;A), MLP(X), GNN(X̃;A), GNN(W;A) and GNN(X;Ã) over several seeds.
    PerturbStudy(Common),
    /// Score features with every metric, keep the top ratio, and retrain.
    FsCompare(Common),
    /// Train while pruning features at regular checkpoints.
    Adaptive(Common),
    /// Track binned feature scores across checkpoints.
    Heatmap(Common),
    /// Check the GCN error bounds on random small instances.
    BoundCheck(Common),
    /// Write a synthetic stochastic-block-model graph directory.
    GenSbm(Common),
}

fn resolve(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    if let Some(m) = common.metric {
        cfg.metric = m;
    }
    if let Some(r) = common.ratio {
        cfg.selection.keep_ratio = r;
        cfg.ratios = vec![r];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    experiments::write_csv(rows, create(path)?)?;
    Ok(())
}

/// Fails unless `path` holds a header plus exactly `rows` data lines.
fn check_rows(path: &Path, rows: usize) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading back {}", path.display()))?;
    let lines = text.lines().count();
    if lines != rows + 1 {
        bail!("{}: {} data rows written, expected {rows}", path.display(), lines.saturating_sub(1));
    }
    Ok(())
}

fn write_epochs(path: &Path, n_feats: usize, epochs: &[EpochRecord]) -> Result<()> {
    let trace = SelectionTrace {
        n_feats,
        epochs: epochs.to_vec(),
        checkpoints: Vec::new(),
    };
    trace.write_epochs_csv(create(path)?)?;
    check_rows(path, epochs.len())
}

#[derive(Serialize)]
struct TrainSummary {
    seed: u64,
    epochs: usize,
    best: Option<EpochRecord>,
}

fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let graph = cfg.graph()?;
    let mask = FeatureMask::all(graph.n_feats());
    let rec = train(cfg.model, &graph, &mask, cfg.seed, &cfg.train)?;
    write_epochs(&out.join("epochs.csv"), graph.n_feats(), &rec.epochs)?;
    write_json(
        &out.join("summary.json"),
        &TrainSummary {
            seed: cfg.seed,
            epochs: rec.epochs.len(),
            best: rec.best_val_test(),
        },
    )?;
    checkpoint::save(
        &out.join("model.json"),
        &SavedModel {
            model: rec.model,
            active: mask.active_indices(),
        },
    )?;
    Ok(())
}

fn cmd_perturb(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let graph = cfg.graph()?;
    let study = experiments::perturb_study(&graph, cfg.model, &cfg.train, cfg.n_seeds, cfg.seed, cfg.resample_splits)?;
    write_rows(&out.join("perturb_study.csv"), &study.summary)?;
    study.write_runs_csv(graph.n_feats(), create(&out.join("perturb_runs.csv"))?)?;
    check_rows(&out.join("perturb_study.csv"), study.summary.len())?;
    check_rows(&out.join("perturb_runs.csv"), study.runs.len())
}

fn cmd_fs_compare(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let graph = cfg.graph()?;
    let setup = CompareSetup {
        spec: cfg.model,
        train: &cfg.train,
        scoring: &cfg.scoring,
        metrics: &cfg.metrics,
        ratios: &cfg.ratios,
    };
    let cmp = experiments::fs_compare(&graph, &setup, cfg.n_seeds, cfg.seed, cfg.resample_splits)?;
    write_rows(&out.join("fs_compare.csv"), &cmp.summary)?;
    cmp.write_runs_csv(create(&out.join("fs_runs.csv"))?)?;
    check_rows(&out.join("fs_compare.csv"), cmp.summary.len())?;
    check_rows(&out.join("fs_runs.csv"), cmp.runs.len())
}

#[derive(Serialize)]
struct AdaptiveSummary {
    seed: u64,
    metric: Metric,
    final_active: Vec<usize>,
    intervals: Vec<nfs_core::selection::IntervalBest>,
    warnings: Vec<String>,
}

fn adaptive_outputs(cfg: &ExperimentConfig, out: &Path, prune: bool) -> Result<nfs_core::selection::AdaptiveOutcome> {
    let graph = cfg.graph()?;
    let mut sel = cfg.selection;
    sel.prune = prune;
    let outcome = run_adaptive(cfg.model, &graph, &sel, cfg.train.adam, &cfg.scoring, cfg.metric, cfg.seed)?;
    let trace = &outcome.trace;
    let epochs_path = out.join("epochs.csv");
    trace.write_epochs_csv(create(&epochs_path)?)?;
    check_rows(&epochs_path, trace.epochs.len())?;
    let cp_path = out.join("checkpoints.csv");
    trace.write_checkpoints_csv(create(&cp_path)?)?;
    let scored: usize = trace.checkpoints.iter().map(|c| c.report.active_scores().len()).sum();
    check_rows(&cp_path, scored)?;
    write_reports_csv(&trace.reports(), create(&out.join("importance.csv"))?)?;
    Ok(outcome)
}

fn cmd_adaptive(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let outcome = adaptive_outputs(cfg, out, cfg.selection.prune)?;
    write_json(
        &out.join("summary.json"),
        &AdaptiveSummary {
            seed: cfg.seed,
            metric: cfg.metric,
            final_active: outcome.mask.active_indices(),
            intervals: best_epoch_report(&outcome.trace),
            warnings: outcome.trace.checkpoints.iter().filter_map(|c| c.warning.clone()).collect(),
        },
    )?;
    checkpoint::save(
        &out.join("model.json"),
        &SavedModel {
            active: outcome.mask.active_indices(),
            model: outcome.model,
        },
    )?;
    Ok(())
}

fn cmd_heatmap(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let outcome = adaptive_outputs(cfg, out, cfg.heatmap.prune)?;
    let reports = outcome.trace.reports();
    if reports.is_empty() {
        bail!(
            "no checkpoint was reached in {} epochs; lower burn_in/interval or raise max_epochs",
            cfg.selection.max_epochs
        );
    }
    let heat = heatmap_bins(&reports, cfg.heatmap.n_bins)?;
    let path = out.join("heatmap.csv");
    write_heatmap_csv(&heat, create(&path)?)?;
    check_rows(&path, heat.rows() * heat.cols())
}

fn cmd_bound_check(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    use rayon::prelude::*;
    let b = cfg.bounds;
    let rows: Vec<(BoundRow, theory::PermutedRow)> = (0..b.n_instances)
        .into_par_iter()
        .map(|i| -> nfs_core::Result<_> {
            let seed = experiments::run_seed(cfg.seed, i);
            let inputs = theory::random_instance(seed, b.t)?;
            let rep = theory::idealization_bound(&inputs)?;
            let perm = theory::permuted_satisfaction(seed, &inputs, b.n_perms)?;
            Ok((BoundRow::new(seed, &inputs, &rep), perm))
        })
        .collect::<nfs_core::Result<_>>()?;
    let (bounds, perms): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    theory::write_bounds_csv(&out.join("bounds.csv"), &bounds)?;
    theory::write_permuted_csv(&out.join("bounds_permuted.csv"), &perms)?;
    check_rows(&out.join("bounds.csv"), bounds.len())?;
    let violations: Vec<u64> = bounds.iter().filter(|r| !r.satisfied).map(|r| r.seed).collect();
    if !violations.is_empty() {
        bail!("bound violated for seeds {violations:?}");
    }
    Ok(())
}

fn cmd_gen_sbm(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let graph = generate_sbm(&cfg.sbm)?;
    save_graph(out, &graph)?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let (common, run): (&Common, fn(&ExperimentConfig, &Path) -> Result<()>) = match &cli.command {
        Command::Train(c) => (c, cmd_train),
        Command::PerturbStudy(c) => (c, cmd_perturb),
        Command::FsCompare(c) => (c, cmd_fs_compare),
        Command::Adaptive(c) => (c, cmd_adaptive),
        Command::Heatmap(c) => (c, cmd_heatmap),
        Command::BoundCheck(c) => (c, cmd_bound_check),
        Command::GenSbm(c) => (c, cmd_gen_sbm),
    };
    let mut cfg = resolve(common)?;
    if let Command::GenSbm(_) = cli.command {
        cfg.sbm.seed = cfg.seed;
    }
    if let Some(j) = common.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .context("configuring worker threads")?;
    }
    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.toml"), cfg.to_toml()?).context("writing config snapshot")?;
    run(&cfg, &out)
}
