//! Synthetic stochastic-block-model graphs, split sampling, and the on-disk
//! graph format.
//!
//! A graph directory holds:
//!
//! - `edges.tsv`: one undirected edge per line, `src<TAB>dst[<TAB>weight]`,
//!   0-indexed, `src < dst`, weight defaulting to 1.0.
//! - `features.csv`: N rows of M comma-separated decimals, no header.
//! - `labels.csv`: N integer class ids, one per line.
//! - `splits.csv` (optional): N lines of `train`, `val` or `test`. When absent
//!   a 70/10/20 split is sampled from the run seed.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::csr::CsrMatrix;
use crate::error::{Error, Result};
use crate::graph::{Graph, Split};
use crate::matrix::Matrix;
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Informative features follow the node's own class.
    Homophilic,
    /// Informative features follow the majority class among the node's
    /// neighbours.
    HeterophilicShifted,
    /// Class-dependent means buried in a large spread: the effective standard
    /// deviation is at least twice the class-mean separation.
    HighVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SbmConfig {
    pub n_nodes: usize,
    pub n_classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub n_informative: usize,
    pub n_noise: usize,
    /// Distance between neighbouring class means along each informative axis.
    pub class_mean_sep: f64,
    pub feature_std: f64,
    pub feature_mode: FeatureMode,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            n_nodes: 300,
            n_classes: 3,
            p_in: 0.05,
            p_out: 0.005,
            n_informative: 8,
            n_noise: 56,
            class_mean_sep: 1.0,
            feature_std: 1.0,
            feature_mode: FeatureMode::Homophilic,
            seed: 0,
        }
    }
}

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.n_classes > self.n_nodes {
            return Err(Error::InvalidArgument(format!(
                "{} classes for {} nodes",
                self.n_classes, self.n_nodes
            )));
        }
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("{name} = {p} is not a probability")));
            }
        }
        if self.n_informative + self.n_noise == 0 {
            return Err(Error::InvalidArgument("SBM needs at least one feature".into()));
        }
        if !(self.feature_std >= 0.0) {
            return Err(Error::InvalidArgument("feature_std must be >= 0".into()));
        }
        Ok(())
    }

    /// Class sizes: equal blocks, remainder to the last class.
    pub fn class_sizes(&self) -> Vec<usize> {
        let base = self.n_nodes / self.n_classes;
        let mut sizes = vec![base; self.n_classes];
        sizes[self.n_classes - 1] += self.n_nodes % self.n_classes;
        sizes
    }
}

/// Mean of informative feature `f` for class `c`: classes sit `sep` apart on
/// every informative axis, in an order rotated per axis, centred at zero.
fn class_mean(c: usize, f: usize, n_classes: usize, sep: f64) -> f64 {
    let rank = (c + f) % n_classes;
    sep * (rank as f64 - (n_classes as f64 - 1.0) / 2.0)
}

pub fn generate_sbm(cfg: &SbmConfig) -> Result<Graph> {
    cfg.validate()?;
    let n = cfg.n_nodes;
    let sizes = cfg.class_sizes();
    let labels: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(c, &s)| std::iter::repeat_n(c, s))
        .collect();

    let mut edge_rng = rng::substream(cfg.seed, &[tag::SBM, 0]);
    let mut trip = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { cfg.p_in } else { cfg.p_out };
            if edge_rng.random::<f64>() < p {
                trip.push((i, j, 1.0));
                trip.push((j, i, 1.0));
            }
        }
    }
    let adjacency = CsrMatrix::from_triplets(n, n, trip)?;

    // class whose distribution each node's informative features follow
    let source: Vec<usize> = match cfg.feature_mode {
        FeatureMode::HeterophilicShifted => (0..n)
            .map(|i| {
                let mut counts = vec![0usize; cfg.n_classes];
                for (j, _) in adjacency.row(i) {
                    counts[labels[j]] += 1;
                }
                if counts.iter().all(|&c| c == 0) {
                    labels[i]
                } else {
                    // majority, lowest class on ties
                    (0..cfg.n_classes).rev().max_by_key(|&c| counts[c]).unwrap()
                }
            })
            .collect(),
        _ => labels.clone(),
    };
    let std = match cfg.feature_mode {
        FeatureMode::HighVariance => cfg.feature_std.max(2.0 * cfg.class_mean_sep),
        _ => cfg.feature_std,
    };

    let mut feat_rng = rng::substream(cfg.seed, &[tag::SBM, 1]);
    let m = cfg.n_informative + cfg.n_noise;
    let noise = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut x = Matrix::zeros(n, m);
    for i in 0..n {
        for f in 0..cfg.n_informative {
            x[(i, f)] = class_mean(source[i], f, cfg.n_classes, cfg.class_mean_sep)
                + noise.sample(&mut feat_rng);
        }
        for f in cfg.n_informative..m {
            x[(i, f)] = feat_rng.sample(StandardNormal);
        }
    }

    let splits = sample_splits(n, cfg.seed);
    Graph::new(adjacency, x, labels, cfg.n_classes, splits)
}

/// Random 70/10/20 split: `⌊0.7N⌋` train, `⌊0.1N⌋` val, the rest test.
pub fn sample_splits(n: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::substream(seed, &[tag::SPLITS]));
    let n_train = n * 7 / 10;
    let n_val = n / 10;
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_edges(path: &Path, n: usize) -> Result<CsrMatrix> {
    let text = read(path)?;
    let mut seen = std::collections::HashSet::new();
    let mut trip = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = body.split('\t').map(str::trim).collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(parse_err(path, line, format!("expected src<TAB>dst[<TAB>weight], got {raw:?}")));
        }
        let node = |s: &str| -> Result<usize> {
            let v: usize = s
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad node id {s:?}")))?;
            if v >= n {
                return Err(parse_err(path, line, format!("node {v} out of range (N = {n})")));
            }
            Ok(v)
        };
        let (src, dst) = (node(fields[0])?, node(fields[1])?);
        let weight = match fields.get(2) {
            Some(w) => w
                .parse::<f64>()
                .map_err(|_| parse_err(path, line, format!("bad weight {w:?}")))?,
            None => 1.0,
        };
        if src == dst {
            return Err(parse_err(path, line, format!("self-loop on node {src}")));
        }
        if !(weight.is_finite() && weight > 0.0) {
            return Err(parse_err(path, line, format!("edge weight {weight} must be positive")));
        }
        let key = (src.min(dst), src.max(dst));
        if !seen.insert(key) {
            return Err(parse_err(path, line, format!("duplicate edge {}-{}", key.0, key.1)));
        }
        trip.push((src, dst, weight));
        trip.push((dst, src, weight));
    }
    CsrMatrix::from_triplets(n, n, trip)
}

fn parse_labels(path: &Path) -> Result<Vec<usize>> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let body = raw.trim();
        if body.is_empty() {
            continue;
        }
        out.push(
            body.parse()
                .map_err(|_| parse_err(path, k + 1, format!("bad label {body:?}")))?,
        );
    }
    Ok(out)
}

fn parse_features(path: &Path) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(path, 0, e.to_string()))?;
    let mut data = Vec::new();
    let mut rows = 0;
    let mut width = None;
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(rows + 1, |p| p.line() as usize);
        if *width.get_or_insert(rec.len()) != rec.len() {
            return Err(parse_err(path, line, format!("{} values, expected {}", rec.len(), width.unwrap())));
        }
        for field in rec.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad number {field:?}")))?;
            data.push(v);
        }
        rows += 1;
    }
    Matrix::from_vec(rows, width.unwrap_or(0), data)
}

fn parse_splits(path: &Path) -> Result<Vec<Split>> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let body = raw.trim();
        if body.is_empty() {
            continue;
        }
        out.push(
            body.parse()
                .map_err(|_| parse_err(path, k + 1, format!("bad split {body:?}")))?,
        );
    }
    Ok(out)
}

/// Reads a graph directory. `seed` drives the split when `splits.csv` is absent.
pub fn load_graph(dir: &Path, seed: u64) -> Result<Graph> {
    let labels = parse_labels(&dir.join("labels.csv"))?;
    let n = labels.len();
    if n == 0 {
        return Err(parse_err(&dir.join("labels.csv"), 0, "no labels"));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let features_path = dir.join("features.csv");
    let features = parse_features(&features_path)?;
    if features.rows() != n {
        return Err(parse_err(
            &features_path,
            features.rows(),
            format!("{} feature rows for {n} labelled nodes", features.rows()),
        ));
    }
    let adjacency = parse_edges(&dir.join("edges.tsv"), n)?;
    let splits_path = dir.join("splits.csv");
    let splits = if splits_path.exists() {
        let s = parse_splits(&splits_path)?;
        if s.len() != n {
            return Err(parse_err(&splits_path, s.len(), format!("{} splits for {n} nodes", s.len())));
        }
        s
    } else {
        sample_splits(n, seed)
    };
    Graph::new(adjacency, features, labels, n_classes, splits)
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    Ok(std::io::BufWriter::new(
        fs::File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

/// Writes a graph in the directory format read by [`load_graph`].
pub fn save_graph(dir: &Path, graph: &Graph) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let io = |p: PathBuf| move |e| Error::io(p.clone(), e);

    let p = dir.join("edges.tsv");
    let mut w = create(&p)?;
    for (i, j, v) in graph.edges() {
        if v == 1.0 {
            writeln!(w, "{i}\t{j}")
        } else {
            writeln!(w, "{i}\t{j}\t{v}")
        }
        .map_err(io(p.clone()))?;
    }
    w.flush().map_err(io(p))?;

    let p = dir.join("features.csv");
    let mut w = create(&p)?;
    let x = graph.features();
    for i in 0..x.rows() {
        let row: Vec<String> = x.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(",")).map_err(io(p.clone()))?;
    }
    w.flush().map_err(io(p))?;

    let p = dir.join("labels.csv");
    let mut w = create(&p)?;
    for y in graph.labels() {
        writeln!(w, "{y}").map_err(io(p.clone()))?;
    }
    w.flush().map_err(io(p))?;

    let p = dir.join("splits.csv");
    let mut w = create(&p)?;
    for s in graph.splits() {
        writeln!(w, "{}", s.as_str()).map_err(io(p.clone()))?;
    }
    w.flush().map_err(io(p))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    #[test]
    fn toy_directory_loads() {
        let d = tempfile::tempdir().unwrap();
        write(d.path(), "edges.tsv", "0\t1\n");
        write(d.path(), "features.csv", "0.5\n-1.5\n");
        write(d.path(), "labels.csv", "0\n1\n");
        write(d.path(), "splits.csv", "train\ntest\n");
        let g = load_graph(d.path(), 0).unwrap();
        assert_eq!((g.n_nodes(), g.n_feats(), g.n_classes()), (2, 1, 2));
        assert_eq!(g.adjacency().get(1, 0), 1.0);
        assert_eq!(g.splits(), &[Split::Train, Split::Test]);
    }

    #[test]
    fn malformed_edge_names_line() {
        let d = tempfile::tempdir().unwrap();
        write(d.path(), "edges.tsv", "0\t1\na b c\n");
        write(d.path(), "features.csv", "1\n2\n3\n");
        write(d.path(), "labels.csv", "0\n0\n1\n");
        let err = load_graph(d.path(), 0).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn loader_rejections() {
        let d = tempfile::tempdir().unwrap();
        write(d.path(), "features.csv", "1\n2\n3\n");
        write(d.path(), "labels.csv", "0\n0\n1\n");
        write(d.path(), "edges.tsv", "0\t1\n1\t0\n");
        assert!(load_graph(d.path(), 0).unwrap_err().to_string().contains("duplicate"));
        write(d.path(), "edges.tsv", "2\t2\n");
        assert!(load_graph(d.path(), 0).unwrap_err().to_string().contains("self-loop"));
        write(d.path(), "edges.tsv", "0\t1\n");
        write(d.path(), "features.csv", "1\n2\n");
        assert!(load_graph(d.path(), 0).is_err());
    }

    #[test]
    fn missing_splits_are_sampled() {
        let d = tempfile::tempdir().unwrap();
        write(d.path(), "edges.tsv", "");
        write(d.path(), "features.csv", &"1\n".repeat(20));
        write(d.path(), "labels.csv", &"0\n1\n".repeat(10));
        let g = load_graph(d.path(), 3).unwrap();
        assert_eq!(g.split_indices(Split::Train).len(), 14);
        assert_eq!(g.split_indices(Split::Val).len(), 2);
        assert_eq!(g.split_indices(Split::Test).len(), 4);
    }

    #[test]
    fn save_load_round_trip() {
        let g = generate_sbm(&SbmConfig {
            n_nodes: 40,
            n_informative: 2,
            n_noise: 1,
            p_in: 0.3,
            ..Default::default()
        })
        .unwrap();
        let d = tempfile::tempdir().unwrap();
        save_graph(d.path(), &g).unwrap();
        let h = load_graph(d.path(), 99).unwrap();
        assert_eq!(h.features(), g.features());
        assert_eq!(h.adjacency(), g.adjacency());
        assert_eq!(h.labels(), g.labels());
        assert_eq!(h.splits(), g.splits());
    }

    #[test]
    fn sbm_two_triangles() {
        let g = generate_sbm(&SbmConfig {
            n_nodes: 6,
            n_classes: 2,
            p_in: 1.0,
            p_out: 0.0,
            n_informative: 1,
            n_noise: 0,
            ..Default::default()
        })
        .unwrap();
        let mut edges: Vec<(usize, usize)> = g.edges().into_iter().map(|(i, j, _)| (i, j)).collect();
        edges.sort();
        assert_eq!(edges, vec![(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)]);
    }

    #[test]
    fn sbm_rejects_more_classes_than_nodes() {
        let cfg = SbmConfig {
            n_nodes: 2,
            n_classes: 3,
            ..Default::default()
        };
        assert!(generate_sbm(&cfg).is_err());
    }

    #[test]
    fn sbm_is_deterministic_per_seed() {
        let cfg = SbmConfig {
            n_nodes: 50,
            seed: 11,
            ..Default::default()
        };
        let a = generate_sbm(&cfg).unwrap();
        let b = generate_sbm(&cfg).unwrap();
        assert_eq!(a.features(), b.features());
        assert_eq!(a.adjacency(), b.adjacency());
        assert_eq!(a.splits(), b.splits());
    }

    #[test]
    fn splits_partition_nodes() {
        for n in [1, 7, 10, 101] {
            let s = sample_splits(n, 5);
            let count = |k| s.iter().filter(|&&x| x == k).count();
            assert_eq!(count(Split::Train), n * 7 / 10);
            assert_eq!(count(Split::Val), n / 10);
            assert_eq!(count(Split::Train) + count(Split::Val) + count(Split::Test), n);
        }
    }

    #[test]
    fn heterophilic_mode_follows_neighbour_majority() {
        // complete bipartite-ish: p_in = 0, p_out = 1 -> every neighbour is in the other class
        let g = generate_sbm(&SbmConfig {
            n_nodes: 20,
            n_classes: 2,
            p_in: 0.0,
            p_out: 1.0,
            n_informative: 1,
            n_noise: 0,
            class_mean_sep: 10.0,
            feature_std: 0.0,
            feature_mode: FeatureMode::HeterophilicShifted,
            seed: 1,
        })
        .unwrap();
        for i in 0..20 {
            let other = 1 - g.labels()[i];
            assert_eq!(g.features()[(i, 0)], class_mean(other, 0, 2, 10.0));
        }
    }
}
