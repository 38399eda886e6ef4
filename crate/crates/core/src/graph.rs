//! Graph container, class statistics, adjacency normalizations and the
//! idealized graph/feature constructions.

use serde::{Deserialize, Serialize};

use crate::csr::CsrMatrix;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Node split membership. Every node belongs to exactly one split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Graph {
    adjacency: CsrMatrix,
    features: Matrix,
    labels: Vec<usize>,
    n_classes: usize,
    splits: Vec<Split>,
}

impl Graph {
    pub fn new(
        adjacency: CsrMatrix,
        features: Matrix,
        labels: Vec<usize>,
        n_classes: usize,
        splits: Vec<Split>,
    ) -> Result<Self> {
        let n = labels.len();
        if adjacency.n_rows() != n || adjacency.n_cols() != n {
            return Err(Error::InvalidGraph(format!(
                "adjacency is {}x{} but there are {n} labels",
                adjacency.n_rows(),
                adjacency.n_cols()
            )));
        }
        if features.rows() != n {
            return Err(Error::InvalidGraph(format!(
                "feature matrix has {} rows but there are {n} nodes",
                features.rows()
            )));
        }
        if splits.len() != n {
            return Err(Error::InvalidGraph(format!(
                "{} split entries for {n} nodes",
                splits.len()
            )));
        }
        validate_adjacency(&adjacency)?;
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= n_classes) {
            return Err(Error::InvalidGraph(format!(
                "label {y} of node {i} outside [0, {n_classes})"
            )));
        }
        if !features.is_finite() {
            return Err(Error::InvalidGraph("non-finite feature value".into()));
        }
        Ok(Self {
            adjacency,
            features,
            labels,
            n_classes,
            splits,
        })
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn n_feats(&self) -> usize {
        self.features.cols()
    }

    #[inline]
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adjacency
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    /// Node indices of one split, ascending.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn split_mask(&self, split: Split) -> Vec<bool> {
        self.splits.iter().map(|&s| s == split).collect()
    }

    /// Weighted degrees `d_i = Σ_j A_ij`.
    pub fn degrees(&self) -> Vec<f64> {
        self.adjacency.row_sums()
    }

    /// Undirected edges `(i, j, w)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        self.adjacency.triplets().filter(|&(i, j, _)| i < j).collect()
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn with_features(&self, features: Matrix) -> Result<Graph> {
        Graph::new(
            self.adjacency.clone(),
            features,
            self.labels.clone(),
            self.n_classes,
            self.splits.clone(),
        )
    }

    pub fn with_adjacency(&self, adjacency: CsrMatrix) -> Result<Graph> {
        Graph::new(
            adjacency,
            self.features.clone(),
            self.labels.clone(),
            self.n_classes,
            self.splits.clone(),
        )
    }

    pub fn with_splits(&self, splits: Vec<Split>) -> Result<Graph> {
        Graph::new(
            self.adjacency.clone(),
            self.features.clone(),
            self.labels.clone(),
            self.n_classes,
            splits,
        )
    }
}

/// Checks that `a` is square, symmetric (to 1e-12), nonnegative and loop-free.
pub fn validate_adjacency(a: &CsrMatrix) -> Result<()> {
    if a.n_rows() != a.n_cols() {
        return Err(Error::InvalidGraph("adjacency is not square".into()));
    }
    for (i, j, v) in a.triplets() {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidGraph(format!(
                "negative or non-finite weight {v} on edge ({i}, {j})"
            )));
        }
        if i == j {
            return Err(Error::InvalidGraph(format!("self-loop on node {i}")));
        }
        if (a.get(j, i) - v).abs() > 1e-12 {
            return Err(Error::InvalidGraph(format!(
                "asymmetric weights on ({i}, {j})"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    /// N×C one-hot label matrix.
    pub one_hot: Matrix,
    pub counts: Vec<usize>,
    pub inv_counts: Vec<f64>,
}

pub fn class_stats(graph: &Graph) -> Result<ClassStats> {
    class_stats_from_labels(graph.labels(), graph.n_classes())
}

pub fn class_stats_from_labels(labels: &[usize], n_classes: usize) -> Result<ClassStats> {
    let mut counts = vec![0usize; n_classes];
    let mut one_hot = Matrix::zeros(labels.len(), n_classes);
    for (i, &y) in labels.iter().enumerate() {
        if y >= n_classes {
            return Err(Error::InvalidGraph(format!("label {y} outside [0, {n_classes})")));
        }
        counts[y] += 1;
        one_hot[(i, y)] = 1.0;
    }
    if let Some(c) = counts.iter().position(|&p| p == 0) {
        return Err(Error::EmptyClass(c));
    }
    let inv_counts = counts.iter().map(|&p| 1.0 / p as f64).collect();
    Ok(ClassStats {
        one_hot,
        counts,
        inv_counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// `D̃^{-1/2} (A + I) D̃^{-1/2}`
    Symmetric,
    /// `D̃^{-1} (A + I)`
    RandomWalk,
}

#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    pub kind: NormKind,
    pub matrix: CsrMatrix,
    /// Degrees of the input adjacency, before the self-loop is added.
    pub degrees: Vec<f64>,
}

/// Adds one self-loop per node and normalizes with `D̃ = diag(d + 1)`.
pub fn normalize(adjacency: &CsrMatrix, kind: NormKind) -> Result<NormalizedAdjacency> {
    validate_adjacency(adjacency)?;
    let degrees = adjacency.row_sums();
    let with_loops = adjacency.add_diagonal(1.0);
    let matrix = match kind {
        NormKind::RandomWalk => {
            let inv: Vec<f64> = degrees.iter().map(|d| 1.0 / (d + 1.0)).collect();
            let ones = vec![1.0; degrees.len()];
            with_loops.scale_rows_cols(&inv, &ones)
        }
        NormKind::Symmetric => {
            let inv_sqrt: Vec<f64> = degrees.iter().map(|d| 1.0 / (d + 1.0).sqrt()).collect();
            with_loops.scale_rows_cols(&inv_sqrt, &inv_sqrt)
        }
    };
    Ok(NormalizedAdjacency {
        kind,
        matrix,
        degrees,
    })
}

/// Splits `A` into same-class edges `A*` and cross-class edges `Δ = A − A*`.
pub fn idealize_graph(graph: &Graph) -> (CsrMatrix, CsrMatrix) {
    idealize_adjacency(graph.adjacency(), graph.labels())
}

pub fn idealize_adjacency(a: &CsrMatrix, labels: &[usize]) -> (CsrMatrix, CsrMatrix) {
    let (same, cross): (Vec<_>, Vec<_>) = a
        .triplets()
        .partition(|&(i, j, _)| labels[i] == labels[j]);
    let n = a.n_rows();
    let star = CsrMatrix::from_triplets(n, n, same).expect("subset of valid entries");
    let delta = CsrMatrix::from_triplets(n, n, cross).expect("subset of valid entries");
    (star, delta)
}

/// `X* = Y P⁻¹ Yᵀ X`: every row replaced by the mean feature vector of its class.
pub fn idealize_features(graph: &Graph) -> Result<Matrix> {
    class_mean_projection(graph.features(), graph.labels(), graph.n_classes())
}

pub fn class_mean_projection(x: &Matrix, labels: &[usize], n_classes: usize) -> Result<Matrix> {
    let stats = class_stats_from_labels(labels, n_classes)?;
    // Yᵀ X then P⁻¹ then Y (·)
    let mut means = stats.one_hot.matmul_tn(x)?;
    for c in 0..n_classes {
        let s = stats.inv_counts[c];
        means.row_mut(c).iter_mut().for_each(|v| *v *= s);
    }
    stats.one_hot.matmul(&means)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, edges: &[(usize, usize)], labels: Vec<usize>, c: usize, x: Matrix) -> Graph {
        let trip = edges.iter().flat_map(|&(i, j)| [(i, j, 1.0), (j, i, 1.0)]);
        let a = CsrMatrix::from_triplets(n, n, trip).unwrap();
        Graph::new(a, x, labels, c, vec![Split::Train; n]).unwrap()
    }

    #[test]
    fn class_counts() {
        let g = graph(3, &[], vec![0, 0, 1], 2, Matrix::zeros(3, 1));
        let s = class_stats(&g).unwrap();
        assert_eq!(s.counts, vec![2, 1]);
        assert_eq!(s.inv_counts, vec![0.5, 1.0]);
    }

    #[test]
    fn single_class_one_hot_is_ones_column() {
        let g = graph(4, &[(0, 1)], vec![0; 4], 1, Matrix::zeros(4, 1));
        let s = class_stats(&g).unwrap();
        assert_eq!(s.one_hot, Matrix::filled(4, 1, 1.0));
        assert_eq!(s.counts, vec![4]);
    }

    #[test]
    fn empty_class_is_an_error() {
        let g = graph(2, &[], vec![0, 1], 3, Matrix::zeros(2, 1));
        match class_stats(&g) {
            Err(Error::EmptyClass(2)) => {}
            other => panic!("expected empty class, got {other:?}"),
        }
    }

    #[test]
    fn normalize_edgeless_is_identity() {
        let a = CsrMatrix::empty(2, 2);
        for kind in [NormKind::Symmetric, NormKind::RandomWalk] {
            let n = normalize(&a, kind).unwrap();
            assert_eq!(n.matrix.to_dense(), Matrix::identity(2));
        }
    }

    #[test]
    fn normalize_single_edge_random_walk() {
        let a = CsrMatrix::from_triplets(2, 2, [(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let n = normalize(&a, NormKind::RandomWalk).unwrap();
        assert_eq!(n.matrix.to_dense(), Matrix::filled(2, 2, 0.5));
    }

    #[test]
    fn normalize_path_rows_sum_to_one() {
        let a = CsrMatrix::from_triplets(3, 3, [(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)])
            .unwrap();
        let n = normalize(&a, NormKind::RandomWalk).unwrap();
        for s in n.matrix.row_sums() {
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_negative_and_asymmetric() {
        let neg = CsrMatrix::from_triplets(2, 2, [(0, 1, -1.0), (1, 0, -1.0)]).unwrap();
        assert!(normalize(&neg, NormKind::RandomWalk).is_err());
        let asym = CsrMatrix::from_triplets(2, 2, [(0, 1, 1.0)]).unwrap();
        assert!(normalize(&asym, NormKind::Symmetric).is_err());
    }

    #[test]
    fn idealize_graph_same_class_keeps_everything() {
        let g = graph(3, &[(0, 1), (1, 2)], vec![0, 0, 0], 1, Matrix::zeros(3, 1));
        let (star, delta) = idealize_graph(&g);
        assert_eq!(&star, g.adjacency());
        assert_eq!(delta.nnz(), 0);
    }

    #[test]
    fn idealize_graph_cross_edge_moves_to_delta() {
        let g = graph(2, &[(0, 1)], vec![0, 1], 2, Matrix::zeros(2, 1));
        let (star, delta) = idealize_graph(&g);
        assert_eq!(star.nnz(), 0);
        assert_eq!(&delta, g.adjacency());
    }

    #[test]
    fn idealize_features_class_means() {
        let x = Matrix::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        let g = graph(2, &[], vec![0, 0], 1, x);
        let xs = idealize_features(&g).unwrap();
        assert_eq!(xs, Matrix::filled(2, 1, 1.0));
    }

    #[test]
    fn idealize_features_fixed_point() {
        let x = Matrix::from_rows(&[vec![1.0, 3.0], vec![5.0, 2.0], vec![1.0, 3.0]]).unwrap();
        let g = graph(3, &[], vec![0, 1, 0], 2, x.clone());
        assert_eq!(idealize_features(&g).unwrap(), x);
    }
}
