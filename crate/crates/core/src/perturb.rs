//! Feature and graph perturbations: column and row permutations, Gaussian
//! replacement features, and edge-count-preserving Erdős–Rényi rewiring.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::csr::CsrMatrix;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// A bijection on `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self {
            mapping: (0..n).collect(),
        }
    }

    pub fn from_mapping(mapping: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; mapping.len()];
        for &m in &mapping {
            if m >= mapping.len() || std::mem::replace(&mut seen[m], true) {
                return Err(Error::InvalidArgument(format!(
                    "{mapping:?} is not a permutation"
                )));
            }
        }
        Ok(Self { mapping })
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    #[inline]
    pub fn apply(&self, i: usize) -> usize {
        self.mapping[i]
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.mapping.len()];
        for (i, &p) in self.mapping.iter().enumerate() {
            inv[p] = i;
        }
        Permutation { mapping: inv }
    }

    /// `(self ∘ other)(i) = self(other(i))`
    pub fn compose(&self, other: &Permutation) -> Permutation {
        Permutation {
            mapping: other.mapping.iter().map(|&j| self.mapping[j]).collect(),
        }
    }
}

/// Uniform permutation by Fisher–Yates.
pub fn sample_permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Permutation {
    let mut mapping: Vec<usize> = (0..n).collect();
    mapping.shuffle(rng);
    Permutation { mapping }
}

/// `X̃[i, m] = X[π(i), m]`; other columns untouched.
pub fn permute_feature(x: &Matrix, m: usize, perm: &Permutation) -> Result<Matrix> {
    check_perm(x, perm)?;
    if m >= x.cols() {
        return Err(Error::OutOfRange {
            index: m,
            len: x.cols(),
        });
    }
    let mut out = x.clone();
    permute_column_in_place(x, &mut out, m, perm);
    Ok(out)
}

/// Writes column `m` of `src`, reordered by `perm`, into `dst`.
pub(crate) fn permute_column_in_place(src: &Matrix, dst: &mut Matrix, m: usize, perm: &Permutation) {
    for i in 0..src.rows() {
        dst[(i, m)] = src[(perm.apply(i), m)];
    }
}

/// `X̃[i, :] = X[π(i), :]`.
pub fn permute_rows(x: &Matrix, perm: &Permutation) -> Result<Matrix> {
    check_perm(x, perm)?;
    Ok(x.select_rows(perm.mapping()))
}

fn check_perm(x: &Matrix, perm: &Permutation) -> Result<()> {
    if perm.len() != x.rows() {
        return Err(Error::InvalidArgument(format!(
            "permutation of {} elements applied to {} rows",
            perm.len(),
            x.rows()
        )));
    }
    Ok(())
}

/// `n×m` matrix of i.i.d. standard normals (ziggurat sampler).
pub fn gaussian_features<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Matrix {
    Matrix::from_fn(n, m, |_, _| rng.sample(StandardNormal))
}

/// Decodes the `k`-th unordered pair `(i, j)`, `i < j`, in row-major order.
fn pair_from_index(n: usize, k: usize) -> (usize, usize) {
    // row i starts at offset(i) = i·n − i(i+1)/2
    let offset = |i: usize| i * n - i * (i + 1) / 2;
    let (mut lo, mut hi) = (0usize, n - 1);
    while lo + 1 < hi {
        let mid = (lo + hi) / 2;
        if offset(mid) <= k {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let i = lo;
    (i, i + 1 + (k - offset(i)))
}

/// Uniform simple undirected unit-weight graph with `n_edges` edges: a
/// G(n, k) draw over unordered pairs.
pub fn er_graph<R: Rng + ?Sized>(n: usize, n_edges: usize, rng: &mut R) -> Result<CsrMatrix> {
    let pairs = n * n.saturating_sub(1) / 2;
    if n_edges > pairs {
        return Err(Error::InvalidArgument(format!(
            "{n_edges} edges exceed the {pairs} node pairs of a simple graph on {n} nodes"
        )));
    }
    let chosen = index::sample(rng, pairs, n_edges);
    let trip = chosen.into_iter().flat_map(|k| {
        let (i, j) = pair_from_index(n, k);
        [(i, j, 1.0), (j, i, 1.0)]
    });
    CsrMatrix::from_triplets(n, n, trip)
}

/// ER graph on the same node set with exactly as many edges as `adjacency`.
pub fn er_same_density<R: Rng + ?Sized>(adjacency: &CsrMatrix, rng: &mut R) -> Result<CsrMatrix> {
    crate::graph::validate_adjacency(adjacency)?;
    er_graph(adjacency.n_rows(), adjacency.nnz() / 2, rng)
}
