//! Numerical certification of the GCN error bounds.
//!
//! Both bounds compare a bias-free two-layer GCN `f(X; A)` with ReLU against
//! its output on the idealized inputs `(X*, A*)`, where `X*` is the class-mean
//! projection of the features and `A*` keeps only same-class edges.

use std::path::Path;

use rand::Rng;
use serde::Serialize;

use crate::csr::CsrMatrix;
use crate::data::{generate_sbm, SbmConfig};
use crate::error::{Error, Result};
use crate::graph::{class_mean_projection, class_stats, idealize_graph, normalize, Graph, NormKind};
use crate::matrix::Matrix;
use crate::models::theory_gcn;
use crate::perturb::{permute_rows, Permutation};
use crate::rng::{self, tag};

/// Largest node count accepted by the dense evaluators.
pub const DENSE_LIMIT: usize = 200;

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 100_000;

/// Largest singular value by power iteration on `MᵀM`.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    if !m.is_finite() {
        return Err(Error::InvalidArgument("spectral norm of a non-finite matrix".into()));
    }
    if m.rows() == 0 || m.cols() == 0 || m.frobenius() == 0.0 {
        return Ok(0.0);
    }
    let gram = m.matmul_tn(m)?;
    let n = gram.rows();
    // fixed, generic start vector
    let mut state = 0x9E37_79B9_7F4A_7C15u64;
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            0.5 + (state >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect();
    normalize_vec(&mut v);
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let mut w = vec![0.0; n];
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = gram.row(i).iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // start vector in the null space; fall back to a basis sweep
            return Ok(basis_sweep(&gram).sqrt());
        }
        w.iter_mut().for_each(|x| *x /= norm);
        let converged = (norm - lambda).abs() <= POWER_TOL * norm;
        lambda = norm;
        v = w;
        if converged {
            return Ok(lambda.sqrt());
        }
    }
    Err(Error::NoConvergence(POWER_MAX_ITER))
}

fn normalize_vec(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

fn basis_sweep(gram: &Matrix) -> f64 {
    (0..gram.rows()).map(|i| gram[(i, i)]).fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct BoundInputs {
    pub graph: Graph,
    pub w1: Matrix,
    pub w2: Matrix,
    /// Lipschitz constant of the nonlinearity; 1 for ReLU.
    pub tau: f64,
    /// Confidence parameter of the permuted bound.
    pub t: f64,
}

impl BoundInputs {
    pub fn new(graph: Graph, w1: Matrix, w2: Matrix) -> Self {
        Self {
            graph,
            w1,
            w2,
            tau: 1.0,
            t: 2.0,
        }
    }

    pub fn omega(&self) -> Result<f64> {
        Ok(spectral_norm(&self.w1)?.max(spectral_norm(&self.w2)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    pub lhs: f64,
    pub rhs_term1: f64,
    pub rhs_term2: f64,
    pub rhs_total: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub t: f64,
    pub omega: f64,
    pub satisfied: bool,
}

/// Quantities shared by both bounds.
struct Prepared {
    rw: CsrMatrix,
    rw_star: CsrMatrix,
    degrees: Vec<f64>,
    delta_f: f64,
    scale: f64,
    n: usize,
}

fn prepare(inputs: &BoundInputs) -> Result<Prepared> {
    let g = &inputs.graph;
    let n = g.n_nodes();
    if n > DENSE_LIMIT {
        return Err(Error::TooLarge { n, limit: DENSE_LIMIT });
    }
    class_stats(g)?;
    let (a_star, delta) = idealize_graph(g);
    let norm = normalize(g.adjacency(), NormKind::RandomWalk)?;
    let rw_star = normalize(&a_star, NormKind::RandomWalk)?.matrix;
    let omega = inputs.omega()?;
    Ok(Prepared {
        rw: norm.matrix,
        rw_star,
        degrees: norm.degrees,
        delta_f: delta.frobenius_sq().sqrt(),
        scale: inputs.tau * inputs.tau * omega * omega,
        n,
    })
}

/// `α = max_m max_{k,l} (X_km − X_lm)²`
pub fn alpha(x: &Matrix) -> f64 {
    (0..x.cols())
        .map(|m| {
            let col = x.column(m);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            (hi - lo) * (hi - lo)
        })
        .fold(0.0, f64::max)
}

/// `γ = 2/(N−1)·(‖X‖_F² − ‖Xᵀ1‖²/N) + α·t·M·√N`
pub fn gamma(x: &Matrix, t: f64) -> f64 {
    let (n, m) = x.shape();
    let col_sums_sq: f64 = (0..m)
        .map(|j| {
            let s: f64 = x.column(j).iter().sum();
            s * s
        })
        .sum();
    let variance = if n > 1 {
        // clamp the rounding residue of a zero-variance matrix
        (2.0 / (n as f64 - 1.0) * (x.frobenius_sq() - col_sums_sq / n as f64)).max(0.0)
    } else {
        0.0
    };
    variance + alpha(x) * t * m as f64 * (n as f64).sqrt()
}

/// `‖vec(Y P⁻¹ Yᵀ − D̃⁻¹ A)‖₁`, evaluated densely.
pub fn alignment_l1(graph: &Graph) -> Result<f64> {
    let stats = class_stats(graph)?;
    let n = graph.n_nodes();
    let a = graph.adjacency().to_dense();
    let degrees = graph.degrees();
    let mut proj = stats.one_hot.clone();
    for c in 0..graph.n_classes() {
        for i in 0..n {
            proj[(i, c)] *= stats.inv_counts[c];
        }
    }
    let proj = proj.matmul_nt(&stats.one_hot)?;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            total += (proj[(i, j)] - a[(i, j)] / (degrees[i] + 1.0)).abs();
        }
    }
    Ok(total)
}

fn pair_distances(x: &Matrix) -> Matrix {
    let n = x.rows();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

fn finish(lhs: f64, term1: f64, term2: f64, gamma: f64, alpha: f64, t: f64, omega: f64) -> BoundReport {
    let rhs_total = term1 + term2;
    BoundReport {
        lhs,
        rhs_term1: term1,
        rhs_term2: term2,
        rhs_total,
        gamma,
        alpha,
        t,
        omega,
        satisfied: lhs <= rhs_total,
    }
}

fn term1(p: &Prepared, x: &Matrix) -> f64 {
    p.scale * (1.0 + (p.n as f64).sqrt()) * p.delta_f * x.frobenius()
}

/// Evaluates both sides of the unpermuted bound.
pub fn idealization_bound(inputs: &BoundInputs) -> Result<BoundReport> {
    let p = prepare(inputs)?;
    let g = &inputs.graph;
    let x = g.features();
    let (labels, c) = (g.labels(), g.n_classes());

    let z = theory_gcn(&p.rw, x, &inputs.w1, &inputs.w2)?;
    let x_star = class_mean_projection(x, labels, c)?;
    let z_star = theory_gcn(&p.rw_star, &x_star, &inputs.w1, &inputs.w2)?;
    let lhs = z_star.sub(&z)?.frobenius();

    let counts = class_stats(g)?.counts;
    let a = g.adjacency().to_dense();
    let dist = pair_distances(x);
    let n = p.n;
    let mut sum = 0.0;
    for class in 0..c {
        let inv_p = 1.0 / counts[class] as f64;
        for i in 0..n {
            let yi = (labels[i] == class) as u8 as f64;
            let inv_d = 1.0 / (p.degrees[i] + 1.0);
            for j in 0..n {
                let yj = (labels[j] == class) as u8 as f64;
                sum += (yi * yj * inv_p - a[(i, j)] * inv_d).abs() * dist[(i, j)];
            }
        }
    }
    let omega = inputs.omega()?;
    Ok(finish(
        lhs,
        term1(&p, x),
        p.scale * sum,
        gamma(x, inputs.t),
        alpha(x),
        inputs.t,
        omega,
    ))
}

/// Evaluates both sides of the bound for row-permuted features `X̃ = ΠX`.
pub fn permutation_bound(inputs: &BoundInputs, perm: &Permutation) -> Result<BoundReport> {
    let p = prepare(inputs)?;
    let g = &inputs.graph;
    let x = g.features();
    let x_perm = permute_rows(x, perm)?;

    let z = theory_gcn(&p.rw, &x_perm, &inputs.w1, &inputs.w2)?;
    let x_perm_star = class_mean_projection(&x_perm, g.labels(), g.n_classes())?;
    let z_star = theory_gcn(&p.rw_star, &x_perm_star, &inputs.w1, &inputs.w2)?;
    let lhs = z_star.sub(&z)?.frobenius();

    let gam = gamma(x, inputs.t);
    let term2 = p.scale * gam.sqrt() * alignment_l1(g)?;
    let omega = inputs.omega()?;
    Ok(finish(lhs, term1(&p, x), term2, gam, alpha(x), inputs.t, omega))
}

/// Small random bias-free GCN instance: SBM graph with at most 30 nodes,
/// 8 features and 3 classes, Glorot-uniform weights.
pub fn random_instance(seed: u64, t: f64) -> Result<BoundInputs> {
    let mut r = rng::substream(seed, &[tag::THEORY]);
    let n_classes = r.random_range(1..=3);
    let n_nodes = r.random_range(2 * n_classes..=30);
    let n_feats = r.random_range(1..=8);
    let hidden = r.random_range(1..=8);
    let n_out = r.random_range(1..=4);
    let n_informative = r.random_range(0..=n_feats);
    let cfg = SbmConfig {
        n_nodes,
        n_classes,
        p_in: r.random_range(0.0..=0.6),
        p_out: r.random_range(0.0..=0.3),
        n_informative,
        n_noise: n_feats - n_informative,
        class_mean_sep: r.random_range(0.0..=3.0),
        feature_std: r.random_range(0.1..=1.5),
        feature_mode: crate::data::FeatureMode::Homophilic,
        seed: rng::derive_seed(seed, &[tag::THEORY, 1]),
    };
    let graph = generate_sbm(&cfg)?;
    let mut glorot = |rows: usize, cols: usize| {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        Matrix::from_fn(rows, cols, |_, _| r.random_range(-bound..=bound))
    };
    let w1 = glorot(n_feats, hidden);
    let w2 = glorot(hidden, n_out);
    Ok(BoundInputs {
        t,
        ..BoundInputs::new(graph, w1, w2)
    })
}

/// One row of `bounds.csv`.
#[derive(Debug, Clone, Serialize)]
pub struct BoundRow {
    pub seed: u64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "C")]
    pub c: usize,
    pub lhs: f64,
    pub rhs_t1: f64,
    pub rhs_t2: f64,
    pub rhs_total: f64,
    pub satisfied: bool,
    pub gamma: f64,
    pub alpha: f64,
    pub t: f64,
}

impl BoundRow {
    pub fn new(seed: u64, inputs: &BoundInputs, r: &BoundReport) -> Self {
        let g = &inputs.graph;
        Self {
            seed,
            n: g.n_nodes(),
            m: g.n_feats(),
            c: g.n_classes(),
            lhs: r.lhs,
            rhs_t1: r.rhs_term1,
            rhs_t2: r.rhs_term2,
            rhs_total: r.rhs_total,
            satisfied: r.satisfied,
            gamma: r.gamma,
            alpha: r.alpha,
            t: r.t,
        }
    }
}

pub fn write_bounds_csv(path: &Path, rows: &[BoundRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Satisfaction of the permuted bound on one instance.
#[derive(Debug, Clone, Serialize)]
pub struct PermutedRow {
    pub seed: u64,
    pub n_perms: usize,
    pub n_satisfied: usize,
    pub rate: f64,
    pub max_ratio: f64,
}

pub fn write_permuted_csv(path: &Path, rows: &[PermutedRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Runs the permuted bound over `n_perms` uniform permutations.
pub fn permuted_satisfaction(seed: u64, inputs: &BoundInputs, n_perms: usize) -> Result<PermutedRow> {
    let mut r = rng::substream(seed, &[tag::THEORY, 2]);
    let mut n_satisfied = 0;
    let mut max_ratio: f64 = 0.0;
    for _ in 0..n_perms {
        let perm = crate::perturb::sample_permutation(inputs.graph.n_nodes(), &mut r);
        let rep = permutation_bound(inputs, &perm)?;
        n_satisfied += rep.satisfied as usize;
        if rep.rhs_total > 0.0 {
            max_ratio = max_ratio.max(rep.lhs / rep.rhs_total);
        } else if rep.lhs > 0.0 {
            max_ratio = f64::INFINITY;
        }
    }
    Ok(PermutedRow {
        seed,
        n_perms,
        n_satisfied,
        rate: if n_perms == 0 { f64::NAN } else { n_satisfied as f64 / n_perms as f64 },
        max_ratio,
    })
}
