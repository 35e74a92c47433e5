//! Order-free sparse graph over node features.
//!
//! Nodes are the `d = N·h·w` frame-cell feature vectors. Edges come only from
//! feature affinity (the Gram matrix `X·Xᵀ`), never from frame order, so
//! permuting frames conjugates the graph by the same permutation. Each row is
//! then thresholded against `beta` times its own mean affinity and the result
//! is symmetrised.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Mat;

/// Node features `X` (`d x C`): finite, nonnegative, at least two nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatureMatrix(Mat);

impl NodeFeatureMatrix {
    pub fn new(x: Mat) -> Result<Self> {
        if x.rows() < 2 {
            return Err(Error::InvalidArgument(format!(
                "node feature matrix needs at least 2 nodes, got {}",
                x.rows()
            )));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite {
                stage: "node features",
            });
        }
        if x.as_slice().iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument(
                "node features must be nonnegative".into(),
            ));
        }
        Ok(Self(x))
    }

    pub fn nodes(&self) -> usize {
        self.0.rows()
    }

    pub fn channels(&self) -> usize {
        self.0.cols()
    }

    pub fn mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_mat(self) -> Mat {
        self.0
    }
}

/// Gram affinity `M = X·Xᵀ`; exactly symmetric by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix(Mat);

impl AffinityMatrix {
    pub fn mat(&self) -> &Mat {
        &self.0
    }
}

/// Thresholded, symmetrised, nonnegative adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAdjacency {
    a: Mat,
    beta: f64,
    nnz: usize,
}

impl SparseAdjacency {
    /// Wraps an existing adjacency after checking symmetry and sign.
    pub fn from_mat(a: Mat, beta: f64) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::Shape {
                op: "adjacency",
                left: a.shape(),
                right: (a.cols(), a.rows()),
            });
        }
        let asym = a.max_asymmetry();
        if asym > 1e-12 {
            return Err(Error::NotSymmetric { tol: 1e-12, asym });
        }
        if a.as_slice().iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "adjacency entries must be finite and nonnegative".into(),
            ));
        }
        let nnz = count_nonzero(&a);
        Ok(Self { a, beta, nnz })
    }

    pub fn mat(&self) -> &Mat {
        &self.a
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn nnz(&self) -> usize {
        self.nnz
    }

    pub fn nodes(&self) -> usize {
        self.a.rows()
    }
}

/// Graph construction knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphOptions {
    pub beta: f64,
    /// Keep the Gram diagonal (squared node norms) as self-edges instead of
    /// zeroing it; the propagation operator adds one unit self-loop regardless.
    pub keep_gram_diagonal: bool,
}

impl GraphOptions {
    pub fn new(beta: f64) -> Self {
        Self {
            beta,
            keep_gram_diagonal: false,
        }
    }
}

pub fn build_affinity(x: &NodeFeatureMatrix) -> AffinityMatrix {
    let x = x.mat();
    let d = x.rows();
    let mut m = x.matmul_t(x).expect("X·Xᵀ shapes agree");
    // mirror the upper triangle so symmetry is exact by construction
    let data = m.as_mut_slice();
    for p in 0..d {
        for q in (p + 1)..d {
            data[q * d + p] = data[p * d + q];
        }
    }
    AffinityMatrix(m)
}

pub fn adaptive_threshold(aam: &AffinityMatrix, beta: f64) -> Result<SparseAdjacency> {
    adaptive_threshold_with(aam, &GraphOptions::new(beta))
}

/// Keeps `(i, j)` iff `M[i][j] > beta · mean_j M[i][j]` (mean over the whole
/// row, diagonal included; ties are dropped), applies the diagonal policy and
/// returns `(A + Aᵀ) / 2`.
pub fn adaptive_threshold_with(aam: &AffinityMatrix, opts: &GraphOptions) -> Result<SparseAdjacency> {
    if !(opts.beta > 0.0) || !opts.beta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "beta must be positive and finite, got {}",
            opts.beta
        )));
    }
    let m = aam.mat();
    let d = m.rows();
    let cuts: Vec<f64> = (0..d)
        .map(|i| opts.beta * (m.row(i).iter().sum::<f64>() / d as f64))
        .collect();
    if !m.is_finite() || cuts.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite { stage: "affinity" });
    }
    // M is symmetric, so the mirrored entry of (i, j) is M[i][j] itself and
    // the whole pass can run along rows.
    let mut a = Mat::zeros(d, d);
    let out = a.as_mut_slice();
    for i in 0..d {
        let ci = cuts[i];
        for ((o, &v), &cj) in out[i * d..(i + 1) * d].iter_mut().zip(m.row(i)).zip(&cuts) {
            let kij = if v > ci { v } else { 0.0 };
            let kji = if v > cj { v } else { 0.0 };
            *o = 0.5 * (kij + kji);
        }
        if !opts.keep_gram_diagonal {
            out[i * d + i] = 0.0;
        }
    }
    let nnz = count_nonzero(&a);
    Ok(SparseAdjacency {
        a,
        beta: opts.beta,
        nnz,
    })
}

pub fn build_graph(x: &NodeFeatureMatrix, beta: f64) -> Result<SparseAdjacency> {
    build_graph_with(x, &GraphOptions::new(beta))
}

pub fn build_graph_with(x: &NodeFeatureMatrix, opts: &GraphOptions) -> Result<SparseAdjacency> {
    adaptive_threshold_with(&build_affinity(x), opts)
}

fn count_nonzero(m: &Mat) -> usize {
    m.as_slice().iter().filter(|&&v| v != 0.0).count()
}
