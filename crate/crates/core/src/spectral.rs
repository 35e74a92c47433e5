//! Self-loops, symmetric degree normalisation, the normalised Laplacian
//! (high-pass) and the GCN propagation operator (low-pass).
//!
//! With `Ã = A + I` and `D̃ = diag(Ã·𝟙)`:
//!
//! ```text
//! P = D̃^{-1/2} Ã D̃^{-1/2}        L̂ = I − P
//! ```
//!
//! Both are symmetric and share eigenvectors; the spectrum of `L̂` lies in
//! `[0, 2]` and `D̃^{1/2}·𝟙` spans its kernel.

use crate::error::{Error, Result};
use crate::graph_embed::SparseAdjacency;
use crate::numkit::{matmul, Mat};

/// `L̂ = I − D̃^{-1/2} Ã D̃^{-1/2}` together with the degrees of `Ã`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedLaplacian {
    l: Mat,
    deg: Vec<f64>,
}

impl NormalizedLaplacian {
    pub fn mat(&self) -> &Mat {
        &self.l
    }

    pub fn degrees(&self) -> &[f64] {
        &self.deg
    }

    /// `D̃^{1/2}·𝟙`, the smoothest graph signal.
    pub fn sqrt_degree_signal(&self) -> Vec<f64> {
        self.deg.iter().map(|d| d.sqrt()).collect()
    }
}

/// `P = D̃^{-1/2} Ã D̃^{-1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationOperator {
    p: Mat,
}

impl PropagationOperator {
    pub fn mat(&self) -> &Mat {
        &self.p
    }
}

/// Returns `Ã = A + I` and its row sums. Every degree is at least 1.
pub fn add_self_loops(a: &SparseAdjacency) -> (Mat, Vec<f64>) {
    let mut atilde = a.mat().clone();
    for i in 0..atilde.rows() {
        atilde[(i, i)] += 1.0;
    }
    let deg = atilde.row_sums();
    (atilde, deg)
}

fn normalized_adjacency(a: &SparseAdjacency) -> (Mat, Vec<f64>) {
    let (mut m, deg) = add_self_loops(a);
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let n = m.rows();
    for (i, row) in m.as_mut_slice().chunks_exact_mut(n.max(1)).enumerate() {
        // the scale is formed first so that entry (j, i) rounds identically
        for (v, &sj) in row.iter_mut().zip(&inv_sqrt) {
            *v *= inv_sqrt[i] * sj;
        }
    }
    (m, deg)
}

pub fn propagation_operator(a: &SparseAdjacency) -> PropagationOperator {
    PropagationOperator {
        p: normalized_adjacency(a).0,
    }
}

pub fn normalized_laplacian(a: &SparseAdjacency) -> NormalizedLaplacian {
    let (mut l, deg) = normalized_adjacency(a);
    for v in l.as_mut_slice() {
        *v = -*v;
    }
    for i in 0..l.rows() {
        l[(i, i)] += 1.0;
    }
    NormalizedLaplacian { l, deg }
}

/// Builds `P` and `L̂` from one normalisation pass so that `P + L̂ = I`
/// holds entrywise up to a single rounding.
pub fn operators(a: &SparseAdjacency) -> (PropagationOperator, NormalizedLaplacian) {
    let (p, deg) = normalized_adjacency(a);
    let mut l = p.scale(-1.0);
    for i in 0..l.rows() {
        l[(i, i)] += 1.0;
    }
    (PropagationOperator { p }, NormalizedLaplacian { l, deg })
}

/// High-pass pre-filter `Z⁰ = L̂·X`.
pub fn laplacian_prefilter(l: &NormalizedLaplacian, x: &Mat) -> Result<Mat> {
    matmul(&l.l, x)
}

/// Frequency response `λ(1−λ)^k` of one Laplacian pass followed by `k`
/// weight-free linear propagation steps.
pub fn cascade_response(lambda: f64, k: u32) -> Result<f64> {
    if !(0.0..=2.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!(
            "graph frequency must lie in [0, 2], got {lambda}"
        )));
    }
    Ok(lambda * (1.0 - lambda).powi(k as i32))
}
