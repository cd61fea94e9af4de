//! Sparsity, smoothness and spectral connectivity measurements.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::numcore::{Scalar, Tensor};
use crate::supergraph::{laplacian, SuperGraph};

/// Fraction of exactly-zero entries.
pub fn sparsity<T: Scalar>(s: &Tensor<T>) -> f64 {
    let total = s.len();
    if total == 0 {
        return 1.0;
    }
    let nonzero = s.as_slice().iter().filter(|&&v| v != T::zero()).count();
    (total - nonzero) as f64 / total as f64
}

/// Mean over samples of `sparsity(original) - sparsity(mended)`; positive
/// when mending added entries.
pub fn delta_sparsity<T: Scalar>(originals: &[Tensor<T>], mendeds: &[Tensor<T>]) -> Result<f64> {
    if originals.len() != mendeds.len() {
        return Err(Error::contract(format!(
            "{} original matrices but {} mended",
            originals.len(),
            mendeds.len()
        )));
    }
    if originals.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = originals
        .iter()
        .zip(mendeds)
        .map(|(a, b)| sparsity(a) - sparsity(b))
        .sum();
    Ok(total / originals.len() as f64)
}

/// Dirichlet energy `tr(X^T L X)` of node signals `x` over weights `w`.
pub fn dirichlet<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<T> {
    let l = laplacian(w)?;
    if x.rows() != w.rows() {
        return Err(Error::Dimension {
            op: "dirichlet",
            left: x.shape().to_vec(),
            right: w.shape().to_vec(),
        });
    }
    let lx = l.matmul(x)?;
    Ok(x.as_slice().iter().zip(lx.as_slice()).map(|(&a, &b)| a * b).sum())
}

/// Eigenvalues of a symmetric matrix, ascending, by cyclic Jacobi rotations.
///
/// Converges when the largest off-diagonal magnitude falls below
/// `1e-12 * ||L||_F` (or machine precision for narrower types); more than
/// 100 sweeps is a numeric failure.
pub fn spectrum<T: Scalar>(l: &Tensor<T>) -> Result<Vec<T>> {
    if !l.is_square() {
        return Err(Error::contract(format!(
            "spectrum needs a square matrix, got {:?}",
            l.shape()
        )));
    }
    let fro = l.frobenius();
    if !l.is_symmetric(T::epsilon() * T::of(16.0) * fro.max(T::one())) {
        return Err(Error::contract("spectrum needs a symmetric matrix"));
    }
    let m = l.rows();
    let mut a: Vec<T> = l.as_slice().to_vec();
    let rel = T::of(1e-12).max(T::epsilon() * T::of(4.0));
    let threshold = rel * fro;
    let mut converged = false;
    for _ in 0..=100 {
        let mut off = T::zero();
        for p in 0..m {
            for q in p + 1..m {
                off = off.max(a[p * m + q].abs());
            }
        }
        if off <= threshold {
            converged = true;
            break;
        }
        for p in 0..m {
            for q in p + 1..m {
                let apq = a[p * m + q];
                if apq == T::zero() {
                    continue;
                }
                let app = a[p * m + p];
                let aqq = a[q * m + q];
                let theta = (aqq - app) / (T::of(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..m {
                    let akp = a[k * m + p];
                    let akq = a[k * m + q];
                    a[k * m + p] = c * akp - s * akq;
                    a[k * m + q] = s * akp + c * akq;
                }
                for k in 0..m {
                    let apk = a[p * m + k];
                    let aqk = a[q * m + k];
                    a[p * m + k] = c * apk - s * aqk;
                    a[q * m + k] = s * apk + c * aqk;
                }
            }
        }
    }
    if !converged {
        return Err(Error::numeric(
            "spectrum",
            format!("Jacobi did not converge within 100 sweeps (m = {m})"),
        ));
    }
    let mut eig: Vec<T> = (0..m).map(|i| a[i * m + i]).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
    Ok(eig)
}

/// Threshold under which an eigenvalue counts as zero.
pub fn zero_tolerance<T: Scalar>(eigenvalues: &[T]) -> T {
    let max = eigenvalues.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    T::of(1e-8) * max.max(T::one())
}

pub fn zero_count<T: Scalar>(eigenvalues: &[T]) -> usize {
    let tol = zero_tolerance(eigenvalues);
    eigenvalues.iter().filter(|v| v.abs() <= tol).count()
}

/// Second smallest Laplacian eigenvalue.
pub fn fiedler<T: Scalar>(l: &Tensor<T>) -> Result<T> {
    if l.rows() < 2 {
        return Err(Error::contract("Fiedler value needs at least 2 nodes"));
    }
    Ok(spectrum(l)?[1])
}

/// Connected components of the support graph `{(i, j) : w_ij > 0}`.
pub fn connected_components<T: Scalar>(w: &Tensor<T>) -> usize {
    let m = w.rows();
    let mut seen = vec![false; m];
    let mut count = 0;
    let mut queue = VecDeque::new();
    for s in 0..m {
        if seen[s] {
            continue;
        }
        count += 1;
        seen[s] = true;
        queue.push_back(s);
        while let Some(i) = queue.pop_front() {
            for j in 0..m {
                if !seen[j] && (w.get(i, j) > T::zero() || w.get(j, i) > T::zero()) {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    count
}

/// Spectral view of one adjacency matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralSummary {
    pub eigenvalues: Vec<f64>,
    pub zero_count: usize,
    pub fiedler: f64,
    pub component_count: usize,
}

impl SpectralSummary {
    pub fn of<T: Scalar>(w: &Tensor<T>) -> Result<Self> {
        let eig = spectrum(&laplacian(w)?)?;
        let zero_count = zero_count(&eig);
        Ok(Self {
            fiedler: eig.get(1).map_or(0.0, |v| v.to_f64_lossy()),
            eigenvalues: eig.iter().map(|v| v.to_f64_lossy()).collect(),
            zero_count,
            component_count: connected_components(w),
        })
    }

    /// Count of nonzero Laplacian eigenvalues.
    pub fn nonzero_count(&self) -> usize {
        self.eigenvalues.len() - self.zero_count
    }

    /// Spectral and BFS component counts agree.
    pub fn consistent(&self) -> bool {
        self.zero_count == self.component_count
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DiagnosticsOptions {
    /// Keep zero-padded nodes in the spectral summaries.
    pub include_padded: bool,
}

/// Before/after comparison of a supergraph and its mended adjacency.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsReport {
    pub rho_original: f64,
    pub rho_mended: f64,
    pub delta_rho: f64,
    pub h_original: f64,
    pub h_mended: f64,
    pub delta_h: f64,
    pub original: SpectralSummary,
    pub mended: SpectralSummary,
}

pub fn diagnose<T: Scalar>(
    sg: &SuperGraph<T>,
    mended: &Tensor<T>,
    opts: DiagnosticsOptions,
) -> Result<DiagnosticsReport> {
    let rho_original = sparsity(&sg.adjacency);
    let rho_mended = sparsity(mended);
    let h_original = dirichlet(&sg.features, &sg.adjacency)?.to_f64_lossy();
    let h_mended = dirichlet(&sg.features, mended)?.to_f64_lossy();
    let (orig, mend) = if opts.include_padded {
        (sg.adjacency.clone(), mended.clone())
    } else {
        let keep = sg.real_nodes();
        (sg.adjacency.select(&keep), mended.select(&keep))
    };
    Ok(DiagnosticsReport {
        rho_original,
        rho_mended,
        delta_rho: rho_original - rho_mended,
        h_original,
        h_mended,
        delta_h: h_mended - h_original,
        original: SpectralSummary::of(&orig)?,
        mended: SpectralSummary::of(&mend)?,
    })
}
