//! Post-hoc measurements over run directories: Wasserstein matrices between
//! agents' posteriors, Gromov–Wasserstein distances between representation
//! structures with an MDS embedding, RSA curves and acceptance networks.
//!
//! The numerical kernels are plain functions; [`pipeline`] reads run
//! directories and writes the CSV tables.

mod acceptance;
mod gw;
mod mds;
pub mod pipeline;
mod rsa;
mod wasserstein;

pub use acceptance::{acceptance_network, EdgeAcceptance};
pub use gw::{gw_distance, GwConfig, GwResult, Normalization};
pub use mds::{classical_mds, procrustes_align};
pub use rsa::{moving_average, pearson, rsa, rsa_timeseries, RsaPoint};
pub use wasserstein::{representation_structure, w2_gaussian, wasserstein_matrix, ReferenceSet};

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

const SYMMETRY_TOL: f64 = 1e-9;

/// Square, symmetric, nonnegative, finite, zero-diagonal matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    /// Validates `data` (row-major `n × n`) and symmetrizes it exactly.
    pub fn new(n: usize, mut data: Vec<f64>) -> Result<Self> {
        crate::error::check_dim("DistanceMatrix data", n * n, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("distance matrix"));
        }
        for i in 0..n {
            if data[i * n + i] != 0.0 {
                return Err(Error::contract(format!(
                    "distance matrix diagonal ({i},{i}) is not zero"
                )));
            }
            for j in i + 1..n {
                let (a, b) = (data[i * n + j], data[j * n + i]);
                if a < 0.0 || b < 0.0 {
                    return Err(Error::contract(format!("negative distance at ({i},{j})")));
                }
                if (a - b).abs() > SYMMETRY_TOL * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::contract(format!("distance matrix not symmetric at ({i},{j})")));
                }
                let m = 0.5 * (a + b);
                data[i * n + j] = m;
                data[j * n + i] = m;
            }
        }
        Ok(DistanceMatrix { n, data })
    }

    pub fn zeros(n: usize) -> Self {
        DistanceMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    /// Pairwise Euclidean distances between equally sized points.
    pub fn euclidean<P: AsRef<[f64]>>(points: &[P]) -> Self {
        let n = points.len();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = crate::numerics::euclidean(points[i].as_ref(), points[j].as_ref());
                data[i * n + j] = d;
                data[j * n + i] = d;
            }
        }
        DistanceMatrix { n, data }
    }

    /// Builds from the strict upper triangle, `f(i, j)` for `i < j`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = f(i, j);
                data[i * n + j] = d;
                data[j * n + i] = d;
            }
        }
        DistanceMatrix::new(n, data)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        DistanceMatrix {
            n: self.n,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Strict upper triangle, row by row.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| self.data[i * n + j])
            .collect()
    }

    /// Rows and columns reordered: entry `(i, j)` of the result is `(perm[i], perm[j])`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = self.get(perm[i], perm[j]);
            }
        }
        DistanceMatrix { n, data }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        DenseMatrix::from_row_major(self.n, self.n, self.data.clone()).expect("square")
    }
}
