use nalgebra::{DMatrix, SymmetricEigen, SVD};

use super::DistanceMatrix;
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// Classical (Torgerson) MDS: eigen-decomposes `B = −½·J D² J` and returns
/// `n × dim` coordinates `vᵢ·sqrt(max(λᵢ, 0))` for the `dim` largest
/// eigenvalues. Each column is flipped so its largest-magnitude entry is positive.
pub fn classical_mds(d: &DistanceMatrix, dim: usize) -> Result<DenseMatrix> {
    let n = d.len();
    if dim == 0 || dim > n {
        return Err(Error::contract(format!("cannot embed {n} points in {dim} dimensions")));
    }
    if d.max() == 0.0 {
        return Ok(DenseMatrix::zeros(n, dim));
    }
    let sq = DMatrix::from_fn(n, n, |i, j| d.get(i, j).powi(2));
    let row_means: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + grand));
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut out = DenseMatrix::zeros(n, dim);
    for (c, &k) in order.iter().take(dim).enumerate() {
        let scale = eig.eigenvalues[k].max(0.0).sqrt();
        let col = eig.eigenvectors.column(k);
        let pivot = (0..n).fold(0, |best, i| if col[i].abs() > col[best].abs() { i } else { best });
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            out.set(i, c, sign * scale * col[i]);
        }
    }
    Ok(out)
}

/// Rotates/reflects `moving` (about its centroid) onto `reference`, returning
/// the aligned copy. The translation is restored to `reference`'s centroid.
pub fn procrustes_align(reference: &DenseMatrix, moving: &DenseMatrix) -> Result<DenseMatrix> {
    let (n, d) = (reference.rows(), reference.cols());
    if moving.rows() != n || moving.cols() != d {
        return Err(Error::contract("procrustes_align needs equally shaped embeddings"));
    }
    let x = DMatrix::from_row_slice(n, d, reference.as_slice());
    let y = DMatrix::from_row_slice(n, d, moving.as_slice());
    let (cx, cy) = (x.row_mean(), y.row_mean());
    let xc = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - cx[j]);
    let yc = DMatrix::from_fn(n, d, |i, j| y[(i, j)] - cy[j]);
    let svd = SVD::new(yc.transpose() * &xc, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::contract("procrustes SVD failed")),
    };
    let aligned = yc * (u * v_t);
    let mut out = DenseMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            out.set(i, j, aligned[(i, j)] + cx[j]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn embedded_distances(x: &DenseMatrix) -> DistanceMatrix {
        let rows: Vec<Vec<f64>> = (0..x.rows()).map(|i| x.row(i).to_vec()).collect();
        DistanceMatrix::euclidean(&rows)
    }

    #[test]
    fn collinear_points() {
        let d = DistanceMatrix::euclidean(&[[0.0], [1.0], [2.0]]);
        let x = classical_mds(&d, 2).unwrap();
        let e = embedded_distances(&x);
        for (a, b) in e.as_slice().iter().zip(d.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
        // second dimension carries no variance
        assert!((0..3).all(|i| x.get(i, 1).abs() < 1e-7));
    }

    #[test]
    fn zero_matrix_maps_to_origin() {
        let x = classical_mds(&DistanceMatrix::zeros(4), 2).unwrap();
        assert!(x.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sign_convention() {
        let d = DistanceMatrix::euclidean(&[[0.0, 0.0], [3.0, 1.0], [-1.0, 2.0], [0.5, -2.0]]);
        let x = classical_mds(&d, 2).unwrap();
        for c in 0..2 {
            let col: Vec<f64> = (0..4).map(|i| x.get(i, c)).collect();
            let big = col
                .iter()
                .copied()
                .fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn procrustes_undoes_rotation_and_reflection() {
        let pts = [[0.0, 0.0], [2.0, 0.5], [1.0, 3.0], [-1.0, 1.0]];
        let x = DenseMatrix::from_rows(&pts, 2).unwrap();
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let moved: Vec<Vec<f64>> = pts
            .iter()
            .map(|p| vec![c * p[0] - s * p[1] + 5.0, -(s * p[0] + c * p[1])])
            .collect();
        let y = DenseMatrix::from_rows(&moved, 2).unwrap();
        let aligned = procrustes_align(&x, &y).unwrap();
        for (a, b) in aligned.as_slice().iter().zip(x.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
