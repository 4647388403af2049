use serde::Serialize;

use super::DistanceMatrix;
use crate::error::{Error, Result};

/// Pearson correlation; `None` when either side has (numerically) zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    // rounding in the mean leaves residue ~ε² relative to the raw energy
    let floor = |v: &[f64]| 1e-24 * v.iter().map(|a| a * a).sum::<f64>();
    if sxx <= floor(x) || syy <= floor(y) {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation of the strict upper triangles of two distance matrices.
/// `None` flags a constant triangle.
pub fn rsa(d_obs: &DistanceMatrix, d_rep: &DistanceMatrix) -> Result<Option<f64>> {
    if d_obs.len() != d_rep.len() {
        return Err(Error::Dimension {
            context: "rsa",
            expected: d_obs.len(),
            got: d_rep.len(),
        });
    }
    Ok(pearson(&d_obs.upper_triangle(), &d_rep.upper_triangle()))
}

/// Trailing moving average over steps `(t − window, t]`, skipping missing
/// values inside the window. A missing value at `t` itself stays missing.
pub fn moving_average(series: &[(usize, Option<f64>)], window: usize) -> Vec<(usize, Option<f64>)> {
    let window = window.max(1);
    series
        .iter()
        .enumerate()
        .map(|(i, &(t, v))| {
            if v.is_none() {
                return (t, None);
            }
            let (mut sum, mut n) = (0.0, 0usize);
            for &(s, w) in series[..=i].iter().rev() {
                if s + window <= t {
                    break;
                }
                if let Some(w) = w {
                    sum += w;
                    n += 1;
                }
            }
            (t, Some(sum / n as f64))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RsaPoint {
    pub step: usize,
    /// Smoothed mean across agents × seeds; `None` marks a gap.
    pub mean: Option<f64>,
    /// Smoothed standard deviation across agents × seeds.
    pub std: Option<f64>,
}

/// Per step, the mean and (population) standard deviation of the pooled RSA
/// values, each smoothed with a trailing `window`-step moving average.
/// `per_step` must be sorted by step; an empty value list is a gap.
pub fn rsa_timeseries(per_step: &[(usize, Vec<f64>)], window: usize) -> Vec<RsaPoint> {
    let stats: Vec<(usize, Option<(f64, f64)>)> = per_step
        .iter()
        .map(|(t, vs)| {
            if vs.is_empty() {
                return (*t, None);
            }
            let n = vs.len() as f64;
            let m = vs.iter().sum::<f64>() / n;
            let var = vs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            (*t, Some((m, var.sqrt())))
        })
        .collect();
    let means = moving_average(
        &stats.iter().map(|(t, s)| (*t, s.map(|s| s.0))).collect::<Vec<_>>(),
        window,
    );
    let stds = moving_average(
        &stats.iter().map(|(t, s)| (*t, s.map(|s| s.1))).collect::<Vec<_>>(),
        window,
    );
    means
        .into_iter()
        .zip(stds)
        .map(|((step, mean), (_, std))| RsaPoint { step, mean, std })
        .collect()
}
