#![allow(dead_code)]

use cocreate::numerics::RngStream;

pub mod grad;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Absolute slack for components whose magnitude is at the FD noise floor.
pub const FD_ABS_FLOOR: f64 = 1e-8;

/// Central difference of `f` w.r.t. `x[i]`.
pub fn central_diff(x: &mut [f64], i: usize, f: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + FD_STEP;
    let up = f(x);
    x[i] = orig - FD_STEP;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * FD_STEP)
}

/// Compares `analytic` with finite differences on the given indices.
/// Returns the worst relative error; components smaller than
/// `FD_ABS_FLOOR / FD_REL_TOL` are measured against that magnitude instead.
pub fn fd_check(x: &[f64], analytic: &[f64], indices: &[usize], f: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    let mut x = x.to_vec();
    let mut worst: f64 = 0.0;
    for &i in indices {
        let numeric = central_diff(&mut x, i, f);
        let a = analytic[i];
        let err = (a - numeric).abs();
        let scale = a.abs().max(numeric.abs()).max(FD_ABS_FLOOR / FD_REL_TOL);
        worst = worst.max(err / scale);
    }
    worst
}

/// `count` distinct indices in `0..n` (all of them when `count >= n`).
pub fn sample_indices(n: usize, count: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if count >= n {
        return idx;
    }
    rng.shuffle(&mut idx);
    idx.truncate(count);
    idx
}
