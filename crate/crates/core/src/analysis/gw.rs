//! Entropic Gromov–Wasserstein with the squared loss: projected mirror
//! descent where each step is a stabilized Sinkhorn solve against the
//! linearized cost `L(C₁, C₂) ⊗ T = const − 2·C₁ T C₂ᵀ`.
//!
//! The entropic plan is blurred by `ε`, so its unregularized cost stays
//! visibly above zero even for isometric inputs. For equal sizes the plan is
//! therefore polished by Frank–Wolfe on the unregularized objective, whose
//! linear subproblem is an assignment problem; this can only lower the cost.

use serde::{Deserialize, Serialize};

use super::DistanceMatrix;
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

/// How the two matrices are rescaled before solving.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    /// Divide both by the larger of their maxima, so the larger one has unit
    /// max entry and a uniform stretch of one of them still registers.
    Joint,
    /// Use the matrices as given (the caller has put them on a common scale).
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GwConfig {
    pub epsilon: f64,
    pub max_outer: usize,
    /// Stop when the plan moves less than this in L1 between outer steps.
    pub outer_tol: f64,
    /// L1 marginal violation at which a Sinkhorn solve stops.
    pub inner_tol: f64,
    pub max_inner: usize,
    /// Frank–Wolfe polishing steps after the entropic phase (0 disables).
    pub polish_steps: usize,
    pub normalization: Normalization,
}

impl Default for GwConfig {
    fn default() -> Self {
        GwConfig {
            epsilon: 5e-3,
            max_outer: 200,
            outer_tol: 1e-8,
            inner_tol: 1e-9,
            max_inner: 5000,
            polish_steps: 200,
            normalization: Normalization::Joint,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GwResult {
    /// Unregularized transport cost `Σ (C₁[i,j] − C₂[a,b])² T[i,a] T[j,b]`
    /// of the returned plan, on the normalized scale.
    pub value: f64,
    pub plan: DenseMatrix,
    /// Both the outer iteration and the last Sinkhorn solve met their tolerances.
    pub converged: bool,
    pub outer_iterations: usize,
    /// Frank–Wolfe steps that moved the plan.
    pub polish_iterations: usize,
}

/// Entropic GW between two metric spaces with uniform weights. Returns the
/// lowest-cost plan seen along the iteration.
pub fn gw_distance(d1: &DistanceMatrix, d2: &DistanceMatrix, cfg: &GwConfig) -> Result<GwResult> {
    let (n, m) = (d1.len(), d2.len());
    if n == 0 || m == 0 {
        return Err(Error::contract("gw_distance needs nonempty matrices"));
    }
    if !(cfg.epsilon > 0.0) {
        return Err(Error::contract("gw_distance needs a positive epsilon"));
    }
    let scale = match cfg.normalization {
        Normalization::Joint => {
            let top = d1.max().max(d2.max());
            if top > 0.0 {
                1.0 / top
            } else {
                1.0
            }
        }
        Normalization::None => 1.0,
    };
    let c1 = d1.scaled(scale).to_dense();
    let c2 = d2.scaled(scale).to_dense();
    let (p, q) = (1.0 / n as f64, 1.0 / m as f64);

    let row_sq: Vec<f64> = (0..n)
        .map(|i| c1.row(i).iter().map(|v| v * v).sum::<f64>() * p)
        .collect();
    let col_sq: Vec<f64> = (0..m)
        .map(|a| c2.row(a).iter().map(|v| v * v).sum::<f64>() * q)
        .collect();
    let linearized = |t: &DenseMatrix| -> Result<DenseMatrix> {
        let ct = c1.matmul(t)?.matmul(&c2)?; // C₂ is symmetric
        let mut out = DenseMatrix::zeros(n, m);
        for i in 0..n {
            for a in 0..m {
                out.set(i, a, row_sq[i] + col_sq[a] - 2.0 * ct.get(i, a));
            }
        }
        Ok(out)
    };
    let cost = |tens: &DenseMatrix, t: &DenseMatrix| -> f64 {
        tens.as_slice()
            .iter()
            .zip(t.as_slice())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            .max(0.0)
    };

    let mut plan = DenseMatrix::from_row_major(n, m, vec![p * q; n * m])?;
    let mut tens = linearized(&plan)?;
    let mut best = GwResult {
        value: cost(&tens, &plan),
        plan: plan.clone(),
        converged: false,
        outer_iterations: 0,
        polish_iterations: 0,
    };
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=cfg.max_outer {
        iterations = it;
        let (next, inner_ok) = sinkhorn_stabilized(&tens, p, q, cfg, &mut f, &mut g);
        let moved: f64 = next
            .as_slice()
            .iter()
            .zip(plan.as_slice())
            .map(|(a, b)| (a - b).abs())
            .sum();
        plan = next;
        tens = linearized(&plan)?;
        let value = cost(&tens, &plan);
        if value < best.value || it == 1 {
            best.value = value;
            best.plan = plan.clone();
        }
        if moved < cfg.outer_tol {
            converged = inner_ok;
            break;
        }
    }
    best.converged = converged;
    best.outer_iterations = iterations;
    if n == m && cfg.polish_steps > 0 {
        let mut tens = linearized(&best.plan)?;
        for _ in 0..cfg.polish_steps {
            // vertex of the transport polytope minimizing ⟨∇, ·⟩
            let perm = min_cost_assignment(&tens);
            let neg: Vec<f64> = best.plan.as_slice().iter().map(|t| -t).collect();
            let mut dir = DenseMatrix::from_row_major(n, m, neg)?;
            for (i, &a) in perm.iter().enumerate() {
                dir.set(i, a, dir.get(i, a) + p);
            }
            let slope = 2.0 * inner(&tens, &dir);
            if slope >= -1e-15 {
                break;
            }
            let curvature = -2.0 * inner(&c1.matmul(&dir)?.matmul(&c2)?, &dir);
            let step = if curvature > 0.0 {
                (-slope / (2.0 * curvature)).min(1.0)
            } else {
                1.0
            };
            for (t, d) in best.plan.as_mut_slice().iter_mut().zip(dir.as_slice()) {
                *t += step * d;
            }
            tens = linearized(&best.plan)?;
            best.value = cost(&tens, &best.plan);
            best.polish_iterations += 1;
        }
    }
    Ok(best)
}

fn inner(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

/// Minimum-cost perfect matching of a square cost matrix (Hungarian method
/// with potentials, O(n³)). Returns the column assigned to each row.
pub(crate) fn min_cost_assignment(cost: &DenseMatrix) -> Vec<usize> {
    let n = cost.rows();
    // 1-based rows/columns; column 0 is the virtual start
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[row_of[j] - 1] = j - 1;
    }
    assignment
}

/// Entropic OT with uniform marginals `p`, `q`, stabilized by absorbing the
/// scalings into the dual potentials `f`, `g` whenever they grow large
/// (warm-started and updated in place). Returns the plan and whether the
/// L1 marginal violation fell below the tolerance.
fn sinkhorn_stabilized(
    cost: &DenseMatrix,
    p: f64,
    q: f64,
    cfg: &GwConfig,
    f: &mut [f64],
    g: &mut [f64],
) -> (DenseMatrix, bool) {
    const ABSORB_AT: f64 = 1e50;
    let (n, m) = (cost.rows(), cost.cols());
    let eps = cfg.epsilon;
    let kernel = |f: &[f64], g: &[f64]| -> Vec<f64> {
        let mut k = vec![0.0; n * m];
        for i in 0..n {
            let row = cost.row(i);
            for a in 0..m {
                k[i * m + a] = ((f[i] + g[a] - row[a]) / eps).exp();
            }
        }
        k
    };
    let mut k = kernel(f, g);
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; m];
    let mut kt_u = vec![0.0; m];
    let mut ok = false;
    for it in 1..=cfg.max_inner {
        kt_u.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..n {
            let ui = u[i];
            for (acc, kv) in kt_u.iter_mut().zip(&k[i * m..(i + 1) * m]) {
                *acc += kv * ui;
            }
        }
        for a in 0..m {
            v[a] = q / kt_u[a];
        }
        for i in 0..n {
            let kv: f64 = k[i * m..(i + 1) * m].iter().zip(&v).map(|(x, y)| x * y).sum();
            u[i] = p / kv;
        }
        let blown = u
            .iter()
            .chain(&v)
            .any(|x| !x.is_finite() || *x > ABSORB_AT || *x < 1.0 / ABSORB_AT);
        if blown || it % 10 == 0 || it == cfg.max_inner {
            if u.iter().chain(&v).any(|x| !x.is_finite() || *x == 0.0) {
                // a kernel row or column underflowed; restart from the current potentials
                k = kernel(f, g);
                u.iter_mut().for_each(|x| *x = 1.0);
                v.iter_mut().for_each(|x| *x = 1.0);
                continue;
            }
            for i in 0..n {
                f[i] += eps * u[i].ln();
            }
            for a in 0..m {
                g[a] += eps * v[a].ln();
            }
            k = kernel(f, g);
            u.iter_mut().for_each(|x| *x = 1.0);
            v.iter_mut().for_each(|x| *x = 1.0);
            // rows are exact after the u-update, so measure the columns
            let err: f64 = (0..m)
                .map(|a| ((0..n).map(|i| k[i * m + a]).sum::<f64>() - q).abs())
                .sum();
            if err < cfg.inner_tol {
                ok = true;
                break;
            }
        }
    }
    (DenseMatrix::from_row_major(n, m, kernel(f, g)).expect("plan shape"), ok)
}
