use std::collections::BTreeMap;

use super::DistanceMatrix;
use crate::error::{Error, Result};
use crate::genmodel::{Artifact, GaussianPosterior, GenerativeModel};
use crate::numerics::RngStream;

/// 2-Wasserstein distance between diagonal Gaussians,
/// `sqrt(‖μ₁ − μ₂‖² + Σᵢ (σ₁ᵢ − σ₂ᵢ)²)`.
pub fn w2_gaussian(p: &GaussianPosterior, q: &GaussianPosterior) -> f64 {
    let (sp, sq) = (p.std(), q.std());
    let mut acc = 0.0;
    for i in 0..p.mean.len() {
        acc += (p.mean[i] - q.mean[i]).powi(2) + (sp[i] - sq[i]).powi(2);
    }
    acc.sqrt()
}

/// Entry `(k, k′)` is the mean over reference observations of
/// [`w2_gaussian`] between agent `k`'s and agent `k′`'s posteriors.
/// `posteriors[k][r]` is agent `k`'s posterior for reference item `r`.
pub fn wasserstein_matrix(posteriors: &[Vec<GaussianPosterior>]) -> Result<DistanceMatrix> {
    let r = posteriors.first().map_or(0, Vec::len);
    if r == 0 {
        return Err(Error::contract("wasserstein_matrix needs a nonempty reference set"));
    }
    if posteriors.iter().any(|p| p.len() != r) {
        return Err(Error::contract(
            "every agent needs a posterior for every reference item",
        ));
    }
    DistanceMatrix::from_fn(posteriors.len(), |a, b| {
        posteriors[a]
            .iter()
            .zip(&posteriors[b])
            .map(|(p, q)| w2_gaussian(p, q))
            .sum::<f64>()
            / r as f64
    })
}

/// Pairwise Euclidean distances between an agent's posterior means over `refs`.
pub fn representation_structure(model: &GenerativeModel, refs: &[Artifact]) -> Result<DistanceMatrix> {
    let means: Vec<_> = model.encode_batch(refs)?.into_iter().map(|q| q.mean).collect();
    Ok(DistanceMatrix::euclidean(&means))
}

/// Observations pooled from several agents' memories, with their origin.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReferenceSet {
    pub items: Vec<Artifact>,
    /// `(agent, step)` of each item.
    pub provenance: Vec<(usize, usize)>,
}

impl ReferenceSet {
    /// Draws `per_agent` items uniformly without replacement from each agent's
    /// rows (`(step, agent, o)`), agents in ascending order. Agents with fewer
    /// rows contribute all of them.
    pub fn sample(rows: &[(usize, usize, Artifact)], per_agent: usize, rng: &mut RngStream) -> Self {
        let mut by_agent: BTreeMap<usize, Vec<(usize, Artifact)>> = BTreeMap::new();
        for &(step, agent, o) in rows {
            by_agent.entry(agent).or_default().push((step, o));
        }
        let mut out = ReferenceSet::default();
        for (agent, mut pool) in by_agent {
            let take = per_agent.min(pool.len());
            // partial Fisher–Yates
            for i in 0..take {
                let j = i + rng.index(pool.len() - i);
                pool.swap(i, j);
            }
            for &(step, o) in &pool[..take] {
                out.items.push(o);
                out.provenance.push((agent, step));
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// A uniform subset of `n` items (all of them if `n ≥ len`), original order kept.
    pub fn subset(&self, n: usize, rng: &mut RngStream) -> Self {
        if n >= self.len() {
            return self.clone();
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        for i in 0..n {
            let j = i + rng.index(idx.len() - i);
            idx.swap(i, j);
        }
        let mut keep = idx[..n].to_vec();
        keep.sort_unstable();
        ReferenceSet {
            items: keep.iter().map(|&i| self.items[i]).collect(),
            provenance: keep.iter().map(|&i| self.provenance[i]).collect(),
        }
    }
}
