//! Social graph, the Metropolis–Hastings naming game, and assembly of the
//! observation–representation pairs that train each discriminator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genmodel::{Artifact, GenerativeModel, SocialRep};
use crate::numerics::RngStream;

/// Undirected simple graph with a cluster label per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SocialGraph {
    n: usize,
    /// Sorted `(a, b)` with `a < b`.
    edges: Vec<(usize, usize)>,
    clusters: Vec<usize>,
    #[serde(skip)]
    adjacency: Vec<Vec<usize>>,
}

impl SocialGraph {
    pub fn new(n: usize, edges: &[(usize, usize)], clusters: Vec<usize>) -> Result<Self> {
        if clusters.len() != n {
            return Err(Error::contract("one cluster label per node"));
        }
        let mut norm: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a == b {
                return Err(Error::contract(format!("self-loop at node {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::contract(format!("edge ({a}, {b}) out of range")));
            }
            norm.push((a.min(b), a.max(b)));
        }
        norm.sort_unstable();
        norm.dedup();
        let mut g = SocialGraph {
            n,
            edges: norm,
            clusters,
            adjacency: Vec::new(),
        };
        g.rebuild_adjacency();
        if !g.is_connected() {
            return Err(Error::contract("social graph must be connected"));
        }
        Ok(g)
    }

    fn rebuild_adjacency(&mut self) {
        let mut adj = vec![Vec::new(); self.n];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        self.adjacency = adj;
    }

    /// Two or more complete cliques joined by bridge edges.
    ///
    /// Every clique `c` (first node `h_c`) loses its edge `(h_c, h_c + 1)`;
    /// clique heads are joined in a ring `(h_c, h_{c+1})`, and node 0 is
    /// additionally joined to the last node of the last clique. With the
    /// default two 7-cliques this removes (0,1) and (7,8), adds (0,7) and
    /// (0,13), and leaves agents 0, 7 and 13 as the bridge endpoints.
    pub fn connected_caveman(n_cliques: usize, clique_size: usize) -> Result<Self> {
        if n_cliques < 2 || clique_size < 3 {
            return Err(Error::contract(format!(
                "caveman graph needs ≥ 2 cliques of ≥ 3 nodes, got {n_cliques}×{clique_size}"
            )));
        }
        let n = n_cliques * clique_size;
        let head = |c: usize| c * clique_size;
        let mut edges = Vec::new();
        for c in 0..n_cliques {
            for i in head(c)..head(c) + clique_size {
                for j in i + 1..head(c) + clique_size {
                    if !(i == head(c) && j == head(c) + 1) {
                        edges.push((i, j));
                    }
                }
            }
        }
        for c in 0..n_cliques {
            edges.push((head(c), head((c + 1) % n_cliques)));
        }
        edges.push((0, n - 1));
        let clusters = (0..n).map(|k| k / clique_size).collect();
        SocialGraph::new(n, &edges, clusters)
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, k: usize) -> &[usize] {
        &self.adjacency[k]
    }

    pub fn cluster(&self, k: usize) -> usize {
        self.clusters[k]
    }

    pub fn clusters(&self) -> &[usize] {
        &self.clusters
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.iter().max().map_or(0, |m| m + 1)
    }

    /// Nodes with at least one neighbour in a different cluster.
    pub fn hubs(&self) -> Vec<usize> {
        (0..self.n)
            .filter(|&k| self.adjacency[k].iter().any(|&j| self.clusters[j] != self.clusters[k]))
            .collect()
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(k) = stack.pop() {
            for &j in &self.adjacency[k] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Where a jointly attended artifact came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Creation { owner: usize },
    Memory { owner: usize },
}

/// The shared observation set `C_a ∪ D_a ∪ C_b ∪ D_b` of one edge exchange.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct JointObservations {
    pub items: Vec<Artifact>,
    pub provenance: Vec<Provenance>,
}

impl JointObservations {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn extend(&mut self, items: impl IntoIterator<Item = Artifact>, tag: Provenance) {
        for o in items {
            self.items.push(o);
            self.provenance.push(tag);
        }
    }
}

/// Builds the joint observations for an edge: each side's current creations
/// (none in the no-creation condition) and `d_size` uniform memory draws.
pub fn build_joint_observations(
    (a, memory_a, creations_a): (usize, &crate::agent::MemoryBuffer, &[Artifact]),
    (b, memory_b, creations_b): (usize, &crate::agent::MemoryBuffer, &[Artifact]),
    d_size: usize,
    rng: &mut RngStream,
) -> Result<JointObservations> {
    let mut joint = JointObservations::default();
    joint.extend(creations_a.iter().copied(), Provenance::Creation { owner: a });
    joint.extend(memory_a.sample(d_size, rng)?, Provenance::Memory { owner: a });
    joint.extend(creations_b.iter().copied(), Provenance::Creation { owner: b });
    joint.extend(memory_b.sample(d_size, rng)?, Provenance::Memory { owner: b });
    Ok(joint)
}

/// What the naming game needs from a participant.
pub trait NamingParticipant {
    /// One posterior draw `z ~ q(·|o)` per observation.
    fn infer(&self, obs: &[Artifact], rng: &mut RngStream) -> Result<Vec<SocialRep>>;
    /// `log p(o|z)` for paired rows.
    fn log_likelihood(&self, obs: &[Artifact], zs: &[SocialRep]) -> Result<Vec<f64>>;
}

impl NamingParticipant for GenerativeModel {
    fn infer(&self, obs: &[Artifact], rng: &mut RngStream) -> Result<Vec<SocialRep>> {
        Ok(self.encode_batch(obs)?.iter().map(|q| q.sample(rng)).collect())
    }

    fn log_likelihood(&self, obs: &[Artifact], zs: &[SocialRep]) -> Result<Vec<f64>> {
        self.decode_loglik_batch(obs, zs)
    }
}

/// `min(1, exp(ll_proposed − ll_own))`
pub fn rep_acceptance(ll_proposed: f64, ll_own: f64) -> f64 {
    (ll_proposed - ll_own).min(0.0).exp()
}

/// Per-direction counts of one exchange.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeCounts {
    pub proposals: usize,
    pub acceptances: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExchangeOutcome {
    pub pairs_a: Vec<(Artifact, SocialRep)>,
    pub pairs_b: Vec<(Artifact, SocialRep)>,
    /// `a` judging `b`'s proposals.
    pub a_accepts: ExchangeCounts,
    /// `b` judging `a`'s proposals.
    pub b_accepts: ExchangeCounts,
}

/// One naming-game round over the jointly attended observations.
///
/// Both sides infer `z` for every observation. Each side accepts the
/// partner's `z` with probability `min(1, p_self(o|z_partner) / p_self(o|z_self))`,
/// otherwise keeps its own; the kept `(o, z)` pair goes to its pair set.
/// Each side draws only from its own stream, so swapping the two
/// `(participant, stream)` arguments mirrors the outcome exactly.
pub fn mhng_exchange(
    (a, rng_a): (&dyn NamingParticipant, &mut RngStream),
    (b, rng_b): (&dyn NamingParticipant, &mut RngStream),
    joint: &[Artifact],
) -> Result<ExchangeOutcome> {
    if joint.is_empty() {
        return Err(Error::contract("naming game needs joint observations"));
    }
    let za = a.infer(joint, rng_a)?;
    let zb = b.infer(joint, rng_b)?;
    let (pairs_a, a_accepts) = judge(a, joint, &za, &zb, rng_a)?;
    let (pairs_b, b_accepts) = judge(b, joint, &zb, &za, rng_b)?;
    Ok(ExchangeOutcome {
        pairs_a,
        pairs_b,
        a_accepts,
        b_accepts,
    })
}

fn judge(
    listener: &dyn NamingParticipant,
    obs: &[Artifact],
    own: &[SocialRep],
    proposed: &[SocialRep],
    rng: &mut RngStream,
) -> Result<(Vec<(Artifact, SocialRep)>, ExchangeCounts)> {
    let ll_own = listener.log_likelihood(obs, own)?;
    let ll_prop = listener.log_likelihood(obs, proposed)?;
    let mut counts = ExchangeCounts {
        proposals: obs.len(),
        acceptances: 0,
    };
    let pairs = obs
        .iter()
        .enumerate()
        .map(|(i, o)| {
            if rng.accept(rep_acceptance(ll_prop[i], ll_own[i])) {
                counts.acceptances += 1;
                (*o, proposed[i])
            } else {
                (*o, own[i])
            }
        })
        .collect();
    Ok((pairs, counts))
}

/// Concatenates an agent's pairs over its incident edges in the given order.
pub fn collect_pairs<'a>(
    per_edge: impl IntoIterator<Item = &'a [(Artifact, SocialRep)]>,
) -> Vec<(Artifact, SocialRep)> {
    per_edge.into_iter().flatten().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::MemoryBuffer;

    #[test]
    fn default_caveman_shape() {
        let g = SocialGraph::connected_caveman(2, 7).unwrap();
        assert_eq!(g.n_nodes(), 14);
        assert_eq!(g.edges().len(), 42);
        assert!(g.is_connected());
        for k in 0..14 {
            assert_eq!(g.cluster(k), usize::from(k >= 7));
            assert!(!g.neighbors(k).is_empty());
        }
        assert!(!g.edges().contains(&(0, 1)));
        assert!(!g.edges().contains(&(7, 8)));
        assert!(g.edges().contains(&(0, 7)));
        assert!(g.edges().contains(&(0, 13)));
        assert_eq!(g.hubs(), vec![0, 7, 13]);
        assert_eq!(g.neighbors(0).len(), 7);
    }

    #[test]
    fn caveman_rejects_bad_sizes() {
        assert!(SocialGraph::connected_caveman(1, 7).is_err());
        assert!(SocialGraph::connected_caveman(2, 1).is_err());
    }

    #[test]
    fn three_cliques_connected() {
        let g = SocialGraph::connected_caveman(3, 4).unwrap();
        assert!(g.is_connected());
        assert_eq!(g.n_clusters(), 3);
    }

    #[test]
    fn graph_rejects_self_loops_and_disconnection() {
        assert!(SocialGraph::new(2, &[(0, 0)], vec![0, 0]).is_err());
        assert!(SocialGraph::new(3, &[(0, 1)], vec![0, 0, 0]).is_err());
    }

    fn full_buffer(n: usize, x: f64) -> MemoryBuffer {
        let mut b = MemoryBuffer::new(n).unwrap();
        for i in 0..n {
            b.push([x, i as f64]);
        }
        b
    }

    #[test]
    fn joint_observation_sizes_and_provenance() {
        let (ma, mb) = (full_buffer(50, 0.0), full_buffer(50, 1.0));
        let ca = [[9.0, 9.0]; 6];
        let cb = [[8.0, 8.0]; 6];
        let mut rng = RngStream::new(0);
        let j = build_joint_observations((0, &ma, &ca), (1, &mb, &cb), 100, &mut rng).unwrap();
        assert_eq!(j.len(), 212);
        let j = build_joint_observations((0, &ma, &[]), (1, &mb, &[]), 100, &mut rng).unwrap();
        assert_eq!(j.len(), 200);
        let j = build_joint_observations((0, &ma, &ca), (1, &mb, &cb), 100, &mut rng).unwrap();
        let count = |p: Provenance| j.provenance.iter().filter(|x| **x == p).count();
        assert_eq!(count(Provenance::Creation { owner: 0 }), 6);
        assert_eq!(count(Provenance::Memory { owner: 0 }), 100);
        assert_eq!(count(Provenance::Creation { owner: 1 }), 6);
        assert_eq!(count(Provenance::Memory { owner: 1 }), 100);
        for (o, p) in j.items.iter().zip(&j.provenance) {
            match p {
                Provenance::Memory { owner: 0 } => assert_eq!(o[0], 0.0),
                Provenance::Memory { owner: 1 } => assert_eq!(o[0], 1.0),
                Provenance::Creation { owner: 0 } => assert_eq!(*o, [9.0, 9.0]),
                _ => assert_eq!(*o, [8.0, 8.0]),
            }
        }
    }

    #[test]
    fn log_space_acceptance_equals_ratio() {
        let mut rng = RngStream::new(4);
        for _ in 0..1000 {
            let (l1, l2) = (rng.normal() * 3.0, rng.normal() * 3.0);
            let ratio = (l1.exp() / l2.exp()).min(1.0);
            assert!((rep_acceptance(l1, l2) - ratio).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_agents_same_z_accept_everything() {
        let m = GenerativeModel::new(&[8, 8], &mut RngStream::new(1)).unwrap();
        let obs = vec![[0.5, 0.5]; 30];
        // identical inference noise on both sides
        struct Fixed<'a>(&'a GenerativeModel);
        impl NamingParticipant for Fixed<'_> {
            fn infer(&self, obs: &[Artifact], _: &mut RngStream) -> Result<Vec<SocialRep>> {
                Ok(self.0.encode_batch(obs)?.iter().map(|q| q.mean).collect())
            }
            fn log_likelihood(&self, o: &[Artifact], z: &[SocialRep]) -> Result<Vec<f64>> {
                self.0.decode_loglik_batch(o, z)
            }
        }
        let out = mhng_exchange(
            (&Fixed(&m), &mut RngStream::new(2)),
            (&Fixed(&m), &mut RngStream::new(3)),
            &obs,
        )
        .unwrap();
        assert_eq!(out.a_accepts.acceptances, 30);
        assert_eq!(out.b_accepts.acceptances, 30);
        assert_eq!(out.pairs_a, out.pairs_b);
    }

    #[test]
    fn exchange_counts_bounded() {
        let mut rng = RngStream::new(3);
        let a = GenerativeModel::new(&[8, 8], &mut rng).unwrap();
        let b = GenerativeModel::new(&[8, 8], &mut rng).unwrap();
        let obs: Vec<Artifact> = (0..50).map(|_| [rng.normal(), rng.normal()]).collect();
        let out = mhng_exchange((&a, &mut rng.split(0)), (&b, &mut rng.split(1)), &obs).unwrap();
        assert_eq!(out.a_accepts.proposals, 50);
        assert!(out.a_accepts.acceptances <= 50);
        assert_eq!(out.pairs_a.len(), 50);
        for (i, (o, _)) in out.pairs_a.iter().enumerate() {
            assert_eq!(*o, obs[i]);
        }
        assert!(mhng_exchange((&a, &mut rng.split(0)), (&b, &mut rng.split(1)), &[]).is_err());
    }

    #[test]
    fn swapping_roles_mirrors_outcome() {
        let mut rng = RngStream::new(5);
        let a = GenerativeModel::new(&[8, 8], &mut rng).unwrap();
        let b = GenerativeModel::new(&[8, 8], &mut rng).unwrap();
        let obs: Vec<Artifact> = (0..40).map(|_| [rng.normal(), rng.normal()]).collect();
        let (sa, sb) = (rng.split(1), rng.split(2));
        let ab = mhng_exchange((&a, &mut sa.clone()), (&b, &mut sb.clone()), &obs).unwrap();
        let ba = mhng_exchange((&b, &mut sb.clone()), (&a, &mut sa.clone()), &obs).unwrap();
        assert_eq!(ab.pairs_a, ba.pairs_b);
        assert_eq!(ab.pairs_b, ba.pairs_a);
        assert_eq!(ab.a_accepts, ba.b_accepts);
    }

    #[test]
    fn proposal_with_higher_likelihood_always_accepted() {
        struct Pinned(f64);
        impl NamingParticipant for Pinned {
            fn infer(&self, obs: &[Artifact], _: &mut RngStream) -> Result<Vec<SocialRep>> {
                Ok(vec![[self.0; 4]; obs.len()])
            }
            fn log_likelihood(&self, o: &[Artifact], z: &[SocialRep]) -> Result<Vec<f64>> {
                // prefers larger z
                Ok(o.iter().zip(z).map(|(_, z)| z[0]).collect())
            }
        }
        let obs = vec![[0.0, 0.0]; 500];
        let out = mhng_exchange(
            (&Pinned(0.0), &mut RngStream::new(1)),
            (&Pinned(1.0), &mut RngStream::new(2)),
            &obs,
        )
        .unwrap();
        assert_eq!(out.a_accepts.acceptances, 500);
        assert!(out.b_accepts.acceptances < 500);
    }

    #[test]
    fn collect_pairs_concatenates_in_order() {
        let e1 = vec![([0.0, 0.0], [0.0; 4]); 3];
        let e2 = vec![([1.0, 1.0], [1.0; 4]); 2];
        let all = collect_pairs([e1.as_slice(), e2.as_slice()]);
        assert_eq!(all.len(), 5);
        assert_eq!(all[3].0, [1.0, 1.0]);
        assert_eq!(collect_pairs([e1.as_slice()]), e1);
        assert!(collect_pairs(std::iter::empty()).is_empty());
    }
}
