//! Run-directory readers and the CSV-producing analyses behind `analyze`.
//!
//! Output tables:
//!
//! | file                         | columns                                        |
//! |------------------------------|------------------------------------------------|
//! | `wasserstein_<t0>_<t1>.csv`  | `k,0,1,…,K−1` (one row per agent)              |
//! | `gw_mds.csv`                 | `step,agent,x,y`                               |
//! | `rsa.csv`                    | `step,cluster,condition,mean,std` (empty = gap)|
//! | `acceptance.csv`             | `interval,k,k2,kind,rate,zero_freq`            |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{
    acceptance_network, classical_mds, gw_distance, procrustes_align, representation_structure, rsa_timeseries,
    wasserstein_matrix, DistanceMatrix, GwConfig, Normalization, ReferenceSet, RsaPoint,
};
use crate::error::{Error, Result};
use crate::genmodel::{Artifact, GenerativeModel};
use crate::numerics::{DenseMatrix, RngStream, Stage, StreamKey};
use crate::sim::log::{self, AcceptanceRecord, Event};
use crate::sim::{load_snapshot_models, Condition, SimConfig};
use crate::social::SocialGraph;

/// Stream ids for analysis draws, kept clear of agent ids.
const WASSERSTEIN_STREAM: u64 = u64::MAX;
const GW_STREAM: u64 = u64::MAX - 1;

#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisOptions {
    /// Reference observations drawn from each agent's memory subsample.
    pub refs_per_agent: usize,
    /// Size of the reference subset on which representation structures are compared.
    pub gw_points: usize,
    pub gw: GwConfig,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            refs_per_agent: 50,
            gw_points: 100,
            gw: GwConfig {
                normalization: Normalization::None,
                ..GwConfig::default()
            },
        }
    }
}

/// A finished (or truncated) run directory.
pub struct RunDir {
    pub path: PathBuf,
    pub config: SimConfig,
    pub graph: SocialGraph,
}

impl RunDir {
    pub fn open(path: &Path) -> Result<Self> {
        if !path.is_dir() {
            return Err(Error::contract(format!(
                "run directory {} does not exist",
                path.display()
            )));
        }
        let cfg_path = path.join(log::CONFIG_FILE);
        let text = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
        let config = SimConfig::from_toml(&text)?;
        let graph = SocialGraph::connected_caveman(config.graph.n_cliques, config.graph.clique_size)?;
        Ok(RunDir {
            path: path.to_path_buf(),
            config,
            graph,
        })
    }

    pub fn events(&self) -> Result<Vec<Event>> {
        log::read_events(&self.path.join(log::EVENTS_FILE))
    }

    pub fn acceptance_records(&self) -> Result<Vec<AcceptanceRecord>> {
        Ok(self
            .events()?
            .into_iter()
            .filter_map(|e| match e {
                Event::Acceptance(r) => Some(r),
                _ => None,
            })
            .collect())
    }

    /// Steps that have a complete snapshot directory, ascending.
    pub fn snapshot_steps(&self) -> Result<Vec<usize>> {
        let root = self.path.join(log::SNAPSHOT_DIR);
        let entries = match fs::read_dir(&root) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(&root, e)),
        };
        let mut steps = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&root, e))?;
            let name = entry.file_name();
            let Some(step) = name
                .to_str()
                .and_then(|n| n.strip_prefix("step-"))
                .and_then(|s| s.parse().ok())
            else {
                continue;
            };
            if entry.path().join("buffer-subsample.csv").exists() {
                steps.push(step);
            }
        }
        steps.sort_unstable();
        Ok(steps)
    }

    pub fn models(&self, step: usize) -> Result<Vec<GenerativeModel>> {
        load_snapshot_models(&log::snapshot_dir(&self.path, step))
    }

    pub fn subsample(&self, step: usize) -> Result<Vec<(usize, usize, Artifact)>> {
        log::read_points_csv(&log::snapshot_dir(&self.path, step).join("buffer-subsample.csv"))
    }

    fn reference_set(&self, step: usize, per_agent: usize, stream: u64) -> Result<(ReferenceSet, RngStream)> {
        let mut rng = RngStream::derive(StreamKey {
            seed: self.config.seed,
            id: stream,
            step: step as u64,
            stage: Stage::Analysis,
        });
        let refs = ReferenceSet::sample(&self.subsample(step)?, per_agent, &mut rng);
        if refs.is_empty() {
            return Err(Error::contract(format!("snapshot {step} has no memory subsample")));
        }
        Ok((refs, rng))
    }

    /// Agent-by-agent Wasserstein matrix at one snapshot.
    pub fn wasserstein_at(&self, step: usize, opts: &AnalysisOptions) -> Result<DistanceMatrix> {
        let models = self.models(step)?;
        let (refs, _) = self.reference_set(step, opts.refs_per_agent, WASSERSTEIN_STREAM)?;
        let posteriors = models
            .par_iter()
            .map(|m| m.encode_batch(&refs.items))
            .collect::<Result<Vec<_>>>()?;
        wasserstein_matrix(&posteriors)
    }

    /// Mean Wasserstein matrix over the snapshots in `t0..=t1`; `None` if there are none.
    pub fn wasserstein_window(&self, t0: usize, t1: usize, opts: &AnalysisOptions) -> Result<Option<DistanceMatrix>> {
        let steps: Vec<usize> = self
            .snapshot_steps()?
            .into_iter()
            .filter(|s| (t0..=t1).contains(s))
            .collect();
        if steps.is_empty() {
            return Ok(None);
        }
        let k = self.config.n_agents();
        let mut sum = vec![0.0; k * k];
        for &s in &steps {
            for (acc, v) in sum.iter_mut().zip(self.wasserstein_at(s, opts)?.as_slice()) {
                *acc += v;
            }
        }
        let n = steps.len() as f64;
        DistanceMatrix::new(k, sum.into_iter().map(|v| v / n).collect()).map(Some)
    }

    /// Agent-by-agent GW matrix between representation structures at one snapshot.
    ///
    /// All agents' structures share one reference subset and are divided by
    /// their common maximum, so GW values are comparable across agent pairs.
    pub fn gw_matrix_at(&self, step: usize, opts: &AnalysisOptions) -> Result<DistanceMatrix> {
        let models = self.models(step)?;
        let (refs, mut rng) = self.reference_set(step, opts.refs_per_agent, GW_STREAM)?;
        let refs = refs.subset(opts.gw_points, &mut rng);
        let structures = models
            .par_iter()
            .map(|m| representation_structure(m, &refs.items))
            .collect::<Result<Vec<_>>>()?;
        let top = structures.iter().map(DistanceMatrix::max).fold(0.0, f64::max);
        let scale = if top > 0.0 { 1.0 / top } else { 1.0 };
        let structures: Vec<DistanceMatrix> = structures.iter().map(|d| d.scaled(scale)).collect();
        let k = structures.len();
        let pairs: Vec<(usize, usize)> = (0..k).flat_map(|a| (a + 1..k).map(move |b| (a, b))).collect();
        let cfg = GwConfig {
            normalization: Normalization::None,
            ..opts.gw
        };
        let values = pairs
            .par_iter()
            .map(|&(a, b)| {
                let r = gw_distance(&structures[a], &structures[b], &cfg)?;
                if !r.converged {
                    ::log::warn!("GW between agents {a} and {b} at step {step} did not converge");
                }
                Ok(r.value)
            })
            .collect::<Result<Vec<f64>>>()?;
        let lookup: BTreeMap<(usize, usize), f64> = pairs.into_iter().zip(values).collect();
        DistanceMatrix::from_fn(k, |a, b| lookup[&(a, b)])
    }

    /// 2-D MDS embeddings of the GW matrix at every snapshot step divisible by
    /// `interval`, each Procrustes-aligned to its predecessor.
    pub fn gw_mds_trajectory(&self, interval: usize, opts: &AnalysisOptions) -> Result<Vec<(usize, DenseMatrix)>> {
        let interval = interval.max(1);
        let mut out: Vec<(usize, DenseMatrix)> = Vec::new();
        for s in self.snapshot_steps()?.into_iter().filter(|s| s % interval == 0) {
            let mut emb = classical_mds(&self.gw_matrix_at(s, opts)?, 2)?;
            if let Some((_, prev)) = out.last() {
                emb = procrustes_align(prev, &emb)?;
            }
            out.push((s, emb));
        }
        Ok(out)
    }

    /// Logged per-agent RSA values by step.
    pub fn rsa_by_step(&self) -> Result<BTreeMap<usize, Vec<(usize, f64)>>> {
        let mut out: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
        for e in self.events()? {
            if let Event::AgentStep { step, agent, rsa, .. } = e {
                let entry = out.entry(step).or_default();
                if let Some(v) = rsa {
                    entry.push((agent, v));
                }
            }
        }
        Ok(out)
    }

    pub fn last_step(&self) -> Result<usize> {
        Ok(self
            .events()?
            .iter()
            .filter_map(|e| match e {
                Event::Invariants { step, .. } => Some(*step),
                _ => None,
            })
            .max()
            .unwrap_or(0))
    }
}

/// Smoothed RSA curves per (condition, cluster), pooling agents of the
/// cluster across all runs of that condition.
pub fn rsa_curves(runs: &[RunDir], window: usize) -> Result<Vec<(Condition, usize, Vec<RsaPoint>)>> {
    let mut pooled: BTreeMap<(Condition, usize), BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for run in runs {
        for (step, values) in run.rsa_by_step()? {
            for c in 0..run.graph.n_clusters() {
                pooled
                    .entry((run.config.condition, c))
                    .or_default()
                    .entry(step)
                    .or_default();
            }
            for (agent, v) in values {
                pooled
                    .entry((run.config.condition, run.graph.cluster(agent)))
                    .or_default()
                    .entry(step)
                    .or_default()
                    .push(v);
            }
        }
    }
    Ok(pooled
        .into_iter()
        .map(|((cond, cluster), by_step)| {
            let series: Vec<(usize, Vec<f64>)> = by_step.into_iter().collect();
            (cond, cluster, rsa_timeseries(&series, window))
        })
        .collect())
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes one `wasserstein_<t0>_<t1>.csv` per `interval`-step window that
/// holds at least one snapshot; returns the written paths.
pub fn write_wasserstein(run: &RunDir, interval: usize, opts: &AnalysisOptions, out: &Path) -> Result<Vec<PathBuf>> {
    create_out(out)?;
    let interval = interval.max(1);
    let last = run.snapshot_steps()?.last().copied().unwrap_or(0);
    let mut written = Vec::new();
    let mut t0 = 1;
    while t0 <= last {
        let t1 = t0 + interval - 1;
        if let Some(m) = run.wasserstein_window(t0, t1, opts)? {
            let k = m.len();
            let mut text = String::from("k");
            for j in 0..k {
                write!(text, ",{j}").unwrap();
            }
            text.push('\n');
            for i in 0..k {
                write!(text, "{i}").unwrap();
                for j in 0..k {
                    write!(text, ",{}", m.get(i, j)).unwrap();
                }
                text.push('\n');
            }
            let path = out.join(format!("wasserstein_{t0}_{t1}.csv"));
            write_text(&path, &text)?;
            written.push(path);
        }
        t0 += interval;
    }
    Ok(written)
}

pub fn write_gw_mds(run: &RunDir, interval: usize, opts: &AnalysisOptions, out: &Path) -> Result<PathBuf> {
    create_out(out)?;
    let mut text = String::from("step,agent,x,y\n");
    for (step, emb) in run.gw_mds_trajectory(interval, opts)? {
        for k in 0..emb.rows() {
            writeln!(text, "{step},{k},{},{}", emb.get(k, 0), emb.get(k, 1)).unwrap();
        }
    }
    let path = out.join("gw_mds.csv");
    write_text(&path, &text)?;
    Ok(path)
}

pub fn write_rsa(runs: &[RunDir], window: usize, out: &Path) -> Result<PathBuf> {
    create_out(out)?;
    let mut text = String::from("step,cluster,condition,mean,std\n");
    for (cond, cluster, points) in rsa_curves(runs, window)? {
        for p in points {
            writeln!(text, "{},{cluster},{cond},{},{}", p.step, opt(p.mean), opt(p.std)).unwrap();
        }
    }
    let path = out.join("rsa.csv");
    write_text(&path, &text)?;
    Ok(path)
}

pub fn write_acceptance(run: &RunDir, interval: usize, out: &Path) -> Result<PathBuf> {
    create_out(out)?;
    let mut text = String::from("interval,k,k2,kind,rate,zero_freq\n");
    for e in acceptance_network(&run.acceptance_records()?, interval) {
        writeln!(
            text,
            "{},{},{},{},{},{}",
            e.interval,
            e.k,
            e.k2,
            e.kind.label(),
            e.rate,
            e.zero_freq
        )
        .unwrap();
    }
    let path = out.join("acceptance.csv");
    write_text(&path, &text)?;
    Ok(path)
}

/// Mean intra- and inter-cluster entries of an agent-level matrix.
pub fn cluster_means(m: &DistanceMatrix, graph: &SocialGraph) -> (f64, f64) {
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0, 0.0, 0);
    for a in 0..m.len() {
        for b in a + 1..m.len() {
            if graph.cluster(a) == graph.cluster(b) {
                intra += m.get(a, b);
                ni += 1;
            } else {
                inter += m.get(a, b);
                nx += 1;
            }
        }
    }
    (intra / ni.max(1) as f64, inter / nx.max(1) as f64)
}

/// For each hub, its distance to the centroid of the rest of its own cluster
/// and to the centroid of the nearest other cluster, in an embedding.
pub fn hub_centroid_distances(emb: &DenseMatrix, graph: &SocialGraph) -> Vec<(usize, f64, f64)> {
    let centroid = |members: &[usize]| -> Vec<f64> {
        let mut c = vec![0.0; emb.cols()];
        for &k in members {
            for (ci, v) in c.iter_mut().zip(emb.row(k)) {
                *ci += v / members.len() as f64;
            }
        }
        c
    };
    graph
        .hubs()
        .into_iter()
        .map(|h| {
            let own = graph.cluster(h);
            let mates: Vec<usize> = (0..graph.n_nodes())
                .filter(|&k| k != h && graph.cluster(k) == own)
                .collect();
            let d_own = crate::numerics::euclidean(emb.row(h), &centroid(&mates));
            let d_other = (0..graph.n_clusters())
                .filter(|&c| c != own)
                .map(|c| {
                    let members: Vec<usize> = (0..graph.n_nodes()).filter(|&k| graph.cluster(k) == c).collect();
                    crate::numerics::euclidean(emb.row(h), &centroid(&members))
                })
                .fold(f64::INFINITY, f64::min);
            (h, d_own, d_other)
        })
        .collect()
}
