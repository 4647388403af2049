//! The step loop: creation, selective memorization, naming game, model update.
//!
//! Every random draw comes from a stream keyed by `(seed, id, step, stage)`,
//! and each stage collects its per-agent (or per-edge) results in index order
//! before the next stage starts. The run is therefore a pure function of the
//! configuration, whatever the worker count.

mod config;
pub mod log;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    CommunicationConfig, Condition, GraphConfig, LoggingConfig, MemoryConfig, ModelConfig, SimConfig, UpdateConfig,
};
use log::{AcceptanceKind, AcceptanceRecord, Event, EventWriter};

use crate::agent::{Agent, Creation, MemoryBuffer};
use crate::analysis::{rsa, DistanceMatrix};
use crate::error::{Error, Result};
use crate::genmodel::{Artifact, GenerativeModel, HyperParams, PretrainReport, SocialRep};
use crate::numerics::{AdamConfig, RngStream, Stage, StreamKey};
use crate::social::{build_joint_observations, collect_pairs, mhng_exchange, SocialGraph};

/// Names of the four stages, as listed in invariant records.
pub const STAGES: [&str; 4] = ["creation", "memorization", "naming", "update"];

/// Everything a stage-4 update produced for one agent.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateStats {
    pub vfe: f64,
    pub disc_loss: Option<f64>,
    pub disc_iterations: usize,
    pub vfe_iterations: usize,
    pub pairs: usize,
}

/// What one call to [`SimState::step`] did.
#[derive(Clone, Debug, Default)]
pub struct StepReport {
    pub step: usize,
    /// Whether parameters, memories and logged scalars are all finite.
    pub all_finite: bool,
    /// Creations per agent; empty without creation.
    pub creations: Vec<Vec<Creation>>,
    pub updates: Vec<UpdateStats>,
    /// All records of the step, in log order.
    pub events: Vec<Event>,
}

pub struct SimState {
    pub config: SimConfig,
    pub graph: SocialGraph,
    pub agents: Vec<Agent>,
    /// Number of completed steps.
    pub step: usize,
    pub pretrain: Vec<PretrainReport>,
}

impl SimState {
    /// Builds the graph, fills each memory, pretrains each encoder/decoder as
    /// a VAE on its memory and leaves the discriminator at its random init.
    pub fn initialize(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let graph = SocialGraph::connected_caveman(config.graph.n_cliques, config.graph.clique_size)?;
        let update = AdamConfig::with_lr(config.update.lr);
        let built: Vec<(Agent, PretrainReport)> = (0..config.n_agents())
            .into_par_iter()
            .map(|k| {
                let mut rng = stream(config.seed, k as u64, 0, Stage::Init);
                let buffer = MemoryBuffer::gaussian(
                    config.memory.capacity,
                    config.init_center(k),
                    config.memory.init_std,
                    &mut rng,
                )?;
                let mut model = GenerativeModel::new(&config.model.hidden, &mut rng)?;
                let data: Vec<Artifact> = buffer.iter_oldest_first().copied().collect();
                let mut prng = stream(config.seed, k as u64, 0, Stage::Pretrain);
                let report = model.pretrain_vae(&data, &config.pretrain, &mut prng)?;
                Ok((Agent::new(k, model, buffer, update), report))
            })
            .collect::<Result<_>>()?;
        let (agents, pretrain) = built.into_iter().unzip();
        Ok(SimState {
            config,
            graph,
            agents,
            step: 0,
            pretrain,
        })
    }

    pub fn hyper(&self) -> HyperParams {
        self.config.model.hyper()
    }

    pub fn total_occupancy(&self) -> usize {
        self.agents.iter().map(|a| a.buffer.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.agents.iter().all(|a| a.model.is_finite() && a.buffer.is_finite())
    }

    /// Runs one full step and returns its records.
    pub fn step(&mut self) -> Result<StepReport> {
        let t = self.step + 1;
        let mut events = Vec::new();
        let clock = Instant::now();
        let creations = self.stage_creation(t)?;
        let t1 = clock.elapsed();
        events.extend(self.stage_memorization(t, &creations)?);
        let t2 = clock.elapsed();
        let (pairs, naming) = self.stage_naming(t, &creations)?;
        events.extend(naming);
        let t3 = clock.elapsed();
        let updates = self.stage_update(t, &pairs)?;
        let t4 = clock.elapsed();
        let rsa_values = self.rsa_statistics(t)?;
        ::log::debug!("step {t} stage times {t1:?} {t2:?} {t3:?} {t4:?} {:?}", clock.elapsed());

        let mut finite = self.all_finite();
        for (k, (u, r)) in updates.iter().zip(&rsa_values).enumerate() {
            if u.pairs == 0 {
                events.push(Event::Warning {
                    step: t,
                    agent: Some(k),
                    message: "empty pair set; discriminator update skipped".into(),
                });
            }
            let mean_efe = mean(creations[k].iter().map(|c| c.efe));
            finite &= u.vfe.is_finite()
                && u.disc_loss.is_none_or(f64::is_finite)
                && mean_efe.is_none_or(f64::is_finite)
                && r.is_none_or(f64::is_finite);
            events.push(Event::AgentStep {
                step: t,
                agent: k,
                vfe: u.vfe,
                disc_loss: u.disc_loss,
                mean_efe,
                rsa: *r,
                pairs: u.pairs,
                occupancy: self.agents[k].buffer.len(),
            });
        }
        let stages = if self.config.condition.creates() {
            &STAGES[..]
        } else {
            &STAGES[2..]
        };
        events.push(Event::Invariants {
            step: t,
            occupancy_total: self.total_occupancy(),
            expected_total: self.config.n_agents() * self.config.memory.capacity,
            all_finite: finite,
            stages: stages.iter().map(|s| s.to_string()).collect(),
        });
        self.step = t;
        Ok(StepReport {
            step: t,
            all_finite: finite,
            creations,
            updates,
            events,
        })
    }

    /// Stage 1: each agent creates `creations_per_step` artifacts into its own
    /// memory. A no-op without creation.
    pub fn stage_creation(&mut self, t: usize) -> Result<Vec<Vec<Creation>>> {
        let n = self.agents.len();
        if !self.config.condition.creates() {
            return Ok(vec![Vec::new(); n]);
        }
        let (seed, hp) = (self.config.seed, self.hyper());
        let count = self.config.communication.creations_per_step;
        let cfg = self.config.creation;
        self.agents
            .par_iter_mut()
            .map(|a| {
                let mut rng = stream(seed, a.id as u64, t, Stage::Creation);
                a.create_artifacts(count, &cfg, &hp, &mut rng)
            })
            .collect()
    }

    /// Stage 2: each agent considers every neighbour creation of this step,
    /// neighbours in ascending order. Returns one `creation` acceptance
    /// record per directed edge. A no-op without creation.
    pub fn stage_memorization(&mut self, t: usize, creations: &[Vec<Creation>]) -> Result<Vec<Event>> {
        if !self.config.condition.creates() {
            return Ok(Vec::new());
        }
        let (seed, hp, graph) = (self.config.seed, self.hyper(), &self.graph);
        let per_agent: Vec<Vec<Event>> = self
            .agents
            .par_iter_mut()
            .map(|a| {
                let mut rng = stream(seed, a.id as u64, t, Stage::Memorize);
                let mut records = Vec::new();
                for &j in graph.neighbors(a.id) {
                    let mut accepted = 0;
                    for c in &creations[j] {
                        accepted += usize::from(a.selective_memorize(c.artifact, &hp, &mut rng)?);
                    }
                    records.push(Event::Acceptance(AcceptanceRecord {
                        step: t,
                        agent: a.id,
                        partner: j,
                        kind: AcceptanceKind::Creation,
                        proposals: creations[j].len(),
                        acceptances: accepted,
                    }));
                }
                Ok(records)
            })
            .collect::<Result<_>>()?;
        Ok(per_agent.into_iter().flatten().collect())
    }

    /// Stage 3: one naming-game exchange per edge over freshly drawn joint
    /// observations. Returns each agent's pair set (edges in ascending order)
    /// and one `rep` acceptance record per direction of every edge.
    pub fn stage_naming(
        &self,
        t: usize,
        creations: &[Vec<Creation>],
    ) -> Result<(Vec<Vec<(Artifact, SocialRep)>>, Vec<Event>)> {
        let seed = self.config.seed;
        let d_size = self.config.communication.memory_samples;
        let edges = self.graph.edges();
        let n = self.agents.len() as u64;
        let artifacts: Vec<Vec<Artifact>> = creations
            .iter()
            .map(|cs| cs.iter().map(|c| c.artifact).collect())
            .collect();
        let outcomes: Vec<_> = edges
            .par_iter()
            .enumerate()
            .map(|(e, &(a, b))| {
                let e = e as u64;
                let mut joint_rng = stream(seed, e, t, Stage::JointSample);
                let joint = build_joint_observations(
                    (a, &self.agents[a].buffer, &artifacts[a]),
                    (b, &self.agents[b].buffer, &artifacts[b]),
                    d_size,
                    &mut joint_rng,
                )?;
                let mut rng_a = stream(seed, e * n + a as u64, t, Stage::Naming);
                let mut rng_b = stream(seed, e * n + b as u64, t, Stage::Naming);
                mhng_exchange(
                    (&self.agents[a].model, &mut rng_a),
                    (&self.agents[b].model, &mut rng_b),
                    &joint.items,
                )
            })
            .collect::<Result<_>>()?;

        let mut per_agent: Vec<Vec<&[(Artifact, SocialRep)]>> = vec![Vec::new(); self.agents.len()];
        let mut events = Vec::with_capacity(2 * edges.len());
        for (&(a, b), out) in edges.iter().zip(&outcomes) {
            per_agent[a].push(&out.pairs_a);
            per_agent[b].push(&out.pairs_b);
            for (agent, partner, counts) in [(a, b, out.a_accepts), (b, a, out.b_accepts)] {
                events.push(Event::Acceptance(AcceptanceRecord {
                    step: t,
                    agent,
                    partner,
                    kind: AcceptanceKind::Rep,
                    proposals: counts.proposals,
                    acceptances: counts.acceptances,
                }));
            }
        }
        let pairs = per_agent.into_iter().map(collect_pairs).collect();
        Ok((pairs, events))
    }

    /// Stage 4: per agent, `iterations` rounds of a discriminator step on
    /// (pair set, fresh memory batch) followed by an encoder/decoder step on
    /// the variational free energy of another fresh memory batch.
    pub fn stage_update(&mut self, t: usize, pairs: &[Vec<(Artifact, SocialRep)>]) -> Result<Vec<UpdateStats>> {
        let (seed, hp) = (self.config.seed, self.hyper());
        let uc = self.config.update.clone();
        self.agents
            .par_iter_mut()
            .map(|a| {
                let mut rng = stream(seed, a.id as u64, t, Stage::ModelUpdate);
                let pairs = &pairs[a.id];
                let mut stats = UpdateStats {
                    vfe: 0.0,
                    disc_loss: None,
                    disc_iterations: 0,
                    vfe_iterations: 0,
                    pairs: pairs.len(),
                };
                let mut disc_sum = 0.0;
                for _ in 0..uc.iterations {
                    if !pairs.is_empty() {
                        let own = a.buffer.sample(uc.batch_size, &mut rng)?;
                        let lg = a.model.disc_loss(pairs, &own, hp.mc_samples, &mut rng)?;
                        a.optim
                            .discriminator
                            .step(a.model.discriminator.params_mut(), &lg.discriminator)?;
                        disc_sum += lg.value;
                        stats.disc_iterations += 1;
                    }
                    let batch = a.buffer.sample(uc.batch_size, &mut rng)?;
                    let lg = a.model.vfe_loss(&batch, hp.beta, hp.mc_samples, &mut rng)?;
                    a.optim.encoder.step(a.model.encoder.params_mut(), &lg.encoder)?;
                    a.optim.decoder.step(a.model.decoder.params_mut(), &lg.decoder)?;
                    stats.vfe += lg.value;
                    stats.vfe_iterations += 1;
                }
                stats.vfe /= stats.vfe_iterations as f64;
                if stats.disc_iterations > 0 {
                    stats.disc_loss = Some(disc_sum / stats.disc_iterations as f64);
                }
                Ok(stats)
            })
            .collect()
    }

    /// Per-agent RSA between the Euclidean distances of a memory subsample
    /// and those of its posterior means.
    pub fn rsa_statistics(&self, t: usize) -> Result<Vec<Option<f64>>> {
        let (seed, m) = (self.config.seed, self.config.logging.rsa_sample);
        self.agents
            .par_iter()
            .map(|a| {
                let mut rng = stream(seed, a.id as u64, t, Stage::Analysis);
                let obs = a.buffer.subsample(m, &mut rng);
                agent_rsa(&a.model, &obs)
            })
            .collect()
    }
}

/// RSA of one agent on the given observations (see [`SimState::rsa_statistics`]).
pub fn agent_rsa(model: &GenerativeModel, obs: &[Artifact]) -> Result<Option<f64>> {
    let means: Vec<SocialRep> = model.encode_batch(obs)?.into_iter().map(|q| q.mean).collect();
    let d_obs = DistanceMatrix::euclidean(obs);
    let d_rep = DistanceMatrix::euclidean(&means);
    rsa(&d_obs, &d_rep)
}

fn stream(seed: u64, id: u64, step: usize, stage: Stage) -> RngStream {
    RngStream::derive(StreamKey {
        seed,
        id,
        step: step as u64,
        stage,
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Layout of the parameter files of one snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub step: usize,
    pub n_agents: usize,
    pub hidden: Vec<usize>,
    /// Parameter counts of encoder, decoder and discriminator, stored in that order.
    pub n_params: [usize; 3],
    pub format: String,
}

impl SnapshotManifest {
    fn new(state: &SimState) -> Self {
        let m = &state.agents[0].model;
        SnapshotManifest {
            step: state.step,
            n_agents: state.agents.len(),
            hidden: state.config.model.hidden.clone(),
            n_params: [m.encoder.n_params(), m.decoder.n_params(), m.discriminator.n_params()],
            format: "little-endian f64; per net: per layer W (out x in, row-major) then b".into(),
        }
    }
}

/// Loads every agent's model from a snapshot directory.
pub fn load_snapshot_models(dir: &Path) -> Result<Vec<GenerativeModel>> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: SnapshotManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        what: path.display().to_string(),
        msg: e.to_string(),
    })?;
    (0..manifest.n_agents)
        .map(|k| {
            let path = log::agent_params_file(dir, k);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let mut model = GenerativeModel::zeros(&manifest.hidden)?;
            model.read_params(&bytes)?;
            Ok(model)
        })
        .collect()
}

fn write_snapshot(run: &Path, state: &SimState, creations: &[Vec<Creation>]) -> Result<Event> {
    let t = state.step;
    let cfg = &state.config;
    let dir = log::snapshot_dir(run, t);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let manifest = serde_json::to_string_pretty(&SnapshotManifest::new(state)).expect("manifest");
    let path = dir.join("manifest.json");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    for a in &state.agents {
        let path = log::agent_params_file(&dir, a.id);
        let mut bytes = Vec::new();
        a.model.write_params(&mut bytes).expect("in-memory write");
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
    }

    let subsamples: Vec<Vec<Artifact>> = state
        .agents
        .iter()
        .map(|a| {
            let mut rng = stream(cfg.seed, a.id as u64, t, Stage::Snapshot);
            a.buffer.subsample(cfg.logging.snapshot_subsample, &mut rng)
        })
        .collect();
    log::write_points_csv(
        &dir.join("buffer-subsample.csv"),
        subsamples
            .iter()
            .enumerate()
            .flat_map(|(k, s)| s.iter().map(move |o| (t, k, o))),
    )?;

    let full = cfg.logging.full_buffer_interval > 0 && t % cfg.logging.full_buffer_interval == 0;
    if full {
        log::write_points_csv(
            &dir.join("buffer-full.csv"),
            state
                .agents
                .iter()
                .flat_map(|a| a.buffer.iter_oldest_first().map(move |o| (t, a.id, o))),
        )?;
    }
    log::write_points_csv(
        &dir.join("creations.csv"),
        creations
            .iter()
            .enumerate()
            .flat_map(|(k, cs)| cs.iter().map(move |c| (t, k, &c.artifact))),
    )?;
    Ok(Event::Snapshot {
        step: t,
        full_buffers: full,
    })
}

/// Final report of [`run`]; also written to `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: usize,
    pub threads: usize,
    pub wall_seconds: f64,
    pub final_vfe: Vec<f64>,
    pub final_disc_loss: Vec<Option<f64>>,
    pub snapshots: Vec<usize>,
}

/// Runs `config.steps` steps into `out`, which is created if missing.
///
/// If anything fails after the log has been opened, the partial log is kept,
/// a `truncated` record is appended where possible and a `TRUNCATED` file is
/// written next to it before the error is returned.
pub fn run(config: &SimConfig, out: &Path, threads: usize) -> Result<RunSummary> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::contract(format!("thread pool: {e}")))?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let cfg_path = out.join(log::CONFIG_FILE);
    fs::write(&cfg_path, config.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
    let mut writer = EventWriter::create(&out.join(log::EVENTS_FILE))?;

    let started = Instant::now();
    let mut last_step = 0;
    let result = pool.install(|| drive(config, out, &mut writer, &mut last_step));
    match result {
        Ok((snapshots, final_vfe, final_disc_loss)) => {
            writer.flush()?;
            let summary = RunSummary {
                steps: config.steps,
                threads: threads.max(1),
                wall_seconds: started.elapsed().as_secs_f64(),
                final_vfe,
                final_disc_loss,
                snapshots,
            };
            let path = out.join(log::SUMMARY_FILE);
            let text = serde_json::to_string_pretty(&summary).expect("summary");
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            Ok(summary)
        }
        Err(err) => {
            let reason = err.to_string();
            let _ = writer.write(&Event::Truncated {
                step: last_step,
                reason: reason.clone(),
            });
            let _ = writer.flush();
            let _ = fs::write(
                out.join(log::TRUNCATION_MARKER),
                format!("run truncated after step {last_step}: {reason}\n"),
            );
            Err(err)
        }
    }
}

type DriveOutput = (Vec<usize>, Vec<f64>, Vec<Option<f64>>);

fn drive(config: &SimConfig, out: &Path, writer: &mut EventWriter, last_step: &mut usize) -> Result<DriveOutput> {
    let mut state = SimState::initialize(config.clone())?;
    for (k, r) in state.pretrain.iter().enumerate() {
        writer.write(&Event::Pretrain {
            agent: k,
            initial_loss: r.initial_loss,
            final_loss: r.final_loss,
        })?;
    }
    let no_creations = vec![Vec::new(); state.agents.len()];
    let mut snapshots = vec![0];
    writer.write(&write_snapshot(out, &state, &no_creations)?)?;
    writer.flush()?;

    let mut final_vfe = Vec::new();
    let mut final_disc = Vec::new();
    for t in 1..=config.steps {
        let report = state.step()?;
        for e in &report.events {
            writer.write(e)?;
        }
        if !report.all_finite {
            return Err(Error::NonFinite("simulation state"));
        }
        if t % config.logging.snapshot_interval == 0 || t == config.steps {
            writer.write(&write_snapshot(out, &state, &report.creations)?)?;
            snapshots.push(t);
        }
        writer.flush()?;
        *last_step = t;
        ::log::debug!("step {t}/{} done", config.steps);
        final_vfe = report.updates.iter().map(|u| u.vfe).collect();
        final_disc = report.updates.iter().map(|u| u.disc_loss).collect();
    }
    Ok((snapshots, final_vfe, final_disc))
}

/// Directory of seed `seed` in a multi-seed sweep rooted at `root`.
pub fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed-{seed}"))
}
