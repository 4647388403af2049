//! Agents: FIFO artifact memory, creation by expected-free-energy descent,
//! and Boltzmann-rule memorization of neighbours' creations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genmodel::{Artifact, GenerativeModel, HyperParams};
use crate::numerics::{AdamConfig, AdamState, RngStream};

/// Fixed-capacity ring of artifacts; pushing at capacity evicts the oldest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryBuffer {
    items: Vec<Artifact>,
    capacity: usize,
    /// Slot holding the oldest entry once the ring is full.
    cursor: usize,
}

impl MemoryBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::contract("memory capacity must be positive"));
        }
        Ok(MemoryBuffer {
            items: Vec::with_capacity(capacity),
            capacity,
            cursor: 0,
        })
    }

    /// A full buffer of draws from `N(center, std²·I)`.
    pub fn gaussian(capacity: usize, center: Artifact, std: f64, rng: &mut RngStream) -> Result<Self> {
        let mut buf = MemoryBuffer::new(capacity)?;
        for _ in 0..capacity {
            buf.push([center[0] + std * rng.normal(), center[1] + std * rng.normal()]);
        }
        Ok(buf)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, idx: usize) -> Artifact {
        self.items[idx]
    }

    /// Appends, evicting the oldest entry when full.
    pub fn push(&mut self, o: Artifact) {
        if self.items.len() < self.capacity {
            self.items.push(o);
        } else {
            self.items[self.cursor] = o;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
    }

    /// Overwrites slot `idx` in place; occupancy is unchanged.
    pub fn replace(&mut self, idx: usize, o: Artifact) {
        self.items[idx] = o;
    }

    /// Entries from oldest to newest.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &Artifact> {
        let (newer, older) = self.items.split_at(if self.is_full() { self.cursor } else { 0 });
        older.iter().chain(newer.iter())
    }

    pub fn is_full(&self) -> bool {
        self.items.len() == self.capacity
    }

    pub fn sample_index(&self, rng: &mut RngStream) -> Result<usize> {
        if self.is_empty() {
            return Err(Error::contract("sampling from an empty memory"));
        }
        Ok(rng.index(self.items.len()))
    }

    /// `n` uniform draws with replacement.
    pub fn sample(&self, n: usize, rng: &mut RngStream) -> Result<Vec<Artifact>> {
        if n == 0 {
            return Err(Error::contract("sample size must be positive"));
        }
        if self.is_empty() {
            return Err(Error::contract("sampling from an empty memory"));
        }
        Ok((0..n).map(|_| self.items[rng.index(self.items.len())]).collect())
    }

    /// Up to `n` distinct entries chosen uniformly without replacement.
    pub fn subsample(&self, n: usize, rng: &mut RngStream) -> Vec<Artifact> {
        let len = self.items.len();
        let n = n.min(len);
        let mut idx: Vec<usize> = (0..len).collect();
        for i in 0..n {
            let j = i + rng.index(len - i);
            idx.swap(i, j);
        }
        idx[..n].iter().map(|&i| self.items[i]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.items.iter().all(|o| o.iter().all(|v| v.is_finite()))
    }
}

/// Adam step count and rate for artifact creation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CreationConfig {
    pub steps: usize,
    pub lr: f64,
}

impl Default for CreationConfig {
    fn default() -> Self {
        CreationConfig { steps: 30, lr: 0.01 }
    }
}

/// One optimizer per parameter group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelOptimizers {
    pub encoder: AdamState,
    pub decoder: AdamState,
    pub discriminator: AdamState,
}

impl ModelOptimizers {
    pub fn new(model: &GenerativeModel, config: AdamConfig) -> Self {
        ModelOptimizers {
            encoder: AdamState::new(model.encoder.n_params(), config),
            decoder: AdamState::new(model.decoder.n_params(), config),
            discriminator: AdamState::new(model.discriminator.n_params(), config),
        }
    }
}

/// A freshly created artifact with its expected free energy after optimization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Creation {
    pub artifact: Artifact,
    pub efe: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: usize,
    pub model: GenerativeModel,
    pub buffer: MemoryBuffer,
    pub optim: ModelOptimizers,
}

/// `min(1, exp(−(g_new − g_old)/τ))`, evaluated in log space.
pub fn boltzmann_acceptance(g_new: f64, g_old: f64, tau: f64) -> f64 {
    (-(g_new - g_old) / tau).min(0.0).exp()
}

/// Selective memorization with a caller-supplied energy.
///
/// Draws a resident `o₋` uniformly, scores `[incoming, o₋]` with `energy`, and
/// replaces `o₋` by `incoming` with probability
/// [`boltzmann_acceptance`]`(𝒢(incoming), 𝒢(o₋), τ)`.
pub fn memorize_with<F>(
    buffer: &mut MemoryBuffer,
    incoming: Artifact,
    tau: f64,
    rng: &mut RngStream,
    mut energy: F,
) -> Result<bool>
where
    F: FnMut(&[Artifact; 2], &mut RngStream) -> Result<[f64; 2]>,
{
    if !(tau > 0.0) {
        return Err(Error::contract("memorization temperature must be positive"));
    }
    let victim = buffer.sample_index(rng)?;
    let [g_new, g_old] = energy(&[incoming, buffer.get(victim)], rng)?;
    let accepted = rng.accept(boltzmann_acceptance(g_new, g_old, tau));
    if accepted {
        buffer.replace(victim, incoming);
    }
    Ok(accepted)
}

impl Agent {
    pub fn new(id: usize, model: GenerativeModel, buffer: MemoryBuffer, update: AdamConfig) -> Self {
        let optim = ModelOptimizers::new(&model, update);
        Agent {
            id,
            model,
            buffer,
            optim,
        }
    }

    /// Creates `count` artifacts by Adam descent on the expected free energy,
    /// each started from a uniform memory draw, and appends them to memory.
    pub fn create_artifacts(
        &mut self,
        count: usize,
        cfg: &CreationConfig,
        hp: &HyperParams,
        rng: &mut RngStream,
    ) -> Result<Vec<Creation>> {
        if self.buffer.is_empty() {
            return Err(Error::contract("creation needs a nonempty memory"));
        }
        if count == 0 {
            return Ok(Vec::new());
        }
        let mut xs: Vec<Artifact> = self.buffer.sample(count, rng)?;
        // Adam is elementwise, so one state over all coordinates optimizes the
        // artifacts independently.
        let mut opt = AdamState::new(2 * count, AdamConfig::with_lr(cfg.lr));
        let mut flat: Vec<f64> = xs.concat();
        for _ in 0..cfg.steps {
            let (_, grads) = self.model.efe_batch(&xs, hp.lambda, hp.mc_samples, rng)?;
            opt.step(&mut flat, &grads.concat())?;
            for (x, c) in xs.iter_mut().zip(flat.chunks_exact(2)) {
                *x = [c[0], c[1]];
            }
        }
        let (values, _) = self.model.efe_batch(&xs, hp.lambda, hp.mc_samples, rng)?;
        let out: Vec<Creation> = xs
            .into_iter()
            .zip(values)
            .map(|(artifact, efe)| Creation { artifact, efe })
            .collect();
        for c in &out {
            if !c.artifact.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("created artifact"));
            }
            self.buffer.push(c.artifact);
        }
        Ok(out)
    }

    pub fn create_artifact(&mut self, cfg: &CreationConfig, hp: &HyperParams, rng: &mut RngStream) -> Result<Artifact> {
        Ok(self.create_artifacts(1, cfg, hp, rng)?[0].artifact)
    }

    /// Accepts a neighbour's creation into memory with the Boltzmann rule on
    /// this agent's own expected free energy.
    pub fn selective_memorize(&mut self, incoming: Artifact, hp: &HyperParams, rng: &mut RngStream) -> Result<bool> {
        let model = &self.model;
        memorize_with(&mut self.buffer, incoming, hp.tau, rng, |pair, rng| {
            let (g, _) = model.efe_batch(pair, hp.lambda, hp.mc_samples, rng)?;
            Ok([g[0], g[1]])
        })
    }
}
