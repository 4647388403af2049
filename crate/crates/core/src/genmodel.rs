//! Per-agent generative machinery.
//!
//! * encoder `q(z|o)`: 2 → hidden → 8, split into mean and log-variance of a
//!   diagonal Gaussian over the 4-D social representation;
//! * decoder `p(o|z)`: 4 → hidden → 2, mean of a unit-variance Gaussian;
//! * discriminator `D(z, o)`: 6 → hidden → 1, trained to approximate
//!   `log q(z|o) − log p_social(z)`.
//!
//! Every objective is evaluated over a batch with the reparameterization
//! trick and returns analytic gradients for exactly the parameters it is
//! allowed to move. The discriminator term enters the free energy with `+β`
//! and the expected free energy with `−1`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::{AdamConfig, AdamState, DenseMatrix, FeedForwardNet, RngStream};

pub const OBS_DIM: usize = 2;
pub const LATENT_DIM: usize = 4;
pub const LOGVAR_CLAMP: f64 = 10.0;
pub const DISC_CLAMP: f64 = 15.0;
const LOG_2PI: f64 = 1.837_877_066_409_345_5;

/// A 2-D observation.
pub type Artifact = [f64; OBS_DIM];
/// A 4-D social representation.
pub type SocialRep = [f64; LATENT_DIM];

/// Diagonal Gaussian posterior over the social representation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub mean: SocialRep,
    /// Clamped to `[-LOGVAR_CLAMP, LOGVAR_CLAMP]`.
    pub log_var: SocialRep,
}

impl GaussianPosterior {
    pub fn std(&self) -> SocialRep {
        self.log_var.map(|lv| (0.5 * lv).exp())
    }

    /// `z = mean + exp(½·log_var) ⊙ ε`
    pub fn sample(&self, rng: &mut RngStream) -> SocialRep {
        let sd = self.std();
        std::array::from_fn(|i| self.mean[i] + sd[i] * rng.normal())
    }

    /// Analytic `KL(self ‖ N(0, I))`.
    pub fn kl_to_standard(&self) -> f64 {
        self.mean
            .iter()
            .zip(&self.log_var)
            .map(|(m, lv)| 0.5 * (lv.exp() + m * m - 1.0 - lv))
            .sum()
    }
}

/// Loss weights and sample counts shared by the three objectives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Weight of the reconstruction term in the expected free energy.
    pub lambda: f64,
    /// Weight of the discriminator term in the variational free energy.
    pub beta: f64,
    /// Temperature of selective memorization.
    pub tau: f64,
    /// Monte-Carlo samples per observation.
    pub mc_samples: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            lambda: 0.1,
            beta: 1.0,
            tau: 0.3,
            mc_samples: 1,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("lambda", self.lambda), ("beta", self.beta), ("tau", self.tau)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config {
                    key: key.into(),
                    msg: format!("must be positive, got {v}"),
                });
            }
        }
        if self.mc_samples == 0 {
            return Err(Error::Config {
                key: "mc_samples".into(),
                msg: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

/// Scalar loss plus gradients for the parameter groups it trains.
#[derive(Clone, Debug, Default)]
pub struct LossGrads {
    pub value: f64,
    pub encoder: Vec<f64>,
    pub decoder: Vec<f64>,
    pub discriminator: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerativeModel {
    pub encoder: FeedForwardNet,
    pub decoder: FeedForwardNet,
    pub discriminator: FeedForwardNet,
}

fn clamp_grad(v: f64, limit: f64) -> (f64, f64) {
    if v > limit {
        (limit, 0.0)
    } else if v < -limit {
        (-limit, 0.0)
    } else {
        (v, 1.0)
    }
}

fn obs_matrix(obs: &[Artifact]) -> DenseMatrix {
    DenseMatrix::from_row_major(obs.len(), OBS_DIM, obs.concat()).expect("obs shape")
}

/// Reparameterized draws from the encoder for a batch, kept for backprop.
struct LatentDraws {
    enc_tape: crate::numerics::BatchTape,
    /// `S·B × LATENT_DIM`, row `s·B + b` belongs to observation `b`.
    eps: DenseMatrix,
    z: DenseMatrix,
    /// Post-clamp log-variances and clamp masks, `B × LATENT_DIM`.
    log_var: DenseMatrix,
    lv_mask: DenseMatrix,
}

impl GenerativeModel {
    /// Builds the three networks with the given hidden widths and Glorot init.
    pub fn new(hidden: &[usize], rng: &mut RngStream) -> Result<Self> {
        let mut encoder = FeedForwardNet::mlp(OBS_DIM, hidden, 2 * LATENT_DIM)?;
        let mut decoder = FeedForwardNet::mlp(LATENT_DIM, hidden, OBS_DIM)?;
        let mut discriminator = FeedForwardNet::mlp(LATENT_DIM + OBS_DIM, hidden, 1)?;
        encoder.init_glorot(rng);
        decoder.init_glorot(rng);
        discriminator.init_glorot(rng);
        Ok(GenerativeModel {
            encoder,
            decoder,
            discriminator,
        })
    }

    /// All three networks with zero parameters.
    pub fn zeros(hidden: &[usize]) -> Result<Self> {
        Ok(GenerativeModel {
            encoder: FeedForwardNet::mlp(OBS_DIM, hidden, 2 * LATENT_DIM)?,
            decoder: FeedForwardNet::mlp(LATENT_DIM, hidden, OBS_DIM)?,
            discriminator: FeedForwardNet::mlp(LATENT_DIM + OBS_DIM, hidden, 1)?,
        })
    }

    pub fn is_finite(&self) -> bool {
        [&self.encoder, &self.decoder, &self.discriminator]
            .iter()
            .all(|n| n.params().iter().all(|v| v.is_finite()))
    }

    pub fn encode_batch(&self, obs: &[Artifact]) -> Result<Vec<GaussianPosterior>> {
        let tape = self.encoder.forward_batch(&obs_matrix(obs))?;
        let out = tape.output();
        Ok((0..obs.len())
            .map(|b| {
                let row = out.row(b);
                GaussianPosterior {
                    mean: std::array::from_fn(|i| row[i]),
                    log_var: std::array::from_fn(|i| row[LATENT_DIM + i].clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP)),
                }
            })
            .collect())
    }

    pub fn encode(&self, o: &Artifact) -> Result<GaussianPosterior> {
        Ok(self.encode_batch(std::slice::from_ref(o))?[0])
    }

    /// Decoder means for a batch of latents.
    pub fn decode_batch(&self, zs: &[SocialRep]) -> Result<Vec<Artifact>> {
        let z = DenseMatrix::from_row_major(zs.len(), LATENT_DIM, zs.concat())?;
        let tape = self.decoder.forward_batch(&z)?;
        Ok((0..zs.len())
            .map(|b| {
                let r = tape.output().row(b);
                [r[0], r[1]]
            })
            .collect())
    }

    /// `log N(o; decoder(z), I₂)` for paired rows.
    pub fn decode_loglik_batch(&self, obs: &[Artifact], zs: &[SocialRep]) -> Result<Vec<f64>> {
        check_dim("decode_loglik_batch", obs.len(), zs.len())?;
        let means = self.decode_batch(zs)?;
        Ok(obs.iter().zip(&means).map(|(o, m)| gaussian_loglik(o, m)).collect())
    }

    pub fn decode_loglik(&self, o: &Artifact, z: &SocialRep) -> Result<f64> {
        Ok(self.decode_loglik_batch(std::slice::from_ref(o), std::slice::from_ref(z))?[0])
    }

    /// Clamped discriminator outputs for paired rows.
    pub fn discriminate_batch(&self, zs: &[SocialRep], obs: &[Artifact]) -> Result<Vec<f64>> {
        check_dim("discriminate_batch", obs.len(), zs.len())?;
        let input = disc_input(zs.iter().copied(), obs.iter());
        let tape = self.discriminator.forward_batch(&input)?;
        Ok(tape
            .output()
            .as_slice()
            .iter()
            .map(|d| d.clamp(-DISC_CLAMP, DISC_CLAMP))
            .collect())
    }

    /// Encodes `x` (a `B × 2` batch) and draws `samples` latents per row.
    fn draw_latents(&self, x: &DenseMatrix, samples: usize, rng: &mut RngStream) -> Result<LatentDraws> {
        let b = x.rows();
        let enc_tape = self.encoder.forward_batch(x)?;
        let enc = enc_tape.output();
        let mut log_var = DenseMatrix::zeros(b, LATENT_DIM);
        let mut lv_mask = DenseMatrix::zeros(b, LATENT_DIM);
        for r in 0..b {
            for i in 0..LATENT_DIM {
                let (v, m) = clamp_grad(enc.get(r, LATENT_DIM + i), LOGVAR_CLAMP);
                log_var.set(r, i, v);
                lv_mask.set(r, i, m);
            }
        }
        let mut eps = DenseMatrix::zeros(samples * b, LATENT_DIM);
        rng.fill_normal(eps.as_mut_slice());
        let mut z = DenseMatrix::zeros(samples * b, LATENT_DIM);
        for s in 0..samples {
            for r in 0..b {
                let row = s * b + r;
                for i in 0..LATENT_DIM {
                    let sd = (0.5 * log_var.get(r, i)).exp();
                    z.set(row, i, enc.get(r, i) + sd * eps.get(row, i));
                }
            }
        }
        Ok(LatentDraws {
            enc_tape,
            eps,
            z,
            log_var,
            lv_mask,
        })
    }

    /// Backpropagates `dz` (`S·B × 4`) through the reparameterization into
    /// the encoder. Returns the gradient w.r.t. the encoder input.
    fn backprop_latents(
        &self,
        draws: &LatentDraws,
        dz: &DenseMatrix,
        enc_grads: Option<&mut [f64]>,
    ) -> Result<DenseMatrix> {
        let b = draws.log_var.rows();
        let samples = dz.rows() / b;
        let mut d_enc = DenseMatrix::zeros(b, 2 * LATENT_DIM);
        for s in 0..samples {
            for r in 0..b {
                let row = s * b + r;
                for i in 0..LATENT_DIM {
                    let g = dz.get(row, i);
                    let sd = (0.5 * draws.log_var.get(r, i)).exp();
                    d_enc.as_mut_slice()[r * 2 * LATENT_DIM + i] += g;
                    d_enc.as_mut_slice()[r * 2 * LATENT_DIM + LATENT_DIM + i] +=
                        g * draws.eps.get(row, i) * 0.5 * sd * draws.lv_mask.get(r, i);
                }
            }
        }
        self.encoder.backward_batch(&draws.enc_tape, &d_enc, enc_grads)
    }

    /// Variational free energy, averaged over the batch:
    /// `β·E_q[D(z, o)] − E_q[log p(o|z)]`.
    ///
    /// Gradients are returned for the encoder and decoder; the discriminator
    /// is held fixed but still passes gradient to its `z` input.
    pub fn vfe_loss(&self, obs: &[Artifact], beta: f64, samples: usize, rng: &mut RngStream) -> Result<LossGrads> {
        nonempty(obs, "vfe_loss")?;
        let x = obs_matrix(obs);
        let b = obs.len();
        let n = (b * samples) as f64;
        let draws = self.draw_latents(&x, samples, rng)?;

        let dec_tape = self.decoder.forward_batch(&draws.z)?;
        let recon = dec_tape.output();
        let disc_tape = self
            .discriminator
            .forward_batch(&disc_input_rows(&draws.z, &x, samples))?;

        let mut value = 0.0;
        let mut d_recon = DenseMatrix::zeros(b * samples, OBS_DIM);
        let mut d_disc = DenseMatrix::zeros(b * samples, 1);
        for row in 0..b * samples {
            let o = x.row(row % b);
            let r = recon.row(row);
            let mut sq = 0.0;
            for j in 0..OBS_DIM {
                let diff = o[j] - r[j];
                sq += diff * diff;
                // d(−log p)/dr = −(o − r)
                d_recon.set(row, j, -diff / n);
            }
            let ll = -0.5 * sq - LOG_2PI;
            let (d, mask) = clamp_grad(disc_tape.output().get(row, 0), DISC_CLAMP);
            value += beta * d - ll;
            d_disc.set(row, 0, beta * mask / n);
        }
        value /= n;

        let mut dec_grads = vec![0.0; self.decoder.n_params()];
        let mut dz = self.decoder.backward_batch(&dec_tape, &d_recon, Some(&mut dec_grads))?;
        let d_disc_in = self.discriminator.backward_batch(&disc_tape, &d_disc, None)?;
        for row in 0..dz.rows() {
            for i in 0..LATENT_DIM {
                let v = dz.get(row, i) + d_disc_in.get(row, i);
                dz.set(row, i, v);
            }
        }
        let mut enc_grads = vec![0.0; self.encoder.n_params()];
        self.backprop_latents(&draws, &dz, Some(&mut enc_grads))?;
        Ok(LossGrads {
            value,
            encoder: enc_grads,
            decoder: dec_grads,
            discriminator: Vec::new(),
        })
    }

    /// Reverse-KL f-GAN discriminator loss:
    /// `mean_P exp(D(z, o)) − mean_{o∈own, z~q(·|o)} D(z, o)`.
    ///
    /// Only the discriminator receives gradients.
    pub fn disc_loss(
        &self,
        pairs: &[(Artifact, SocialRep)],
        own_obs: &[Artifact],
        samples: usize,
        rng: &mut RngStream,
    ) -> Result<LossGrads> {
        nonempty(pairs, "disc_loss pairs")?;
        nonempty(own_obs, "disc_loss own observations")?;
        let x = obs_matrix(own_obs);
        let draws = self.draw_latents(&x, samples, rng)?;
        let n_pairs = pairs.len();
        let n_own = own_obs.len() * samples;

        let mut input = DenseMatrix::zeros(n_pairs + n_own, LATENT_DIM + OBS_DIM);
        for (row, (o, z)) in pairs.iter().enumerate() {
            let r = input.row_mut(row);
            r[..LATENT_DIM].copy_from_slice(z);
            r[LATENT_DIM..].copy_from_slice(o);
        }
        for row in 0..n_own {
            let r = input.row_mut(n_pairs + row);
            r[..LATENT_DIM].copy_from_slice(draws.z.row(row));
            r[LATENT_DIM..].copy_from_slice(x.row(row % own_obs.len()));
        }
        let tape = self.discriminator.forward_batch(&input)?;
        let out = tape.output();

        let mut upstream = DenseMatrix::zeros(n_pairs + n_own, 1);
        let mut pos = 0.0;
        for row in 0..n_pairs {
            let (d, mask) = clamp_grad(out.get(row, 0), DISC_CLAMP);
            let e = d.exp();
            pos += e;
            upstream.set(row, 0, mask * e / n_pairs as f64);
        }
        let mut neg = 0.0;
        for row in n_pairs..n_pairs + n_own {
            let (d, mask) = clamp_grad(out.get(row, 0), DISC_CLAMP);
            neg += d;
            upstream.set(row, 0, -mask / n_own as f64);
        }
        let value = pos / n_pairs as f64 - neg / n_own as f64;
        let mut grads = vec![0.0; self.discriminator.n_params()];
        self.discriminator.backward_batch(&tape, &upstream, Some(&mut grads))?;
        Ok(LossGrads {
            value,
            encoder: Vec::new(),
            decoder: Vec::new(),
            discriminator: grads,
        })
    }

    /// Expected free energy of each artifact, with its gradient w.r.t. the artifact:
    /// `𝒢(o) = −E_q[D(z, o)] − λ·E_q[log p(o|z)]`.
    ///
    /// Model parameters are constants here. The gradient flows through the
    /// encoder, both discriminator inputs and the decoder residual.
    pub fn efe_batch(
        &self,
        obs: &[Artifact],
        lambda: f64,
        samples: usize,
        rng: &mut RngStream,
    ) -> Result<(Vec<f64>, Vec<Artifact>)> {
        nonempty(obs, "efe")?;
        let x = obs_matrix(obs);
        if !x.is_finite() {
            return Err(Error::NonFinite("efe artifact"));
        }
        let b = obs.len();
        let s = samples as f64;
        let draws = self.draw_latents(&x, samples, rng)?;
        let dec_tape = self.decoder.forward_batch(&draws.z)?;
        let recon = dec_tape.output();
        let disc_tape = self
            .discriminator
            .forward_batch(&disc_input_rows(&draws.z, &x, samples))?;

        let mut values = vec![0.0; b];
        let mut grad_o = vec![[0.0; OBS_DIM]; b];
        let mut d_recon = DenseMatrix::zeros(b * samples, OBS_DIM);
        let mut d_disc = DenseMatrix::zeros(b * samples, 1);
        for row in 0..b * samples {
            let idx = row % b;
            let o = x.row(idx);
            let r = recon.row(row);
            let mut sq = 0.0;
            for j in 0..OBS_DIM {
                let diff = o[j] - r[j];
                sq += diff * diff;
                // −λ·log p = λ(½‖o − r‖² + log 2π)
                grad_o[idx][j] += lambda * diff / s;
                d_recon.set(row, j, -lambda * diff / s);
            }
            let ll = -0.5 * sq - LOG_2PI;
            let (d, mask) = clamp_grad(disc_tape.output().get(row, 0), DISC_CLAMP);
            values[idx] += (-d - lambda * ll) / s;
            d_disc.set(row, 0, -mask / s);
        }

        let mut dz = self.decoder.backward_batch(&dec_tape, &d_recon, None)?;
        let d_disc_in = self.discriminator.backward_batch(&disc_tape, &d_disc, None)?;
        for row in 0..b * samples {
            for i in 0..LATENT_DIM {
                let v = dz.get(row, i) + d_disc_in.get(row, i);
                dz.set(row, i, v);
            }
            for j in 0..OBS_DIM {
                grad_o[row % b][j] += d_disc_in.get(row, LATENT_DIM + j);
            }
        }
        let dx = self.backprop_latents(&draws, &dz, None)?;
        for (idx, g) in grad_o.iter_mut().enumerate() {
            for j in 0..OBS_DIM {
                g[j] += dx.get(idx, j);
            }
        }
        Ok((values, grad_o))
    }

    pub fn efe(&self, o: &Artifact, lambda: f64, samples: usize, rng: &mut RngStream) -> Result<(f64, Artifact)> {
        let (v, g) = self.efe_batch(std::slice::from_ref(o), lambda, samples, rng)?;
        Ok((v[0], g[0]))
    }

    /// Negative ELBO with a standard-normal prior, averaged over the batch:
    /// `E_q[−log p(o|z)] + KL(q(·|o) ‖ N(0, I))`.
    pub fn elbo_loss(&self, obs: &[Artifact], samples: usize, rng: &mut RngStream) -> Result<LossGrads> {
        nonempty(obs, "elbo_loss")?;
        let x = obs_matrix(obs);
        let b = obs.len();
        let n = (b * samples) as f64;
        let draws = self.draw_latents(&x, samples, rng)?;
        let dec_tape = self.decoder.forward_batch(&draws.z)?;
        let recon = dec_tape.output();

        let mut value = 0.0;
        let mut d_recon = DenseMatrix::zeros(b * samples, OBS_DIM);
        for row in 0..b * samples {
            let o = x.row(row % b);
            let r = recon.row(row);
            let mut sq = 0.0;
            for j in 0..OBS_DIM {
                let diff = o[j] - r[j];
                sq += diff * diff;
                d_recon.set(row, j, -diff / n);
            }
            value += 0.5 * sq + LOG_2PI;
        }
        value /= n;

        let mut dec_grads = vec![0.0; self.decoder.n_params()];
        let dz = self.decoder.backward_batch(&dec_tape, &d_recon, Some(&mut dec_grads))?;

        // reparameterized reconstruction path
        let mut enc_grads = vec![0.0; self.encoder.n_params()];
        self.backprop_latents(&draws, &dz, Some(&mut enc_grads))?;

        // analytic KL path
        let enc = draws.enc_tape.output();
        let mut d_enc = DenseMatrix::zeros(b, 2 * LATENT_DIM);
        let mut kl = 0.0;
        for r in 0..b {
            for i in 0..LATENT_DIM {
                let m = enc.get(r, i);
                let lv = draws.log_var.get(r, i);
                kl += 0.5 * (lv.exp() + m * m - 1.0 - lv);
                d_enc.set(r, i, m / b as f64);
                d_enc.set(
                    r,
                    LATENT_DIM + i,
                    0.5 * (lv.exp() - 1.0) * draws.lv_mask.get(r, i) / b as f64,
                );
            }
        }
        value += kl / b as f64;
        self.encoder
            .backward_batch(&draws.enc_tape, &d_enc, Some(&mut enc_grads))?;
        Ok(LossGrads {
            value,
            encoder: enc_grads,
            decoder: dec_grads,
            discriminator: Vec::new(),
        })
    }
}

/// Settings for the initial VAE fit of encoder and decoder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 200,
            batch_size: 256,
            lr: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Negative ELBO over the whole dataset before and after fitting.
    pub initial_loss: f64,
    pub final_loss: f64,
}

impl GenerativeModel {
    /// Fits encoder and decoder to `data` as a VAE with a `N(0, I)` prior.
    /// The discriminator is left untouched.
    pub fn pretrain_vae(
        &mut self,
        data: &[Artifact],
        cfg: &PretrainConfig,
        rng: &mut RngStream,
    ) -> Result<PretrainReport> {
        nonempty(data, "pretrain_vae")?;
        let mut eval_rng = rng.split(0);
        let initial_loss = self.elbo_loss(data, 1, &mut eval_rng.clone())?.value;
        let adam = AdamConfig::with_lr(cfg.lr);
        let mut enc_opt = AdamState::new(self.encoder.n_params(), adam);
        let mut dec_opt = AdamState::new(self.decoder.n_params(), adam);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.epochs {
            rng.shuffle(&mut order);
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                batch.clear();
                batch.extend(chunk.iter().map(|&i| data[i]));
                let lg = self.elbo_loss(&batch, 1, rng)?;
                enc_opt.step(self.encoder.params_mut(), &lg.encoder)?;
                dec_opt.step(self.decoder.params_mut(), &lg.decoder)?;
            }
        }
        let final_loss = self.elbo_loss(data, 1, &mut eval_rng)?.value;
        Ok(PretrainReport {
            initial_loss,
            final_loss,
        })
    }

    /// Writes encoder, decoder and discriminator parameters in that order as
    /// little-endian `f64`, each net layer by layer (weights row-major, then biases).
    pub fn write_params(&self, out: &mut impl Write) -> std::io::Result<()> {
        for net in [&self.encoder, &self.decoder, &self.discriminator] {
            for v in net.params() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Inverse of [`write_params`](Self::write_params) for a model of the same shape.
    pub fn read_params(&mut self, bytes: &[u8]) -> Result<()> {
        let total = self.encoder.n_params() + self.decoder.n_params() + self.discriminator.n_params();
        check_dim("GenerativeModel::read_params bytes", total * 8, bytes.len())?;
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let (enc, rest) = values.split_at(self.encoder.n_params());
        let (dec, disc) = rest.split_at(self.decoder.n_params());
        self.encoder.set_params(enc)?;
        self.decoder.set_params(dec)?;
        self.discriminator.set_params(disc)?;
        Ok(())
    }
}

fn nonempty<T>(xs: &[T], what: &str) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::contract(format!("{what}: empty batch")));
    }
    Ok(())
}

/// `log N(o; mean, I₂)`
pub fn gaussian_loglik(o: &Artifact, mean: &Artifact) -> f64 {
    let sq: f64 = o.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * sq - LOG_2PI
}

fn disc_input<'a>(zs: impl Iterator<Item = SocialRep>, obs: impl Iterator<Item = &'a Artifact>) -> DenseMatrix {
    let rows: Vec<[f64; LATENT_DIM + OBS_DIM]> = zs
        .zip(obs)
        .map(|(z, o)| std::array::from_fn(|i| if i < LATENT_DIM { z[i] } else { o[i - LATENT_DIM] }))
        .collect();
    DenseMatrix::from_rows(&rows, LATENT_DIM + OBS_DIM).expect("disc input shape")
}

/// `[z | o]` rows where `o` repeats every `x.rows()` rows.
fn disc_input_rows(z: &DenseMatrix, x: &DenseMatrix, samples: usize) -> DenseMatrix {
    let b = x.rows();
    let mut input = DenseMatrix::zeros(b * samples, LATENT_DIM + OBS_DIM);
    for row in 0..b * samples {
        let r = input.row_mut(row);
        r[..LATENT_DIM].copy_from_slice(z.row(row));
        r[LATENT_DIM..].copy_from_slice(x.row(row % b));
    }
    input
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    fn model(seed: u64) -> GenerativeModel {
        GenerativeModel::new(&[8, 8], &mut RngStream::new(seed)).unwrap()
    }

    fn set_constant_disc(m: &mut GenerativeModel, c: f64) {
        let n = m.discriminator.n_params();
        let mut p = vec![0.0; n];
        p[n - 1] = c;
        m.discriminator.set_params(&p).unwrap();
    }

    #[test]
    fn log_2pi_constant() {
        assert!((LOG_2PI - (2.0 * PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn zero_encoder_gives_unit_gaussian() {
        let m = GenerativeModel::zeros(&[8, 8]).unwrap();
        let q = m.encode(&[0.3, -1.2]).unwrap();
        assert_eq!(q.mean, [0.0; 4]);
        assert_eq!(q.log_var, [0.0; 4]);
        assert_eq!(q.kl_to_standard(), 0.0);
    }

    #[test]
    fn encode_is_deterministic() {
        let m = model(1);
        assert_eq!(m.encode(&[0.5, 0.5]).unwrap(), m.encode(&[0.5, 0.5]).unwrap());
    }

    #[test]
    fn encode_rejects_non_finite() {
        let m = model(1);
        assert!(matches!(m.encode(&[f64::NAN, 0.0]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn kl_spot_value() {
        let q = GaussianPosterior {
            mean: [1.0, 0.0, 0.0, 0.0],
            log_var: [0.0; 4],
        };
        assert!((q.kl_to_standard() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn minimal_variance_sample_is_mean() {
        let q = GaussianPosterior {
            mean: [1.0, -2.0, 3.0, 0.5],
            log_var: [-LOGVAR_CLAMP; 4],
        };
        let z = q.sample(&mut RngStream::new(4));
        for (a, b) in z.iter().zip(q.mean) {
            assert!((a - b).abs() < 0.05);
        }
    }

    #[test]
    fn reparam_sample_moments() {
        let q = GaussianPosterior {
            mean: [0.5, -1.0, 2.0, 0.0],
            log_var: [0.0, 1.0, -1.0, 0.5],
        };
        let mut rng = RngStream::new(9);
        let n = 100_000;
        let mut sum = [0.0; 4];
        let mut sq = [0.0; 4];
        for _ in 0..n {
            let z = q.sample(&mut rng);
            for i in 0..4 {
                sum[i] += z[i];
                sq[i] += z[i] * z[i];
            }
        }
        let sd = q.std();
        for i in 0..4 {
            let mean = sum[i] / n as f64;
            let var = sq[i] / n as f64 - mean * mean;
            let target_var = sd[i] * sd[i];
            // 3% of the scale of each coordinate
            assert!((mean - q.mean[i]).abs() < 0.03 * sd[i].max(q.mean[i].abs()), "mean {i}");
            assert!((var - target_var).abs() < 0.03 * target_var, "var {i}");
        }
    }

    #[test]
    fn decode_loglik_analytic_values() {
        let m = model(2);
        let z = [0.1, 0.2, -0.3, 0.4];
        let r = m.decode_batch(&[z]).unwrap()[0];
        assert!((m.decode_loglik(&r, &z).unwrap() + LOG_2PI).abs() < 1e-12);
        let o = [r[0] + 0.6, r[1] - 0.8];
        assert!((m.decode_loglik(&o, &z).unwrap() - (-0.5 - LOG_2PI)).abs() < 1e-12);
    }

    #[test]
    fn decode_loglik_matches_direct_density() {
        let m = model(3);
        let mut rng = RngStream::new(30);
        for _ in 0..20 {
            let z: SocialRep = std::array::from_fn(|_| rng.normal());
            let o: Artifact = std::array::from_fn(|_| rng.normal() * 2.0);
            let mu = m.decode_batch(&[z]).unwrap()[0];
            let density: f64 = (0..2)
                .map(|j| (-(o[j] - mu[j]).powi(2) / 2.0).exp() / (2.0 * PI).sqrt())
                .product();
            assert!((m.decode_loglik(&o, &z).unwrap() - density.ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn vfe_with_zero_discriminator_is_reconstruction() {
        let mut m = model(4);
        set_constant_disc(&mut m, 0.0);
        let obs = [[0.3, 0.1], [-1.0, 2.0]];
        let rng = RngStream::new(5);
        let lg = m.vfe_loss(&obs, 1.0, 3, &mut rng.clone()).unwrap();
        // replay the same noise to get the latents
        let draws = m.draw_latents(&obs_matrix(&obs), 3, &mut rng.clone()).unwrap();
        let mut nll = 0.0;
        for row in 0..6 {
            let z: SocialRep = std::array::from_fn(|i| draws.z.get(row, i));
            nll -= m.decode_loglik(&obs[row % 2], &z).unwrap();
        }
        assert!((lg.value - nll / 6.0).abs() < 1e-12);
    }

    #[test]
    fn vfe_beta_zero_ignores_discriminator() {
        let mut a = model(6);
        let mut b = a.clone();
        set_constant_disc(&mut a, 0.0);
        b.discriminator.init_glorot(&mut RngStream::new(77));
        let obs = [[0.3, 0.1], [-1.0, 2.0], [0.0, 0.5]];
        let rng = RngStream::new(8);
        let ga = a.vfe_loss(&obs, 0.0, 1, &mut rng.clone()).unwrap();
        let gb = b.vfe_loss(&obs, 0.0, 1, &mut rng.clone()).unwrap();
        assert_eq!(ga.encoder, gb.encoder);
        assert_eq!(ga.decoder, gb.decoder);
    }

    #[test]
    fn disc_loss_of_zero_discriminator_is_one() {
        let mut m = model(10);
        set_constant_disc(&mut m, 0.0);
        let pairs = vec![([0.0, 1.0], [0.1, 0.2, 0.3, 0.4]); 5];
        let lg = m.disc_loss(&pairs, &[[0.2, 0.2]], 1, &mut RngStream::new(1)).unwrap();
        assert_eq!(lg.value, 1.0);
    }

    #[test]
    fn disc_loss_requires_pairs() {
        let m = model(10);
        assert!(m.disc_loss(&[], &[[0.0, 0.0]], 1, &mut RngStream::new(1)).is_err());
    }

    #[test]
    fn efe_with_constant_discriminator() {
        let mut m = model(11);
        set_constant_disc(&mut m, 0.7);
        let o = [0.4, -0.2];
        let rng = RngStream::new(12);
        let (g, _) = m.efe(&o, 0.1, 4, &mut rng.clone()).unwrap();
        let draws = m.draw_latents(&obs_matrix(&[o]), 4, &mut rng.clone()).unwrap();
        let mut ll = 0.0;
        for row in 0..4 {
            let z: SocialRep = std::array::from_fn(|i| draws.z.get(row, i));
            ll += m.decode_loglik(&o, &z).unwrap() / 4.0;
        }
        assert!((g - (-0.7 - 0.1 * ll)).abs() < 1e-12);
    }

    #[test]
    fn efe_descent_raises_linear_discriminator() {
        // D(z, o) = o_x, so −∇𝒢 points along +x when λ = 0
        let mut m = model(13);
        let n = m.discriminator.n_params();
        let mut p = vec![0.0; n];
        let shapes = m.discriminator.layers().to_vec();
        // identity-ish chain on the o_x input through the tanh layers
        let (l0, l1) = (shapes[0], shapes[1]);
        p[LATENT_DIM] = 0.1; // W0[0][4]
        let off1 = l0.input * l0.output + l0.output;
        p[off1] = 1.0; // W1[0][0]
        let off2 = off1 + l1.input * l1.output + l1.output;
        p[off2] = 1.0; // W2[0][0]
        m.discriminator.set_params(&p).unwrap();
        let (_, g) = m.efe(&[0.2, 0.3], 1e-12, 1, &mut RngStream::new(1)).unwrap();
        assert!(g[0] < 0.0, "{g:?}");
    }

    #[test]
    fn sign_antagonism_of_discriminator_term() {
        let mut m = model(14);
        let o = [0.1, 0.9];
        let rng = RngStream::new(3);
        set_constant_disc(&mut m, 0.0);
        let v0 = m.vfe_loss(&[o], 1.0, 1, &mut rng.clone()).unwrap().value;
        let g0 = m.efe(&o, 1.0, 1, &mut rng.clone()).unwrap().0;
        set_constant_disc(&mut m, 2.0);
        let v1 = m.vfe_loss(&[o], 1.0, 1, &mut rng.clone()).unwrap().value;
        let g1 = m.efe(&o, 1.0, 1, &mut rng.clone()).unwrap().0;
        assert!((v1 - v0 - 2.0).abs() < 1e-12);
        assert!((g1 - g0 + 2.0).abs() < 1e-12);
    }

    #[test]
    fn losses_stay_finite_at_extreme_inputs() {
        let mut m = model(15);
        // large discriminator outputs hit the clamp
        let n = m.discriminator.n_params();
        let mut p = m.discriminator.params().to_vec();
        p[n - 1] = 1e3;
        m.discriminator.set_params(&p).unwrap();
        let o = [1e3, -1e3];
        let mut rng = RngStream::new(1);
        assert!(m.vfe_loss(&[o], 1.0, 1, &mut rng).unwrap().value.is_finite());
        let (g, grad) = m.efe(&o, 0.1, 1, &mut rng).unwrap();
        assert!(g.is_finite() && grad.iter().all(|v| v.is_finite()));
        let lg = m.disc_loss(&[(o, [0.0; 4])], &[o], 1, &mut rng).unwrap();
        assert!(lg.value.is_finite());
    }

    #[test]
    fn pretraining_improves_elbo() {
        let mut rng = RngStream::new(21);
        let data: Vec<Artifact> = (0..512)
            .map(|_| [1.0 + 0.25 * rng.normal(), -0.5 + 0.25 * rng.normal()])
            .collect();
        let mut m = model(22);
        let disc_before = m.discriminator.clone();
        let report = m
            .pretrain_vae(
                &data,
                &PretrainConfig {
                    epochs: 20,
                    batch_size: 64,
                    lr: 1e-3,
                },
                &mut rng,
            )
            .unwrap();
        assert!(report.final_loss < report.initial_loss, "{report:?}");
        assert_eq!(m.discriminator, disc_before);
    }

    #[test]
    fn params_round_trip() {
        let m = model(23);
        let mut bytes = Vec::new();
        m.write_params(&mut bytes).unwrap();
        let mut back = GenerativeModel::zeros(&[8, 8]).unwrap();
        back.read_params(&bytes).unwrap();
        assert_eq!(back, m);
        assert!(back.read_params(&bytes[..16]).is_err());
    }
}
