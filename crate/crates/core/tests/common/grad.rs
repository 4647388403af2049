use cocreate::genmodel::{Artifact, GenerativeModel, SocialRep};
use cocreate::numerics::RngStream;

use super::{fd_check, sample_indices};

pub const POINTS: u64 = 10;

pub fn random_obs(rng: &mut RngStream, n: usize) -> Vec<Artifact> {
    (0..n).map(|_| [1.5 * rng.normal(), 1.5 * rng.normal()]).collect()
}

pub fn random_pairs(rng: &mut RngStream, n: usize) -> Vec<(Artifact, SocialRep)> {
    (0..n)
        .map(|_| {
            (
                [1.5 * rng.normal(), 1.5 * rng.normal()],
                std::array::from_fn(|_| rng.normal()),
            )
        })
        .collect()
}

/// Worst relative FD error of the VFE encoder/decoder gradients over 10 points.
pub fn vfe_worst(hidden: &[usize], per_net: usize) -> f64 {
    let mut overall: f64 = 0.0;
    for point in 0..POINTS {
        let mut rng = RngStream::new(200 + point);
        let model = GenerativeModel::new(hidden, &mut rng).unwrap();
        let obs = random_obs(&mut rng, 5);
        let noise = rng.split(1);
        let lg = model.vfe_loss(&obs, 1.0, 2, &mut noise.clone()).unwrap();

        let mut probe = model.clone();
        let idx = sample_indices(model.encoder.n_params(), per_net, &mut rng);
        let worst = fd_check(model.encoder.params(), &lg.encoder, &idx, &mut |p| {
            probe.encoder.set_params(p).unwrap();
            probe.vfe_loss(&obs, 1.0, 2, &mut noise.clone()).unwrap().value
        });
        overall = overall.max(worst);

        let mut probe = model.clone();
        let idx = sample_indices(model.decoder.n_params(), per_net, &mut rng);
        let worst = fd_check(model.decoder.params(), &lg.decoder, &idx, &mut |p| {
            probe.decoder.set_params(p).unwrap();
            probe.vfe_loss(&obs, 1.0, 2, &mut noise.clone()).unwrap().value
        });
        overall = overall.max(worst);
    }
    overall
}

/// Worst relative FD error of the discriminator-loss gradients over 10 points.
pub fn disc_worst(hidden: &[usize], per_net: usize) -> f64 {
    let mut overall: f64 = 0.0;
    for point in 0..POINTS {
        let mut rng = RngStream::new(300 + point);
        let model = GenerativeModel::new(hidden, &mut rng).unwrap();
        let pairs = random_pairs(&mut rng, 7);
        let own = random_obs(&mut rng, 5);
        let noise = rng.split(1);
        let lg = model.disc_loss(&pairs, &own, 2, &mut noise.clone()).unwrap();
        let mut probe = model.clone();
        let idx = sample_indices(model.discriminator.n_params(), per_net, &mut rng);
        let worst = fd_check(model.discriminator.params(), &lg.discriminator, &idx, &mut |p| {
            probe.discriminator.set_params(p).unwrap();
            probe.disc_loss(&pairs, &own, 2, &mut noise.clone()).unwrap().value
        });
        overall = overall.max(worst);
    }
    overall
}

/// Worst relative FD error of the EFE input gradient over 10 points.
pub fn efe_worst(hidden: &[usize]) -> f64 {
    let mut overall: f64 = 0.0;
    for point in 0..POINTS {
        let mut rng = RngStream::new(400 + point);
        let model = GenerativeModel::new(hidden, &mut rng).unwrap();
        let o = random_obs(&mut rng, 1)[0];
        let noise = rng.split(1);
        let (_, g) = model.efe(&o, 0.1, 3, &mut noise.clone()).unwrap();
        let worst = fd_check(&o, &g, &[0, 1], &mut |x| {
            model.efe(&[x[0], x[1]], 0.1, 3, &mut noise.clone()).unwrap().0
        });
        overall = overall.max(worst);
    }
    overall
}
