mod common;

use cocreate::genmodel::GenerativeModel;
use cocreate::numerics::{DenseVector, FeedForwardNet, RngStream};
use common::grad::{disc_worst, efe_worst, random_obs, vfe_worst, POINTS};
use common::{fd_check, FD_REL_TOL};

#[test]
fn two_layer_tanh_forward_matches_scalar_evaluation() {
    let mut net = FeedForwardNet::mlp(3, &[4], 2).unwrap();
    net.init_glorot(&mut RngStream::new(1));
    // nonzero biases too
    let mut p = net.params().to_vec();
    for (i, v) in p.iter_mut().enumerate() {
        *v += 0.01 * i as f64;
    }
    net.set_params(&p).unwrap();
    let x = [0.3, -0.8, 1.1];

    // straight-line evaluation: W0 (4×3), b0 (4), W1 (2×4), b1 (2)
    let w0 = &p[0..12];
    let b0 = &p[12..16];
    let w1 = &p[16..24];
    let b1 = &p[24..26];
    let mut h = [0.0; 4];
    for j in 0..4 {
        let mut acc = b0[j];
        for i in 0..3 {
            acc += w0[j * 3 + i] * x[i];
        }
        h[j] = acc.tanh();
    }
    let mut y = [0.0; 2];
    for k in 0..2 {
        let mut acc = b1[k];
        for j in 0..4 {
            acc += w1[k * 4 + j] * h[j];
        }
        y[k] = acc;
    }
    let out = net.forward(&DenseVector::new(x.to_vec()).unwrap()).unwrap();
    for k in 0..2 {
        assert!((out[k] - y[k]).abs() < 1e-14);
    }
    // bit-identical on repetition
    let again = net.forward(&DenseVector::new(x.to_vec()).unwrap()).unwrap();
    assert_eq!(out, again);
}

#[test]
fn net_backward_matches_finite_differences() {
    for point in 0..POINTS {
        let mut rng = RngStream::new(100 + point);
        let mut net = FeedForwardNet::mlp(3, &[7, 5], 2).unwrap();
        net.init_glorot(&mut rng);
        let x: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let up: Vec<f64> = (0..2).map(|_| rng.normal()).collect();
        net.forward(&DenseVector::new(x.clone()).unwrap()).unwrap();
        let (g, gx) = net.backward(&DenseVector::new(up.clone()).unwrap()).unwrap();

        let mut probe = net.clone();
        let xv = DenseVector::new(x.clone()).unwrap();
        let uv = DenseVector::new(up.clone()).unwrap();
        let worst = fd_check(net.params(), &g, &(0..net.n_params()).collect::<Vec<_>>(), &mut |p| {
            probe.set_params(p).unwrap();
            probe.forward(&xv).unwrap().dot(&uv).unwrap()
        });
        assert!(worst <= FD_REL_TOL, "param grads, point {point}: {worst}");

        let mut probe = net.clone();
        let worst = fd_check(&x, gx.as_slice(), &[0, 1, 2], &mut |xi| {
            probe
                .forward(&DenseVector::new(xi.to_vec()).unwrap())
                .unwrap()
                .dot(&uv)
                .unwrap()
        });
        assert!(worst <= FD_REL_TOL, "input grads, point {point}: {worst}");
    }
}

#[test]
fn vfe_gradients_small_nets_all_params() {
    let worst = vfe_worst(&[12, 12], usize::MAX);
    assert!(worst <= FD_REL_TOL, "{worst}");
}

#[test]
fn disc_gradients_small_nets_all_params() {
    let worst = disc_worst(&[12, 12], usize::MAX);
    assert!(worst <= FD_REL_TOL, "{worst}");
}

#[test]
fn efe_gradients_small_nets() {
    let worst = efe_worst(&[12, 12]);
    assert!(worst <= FD_REL_TOL, "{worst}");
}

#[test]
fn elbo_gradients() {
    for point in 0..3 {
        let mut rng = RngStream::new(500 + point);
        let model = GenerativeModel::new(&[10, 10], &mut rng).unwrap();
        let obs = random_obs(&mut rng, 4);
        let noise = rng.split(1);
        let lg = model.elbo_loss(&obs, 2, &mut noise.clone()).unwrap();
        let mut probe = model.clone();
        let idx: Vec<usize> = (0..model.encoder.n_params()).collect();
        let worst = fd_check(model.encoder.params(), &lg.encoder, &idx, &mut |p| {
            probe.encoder.set_params(p).unwrap();
            probe.elbo_loss(&obs, 2, &mut noise.clone()).unwrap().value
        });
        assert!(worst <= FD_REL_TOL, "elbo encoder: {worst}");
    }
}
