use neurocond::condnet::layers::{
    batchnorm, batchnorm_backward, bce_with_logits, conv2d_same, conv2d_same_backward, deconv2_stride2,
    deconv2_stride2_backward, maxpool2, maxpool2_backward, BatchNormParams, Mode, Tensor,
};
use neurocond::condnet::{NetConfig, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-3;
const TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn tensor(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor {
    Tensor::from_vec(n, c, h, w, random(rng, n * c * h * w)).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central differences of `f` at `x`, one coordinate at a time.
fn numeric(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + STEP;
            let up = f(&probe);
            probe[i] = orig - STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn assert_close(what: &str, analytic: &[f64], numeric: &[f64]) {
    assert_eq!(analytic.len(), numeric.len());
    let worst = analytic.iter().zip(numeric).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < TOL, "{what}: max abs difference {worst:e}");
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in [1, 3, 5] {
        let (cin, cout) = (2, 3);
        let x = tensor(&mut rng, 2, cin, 8, 8);
        let w = random(&mut rng, cout * cin * k * k);
        let b = random(&mut rng, cout);
        let r = random(&mut rng, 2 * cout * 64);
        let dy = Tensor::from_vec(2, cout, 8, 8, r.clone()).unwrap();
        let g = conv2d_same_backward(&x, &w, cout, k, &dy).unwrap();
        let loss = |x: &Tensor, w: &[f64], b: &[f64]| dot(&conv2d_same(x, w, b, cout, k).unwrap().data, &r);
        assert_close("conv dx", &g.dx.data, &numeric(&x.data, |v| {
            loss(&Tensor::from_vec(2, cin, 8, 8, v.to_vec()).unwrap(), &w, &b)
        }));
        assert_close("conv dw", &g.dw, &numeric(&w, |v| loss(&x, v, &b)));
        assert_close("conv db", &g.db, &numeric(&b, |v| loss(&x, &w, v)));
    }
}

#[test]
fn conv_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (cin, cout, k, n) = (3, 2, 5, 8);
    let x = tensor(&mut rng, 1, cin, n, n);
    let w = random(&mut rng, cout * cin * k * k);
    let b = random(&mut rng, cout);
    let y = conv2d_same(&x, &w, &b, cout, k).unwrap();
    let r = (k / 2) as isize;
    for o in 0..cout {
        for i in 0..n {
            for j in 0..n {
                let mut acc = b[o];
                for c in 0..cin {
                    for a in 0..k {
                        for bb in 0..k {
                            let (si, sj) = (i as isize + a as isize - r, j as isize + bb as isize - r);
                            if si < 0 || sj < 0 || si >= n as isize || sj >= n as isize {
                                continue;
                            }
                            acc += w[((o * cin + c) * k + a) * k + bb] * x.map(0, c)[si as usize * n + sj as usize];
                        }
                    }
                }
                assert!((y.map(0, o)[i * n + j] - acc).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn deconv_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (cin, cout) = (3, 2);
    let x = tensor(&mut rng, 2, cin, 4, 4);
    let w = random(&mut rng, cin * cout * 4);
    let b = random(&mut rng, cout);
    let r = random(&mut rng, 2 * cout * 64);
    let dy = Tensor::from_vec(2, cout, 8, 8, r.clone()).unwrap();
    let g = deconv2_stride2_backward(&x, &w, cout, &dy).unwrap();
    let loss = |x: &Tensor, w: &[f64], b: &[f64]| dot(&deconv2_stride2(x, w, b, cout).unwrap().data, &r);
    assert_close("deconv dx", &g.dx.data, &numeric(&x.data, |v| {
        loss(&Tensor::from_vec(2, cin, 4, 4, v.to_vec()).unwrap(), &w, &b)
    }));
    assert_close("deconv dw", &g.dw, &numeric(&w, |v| loss(&x, v, &b)));
    assert_close("deconv db", &g.db, &numeric(&b, |v| loss(&x, &w, v)));
}

#[test]
fn batchnorm_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let c = 3;
    let x = tensor(&mut rng, 2, c, 8, 8);
    let gamma: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..1.5)).collect();
    let beta = random(&mut rng, c);
    let (rm, rv) = (vec![0.0; c], vec![1.0; c]);
    let r = random(&mut rng, x.data.len());
    let dy = Tensor::from_vec(2, c, 8, 8, r.clone()).unwrap();
    let (_, cache, _) = batchnorm(&x, BatchNormParams { gamma: &gamma, beta: &beta }, &rm, &rv, Mode::Train).unwrap();
    let g = batchnorm_backward(&dy, &gamma, &cache);
    let loss = |x: &Tensor, gamma: &[f64], beta: &[f64]| {
        let (y, _, _) = batchnorm(x, BatchNormParams { gamma, beta }, &rm, &rv, Mode::Train).unwrap();
        dot(&y.data, &r)
    };
    assert_close("bn dx", &g.dx.data, &numeric(&x.data, |v| {
        loss(&Tensor::from_vec(2, c, 8, 8, v.to_vec()).unwrap(), &gamma, &beta)
    }));
    assert_close("bn dgamma", &g.dgamma, &numeric(&gamma, |v| loss(&x, v, &beta)));
    assert_close("bn dbeta", &g.dbeta, &numeric(&beta, |v| loss(&x, &gamma, v)));
}

#[test]
fn bce_logit_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in [16, 64] {
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.9)).collect();
        let (_, g) = bce_with_logits(&z, &t).unwrap();
        assert_close("bce", &g, &numeric(&z, |v| bce_with_logits(v, &t).unwrap().0));
    }
}

#[test]
fn maxpool_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = tensor(&mut rng, 1, 2, 8, 8);
    let (y, arg) = maxpool2(&x).unwrap();
    let r = random(&mut rng, y.data.len());
    let dy = Tensor::from_vec(1, 2, 4, 4, r.clone()).unwrap();
    let dx = maxpool2_backward(&dy, &arg, x.shape());
    assert_close("pool", &dx.data, &numeric(&x.data, |v| {
        dot(&maxpool2(&Tensor::from_vec(1, 2, 8, 8, v.to_vec()).unwrap()).unwrap().0.data, &r)
    }));
}

#[test]
fn whole_network_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // Smallest valid shape: 8x8 slices, depth 2, two decoders.
    let cfg = NetConfig::uniform(2, 2, 2, 3, 3, 3, 3);
    let net = Network::build(&cfg, 11).unwrap();
    let x = Tensor::from_vec(2, 2, 8, 8, (0..256).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let target: Vec<f64> = (0..256).map(|_| rng.random_range(0.0..0.9)).collect();
    let loss_of = |net: &Network| {
        let (z, _) = net.forward(&x, Mode::Train).unwrap();
        bce_with_logits(&z.data, &target).unwrap().0
    };
    let (z, trace) = net.forward(&x, Mode::Train).unwrap();
    let (_, g) = bce_with_logits(&z.data, &target).unwrap();
    let grads = net.backward(&trace, &Tensor::from_vec(2, 2, 8, 8, g).unwrap()).unwrap();
    for (pi, p) in net.params().iter().enumerate() {
        if !p.trainable {
            assert!(grads[pi].iter().all(|&v| v == 0.0));
            continue;
        }
        // A spread of coordinates per tensor keeps the test quick. The step is
        // smaller than in the layer checks: ReLU and pooling kinks deep in the
        // network sit closer than 1e-3 to some coordinates.
        let picks: Vec<usize> = (0..p.data.len()).step_by((p.data.len() / 6).max(1)).collect();
        for i in picks {
            let mut probe = net.clone();
            let h = 1e-5;
            probe.params_mut()[pi].data[i] += h;
            let up = loss_of(&probe);
            probe.params_mut()[pi].data[i] -= 2.0 * h;
            let down = loss_of(&probe);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grads[pi][i]).abs() < 1e-6, "{}[{i}]: analytic {} vs numeric {fd}", p.name, grads[pi][i]);
        }
    }
}

