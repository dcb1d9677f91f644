use super::*;
use rand::SeedableRng;

fn random_inputs(n: usize, seed: u64, scale: f64) -> Vec<f64> {
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| r.random_range(-scale..scale)).collect()
}

fn build(spec: NetworkSpec, seed: u64) -> (Network, ParamCollection) {
    let mut p = ParamCollection::new();
    let net = Network::new(spec, "net", &mut p, &RandomStream::new(seed)).unwrap();
    (net, p)
}

/// `L = Σ c_i y_i + ½ Σ y_i²` with fixed pseudo-random `c`.
fn loss_and_seed(y: &[f64]) -> (f64, Vec<f64>) {
    let c = random_inputs(y.len(), 99, 1.0);
    let l = y.iter().zip(&c).map(|(y, c)| c * y + 0.5 * y * y).sum();
    let dy = y.iter().zip(&c).map(|(y, c)| c + y).collect();
    (l, dy)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn check_gradients(net: &Network, params: &mut ParamCollection, x: &[f64], batch: usize, mode: Mode) {
    let (y, tape) = net.forward(params, x, batch, mode).unwrap();
    let (_, dy) = loss_and_seed(&y);
    let mut grad = vec![0.0; params.len()];
    let dx = net.backward(params, &tape, &dy, &mut grad).unwrap();
    let h = 1e-6;
    let loss_at = |p: &ParamCollection, x: &[f64]| {
        let (y, _) = net.forward(p, x, batch, mode).unwrap();
        loss_and_seed(&y).0
    };
    let base = params.values().to_vec();
    for i in net.param_range() {
        let mut v = base.clone();
        v[i] += h;
        params.set_values(&v).unwrap();
        let lp = loss_at(params, x);
        v[i] -= 2.0 * h;
        params.set_values(&v).unwrap();
        let lm = loss_at(params, x);
        let fd = (lp - lm) / (2.0 * h);
        assert!(rel_err(grad[i], fd) <= 1e-5, "param {i}: analytic {} fd {fd}", grad[i]);
    }
    params.set_values(&base).unwrap();
    for i in 0..x.len() {
        let mut xp = x.to_vec();
        xp[i] += h;
        let lp = loss_at(params, &xp);
        xp[i] -= 2.0 * h;
        let lm = loss_at(params, &xp);
        let fd = (lp - lm) / (2.0 * h);
        assert!(rel_err(dx[i], fd) <= 1e-5, "input {i}: analytic {} fd {fd}", dx[i]);
    }
}

#[test]
fn prescale_examples() {
    assert_eq!(prescale(120.0, 120.0, 50.0), 0.0);
    assert_eq!(prescale(170.0, 120.0, 50.0), 1.0);
    assert_eq!(prescale(70.0, 120.0, 50.0), -1.0);
}

#[test]
fn zero_network_outputs_zero() {
    let (net, mut p) = build(NetworkSpec::dense(vec![1, 4, 1], Activation::Elu, Prescale::identity(1)), 1);
    p.values_mut().fill(0.0);
    let (y, _) = net.forward(&p, &[3.0, -2.0, 0.5], 3, Mode::Train).unwrap();
    assert_eq!(y, vec![0.0; 3]);
}

#[test]
fn single_affine_layer() {
    let (net, mut p) = build(NetworkSpec::dense(vec![1, 1], Activation::Identity, Prescale::identity(1)), 1);
    p.set_values(&[2.0, 1.0]).unwrap();
    assert_eq!(net.predict(&p, &[3.0]).unwrap(), vec![7.0]);
    // L = y: dL/dW = x, dL/db = 1
    let (_, tape) = net.forward(&p, &[3.0], 1, Mode::Train).unwrap();
    let mut g = vec![0.0; 2];
    let dx = net.backward(&p, &tape, &[1.0], &mut g).unwrap();
    assert_eq!(g, vec![3.0, 1.0]);
    assert_eq!(dx, vec![2.0]);
}

#[test]
fn elu_values() {
    assert!((Activation::Elu.apply(-1.0) - (-0.6321205588285577)).abs() < 1e-15);
    assert_eq!(Activation::Elu.apply(2.0), 2.0);
}

#[test]
fn gradients_match_finite_differences_for_every_activation() {
    for (i, act) in [Activation::Elu, Activation::Tanh, Activation::Sigmoid, Activation::Identity, Activation::Relu]
        .into_iter()
        .enumerate()
    {
        let prescale = Prescale { center: vec![100.0, 0.2], halfwidth: vec![40.0, 0.5] };
        let spec = NetworkSpec::dense(vec![2, 5, 4, 2], act, prescale);
        let (net, mut p) = build(spec, 10 + i as u64);
        let mut x = random_inputs(14, 3, 1.0);
        for row in x.chunks_exact_mut(2) {
            row[0] = 100.0 + 60.0 * row[0];
        }
        check_gradients(&net, &mut p, &x, 7, Mode::Train);
    }
}

#[test]
fn gradients_match_finite_differences_with_batchnorm() {
    let bn = BatchNormConfig { positions: vec![0, 1, 2], epsilon: 1e-5, momentum: 0.9 };
    for act in [Activation::Elu, Activation::Tanh] {
        let spec = NetworkSpec::dense(vec![2, 3, 3, 1], act, Prescale::identity(2)).with_batchnorm(bn.clone());
        let (mut net, mut p) = build(spec, 21);
        // non-trivial γ, β
        let mut v = p.values().to_vec();
        for (i, val) in random_inputs(v.len(), 5, 0.5).into_iter().enumerate() {
            v[i] += val;
        }
        p.set_values(&v).unwrap();
        let x = random_inputs(12, 8, 2.0);
        check_gradients(&net, &mut p, &x, 6, Mode::Train);
        let (_, tape) = net.forward(&p, &x, 6, Mode::Train).unwrap();
        net.update_running_stats(&tape);
        check_gradients(&net, &mut p, &x, 6, Mode::Infer);
    }
}

#[test]
fn batchnorm_on_standardized_batch_is_transparent() {
    let x = [-1.5, -0.5, 0.5, 1.5];
    let (m, v) = (0.0, 1.25);
    let xs: Vec<f64> = x.iter().map(|a| (a - m) / f64::sqrt(v)).collect();
    let plain = NetworkSpec::dense(vec![1, 3, 1], Activation::Elu, Prescale::identity(1));
    let bn = plain.clone().with_batchnorm(BatchNormConfig { positions: vec![0], epsilon: 1e-14, momentum: 0.9 });
    let (net_a, pa) = build(plain, 4);
    let (net_b, mut pb) = build(bn, 4);
    // same weights: the batch-norm network carries γ, β in front
    let mut vb = pb.values().to_vec();
    vb[2..].copy_from_slice(pa.values());
    pb.set_values(&vb).unwrap();
    let (ya, ta) = net_a.forward(&pa, &xs, 4, Mode::Train).unwrap();
    let (yb, tb) = net_b.forward(&pb, &xs, 4, Mode::Train).unwrap();
    let dy: Vec<f64> = ya.iter().map(|v| 2.0 * v).collect();
    let mut ga = vec![0.0; pa.len()];
    let mut gb = vec![0.0; pb.len()];
    net_a.backward(&pa, &ta, &dy, &mut ga).unwrap();
    net_b.backward(&pb, &tb, &dy, &mut gb).unwrap();
    for (a, b) in ya.iter().zip(&yb) {
        assert!((a - b).abs() < 1e-12);
    }
    for (a, b) in ga.iter().zip(&gb[2..]) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
}

#[test]
fn flatten_unflatten_is_a_bijection() {
    let spec = NetworkSpec::dense(vec![2, 11, 11, 1], Activation::Elu, Prescale::identity(2))
        .with_batchnorm(BatchNormConfig { positions: vec![1], ..Default::default() });
    let mut p = ParamCollection::new();
    Network::new(spec.clone(), "a", &mut p, &RandomStream::new(1)).unwrap();
    Network::new(spec.clone(), "b", &mut p, &RandomStream::new(2)).unwrap();
    p.push("y0", vec![1], &[7.25]);
    assert_eq!(p.len(), 2 * spec.param_count() + 1);
    let q = ParamCollection::flatten(&p.unflatten());
    assert_eq!(q.blocks(), p.blocks());
    assert!(q.values().iter().zip(p.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(p.unflatten()[0].name, "a.w0");
    assert_eq!(p.unflatten()[2].name, "a.bn1.gamma");
}

#[test]
fn stale_and_mismatched_inputs_are_rejected() {
    let (net, mut p) = build(NetworkSpec::dense(vec![1, 3, 1], Activation::Elu, Prescale::identity(1)), 1);
    assert!(matches!(net.forward(&p, &[1.0, 2.0], 3, Mode::Train), Err(Error::Usage(_))));
    let (_, tape) = net.forward(&p, &[1.0, 2.0], 2, Mode::Train).unwrap();
    p.values_mut()[0] += 1.0;
    let mut g = vec![0.0; p.len()];
    assert!(matches!(net.backward(&p, &tape, &[1.0, 1.0], &mut g), Err(Error::Usage(_))));
}

#[test]
fn batchnorm_train_mode_needs_two_samples() {
    let spec = NetworkSpec::dense(vec![1, 3, 1], Activation::Elu, Prescale::identity(1))
        .with_batchnorm(BatchNormConfig { positions: vec![0], ..Default::default() });
    let (net, p) = build(spec, 1);
    assert!(net.forward(&p, &[1.0], 1, Mode::Train).is_err());
    // running statistics are empty until a training pass has been folded in
    assert!(net.predict(&p, &[1.0]).is_err());
}

#[test]
fn spec_validation() {
    let mut s = NetworkSpec::dense(vec![1, 3, 1], Activation::Elu, Prescale::identity(1));
    assert!(s.validate().is_ok());
    s.prescale.halfwidth = vec![0.0];
    assert!(s.validate().is_err());
    let s = NetworkSpec::dense(vec![1], Activation::Elu, Prescale::identity(1));
    assert!(s.validate().is_err());
}

#[test]
fn prescale_invariance_of_training() {
    // Dyadic data so that (c + w z − c) / w == z exactly.
    let (c, w) = (120.0, 64.0);
    let z: Vec<f64> = (0..32).map(|i| (i as f64 - 15.5) / 16.0).collect();
    let raw: Vec<f64> = z.iter().map(|v| c + w * v).collect();
    let target: Vec<f64> = z.iter().map(|v| v.sin()).collect();
    let run = |inputs: &[f64], pre: Prescale| {
        let (net, mut p) = build(NetworkSpec::dense(vec![1, 6, 1], Activation::Tanh, pre), 17);
        let mut losses = vec![];
        for _ in 0..50 {
            let (y, tape) = net.forward(&p, inputs, 32, Mode::Train).unwrap();
            let loss: f64 = y.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 32.0;
            let dy: Vec<f64> = y.iter().zip(&target).map(|(a, b)| 2.0 * (a - b) / 32.0).collect();
            let mut g = vec![0.0; p.len()];
            net.backward(&p, &tape, &dy, &mut g).unwrap();
            for (v, gi) in p.values_mut().iter_mut().zip(&g) {
                *v -= 0.1 * gi;
            }
            losses.push(loss);
        }
        losses
    };
    let a = run(&raw, Prescale { center: vec![c], halfwidth: vec![w] });
    let b = run(&z, Prescale::identity(1));
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(a.last().unwrap() < &a[0]);
}

#[test]
fn shared_network_is_a_function_of_time_and_state() {
    let pre = Prescale { center: vec![0.25, 120.0], halfwidth: vec![0.25, 50.0] };
    let (net, p) = build(NetworkSpec::dense(vec![2, 11, 11, 1], Activation::Elu, pre), 3);
    let a = net.forward(&p, &[0.1, 130.0, 0.1, 130.0, 0.3, 130.0], 3, Mode::Infer).unwrap().0;
    assert_eq!(a[0].to_bits(), a[1].to_bits());
    assert_eq!(net.predict(&p, &[0.1, 130.0]).unwrap()[0].to_bits(), a[0].to_bits());
    assert_ne!(a[0], a[2]);
}
