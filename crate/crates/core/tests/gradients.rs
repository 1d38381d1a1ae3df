//! Analytic gradients against central finite differences, plus adjoint
//! identities for the linear ops.

use hsnn_core::accumulator::AccumulatorConfig;
use hsnn_core::spiking::{surrogate_grad, CubaLifParams, SpikeMode, SpikePoolMode};
use hsnn_core::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;

type Builder = dyn Fn(&mut Graph<f64>, &[Var]) -> Var;

fn random(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0)).unwrap()
}

fn loss_at(inputs: &[Tensor<f64>], build: &Builder) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone()).unwrap()).collect();
    let l = build(&mut g, &vars);
    g.value(l).item().unwrap()
}

fn close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= 1e-6 || diff <= 1e-4 * analytic.abs().max(numeric.abs())
}

/// Checks every element of every input; returns the number compared.
fn check(inputs: &[Tensor<f64>], build: &Builder) -> usize {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone()).unwrap()).collect();
    let loss = build(&mut g, &vars);
    let grads = g.backward(loss).unwrap();
    let mut compared = 0;
    for (i, t) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).unwrap();
        assert_eq!(analytic.shape(), t.shape());
        for j in 0..t.numel() {
            let mut nudged = inputs.to_vec();
            let mut data = t.to_vec();
            data[j] = t.data()[j] + STEP;
            nudged[i] = Tensor::from_vec(t.shape(), data.clone()).unwrap();
            let plus = loss_at(&nudged, build);
            data[j] = t.data()[j] - STEP;
            nudged[i] = Tensor::from_vec(t.shape(), data).unwrap();
            let minus = loss_at(&nudged, build);
            let numeric = (plus - minus) / (2.0 * STEP);
            let a = analytic.data()[j];
            assert!(close(a, numeric), "input {i} element {j}: analytic {a} numeric {numeric}");
            compared += 1;
        }
    }
    compared
}

/// Reduces a tensor to a scalar through a fixed random projection.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Var {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let w = random(g.value(y).shape(), &mut r);
    let w = g.constant(w).unwrap();
    let p = g.mul(y, w).unwrap();
    g.sum(p).unwrap()
}

#[test]
fn matmul_gradients() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let inputs = [random(&[3, 4], &mut r), random(&[4, 2], &mut r)];
    check(&inputs, &|g, v| {
        let y = g.matmul(v[0], v[1]).unwrap();
        project(g, y, 10)
    });
}

#[test]
fn conv_gradients() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    for (stride, pad) in [(1, 1), (2, 0), (2, 1)] {
        let inputs = [random(&[2, 6, 5], &mut r), random(&[3, 2, 3, 3], &mut r)];
        check(&inputs, &move |g, v| {
            let y = g.conv2d(v[0], v[1], stride, pad).unwrap();
            project(g, y, 11)
        });
    }
}

#[test]
fn batched_conv_gradients() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let inputs = [random(&[2, 4, 4, 3], &mut r), random(&[2, 2, 3, 3], &mut r)];
    check(&inputs, &|g, v| {
        let y = g.conv2d(v[0], v[1], 1, 1).unwrap();
        project(g, y, 12)
    });
}

#[test]
fn elementwise_gradients() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let inputs = [random(&[3, 4], &mut r), random(&[3, 4], &mut r), random(&[3], &mut r)];
    check(&inputs, &|g, v| {
        let a = g.add(v[0], v[1]).unwrap();
        let m = g.mul(a, v[0]).unwrap();
        let s = g.scale(m, -1.5).unwrap();
        let b = g.add_bias(s, v[2]).unwrap();
        let rl = g.relu(b).unwrap();
        let f = g.flatten(rl, false).unwrap();
        project(g, f, 13)
    });
}

#[test]
fn maxpool_gradients() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let inputs = [random(&[2, 4, 6, 2], &mut r)];
    check(&inputs, &|g, v| {
        let y = g.maxpool2(v[0]).unwrap();
        project(g, y, 14)
    });
}

#[test]
fn reduction_and_loss_gradients() {
    let mut r = ChaCha8Rng::seed_from_u64(6);
    let inputs = [random(&[4, 5], &mut r)];
    check(&inputs, &|g, v| {
        let s = g.sum_last(v[0]).unwrap();
        g.softmax_cross_entropy(s, 2).unwrap()
    });
    check(&inputs, &|g, v| {
        let rs = g.reshape(v[0], &[20]).unwrap();
        let sq = g.mul(rs, rs).unwrap();
        g.sum(sq).unwrap()
    });
}

#[test]
fn three_layer_mlp_gradients() {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let inputs = [
        random(&[6, 1], &mut r),
        random(&[8, 6], &mut r),
        random(&[8], &mut r),
        random(&[5, 8], &mut r),
        random(&[5], &mut r),
        random(&[3, 5], &mut r),
        random(&[3], &mut r),
    ];
    let n = check(&inputs, &|g, v| {
        let mut x = v[0];
        for layer in 0..3 {
            let y = g.matmul(v[1 + 2 * layer], x).unwrap();
            let y = g.add_bias(y, v[2 + 2 * layer]).unwrap();
            x = if layer < 2 { g.relu(y).unwrap() } else { y };
        }
        let logits = g.reshape(x, &[3]).unwrap();
        g.softmax_cross_entropy(logits, 1).unwrap()
    });
    assert_eq!(n, 6 + 48 + 8 + 40 + 5 + 15 + 3);
}

#[test]
fn accumulate_gradients() {
    let mut r = ChaCha8Rng::seed_from_u64(8);
    let cfg = AccumulatorConfig::new(2, 6).unwrap();
    let inputs = [random(&[2, 3, 2, 6], &mut r)];
    check(&inputs, &move |g, v| {
        let a = g.accumulate(v[0], &cfg).unwrap();
        let sq = g.mul(a, a).unwrap();
        project(g, sq, 15)
    });
}

#[test]
fn relaxed_lif_gradients_cross_time() {
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let p = CubaLifParams::default();
    let inputs = [Tensor::from_fn(&[3, 8], |_| r.gen_range(-0.5..1.5)).unwrap()];
    check(&inputs, &move |g, v| {
        let s = g.lif(v[0], &p, SpikeMode::Relaxed, "lif").unwrap();
        project(g, s, 16)
    });
}

#[test]
fn spiking_conv_weight_gradient_matches_relaxed_finite_differences() {
    let mut r = ChaCha8Rng::seed_from_u64(10);
    let p = CubaLifParams::default();
    let x = Tensor::from_fn(&[2, 6, 6, 5], |_| f64::from(u8::from(r.gen_bool(0.4)))).unwrap();
    let inputs = [random(&[3, 2, 3, 3], &mut r), random(&[3], &mut r)];
    check(&inputs, &move |g, v| {
        let xv = g.constant(x.clone()).unwrap();
        let y = g.conv2d(xv, v[0], 1, 1).unwrap();
        let y = g.add_bias(y, v[1]).unwrap();
        let s = g.lif(y, &p, SpikeMode::Relaxed, "spk").unwrap();
        let pooled = g.spike_pool(s, SpikePoolMode::Or).unwrap();
        project(g, pooled, 17)
    });
}

#[test]
fn single_step_gradient_is_surrogate_through_conv() {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let p = CubaLifParams::default();
    let x = Tensor::from_fn(&[2, 4, 4, 1], |_| f64::from(u8::from(r.gen_bool(0.5)))).unwrap();
    let w = random(&[2, 2, 3, 3], &mut r);
    let weights = random(&[2, 4, 4, 1], &mut r);

    let mut g = Graph::new();
    let (xv, wv) = (g.constant(x.clone()).unwrap(), g.param(w.clone()).unwrap());
    let drive = g.conv2d(xv, wv, 1, 1).unwrap();
    let s = g.lif(drive, &p, SpikeMode::Binary, "t1").unwrap();
    let rv = g.constant(weights.clone()).unwrap();
    let l = g.mul(s, rv).unwrap();
    let l = g.sum(l).unwrap();
    let drive_value = g.value(drive).clone();
    let through_lif = g.backward(l).unwrap().get(wv).unwrap().clone();

    // upstream gradient at the drive is r ⊙ surrogate(drive)
    let surr = surrogate_grad(&drive_value, &p);
    let upstream = Tensor::from_fn(surr.shape(), |i| surr.data()[i] * weights.data()[i]).unwrap();
    let mut g = Graph::new();
    let (xv, wv) = (g.constant(x).unwrap(), g.param(w).unwrap());
    let drive = g.conv2d(xv, wv, 1, 1).unwrap();
    let u = g.constant(upstream).unwrap();
    let l = g.mul(drive, u).unwrap();
    let l = g.sum(l).unwrap();
    let direct = g.backward(l).unwrap().get(wv).unwrap().clone();
    for (a, b) in through_lif.data().iter().zip(direct.data()) {
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn stateless_neurons_have_independent_timesteps() {
    let p = CubaLifParams {
        current_decay: 1.0,
        voltage_decay: 1.0,
        ..CubaLifParams::default()
    };
    let drive = Tensor::from_vec(&[2, 6], vec![0.2, 0.9, 1.3, 0.95, 0.4, 1.1, 0.7, 1.0, 0.99, 0.3, 1.2, 0.6]).unwrap();
    for target in 0..6 {
        let mut mask = vec![0.0; 12];
        mask[target] = 1.0;
        mask[6 + target] = 1.0;
        let mut g = Graph::new();
        let d = g.param(drive.clone()).unwrap();
        let s = g.lif(d, &p, SpikeMode::Relaxed, "free").unwrap();
        let m = g.constant(Tensor::from_vec(&[2, 6], mask).unwrap()).unwrap();
        let l = g.mul(s, m).unwrap();
        let l = g.sum(l).unwrap();
        let grads = g.backward(l).unwrap();
        let gd = grads.get(d).unwrap();
        for t in 0..6 {
            for n in 0..2 {
                let v = gd.data()[n * 6 + t];
                if t == target {
                    assert!(v > 0.0);
                } else {
                    assert_eq!(v, 0.0, "timestep {t} leaks into {target}");
                }
            }
        }
    }
}

fn adjoint_gap(x: &Tensor<f64>, y: &Tensor<f64>, op: &dyn Fn(&mut Graph<f64>, Var) -> Var) -> f64 {
    let mut g = Graph::new();
    let xv = g.param(x.clone()).unwrap();
    let lx = op(&mut g, xv);
    let lhs = g.value(lx).dot(y).unwrap();
    let yv = g.constant(y.clone()).unwrap();
    let p = g.mul(lx, yv).unwrap();
    let l = g.sum(p).unwrap();
    let lt_y = g.backward(l).unwrap().get(xv).unwrap().clone();
    let rhs = x.dot(&lt_y).unwrap();
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE)
}

#[test]
fn linear_ops_satisfy_adjoint_identity() {
    let mut r = ChaCha8Rng::seed_from_u64(12);
    let w = random(&[3, 2, 3, 3], &mut r);
    let m = random(&[5, 4], &mut r);
    let cfg = AccumulatorConfig::new(3, 9).unwrap();
    let cases: Vec<(Vec<usize>, Vec<usize>, Box<dyn Fn(&mut Graph<f64>, Var) -> Var>)> = vec![
        (
            vec![2, 7, 6, 3],
            vec![3, 7, 6, 3],
            Box::new(move |g, x| {
                let wv = g.constant(w.clone()).unwrap();
                g.conv2d(x, wv, 1, 1).unwrap()
            }),
        ),
        (
            vec![4, 3],
            vec![5, 3],
            Box::new(move |g, x| {
                let mv = g.constant(m.clone()).unwrap();
                g.matmul(mv, x).unwrap()
            }),
        ),
        (vec![2, 3, 2, 9], vec![6, 3, 2], Box::new(move |g, x| g.accumulate(x, &cfg).unwrap())),
        (vec![3, 4, 5], vec![3, 4], Box::new(|g, x| g.sum_last(x).unwrap())),
        (vec![3, 4, 5], vec![60], Box::new(|g, x| g.reshape(x, &[60]).unwrap())),
        (vec![3, 4], vec![3, 4], Box::new(|g, x| g.scale(x, 0.37).unwrap())),
    ];
    for (xs, ys, op) in &cases {
        let x = random(xs, &mut r);
        let y = random(ys, &mut r);
        let gap = adjoint_gap(&x, &y, op.as_ref());
        assert!(gap <= 1e-10, "shape {xs:?}: gap {gap}");
    }
}

#[test]
fn conv_weight_adjoint() {
    let mut r = ChaCha8Rng::seed_from_u64(13);
    let x = random(&[2, 6, 6], &mut r);
    let w = random(&[4, 2, 3, 3], &mut r);
    let y = random(&[4, 6, 6], &mut r);
    let gap = adjoint_gap(&w, &y, &move |g, wv| {
        let xv = g.constant(x.clone()).unwrap();
        g.conv2d(xv, wv, 1, 1).unwrap()
    });
    assert!(gap <= 1e-10, "{gap}");
}
