use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

const TOL: f64 = 1e-4;
const EPS: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Projects an arbitrary output onto a scalar with fixed random weights so
/// that every output element influences the loss differently.
fn project(g: &mut Graph, out: NodeId, seed: u64) -> crate::Result<NodeId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let shape = g.shape(out).to_vec();
    let r = g.input(random(&mut rng, &shape));
    let m = g.mul(out, r)?;
    g.mean(m, None)
}

fn check(params: Vec<Tensor>, seed: u64, f: impl Fn(&mut Graph, &[NodeId]) -> crate::Result<NodeId>) -> f64 {
    let report = grad_check(&params, EPS, |g, ids| {
        let out = f(g, ids)?;
        project(g, out, seed)
    })
    .unwrap();
    assert!(report.checked > 0);
    report.max_error()
}

#[test]
fn matmul_identity() {
    let mut g = Graph::new();
    let a = g.input(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let i = g.input(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let c = g.matmul(a, i).unwrap();
    assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut g = Graph::new();
    let x = g.input(Tensor::vector(vec![0.0; 4]));
    let s = g.softmax(x, 0).unwrap();
    assert_eq!(g.value(s).data(), &[0.25; 4]);
}

#[test]
fn conv1d_same_padding_cross_correlation() {
    let mut g = Graph::new();
    let x = g.input(Tensor::new(vec![1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let w = g.input(Tensor::new(vec![1, 1, 3], vec![1.0, 0.0, -1.0]).unwrap());
    let b = g.input(Tensor::vector(vec![0.0]));
    let y = g.conv1d(x, w, b, 1).unwrap();
    assert_eq!(g.value(y).data(), &[-2.0, -2.0, -2.0, 3.0]);
}

#[test]
fn conv1d_strided_geometry() {
    assert_eq!(conv_same_geometry(200, 9, 2), (100, 3));
    assert_eq!(conv_same_geometry(100, 5, 2), (50, 1));
    assert_eq!(conv_same_geometry(4, 3, 1), (4, 1));
}

#[test]
fn shape_errors_name_the_node() {
    let mut g = Graph::new();
    let a = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::zeros(&[2, 3]));
    match g.matmul(a, b) {
        Err(Error::Shape { node: Some(n), .. }) => assert!(n.contains("matmul"), "{n}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn grad_of_mean_linear_is_x_over_n() {
    let mut g = Graph::new();
    let w = g.param(Tensor::vector(vec![0.3, -0.7, 1.1, 2.0]));
    let x = g.input(Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]));
    let wx = g.mul(w, x).unwrap();
    let loss = g.mean(wx, None).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.wrt(w).data(), &[0.25, 0.5, 0.75, 1.0]);
}

#[test]
fn unreachable_parameter_gets_zero_gradient() {
    let mut g = Graph::new();
    let w = g.param(Tensor::vector(vec![1.0, 2.0]));
    let v = g.param(Tensor::vector(vec![3.0, 4.0]));
    let loss = g.mean(v, None).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.wrt(w).data(), &[0.0, 0.0]);
    assert!(grads.get(w).is_none());
}

#[test]
fn non_scalar_loss_is_a_contract_error() {
    let mut g = Graph::new();
    let w = g.param(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(g.backward(w), Err(Error::Contract(_))));
}

#[test]
fn softmax_rows_sum_to_one_and_activations_stay_in_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::new();
    let t = random(&mut rng, &[5, 7, 3]);
    let scaled = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * 40.0).collect()).unwrap();
    let x = g.input(scaled);
    for axis in 0..3 {
        let s = g.softmax(x, axis).unwrap();
        let m = g.mean(s, Some(axis)).unwrap();
        let n = g.shape(x)[axis] as f64;
        assert!(g.value(m).data().iter().all(|v| (v * n - 1.0).abs() < 1e-12));
    }
    let sg = g.sigmoid(x);
    let th = g.tanh(x);
    assert!(g.value(sg).data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(g.value(th).data().iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn relu_at_exact_zero_is_excluded() {
    let params = vec![Tensor::vector(vec![0.0, 0.5, -0.5])];
    let report = grad_check(&params, EPS, |g, ids| {
        let r = g.relu(ids[0]);
        g.mean(r, None)
    })
    .unwrap();
    assert_eq!(report.excluded, 1);
    assert_eq!(report.checked, 2);
    assert!(report.max_error() < TOL);
}

#[test]
fn grad_check_rejects_huge_parameters() {
    let params = vec![Tensor::vector(vec![5e3])];
    assert!(grad_check(&params, EPS, |g, ids| g.mean(ids[0], None)).is_err());
}

#[test]
fn dense_layer_passes_grad_check_on_eight_seeds() {
    for seed in 0..8 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[6, 5]);
        let params = vec![random(&mut rng, &[5, 3]), random(&mut rng, &[3])];
        let err = check(params, seed, |g, p| {
            let xi = g.input(x.clone());
            let h = g.matmul(xi, p[0])?;
            g.add(h, p[1])
        });
        assert!(err <= TOL, "seed {seed}: {err}");
    }
}

#[test]
fn every_primitive_passes_grad_check() {
    for seed in 0..8u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let a = random(&mut rng, &[3, 4]);
        let b = random(&mut rng, &[3, 4]);
        let cases: Vec<(&str, f64)> = vec![
            ("add", check(vec![a.clone(), b.clone()], seed, |g, p| g.add(p[0], p[1]))),
            ("add_broadcast", check(vec![a.clone(), random(&mut rng, &[4])], seed, |g, p| g.add(p[0], p[1]))),
            ("sub", check(vec![a.clone(), b.clone()], seed, |g, p| g.sub(p[0], p[1]))),
            ("mul", check(vec![a.clone(), b.clone()], seed, |g, p| g.mul(p[0], p[1]))),
            ("square", check(vec![a.clone()], seed, |g, p| g.mul(p[0], p[0]))),
            ("scale", check(vec![a.clone()], seed, |g, p| Ok(g.scale(p[0], -1.7)))),
            ("matmul", check(vec![a.clone(), random(&mut rng, &[4, 2])], seed, |g, p| g.matmul(p[0], p[1]))),
            (
                "batch_matmul",
                check(vec![random(&mut rng, &[2, 3, 4]), random(&mut rng, &[2, 4, 5])], seed, |g, p| {
                    g.batch_matmul(p[0], p[1], false)
                }),
            ),
            (
                "batch_matmul_t",
                check(vec![random(&mut rng, &[2, 3, 4]), random(&mut rng, &[2, 5, 4])], seed, |g, p| {
                    g.batch_matmul(p[0], p[1], true)
                }),
            ),
            (
                "conv1d",
                check(
                    vec![random(&mut rng, &[2, 3, 11]), random(&mut rng, &[4, 3, 5]), random(&mut rng, &[4])],
                    seed,
                    |g, p| g.conv1d(p[0], p[1], p[2], 2),
                ),
            ),
            ("sigmoid", check(vec![a.clone()], seed, |g, p| Ok(g.sigmoid(p[0])))),
            ("tanh", check(vec![a.clone()], seed, |g, p| Ok(g.tanh(p[0])))),
            ("relu", check(vec![a.clone()], seed, |g, p| Ok(g.relu(p[0])))),
            ("softmax0", check(vec![a.clone()], seed, |g, p| g.softmax(p[0], 0))),
            ("softmax1", check(vec![a.clone()], seed, |g, p| g.softmax(p[0], 1))),
            ("concat0", check(vec![a.clone(), random(&mut rng, &[2, 4])], seed, |g, p| g.concat(&[p[0], p[1]], 0))),
            ("concat1", check(vec![a.clone(), random(&mut rng, &[3, 2])], seed, |g, p| g.concat(&[p[0], p[1]], 1))),
            ("slice", check(vec![a.clone()], seed, |g, p| g.slice(p[0], 1, 1, 2))),
            ("reshape", check(vec![a.clone()], seed, |g, p| g.reshape(p[0], &[2, 6]))),
            ("transpose", check(vec![random(&mut rng, &[2, 3, 4])], seed, |g, p| g.transpose(p[0]))),
            ("mean_all", check(vec![a.clone()], seed, |g, p| g.mean(p[0], None))),
            ("mean_axis", check(vec![random(&mut rng, &[2, 3, 4])], seed, |g, p| g.mean(p[0], Some(1)))),
        ];
        for (name, err) in cases {
            assert!(err <= TOL, "{name} seed {seed}: {err}");
        }
        let mse = grad_check(&[a.clone(), b.clone()], EPS, |g, p| g.mse(p[0], p[1])).unwrap();
        assert!(mse.max_error() <= TOL, "mse seed {seed}");
    }
}

/// LSTM cell built from primitives: gates = x Wx + h Wh + b, split i f g o.
fn lstm_step(g: &mut Graph, x: NodeId, h: NodeId, c: NodeId, p: &[NodeId], hidden: usize) -> crate::Result<(NodeId, NodeId)> {
    let zx = g.matmul(x, p[0])?;
    let zh = g.matmul(h, p[1])?;
    let z = g.add(zx, zh)?;
    let z = g.add(z, p[2])?;
    let i = g.slice(z, 1, 0, hidden)?;
    let f = g.slice(z, 1, hidden, hidden)?;
    let gg = g.slice(z, 1, 2 * hidden, hidden)?;
    let o = g.slice(z, 1, 3 * hidden, hidden)?;
    let (i, f, gg, o) = (g.sigmoid(i), g.sigmoid(f), g.tanh(gg), g.sigmoid(o));
    let fc = g.mul(f, c)?;
    let ig = g.mul(i, gg)?;
    let c = g.add(fc, ig)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

#[test]
fn lstm_unrolled_five_steps_passes_grad_check() {
    let (batch, input, hidden) = (2, 3, 4);
    for seed in 0..8 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let xs: Vec<Tensor> = (0..5).map(|_| random(&mut rng, &[batch, input])).collect();
        let params = vec![
            random(&mut rng, &[input, 4 * hidden]),
            random(&mut rng, &[hidden, 4 * hidden]),
            random(&mut rng, &[4 * hidden]),
        ];
        let err = check(params, seed, |g, p| {
            let mut h = g.input(Tensor::zeros(&[batch, hidden]));
            let mut c = g.input(Tensor::zeros(&[batch, hidden]));
            for x in &xs {
                let xi = g.input(x.clone());
                (h, c) = lstm_step(g, xi, h, c, p, hidden)?;
            }
            Ok(h)
        });
        assert!(err <= TOL, "seed {seed}: {err}");
    }
}

#[test]
fn backward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&mut rng, &[4, 3, 20]);
    let w = random(&mut rng, &[5, 3, 7]);
    let run = || {
        let mut g = Graph::new();
        let xi = g.input(x.clone());
        let wi = g.param(w.clone());
        let b = g.input(Tensor::zeros(&[5]));
        let y = g.conv1d(xi, wi, b, 2).unwrap();
        let y = g.tanh(y);
        let l = g.mean(y, None).unwrap();
        (g.value(l).item().to_bits(), g.backward(l).unwrap().wrt(wi))
    };
    assert_eq!(run(), run());
}
