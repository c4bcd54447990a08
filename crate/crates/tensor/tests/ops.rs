use ivos_tensor::{grad_check, grad_check_params, he_normal, Graph, ParamStore, Tensor, TensorError, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const EPS: f64 = 1e-5;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Random values bounded away from zero, so relu/max kinks and the relative
/// error denominator are both safe.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.2..2.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Contracts an arbitrary output with fixed random weights so every output
/// coordinate influences the loss.
fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> Result<Var, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(y).to_vec();
    let w = g.constant(rand_tensor(&mut rng, &shape, 0.5, 1.5));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn check_unary(name: &str, f: fn(&mut Graph, Var) -> Result<Var, TensorError>, positive: bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64);
    for trial in 0..10 {
        let x = if positive {
            rand_tensor(&mut rng, &[3, 4], 0.3, 3.0)
        } else {
            rand_away_from_zero(&mut rng, &[3, 4])
        };
        let err = grad_check(
            |g, v| {
                let y = f(g, v)?;
                weighted_sum(g, y, 99)
            },
            &x,
            EPS,
        )
        .unwrap();
        assert!(err < TOL, "{name} trial {trial}: rel err {err}");
    }
}

#[test]
fn elementwise_unary_ops_pass_gradient_checks() {
    check_unary("relu", |g, x| Ok(g.relu(x)), false);
    check_unary("softplus", |g, x| Ok(g.softplus(x)), false);
    check_unary("sigmoid", |g, x| Ok(g.sigmoid(x)), false);
    check_unary("exp", |g, x| Ok(g.exp(x)), false);
    check_unary("ln", |g, x| Ok(g.ln(x)), true);
    check_unary("square", |g, x| Ok(g.square(x)), false);
    check_unary("scale", |g, x| Ok(g.scale(x, -1.7)), false);
    check_unary("add_scalar", |g, x| Ok(g.add_scalar(x, 0.3)), false);
    check_unary("reshape", |g, x| g.reshape(x, vec![4, 3]), false);
    check_unary("mean", |g, x| Ok(g.mean(x)), false);
}

#[test]
fn binary_ops_pass_gradient_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let other = rand_tensor(&mut rng, &[2, 5], 0.5, 2.0);
        let x = rand_away_from_zero(&mut rng, &[2, 5]);
        for (name, op) in [
            ("add", Graph::add as fn(&mut Graph, Var, Var) -> Result<Var, TensorError>),
            ("sub", Graph::sub),
            ("mul", Graph::mul),
            ("div", Graph::div),
        ] {
            // Gradient through the left operand, then the right.
            let left = grad_check(
                |g, v| {
                    let c = g.leaf(other.clone());
                    let y = op(g, v, c)?;
                    weighted_sum(g, y, 1)
                },
                &x,
                EPS,
            )
            .unwrap();
            let right = grad_check(
                |g, v| {
                    let c = g.leaf(x.clone());
                    let y = op(g, c, v)?;
                    weighted_sum(g, y, 1)
                },
                &other,
                EPS,
            )
            .unwrap();
            assert!(left < TOL && right < TOL, "{name}: {left} {right}");
        }
    }
}

#[test]
fn structural_ops_pass_gradient_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..10 {
        let x = rand_away_from_zero(&mut rng, &[3, 8]);
        let w = rand_tensor(&mut rng, &[4, 3, 5], -1.0, 1.0);
        let m = rand_tensor(&mut rng, &[8, 2], -1.0, 1.0);
        let b3 = rand_tensor(&mut rng, &[3], -1.0, 1.0);
        let b2 = rand_tensor(&mut rng, &[2], -1.0, 1.0);
        let cases: Vec<(&str, Box<dyn Fn(&mut Graph, Var) -> Result<Var, TensorError>>)> = vec![
            ("matmul_left", Box::new(|g, v| {
                let c = g.leaf(m.clone());
                g.matmul(v, c)
            })),
            ("conv1d_input_s1", Box::new(|g, v| {
                let k = g.leaf(w.clone());
                g.conv1d(v, k, 1, 2)
            })),
            ("conv1d_input_s2", Box::new(|g, v| {
                let k = g.leaf(w.clone());
                g.conv1d(v, k, 2, 2)
            })),
            ("upsample2", Box::new(|g, v| g.upsample2(v))),
            ("max_pool2", Box::new(|g, v| g.max_pool2(v))),
            ("global_max", Box::new(|g, v| g.global_max(v))),
            ("concat0", Box::new(|g, v| {
                let r = g.relu(v);
                g.concat(&[v, r], 0)
            })),
            ("concat1", Box::new(|g, v| {
                let s = g.square(v);
                g.concat(&[s, v], 1)
            })),
            ("slice1", Box::new(|g, v| g.slice(v, 1, 2, 7))),
            ("slice0", Box::new(|g, v| g.slice(v, 0, 1, 3))),
            ("channel_bias", Box::new(|g, v| {
                let b = g.leaf(b3.clone());
                g.add_channel_bias(v, b)
            })),
            ("row_bias", Box::new(|g, v| {
                let mm = g.constant(m.clone());
                let y = g.matmul(v, mm)?;
                let b = g.leaf(b2.clone());
                g.add_row_bias(y, b)
            })),
            ("interp", Box::new(|g, v| {
                g.linear_interp(v, &[(0, 0.0), (1, 2.25), (2, 6.5), (1, 7.0), (0, 3.75)])
            })),
        ];
        for (name, f) in &cases {
            let err = grad_check(
                |g, v| {
                    let y = f(g, v)?;
                    weighted_sum(g, y, 7)
                },
                &x,
                EPS,
            )
            .unwrap();
            assert!(err < TOL, "{name} trial {trial}: rel err {err}");
        }
        // Kernel, right matmul operand and bias gradients.
        let xc = x.clone();
        let err = grad_check(
            |g, k| {
                let xi = g.constant(xc.clone());
                let y = g.conv1d(xi, k, 2, 2)?;
                weighted_sum(g, y, 8)
            },
            &w,
            EPS,
        )
        .unwrap();
        assert!(err < TOL, "conv1d kernel: {err}");
        let err = grad_check(
            |g, mv| {
                let xi = g.constant(xc.clone());
                let y = g.matmul(xi, mv)?;
                weighted_sum(g, y, 9)
            },
            &m,
            EPS,
        )
        .unwrap();
        assert!(err < TOL, "matmul right: {err}");
    }
}

#[test]
fn sum_gradient_check_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&mut rng, &[7], -3.0, 3.0);
    assert!(grad_check(|g, v| Ok(g.sum(v)), &x, EPS).unwrap() < 1e-10);
}

#[test]
fn gaussian_nll_gradient() {
    // -log N(y | mu, s^2) with s = softplus(raw) + 0.01.
    let y = [0.3, -1.2, 2.0];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let x = rand_tensor(&mut rng, &[2, 3], -1.5, 1.5);
        let err = grad_check(
            |g, v| {
                let mu = g.slice(v, 0, 0, 1)?;
                let raw = g.slice(v, 0, 1, 2)?;
                let sp = g.softplus(raw);
                let sigma = g.add_scalar(sp, 0.01);
                let target = g.constant(Tensor::new(vec![1, 3], y.to_vec())?);
                let d = g.sub(target, mu)?;
                let z = g.div(d, sigma)?;
                let z2 = g.square(z);
                let half = g.scale(z2, 0.5);
                let ls = g.ln(sigma);
                let terms = g.add(half, ls)?;
                Ok(g.sum(terms))
            },
            &x,
            EPS,
        )
        .unwrap();
        assert!(err < TOL, "{err}");
    }
}

#[test]
fn two_layer_mlp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let w1 = store.add("w1", he_normal(&[4, 6], 4, &mut rng)).unwrap();
    let b1 = store.add("b1", rand_tensor(&mut rng, &[6], 0.1, 0.3)).unwrap();
    let w2 = store.add("w2", he_normal(&[6, 1], 6, &mut rng)).unwrap();
    let b2 = store.add("b2", Tensor::vector(vec![0.1])).unwrap();
    let x = rand_tensor(&mut rng, &[5, 4], -1.0, 1.0);
    let y = Tensor::new(vec![5, 1], vec![1.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
    let err = grad_check_params(
        |g, s| {
            let xi = g.constant(x.clone());
            let (pw1, pb1, pw2, pb2) = (g.param(s, w1), g.param(s, b1), g.param(s, w2), g.param(s, b2));
            let h = g.matmul(xi, pw1)?;
            let h = g.add_row_bias(h, pb1)?;
            let h = g.softplus(h);
            let z = g.matmul(h, pw2)?;
            let z = g.add_row_bias(z, pb2)?;
            // Binary cross-entropy on logits: softplus(z) - y z.
            let yi = g.constant(y.clone());
            let sp = g.softplus(z);
            let yz = g.mul(yi, z)?;
            let l = g.sub(sp, yz)?;
            Ok(g.mean(l))
        },
        &store,
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "{err}");
}

#[test]
fn forward_values() {
    let mut g = Graph::new();
    // Identity 1x1 kernel.
    let x = g.constant(Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 4.0, 5.0, -6.0]).unwrap());
    let mut eye = Tensor::zeros(&[2, 2, 1]);
    eye.data_mut()[0] = 1.0;
    eye.data_mut()[3] = 1.0;
    let k = g.constant(eye);
    let y = g.conv1d(x, k, 1, 0).unwrap();
    assert_eq!(g.value(y), g.value(x));

    let z = g.constant(Tensor::scalar(0.0));
    let sp = g.softplus(z);
    assert!((g.value(sp).item() - std::f64::consts::LN_2).abs() < 1e-15);

    let a = g.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let b = g.constant(Tensor::matrix(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap());
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[58.0, 64.0, 139.0, 154.0]);

    let u = g.upsample2(x).unwrap();
    assert_eq!(g.value(u).row(0), &[1.0, 1.0, -2.0, -2.0, 3.0, 3.0]);
    let p = g.max_pool2(u).unwrap();
    assert_eq!(g.value(p), g.value(x));
    let m = g.global_max(x).unwrap();
    assert_eq!(g.value(m).data(), &[3.0, 5.0]);
    let s = g.slice(x, 1, 1, 3).unwrap();
    assert_eq!(g.value(s).data(), &[-2.0, 3.0, 5.0, -6.0]);
    let cat = g.concat(&[x, s], 1).unwrap();
    assert_eq!(g.shape(cat), &[2, 5]);
    assert_eq!(g.value(cat).row(1), &[4.0, 5.0, -6.0, 5.0, -6.0]);
    let q = g.linear_interp(x, &[(0, 0.5), (1, 2.0), (1, 1.0)]).unwrap();
    assert_eq!(g.value(q).data(), &[-0.5, -6.0, 5.0]);
    assert!(g.linear_interp(x, &[(0, 2.5)]).is_err());

    // Stride-2 conv with padding: output length floor((L + 2p - k) / s) + 1.
    let long = g.constant(Tensor::zeros(&[2, 16]));
    let k5 = g.constant(Tensor::zeros(&[3, 2, 5]));
    let y = g.conv1d(long, k5, 2, 2).unwrap();
    assert_eq!(g.shape(y), &[3, 8]);
}

#[test]
fn forward_is_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut g = Graph::new();
        let x = g.constant(rand_tensor(&mut rng, &[16, 64], -1.0, 1.0));
        let w = g.constant(rand_tensor(&mut rng, &[32, 16, 5], -0.3, 0.3));
        let y = g.conv1d(x, w, 2, 2).unwrap();
        let y = g.relu(y);
        let s = g.sum(y);
        g.value(s).item().to_bits()
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn conv1d_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0, stride in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = rand_tensor(&mut rng, &[3, 12], -1.0, 1.0);
        let ys = rand_tensor(&mut rng, &[3, 12], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &[2, 3, 5], -1.0, 1.0);
        let mut g = Graph::new();
        let (x, y, k) = (g.constant(xs), g.constant(ys), g.constant(w));
        let ax = g.scale(x, a);
        let by = g.scale(y, b);
        let comb = g.add(ax, by).unwrap();
        let lhs = g.conv1d(comb, k, stride, 2).unwrap();
        let cx = g.conv1d(x, k, stride, 2).unwrap();
        let cy = g.conv1d(y, k, stride, 2).unwrap();
        let acx = g.scale(cx, a);
        let bcy = g.scale(cy, b);
        let rhs = g.add(acx, bcy).unwrap();
        for (l, r) in g.value(lhs).data().iter().zip(g.value(rhs).data()) {
            prop_assert!((l - r).abs() < 1e-12);
        }
    }
}
