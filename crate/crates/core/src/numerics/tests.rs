use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{max_relative_error, numeric_gradient};
use super::*;

fn rand_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

/// Analytic gradient of `build(graph, input) -> scalar` w.r.t. a single
/// vector input, compared to central differences.
fn check_unary(x: &[f64], shape: Vec<usize>, build: impl Fn(&mut Graph, Var) -> Var) -> f64 {
    let eval = |xs: &[f64]| {
        let mut g = Graph::new();
        let v = g.param(&Tensor::new(shape.clone(), xs.to_vec()).unwrap());
        let out = build(&mut g, v);
        g.scalar(out)
    };
    let mut g = Graph::new();
    let v = g.param(&Tensor::new(shape.clone(), x.to_vec()).unwrap());
    let out = build(&mut g, v);
    let grads = g.backward(out).unwrap();
    let analytic = grads.get(v).unwrap().to_vec();
    max_relative_error(&analytic, &numeric_gradient(x, eval))
}

#[test]
fn matvec_examples() {
    let mut g = Graph::new();
    let w = g.constant(&Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
    let x = g.vector(vec![3.0, 4.0]).unwrap();
    let y = g.matvec(w, x).unwrap();
    assert_eq!(g.value(y), &[3.0, 4.0]);

    let w = g.constant(&Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
    let y = g.matvec(w, x).unwrap();
    assert_eq!(g.value(y), &[11.0]);
}

#[test]
fn matvec_shape_mismatch() {
    let mut g = Graph::new();
    let w = g.constant(&Tensor::zeros(vec![2, 3]));
    let x = g.vector(vec![1.0, 2.0]).unwrap();
    assert!(matches!(
        g.matvec(w, x),
        Err(NumericsError::Dimension { .. })
    ));
}

#[test]
fn matvec_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let w0 = rand_vec(&mut rng, 64);
        let x0 = rand_vec(&mut rng, 8);
        let xc = Tensor::vector(x0.clone());
        let err_w = check_unary(&w0, vec![8, 8], |g, w| {
            let x = g.constant(&xc);
            let y = g.matvec(w, x).unwrap();
            g.sum(y).unwrap()
        });
        let wc = Tensor::new(vec![8, 8], w0.clone()).unwrap();
        let err_x = check_unary(&x0, vec![8], |g, x| {
            let w = g.constant(&wc);
            let y = g.matvec(w, x).unwrap();
            let y = g.tanh(y).unwrap();
            g.sum(y).unwrap()
        });
        assert!(err_w < 1e-4 && err_x < 1e-4, "{err_w} {err_x}");
    }
}

#[test]
fn mat_t_vec_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let w0 = rand_vec(&mut rng, 24);
        let p0 = rand_vec(&mut rng, 4);
        let pc = Tensor::vector(p0.clone());
        let probe = Tensor::vector(rand_vec(&mut rng, 6));
        let err_w = check_unary(&w0, vec![4, 6], |g, w| {
            let p = g.constant(&pc);
            let y = g.mat_t_vec(w, p).unwrap();
            let q = g.constant(&probe);
            g.dot(y, q).unwrap()
        });
        let wc = Tensor::new(vec![4, 6], w0.clone()).unwrap();
        let err_p = check_unary(&p0, vec![4], |g, p| {
            let w = g.constant(&wc);
            let y = g.mat_t_vec(w, p).unwrap();
            let q = g.constant(&probe);
            g.dot(y, q).unwrap()
        });
        assert!(err_w < 1e-4 && err_p < 1e-4, "{err_w} {err_p}");
    }
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.vector(vec![0.0; 4]).unwrap();
    let p = g.softmax(x).unwrap();
    assert_eq!(g.value(p), &[0.25; 4]);

    let x = g.vector(vec![1000.0, 0.0]).unwrap();
    let p = g.softmax(x).unwrap();
    assert!((g.value(p)[0] - 1.0).abs() < 1e-12);
    assert!(g.value(p)[1] < 1e-300 || g.value(p)[1] == 0.0);

    let x = g.vector(vec![]).unwrap();
    assert!(matches!(g.softmax(x), Err(NumericsError::Dimension { .. })));
}

#[test]
fn softmax_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let x0 = rand_vec(&mut rng, 16);
        let probe = Tensor::vector(rand_vec(&mut rng, 16));
        let err = check_unary(&x0, vec![16], |g, x| {
            let p = g.softmax(x).unwrap();
            let q = g.constant(&probe);
            g.dot(p, q).unwrap()
        });
        assert!(err < 1e-4, "{err}");
        let err = check_unary(&x0, vec![16], |g, x| {
            let p = g.log_softmax(x).unwrap();
            let q = g.constant(&probe);
            g.dot(p, q).unwrap()
        });
        assert!(err < 1e-4, "{err}");
    }
}

#[test]
fn softmax_is_probability_vector() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..100 {
        let n = rng.random_range(1..40);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
        let p = softmax_values(&x);
        assert!(p.iter().all(|v| *v >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn layer_norm_examples() {
    let mut g = Graph::new();
    let ones = g.vector(vec![1.0; 4]).unwrap();
    let zeros = g.vector(vec![0.0; 4]).unwrap();
    let y = g.layer_norm(ones, ones, zeros).unwrap();
    assert_eq!(g.value(y), &[0.0; 4]);

    let x = g.vector(vec![-1.0, 1.0]).unwrap();
    let gain = g.vector(vec![1.0; 2]).unwrap();
    let bias = g.vector(vec![0.0; 2]).unwrap();
    let y = g.layer_norm(x, gain, bias).unwrap();
    let expected = 1.0 / (1.0 + LAYER_NORM_EPS).sqrt();
    assert!((g.value(y)[0] + expected).abs() < 1e-15);
    assert!((g.value(y)[1] - expected).abs() < 1e-15);
}

#[test]
fn layer_norm_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..100 {
        let x0 = rand_vec(&mut rng, 32);
        let mut g = Graph::new();
        let x = g.vector(x0).unwrap();
        let gain = g.vector(vec![1.0; 32]).unwrap();
        let bias = g.vector(vec![0.0; 32]).unwrap();
        let y = g.layer_norm(x, gain, bias).unwrap();
        let v = g.value(y);
        let mean = v.iter().sum::<f64>() / 32.0;
        let var = v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / 32.0;
        assert!(mean.abs() < 1e-7);
        assert!((var - 1.0).abs() < 1e-3);
    }
}

#[test]
fn layer_norm_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..100 {
        let x0 = rand_vec(&mut rng, 32);
        let gain0 = rand_vec(&mut rng, 32);
        let bias0 = rand_vec(&mut rng, 32);
        let probe = Tensor::vector(rand_vec(&mut rng, 32));
        let (gc, bc, xc) = (
            Tensor::vector(gain0.clone()),
            Tensor::vector(bias0.clone()),
            Tensor::vector(x0.clone()),
        );
        let err_x = check_unary(&x0, vec![32], |g, x| {
            let (gn, b) = (g.constant(&gc), g.constant(&bc));
            let y = g.layer_norm(x, gn, b).unwrap();
            let q = g.constant(&probe);
            g.dot(y, q).unwrap()
        });
        let err_g = check_unary(&gain0, vec![32], |g, gn| {
            let (x, b) = (g.constant(&xc), g.constant(&bc));
            let y = g.layer_norm(x, gn, b).unwrap();
            let q = g.constant(&probe);
            g.dot(y, q).unwrap()
        });
        let err_b = check_unary(&bias0, vec![32], |g, b| {
            let (x, gn) = (g.constant(&xc), g.constant(&gc));
            let y = g.layer_norm(x, gn, b).unwrap();
            let y = g.tanh(y).unwrap();
            g.sum(y).unwrap()
        });
        assert!(
            err_x < 1e-4 && err_g < 1e-4 && err_b < 1e-4,
            "{err_x} {err_g} {err_b}"
        );
    }
}

#[test]
fn structural_ops_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let x0 = rand_vec(&mut rng, 12);
        let err = check_unary(&x0, vec![3, 4], |g, w| {
            let r0 = g.row(w, 0).unwrap();
            let r2 = g.row(w, 2).unwrap();
            let prod = g.mul(r0, r2).unwrap();
            let stacked = g.stack_rows(&[prod, r0]).unwrap();
            let c = g.concat(&[stacked, r2]).unwrap();
            let i = g.index(c, 5).unwrap();
            let s = g.mean(c).unwrap();
            let both = g.concat(&[i, s]).unwrap();
            let sq = g.dot(both, both).unwrap();
            g.scale(sq, 0.5).unwrap()
        });
        assert!(err < 1e-4, "{err}");
    }
}

#[test]
fn bce_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for _ in 0..100 {
        let x0 = rand_vec(&mut rng, 6);
        let targets: Vec<f64> = (0..6).map(|_| f64::from(rng.random_bool(0.5))).collect();
        let err = check_unary(&x0, vec![6], |g, x| g.bce_with_logits(x, &targets).unwrap());
        assert!(err < 1e-4, "{err}");
    }
}

#[test]
fn backward_examples() {
    let mut g = Graph::new();
    let x = g.param(&Tensor::vector(vec![1.0, -2.0, 3.0, 0.5, 7.0]));
    let s = g.sum(x).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[1.0; 5]);

    let mut g = Graph::new();
    let x = g.param(&Tensor::vector(vec![1.0, 2.0]));
    let d = g.dot(x, x).unwrap();
    let grads = g.backward(d).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[2.0, 4.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::new();
    let x = g.param(&Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(
        g.backward(x),
        Err(NumericsError::NonScalarLoss { .. })
    ));
}

#[test]
fn repeated_backward_doubles_accumulated_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut store = ParamStore::new();
    store.add("w", Tensor::uniform(vec![5, 5], 1.0, &mut rng));
    store.add("b", Tensor::uniform(vec![5], 1.0, &mut rng));
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let x = g.vector(rand_vec(&mut rng, 5)).unwrap();
    let h = g.matvec(bound.var(ParamId(0)), x).unwrap();
    let h = g.add(h, bound.var(ParamId(1))).unwrap();
    let h = g.tanh(h).unwrap();
    let h2 = g.matvec(bound.var(ParamId(0)), h).unwrap();
    let loss = g.dot(h2, h).unwrap();

    let mut once = ParamGrads::zeros(&store);
    once.accumulate(&bound.gradients(&store, &g.backward(loss).unwrap()));
    let mut twice = once.clone();
    twice.accumulate(&bound.gradients(&store, &g.backward(loss).unwrap()));
    for (a, b) in once.0.iter().flatten().zip(twice.0.iter().flatten()) {
        assert_eq!(2.0 * a, *b);
    }
}

#[test]
fn non_finite_values_are_errors() {
    let mut g = Graph::new();
    let x = g.vector(vec![1e300, 1e300]).unwrap();
    let y = g.vector(vec![1e300, 1e300]).unwrap();
    assert!(matches!(g.mul(x, y), Err(NumericsError::NonFinite { .. })));
    assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
}
