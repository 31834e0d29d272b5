use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Result;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// `Σ w ⊙ y` with fixed random weights so every output entry matters.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(random(g.value(y).shape(), &mut rng));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn check(f: &dyn ScalarFn, params: &[Tensor]) -> f64 {
    let r = grad_check(f, params, 1e-5).unwrap();
    r.max_rel_error
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 3]));
    let y = g.softmax(x);
    for &p in g.value(y).data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn cross_entropy_of_equal_logits_is_ln_j() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[3, 10], 0.7));
    let l = g.cross_entropy(x, &[0, 4, 9]).unwrap();
    assert!((g.value(l).item() - 10f64.ln()).abs() < 1e-12);
    assert!((g.value(l).item() - 2.302585).abs() < 1e-6);
}

#[test]
fn cross_entropy_target_out_of_range() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 10]));
    assert!(g.cross_entropy(x, &[10]).is_err());
    assert!(g.cross_entropy(x, &[1, 2]).is_err());
}

#[test]
fn shape_mismatches_are_errors() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let c = g.constant(Tensor::zeros(&[4]));
    assert!(g.matmul(a, b).is_err());
    assert!(g.add(a, c).is_err());
    assert!(g.broadcast_add(a, c).is_err());
    assert!(g.layer_norm(a, c, c).is_err());
    let table = g.constant(Tensor::zeros(&[5, 2]));
    assert!(g.embedding(table, &[5]).is_err());
    assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
}

#[test]
fn layer_norm_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = [random(&[4, 8], &mut rng), random(&[8], &mut rng), random(&[8], &mut rng)];
    let f = |g: &mut Graph, p: &[Var]| {
        let y = g.layer_norm(p[0], p[1], p[2])?;
        project(g, y, 2)
    };
    let err = check(&f, &params);
    assert!(err <= 1e-6, "layer_norm rel err {err}");
}

#[test]
fn sum_of_squares_gradient() {
    let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
    let f = |g: &mut Graph, p: &[Var]| {
        let sq = g.mul(p[0], p[0])?;
        Ok(g.sum(sq))
    };
    let mut g = Graph::new();
    let v = g.param(x.clone());
    let out = f(&mut g, &[v]).unwrap();
    g.backward(out).unwrap();
    assert_eq!(g.grad(v).unwrap(), &[2.0, 4.0]);
    let r = grad_check(&f, &[x], 1e-5).unwrap();
    assert!(r.max_rel_error <= 1e-9, "{r:?}");
}

#[test]
fn constant_function_has_zero_gradients() {
    let f = |g: &mut Graph, _: &[Var]| Ok(g.constant(Tensor::scalar(3.0)));
    let r = grad_check(&f, &[Tensor::full(&[3], 0.5)], 1e-5).unwrap();
    assert_eq!(r.max_rel_error, 0.0);
    assert_eq!((r.analytic, r.numeric), (0.0, 0.0));
}

#[test]
fn non_finite_objective_is_error() {
    let f = |g: &mut Graph, p: &[Var]| Ok(g.scale(p[0], f64::INFINITY));
    assert!(grad_check(&f, &[Tensor::scalar(1.0)], 1e-5).is_err());
}

#[test]
fn every_primitive_passes_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random(&[5, 4], &mut rng);
    let b = random(&[4, 3], &mut rng);
    let c = random(&[5, 4], &mut rng);
    let bias = random(&[4], &mut rng);
    let tile = random(&[1, 4], &mut rng);
    let pos = random(&[5, 4], &mut rng);
    let table = random(&[6, 3], &mut rng);

    type Case<'a> = (&'a str, Box<dyn ScalarFn + 'a>, Vec<Tensor>, f64);
    let cases: Vec<Case> = vec![
        ("matmul", Box::new(|g: &mut Graph, p: &[Var]| { let y = g.matmul(p[0], p[1])?; project(g, y, 1) }), vec![a.clone(), b.clone()], 1e-6),
        ("add", Box::new(|g: &mut Graph, p: &[Var]| { let y = g.add(p[0], p[1])?; project(g, y, 2) }), vec![a.clone(), c.clone()], 1e-6),
        ("mul", Box::new(|g: &mut Graph, p: &[Var]| { let y = g.mul(p[0], p[1])?; project(g, y, 3) }), vec![a.clone(), c.clone()], 1e-6),
        ("scale", Box::new(|g: &mut Graph, p: &[Var]| { let y = g.scale(p[0], -1.7); project(g, y, 4) }), vec![a.clone()], 1e-6),
        ("broadcast_add bias", Box::new(|g: &mut Graph, p: &[Var]| { let y = g.broadcast_add(p[0], p[1])?; project(g, y, 5) }), vec![a.clone(), bias.clone()], 1e-6),
        ("broadcast_add row", Box::new(|g: &mut Graph, p: &[Var]| { let y = g.broadcast_add(p[0], p[1])?; project(g, y, 6) }), vec![a.clone(), tile.clone()], 1e-6),
        ("broadcast_add tiled", Box::new(|g: &mut Graph, p: &[Var]| { let y = g.broadcast_add(p[0], p[1])?; project(g, y, 7) }), vec![Tensor::from_fn(&[10, 4], |i| (i as f64 * 0.37).sin()), pos.clone()], 1e-6),
        ("gelu", Box::new(|g: &mut Graph, p: &[Var]| { let s = g.scale(p[0], 2.5); let y = g.gelu(s); project(g, y, 8) }), vec![a.clone()], 1e-6),
        ("softmax", Box::new(|g: &mut Graph, p: &[Var]| { let y = g.softmax(p[0]); project(g, y, 9) }), vec![a.clone()], 1e-5),
        ("layer_norm", Box::new(|g: &mut Graph, p: &[Var]| { let y = g.layer_norm(p[0], p[1], p[2])?; project(g, y, 10) }), vec![a.clone(), bias.clone(), random(&[4], &mut rng)], 1e-6),
        ("embedding", Box::new(|g: &mut Graph, p: &[Var]| { let y = g.embedding(p[0], &[0, 3, 3, 5, 1])?; project(g, y, 11) }), vec![table.clone()], 1e-6),
        ("concat", Box::new(|g: &mut Graph, p: &[Var]| { let y = g.concat(&[p[0], p[1], p[0]])?; project(g, y, 12) }), vec![a.clone(), random(&[5, 2], &mut rng)], 1e-6),
        ("cross_entropy", Box::new(|g: &mut Graph, p: &[Var]| { let s = g.scale(p[0], 3.0); g.cross_entropy(s, &[0, 3, 1, 1, 2]) }), vec![a.clone()], 1e-5),
        ("causal_attention", Box::new(|g: &mut Graph, p: &[Var]| { let y = g.causal_attention(p[0], p[1], p[2], 2, 3, 2)?; project(g, y, 13) }),
            vec![random(&[6, 4], &mut rng), random(&[6, 4], &mut rng), random(&[6, 4], &mut rng)], 1e-5),
    ];
    for (name, f, params, tol) in cases {
        let r = grad_check(&*f, &params, 1e-5).unwrap();
        assert!(r.max_rel_error <= tol, "{name}: {r:?}");
    }
}

#[test]
fn corrupted_softmax_fails_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[3, 5], &mut rng);
    let f = |g: &mut Graph, p: &[Var]| {
        let y = g.softmax(p[0]);
        project(g, y, 1)
    };
    let healthy = grad_check(&f, &[x.clone()], 1e-5).unwrap();
    let broken = grad_check_with(&f, &[x], 1e-5, &|g| g.inject_fault(Fault::SoftmaxBackward)).unwrap();
    assert!(healthy.max_rel_error <= 1e-6);
    assert!(broken.max_rel_error > 1e-2, "{broken:?}");
}

#[test]
fn attention_never_looks_ahead() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (batch, seq, heads) = (2, 4, 2);
    let mut g = Graph::new();
    let q = g.constant(random(&[8, 6], &mut rng));
    let k = g.constant(random(&[8, 6], &mut rng));
    let v = g.constant(random(&[8, 6], &mut rng));
    let out = g.causal_attention(q, k, v, batch, seq, heads).unwrap();
    let probs = g.attention_probs(out).unwrap();
    for bh in 0..batch * heads {
        for i in 0..seq {
            let row = &probs[(bh * seq + i) * seq..][..seq];
            assert!(row[i + 1..].iter().all(|&p| p == 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn adam_zero_gradient_is_fixed_point() {
    let mut params = vec![Tensor::new(vec![2], vec![0.3, -1.0]).unwrap()];
    let mut state = AdamState::new(AdamConfig::new(0.1), &params);
    adam_step(&mut params, &[&[1.0, 1.0]], &mut state).unwrap();
    let after_one = params[0].clone();
    let m_before = state.first_moment[0].clone();
    adam_step(&mut params, &[&[0.0, 0.0]], &mut state).unwrap();
    // momentum still moves the weights; a fresh state with zero grads must not
    let mut fresh = vec![after_one.clone()];
    let mut s2 = AdamState::new(AdamConfig::new(0.1), &fresh);
    adam_step(&mut fresh, &[&[0.0, 0.0]], &mut s2).unwrap();
    assert_eq!(fresh[0], after_one);
    assert_eq!(s2.step, 1);
    for (a, b) in state.first_moment[0].iter().zip(&m_before) {
        assert!((a.abs()) < b.abs());
    }
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut params = vec![Tensor::scalar(0.0)];
    let mut state = AdamState::new(AdamConfig::new(0.1), &params);
    adam_step(&mut params, &[&[1.0]], &mut state).unwrap();
    // hand-rolled: m = 0.1, v = 0.001, m̂ = 1, v̂ = 1, Δ = −0.1 / (1 + 1e-8)
    let expected = -0.1 / (1.0 + 1e-8);
    assert!((params[0].item() - expected).abs() < 1e-15);
    assert_eq!(state.step, 1);
}

#[test]
fn adam_descends_quadratic_like_scalar_oracle() {
    let cfg = AdamConfig::new(0.05);
    let mut params = vec![Tensor::scalar(1.0)];
    let mut state = AdamState::new(cfg, &params);
    let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    for t in 1..=100 {
        let g = 2.0 * params[0].item();
        adam_step(&mut params, &[&[g]], &mut state).unwrap();

        let go = 2.0 * x;
        m = 0.9 * m + 0.1 * go;
        v = 0.999 * v + 0.001 * go * go;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        x -= 0.05 * mh / (vh.sqrt() + 1e-8);
        assert!((x - params[0].item()).abs() < 1e-12);
    }
    assert!(params[0].item().abs() < 0.1, "x = {}", params[0].item());
}

#[test]
fn adam_is_deterministic_and_checks_shapes() {
    let run = || {
        let mut p = vec![Tensor::from_fn(&[3], |i| i as f64)];
        let mut s = AdamState::new(AdamConfig::new(0.01), &p);
        for k in 0..10 {
            let g: Vec<f64> = (0..3).map(|i| ((i + k) as f64).sin()).collect();
            adam_step(&mut p, &[&g], &mut s).unwrap();
        }
        (p, s)
    };
    assert_eq!(run(), run());
    let mut p = vec![Tensor::zeros(&[3])];
    let mut s = AdamState::new(AdamConfig::new(0.01), &p);
    assert!(adam_step(&mut p, &[&[1.0, 2.0]], &mut s).is_err());
    assert!(adam_step(&mut p, &[], &mut s).is_err());
}

proptest! {
    #[test]
    fn softmax_is_a_distribution_for_large_inputs(
        vals in proptest::collection::vec(-1e3f64..1e3, 1..40)
    ) {
        let mut row = vals.clone();
        softmax_in_place(&mut row);
        prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}
