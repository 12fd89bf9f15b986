use super::*;
use crate::numerics::{finite_diff_grad, gradient_rel_err, named_stream, RngSeed};
use rand::Rng;

fn rng(label: &str) -> rand_chacha::ChaCha8Rng {
    named_stream(RngSeed(0xC0FFEE), label)
}

fn rand_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Net whose every subnet output is a fixed constant (zero weights, output
/// bias set), so the x-dependence vanishes.
fn constant_plse(slopes: &[Vec<f64>], offsets: &[f64], t: f64) -> PlseNet {
    let x_dim = 3;
    let u_dim = slopes[0].len();
    let a_subnets = slopes
        .iter()
        .map(|s| {
            let mut n = Fnn::zeros(&[x_dim, 4, u_dim], Activation::Tanh);
            n.layers.last_mut().unwrap().bias.copy_from_slice(s);
            n
        })
        .collect();
    let b_subnets = offsets
        .iter()
        .map(|&b| {
            let mut n = Fnn::zeros(&[x_dim, 4, 1], Activation::Tanh);
            n.layers.last_mut().unwrap().bias[0] = b;
            n
        })
        .collect();
    PlseNet::new(a_subnets, b_subnets, t, false).unwrap()
}

#[test]
fn fnn_zero_weights_returns_bias() {
    let mut net = Fnn::zeros(&[3, 4, 2], Activation::Tanh);
    net.layers.last_mut().unwrap().bias = vec![1.5, -0.5];
    for pt in [[0.0, 0.0, 0.0], [1.0, -2.0, 0.3]] {
        assert_eq!(net.eval(&pt), vec![1.5, -0.5]);
    }
}

#[test]
fn fnn_identity_layer_passes_input_through() {
    let mut net = Fnn::zeros(&[2, 2], Activation::Tanh);
    net.layers[0].weights = vec![1.0, 0.0, 0.0, 1.0];
    assert_eq!(net.eval(&[0.7, -0.2]), vec![0.7, -0.2]);
}

#[test]
fn fnn_linear_net_jacobian_is_weight_product() {
    // single layer, linear output: jacobian is the weight matrix exactly
    let mut net = Fnn::zeros(&[2, 2], Activation::Tanh);
    net.layers[0].weights = vec![2.0, -1.0, 0.5, 3.0];
    net.layers[0].bias = vec![0.3, -0.6];
    let jac = net.input_jacobian(&[0.4, 0.9]);
    assert_eq!(jac[0], vec![2.0, -1.0]);
    assert_eq!(jac[1], vec![0.5, 3.0]);
}

#[test]
fn fnn_input_gradient_matches_finite_differences() {
    let mut r = rng("fnn-grad");
    let net = Fnn::init(&[4, 8, 1], Activation::Tanh, &mut r);
    let x = rand_vec(&mut r, 4, 1.0);
    let analytic = net.input_grad(&x);
    let fd = finite_diff_grad(|p| net.eval_scalar(p), &x, 1e-5);
    assert!(gradient_rel_err(&analytic, &fd, 1e-2) < 1e-6);
}

#[test]
fn fnn_param_gradient_matches_finite_differences() {
    let mut r = rng("fnn-pgrad");
    let net = Fnn::init(&[3, 6, 1], Activation::Tanh, &mut r);
    let x = rand_vec(&mut r, 3, 1.0);
    let cache = net.forward_cached(&x);
    let mut analytic = vec![0.0; net.param_count()];
    net.backprop(&cache, &[1.0], Some(&mut analytic));

    let mut theta = Vec::new();
    net.copy_params_to(&mut theta);
    let fd = finite_diff_grad(
        |p| {
            let mut m = net.clone();
            m.set_params_from(p);
            m.eval_scalar(&x)
        },
        &theta,
        1e-5,
    );
    assert!(gradient_rel_err(&analytic, &fd, 1e-2) < 1e-5);
}

#[test]
fn fnn_backprop_accumulates() {
    let mut r = rng("fnn-acc");
    let net = Fnn::init(&[2, 3, 1], Activation::Tanh, &mut r);
    let x = rand_vec(&mut r, 2, 1.0);
    let cache = net.forward_cached(&x);
    let mut once = vec![0.0; net.param_count()];
    net.backprop(&cache, &[1.0], Some(&mut once));
    let mut twice = vec![0.0; net.param_count()];
    net.backprop(&cache, &[1.0], Some(&mut twice));
    net.backprop(&cache, &[1.0], Some(&mut twice));
    for (a, b) in once.iter().zip(&twice) {
        assert!((2.0 * a - b).abs() < 1e-14);
    }
}

#[test]
fn ma_absolute_value_shape() {
    let net = MaNet::new(vec![
        AffineTerm::new(vec![1.0], 0.0),
        AffineTerm::new(vec![-1.0], 0.0),
    ])
    .unwrap();
    assert_eq!(net.eval(&[0.5]), 0.5);
    assert_eq!(net.eval(&[0.0]), 0.0);
}

#[test]
fn ma_single_affine_term() {
    let net = MaNet::new(vec![AffineTerm::new(vec![2.0], 1.0)]).unwrap();
    assert_eq!(net.eval(&[3.0]), 7.0);
}

#[test]
fn lse_single_term_is_affine_exactly() {
    let net = LseNet::new(vec![AffineTerm::new(vec![2.0], 1.0)], 5.0).unwrap();
    let (v, g) = net.eval_with_grad(&[3.0]);
    assert_eq!(v, 7.0);
    assert_eq!(g, vec![2.0]);
}

#[test]
fn lse_symmetric_pair() {
    let net = LseNet::new(
        vec![
            AffineTerm::new(vec![1.0], 0.0),
            AffineTerm::new(vec![-1.0], 0.0),
        ],
        1.0,
    )
    .unwrap();
    let (v, g) = net.eval_with_grad(&[0.0]);
    assert!((v - 2.0_f64.ln()).abs() < 1e-15);
    assert!(g[0].abs() < 1e-15);
}

#[test]
fn lse_within_envelope_of_ma() {
    let mut r = rng("lse-ma");
    for _ in 0..20 {
        let dim = r.gen_range(1..4);
        let terms = r.gen_range(1..8);
        let t = r.gen_range(0.1..3.0);
        let lse = LseNet::init(dim, terms, t, &mut r);
        let ma = MaNet {
            terms: lse.terms.clone(),
        };
        let bound = t * (terms as f64).ln();
        for _ in 0..50 {
            let z = rand_vec(&mut r, dim, 2.0);
            let gap = lse.eval(&z) - ma.eval(&z);
            assert!(gap >= 0.0, "lse fell below max-affine");
            assert!(gap <= bound + 1e-12, "gap {gap} exceeds {bound}");
        }
    }
}

#[test]
fn lse_gradient_matches_finite_differences() {
    let mut r = rng("lse-grad");
    let net = LseNet::init(3, 6, 0.7, &mut r);
    let z = rand_vec(&mut r, 3, 1.0);
    let (_, g) = net.eval_with_grad(&z);
    let fd = finite_diff_grad(|p| net.eval(p), &z, 1e-5);
    assert!(gradient_rel_err(&g, &fd, 1e-2) < 1e-6);
}

#[test]
fn lse_hessian_matches_finite_differences_of_gradient() {
    let mut r = rng("lse-hess");
    let net = LseNet::init(2, 5, 0.9, &mut r);
    let z = rand_vec(&mut r, 2, 1.0);
    let h = net.hessian(&z);
    for j in 0..2 {
        let fd = finite_diff_grad(|p| net.eval_with_grad(p).1[j], &z, 1e-5);
        for i in 0..2 {
            assert!((h[(i, j)] - fd[i]).abs() < 1e-6);
        }
    }
}

#[test]
fn lse_param_gradient_matches_finite_differences() {
    let mut r = rng("lse-pgrad");
    let net = LseNet::init(2, 4, 1.3, &mut r);
    let z = rand_vec(&mut r, 2, 1.0);
    let mut analytic = vec![0.0; net.param_count()];
    net.accumulate_param_grad(&z, 1.0, &mut analytic);
    let mut theta = Vec::new();
    net.copy_params_to(&mut theta);
    let fd = finite_diff_grad(
        |p| {
            let mut m = net.clone();
            m.set_params_from(p);
            m.eval(&z)
        },
        &theta,
        1e-5,
    );
    assert!(gradient_rel_err(&analytic, &fd, 1e-2) < 1e-5);
}

#[test]
fn lse_slice_folds_x_into_offsets() {
    let mut r = rng("lse-slice");
    let net = LseNet::init(4, 5, 1.0, &mut r);
    let x = rand_vec(&mut r, 2, 1.0);
    let sliced = net.slice_at(&x);
    for _ in 0..10 {
        let u = rand_vec(&mut r, 2, 1.5);
        let z: Vec<f64> = x.iter().chain(&u).copied().collect();
        assert!((net.eval(&z) - sliced.eval(&u)).abs() < 1e-12);
    }
}

#[test]
fn dlse_identical_halves_vanish() {
    let mut r = rng("dlse-zero");
    let half = LseNet::init(2, 4, 1.0, &mut r);
    let net = DlseNet::new(half.clone(), half).unwrap();
    for _ in 0..10 {
        let z = rand_vec(&mut r, 2, 2.0);
        assert_eq!(net.eval(&z), 0.0);
    }
}

#[test]
fn dlse_zero_negative_half_equals_positive() {
    let mut r = rng("dlse-pos");
    let pos = LseNet::init(2, 4, 1.0, &mut r);
    let neg = LseNet::new(vec![AffineTerm::new(vec![0.0, 0.0], 0.0)], 1.0).unwrap();
    let net = DlseNet::new(pos.clone(), neg).unwrap();
    for _ in 0..10 {
        let z = rand_vec(&mut r, 2, 2.0);
        assert_eq!(net.eval(&z), pos.eval(&z));
    }
}

#[test]
fn dlse_gradient_matches_finite_differences() {
    let mut r = rng("dlse-grad");
    let net = DlseNet::init(3, 5, 0.8, &mut r);
    let z = rand_vec(&mut r, 3, 1.0);
    let (_, g) = net.eval_with_grad(&z);
    let fd = finite_diff_grad(|p| net.eval(p), &z, 1e-5);
    assert!(gradient_rel_err(&g, &fd, 1e-2) < 1e-6);
}

#[test]
fn dlse_rejects_mismatched_temperatures() {
    let mut r = rng("dlse-bad");
    let pos = LseNet::init(2, 3, 1.0, &mut r);
    let neg = LseNet::init(2, 3, 2.0, &mut r);
    assert!(DlseNet::new(pos, neg).is_err());
}

#[test]
fn plse_with_constant_subnets_reduces_to_lse() {
    let slopes = vec![vec![0.4, -1.1], vec![-0.3, 0.8], vec![1.0, 0.0]];
    let offsets = vec![0.2, -0.5, 0.9];
    let t = 1.7;
    let plse = constant_plse(&slopes, &offsets, t);
    let lse = LseNet::new(
        slopes
            .iter()
            .zip(&offsets)
            .map(|(a, &b)| AffineTerm::new(a.clone(), b))
            .collect(),
        t,
    )
    .unwrap();
    let mut r = rng("plse-reduce");
    for _ in 0..20 {
        let x = rand_vec(&mut r, 3, 1.0);
        let u = rand_vec(&mut r, 2, 1.5);
        assert_eq!(plse.eval(&x, &u), lse.eval(&u));
    }
}

#[test]
fn plse_plus_is_midpoint_convex_in_u() {
    let mut r = rng("plse-convex");
    let net = PlseNet::init(2, 2, 6, 1.0, &[8, 8], true, &mut r).unwrap();
    for _ in 0..200 {
        let x = rand_vec(&mut r, 2, 1.0);
        let u1 = rand_vec(&mut r, 2, 2.0);
        let u2 = rand_vec(&mut r, 2, 2.0);
        let mid: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| 0.5 * (a + b)).collect();
        let lhs = net.eval(&x, &mid);
        let rhs = 0.5 * (net.eval(&x, &u1) + net.eval(&x, &u2));
        assert!(lhs <= rhs + 1e-12);
    }
}

#[test]
fn plse_grad_u_matches_finite_differences() {
    let mut r = rng("plse-ugrad");
    let net = PlseNet::init(3, 2, 5, 0.9, &[6], false, &mut r).unwrap();
    let x = rand_vec(&mut r, 3, 1.0);
    let u = rand_vec(&mut r, 2, 1.0);
    let (_, g) = net.eval_with_grad_u(&x, &u);
    let fd = finite_diff_grad(|p| net.eval(&x, p), &u, 1e-5);
    assert!(gradient_rel_err(&g, &fd, 1e-2) < 1e-6);
}

#[test]
fn plse_param_gradient_matches_finite_differences() {
    let mut r = rng("plse-pgrad");
    for &plus in &[false, true] {
        let net = PlseNet::init(2, 2, 3, 1.1, &[4], plus, &mut r).unwrap();
        let x = rand_vec(&mut r, 2, 1.0);
        let u = rand_vec(&mut r, 2, 1.0);
        let cache = net.forward_cached(&x);
        let mut analytic = vec![0.0; net.param_count()];
        net.value_backprop(&cache, &u, 1.0, &mut analytic);

        let mut theta = Vec::new();
        net.copy_params_to(&mut theta);
        let fd = finite_diff_grad(
            |p| {
                let mut m = net.clone();
                m.set_params_from(p);
                m.eval(&x, &u)
            },
            &theta,
            1e-5,
        );
        assert!(gradient_rel_err(&analytic, &fd, 1e-2) < 1e-5);
    }
}

#[test]
fn init_network_is_deterministic_in_seed() {
    let spec = NetSpec::Plse {
        x_dim: 1,
        u_dim: 1,
        terms: 20,
        temperature: 1.0,
        hidden: vec![16, 16],
        plus_constrained: true,
    };
    let a = init_network(&spec, RngSeed(42)).unwrap();
    let b = init_network(&spec, RngSeed(42)).unwrap();
    let (Approximator::Plse(a), Approximator::Plse(b)) = (a, b) else {
        panic!("wrong variant");
    };
    let mut pa = Vec::new();
    let mut pb = Vec::new();
    a.copy_params_to(&mut pa);
    b.copy_params_to(&mut pb);
    assert_eq!(pa, pb);
}

#[test]
fn plse_plus_first_slope_is_structurally_zero() {
    let mut r = rng("plus-zero");
    let net = PlseNet::init(2, 3, 4, 1.0, &[4], true, &mut r).unwrap();
    assert!(net.slope_subnet(0).is_none());
    assert_eq!(net.slope_subnets().len(), 3);
    let x = rand_vec(&mut r, 2, 1.0);
    let cache = net.forward_cached(&x);
    assert_eq!(cache.slopes[0], vec![0.0; 3]);
}

#[test]
fn reference_scale_network_builds() {
    // the experiment-scale configuration: 20 terms at unit temperature
    let spec = NetSpec::Plse {
        x_dim: 1,
        u_dim: 1,
        terms: 20,
        temperature: 1.0,
        hidden: vec![16, 16],
        plus_constrained: true,
    };
    assert!(init_network(&spec, RngSeed(1)).is_ok());
}

#[test]
fn init_network_rejects_bad_configs() {
    assert!(init_network(
        &NetSpec::Lse {
            input_dim: 2,
            terms: 0,
            temperature: 1.0
        },
        RngSeed(1)
    )
    .is_err());
    assert!(init_network(
        &NetSpec::Lse {
            input_dim: 2,
            terms: 3,
            temperature: -1.0
        },
        RngSeed(1)
    )
    .is_err());
    assert!(init_network(
        &NetSpec::Fnn {
            dims: vec![4],
            activation: Activation::Tanh
        },
        RngSeed(1)
    )
    .is_err());
}
