//! Self-check suites: analytic gradients against central finite
//! differences, the implicit minimizer gradient against differences through
//! the solver, the global-minimizer-via-minorant property on grids, the
//! LSE/max-affine envelope bound, and the convex-envelope lemmas. The CLI
//! report commands and the acceptance tests both run these.

use crate::approximators::{Activation, DlseNet, Fnn, LseNet, MaNet, PlseNet};
use crate::gcm::{lower_convex_envelope, GridFunction};
use crate::implicit::{minimizer_vjp, SensitivityMode};
use crate::numerics::{finite_diff_grad, gradient_rel_err, named_stream, RngSeed};
use crate::pcm::EplseModel;
use crate::solve::{solve_pcm, BoxSet, SolverOpts};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Scaled-relative-error floor: entries this small are compared absolutely.
const REL_FLOOR: f64 = 1e-2;

/// Outcome of one suite: `pass` iff `worst <= threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub cases: usize,
    pub worst: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl SuiteReport {
    fn new(suite: &'static str, cases: usize, worst: f64, threshold: f64) -> Self {
        SuiteReport {
            suite,
            cases,
            worst,
            threshold,
            pass: worst <= threshold,
        }
    }
}

fn rand_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn param_fd<F: Fn(&[f64]) -> f64>(theta: &[f64], f: F, h: f64) -> Vec<f64> {
    finite_diff_grad(|p| f(p), theta, h)
}

/// FNN value gradients (input and parameters) vs central differences.
pub fn fnn_gradient_suite(cases: usize, seed: RngSeed) -> SuiteReport {
    fnn_gradient_suite_with(cases, seed, 0.0)
}

/// Same suite with the analytic gradients deliberately scaled by
/// `1 + corruption`; nonzero corruption must make the suite fail (this is
/// the sensitivity fixture used by the tests).
pub fn fnn_gradient_suite_with(cases: usize, seed: RngSeed, corruption: f64) -> SuiteReport {
    let mut rng = named_stream(seed, "check-fnn");
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let in_dim = rng.gen_range(1..=4);
        let hidden = rng.gen_range(4..=12);
        let net = Fnn::init(&[in_dim, hidden, 1], Activation::Tanh, &mut rng);
        let x = rand_vec(&mut rng, in_dim, 1.0);

        let cache = net.forward_cached(&x);
        let mut analytic_p = vec![0.0; net.param_count()];
        let mut analytic_x = net.backprop(&cache, &[1.0], Some(&mut analytic_p));
        for g in analytic_x.iter_mut().chain(&mut analytic_p) {
            *g *= 1.0 + corruption;
        }

        let fd_x = finite_diff_grad(|p| net.eval_scalar(p), &x, 1e-5);
        let mut theta = Vec::new();
        net.copy_params_to(&mut theta);
        let fd_p = param_fd(
            &theta,
            |p| {
                let mut m = net.clone();
                m.set_params_from(p);
                m.eval_scalar(&x)
            },
            1e-5,
        );
        worst = worst
            .max(gradient_rel_err(&analytic_x, &fd_x, REL_FLOOR))
            .max(gradient_rel_err(&analytic_p, &fd_p, REL_FLOOR));
    }
    SuiteReport::new("fnn-gradients", cases, worst, 1e-5)
}

/// LSE value gradients (input and term parameters) vs central differences.
pub fn lse_gradient_suite(cases: usize, seed: RngSeed) -> SuiteReport {
    let mut rng = named_stream(seed, "check-lse");
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let dim = rng.gen_range(1..=4);
        let terms = rng.gen_range(1..=8);
        let t = rng.gen_range(0.2..2.0);
        let net = LseNet::init(dim, terms, t, &mut rng);
        let z = rand_vec(&mut rng, dim, 1.0);

        let (_, analytic_z) = net.eval_with_grad(&z);
        let fd_z = finite_diff_grad(|p| net.eval(p), &z, 1e-5);

        let mut analytic_p = vec![0.0; net.param_count()];
        net.accumulate_param_grad(&z, 1.0, &mut analytic_p);
        let mut theta = Vec::new();
        net.copy_params_to(&mut theta);
        let fd_p = param_fd(
            &theta,
            |p| {
                let mut m = net.clone();
                m.set_params_from(p);
                m.eval(&z)
            },
            1e-5,
        );
        worst = worst
            .max(gradient_rel_err(&analytic_z, &fd_z, REL_FLOOR))
            .max(gradient_rel_err(&analytic_p, &fd_p, REL_FLOOR));
    }
    SuiteReport::new("lse-gradients", cases, worst, 1e-5)
}

/// Parameterized LSE value gradients in `u` and in the subnet parameters.
pub fn plse_gradient_suite(cases: usize, seed: RngSeed, plus_constrained: bool) -> SuiteReport {
    let mut rng = named_stream(seed, "check-plse");
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let x_dim = rng.gen_range(1..=3);
        let u_dim = rng.gen_range(1..=3);
        let terms = rng.gen_range(2..=6);
        let t = rng.gen_range(0.3..1.5);
        let hidden = rng.gen_range(4..=8);
        let net = PlseNet::init(x_dim, u_dim, terms, t, &[hidden], plus_constrained, &mut rng)
            .expect("valid config");
        let x = rand_vec(&mut rng, x_dim, 1.0);
        let u = rand_vec(&mut rng, u_dim, 1.0);

        let (_, analytic_u) = net.eval_with_grad_u(&x, &u);
        let fd_u = finite_diff_grad(|p| net.eval(&x, p), &u, 1e-5);

        let cache = net.forward_cached(&x);
        let mut analytic_p = vec![0.0; net.param_count()];
        net.value_backprop(&cache, &u, 1.0, &mut analytic_p);
        let mut theta = Vec::new();
        net.copy_params_to(&mut theta);
        let fd_p = param_fd(
            &theta,
            |p| {
                let mut m = net.clone();
                m.set_params_from(p);
                m.eval(&x, &u)
            },
            1e-5,
        );
        worst = worst
            .max(gradient_rel_err(&analytic_u, &fd_u, REL_FLOOR))
            .max(gradient_rel_err(&analytic_p, &fd_p, REL_FLOOR));
    }
    let name = if plus_constrained {
        "plse-plus-gradients"
    } else {
        "plse-gradients"
    };
    SuiteReport::new(name, cases, worst, 1e-5)
}

/// DLSE value gradients (input and parameters) vs central differences.
pub fn dlse_gradient_suite(cases: usize, seed: RngSeed) -> SuiteReport {
    let mut rng = named_stream(seed, "check-dlse");
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let dim = rng.gen_range(1..=4);
        let terms = rng.gen_range(1..=6);
        let t = rng.gen_range(0.3..2.0);
        let net = DlseNet::init(dim, terms, t, &mut rng);
        let z = rand_vec(&mut rng, dim, 1.0);

        let (_, analytic_z) = net.eval_with_grad(&z);
        let fd_z = finite_diff_grad(|p| net.eval(p), &z, 1e-5);

        let mut analytic_p = vec![0.0; net.param_count()];
        net.accumulate_param_grad(&z, 1.0, &mut analytic_p);
        let mut theta = Vec::new();
        net.copy_params_to(&mut theta);
        let fd_p = param_fd(
            &theta,
            |p| {
                let mut m = net.clone();
                m.set_params_from(p);
                m.eval(&z)
            },
            1e-5,
        );
        worst = worst
            .max(gradient_rel_err(&analytic_z, &fd_z, REL_FLOOR))
            .max(gradient_rel_err(&analytic_p, &fd_p, REL_FLOOR));
    }
    SuiteReport::new("dlse-gradients", cases, worst, 1e-5)
}

/// All network-gradient suites at the standard case count.
pub fn gradient_suites(cases: usize, seed: RngSeed) -> Vec<SuiteReport> {
    vec![
        fnn_gradient_suite(cases, seed),
        lse_gradient_suite(cases, seed),
        plse_gradient_suite(cases, seed, false),
        plse_gradient_suite(cases, seed, true),
        dlse_gradient_suite(cases, seed),
    ]
}

fn random_interior_instance(
    rng: &mut ChaCha8Rng,
    opts: &SolverOpts,
) -> Option<(PlseNet, Vec<f64>, BoxSet, crate::solve::SolveResult)> {
    let u_dim = rng.gen_range(1..=2);
    let terms = rng.gen_range(4..=8);
    let t = rng.gen_range(0.4..1.2);
    let net = PlseNet::init(1, u_dim, terms, t, &[6], true, rng).ok()?;
    let x = rand_vec(rng, 1, 1.0);
    let u_box = BoxSet::cube(-1.0, 1.0, u_dim);
    let solved = solve_pcm(&net, &x, &u_box, opts).ok()?;
    let interior = solved.converged
        && solved
            .minimizer
            .iter()
            .zip(u_box.lower().iter().zip(u_box.upper()))
            .all(|(v, (lo, hi))| v - lo > 1e-2 && hi - v > 1e-2);
    if interior {
        Some((net, x, u_box, solved))
    } else {
        None
    }
}

/// Implicit minimizer gradient vs central differences through the solver
/// (`h = 1e-4`, solver tolerance `1e-10`) on interior-minimizer instances,
/// plus exact-zero checks for fully clamped instances.
pub fn implicit_vjp_suite(cases: usize, seed: RngSeed) -> SuiteReport {
    let mut rng = named_stream(seed, "check-vjp");
    let opts = SolverOpts::default().with_grad_tol(1e-10);
    let mut worst = 0.0f64;
    let mut accepted = 0;
    let mut attempts = 0;
    while accepted < cases && attempts < cases * 30 {
        attempts += 1;
        let Some((net, x, u_box, solved)) = random_interior_instance(&mut rng, &opts) else {
            continue;
        };
        accepted += 1;
        let m = net.u_dim();
        let n_params = net.param_count();

        // analytic rows: d u*_j / d theta via one VJP per coordinate
        let mut rows = Vec::with_capacity(m);
        for j in 0..m {
            let mut grad = vec![0.0; n_params];
            let mut upstream = vec![0.0; m];
            upstream[j] = 1.0;
            minimizer_vjp(
                &net,
                &x,
                &solved,
                &u_box,
                &upstream,
                SensitivityMode::Implicit,
                &mut grad,
            );
            rows.push(grad);
        }

        // compare on a handful of random parameter coordinates
        let mut theta = Vec::new();
        net.copy_params_to(&mut theta);
        let coords: Vec<usize> = (0..8).map(|_| rng.gen_range(0..n_params)).collect();
        let h = 1e-4;
        let mut analytic = Vec::new();
        let mut reference = Vec::new();
        for &c in &coords {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[c] += h;
            tm[c] -= h;
            let mut np = net.clone();
            let mut nm = net.clone();
            np.set_params_from(&tp);
            nm.set_params_from(&tm);
            let up = solve_pcm(&np, &x, &u_box, &opts).expect("perturbed solve");
            let um = solve_pcm(&nm, &x, &u_box, &opts).expect("perturbed solve");
            if !(up.converged && um.converged) {
                continue;
            }
            for j in 0..m {
                analytic.push(rows[j][c]);
                reference.push((up.minimizer[j] - um.minimizer[j]) / (2.0 * h));
            }
        }
        worst = worst.max(gradient_rel_err(&analytic, &reference, 1e-1));
    }

    // fully clamped instances: positive slopes push every coordinate to the
    // lower bound, the minimizer is locally constant, sensitivity is zero
    for _ in 0..5 {
        let net = PlseNet::constant_plus(
            1,
            &[vec![1.0, 0.8], vec![0.7, 1.2]],
            &[0.0, 0.1, -0.1],
            0.7,
        )
        .unwrap();
        let u_box = BoxSet::cube(-1.0, 1.0, 2);
        let x = rand_vec(&mut rng, 1, 1.0);
        let solved = solve_pcm(&net, &x, &u_box, &opts).unwrap();
        let mut grad = vec![0.0; net.param_count()];
        let sens = minimizer_vjp(
            &net,
            &x,
            &solved,
            &u_box,
            &rand_vec(&mut rng, 2, 1.0),
            SensitivityMode::Implicit,
            &mut grad,
        );
        assert!(sens.active_mask.iter().all(|&a| a), "expected full clamp");
        let max_abs = grad.iter().fold(0.0f64, |acc, g| acc.max(g.abs()));
        worst = worst.max(max_abs);
    }

    SuiteReport::new("implicit-vjp", accepted, worst, 1e-3)
}

/// Training-loss gradient (including the implicit path) vs differences of
/// the whole batch loss, on small models with the gap active.
pub fn training_gradient_suite(cases: usize, seed: RngSeed) -> SuiteReport {
    use crate::pcm::SolveCache;
    use crate::pcm::{Sample, TrainedModel};

    let mut rng = named_stream(seed, "check-train-grad");
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut attempts = 0;
    while checked < cases && attempts < cases * 20 {
        attempts += 1;
        let model = EplseModel::init(
            1,
            1,
            4,
            1.0,
            &[6],
            &[10],
            BoxSet::cube(-1.0, 1.0, 1),
            SolverOpts::default(),
            &mut rng,
        )
        .unwrap();
        let batch: Vec<Sample> = (0..6)
            .map(|_| Sample {
                x: rand_vec(&mut rng, 1, 1.0),
                u: rand_vec(&mut rng, 1, 1.0),
                value: rng.gen_range(-1.0..1.0),
            })
            .collect();

        // keep clear of the gap kink so finite differences are valid, and
        // require at least one active gap so the implicit path is exercised
        let mut active = 0;
        let mut near_kink = false;
        for s in &batch {
            let (_, star) = model.eval(&s.x, &s.u).unwrap();
            let g_u = model.gap.eval_scalar(&crate::pcm::stack_xu(&s.x, &s.u));
            let g_star = model
                .gap
                .eval_scalar(&crate::pcm::stack_xu(&s.x, &star.minimizer));
            if (g_u - g_star).abs() < 1e-3 {
                near_kink = true;
            }
            if g_u > g_star {
                active += 1;
            }
        }
        if near_kink || active == 0 {
            continue;
        }
        checked += 1;

        let trained = TrainedModel::Eplse(model);
        let loss = |m: &TrainedModel| -> f64 {
            let mut cache = SolveCache::default();
            batch
                .iter()
                .map(|s| {
                    let r = m.value_cached(&s.x, &s.u, &mut cache).unwrap() - s.value;
                    r * r
                })
                .sum::<f64>()
                / batch.len() as f64
        };
        let mut grad = vec![0.0; trained.param_count()];
        let mut solves = SolveCache::default();
        for s in &batch {
            crate::pcm::accumulate_sample_grad(
                &trained,
                s,
                batch.len(),
                SensitivityMode::Implicit,
                &mut solves,
                &mut grad,
            )
            .unwrap();
        }

        let mut theta = Vec::new();
        trained.copy_params_to(&mut theta);
        let coords: Vec<usize> = (0..10).map(|_| rng.gen_range(0..theta.len())).collect();
        let mut analytic = Vec::new();
        let mut reference = Vec::new();
        for &c in &coords {
            let h = 1e-4;
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[c] += h;
            tm[c] -= h;
            let mut mp = trained.clone();
            let mut mm = trained.clone();
            mp.set_params_from(&tp);
            mm.set_params_from(&tm);
            analytic.push(grad[c]);
            reference.push((loss(&mp) - loss(&mm)) / (2.0 * h));
        }
        worst = worst.max(gradient_rel_err(&analytic, &reference, 1e-1));
    }
    SuiteReport::new("training-loss-gradients", checked, worst, 1e-3)
}

/// The headline property on grids: the minorant's minimizer attains the
/// model's minimum over a dense `u` grid, for freshly initialized models.
pub fn minorant_global_minimizer_suite(
    models: usize,
    xs_per_model: usize,
    grid_points: usize,
    seed: RngSeed,
) -> SuiteReport {
    let mut rng = named_stream(seed, "check-global-min");
    let u_box = BoxSet::cube(-1.0, 1.0, 1);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..models {
        let model = EplseModel::init(
            1,
            1,
            20,
            1.0,
            &[16, 16],
            &[64, 64],
            u_box.clone(),
            SolverOpts::default(),
            &mut rng,
        )
        .unwrap();
        for _ in 0..xs_per_model {
            let x = rand_vec(&mut rng, 1, 1.0);
            let star = model.predict_minimizer(&x).expect("convex solve");
            let v_star = model.eval_with_minimizer(&x, &star.minimizer, &star);
            let mut grid_min = f64::INFINITY;
            for k in 0..grid_points {
                let u = [-1.0 + 2.0 * (k as f64) / ((grid_points - 1) as f64)];
                grid_min = grid_min.min(model.eval_with_minimizer(&x, &u, &star));
            }
            worst = worst.max(v_star - grid_min);
        }
    }
    SuiteReport::new("minorant-global-minimizer", models * xs_per_model, worst, 1e-6)
}

/// `0 <= LSE - MA <= T ln I` at random points for random nets.
pub fn lse_ma_bound_suite(nets: usize, points_per_net: usize, seed: RngSeed) -> SuiteReport {
    let mut rng = named_stream(seed, "check-lse-ma");
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..nets {
        let dim = rng.gen_range(1..=3);
        let terms = rng.gen_range(1..=10);
        let t = rng.gen_range(0.1..3.0);
        let lse = LseNet::init(dim, terms, t, &mut rng);
        let ma = MaNet {
            terms: lse.terms.clone(),
        };
        let bound = t * (terms as f64).ln();
        for _ in 0..points_per_net {
            let z = rand_vec(&mut rng, dim, 3.0);
            let gap = lse.eval(&z) - ma.eval(&z);
            // violation of either side of the envelope bound
            worst = worst.max(-gap).max(gap - bound);
        }
    }
    SuiteReport::new("lse-ma-envelope", nets * points_per_net, worst, 1e-12)
}

/// Convex-envelope oracle properties on 1001-point grids: minorant
/// (exact by construction), idempotence, midpoint convexity, greatest-ness
/// against random max-affine minorants, and grid-minimum preservation with
/// argmin inclusion (both exact).
pub fn gcm_suite(seed: RngSeed) -> SuiteReport {
    let mut rng = named_stream(seed, "check-gcm");
    let n = 1001;
    let mut worst = f64::NEG_INFINITY;
    let mut cases = 0;
    for trial in 0..20 {
        let a = rng.gen_range(0.5..4.0);
        let b = rng.gen_range(2.0..9.0);
        let c = rng.gen_range(-1.0..1.0);
        let f = move |u: f64| a * u * u + (b * u + c).sin();
        let g = GridFunction::sample(f, -1.0, 1.0, n).unwrap();
        let env = lower_convex_envelope(&g);
        cases += 1;

        // minorant property, exact
        for (e, v) in env.values().iter().zip(g.values()) {
            worst = worst.max(e - v);
        }
        // idempotence
        let env2 = lower_convex_envelope(&env);
        for (a2, b2) in env2.values().iter().zip(env.values()) {
            worst = worst.max((a2 - b2).abs() - 1e-12);
        }
        // midpoint convexity on the uniform grid
        let v = env.values();
        for i in 1..n - 1 {
            worst = worst.max(v[i] - 0.5 * (v[i - 1] + v[i + 1]) - 1e-12);
        }
        // greatest-ness against random max-affine minorants
        for _ in 0..5 {
            let lines: Vec<(f64, f64)> = (0..4)
                .map(|_| (rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..0.0)))
                .collect();
            let raw: Vec<f64> = g
                .grid()
                .iter()
                .map(|&u| {
                    lines
                        .iter()
                        .map(|(s, o)| s * u + o)
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            let shift = raw
                .iter()
                .zip(g.values())
                .map(|(r, fv)| r - fv)
                .fold(f64::NEG_INFINITY, f64::max)
                .max(0.0);
            for (r, e) in raw.iter().zip(env.values()) {
                worst = worst.max((r - shift) - e - 1e-12);
            }
        }
        // grid-minimum equality and argmin inclusion, exact
        let env_min = env.min_value();
        if env_min != g.min_value() {
            worst = worst.max((env_min - g.min_value()).abs());
        }
        for &i in &g.argmin_indices() {
            if env.values()[i] != env_min {
                worst = worst.max(1.0);
            }
        }
        let _ = trial;
    }
    SuiteReport::new("convex-envelope-lemmas", cases, worst, 0.0)
}

/// Midpoint convexity of parameterized LSE nets in `u` at random triples.
pub fn convexity_suite(cases: usize, seed: RngSeed) -> SuiteReport {
    let mut rng = named_stream(seed, "check-convexity");
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..cases {
        let net = PlseNet::init(2, 2, 6, rng.gen_range(0.3..1.5), &[8], true, &mut rng).unwrap();
        for _ in 0..20 {
            let x = rand_vec(&mut rng, 2, 1.0);
            let u1 = rand_vec(&mut rng, 2, 2.0);
            let u2 = rand_vec(&mut rng, 2, 2.0);
            let mid: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| 0.5 * (a + b)).collect();
            let lhs = net.eval(&x, &mid);
            let rhs = 0.5 * (net.eval(&x, &u1) + net.eval(&x, &u2));
            worst = worst.max(lhs - rhs - 1e-12);
        }
    }
    SuiteReport::new("parameterized-convexity", cases * 20, worst, 0.0)
}
