//! Property tests over randomly generated instances.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tdlab_core::generators::{self, random_instance};
use tdlab_core::linalg::{self, d_norm, least_norm_weight, pseudo_inverse};
use tdlab_core::{fixed_points, ode, sa_checks, td, Instance};

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn instance(seed: u64) -> Instance {
    random_instance(seed).expect("generated instances are valid")
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    linalg::svd(m).sigma_max()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn penrose_identities(m in 1usize..9, n in 1usize..9, r in 0usize..9, seed in any::<u64>()) {
        let r = r.min(m.min(n));
        let a = if r == 0 { DMatrix::zeros(m, n) } else { generators::random_rank(m, r, n, seed) };
        let p = pseudo_inverse(&a);
        let na = spectral_norm(&a).max(1.0);
        let np = spectral_norm(&p).max(1.0);
        prop_assert!((&a * &p * &a - &a).amax() <= 1e-10 * na);
        prop_assert!((&p * &a * &p - &p).amax() <= 1e-10 * np);
        let ap = &a * &p;
        let pa = &p * &a;
        prop_assert!((&ap - ap.transpose()).amax() <= 1e-10);
        prop_assert!((&pa - pa.transpose()).amax() <= 1e-10);
        // rounding in the projector grows with cond(A) = |A| |A^+|
        let kappa = na * np;
        prop_assert!(spectral_norm(&ap) <= 1.0 + 1e-12 + 1e-14 * kappa);
        prop_assert_eq!(linalg::numerical_rank(&a), r);
    }

    #[test]
    fn chain_invariants(seed in any::<u64>()) {
        let inst = instance(seed);
        let chain = &inst.chain;
        let mu = chain.stationary();
        prop_assert!((chain.transition().transpose() * mu - mu).amax() <= 1e-10);
        prop_assert!((mu.sum() - 1.0).abs() <= 1e-12);
        prop_assert!(mu.min() > 0.0);

        // lazy power iteration shares μ and is aperiodic
        let n = chain.n_states();
        let lazy = (chain.transition() + DMatrix::identity(n, n)) * 0.5;
        let mut power = DVector::from_element(n, 1.0 / n as f64);
        for _ in 0..50_000 {
            power = lazy.transpose() * power;
        }
        prop_assert!((power - mu).amax() <= 1e-9);

        let v = chain.true_value().unwrap();
        prop_assert!((chain.bellman_apply(&v).unwrap() - &v).amax() <= 1e-10 * (1.0 + v.amax()));

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gamma = chain.gamma();
        let m = chain.d_matrix() * (chain.transition() * gamma - DMatrix::identity(n, n));
        for _ in 0..1000 {
            let x = gaussian_vec(&mut rng, n);
            prop_assert!(x.dot(&(&m * &x)) < 0.0);
        }
        for _ in 0..50 {
            let u = gaussian_vec(&mut rng, n);
            let w = gaussian_vec(&mut rng, n);
            let lhs = d_norm(&(chain.bellman_apply(&u).unwrap() - chain.bellman_apply(&w).unwrap()), mu);
            prop_assert!(lhs <= gamma * d_norm(&(&u - &w), mu) + 1e-12);
        }
    }

    #[test]
    fn projector_properties(seed in any::<u64>()) {
        let inst = instance(seed);
        let pi = inst.projector.matrix();
        let mu = inst.chain.stationary();
        let gamma = inst.gamma();
        prop_assert!((pi * pi - pi).amax() <= 1e-10);
        // range(Π) ⊆ col(X): Π = X · something, so (I - X X^†) Π = 0
        let x = inst.features.matrix();
        let onto_cols = x * pseudo_inverse(x);
        prop_assert!((&onto_cols * pi - pi).amax() <= 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = inst.chain.n_states();
        for _ in 0..50 {
            let u = gaussian_vec(&mut rng, n);
            let v = gaussian_vec(&mut rng, n);
            prop_assert!(d_norm(&inst.projector.apply(&v), mu) <= d_norm(&v, mu) + 1e-12);
            let tu = inst.projector.apply(&inst.chain.bellman_apply(&u).unwrap());
            let tv = inst.projector.apply(&inst.chain.bellman_apply(&v).unwrap());
            prop_assert!(d_norm(&(tu - tv), mu) <= gamma * d_norm(&(&u - &v), mu) + 1e-12);
        }
    }

    #[test]
    fn least_norm_is_minimal(seed in any::<u64>()) {
        let inst = instance(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = gaussian_vec(&mut rng, inst.chain.n_states());
        let w = least_norm_weight(&inst.features, inst.chain.stationary(), &v);
        let kernel = linalg::null_space(inst.features.matrix());
        // same residual, strictly larger norm, for any kernel shift
        for _ in 0..20 {
            if kernel.ncols() == 0 {
                break;
            }
            let z = &kernel * gaussian_vec(&mut rng, kernel.ncols());
            let shifted = &w + &z;
            prop_assert!(shifted.norm() > w.norm());
        }
        // normal equations hold: X^T D (Xw - v) = 0
        let x = inst.features.matrix();
        let grad = x.transpose() * inst.chain.d_matrix() * (x * &w - &v);
        prop_assert!(grad.amax() <= 1e-10 * (1.0 + v.amax()));
    }

    #[test]
    fn fixed_point_set_invariants(seed in any::<u64>()) {
        let inst = instance(seed);
        let fps = &inst.fixed_points;
        let sys = &inst.system;
        let scale = 1.0 + fps.w_particular.norm();
        prop_assert!(sys.mean_field(&fps.w_particular).norm() <= 1e-10 * scale);
        prop_assert!((&sys.a * &fps.null_basis).amax() <= 1e-10);
        prop_assert!((inst.features.matrix() * &fps.null_basis).amax() <= 1e-10);

        let v_iter = fixed_points::projected_bellman_fixed_point(&inst.chain, &inst.projector).unwrap();
        prop_assert!((&v_iter - &fps.v_star).amax() <= 1e-9 * (1.0 + fps.v_star.amax()));

        // A is negative semi-definite
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..100 {
            let x = gaussian_vec(&mut rng, inst.dim());
            prop_assert!(x.dot(&(&sys.a * &x)) <= 1e-12);
        }
        for _ in 0..20 {
            let c = gaussian_vec(&mut rng, fps.null_dim()) * 5.0;
            let w = fps.point(&c);
            prop_assert!((inst.features.value(&w) - &fps.v_star).amax() <= 1e-10 * (1.0 + c.norm()));
            prop_assert!(inst.mspbe(&w) <= 1e-10);
            prop_assert!(fps.distance(&w) <= 1e-10 * (1.0 + c.norm()));
        }
    }

    #[test]
    fn ode_limit_invariants(seed in any::<u64>()) {
        let inst = instance(seed);
        let sys = &inst.system;
        let lim = ode::limit_projector(sys).unwrap();
        let a_inf = &lim.a_inf;
        prop_assert!((a_inf * a_inf - a_inf).amax() <= 1e-9);
        prop_assert!((&sys.a * a_inf).amax() <= 1e-9);
        prop_assert!((a_inf * &sys.a).amax() <= 1e-9);
        prop_assert!((inst.features.matrix() * a_inf).amax() <= 1e-9);
        for z in ode::eigenvalues(&sys.a) {
            prop_assert!(z.re <= 1e-10);
            if z.re.abs() <= 1e-10 {
                prop_assert!(z.im.abs() <= 1e-8);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w0 = gaussian_vec(&mut rng, inst.dim());
        let w_inf = ode::w_infinity(&lim, &inst.fixed_points, &w0);
        prop_assert!(sys.mean_field(&w_inf).norm() <= 1e-8);
    }

    #[test]
    fn lyapunov_distance_is_monotone(seed in any::<u64>()) {
        let inst = instance(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w0 = gaussian_vec(&mut rng, inst.dim()) * 3.0;
        let traj = ode::rk4_trajectory(&inst.system, &w0, 1e-2, 5.0).unwrap();
        let fps = &inst.fixed_points;
        for _ in 0..5 {
            let w_star = fps.point(&gaussian_vec(&mut rng, fps.null_dim()));
            let dists: Vec<f64> = traj.states.iter().map(|w| (w - &w_star).norm()).collect();
            for pair in dists.windows(2) {
                prop_assert!(pair[1] <= pair[0] + 1e-10);
            }
        }
    }

    #[test]
    fn stochastic_approximation_identities(seed in any::<u64>()) {
        let inst = instance(seed);
        let pair = sa_checks::build_pair_chain(&inst.mdp, &inst.policy, &inst.chain).unwrap();
        for (&(s, a, s2), &eta) in pair.states.iter().zip(pair.eta.iter()) {
            let want = inst.chain.stationary()[s] * inst.policy.prob(s, a) * inst.mdp.prob(s, a, s2);
            prop_assert!((eta - want).abs() <= 1e-10);
        }
        prop_assert!((pair.transition.transpose() * &pair.eta - &pair.eta).amax() <= 1e-10);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = gaussian_vec(&mut rng, inst.dim());
        let residual = sa_checks::poisson_residual(&w, &pair, &inst.mdp, &inst.features, &inst.system).unwrap();
        prop_assert!(residual <= 1e-9, "poisson residual {residual:e}");

        let enumerated = sa_checks::mean_field_by_enumeration(&w, 0.3, &pair, &inst.mdp, &inst.features);
        prop_assert!((enumerated - inst.system.mean_field(&w) * 0.3).amax() <= 1e-12);

        let mu = inst.chain.stationary();
        let g = sa_checks::gamma_projection(&w, &inst.features, mu);
        let gg = sa_checks::gamma_projection(&g, &inst.features, mu);
        prop_assert!((gg - &g).amax() <= 1e-10);

        // energy: U(w) ≥ ½‖w‖² and ⟨∇U(w), Aw + b⟩ ≤ 0
        let w_star = &inst.fixed_points.w_particular;
        prop_assert!(td::energy(&w, w_star) >= 0.5 * w.norm_squared() - 1e-12);
        let descent = ((&w - w_star) * 2.0).dot(&inst.system.mean_field(&w));
        prop_assert!(descent <= 1e-12);

        prop_assert!(sa_checks::check_assumptions(&inst.mdp, &inst.policy, &inst.features, &Default::default()).all_pass());
    }
}

#[test]
fn td_runs_are_deterministic_per_seed() {
    let inst = instance(2);
    let mut cfg = td::TdConfig::new(Default::default(), 5_000, 42, inst.dim());
    cfg.checkpoint_every = 100;
    let a = td::run_td(&inst, &cfg).unwrap();
    let b = td::run_td(&inst, &cfg).unwrap();
    assert_eq!(a, b);
    cfg.seed = 43;
    let c = td::run_td(&inst, &cfg).unwrap();
    assert_ne!(a.final_w, c.final_w);
    // checkpoints strictly increasing and recomputable
    assert!(a.checkpoints.windows(2).all(|p| p[0].step < p[1].step));
    let diag = td::Diagnostics::new(&inst);
    for cp in &a.checkpoints {
        assert_eq!(&diag.checkpoint(cp.step, &cp.w), cp);
    }

    cfg.seed = 42;
    cfg.record_distance = true;
    let dense = td::run_td(&inst, &cfg).unwrap();
    assert_eq!(dense.checkpoints, a.checkpoints);
    assert_eq!(dense.distance_series.len(), 5_001);
    for cp in &a.checkpoints {
        assert!((dense.distance_series[cp.step] - cp.dist_to_fixed_set).abs() <= 1e-12);
    }
}

#[test]
fn zero_reward_run_stays_at_zero() {
    let mdp = generators::random_mdp(4, 2, 5, 0.9).unwrap().with_reward_scale(0.0);
    let policy = generators::random_policy(4, 2, 6).unwrap();
    let features = linalg::FeatureMap::new(generators::random_rank(4, 2, 6, 7));
    let inst = Instance::new(mdp, policy, features).unwrap();
    let trace = td::run_td(&inst, &td::TdConfig::new(Default::default(), 10_000, 1, 6)).unwrap();
    assert_eq!(trace.max_norm, 0.0);
    assert!(trace.checkpoints.iter().all(|c| c.value_error == 0.0 && c.mspbe == 0.0));
}

#[test]
fn tabular_run_started_at_true_value_stays_put() {
    let mdp = generators::cycle(2, 0.9).unwrap();
    let features = linalg::FeatureMap::new(generators::tabular(2));
    let inst = Instance::new(mdp, tdlab_core::Policy::uniform(2, 1), features).unwrap();
    let v = inst.chain.true_value().unwrap();
    let mut cfg = td::TdConfig::new(Default::default(), 10_000, 9, 2);
    cfg.w_init = v.clone();
    let trace = td::run_td(&inst, &cfg).unwrap();
    assert!((trace.final_w - &v).amax() <= 1e-12);
    assert!(trace.checkpoints.iter().all(|c| (&c.w - &v).amax() <= 1e-12));
}

#[test]
fn assumption_violations_stop_td() {
    let inst = instance(1);
    let cfg = td::TdConfig::new(td::LearningRateSchedule::power(1.0, 0.4), 10, 0, inst.dim());
    assert!(matches!(
        td::run_td(&inst, &cfg),
        Err(tdlab_core::Error::AssumptionViolation(_))
    ));
}
