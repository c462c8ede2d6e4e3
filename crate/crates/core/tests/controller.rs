use atacom::constraints::{ConstraintSet, LinearConstraint};
use atacom::controller::{wrap_env_step, AtacomController, BasisMethod, ControllerParams};
use atacom::envs::{Environment, NavConfig, NavEnv, ReachConfig, ReachEnv};
use atacom::slack::{SlackKind, SlackModel};
use atacom::systems::{AffineSystem, Bounds};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn exact() -> ControllerParams {
    ControllerParams {
        correction_gain: 0.0,
        damping: 0.0,
        ..ControllerParams::default()
    }
}

fn random_alpha(b: &Bounds, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(b.dim(), |i, _| rng.random_range(b.lower()[i]..=b.upper()[i]))
}

fn envs() -> Vec<Box<dyn Environment>> {
    vec![
        Box::new(NavEnv::new(NavConfig::default()).unwrap()),
        Box::new(ReachEnv::new(ReachConfig::default()).unwrap()),
    ]
}

#[test]
fn constraint_rate_vanishes_without_correction() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    for mut env in envs() {
        for kind in SlackKind::ALL {
            let ctrl = AtacomController::for_env(env.as_ref(), SlackModel::new(kind, 1.0).unwrap(), exact()).unwrap();
            let sys = ctrl.system().clone();
            let u = sys.action_dim();
            for _ in 0..100 {
                let s = env.reset(rng.random()).unwrap();
                let alpha = random_alpha(env.alpha_bounds(), &mut rng);
                let (_, d) = ctrl.compute_safe_action(&s.q, &s.x, &s.x_dot, &alpha).unwrap();
                if d.clamped {
                    continue;
                }
                let w = &d.full_velocity;
                let a = w.rows(0, u).into_owned();
                let mu_dot = w.rows(u, w.len() - u).into_owned();
                let eval = ctrl.constraints().evaluate(&s.q, &s.x).unwrap();
                let q_dot = sys.drift(&s.q) + sys.input_matrix(&s.q) * a;
                let rate = &eval.jac_q * q_dot + &eval.jac_x * &s.x_dot + d.slack_derivatives.component_mul(&mu_dot);
                assert!(rate.amax() <= 1e-8, "{} {kind:?}: {}", env.name(), rate.amax());
                checked += 1;
            }
        }
    }
    assert!(checked >= 500, "only {checked} unclamped states");
}

#[test]
fn equality_residual_contracts_at_gain_rate() {
    let sys = AffineSystem::single_integrator(2).unwrap();
    let set = ConstraintSet::new(2, 0).equality(
        "q0 = 0.5",
        LinearConstraint::new(DVector::from_vec(vec![1.0, 0.0]), DVector::zeros(0), -0.5),
    );
    let gain = 5.0;
    let params = ControllerParams {
        correction_gain: gain,
        damping: 0.0,
        ..ControllerParams::default()
    };
    let ctrl = AtacomController::new(sys.clone(), set, params, Bounds::symmetric(&[1.0, 1.0]).unwrap()).unwrap();
    let dt = 0.01;
    let mut q = DVector::from_vec(vec![0.2, 0.0]);
    let empty = DVector::zeros(0);
    let alpha = DVector::from_vec(vec![0.3, -0.4]);
    for _ in 0..200 {
        let c = q[0] - 0.5;
        let (a, d) = ctrl.compute_safe_action(&q, &empty, &empty, &alpha).unwrap();
        assert!(!d.saturated);
        q = sys.step_euler(&q, &a, dt).unwrap();
        let next = q[0] - 0.5;
        assert!((next - c * (1.0 - gain * dt)).abs() <= 1e-12, "{next} vs {}", c * (1.0 - gain * dt));
    }
    assert!((q[0] - 0.5).abs() < 1e-4);
}

#[test]
fn compute_is_deterministic() {
    let mut env = NavEnv::new(NavConfig::default()).unwrap();
    let s = env.reset(3).unwrap();
    let ctrl = AtacomController::for_env(&env, SlackModel::soft_corner(1.0).unwrap(), ControllerParams::default()).unwrap();
    let alpha = DVector::from_vec(vec![0.7, -1.1]);
    let first = ctrl.compute_safe_action(&s.q, &s.x, &s.x_dot, &alpha).unwrap();
    for _ in 0..5 {
        assert_eq!(first, ctrl.compute_safe_action(&s.q, &s.x, &s.x_dot, &alpha).unwrap());
    }
}

#[test]
fn both_bases_span_the_same_tangent_space() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut env = ReachEnv::new(ReachConfig::default()).unwrap();
    let slack = SlackModel::exponential(1.0).unwrap();
    let proj = AtacomController::for_env(&env, slack, exact()).unwrap();
    let qr = AtacomController::for_env(&env, slack, ControllerParams { basis: BasisMethod::Qr, ..exact() }).unwrap();
    for _ in 0..50 {
        let s = env.reset(rng.random()).unwrap();
        let alpha = random_alpha(env.alpha_bounds(), &mut rng);
        let (_, dp) = proj.compute_safe_action(&s.q, &s.x, &s.x_dot, &alpha).unwrap();
        let (_, dq) = qr.compute_safe_action(&s.q, &s.x, &s.x_dot, &alpha).unwrap();
        // QR columns are orthonormal, so its projector must leave the projected columns unchanged.
        let nq = &dq.null_space;
        let reproj = nq * (nq.transpose() * &dp.null_space);
        assert!((reproj - &dp.null_space).amax() <= 1e-8);
        // Same drift compensation from both.
        let u = proj.system().action_dim();
        let zero = DVector::zeros(u);
        let (_, z1) = proj.compute_safe_action(&s.q, &s.x, &s.x_dot, &zero).unwrap();
        let (_, z2) = qr.compute_safe_action(&s.q, &s.x, &s.x_dot, &zero).unwrap();
        assert!((z1.full_velocity - z2.full_velocity).amax() <= 1e-10);
    }
}

#[test]
fn safe_rollouts_keep_margins() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for mut env in envs() {
        let ctrl = AtacomController::for_env(env.as_ref(), SlackModel::soft_corner(1.0).unwrap(), ControllerParams::default()).unwrap();
        for ep in 0..3 {
            env.reset(100 + ep).unwrap();
            let mut steps = 0;
            while !env.is_done() && steps < 500 {
                let alpha = random_alpha(env.alpha_bounds(), &mut rng);
                let (t, _) = wrap_env_step(&ctrl, env.as_mut(), &alpha).unwrap();
                assert!(!t.info.collision, "{} collided at step {steps}", env.name());
                assert!(t.info.min_margin >= -0.01, "{} margin {}", env.name(), t.info.min_margin);
                steps += 1;
            }
        }
    }
}
