//! The invariant suite behind `atacom validate`.
//!
//! Each property runs on randomly drawn inputs from the configured seed and
//! reports the worst observed error against its tolerance. Finite-difference
//! checks compare against central differences and measure the error relative
//! to `max(1, |analytic|)`; samples straddling a kink of a distance field
//! (where one-sided differences disagree) are skipped and counted.

use std::io::Write;

use atacom::controller::{AtacomController, ControllerParams};
use atacom::envs::{Environment, NavConfig, NavEnv, ReachConfig, ReachEnv};
use atacom::geometry::{Point, Pose2, SdfScene, SdfShape};
use atacom::kinematics::PlanarArm;
use atacom::slack::{SlackKind, SlackModel};
use atacom::systems::AffineSystem;
use atacom::tangent::projected_null_space;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub worst: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub note: String,
}

impl CheckReport {
    fn new(name: &'static str, worst: f64, tolerance: f64, samples: usize, min_samples: usize) -> Self {
        let passed = worst <= tolerance && samples >= min_samples;
        let note = if samples < min_samples {
            format!("only {samples} samples (< {min_samples})")
        } else {
            String::new()
        };
        Self {
            name,
            passed,
            worst,
            tolerance,
            samples,
            note,
        }
    }
}

const FD_STEP: f64 = 1e-6;
const FD_TOL: f64 = 1e-4;

fn rel_err(analytic: &DVector<f64>, fd: &DVector<f64>) -> f64 {
    (analytic - fd).amax() / analytic.amax().max(1.0)
}

/// Central difference of `f` at `x`, plus the mismatch between its one-sided differences.
fn central_diff(f: &dyn Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, out_dim: usize) -> (DMatrix<f64>, f64) {
    let mut jac = DMatrix::zeros(out_dim, x.len());
    let mut kink: f64 = 0.0;
    let f0 = f(x);
    for j in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += FD_STEP;
        xm[j] -= FD_STEP;
        let (fp, fm) = (f(&xp), f(&xm));
        let fwd = (&fp - &f0) / FD_STEP;
        let bwd = (&f0 - &fm) / FD_STEP;
        kink = kink.max((fwd - bwd).amax());
        jac.set_column(j, &((fp - fm) / (2.0 * FD_STEP)));
    }
    (jac, kink)
}

fn matrix_rel_err(analytic: &DMatrix<f64>, fd: &DMatrix<f64>) -> f64 {
    (analytic - fd).amax() / analytic.amax().max(1.0)
}

pub fn check_slack_round_trip() -> CheckReport {
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for kind in SlackKind::ALL {
        for beta in [0.5, 1.0, 2.0, 5.0] {
            let model = SlackModel::new(kind, beta).expect("valid beta");
            for i in -6..=1 {
                let c = -(10f64).powi(i);
                let err = match model.inverse(c) {
                    Ok(mu) => (model.value(mu) + c).abs(),
                    Err(_) => f64::INFINITY,
                };
                worst = worst.max(err);
                n += 1;
            }
        }
    }
    CheckReport::new("slack round trip", worst, 1e-9, n, 1)
}

pub fn check_null_space(rng: &mut ChaCha8Rng) -> CheckReport {
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for _ in 0..1000 {
        let k = rng.random_range(1..=6);
        let u = rng.random_range(1..=6);
        let j = DMatrix::from_fn(k, u + k, |_, _| rng.random_range(-1.0..1.0));
        match projected_null_space(&j, 0.0) {
            Ok(basis) => {
                worst = worst.max((&j * basis).amax());
                n += 1;
            }
            Err(_) => continue,
        }
    }
    CheckReport::new("null-space annihilation", worst, 1e-8, n, 990)
}

fn random_shape(rng: &mut ChaCha8Rng) -> SdfShape {
    let mut r = |lo: f64, hi: f64| rng.random_range(lo..hi);
    match (r(0.0, 4.0)) as usize {
        0 => SdfShape::circle([r(-2.0, 2.0), r(-2.0, 2.0)], r(0.1, 1.0)),
        1 => SdfShape::rect([r(-2.0, 2.0), r(-2.0, 2.0)], [r(0.1, 1.0), r(0.1, 1.0)], r(-3.0, 3.0)),
        2 => SdfShape::capsule([r(-2.0, 2.0), r(-2.0, 2.0)], [r(-2.0, 2.0), r(-2.0, 2.0)], r(0.1, 0.5)),
        _ => {
            let a: f64 = r(-3.0, 3.0);
            SdfShape::half_plane([a.cos(), a.sin()], r(-2.0, 2.0))
        }
    }
    .expect("valid random shape")
}

pub fn check_sdf_gradients(rng: &mut ChaCha8Rng) -> CheckReport {
    let (mut worst, mut n, mut skipped): (f64, usize, usize) = (0.0, 0, 0);
    while n < 500 && n + skipped < 5000 {
        let shapes = (0..rng.random_range(1..=3)).map(|_| random_shape(rng)).collect();
        let pose = Pose2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-3.0..3.0));
        let scene = SdfScene::new(shapes).expect("non-empty").with_pose(pose);
        let p = DVector::from_vec(vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]);
        let f = |x: &DVector<f64>| DVector::from_element(1, scene.query(&Point::new(x[0], x[1])).distance);
        let (fd, kink) = central_diff(&f, &p, 1);
        if kink > 1e-3 {
            skipped += 1;
            continue;
        }
        let g = scene.query(&Point::new(p[0], p[1])).gradient;
        worst = worst.max(rel_err(&DVector::from_vec(vec![g.x, g.y]), &fd.row(0).transpose()));
        n += 1;
    }
    let mut r = CheckReport::new("SDF gradients", worst, FD_TOL, n, 500);
    r.note = format!("{skipped} kink samples skipped {}", r.note).trim().to_string();
    r
}

pub fn check_fk_jacobians(rng: &mut ChaCha8Rng) -> CheckReport {
    let (mut worst, mut n): (f64, usize) = (0.0, 0);
    for _ in 0..500 {
        let links = rng.random_range(1..=5);
        let lengths: Vec<f64> = (0..links).map(|_| rng.random_range(0.2..1.5)).collect();
        let base = Pose2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-3.0..3.0));
        let arm = PlanarArm::with_default_pois(lengths, base, 0.1).expect("valid arm");
        let q = DVector::from_fn(links, |_, _| rng.random_range(-3.0..3.0));
        let poi = rng.random_range(0..arm.pois().len());
        let f = |x: &DVector<f64>| {
            let p = arm.fk_poi(x, poi).expect("dims");
            DVector::from_vec(vec![p.x, p.y])
        };
        let (fd, _) = central_diff(&f, &q, 2);
        worst = worst.max(matrix_rel_err(&arm.fk_jacobian(&q, poi).expect("dims"), &fd));
        n += 1;
    }
    CheckReport::new("FK Jacobians", worst, FD_TOL, n, 500)
}

fn both_envs() -> Vec<Box<dyn Environment>> {
    vec![
        Box::new(NavEnv::new(NavConfig::default()).expect("default nav")),
        Box::new(ReachEnv::new(ReachConfig::default()).expect("default reach")),
    ]
}

fn envs_for(cfg: &RunConfig) -> Result<Vec<Box<dyn Environment>>, CliError> {
    let mut envs = both_envs();
    envs.push(cfg.build_env()?);
    Ok(envs)
}

pub fn check_constraint_jacobians(envs: &mut [Box<dyn Environment>], rng: &mut ChaCha8Rng) -> CheckReport {
    let (mut worst, mut n, mut skipped): (f64, usize, usize) = (0.0, 0, 0);
    for env in envs.iter_mut() {
        let mut done = 0;
        while done < 500 && skipped < 10_000 {
            let s = env.reset(rng.random()).expect("reset");
            let set = env.constraints();
            let k = set.len();
            let eval = set.evaluate(&s.q, &s.x).expect("dims");
            let fq = |q: &DVector<f64>| set.evaluate(q, &s.x).expect("dims").values;
            let fx = |x: &DVector<f64>| set.evaluate(&s.q, x).expect("dims").values;
            let (jq, kq) = central_diff(&fq, &s.q, k);
            let (jx, kx) = central_diff(&fx, &s.x, k);
            if kq.max(kx) > 1e-3 {
                skipped += 1;
                continue;
            }
            worst = worst.max(matrix_rel_err(&eval.jac_q, &jq)).max(matrix_rel_err(&eval.jac_x, &jx));
            done += 1;
            n += 1;
        }
    }
    CheckReport::new("constraint Jacobians", worst, FD_TOL, n, 500 * envs.len())
}

pub fn check_non_holonomy(rng: &mut ChaCha8Rng) -> CheckReport {
    let sys = AffineSystem::differential_drive();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let q = DVector::from_vec(vec![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-3.2..3.2)]);
        let a = DVector::from_vec(vec![rng.random_range(-3.0..3.0), rng.random_range(-6.0..6.0)]);
        let v = sys.velocity(&q, &a).expect("dims");
        worst = worst.max((v[0] * q[2].sin() - v[1] * q[2].cos()).abs());
    }
    CheckReport::new("non-holonomy", worst, 1e-12, 1000, 1000)
}

/// Analytic `d c_bar / dt` of the unsaturated controller output, with `K_c = 0` and no damping.
pub fn constraint_rate(ctrl: &AtacomController, q: &DVector<f64>, x: &DVector<f64>, x_dot: &DVector<f64>, alpha: &DVector<f64>) -> atacom::Result<Option<f64>> {
    let (_, diag) = ctrl.compute_safe_action(q, x, x_dot, alpha)?;
    if diag.clamped {
        return Ok(None);
    }
    let sys = ctrl.system();
    let u = sys.action_dim();
    let w = &diag.full_velocity;
    let a = w.rows(0, u).into_owned();
    let mu_dot = w.rows(u, w.len() - u).into_owned();
    let eval = ctrl.constraints().evaluate(q, x)?;
    let q_dot = sys.drift(q) + sys.input_matrix(q) * a;
    let rate = &eval.jac_q * q_dot + &eval.jac_x * x_dot + diag.slack_derivatives.component_mul(&mu_dot);
    Ok(Some(rate.amax()))
}

pub fn check_zero_constraint_velocity(envs: &mut [Box<dyn Environment>], rng: &mut ChaCha8Rng) -> CheckReport {
    let params = ControllerParams {
        correction_gain: 0.0,
        damping: 0.0,
        ..ControllerParams::default()
    };
    let (mut worst, mut n): (f64, usize) = (0.0, 0);
    let mut failures = 0;
    for env in envs.iter_mut() {
        for kind in SlackKind::ALL {
            let ctrl = AtacomController::for_env(env.as_ref(), SlackModel::new(kind, 1.0).expect("beta"), params).expect("dims");
            for _ in 0..1000 / SlackKind::ALL.len() + 1 {
                let s = env.reset(rng.random()).expect("reset");
                let b = env.alpha_bounds();
                let alpha = DVector::from_fn(b.dim(), |i, _| rng.random_range(b.lower()[i]..=b.upper()[i]));
                match constraint_rate(&ctrl, &s.q, &s.x, &s.x_dot, &alpha) {
                    Ok(Some(r)) => {
                        worst = worst.max(r);
                        n += 1;
                    }
                    Ok(None) => {}
                    Err(_) => failures += 1,
                }
            }
        }
    }
    let mut r = CheckReport::new("zero constraint velocity", worst, 1e-8, n, 1000);
    if failures > 0 {
        r.passed = false;
        r.note = format!("{failures} controller errors");
    }
    r
}

pub fn run_suite(cfg: &RunConfig) -> Result<Vec<CheckReport>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.experiment.seed);
    let mut envs = envs_for(cfg)?;
    Ok(vec![
        check_slack_round_trip(),
        check_null_space(&mut rng),
        check_sdf_gradients(&mut rng),
        check_fk_jacobians(&mut rng),
        check_constraint_jacobians(&mut envs, &mut rng),
        check_non_holonomy(&mut rng),
        check_zero_constraint_velocity(&mut envs, &mut rng),
    ])
}

pub fn cmd_validate(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let reports = run_suite(cfg)?;
    for r in &reports {
        writeln!(
            out,
            "{} {:<26} worst {:.3e} (tol {:.0e}, n = {}) {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.worst,
            r.tolerance,
            r.samples,
            r.note
        )?;
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        writeln!(out, "all {} properties hold", reports.len())?;
        Ok(())
    } else {
        Err(CliError::Validation(failed.join(", ")))
    }
}
