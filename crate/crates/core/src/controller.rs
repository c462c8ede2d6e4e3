//! The safe-action transformation.
//!
//! Given a policy action `alpha`, the controller returns a system action `a`
//! such that, to first order, no constraint moves toward violation:
//!
//! ```text
//! [a; mu_dot] = N alpha - J^+ (F + K_c c_bar)
//! J = [J_q G(q), J_mu],  F = J_q f(q) + J_x x_dot,  c_bar = c + s(mu)
//! ```
//!
//! The slack `mu` is recomputed from the measured constraint each call, so the
//! controller holds no trajectory state. Constraints at or past `-margin` are
//! clamped before inversion and the leftover residual `c_bar` drives the
//! correction term.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use crate::constraints::{
    Constraint, ConstraintEval, ConstraintFn, ConstraintKind, ConstraintSet, LinearConstraint, PointMap,
    PoseSource, SdfConstraint, SetEval,
};
use crate::envs::{Environment, Transition};
use crate::error::{check_dim, Error, Result};
use crate::systems::{AffineSystem, Bounds};
use crate::tangent::{qr_null_space, GramSolver};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisMethod {
    /// Action bases projected onto the tangent space.
    Projected,
    /// Orthonormal Householder kernel basis (baseline).
    Qr,
}

impl std::str::FromStr for BasisMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "projected" => Ok(BasisMethod::Projected),
            "qr" => Ok(BasisMethod::Qr),
            other => Err(Error::Parse(format!("unknown basis method '{other}'"))),
        }
    }
}

impl std::fmt::Display for BasisMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BasisMethod::Projected => "projected",
            BasisMethod::Qr => "qr",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    /// `K_c`.
    pub correction_gain: f64,
    /// Tikhonov damping on `J J^T`.
    pub damping: f64,
    /// Inequalities are clamped to `c <= -margin` before the slack inverse.
    pub margin: f64,
    pub basis: BasisMethod,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            correction_gain: 10.0,
            damping: 1e-6,
            margin: 1e-4,
            basis: BasisMethod::Projected,
        }
    }
}

impl ControllerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.correction_gain >= 0.0 && self.correction_gain.is_finite()) {
            return Err(Error::InvalidParameter("correction gain must be >= 0".into()));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(Error::InvalidParameter("damping must be >= 0".into()));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::InvalidParameter("margin must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-call internals of [`AtacomController::compute_safe_action`].
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// Measured `c(q, x)`.
    pub constraint_values: DVector<f64>,
    /// Recomputed slack, zero for equalities.
    pub slack: DVector<f64>,
    /// Diagonal of `J_mu`.
    pub slack_derivatives: DVector<f64>,
    /// `c + s(mu)`.
    pub residual: DVector<f64>,
    /// Whether any inequality had to be clamped at `-margin`.
    pub clamped: bool,
    /// Tangent basis actually used, `(u + k) x u`.
    pub null_space: DMatrix<f64>,
    /// `[a; mu_dot]` before saturation.
    pub full_velocity: DVector<f64>,
    /// The policy action after clipping to the alpha bounds.
    pub alpha: DVector<f64>,
    pub saturated: bool,
    /// `cond(J J^T)`; 1 when there are no constraints.
    pub condition: f64,
}

#[derive(Debug, Clone)]
pub struct AtacomController {
    system: AffineSystem,
    constraints: ConstraintSet,
    params: ControllerParams,
    alpha_bounds: Bounds,
}

impl AtacomController {
    pub fn new(
        system: AffineSystem,
        constraints: ConstraintSet,
        params: ControllerParams,
        alpha_bounds: Bounds,
    ) -> Result<Self> {
        params.validate()?;
        check_dim("constraint state", system.state_dim(), constraints.state_dim())?;
        check_dim("alpha bounds", system.action_dim(), alpha_bounds.dim())?;
        Ok(Self {
            system,
            constraints,
            params,
            alpha_bounds,
        })
    }

    /// Controller for an environment's system and constraints, all inequalities using `slack`.
    pub fn for_env(env: &dyn Environment, slack: crate::slack::SlackModel, params: ControllerParams) -> Result<Self> {
        Self::new(
            env.system().clone(),
            env.constraints().with_slack(slack),
            params,
            env.alpha_bounds().clone(),
        )
    }

    pub fn system(&self) -> &AffineSystem {
        &self.system
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn params(&self) -> &ControllerParams {
        &self.params
    }

    pub fn alpha_bounds(&self) -> &Bounds {
        &self.alpha_bounds
    }

    pub fn compute_safe_action(
        &self,
        q: &DVector<f64>,
        x: &DVector<f64>,
        x_dot: &DVector<f64>,
        alpha: &DVector<f64>,
    ) -> Result<(DVector<f64>, Diagnostics)> {
        let n = self.system.state_dim();
        let u = self.system.action_dim();
        let m = self.constraints.env_dim();
        check_dim("q", n, q.len())?;
        check_dim("x", m, x.len())?;
        check_dim("x_dot", m, x_dot.len())?;
        check_dim("alpha", u, alpha.len())?;
        if alpha.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("policy action is not finite".into()));
        }
        let (alpha, _) = self.alpha_bounds.clip(alpha);

        let k = self.constraints.len();
        if k == 0 {
            let (a, saturated) = self.system.action_bounds().clip(&alpha);
            let diag = Diagnostics {
                constraint_values: DVector::zeros(0),
                slack: DVector::zeros(0),
                slack_derivatives: DVector::zeros(0),
                residual: DVector::zeros(0),
                clamped: false,
                null_space: DMatrix::identity(u, u),
                full_velocity: alpha.clone(),
                alpha,
                saturated,
                condition: 1.0,
            };
            return Ok((a, diag));
        }

        let eval = self.constraints.evaluate(q, x)?;
        let mut slack = DVector::zeros(k);
        let mut slack_derivatives = DVector::zeros(k);
        let mut residual = DVector::zeros(k);
        let mut clamped = false;
        for (i, item) in self.constraints.items().iter().enumerate() {
            let c = eval.values[i];
            match item.kind {
                ConstraintKind::Inequality(model) => {
                    let limit = -self.params.margin;
                    let c_eff = if c >= limit {
                        clamped = true;
                        limit
                    } else {
                        c
                    };
                    let mu = model.inverse(c_eff)?;
                    slack[i] = mu;
                    slack_derivatives[i] = model.derivative(mu);
                    residual[i] = c + model.value(mu);
                }
                ConstraintKind::Equality => residual[i] = c,
            }
        }

        let drift = &eval.jac_q * self.system.drift(q) + &eval.jac_x * x_dot;
        let jac_g = &eval.jac_q * self.system.input_matrix(q);
        let mut jac = DMatrix::zeros(k, u + k);
        jac.columns_mut(0, u).copy_from(&jac_g);
        jac.view_mut((0, u), (k, k)).set_diagonal(&slack_derivatives);

        let solver = GramSolver::new(&jac, self.params.damping)?;
        let null_space = match self.params.basis {
            BasisMethod::Projected => solver.projected_basis(u),
            BasisMethod::Qr => qr_null_space(&jac)?,
        };
        let rhs = drift + &residual * self.params.correction_gain;
        let full_velocity = &null_space * &alpha - solver.pinv_apply(&rhs)?;
        let raw = full_velocity.rows(0, u).into_owned();
        let (a, saturated) = self.system.action_bounds().clip(&raw);

        let diag = Diagnostics {
            constraint_values: eval.values,
            slack,
            slack_derivatives,
            residual,
            clamped,
            null_space,
            full_velocity,
            alpha,
            saturated,
            condition: solver.condition(),
        };
        Ok((a, diag))
    }
}

/// Computes the safe action for the environment's current state and advances it.
///
/// `x_dot` is the environment's ground-truth velocity of the uncontrollable state.
pub fn wrap_env_step(
    ctrl: &AtacomController,
    env: &mut dyn Environment,
    alpha: &DVector<f64>,
) -> Result<(Transition, Diagnostics)> {
    let state = env.state().clone();
    let (a, diag) = ctrl.compute_safe_action(&state.q, &state.x, &state.x_dot, alpha)?;
    let transition = env.step(&a)?;
    Ok((transition, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slack::SlackModel;
    use approx::assert_relative_eq;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn probe(slack: SlackModel, params: ControllerParams) -> AtacomController {
        let sys = AffineSystem::single_integrator(1).unwrap();
        let set = ConstraintSet::new(1, 0).inequality("q<=0", slack, LinearConstraint::upper_limit(1, 0, 0, 0.0));
        AtacomController::new(sys, set, params, Bounds::symmetric(&[1.0]).unwrap()).unwrap()
    }

    fn exact() -> ControllerParams {
        ControllerParams {
            correction_gain: 0.0,
            damping: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn no_constraints_is_identity() {
        let sys = AffineSystem::differential_drive();
        let ctrl = AtacomController::new(
            sys,
            ConstraintSet::new(3, 0),
            ControllerParams::default(),
            Bounds::symmetric(&[1.0, 2.0]).unwrap(),
        )
        .unwrap();
        let alpha = dv(&[0.3, -1.7]);
        let (a, _) = ctrl
            .compute_safe_action(&dv(&[0.0, 0.0, 0.5]), &DVector::zeros(0), &DVector::zeros(0), &alpha)
            .unwrap();
        assert_eq!(a, alpha);
    }

    #[test]
    fn one_dimensional_probe() {
        let ctrl = probe(SlackModel::exponential(1.0).unwrap(), exact());
        let (a, d) = ctrl
            .compute_safe_action(&dv(&[-0.5]), &DVector::zeros(0), &DVector::zeros(0), &dv(&[1.0]))
            .unwrap();
        assert_relative_eq!(a[0], 0.2, epsilon = 1e-14);
        assert_relative_eq!(d.full_velocity[1], -0.4, epsilon = 1e-14);
        assert_relative_eq!(d.slack[0], 0.5f64.ln(), epsilon = 1e-15);
        let rate = a[0] + d.slack_derivatives[0] * d.full_velocity[1];
        assert!(rate.abs() < 1e-15);
        assert!(!d.clamped);
    }

    #[test]
    fn gain_vanishes_at_the_boundary() {
        let ctrl = probe(SlackModel::exponential(1.0).unwrap(), exact());
        let (a, _) = ctrl
            .compute_safe_action(&dv(&[-1e-6]), &DVector::zeros(0), &DVector::zeros(0), &dv(&[1.0]))
            .unwrap();
        // clamped at -margin = -1e-4, still tiny
        assert!(a[0].abs() <= 1e-5);
    }

    #[test]
    fn violated_state_is_pushed_back() {
        let ctrl = probe(SlackModel::soft_corner(1.0).unwrap(), ControllerParams::default());
        let (a, d) = ctrl
            .compute_safe_action(&dv(&[0.05]), &DVector::zeros(0), &DVector::zeros(0), &dv(&[0.0]))
            .unwrap();
        assert!(d.clamped);
        assert!(d.residual[0] > 0.0);
        assert!(a[0] < 0.0);
    }

    #[test]
    fn dimension_errors() {
        let ctrl = probe(SlackModel::soft_corner(1.0).unwrap(), exact());
        let err = ctrl
            .compute_safe_action(&dv(&[-0.5, 0.0]), &DVector::zeros(0), &DVector::zeros(0), &dv(&[1.0]))
            .unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
        let err = ctrl
            .compute_safe_action(&dv(&[-0.5]), &DVector::zeros(0), &DVector::zeros(0), &dv(&[f64::NAN]))
            .unwrap_err();
        assert!(matches!(err, Error::InvalidParameter(_)));
    }

    #[test]
    fn alpha_is_clipped_before_use() {
        let ctrl = probe(SlackModel::exponential(1.0).unwrap(), exact());
        let (a, d) = ctrl
            .compute_safe_action(&dv(&[-0.5]), &DVector::zeros(0), &DVector::zeros(0), &dv(&[5.0]))
            .unwrap();
        assert_eq!(d.alpha[0], 1.0);
        assert_relative_eq!(a[0], 0.2, epsilon = 1e-14);
    }

    #[test]
    fn saturation_is_flagged() {
        let sys = AffineSystem::single_integrator(1)
            .unwrap()
            .with_action_bounds(Bounds::symmetric(&[0.1]).unwrap())
            .unwrap();
        let set = ConstraintSet::new(1, 0).inequality(
            "q<=0",
            SlackModel::soft_corner(1.0).unwrap(),
            LinearConstraint::upper_limit(1, 0, 0, 0.0),
        );
        let ctrl =
            AtacomController::new(sys, set, ControllerParams::default(), Bounds::symmetric(&[1.0]).unwrap()).unwrap();
        let (a, d) = ctrl
            .compute_safe_action(&dv(&[-5.0]), &DVector::zeros(0), &DVector::zeros(0), &dv(&[1.0]))
            .unwrap();
        assert!(d.saturated);
        assert_eq!(a[0], 0.1);
    }

    #[test]
    fn qr_basis_is_available() {
        let params = ControllerParams {
            basis: BasisMethod::Qr,
            ..exact()
        };
        let ctrl = probe(SlackModel::exponential(1.0).unwrap(), params);
        let (_, d) = ctrl
            .compute_safe_action(&dv(&[-0.5]), &DVector::zeros(0), &DVector::zeros(0), &dv(&[1.0]))
            .unwrap();
        assert_relative_eq!(d.null_space.norm(), 1.0, epsilon = 1e-12);
    }
}
