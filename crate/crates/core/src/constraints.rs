//! Scalar constraints `c(q, x)` with their Jacobians.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Result};
use crate::geometry::{Point, Pose2, SdfScene};
use crate::kinematics::PlanarArm;
use crate::slack::SlackModel;

/// Value and Jacobian rows of one constraint at `(q, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintEval {
    pub value: f64,
    pub jac_q: DVector<f64>,
    pub jac_x: DVector<f64>,
}

/// A differentiable scalar constraint. Feasible means `value <= 0` for
/// inequalities and `value == 0` for equalities.
pub trait ConstraintFn: Send + Sync + fmt::Debug {
    fn evaluate(&self, q: &DVector<f64>, x: &DVector<f64>) -> ConstraintEval;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstraintKind {
    Inequality(SlackModel),
    Equality,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub name: String,
    pub kind: ConstraintKind,
    pub func: Arc<dyn ConstraintFn>,
}

/// An ordered list of constraints over a controllable state of dimension `n`
/// and an uncontrollable state of dimension `m`.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    n: usize,
    m: usize,
    items: Vec<Constraint>,
}

/// Stacked evaluation of a whole set.
#[derive(Debug, Clone, PartialEq)]
pub struct SetEval {
    pub values: DVector<f64>,
    pub jac_q: DMatrix<f64>,
    pub jac_x: DMatrix<f64>,
}

impl ConstraintSet {
    pub fn new(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            items: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, kind: ConstraintKind, func: Arc<dyn ConstraintFn>) {
        self.items.push(Constraint {
            name: name.into(),
            kind,
            func,
        });
    }

    pub fn inequality(mut self, name: impl Into<String>, slack: SlackModel, func: impl ConstraintFn + 'static) -> Self {
        self.push(name, ConstraintKind::Inequality(slack), Arc::new(func));
        self
    }

    pub fn equality(mut self, name: impl Into<String>, func: impl ConstraintFn + 'static) -> Self {
        self.push(name, ConstraintKind::Equality, Arc::new(func));
        self
    }

    /// Same constraints with every inequality switched to `slack`.
    pub fn with_slack(&self, slack: SlackModel) -> Self {
        let mut out = self.clone();
        for c in &mut out.items {
            if let ConstraintKind::Inequality(_) = c.kind {
                c.kind = ConstraintKind::Inequality(slack);
            }
        }
        out
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn env_dim(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Constraint] {
        &self.items
    }

    pub fn evaluate(&self, q: &DVector<f64>, x: &DVector<f64>) -> Result<SetEval> {
        check_dim("controllable state", self.n, q.len())?;
        check_dim("uncontrollable state", self.m, x.len())?;
        let k = self.items.len();
        let mut values = DVector::zeros(k);
        let mut jac_q = DMatrix::zeros(k, self.n);
        let mut jac_x = DMatrix::zeros(k, self.m);
        for (i, c) in self.items.iter().enumerate() {
            let e = c.func.evaluate(q, x);
            values[i] = e.value;
            jac_q.row_mut(i).tr_copy_from(&e.jac_q);
            jac_x.row_mut(i).tr_copy_from(&e.jac_x);
        }
        Ok(SetEval { values, jac_q, jac_x })
    }
}

/// `c = a . q + b . x + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub jac_q: DVector<f64>,
    pub jac_x: DVector<f64>,
    pub offset: f64,
}

impl LinearConstraint {
    pub fn new(jac_q: DVector<f64>, jac_x: DVector<f64>, offset: f64) -> Self {
        Self { jac_q, jac_x, offset }
    }

    /// `q_i - upper <= 0`.
    pub fn upper_limit(n: usize, m: usize, index: usize, upper: f64) -> Self {
        let mut a = DVector::zeros(n);
        a[index] = 1.0;
        Self::new(a, DVector::zeros(m), -upper)
    }

    /// `lower - q_i <= 0`.
    pub fn lower_limit(n: usize, m: usize, index: usize, lower: f64) -> Self {
        let mut a = DVector::zeros(n);
        a[index] = -1.0;
        Self::new(a, DVector::zeros(m), lower)
    }
}

impl ConstraintFn for LinearConstraint {
    fn evaluate(&self, q: &DVector<f64>, x: &DVector<f64>) -> ConstraintEval {
        ConstraintEval {
            value: self.jac_q.dot(q) + self.jac_x.dot(x) + self.offset,
            jac_q: self.jac_q.clone(),
            jac_x: self.jac_x.clone(),
        }
    }
}

/// How a workspace point is attached to the controllable state.
#[derive(Debug, Clone)]
pub enum PointMap {
    /// `p = (q[x], q[y])`, e.g. the center of a mobile base.
    Planar { x: usize, y: usize },
    /// A PoI on a planar arm whose joints are the first `n_joints` entries of `q`.
    Arm { arm: Arc<PlanarArm>, poi: usize },
}

impl PointMap {
    fn locate(&self, q: &DVector<f64>, n: usize) -> (Point, DMatrix<f64>) {
        match self {
            PointMap::Planar { x, y } => {
                let mut j = DMatrix::zeros(2, n);
                j[(0, *x)] = 1.0;
                j[(1, *y)] = 1.0;
                (Point::new(q[*x], q[*y]), j)
            }
            PointMap::Arm { arm, poi } => {
                let nj = arm.n_joints();
                let joints = q.rows(0, nj).into_owned();
                // PoI indices are validated when the constraint is built
                let p = arm.fk_poi(&joints, *poi).expect("valid PoI");
                let jp = arm.fk_jacobian(&joints, *poi).expect("valid PoI");
                let mut j = DMatrix::zeros(2, n);
                j.columns_mut(0, nj).copy_from(&jp);
                (p, j)
            }
        }
    }
}

/// Where the scene pose comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PoseSource {
    /// The scene's own stored pose; no dependence on `x`.
    Fixed,
    /// `(x[offset], x[offset + 1], x[offset + 2])`.
    State { offset: usize },
}

/// Collision constraint `c = threshold - d(p(q), pose)`.
#[derive(Debug, Clone)]
pub struct SdfConstraint {
    pub point: PointMap,
    pub scene: Arc<SdfScene>,
    pub pose: PoseSource,
    pub threshold: f64,
    n: usize,
    m: usize,
}

impl SdfConstraint {
    pub fn new(
        n: usize,
        m: usize,
        point: PointMap,
        scene: Arc<SdfScene>,
        pose: PoseSource,
        threshold: f64,
    ) -> Result<Self> {
        if let PointMap::Arm { arm, poi } = &point {
            if *poi >= arm.pois().len() {
                return Err(crate::Error::Index {
                    index: *poi,
                    len: arm.pois().len(),
                });
            }
            if arm.n_joints() > n {
                return Err(crate::Error::Dimension {
                    what: "arm joints",
                    expected: n,
                    got: arm.n_joints(),
                });
            }
        }
        if let PoseSource::State { offset } = pose {
            if offset + 3 > m {
                return Err(crate::Error::Index { index: offset + 2, len: m });
            }
        }
        Ok(Self {
            point,
            scene,
            pose,
            threshold,
            n,
            m,
        })
    }

    fn pose(&self, x: &DVector<f64>) -> Pose2 {
        match self.pose {
            PoseSource::Fixed => self.scene.pose,
            PoseSource::State { offset } => Pose2::new(x[offset], x[offset + 1], x[offset + 2]),
        }
    }

    /// Signed distance of the attached point to the scene.
    pub fn distance(&self, q: &DVector<f64>, x: &DVector<f64>) -> f64 {
        let (p, _) = self.point.locate(q, self.n);
        self.scene.query_at(&self.pose(x), &p).distance
    }
}

impl ConstraintFn for SdfConstraint {
    fn evaluate(&self, q: &DVector<f64>, x: &DVector<f64>) -> ConstraintEval {
        let (p, jp) = self.point.locate(q, self.n);
        let pose = self.pose(x);
        let hit = self.scene.query_at(&pose, &p);
        // grad_q c = -grad_p d . grad_q p
        let jac_q = -(jp.transpose() * hit.gradient);
        let mut jac_x = DVector::zeros(self.m);
        if let PoseSource::State { offset } = self.pose {
            let jpose = self.scene.jacobian_pose_at(&pose, &p);
            for i in 0..3 {
                jac_x[offset + i] = -jpose[i];
            }
        }
        ConstraintEval {
            value: self.threshold - hit.distance,
            jac_q,
            jac_x,
        }
    }
}
