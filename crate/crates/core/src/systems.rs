//! Nonlinear affine control systems `q_dot = f(q) + G(q) a`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Default control period (30 Hz).
pub const DEFAULT_DT: f64 = 1.0 / 30.0;

/// Per-component closed interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim("bounds", lower.len(), upper.len())?;
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(Error::InvalidParameter(format!(
                "bound {i}: lower {} exceeds upper {}",
                lower[i], upper[i]
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn symmetric(limits: &[f64]) -> Result<Self> {
        Self::new(limits.iter().map(|l| -l).collect(), limits.to_vec())
    }

    pub fn unbounded(dim: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Componentwise clip. Returns the clipped vector and whether anything moved.
    pub fn clip(&self, v: &DVector<f64>) -> (DVector<f64>, bool) {
        let mut clipped = false;
        let out = DVector::from_iterator(
            v.len(),
            v.iter().enumerate().map(|(i, &x)| {
                let y = x.clamp(self.lower[i], self.upper[i]);
                clipped |= y != x;
                y
            }),
        );
        (out, clipped)
    }

    pub fn check(&self, v: &DVector<f64>) -> Result<()> {
        check_dim("action", self.dim(), v.len())?;
        for (i, &x) in v.iter().enumerate() {
            if !(x >= self.lower[i] && x <= self.upper[i]) {
                return Err(Error::Bounds {
                    index: i,
                    value: x,
                    lower: self.lower[i],
                    upper: self.upper[i],
                });
            }
        }
        Ok(())
    }

    pub fn contains(&self, v: &DVector<f64>) -> bool {
        self.check(v).is_ok()
    }

    pub fn midpoint(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)),
        )
    }

    pub fn half_width(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (u - l)),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SystemKind {
    SingleIntegrator { n: usize },
    /// State `[position; velocity]`, actions are accelerations.
    DoubleIntegrator { n_pos: usize },
    /// State `(x, y, theta)`, actions `(v, omega)`.
    DifferentialDrive,
    /// State `(x, y, theta)`, actions `(v, L * theta_dot)`.
    Bicycle { wheelbase: f64 },
}

/// An affine control system with action limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineSystem {
    kind: SystemKind,
    action_bounds: Bounds,
}

impl AffineSystem {
    pub fn single_integrator(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("single integrator needs n >= 1".into()));
        }
        Ok(Self {
            kind: SystemKind::SingleIntegrator { n },
            action_bounds: Bounds::unbounded(n),
        })
    }

    pub fn double_integrator(n_pos: usize) -> Result<Self> {
        if n_pos == 0 {
            return Err(Error::InvalidParameter("double integrator needs n_pos >= 1".into()));
        }
        Ok(Self {
            kind: SystemKind::DoubleIntegrator { n_pos },
            action_bounds: Bounds::unbounded(n_pos),
        })
    }

    pub fn differential_drive() -> Self {
        Self {
            kind: SystemKind::DifferentialDrive,
            action_bounds: Bounds::unbounded(2),
        }
    }

    pub fn bicycle(wheelbase: f64) -> Result<Self> {
        if !(wheelbase > 0.0 && wheelbase.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "wheelbase must be positive, got {wheelbase}"
            )));
        }
        Ok(Self {
            kind: SystemKind::Bicycle { wheelbase },
            action_bounds: Bounds::unbounded(2),
        })
    }

    /// Builds a system from its config name.
    pub fn from_config(name: &str, dim: usize, wheelbase: f64) -> Result<Self> {
        match name {
            "single_integrator" => Self::single_integrator(dim),
            "double_integrator" => Self::double_integrator(dim),
            "differential_drive" => Ok(Self::differential_drive()),
            "bicycle" => Self::bicycle(wheelbase),
            other => Err(Error::Parse(format!("unknown system '{other}'"))),
        }
    }

    pub fn with_action_bounds(mut self, bounds: Bounds) -> Result<Self> {
        check_dim("action bounds", self.action_dim(), bounds.dim())?;
        self.action_bounds = bounds;
        Ok(self)
    }

    pub fn kind(&self) -> SystemKind {
        self.kind
    }

    pub fn action_bounds(&self) -> &Bounds {
        &self.action_bounds
    }

    pub fn state_dim(&self) -> usize {
        match self.kind {
            SystemKind::SingleIntegrator { n } => n,
            SystemKind::DoubleIntegrator { n_pos } => 2 * n_pos,
            SystemKind::DifferentialDrive | SystemKind::Bicycle { .. } => 3,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self.kind {
            SystemKind::SingleIntegrator { n } => n,
            SystemKind::DoubleIntegrator { n_pos } => n_pos,
            SystemKind::DifferentialDrive | SystemKind::Bicycle { .. } => 2,
        }
    }

    /// State components that are angles and get wrapped to `(-pi, pi]`.
    pub fn angle_indices(&self) -> &'static [usize] {
        match self.kind {
            SystemKind::DifferentialDrive | SystemKind::Bicycle { .. } => &[2],
            _ => &[],
        }
    }

    /// Drift `f(q)`.
    pub fn drift(&self, q: &DVector<f64>) -> DVector<f64> {
        match self.kind {
            SystemKind::DoubleIntegrator { n_pos } => {
                let mut f = DVector::zeros(2 * n_pos);
                f.rows_mut(0, n_pos).copy_from(&q.rows(n_pos, n_pos));
                f
            }
            _ => DVector::zeros(self.state_dim()),
        }
    }

    /// Input matrix `G(q)`, shape `n x u`.
    pub fn input_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        match self.kind {
            SystemKind::SingleIntegrator { n } => DMatrix::identity(n, n),
            SystemKind::DoubleIntegrator { n_pos } => {
                let mut g = DMatrix::zeros(2 * n_pos, n_pos);
                g.view_mut((n_pos, 0), (n_pos, n_pos))
                    .fill_with_identity();
                g
            }
            SystemKind::DifferentialDrive => {
                let (s, c) = q[2].sin_cos();
                DMatrix::from_row_slice(3, 2, &[c, 0.0, s, 0.0, 0.0, 1.0])
            }
            SystemKind::Bicycle { wheelbase } => {
                let (s, c) = q[2].sin_cos();
                DMatrix::from_row_slice(3, 2, &[c, 0.0, s, 0.0, 0.0, 1.0 / wheelbase])
            }
        }
    }

    /// `f(q) + G(q) a`.
    pub fn velocity(&self, q: &DVector<f64>, a: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("state", self.state_dim(), q.len())?;
        check_dim("action", self.action_dim(), a.len())?;
        Ok(self.drift(q) + self.input_matrix(q) * a)
    }

    /// One explicit Euler step. Angles are wrapped after the update.
    pub fn step_euler(&self, q: &DVector<f64>, a: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        self.action_bounds.check(a)?;
        let mut next = q + self.velocity(q, a)? * dt;
        for &i in self.angle_indices() {
            next[i] = wrap_angle(next[i]);
        }
        Ok(next)
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta % (2.0 * PI);
    if t <= -PI {
        t += 2.0 * PI;
    } else if t > PI {
        t -= 2.0 * PI;
    }
    t
}
