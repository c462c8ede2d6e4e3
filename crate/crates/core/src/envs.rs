//! Desk-scale tasks.
//!
//! * [`NavEnv`]: a differential-drive disc robot in a square room shares the
//!   space with a scripted obstacle robot that drives to its own random
//!   waypoints and ignores the agent. `q = (x, y, theta)`,
//!   `x = (obstacle x, obstacle y, obstacle yaw, goal x, goal y)`.
//! * [`ReachEnv`]: a planar arm under joint-velocity control reaches a random
//!   goal near static obstacles. `q` = joint angles, `x` = goal position.
//!
//! Both expose the `(q, x, x_dot)` split and their constraint sets. Collision
//! constraints have the form `delta - d(p) <= 0` with `delta = body radius +
//! safety_buffer`; a hard collision is `c > safety_buffer`, i.e. the body
//! itself touches the obstacle.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DVector, Rotation2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintSet, LinearConstraint, PointMap, PoseSource, SdfConstraint};
use crate::error::{Error, Result};
use crate::geometry::{Point, Pose2, SdfScene, SdfShape};
use crate::kinematics::{PlanarArm, Poi};
use crate::slack::{sigmoid, SlackModel};
use crate::systems::{wrap_angle, AffineSystem, Bounds, DEFAULT_DT};

/// Rejection-sampling budget of [`Environment::reset`].
pub const MAX_RESET_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub q: DVector<f64>,
    pub x: DVector<f64>,
    pub x_dot: DVector<f64>,
    pub t: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSpec {
    pub rho_d: f64,
    pub rho_angle: f64,
    pub rho_a: f64,
    pub terminal_penalty: f64,
    /// Indicator bonus while inside the goal region.
    pub goal_bonus: f64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self {
            rho_d: 1.0,
            rho_angle: 1.0,
            rho_a: 0.01,
            terminal_penalty: -1000.0,
            goal_bonus: 1.0,
        }
    }
}

impl RewardSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !(ok(self.rho_d) && ok(self.rho_angle) && ok(self.rho_a)) {
            return Err(Error::InvalidParameter("reward scales must be finite and >= 0".into()));
        }
        if !(self.terminal_penalty.is_finite() && self.goal_bonus.is_finite()) {
            return Err(Error::InvalidParameter("reward constants must be finite".into()));
        }
        Ok(())
    }
}

/// Individual reward contributions of one step; the reward is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardTerms {
    pub distance: f64,
    pub orientation: f64,
    pub action: f64,
    pub indicator: f64,
    pub terminal: f64,
}

impl RewardTerms {
    pub fn total(&self) -> f64 {
        self.distance + self.orientation + self.action + self.indicator + self.terminal
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub reward_terms: RewardTerms,
    pub goal_distance: f64,
    /// `min(-c)` over all inequality constraints after the step.
    pub min_margin: f64,
    /// `min(d - body radius)` over the collision constraints after the step.
    pub min_clearance: f64,
    pub collision: bool,
    pub reached_goal: bool,
    /// Episode ended because the horizon was reached.
    pub truncated: bool,
    /// `q_dot` applied during the step.
    pub q_dot: DVector<f64>,
    /// Controllable state at the start of the step.
    pub q_prev: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Margins of a state against a constraint set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margins {
    pub min_margin: f64,
    pub min_clearance: f64,
    pub collision: bool,
}

/// A simulated task with a controllable / uncontrollable state split.
pub trait Environment: Send + Sync {
    fn name(&self) -> &'static str;
    fn system(&self) -> &AffineSystem;
    /// All constraints; inequalities carry a default slack that controllers replace.
    fn constraints(&self) -> &ConstraintSet;
    /// Indices into [`constraints`](Self::constraints) that are collision constraints.
    fn collision_constraints(&self) -> &[usize];
    fn alpha_bounds(&self) -> &Bounds;
    fn dt(&self) -> f64;
    fn horizon(&self) -> usize;
    fn safety_buffer(&self) -> f64;
    fn reset(&mut self, seed: u64) -> Result<EnvState>;
    fn state(&self) -> &EnvState;
    fn is_done(&self) -> bool;
    fn step(&mut self, a: &DVector<f64>) -> Result<Transition>;
    /// Policy features of the current state.
    fn features(&self) -> DVector<f64>;
    fn feature_dim(&self) -> usize;
    fn goal_distance(&self) -> f64;
    fn boxed_clone(&self) -> Box<dyn Environment>;

    /// Margins of an arbitrary `(q, x)` under this environment's constraints.
    fn margins(&self, q: &DVector<f64>, x: &DVector<f64>) -> Result<Margins> {
        let eval = self.constraints().evaluate(q, x)?;
        let min_margin = eval.values.iter().fold(f64::INFINITY, |m, c| m.min(-c));
        let buffer = self.safety_buffer();
        let min_clearance = self
            .collision_constraints()
            .iter()
            .fold(f64::INFINITY, |m, &i| m.min(buffer - eval.values[i]));
        Ok(Margins {
            min_margin,
            min_clearance,
            collision: min_clearance < 0.0,
        })
    }
}

impl Clone for Box<dyn Environment> {
    fn clone(&self) -> Self {
        self.boxed_clone()
    }
}

fn default_slack() -> SlackModel {
    SlackModel::soft_corner(1.0).expect("valid default slack")
}

fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

// ---------------------------------------------------------------------------
// Navigation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NavConfig {
    pub dt: f64,
    pub horizon: usize,
    /// Side length of the square room `[0, L]^2`.
    pub room_size: f64,
    pub agent_radius: f64,
    pub safety_buffer: f64,
    /// Radius of the default obstacle disc (ignored when `obstacle_scene` is set).
    pub obstacle_radius: f64,
    pub obstacle_speed: f64,
    pub obstacle_turn_rate: f64,
    /// Free band between the obstacle path and the walls, so the agent can never be pinned.
    pub obstacle_wall_gap: f64,
    pub waypoint_tolerance: f64,
    pub goal_radius: f64,
    pub init_clearance: f64,
    /// Policy action limits `(v, omega)`.
    pub max_speed: f64,
    pub max_turn_rate: f64,
    /// System actuator limits; the safe action may exceed the policy range.
    pub speed_limit: f64,
    pub turn_rate_limit: f64,
    pub reward: RewardSpec,
    /// Obstacle shapes in the obstacle frame; a disc of `obstacle_radius` when absent.
    #[serde(skip)]
    pub obstacle_scene: Option<SdfScene>,
}

impl Default for NavConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            horizon: 500,
            room_size: 4.0,
            agent_radius: 0.3,
            safety_buffer: 0.05,
            obstacle_radius: 0.4,
            obstacle_speed: 0.5,
            obstacle_turn_rate: 2.0,
            obstacle_wall_gap: 1.0,
            waypoint_tolerance: 0.3,
            goal_radius: 0.1,
            init_clearance: 0.05,
            max_speed: 1.0,
            max_turn_rate: PI,
            speed_limit: 3.0,
            turn_rate_limit: 2.0 * PI,
            reward: RewardSpec::default(),
            obstacle_scene: None,
        }
    }
}

impl NavConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("nav.{name} must be positive, got {v}")))
            }
        };
        pos("dt", self.dt)?;
        pos("room_size", self.room_size)?;
        pos("agent_radius", self.agent_radius)?;
        pos("obstacle_radius", self.obstacle_radius)?;
        pos("waypoint_tolerance", self.waypoint_tolerance)?;
        pos("goal_radius", self.goal_radius)?;
        pos("max_speed", self.max_speed)?;
        pos("max_turn_rate", self.max_turn_rate)?;
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("nav.horizon must be >= 1".into()));
        }
        if !(self.safety_buffer >= 0.0 && self.init_clearance >= 0.0) {
            return Err(Error::InvalidParameter("nav clearances must be >= 0".into()));
        }
        if !(self.obstacle_speed >= 0.0 && self.obstacle_turn_rate >= 0.0 && self.obstacle_wall_gap >= 0.0) {
            return Err(Error::InvalidParameter("nav obstacle speeds must be >= 0".into()));
        }
        if self.speed_limit < self.max_speed || self.turn_rate_limit < self.max_turn_rate {
            return Err(Error::InvalidParameter(
                "nav actuator limits must contain the policy action range".into(),
            ));
        }
        if 2.0 * (self.agent_radius + self.safety_buffer + self.init_clearance) >= self.room_size {
            return Err(Error::InvalidParameter("nav room too small for the agent".into()));
        }
        self.reward.validate()
    }
}

/// Steering gain of the obstacle's pure-pursuit controller.
const PURSUIT_GAIN: f64 = 3.0;

#[derive(Debug, Clone)]
pub struct NavEnv {
    cfg: NavConfig,
    system: AffineSystem,
    constraints: ConstraintSet,
    collision: Vec<usize>,
    alpha_bounds: Bounds,
    state: EnvState,
    waypoint: Point,
    rng: ChaCha8Rng,
    done: bool,
}

impl NavEnv {
    pub fn new(cfg: NavConfig) -> Result<Self> {
        cfg.validate()?;
        let system = AffineSystem::differential_drive()
            .with_action_bounds(Bounds::symmetric(&[cfg.speed_limit, cfg.turn_rate_limit])?)?;
        let alpha_bounds = Bounds::symmetric(&[cfg.max_speed, cfg.max_turn_rate])?;
        let delta = cfg.agent_radius + cfg.safety_buffer;
        let l = cfg.room_size;
        let base = PointMap::Planar { x: 0, y: 1 };
        let slack = default_slack();
        let mut constraints = ConstraintSet::new(3, 5);
        let walls = [
            ("wall_left", [1.0, 0.0], 0.0),
            ("wall_right", [-1.0, 0.0], -l),
            ("wall_bottom", [0.0, 1.0], 0.0),
            ("wall_top", [0.0, -1.0], -l),
        ];
        for (name, normal, offset) in walls {
            let scene = Arc::new(SdfScene::new(vec![SdfShape::half_plane(normal, offset)?])?);
            constraints = constraints.inequality(
                name,
                slack,
                SdfConstraint::new(3, 5, base.clone(), scene, PoseSource::Fixed, delta)?,
            );
        }
        let obstacle = match &cfg.obstacle_scene {
            Some(scene) => scene.clone().with_pose(Pose2::default()),
            None => SdfScene::new(vec![SdfShape::circle([0.0, 0.0], cfg.obstacle_radius)?])?,
        };
        constraints = constraints.inequality(
            "obstacle",
            slack,
            SdfConstraint::new(3, 5, base, Arc::new(obstacle), PoseSource::State { offset: 0 }, delta)?,
        );
        let state = EnvState {
            q: DVector::zeros(3),
            x: DVector::zeros(5),
            x_dot: DVector::zeros(5),
            t: 0,
        };
        Ok(Self {
            cfg,
            system,
            constraints,
            collision: (0..5).collect(),
            alpha_bounds,
            state,
            waypoint: Point::zeros(),
            rng: ChaCha8Rng::seed_from_u64(0),
            done: true,
        })
    }

    pub fn config(&self) -> &NavConfig {
        &self.cfg
    }

    pub fn goal(&self) -> Point {
        Point::new(self.state.x[3], self.state.x[4])
    }

    pub fn waypoint(&self) -> Point {
        self.waypoint
    }

    /// Overwrites the state, e.g. to probe specific configurations.
    pub fn set_state(&mut self, state: EnvState) -> Result<()> {
        crate::error::check_dim("q", 3, state.q.len())?;
        crate::error::check_dim("x", 5, state.x.len())?;
        crate::error::check_dim("x_dot", 5, state.x_dot.len())?;
        self.state = state;
        self.done = false;
        Ok(())
    }

    fn sample_inside(&mut self, inset: f64) -> Point {
        let l = self.cfg.room_size;
        let lo = inset.min(0.5 * l);
        let hi = (l - inset).max(lo);
        Point::new(self.rng.random_range(lo..=hi), self.rng.random_range(lo..=hi))
    }

    fn waypoint_inset(&self) -> f64 {
        self.cfg.obstacle_radius + self.cfg.obstacle_wall_gap
    }

    /// Pure pursuit of the current waypoint at constant speed.
    fn obstacle_velocity(&self, x: &DVector<f64>) -> DVector<f64> {
        let heading = x[2];
        let to_wp = self.waypoint - Point::new(x[0], x[1]);
        let bearing = to_wp.y.atan2(to_wp.x);
        let omega = (PURSUIT_GAIN * wrap_angle(bearing - heading))
            .clamp(-self.cfg.obstacle_turn_rate, self.cfg.obstacle_turn_rate);
        let v = self.cfg.obstacle_speed;
        dv(&[v * heading.cos(), v * heading.sin(), omega, 0.0, 0.0])
    }

    fn reward_terms(&self, q: &DVector<f64>, a: &DVector<f64>) -> (RewardTerms, f64) {
        let r = &self.cfg.reward;
        let to_goal = self.goal() - Point::new(q[0], q[1]);
        let d = to_goal.norm();
        let angle_err = wrap_angle(to_goal.y.atan2(to_goal.x) - q[2]).abs();
        let terms = RewardTerms {
            distance: -r.rho_d * d,
            orientation: -r.rho_angle * sigmoid(30.0 * (d - 0.2)) * angle_err / PI,
            action: -r.rho_a * a.norm(),
            indicator: if d < self.cfg.goal_radius { r.goal_bonus } else { 0.0 },
            terminal: 0.0,
        };
        (terms, d)
    }
}

impl Environment for NavEnv {
    fn name(&self) -> &'static str {
        "nav"
    }

    fn system(&self) -> &AffineSystem {
        &self.system
    }

    fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    fn collision_constraints(&self) -> &[usize] {
        &self.collision
    }

    fn alpha_bounds(&self) -> &Bounds {
        &self.alpha_bounds
    }

    fn dt(&self) -> f64 {
        self.cfg.dt
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn safety_buffer(&self) -> f64 {
        self.cfg.safety_buffer
    }

    fn reset(&mut self, seed: u64) -> Result<EnvState> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let agent_inset = self.cfg.agent_radius + self.cfg.safety_buffer;
        let goal_inset = agent_inset + self.cfg.goal_radius;
        for _ in 0..MAX_RESET_ATTEMPTS {
            let p = self.sample_inside(0.0);
            let theta = self.rng.random_range(-PI..PI);
            let o = self.sample_inside(self.waypoint_inset());
            let yaw = self.rng.random_range(-PI..PI);
            let goal = self.sample_inside(goal_inset);
            let q = dv(&[p.x, p.y, theta]);
            let x = dv(&[o.x, o.y, yaw, goal.x, goal.y]);
            if self.margins(&q, &x)?.min_margin < self.cfg.init_clearance {
                continue;
            }
            self.waypoint = self.sample_inside(self.waypoint_inset());
            let x_dot = self.obstacle_velocity(&x);
            self.state = EnvState { q, x, x_dot, t: 0 };
            self.done = false;
            return Ok(self.state.clone());
        }
        Err(Error::InitFailure {
            attempts: MAX_RESET_ATTEMPTS,
        })
    }

    fn state(&self) -> &EnvState {
        &self.state
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn step(&mut self, a: &DVector<f64>) -> Result<Transition> {
        if self.done {
            return Err(Error::StepAfterDone);
        }
        let q_prev = self.state.q.clone();
        let q_dot = self.system.velocity(&q_prev, a)?;
        let q = self.system.step_euler(&q_prev, a, self.cfg.dt)?;
        let x = &self.state.x + &self.state.x_dot * self.cfg.dt;
        if (Point::new(x[0], x[1]) - self.waypoint).norm() < self.cfg.waypoint_tolerance {
            self.waypoint = self.sample_inside(self.waypoint_inset());
        }
        let x_dot = self.obstacle_velocity(&x);
        let t = self.state.t + 1;

        let margins = self.margins(&q, &x)?;
        let (mut terms, goal_distance) = self.reward_terms(&q, a);
        let reached_goal = goal_distance < self.cfg.goal_radius;
        if margins.collision {
            terms.terminal = self.cfg.reward.terminal_penalty;
        }
        let truncated = t >= self.cfg.horizon;
        let done = margins.collision || reached_goal || truncated;
        self.state = EnvState { q, x, x_dot, t };
        self.done = done;
        Ok(Transition {
            state: self.state.clone(),
            reward: terms.total(),
            done,
            info: StepInfo {
                reward_terms: terms,
                goal_distance,
                min_margin: margins.min_margin,
                min_clearance: margins.min_clearance,
                collision: margins.collision,
                reached_goal,
                truncated: truncated && !margins.collision && !reached_goal,
                q_dot,
                q_prev,
            },
        })
    }

    /// Goal, obstacle position and obstacle velocity, all in the agent frame.
    fn features(&self) -> DVector<f64> {
        let s = &self.state;
        let p = Point::new(s.q[0], s.q[1]);
        let to_agent = Rotation2::new(-s.q[2]);
        let goal = to_agent * (self.goal() - p);
        let obs = to_agent * (Point::new(s.x[0], s.x[1]) - p);
        let vel = to_agent * Point::new(s.x_dot[0], s.x_dot[1]);
        dv(&[goal.x, goal.y, obs.x, obs.y, vel.x, vel.y])
    }

    fn feature_dim(&self) -> usize {
        6
    }

    fn goal_distance(&self) -> f64 {
        (self.goal() - Point::new(self.state.q[0], self.state.q[1])).norm()
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

// ---------------------------------------------------------------------------
// Reaching

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReachConfig {
    pub dt: f64,
    pub horizon: usize,
    pub link_lengths: Vec<f64>,
    pub base: Pose2,
    pub joint_lower: Vec<f64>,
    pub joint_upper: Vec<f64>,
    /// Start and goal configurations are drawn from `[-r, r]` per joint, intersected with the limits.
    pub sample_range: f64,
    /// Damping of the pseudoinverse in the policy features.
    pub feature_damping: f64,
    /// PoIs along the arm; one at every link midpoint and end when absent.
    pub pois: Option<Vec<Poi>>,
    /// Threshold `delta` of the default PoIs.
    pub poi_clearance: f64,
    pub safety_buffer: f64,
    /// Policy joint-velocity limit.
    pub max_joint_speed: f64,
    /// Actuator joint-velocity limit.
    pub joint_speed_limit: f64,
    pub goal_radius: f64,
    pub init_clearance: f64,
    /// Minimum initial distance between tip and goal.
    pub min_goal_distance: f64,
    pub reward: RewardSpec,
    /// Static obstacles; [`ReachConfig::default_scene`] when absent.
    #[serde(skip)]
    pub scene: Option<SdfScene>,
}

impl Default for ReachConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            horizon: 500,
            link_lengths: vec![1.0, 1.0, 1.0],
            base: Pose2::new(0.0, 0.0, 0.5 * PI),
            joint_lower: vec![-2.6; 3],
            joint_upper: vec![2.6; 3],
            sample_range: 1.0,
            feature_damping: 0.01,
            pois: None,
            poi_clearance: 0.15,
            safety_buffer: 0.05,
            max_joint_speed: 2.0,
            joint_speed_limit: 6.0,
            goal_radius: 0.1,
            init_clearance: 0.05,
            min_goal_distance: 0.5,
            reward: RewardSpec::default(),
            scene: None,
        }
    }
}

impl ReachConfig {
    /// A floor below the base and a post beside the arm.
    pub fn default_scene() -> SdfScene {
        SdfScene::new(vec![
            SdfShape::half_plane([0.0, 1.0], -0.5).expect("unit normal"),
            SdfShape::circle([1.3, 1.5], 0.25).expect("positive radius"),
        ])
        .expect("non-empty scene")
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.link_lengths.len();
        if self.joint_lower.len() != n || self.joint_upper.len() != n {
            return Err(Error::InvalidParameter("reach joint limits must match the link count".into()));
        }
        if self.joint_lower.iter().zip(&self.joint_upper).any(|(l, u)| !(l < u)) {
            return Err(Error::InvalidParameter("reach joint_lower must be below joint_upper".into()));
        }
        if !(self.dt > 0.0 && self.goal_radius > 0.0 && self.max_joint_speed > 0.0) {
            return Err(Error::InvalidParameter("reach dt, goal_radius, max_joint_speed must be positive".into()));
        }
        if !(self.sample_range > 0.0 && self.feature_damping > 0.0) {
            return Err(Error::InvalidParameter("reach sample_range and feature_damping must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("reach.horizon must be >= 1".into()));
        }
        if self.joint_speed_limit < self.max_joint_speed {
            return Err(Error::InvalidParameter(
                "reach actuator limit must contain the policy action range".into(),
            ));
        }
        if !(self.safety_buffer >= 0.0 && self.init_clearance >= 0.0 && self.poi_clearance >= self.safety_buffer) {
            return Err(Error::InvalidParameter("reach clearances inconsistent".into()));
        }
        self.reward.validate()
    }
}

#[derive(Debug, Clone)]
pub struct ReachEnv {
    cfg: ReachConfig,
    arm: Arc<PlanarArm>,
    scene: Arc<SdfScene>,
    system: AffineSystem,
    constraints: ConstraintSet,
    collision: Vec<usize>,
    alpha_bounds: Bounds,
    state: EnvState,
    rng: ChaCha8Rng,
    done: bool,
}

impl ReachEnv {
    pub fn new(cfg: ReachConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.link_lengths.len();
        let arm = match &cfg.pois {
            Some(pois) => PlanarArm::new(cfg.link_lengths.clone(), cfg.base, pois.clone())?,
            None => PlanarArm::with_default_pois(cfg.link_lengths.clone(), cfg.base, cfg.poi_clearance)?,
        };
        if arm.pois().iter().any(|p| p.clearance < cfg.safety_buffer) {
            return Err(Error::InvalidParameter("every PoI clearance must cover the safety buffer".into()));
        }
        let arm = Arc::new(arm);
        let scene = Arc::new(cfg.scene.clone().unwrap_or_else(ReachConfig::default_scene));
        let system = AffineSystem::single_integrator(n)?
            .with_action_bounds(Bounds::symmetric(&vec![cfg.joint_speed_limit; n])?)?;
        let alpha_bounds = Bounds::symmetric(&vec![cfg.max_joint_speed; n])?;
        let slack = default_slack();
        let mut constraints = ConstraintSet::new(n, 2);
        for j in 0..n {
            constraints = constraints
                .inequality(format!("joint{j}_upper"), slack, LinearConstraint::upper_limit(n, 2, j, cfg.joint_upper[j]))
                .inequality(format!("joint{j}_lower"), slack, LinearConstraint::lower_limit(n, 2, j, cfg.joint_lower[j]));
        }
        let mut collision = Vec::new();
        for (i, poi) in arm.pois().iter().enumerate() {
            collision.push(constraints.len());
            constraints = constraints.inequality(
                format!("poi{i}"),
                slack,
                SdfConstraint::new(
                    n,
                    2,
                    PointMap::Arm { arm: arm.clone(), poi: i },
                    scene.clone(),
                    PoseSource::Fixed,
                    poi.clearance,
                )?,
            );
        }
        let state = EnvState {
            q: DVector::zeros(n),
            x: DVector::zeros(2),
            x_dot: DVector::zeros(2),
            t: 0,
        };
        Ok(Self {
            cfg,
            arm,
            scene,
            system,
            constraints,
            collision,
            alpha_bounds,
            state,
            rng: ChaCha8Rng::seed_from_u64(0),
            done: true,
        })
    }

    pub fn config(&self) -> &ReachConfig {
        &self.cfg
    }

    pub fn arm(&self) -> &PlanarArm {
        &self.arm
    }

    pub fn scene(&self) -> &SdfScene {
        &self.scene
    }

    pub fn goal(&self) -> Point {
        Point::new(self.state.x[0], self.state.x[1])
    }

    pub fn tip(&self, q: &DVector<f64>) -> Point {
        self.arm.end_effector(q).expect("joint dimension fixed by construction")
    }

    pub fn set_state(&mut self, state: EnvState) -> Result<()> {
        let n = self.arm.n_joints();
        crate::error::check_dim("q", n, state.q.len())?;
        crate::error::check_dim("x", 2, state.x.len())?;
        crate::error::check_dim("x_dot", 2, state.x_dot.len())?;
        self.state = state;
        self.done = false;
        Ok(())
    }

    fn sample_joints(&mut self) -> DVector<f64> {
        let n = self.arm.n_joints();
        DVector::from_iterator(
            n,
            (0..n).map(|j| {
                let r = self.cfg.sample_range;
                let lo = self.cfg.joint_lower[j].max(-r);
                let hi = self.cfg.joint_upper[j].min(r).max(lo);
                self.rng.random_range(lo..=hi)
            }),
        )
    }

    /// The joint-space segment between two configurations stays inside the constraints.
    fn straight_path_admissible(&self, from: &DVector<f64>, to: &DVector<f64>) -> Result<bool> {
        const CHECKS: usize = 32;
        for i in 1..CHECKS {
            let q = from.lerp(to, i as f64 / CHECKS as f64);
            if self.margins(&q, &DVector::zeros(2))?.min_margin < 0.0 {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn admissible(&self, q: &DVector<f64>) -> Result<bool> {
        Ok(self.margins(q, &DVector::zeros(2))?.min_margin >= self.cfg.init_clearance)
    }
}

impl Environment for ReachEnv {
    fn name(&self) -> &'static str {
        "reach"
    }

    fn system(&self) -> &AffineSystem {
        &self.system
    }

    fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    fn collision_constraints(&self) -> &[usize] {
        &self.collision
    }

    fn alpha_bounds(&self) -> &Bounds {
        &self.alpha_bounds
    }

    fn dt(&self) -> f64 {
        self.cfg.dt
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn safety_buffer(&self) -> f64 {
        self.cfg.safety_buffer
    }

    /// Start and goal are drawn from admissible configurations joined by an admissible
    /// joint-space segment, so every goal is reachable.
    fn reset(&mut self, seed: u64) -> Result<EnvState> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..MAX_RESET_ATTEMPTS {
            let q = self.sample_joints();
            let q_goal = self.sample_joints();
            if !self.admissible(&q)? || !self.admissible(&q_goal)? {
                continue;
            }
            let goal = self.tip(&q_goal);
            if (goal - self.tip(&q)).norm() < self.cfg.min_goal_distance || !self.straight_path_admissible(&q, &q_goal)? {
                continue;
            }
            self.state = EnvState {
                q,
                x: dv(&[goal.x, goal.y]),
                x_dot: DVector::zeros(2),
                t: 0,
            };
            self.done = false;
            return Ok(self.state.clone());
        }
        Err(Error::InitFailure {
            attempts: MAX_RESET_ATTEMPTS,
        })
    }

    fn state(&self) -> &EnvState {
        &self.state
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn step(&mut self, a: &DVector<f64>) -> Result<Transition> {
        if self.done {
            return Err(Error::StepAfterDone);
        }
        let q_prev = self.state.q.clone();
        let q_dot = self.system.velocity(&q_prev, a)?;
        let q = self.system.step_euler(&q_prev, a, self.cfg.dt)?;
        let x = self.state.x.clone();
        let t = self.state.t + 1;

        let margins = self.margins(&q, &x)?;
        let goal_distance = (self.goal() - self.tip(&q)).norm();
        let r = &self.cfg.reward;
        let reached_goal = goal_distance < self.cfg.goal_radius;
        let terms = RewardTerms {
            distance: -r.rho_d * goal_distance,
            orientation: 0.0,
            action: -r.rho_a * a.norm(),
            indicator: if reached_goal { r.goal_bonus } else { 0.0 },
            terminal: if margins.collision { r.terminal_penalty } else { 0.0 },
        };
        let truncated = t >= self.cfg.horizon;
        let done = margins.collision || reached_goal || truncated;
        self.state = EnvState {
            q,
            x,
            x_dot: DVector::zeros(2),
            t,
        };
        self.done = done;
        Ok(Transition {
            state: self.state.clone(),
            reward: terms.total(),
            done,
            info: StepInfo {
                reward_terms: terms,
                goal_distance,
                min_margin: margins.min_margin,
                min_clearance: margins.min_clearance,
                collision: margins.collision,
                reached_goal,
                truncated: truncated && !margins.collision && !reached_goal,
                q_dot,
                q_prev,
            },
        })
    }

    /// The damped least-squares joint step toward the goal, `J^T (J J^T + lambda I)^-1 e`
    /// with `e` the tip-to-goal error.
    fn features(&self) -> DVector<f64> {
        let q = &self.state.q;
        let e = self.goal() - self.tip(q);
        let jac = self.arm.end_effector_jacobian(q).expect("joint dimension fixed by construction");
        let gram = &jac * jac.transpose() + nalgebra::Matrix2::identity() * self.cfg.feature_damping;
        jac.transpose() * (gram.try_inverse().expect("damped Gram matrix is positive definite") * e)
    }

    fn feature_dim(&self) -> usize {
        self.arm.n_joints()
    }

    fn goal_distance(&self) -> f64 {
        (self.goal() - self.tip(&self.state.q)).norm()
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    #[default]
    Nav,
    Reach,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub nav: NavConfig,
    pub reach: ReachConfig,
}

impl EnvConfig {
    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self.kind {
            EnvKind::Nav => Box::new(NavEnv::new(self.nav.clone())?),
            EnvKind::Reach => Box::new(ReachEnv::new(self.reach.clone())?),
        })
    }
}
