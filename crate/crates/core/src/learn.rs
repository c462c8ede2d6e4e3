//! Episodic rollouts and cross-entropy policy search.
//!
//! Every rollout that runs with a controller goes through
//! [`wrap_env_step`], so exploration during training is safe. Randomness is
//! derived from a master seed by counters (`derive_seed`), never from thread
//! arrival order, so results do not depend on the rayon schedule.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{wrap_env_step, AtacomController};
use crate::envs::Environment;
use crate::error::{check_dim, Error, Result};
use crate::systems::Bounds;

/// SplitMix64 finalizer applied to a counter tuple.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const POLICY_STREAM: u64 = 1;
const EPISODE_STREAM: u64 = 2;
const CANDIDATE_STREAM: u64 = 3;

/// Seed of episode `index` in an evaluation with master seed `seed`.
pub fn episode_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, EPISODE_STREAM, index as u64)
}

pub trait Policy: Send + Sync {
    /// Tangent-space coordinates for the current features.
    fn act(&self, features: &DVector<f64>, rng: &mut ChaCha8Rng) -> DVector<f64>;
}

/// Always outputs zero.
#[derive(Debug, Clone)]
pub struct ZeroPolicy {
    pub dim: usize,
}

impl Policy for ZeroPolicy {
    fn act(&self, _: &DVector<f64>, _: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::zeros(self.dim)
    }
}

/// Independent uniform samples over the bounds at every step.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    pub bounds: Bounds,
}

impl Policy for RandomPolicy {
    fn act(&self, _: &DVector<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let (lo, hi) = (self.bounds.lower(), self.bounds.upper());
        DVector::from_iterator(lo.len(), lo.iter().zip(hi).map(|(&l, &h)| rng.random_range(l..=h)))
    }
}

/// `alpha = mid + half_width * tanh(W f + b)`, so outputs never leave the bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub bounds: Bounds,
}

const POLICY_HEADER: &str = "linear-policy v1";

impl LinearPolicy {
    pub fn zeros(feature_dim: usize, bounds: Bounds) -> Self {
        let u = bounds.dim();
        Self {
            weights: DMatrix::zeros(u, feature_dim),
            bias: DVector::zeros(u),
            bounds,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Row-major weights followed by the bias.
    pub fn params(&self) -> DVector<f64> {
        let mut p = DVector::zeros(self.n_params());
        let (u, f) = self.weights.shape();
        for i in 0..u {
            for j in 0..f {
                p[i * f + j] = self.weights[(i, j)];
            }
        }
        p.rows_mut(u * f, u).copy_from(&self.bias);
        p
    }

    pub fn from_params(feature_dim: usize, bounds: Bounds, params: &DVector<f64>) -> Result<Self> {
        let u = bounds.dim();
        check_dim("policy parameters", u * feature_dim + u, params.len())?;
        let weights = DMatrix::from_row_slice(u, feature_dim, &params.as_slice()[..u * feature_dim]);
        let bias = params.rows(u * feature_dim, u).into_owned();
        Ok(Self { weights, bias, bounds })
    }

    pub fn evaluate(&self, features: &DVector<f64>) -> DVector<f64> {
        let z = &self.weights * features + &self.bias;
        let mid = self.bounds.midpoint();
        let half = self.bounds.half_width();
        DVector::from_fn(z.len(), |i, _| mid[i] + half[i] * z[i].tanh())
    }

    /// Plain text: header, dimensions, lower bounds, upper bounds, one line per weight row, bias.
    pub fn to_text(&self) -> String {
        let line = |v: &mut dyn Iterator<Item = f64>| {
            v.map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ")
        };
        let mut s = String::new();
        writeln!(s, "{POLICY_HEADER}").unwrap();
        writeln!(s, "{} {}", self.action_dim(), self.feature_dim()).unwrap();
        writeln!(s, "{}", line(&mut self.bounds.lower().iter().copied())).unwrap();
        writeln!(s, "{}", line(&mut self.bounds.upper().iter().copied())).unwrap();
        for row in self.weights.row_iter() {
            writeln!(s, "{}", line(&mut row.iter().copied())).unwrap();
        }
        writeln!(s, "{}", line(&mut self.bias.iter().copied())).unwrap();
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Parse(format!("policy file: {msg}"));
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        if lines.next() != Some(POLICY_HEADER) {
            return Err(bad("missing header"));
        }
        let mut numbers = |expected: usize| -> Result<Vec<f64>> {
            let line = lines.next().ok_or_else(|| bad("truncated"))?;
            let v = line
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(&e.to_string()))?;
            if v.len() != expected {
                return Err(bad(&format!("expected {expected} values, got {}", v.len())));
            }
            Ok(v)
        };
        let dims = numbers(2)?;
        if dims.iter().any(|d| d.fract() != 0.0 || *d < 1.0) {
            return Err(bad("dimensions must be positive integers"));
        }
        let (u, f) = (dims[0] as usize, dims[1] as usize);
        let bounds = Bounds::new(numbers(u)?, numbers(u)?)?;
        let mut rows = Vec::with_capacity(u * f);
        for _ in 0..u {
            rows.extend(numbers(f)?);
        }
        let bias = DVector::from_vec(numbers(u)?);
        Ok(Self {
            weights: DMatrix::from_row_slice(u, f, &rows),
            bias,
            bounds,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_text()).map_err(|e| Error::Parse(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Parse(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_text(&text)
    }
}

impl Policy for LinearPolicy {
    fn act(&self, features: &DVector<f64>, _: &mut ChaCha8Rng) -> DVector<f64> {
        self.evaluate(features)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub steps: usize,
    pub total_return: f64,
    pub discounted_return: f64,
    pub final_goal_distance: f64,
    pub min_margin: f64,
    /// Steps whose margin fell below `-tolerance`.
    pub violation_steps: usize,
    pub collision: bool,
    /// Ended before the horizon, by collision or by reaching the goal.
    pub early_termination: bool,
    pub reached_goal: bool,
    pub saturation_steps: usize,
}

/// One recorded step of a traced episode.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub q_prev: DVector<f64>,
    pub q_dot: DVector<f64>,
    pub alpha: DVector<f64>,
    pub action: DVector<f64>,
    pub reward: f64,
    pub min_margin: f64,
    pub min_clearance: f64,
    pub saturated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutSettings {
    pub gamma: f64,
    /// Margins below `-tolerance` count as violations.
    pub tolerance: f64,
}

impl Default for RolloutSettings {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tolerance: 0.01,
        }
    }
}

/// Runs one episode from `env.reset(seed)`.
///
/// With a controller the policy output is mapped to a safe action; without one
/// it is clipped into the actuator bounds and applied directly.
pub fn run_episode(
    env: &mut dyn Environment,
    controller: Option<&AtacomController>,
    policy: &dyn Policy,
    seed: u64,
    episode: usize,
    settings: RolloutSettings,
    mut trace: Option<&mut Vec<StepRecord>>,
) -> Result<EpisodeMetrics> {
    env.reset(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, POLICY_STREAM, 0));
    let mut m = EpisodeMetrics {
        episode,
        steps: 0,
        total_return: 0.0,
        discounted_return: 0.0,
        final_goal_distance: env.goal_distance(),
        min_margin: f64::INFINITY,
        violation_steps: 0,
        collision: false,
        early_termination: false,
        reached_goal: false,
        saturation_steps: 0,
    };
    let mut discount = 1.0;
    while !env.is_done() {
        let alpha = policy.act(&env.features(), &mut rng);
        let (tr, action, saturated) = match controller {
            Some(ctrl) => {
                let (tr, diag) = wrap_env_step(ctrl, env, &alpha)?;
                let u = alpha.len();
                let (a, _) = ctrl.system().action_bounds().clip(&diag.full_velocity.rows(0, u).into_owned());
                (tr, a, diag.saturated)
            }
            None => {
                let (a, saturated) = env.system().action_bounds().clip(&alpha);
                (env.step(&a)?, a, saturated)
            }
        };
        m.steps += 1;
        m.total_return += tr.reward;
        m.discounted_return += discount * tr.reward;
        discount *= settings.gamma;
        m.min_margin = m.min_margin.min(tr.info.min_margin);
        m.violation_steps += usize::from(tr.info.min_margin < -settings.tolerance);
        m.saturation_steps += usize::from(saturated);
        m.final_goal_distance = tr.info.goal_distance;
        if tr.done {
            m.collision = tr.info.collision;
            m.reached_goal = tr.info.reached_goal && !tr.info.collision;
            m.early_termination = !tr.info.truncated;
        }
        if let Some(trace) = trace.as_deref_mut() {
            trace.push(StepRecord {
                t: tr.state.t,
                q_prev: tr.info.q_prev,
                q_dot: tr.info.q_dot,
                alpha,
                action,
                reward: tr.reward,
                min_margin: tr.info.min_margin,
                min_clearance: tr.info.min_clearance,
                saturated,
            });
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub episodes: Vec<EpisodeMetrics>,
}

impl Evaluation {
    pub fn mean_discounted_return(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.discounted_return))
    }

    pub fn mean_return(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.total_return))
    }

    pub fn mean_steps(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.steps as f64))
    }

    pub fn mean_final_distance(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.final_goal_distance))
    }

    pub fn collisions(&self) -> usize {
        self.episodes.iter().filter(|e| e.collision).count()
    }

    pub fn violation_steps(&self) -> usize {
        self.episodes.iter().map(|e| e.violation_steps).sum()
    }

    pub fn total_steps(&self) -> usize {
        self.episodes.iter().map(|e| e.steps).sum()
    }

    pub fn min_margin(&self) -> f64 {
        self.episodes.iter().fold(f64::INFINITY, |m, e| m.min(e.min_margin))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Runs `episodes` episodes in parallel; episode `i` uses [`episode_seed`]`(seed, i)`.
pub fn evaluate_policy(
    policy: &dyn Policy,
    env: &dyn Environment,
    controller: Option<&AtacomController>,
    episodes: usize,
    seed: u64,
    settings: RolloutSettings,
) -> Result<Evaluation> {
    let template = env.boxed_clone();
    let episodes = (0..episodes)
        .into_par_iter()
        .map_init(
            || template.clone(),
            |env, i| run_episode(env.as_mut(), controller, policy, episode_seed(seed, i), i, settings, None),
        )
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation { episodes })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CemConfig {
    pub population: usize,
    pub elite_fraction: f64,
    pub iterations: usize,
    pub init_std: f64,
    pub std_floor: f64,
    pub episodes_per_candidate: usize,
    pub gamma: f64,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            population: 32,
            elite_fraction: 0.25,
            iterations: 50,
            init_std: 1.0,
            std_floor: 0.02,
            episodes_per_candidate: 2,
            gamma: 0.99,
        }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("training.{m}")));
        if self.population < 4 {
            return bad("population must be >= 4");
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 1.0) {
            return bad("elite_fraction must be in (0, 1]");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if !(self.init_std > 0.0 && self.std_floor >= 0.0) {
            return bad("init_std must be positive and std_floor non-negative");
        }
        if self.iterations == 0 || self.episodes_per_candidate == 0 {
            return bad("iterations and episodes_per_candidate must be >= 1");
        }
        Ok(())
    }

    pub fn n_elite(&self) -> usize {
        ((self.population as f64 * self.elite_fraction).round() as usize).clamp(1, self.population)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CemLogRow {
    pub iteration: usize,
    /// Best candidate score seen so far.
    pub best_return: f64,
    pub mean_return: f64,
    pub mean_final_distance: f64,
    pub iteration_steps: usize,
    pub cumulative_violations: usize,
    pub cumulative_collisions: usize,
}

#[derive(Debug, Clone)]
pub struct CemResult {
    pub best_policy: LinearPolicy,
    pub best_return: f64,
    /// Distribution mean after the last refit.
    pub mean_policy: LinearPolicy,
    pub log: Vec<CemLogRow>,
    pub total_steps: usize,
    pub total_collisions: usize,
    pub total_violations: usize,
}

/// Elite refit of a diagonal Gaussian: mean and floored standard deviation of the rows of `elites`.
pub fn refit(elites: &[DVector<f64>], std_floor: f64) -> (DVector<f64>, DVector<f64>) {
    let n = elites.len() as f64;
    let dim = elites[0].len();
    let mean = elites.iter().fold(DVector::zeros(dim), |acc, e| acc + e) / n;
    let var = elites
        .iter()
        .fold(DVector::zeros(dim), |acc: DVector<f64>, e| acc + (e - &mean).map(|d| d * d))
        / n;
    let std = var.map(|v| v.sqrt().max(std_floor));
    (mean, std)
}

/// Cross-entropy search over [`LinearPolicy`] parameters, scored by mean discounted return.
///
/// All candidates of one iteration share the same episode seeds.
pub fn cem_train(
    env: &dyn Environment,
    controller: Option<&AtacomController>,
    cfg: &CemConfig,
    settings: RolloutSettings,
    seed: u64,
) -> Result<CemResult> {
    cfg.validate()?;
    let settings = RolloutSettings { gamma: cfg.gamma, ..settings };
    let f = env.feature_dim();
    let bounds = env.alpha_bounds().clone();
    let template = LinearPolicy::zeros(f, bounds.clone());
    let dim = template.n_params();
    let mut mean = DVector::zeros(dim);
    let mut std = DVector::from_element(dim, cfg.init_std);
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut log = Vec::with_capacity(cfg.iterations);
    let (mut total_steps, mut total_collisions, mut total_violations) = (0, 0, 0);
    let env_template = env.boxed_clone();

    for it in 0..cfg.iterations {
        let candidates: Vec<DVector<f64>> = (0..cfg.population)
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, CANDIDATE_STREAM, (it * cfg.population + c) as u64));
                DVector::from_fn(dim, |i, _| mean[i] + std[i] * rng.sample::<f64, _>(StandardNormal))
            })
            .collect();
        let iter_seed = derive_seed(seed, EPISODE_STREAM, it as u64);
        let scored = candidates
            .par_iter()
            .map_init(
                || env_template.clone(),
                |env, params| -> Result<(f64, Vec<EpisodeMetrics>)> {
                    let policy = LinearPolicy::from_params(f, bounds.clone(), params)?;
                    let eps = (0..cfg.episodes_per_candidate)
                        .map(|e| run_episode(env.as_mut(), controller, &policy, episode_seed(iter_seed, e), e, settings, None))
                        .collect::<Result<Vec<_>>>()?;
                    let score = mean_of(&eps, |m| m.discounted_return);
                    Ok((score, eps))
                },
            )
            .collect::<Result<Vec<_>>>()?;

        let mut iteration_steps = 0;
        let mut distance = 0.0;
        for (_, eps) in &scored {
            for m in eps {
                iteration_steps += m.steps;
                total_collisions += usize::from(m.collision);
                total_violations += m.violation_steps;
                distance += m.final_goal_distance;
            }
        }
        total_steps += iteration_steps;

        let mut order: Vec<usize> = (0..cfg.population).collect();
        // Stable sort keeps ties in candidate order.
        order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0));
        let top = order[0];
        if best.as_ref().is_none_or(|(s, _)| scored[top].0 > *s) {
            best = Some((scored[top].0, candidates[top].clone()));
        }
        let elites: Vec<DVector<f64>> = order[..cfg.n_elite()].iter().map(|&i| candidates[i].clone()).collect();
        (mean, std) = refit(&elites, cfg.std_floor);

        log.push(CemLogRow {
            iteration: it,
            best_return: best.as_ref().map(|b| b.0).unwrap_or(f64::NEG_INFINITY),
            mean_return: scored.iter().map(|s| s.0).sum::<f64>() / cfg.population as f64,
            mean_final_distance: distance / (cfg.population * cfg.episodes_per_candidate) as f64,
            iteration_steps,
            cumulative_violations: total_violations,
            cumulative_collisions: total_collisions,
        });
    }

    let (best_return, best_params) = best.expect("at least one iteration");
    Ok(CemResult {
        best_policy: LinearPolicy::from_params(f, bounds.clone(), &best_params)?,
        best_return,
        mean_policy: LinearPolicy::from_params(f, bounds, &mean)?,
        log,
        total_steps,
        total_collisions,
        total_violations,
    })
}

fn mean_of(eps: &[EpisodeMetrics], f: impl Fn(&EpisodeMetrics) -> f64) -> f64 {
    eps.iter().map(f).sum::<f64>() / eps.len() as f64
}

/// Runs one episode through the controller, e.g. for a trajectory dump.
pub fn traced_episode(
    env: &mut dyn Environment,
    controller: Option<&AtacomController>,
    policy: &dyn Policy,
    seed: u64,
    settings: RolloutSettings,
) -> Result<(EpisodeMetrics, Vec<StepRecord>)> {
    let mut trace = Vec::new();
    let m = run_episode(env, controller, policy, seed, 0, settings, Some(&mut trace))?;
    Ok((m, trace))
}
